//! Forward kernels shared by the tape and by tape-free evaluation.
//!
//! Every kernel iterates in a fixed index order, so results are
//! bit-identical across repeated calls with the same inputs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::TensorBase;

/// Norms below this raise a domain error instead of normalizing noise.
pub const NORM_EPS: f64 = 1e-12;

pub fn matmul<F: Scalar>(a: &TensorBase<F>, b: &TensorBase<F>) -> Result<TensorBase<F>> {
    let (m, k) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if k != kb {
        return Err(Error::dimension("matmul", a.shape(), b.shape()));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![F::zero(); m * n];
    // i-p-j loop order: linear access on b and out, summation over p still
    // happens in ascending order for every output element.
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    TensorBase::from_vec(vec![m, n], out)
}

pub fn transpose<F: Scalar>(a: &TensorBase<F>) -> Result<TensorBase<F>> {
    let (m, n) = a.dims2()?;
    let ad = a.data();
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    TensorBase::from_vec(vec![n, m], out)
}

fn check_same_shape<F: Scalar>(
    op: &'static str,
    a: &TensorBase<F>,
    b: &TensorBase<F>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dimension(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn add<F: Scalar>(a: &TensorBase<F>, b: &TensorBase<F>) -> Result<TensorBase<F>> {
    check_same_shape("add", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    TensorBase::from_vec(a.shape().to_vec(), data)
}

pub fn sub<F: Scalar>(a: &TensorBase<F>, b: &TensorBase<F>) -> Result<TensorBase<F>> {
    check_same_shape("sub", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x - y)
        .collect();
    TensorBase::from_vec(a.shape().to_vec(), data)
}

pub fn mul<F: Scalar>(a: &TensorBase<F>, b: &TensorBase<F>) -> Result<TensorBase<F>> {
    check_same_shape("mul", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    TensorBase::from_vec(a.shape().to_vec(), data)
}

pub fn add_scalar<F: Scalar>(a: &TensorBase<F>, s: F) -> TensorBase<F> {
    let data = a.data().iter().map(|&x| x + s).collect();
    TensorBase::from_vec(a.shape().to_vec(), data).expect("shape preserved")
}

pub fn mul_scalar<F: Scalar>(a: &TensorBase<F>, s: F) -> TensorBase<F> {
    let data = a.data().iter().map(|&x| x * s).collect();
    TensorBase::from_vec(a.shape().to_vec(), data).expect("shape preserved")
}

pub fn div_scalar<F: Scalar>(a: &TensorBase<F>, s: F) -> Result<TensorBase<F>> {
    if s == F::zero() {
        return Err(Error::Domain("division by zero scalar".into()));
    }
    Ok(mul_scalar(a, F::one() / s))
}

pub fn relu<F: Scalar>(a: &TensorBase<F>) -> TensorBase<F> {
    let data = a
        .data()
        .iter()
        .map(|&x| if x > F::zero() { x } else { F::zero() })
        .collect();
    TensorBase::from_vec(a.shape().to_vec(), data).expect("shape preserved")
}

pub fn exp<F: Scalar>(a: &TensorBase<F>) -> TensorBase<F> {
    let data = a.data().iter().map(|&x| x.exp()).collect();
    TensorBase::from_vec(a.shape().to_vec(), data).expect("shape preserved")
}

pub fn log<F: Scalar>(a: &TensorBase<F>) -> Result<TensorBase<F>> {
    let mut data = Vec::with_capacity(a.numel());
    for &x in a.data() {
        if x <= F::zero() {
            return Err(Error::Domain(format!("log of non-positive value {x}")));
        }
        data.push(x.ln());
    }
    TensorBase::from_vec(a.shape().to_vec(), data)
}

/// Add a length-n bias row to every row of an m x n matrix.
pub fn add_bias<F: Scalar>(a: &TensorBase<F>, bias: &TensorBase<F>) -> Result<TensorBase<F>> {
    let (m, n) = a.dims2()?;
    if bias.shape() != [n] {
        return Err(Error::dimension("add_bias", a.shape(), bias.shape()));
    }
    let ad = a.data();
    let bd = bias.data();
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            out.push(ad[i * n + j] + bd[j]);
        }
    }
    TensorBase::from_vec(vec![m, n], out)
}

/// Subtract a per-row scalar from every element of that row.
pub fn sub_rowwise<F: Scalar>(a: &TensorBase<F>, per_row: &TensorBase<F>) -> Result<TensorBase<F>> {
    let (m, n) = a.dims2()?;
    if per_row.shape() != [m] {
        return Err(Error::dimension("sub_rowwise", a.shape(), per_row.shape()));
    }
    let ad = a.data();
    let rd = per_row.data();
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            out.push(ad[i * n + j] - rd[i]);
        }
    }
    TensorBase::from_vec(vec![m, n], out)
}

/// Row sums of an m x n matrix, in ascending column order.
pub fn row_sums<F: Scalar>(a: &TensorBase<F>) -> Result<TensorBase<F>> {
    let (m, n) = a.dims2()?;
    let ad = a.data();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut s = F::zero();
        for j in 0..n {
            s += ad[i * n + j];
        }
        out.push(s);
    }
    TensorBase::from_vec(vec![m], out)
}

/// Row maxima of an m x n matrix (forward-only helper; not a tape op).
pub fn row_max<F: Scalar>(a: &TensorBase<F>) -> Result<TensorBase<F>> {
    let (m, n) = a.dims2()?;
    let ad = a.data();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut mx = ad[i * n];
        for j in 1..n {
            if ad[i * n + j] > mx {
                mx = ad[i * n + j];
            }
        }
        out.push(mx);
    }
    TensorBase::from_vec(vec![m], out)
}

/// Sum of all elements, in flat index order.
pub fn sum<F: Scalar>(a: &TensorBase<F>) -> TensorBase<F> {
    let mut s = F::zero();
    for &x in a.data() {
        s += x;
    }
    TensorBase::scalar(s)
}

pub fn mean<F: Scalar>(a: &TensorBase<F>) -> TensorBase<F> {
    let s = sum(a).data()[0];
    let n = F::from_usize(a.numel()).expect("numel fits in scalar");
    TensorBase::scalar(s / n)
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm<F: Scalar>(v: &[F]) -> F {
    dot(v, v).sqrt()
}

fn normalize_slice<F: Scalar>(v: &[F], out: &mut Vec<F>) -> Result<()> {
    let n = norm(v);
    let eps = F::from_f64(NORM_EPS).expect("eps fits in scalar");
    if n < eps {
        return Err(Error::Domain(format!(
            "cannot normalize vector with norm {n} below {NORM_EPS}"
        )));
    }
    let denom = n.max(eps);
    for &x in v {
        out.push(x / denom);
    }
    Ok(())
}

/// Normalize a 1-D tensor to unit Euclidean norm.
pub fn l2_normalize<F: Scalar>(v: &TensorBase<F>) -> Result<TensorBase<F>> {
    if v.ndim() != 1 {
        return Err(Error::Contract(format!(
            "l2_normalize expects a 1-D tensor, got shape {:?}",
            v.shape()
        )));
    }
    let mut out = Vec::with_capacity(v.numel());
    normalize_slice(v.data(), &mut out)?;
    TensorBase::from_vec(v.shape().to_vec(), out)
}

/// Normalize each row of a 2-D tensor to unit Euclidean norm.
pub fn l2_normalize_rows<F: Scalar>(a: &TensorBase<F>) -> Result<TensorBase<F>> {
    let (m, n) = a.dims2()?;
    let ad = a.data();
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        normalize_slice(&ad[i * n..(i + 1) * n], &mut out)?;
    }
    TensorBase::from_vec(vec![m, n], out)
}
