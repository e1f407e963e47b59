use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array of scalars in row-major order.
///
/// Invariants enforced at construction:
/// - `shape` contains only positive dimension sizes
/// - `product(shape) == data.len()`
/// - `grad`, when present, has the same length as `data`
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
    grad: Option<Vec<F>>,
}

impl<F: Scalar> TensorBase<F> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor shape must have positive dims, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Contract(format!(
                "tensor shape {shape:?} implies {numel} elements but data has {}",
                data.len()
            )));
        }
        Ok(TensorBase {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        TensorBase {
            shape,
            data: vec![F::zero(); numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: F) -> Self {
        TensorBase {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Build a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Contract("from_rows: no rows given".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Contract(format!(
                    "from_rows: ragged rows ({} vs {cols})",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        TensorBase::from_vec(vec![rows.len(), cols], data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<F> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Rows/cols of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::Contract(format!(
                "expected 2-D tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn row(&self, i: usize) -> &[F] {
        let (_, c) = (self.shape[0], self.shape[1]);
        &self.data[i * c..(i + 1) * c]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Accumulate into the gradient buffer, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, contribution: &[F]) -> Result<()> {
        if contribution.len() != self.data.len() {
            return Err(Error::Contract(format!(
                "gradient length {} does not match tensor length {}",
                contribution.len(),
                self.data.len()
            )));
        }
        let grad = self
            .grad
            .get_or_insert_with(|| vec![F::zero(); self.data.len()]);
        for (g, c) in grad.iter_mut().zip(contribution) {
            *g += *c;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}
