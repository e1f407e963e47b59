//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! The tape owns every tensor produced during a forward computation.
//! Slot order is the topological order: an operation's inputs always
//! precede it, so the backward pass is a single reverse sweep that
//! visits each node exactly once.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ops;
use super::tensor::TensorBase;

/// Handle to a tensor slot on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Matmul { a: usize, b: usize },
    Transpose { a: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddScalar { a: usize },
    MulScalar { a: usize, s: F },
    DivScalar { a: usize, s: F },
    Relu { a: usize },
    Exp { a: usize },
    Log { a: usize },
    AddBias { a: usize, bias: usize },
    SubRowwise { a: usize, per_row: usize },
    RowSums { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    L2Normalize { a: usize },
    L2NormalizeRows { a: usize },
}

pub struct Tape<F: Scalar> {
    slots: Vec<TensorBase<F>>,
    ops: Vec<Op<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            slots: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &TensorBase<F> {
        &self.slots[id.0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[F]> {
        self.slots[id.0].grad()
    }

    /// Record an input tensor. Gradient participation follows the
    /// tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, t: TensorBase<F>) -> TensorId {
        self.push(t, Op::Leaf)
    }

    fn push(&mut self, t: TensorBase<F>, op: Op<F>) -> TensorId {
        self.slots.push(t);
        self.ops.push(op);
        TensorId(self.slots.len() - 1)
    }

    fn push_result(
        &mut self,
        out: Result<TensorBase<F>>,
        requires_grad: bool,
        op: Op<F>,
    ) -> Result<TensorId> {
        let mut t = out?;
        if requires_grad {
            t = t.with_grad();
        }
        Ok(self.push(t, op))
    }

    fn needs_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.slots[id.0].requires_grad())
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = ops::matmul(&self.slots[a.0], &self.slots[b.0]);
        self.push_result(out, self.needs_grad(&[a, b]), Op::Matmul { a: a.0, b: b.0 })
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let out = ops::transpose(&self.slots[a.0]);
        self.push_result(out, self.needs_grad(&[a]), Op::Transpose { a: a.0 })
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = ops::add(&self.slots[a.0], &self.slots[b.0]);
        self.push_result(out, self.needs_grad(&[a, b]), Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = ops::sub(&self.slots[a.0], &self.slots[b.0]);
        self.push_result(out, self.needs_grad(&[a, b]), Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = ops::mul(&self.slots[a.0], &self.slots[b.0]);
        self.push_result(out, self.needs_grad(&[a, b]), Op::Mul { a: a.0, b: b.0 })
    }

    pub fn add_scalar(&mut self, a: TensorId, s: F) -> Result<TensorId> {
        let out = Ok(ops::add_scalar(&self.slots[a.0], s));
        self.push_result(out, self.needs_grad(&[a]), Op::AddScalar { a: a.0 })
    }

    pub fn mul_scalar(&mut self, a: TensorId, s: F) -> Result<TensorId> {
        let out = Ok(ops::mul_scalar(&self.slots[a.0], s));
        self.push_result(out, self.needs_grad(&[a]), Op::MulScalar { a: a.0, s })
    }

    pub fn div_scalar(&mut self, a: TensorId, s: F) -> Result<TensorId> {
        let out = ops::div_scalar(&self.slots[a.0], s);
        self.push_result(out, self.needs_grad(&[a]), Op::DivScalar { a: a.0, s })
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let out = Ok(ops::relu(&self.slots[a.0]));
        self.push_result(out, self.needs_grad(&[a]), Op::Relu { a: a.0 })
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        let out = Ok(ops::exp(&self.slots[a.0]));
        self.push_result(out, self.needs_grad(&[a]), Op::Exp { a: a.0 })
    }

    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        let out = ops::log(&self.slots[a.0]);
        self.push_result(out, self.needs_grad(&[a]), Op::Log { a: a.0 })
    }

    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let out = ops::add_bias(&self.slots[a.0], &self.slots[bias.0]);
        self.push_result(
            out,
            self.needs_grad(&[a, bias]),
            Op::AddBias {
                a: a.0,
                bias: bias.0,
            },
        )
    }

    pub fn sub_rowwise(&mut self, a: TensorId, per_row: TensorId) -> Result<TensorId> {
        let out = ops::sub_rowwise(&self.slots[a.0], &self.slots[per_row.0]);
        self.push_result(
            out,
            self.needs_grad(&[a, per_row]),
            Op::SubRowwise {
                a: a.0,
                per_row: per_row.0,
            },
        )
    }

    pub fn row_sums(&mut self, a: TensorId) -> Result<TensorId> {
        let out = ops::row_sums(&self.slots[a.0]);
        self.push_result(out, self.needs_grad(&[a]), Op::RowSums { a: a.0 })
    }

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        let out = Ok(ops::sum(&self.slots[a.0]));
        self.push_result(out, self.needs_grad(&[a]), Op::Sum { a: a.0 })
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId> {
        let out = Ok(ops::mean(&self.slots[a.0]));
        self.push_result(out, self.needs_grad(&[a]), Op::Mean { a: a.0 })
    }

    pub fn l2_normalize(&mut self, a: TensorId) -> Result<TensorId> {
        let out = ops::l2_normalize(&self.slots[a.0]);
        self.push_result(out, self.needs_grad(&[a]), Op::L2Normalize { a: a.0 })
    }

    pub fn l2_normalize_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let out = ops::l2_normalize_rows(&self.slots[a.0]);
        self.push_result(out, self.needs_grad(&[a]), Op::L2NormalizeRows { a: a.0 })
    }

    fn add_grad(&mut self, slot: usize, contribution: &[F]) -> Result<()> {
        if !self.slots[slot].requires_grad() {
            return Ok(());
        }
        self.slots[slot].accumulate_grad(contribution)
    }

    /// Backpropagate from a scalar loss. Leaf gradients accumulate
    /// additively across repeated calls; use [`Tape::zero_grads`] to
    /// reset. Interior gradients are scratch space for one pass and are
    /// cleared on entry.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if !self.slots[loss.0].is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.slots[loss.0].shape()
            )));
        }
        for i in 0..=loss.0 {
            if !matches!(self.ops[i], Op::Leaf) {
                self.slots[i].zero_grad();
            }
        }
        self.slots[loss.0].accumulate_grad(&[F::one()])?;

        for i in (0..=loss.0).rev() {
            let g = match self.slots[i].grad() {
                Some(g) => g.to_vec(),
                None => continue,
            };
            match self.ops[i].clone() {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let g_t = TensorBase::from_vec(self.slots[i].shape().to_vec(), g)?;
                    if self.slots[a].requires_grad() {
                        let bt = ops::transpose(&self.slots[b])?;
                        let da = ops::matmul(&g_t, &bt)?;
                        self.add_grad(a, da.data())?;
                    }
                    if self.slots[b].requires_grad() {
                        let at = ops::transpose(&self.slots[a])?;
                        let db = ops::matmul(&at, &g_t)?;
                        self.add_grad(b, db.data())?;
                    }
                }
                Op::Transpose { a } => {
                    let g_t = TensorBase::from_vec(self.slots[i].shape().to_vec(), g)?;
                    let da = ops::transpose(&g_t)?;
                    self.add_grad(a, da.data())?;
                }
                Op::Add { a, b } => {
                    self.add_grad(a, &g)?;
                    self.add_grad(b, &g)?;
                }
                Op::Sub { a, b } => {
                    self.add_grad(a, &g)?;
                    let neg: Vec<F> = g.iter().map(|&x| -x).collect();
                    self.add_grad(b, &neg)?;
                }
                Op::Mul { a, b } => {
                    if self.slots[a].requires_grad() {
                        let da: Vec<F> = g
                            .iter()
                            .zip(self.slots[b].data())
                            .map(|(&x, &y)| x * y)
                            .collect();
                        self.add_grad(a, &da)?;
                    }
                    if self.slots[b].requires_grad() {
                        let db: Vec<F> = g
                            .iter()
                            .zip(self.slots[a].data())
                            .map(|(&x, &y)| x * y)
                            .collect();
                        self.add_grad(b, &db)?;
                    }
                }
                Op::AddScalar { a } => {
                    self.add_grad(a, &g)?;
                }
                Op::MulScalar { a, s } => {
                    let da: Vec<F> = g.iter().map(|&x| x * s).collect();
                    self.add_grad(a, &da)?;
                }
                Op::DivScalar { a, s } => {
                    let da: Vec<F> = g.iter().map(|&x| x / s).collect();
                    self.add_grad(a, &da)?;
                }
                Op::Relu { a } => {
                    // Subgradient 0 at the origin.
                    let da: Vec<F> = g
                        .iter()
                        .zip(self.slots[a].data())
                        .map(|(&x, &v)| if v > F::zero() { x } else { F::zero() })
                        .collect();
                    self.add_grad(a, &da)?;
                }
                Op::Exp { a } => {
                    let da: Vec<F> = g
                        .iter()
                        .zip(self.slots[i].data())
                        .map(|(&x, &y)| x * y)
                        .collect();
                    self.add_grad(a, &da)?;
                }
                Op::Log { a } => {
                    let da: Vec<F> = g
                        .iter()
                        .zip(self.slots[a].data())
                        .map(|(&x, &v)| x / v)
                        .collect();
                    self.add_grad(a, &da)?;
                }
                Op::AddBias { a, bias } => {
                    self.add_grad(a, &g)?;
                    if self.slots[bias].requires_grad() {
                        let (m, n) = self.slots[i].dims2()?;
                        let mut db = vec![F::zero(); n];
                        for r in 0..m {
                            for (j, d) in db.iter_mut().enumerate() {
                                *d += g[r * n + j];
                            }
                        }
                        self.add_grad(bias, &db)?;
                    }
                }
                Op::SubRowwise { a, per_row } => {
                    self.add_grad(a, &g)?;
                    if self.slots[per_row].requires_grad() {
                        let (m, n) = self.slots[i].dims2()?;
                        let mut dr = vec![F::zero(); m];
                        for (r, d) in dr.iter_mut().enumerate() {
                            for j in 0..n {
                                *d -= g[r * n + j];
                            }
                        }
                        self.add_grad(per_row, &dr)?;
                    }
                }
                Op::RowSums { a } => {
                    let (m, n) = self.slots[a].dims2()?;
                    let mut da = Vec::with_capacity(m * n);
                    for &gr in g.iter().take(m) {
                        for _ in 0..n {
                            da.push(gr);
                        }
                    }
                    self.add_grad(a, &da)?;
                }
                Op::Sum { a } => {
                    let da = vec![g[0]; self.slots[a].numel()];
                    self.add_grad(a, &da)?;
                }
                Op::Mean { a } => {
                    let n = F::from_usize(self.slots[a].numel()).expect("numel fits in scalar");
                    let da = vec![g[0] / n; self.slots[a].numel()];
                    self.add_grad(a, &da)?;
                }
                Op::L2Normalize { a } => {
                    let da = normalize_backward(&g, self.slots[a].data(), self.slots[i].data());
                    self.add_grad(a, &da)?;
                }
                Op::L2NormalizeRows { a } => {
                    let (m, n) = self.slots[a].dims2()?;
                    let mut da = Vec::with_capacity(m * n);
                    for r in 0..m {
                        let row = r * n..(r + 1) * n;
                        da.extend(normalize_backward(
                            &g[row.clone()],
                            &self.slots[a].data()[row.clone()],
                            &self.slots[i].data()[row],
                        ));
                    }
                    self.add_grad(a, &da)?;
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for slot in &mut self.slots {
            slot.zero_grad();
        }
    }
}

/// Backward rule for y = x / ||x||: dx = (g - (g . y) y) / ||x||.
fn normalize_backward<F: Scalar>(g: &[F], x: &[F], y: &[F]) -> Vec<F> {
    let n = ops::norm(x);
    let gy = ops::dot(g, y);
    g.iter()
        .zip(y)
        .map(|(&gi, &yi)| (gi - gy * yi) / n)
        .collect()
}
