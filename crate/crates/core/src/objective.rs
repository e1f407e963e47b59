//! Normalized-temperature cross-entropy (NT-Xent) contrastive loss and
//! the closed-form per-anchor gradient used as an independent oracle
//! against the autodiff engine.
//!
//! Batch layout: rows `(z_0, z_0+, z_1, z_1+, ...)`, so rows `2k` and
//! `2k+1` form positive pair `k` and the partner of row `i` is `i ^ 1`.
//! Every row serves as an anchor once (2N loss terms per batch of N
//! pairs); the negatives for an anchor are all other 2N-2 rows.

use crate::error::{Error, Result};
use crate::numcore::{ops, Tape, TensorId};
use crate::Tensor;

/// Row tolerance for the unit-norm invariant of a validated batch.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Projected batch for contrastive evaluation: 2N unit-norm rows plus a
/// positive temperature.
#[derive(Debug, Clone)]
pub struct ContrastBatch {
    rows: Vec<Vec<f64>>,
    tau: f64,
}

impl ContrastBatch {
    pub fn new(rows: Vec<Vec<f64>>, tau: f64) -> Result<Self> {
        if tau <= 0.0 {
            return Err(Error::Domain(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        if rows.len() < 4 || !rows.len().is_multiple_of(2) {
            return Err(Error::Contract(format!(
                "contrast batch needs at least 2 pairs (an even row count >= 4), got {} rows",
                rows.len()
            )));
        }
        let dim = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Contract(format!(
                    "row {i} has length {} but row 0 has {dim}",
                    r.len()
                )));
            }
            let n = ops::norm(r.as_slice());
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Contract(format!(
                    "row {i} has norm {n}, expected unit norm within {UNIT_NORM_TOL}"
                )));
            }
        }
        Ok(ContrastBatch { rows, tau })
    }

    /// Skip validation. Finite-difference probes use this to evaluate the
    /// loss formula at perturbed rows that leave the unit sphere.
    pub fn new_unchecked(rows: Vec<Vec<f64>>, tau: f64) -> Self {
        ContrastBatch { rows, tau }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.rows.len() / 2
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    /// Index of the positive partner of row `i`.
    pub fn partner(i: usize) -> usize {
        i ^ 1
    }
}

/// Loss contribution of a single anchor, evaluated directly:
/// `-log( exp(s_ip / tau) / sum_{j != i} exp(s_ij / tau) )`
/// where `s_ij` is the dot product of rows i and j.
pub fn per_anchor_loss(batch: &ContrastBatch, anchor: usize) -> f64 {
    let tau = batch.tau;
    let partner = ContrastBatch::partner(anchor);
    let zi = &batch.rows[anchor];
    let mut denom = 0.0;
    for (j, zj) in batch.rows.iter().enumerate() {
        if j == anchor {
            continue;
        }
        denom += (ops::dot(zi.as_slice(), zj.as_slice()) / tau).exp();
    }
    let pos = (ops::dot(zi.as_slice(), batch.rows[partner].as_slice()) / tau).exp();
    -(pos / denom).ln()
}

/// Total loss: sum of the per-anchor terms over all 2N anchors, in row
/// order. This direct evaluator is independent of the tape.
pub fn nt_xent_loss_value(batch: &ContrastBatch) -> f64 {
    (0..batch.num_rows())
        .map(|i| per_anchor_loss(batch, i))
        .sum()
}

/// Softmax matching probabilities of an anchor against the other 2N-1
/// rows, in ascending row order with the anchor skipped.
pub fn matching_probabilities(batch: &ContrastBatch, anchor: usize) -> Result<Vec<f64>> {
    if anchor >= batch.num_rows() {
        return Err(Error::Contract(format!(
            "anchor {anchor} out of range for batch of {} rows",
            batch.num_rows()
        )));
    }
    let zi = &batch.rows[anchor];
    let mut weights = Vec::with_capacity(batch.num_rows() - 1);
    for (j, zj) in batch.rows.iter().enumerate() {
        if j == anchor {
            continue;
        }
        weights.push((ops::dot(zi.as_slice(), zj.as_slice()) / batch.tau).exp());
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// The two closed-form candidates for the per-anchor gradient with
/// respect to the anchor row. They differ only in which vector carries
/// the positive coefficient `1 - p_partner`; the gradient-check suite
/// reports which one finite differences confirm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradForm {
    /// Positive term uses the anchor vector itself.
    AnchorTerm,
    /// Positive term uses the positive partner vector.
    PartnerTerm,
}

/// Evaluate a closed form given an explicit probability vector (ordered
/// like [`matching_probabilities`]): the leading factor `-1/tau` stays
/// visible, so halving the temperature at fixed probabilities exactly
/// doubles the gradient.
pub fn grad_given_probs(
    batch: &ContrastBatch,
    anchor: usize,
    probs: &[f64],
    form: GradForm,
) -> Result<Vec<f64>> {
    let rows = batch.num_rows();
    if probs.len() != rows - 1 {
        return Err(Error::Contract(format!(
            "expected {} probabilities, got {}",
            rows - 1,
            probs.len()
        )));
    }
    let partner = ContrastBatch::partner(anchor);
    let dim = batch.dim();
    let mut acc = vec![0.0; dim];

    let positive_vec = match form {
        GradForm::AnchorTerm => &batch.rows[anchor],
        GradForm::PartnerTerm => &batch.rows[partner],
    };

    let mut p_iter = probs.iter();
    let mut p_partner = 0.0;
    let mut negatives: Vec<(usize, f64)> = Vec::with_capacity(rows - 2);
    for j in 0..rows {
        if j == anchor {
            continue;
        }
        let p = *p_iter.next().expect("length checked");
        if j == partner {
            p_partner = p;
        } else {
            negatives.push((j, p));
        }
    }

    for (a, &v) in acc.iter_mut().zip(positive_vec) {
        *a += (1.0 - p_partner) * v;
    }
    for (j, p) in negatives {
        for (a, &v) in acc.iter_mut().zip(&batch.rows[j]) {
            *a -= p * v;
        }
    }
    Ok(acc.into_iter().map(|v| -v / batch.tau).collect())
}

/// Closed-form gradient of the per-anchor loss with respect to the
/// anchor row.
pub fn analytic_grad_z(batch: &ContrastBatch, anchor: usize, form: GradForm) -> Result<Vec<f64>> {
    let probs = matching_probabilities(batch, anchor)?;
    grad_given_probs(batch, anchor, &probs, form)
}

fn pair_mask(rows: usize) -> Tensor {
    let mut data = vec![0.0; rows * rows];
    for i in 0..rows {
        data[i * rows + ContrastBatch::partner(i)] = 1.0;
    }
    Tensor::from_vec(vec![rows, rows], data).expect("mask shape consistent")
}

fn off_diagonal_mask(rows: usize) -> Tensor {
    let mut data = vec![1.0; rows * rows];
    for i in 0..rows {
        data[i * rows + i] = 0.0;
    }
    Tensor::from_vec(vec![rows, rows], data).expect("mask shape consistent")
}

/// Tape-recorded NT-Xent loss over a `[2N x d]` tensor of unit-norm
/// projected rows. Composed from primitive tape ops, so its gradient
/// comes from the chain rule rather than from the closed form above.
///
/// Similarities form the full 2N x 2N dot-product matrix; the diagonal
/// is excluded by a constant mask.
pub fn nt_xent_loss(tape: &mut Tape<f64>, z: TensorId, tau: f64) -> Result<TensorId> {
    if tau <= 0.0 {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let (rows, _) = tape.value(z).dims2()?;
    if rows < 4 || rows % 2 != 0 {
        return Err(Error::Contract(format!(
            "contrast batch needs at least 2 pairs (an even row count >= 4), got {rows} rows"
        )));
    }
    for i in 0..rows {
        let n = ops::norm(tape.value(z).row(i));
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!(
                "row {i} has norm {n}, expected unit norm within {UNIT_NORM_TOL}"
            )));
        }
    }

    let zt = tape.transpose(z)?;
    let sim = tape.matmul(z, zt)?;
    let logits = tape.div_scalar(sim, tau)?;
    let expd = tape.exp(logits)?;
    let mask = tape.leaf(off_diagonal_mask(rows));
    let masked = tape.mul(expd, mask)?;
    let denoms = tape.row_sums(masked)?;
    let log_denoms = tape.log(denoms)?;
    let denom_term = tape.sum(log_denoms)?;

    let pmask = tape.leaf(pair_mask(rows));
    let pos_sims = tape.mul(sim, pmask)?;
    let pos_total = tape.sum(pos_sims)?;
    let pos_term = tape.div_scalar(pos_total, tau)?;

    tape.sub(denom_term, pos_term)
}
