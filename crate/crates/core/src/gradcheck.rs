//! Central finite differences and the contrastive-gradient check suite.
//!
//! The finite-difference probe is the independent oracle used to verify
//! both the tape's backward pass and the two closed-form candidates for
//! the per-anchor contrastive gradient. It never touches the tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::numcore::Tape;
use crate::objective::{self, ContrastBatch, GradForm};
use crate::Tensor;

/// Denominator floor for relative error: entries smaller than this are
/// compared on an absolute scale, keeping the check above the noise
/// floor of central differences in float64.
pub const REL_FLOOR: f64 = 1e-3;

/// Central finite differences of a scalar function at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let hi = f(&probe);
        probe[i] = orig - eps;
        let lo = f(&probe);
        probe[i] = orig;
        grad.push((hi - lo) / (2.0 * eps));
    }
    grad
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "comparing gradients of different lengths");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

/// Configuration of the randomized contrastive-gradient suite.
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub batches: usize,
    pub pair_counts: Vec<usize>,
    pub dims: Vec<usize>,
    pub temperatures: Vec<f64>,
    pub tolerance: f64,
    pub fd_epsilon: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            batches: 50,
            pair_counts: vec![2, 4, 8],
            dims: vec![4, 16, 32],
            temperatures: vec![0.07, 0.5],
            tolerance: 1e-5,
            fd_epsilon: 1e-6,
            seed: 42,
        }
    }
}

/// Outcome of checking one random batch.
#[derive(Debug, Clone)]
pub struct BatchCheck {
    pub n_pairs: usize,
    pub dim: usize,
    pub tau: f64,
    /// Max relative error of the tape gradient of the full loss vs
    /// finite differences, over every coordinate of every row.
    pub autodiff_err: f64,
    /// Max relative error of the closed form using the anchor vector in
    /// the positive term, vs finite differences of the per-anchor loss.
    pub anchor_form_err: f64,
    /// Same for the closed form using the positive partner vector.
    pub partner_form_err: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub checks: Vec<BatchCheck>,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn autodiff_max_err(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.autodiff_err)
            .fold(0.0, f64::max)
    }

    pub fn autodiff_ok(&self) -> bool {
        self.autodiff_max_err() <= self.tolerance
    }

    pub fn anchor_form_matches(&self) -> usize {
        self.checks
            .iter()
            .filter(|c| c.anchor_form_err <= self.tolerance)
            .count()
    }

    pub fn partner_form_matches(&self) -> usize {
        self.checks
            .iter()
            .filter(|c| c.partner_form_err <= self.tolerance)
            .count()
    }

    /// True when every batch is explained by at least one closed form.
    pub fn reconciled(&self) -> bool {
        self.checks
            .iter()
            .all(|c| c.anchor_form_err <= self.tolerance || c.partner_form_err <= self.tolerance)
    }

    /// The closed form that matches finite differences on every batch,
    /// if exactly one does.
    pub fn matching_form(&self) -> Option<GradForm> {
        let anchor_all = self.anchor_form_matches() == self.checks.len();
        let partner_all = self.partner_form_matches() == self.checks.len();
        match (anchor_all, partner_all) {
            (true, false) => Some(GradForm::AnchorTerm),
            (false, true) => Some(GradForm::PartnerTerm),
            _ => None,
        }
    }
}

fn random_unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = crate::numcore::ops::norm(&v);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

fn check_one_batch(
    rng: &mut ChaCha8Rng,
    n_pairs: usize,
    dim: usize,
    tau: f64,
    eps: f64,
) -> Result<BatchCheck> {
    let rows = random_unit_rows(rng, 2 * n_pairs, dim);
    let batch = ContrastBatch::new(rows.clone(), tau)?;

    // Tape gradient of the full loss vs finite differences of the
    // direct evaluator, over all rows at once.
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::from_rows(&rows)?.with_grad());
    let loss = objective::nt_xent_loss(&mut tape, z, tau)?;
    tape.backward(loss)?;
    let analytic = tape.grad(z).expect("z participates in the loss").to_vec();

    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let loss_fn = |x: &[f64]| {
        let probe: Vec<Vec<f64>> = x.chunks(dim).map(|c| c.to_vec()).collect();
        objective::nt_xent_loss_value(&ContrastBatch::new_unchecked(probe, tau))
    };
    let numeric = central_diff(loss_fn, &flat, eps);
    let autodiff_err = max_rel_err(&analytic, &numeric);

    // Closed forms vs finite differences of the per-anchor loss term,
    // perturbing only the anchor row.
    let mut anchor_form_err: f64 = 0.0;
    let mut partner_form_err: f64 = 0.0;
    for anchor in 0..2 * n_pairs {
        let g_anchor = objective::analytic_grad_z(&batch, anchor, GradForm::AnchorTerm)?;
        let g_partner = objective::analytic_grad_z(&batch, anchor, GradForm::PartnerTerm)?;
        let f = |x: &[f64]| {
            let mut probe = rows.clone();
            probe[anchor] = x.to_vec();
            objective::per_anchor_loss(&ContrastBatch::new_unchecked(probe, tau), anchor)
        };
        let numeric = central_diff(f, &rows[anchor], eps);
        anchor_form_err = anchor_form_err.max(max_rel_err(&g_anchor, &numeric));
        partner_form_err = partner_form_err.max(max_rel_err(&g_partner, &numeric));
    }

    Ok(BatchCheck {
        n_pairs,
        dim,
        tau,
        autodiff_err,
        anchor_form_err,
        partner_form_err,
    })
}

/// Run the randomized suite: every batch checks the tape gradient of the
/// full loss and both closed-form candidates for the per-anchor gradient.
pub fn run_gradient_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut combos = Vec::new();
    for &n in &cfg.pair_counts {
        for &d in &cfg.dims {
            for &t in &cfg.temperatures {
                combos.push((n, d, t));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = Vec::with_capacity(cfg.batches);
    for i in 0..cfg.batches {
        let (n, d, t) = combos[i % combos.len()];
        checks.push(check_one_batch(&mut rng, n, d, t, cfg.fd_epsilon)?);
    }
    Ok(SuiteReport {
        checks,
        tolerance: cfg.tolerance,
    })
}
