//! Contrast scoring and the lazy re-scoring schedule.
//!
//! The score of a sample is one minus the cosine similarity between the
//! unit-norm projections of the sample and its deterministic weak view.
//! A well-encoded sample projects both views to nearly the same point
//! (score near 0); a poorly encoded one scores high and is worth
//! keeping for training.
//!
//! Lazy scoring refreshes a buffered entry only when its age is a
//! positive multiple of the interval; otherwise the cached value is
//! carried forward. An entry is scored at insertion as an incoming
//! candidate, so age 0 never needs a refresh.

use crate::augment::Augmentor;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::selection::Buffer;
use crate::stream::Sample;
use crate::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    /// Contrast score in [0, 2].
    pub value: f64,
    pub computed_at_iteration: u64,
    /// True when computed this iteration rather than carried forward.
    pub fresh: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LazyConfig {
    pub enabled: bool,
    /// Refresh interval in iterations of buffer residence.
    pub interval: u32,
}

impl LazyConfig {
    pub fn disabled() -> Self {
        LazyConfig {
            enabled: false,
            interval: 1,
        }
    }

    pub fn every(interval: u32) -> Result<Self> {
        if interval == 0 {
            return Err(Error::Config("lazy interval must be at least 1".into()));
        }
        Ok(LazyConfig {
            enabled: true,
            interval,
        })
    }
}

/// Contrast score of one sample under an immutable model snapshot:
/// `1 - z . z_flip` over the unit-norm projections of the sample and
/// its weak view. Tape-free and deterministic: two calls with the same
/// snapshot and sample agree bitwise.
///
/// The dot product of two unit-norm vectors can exceed 1 by a rounding
/// ulp; the score is clamped at zero so it stays in [0, 2].
pub fn contrast_score(model: &Model, augmentor: &Augmentor, x: &Sample) -> Result<f64> {
    let flipped = augmentor.weak_view(x);
    let both = Tensor::from_rows(&[x.features.clone(), flipped.features])?;
    let z = model.projected_unit(&both).map_err(|e| match e {
        Error::Domain(msg) => Error::Domain(format!("sample {}: {msg}", x.id)),
        other => other,
    })?;
    let sim = crate::numcore::ops::dot(z.row(0), z.row(1));
    Ok((1.0 - sim).max(0.0))
}

/// Scores for every candidate of one iteration, in deterministic order:
/// buffer entries in buffer order, then incoming in arrival order.
#[derive(Debug, Clone)]
pub struct ScoredCandidates {
    pub buffer_scores: Vec<ScoreRecord>,
    pub incoming_scores: Vec<ScoreRecord>,
    /// Fresh score computations this iteration (buffer + incoming).
    pub fresh_count: usize,
    /// Cached values carried forward.
    pub reused_count: usize,
    /// Fresh computations that were buffer refreshes.
    pub buffer_fresh: usize,
}

/// Score all incoming samples fresh; refresh a buffer entry only if
/// lazy scoring is disabled or its age is a positive multiple of the
/// interval, otherwise carry the prior record forward.
pub fn score_candidates(
    model: &Model,
    augmentor: &Augmentor,
    buffer: &Buffer,
    incoming: &[Sample],
    lazy: &LazyConfig,
    iteration: u64,
) -> Result<ScoredCandidates> {
    let mut buffer_scores = Vec::with_capacity(buffer.len());
    let mut fresh_count = 0;
    let mut reused_count = 0;
    let mut buffer_fresh = 0;

    for (i, entry) in buffer.entries().iter().enumerate() {
        let prior = entry.score.as_ref().ok_or_else(|| {
            Error::Contract(format!(
                "buffer entry {i} (arrival {}) has no prior score record",
                entry.arrival_index()
            ))
        })?;
        let refresh = !lazy.enabled || (entry.age > 0 && entry.age % u64::from(lazy.interval) == 0);
        if refresh {
            let value = contrast_score(model, augmentor, &entry.sample)?;
            buffer_scores.push(ScoreRecord {
                value,
                computed_at_iteration: iteration,
                fresh: true,
            });
            fresh_count += 1;
            buffer_fresh += 1;
        } else {
            buffer_scores.push(ScoreRecord {
                value: prior.value,
                computed_at_iteration: prior.computed_at_iteration,
                fresh: false,
            });
            reused_count += 1;
        }
    }

    let mut incoming_scores = Vec::with_capacity(incoming.len());
    for sample in incoming {
        let value = contrast_score(model, augmentor, sample)?;
        incoming_scores.push(ScoreRecord {
            value,
            computed_at_iteration: iteration,
            fresh: true,
        });
        fresh_count += 1;
    }

    Ok(ScoredCandidates {
        buffer_scores,
        incoming_scores,
        fresh_count,
        reused_count,
        buffer_fresh,
    })
}
