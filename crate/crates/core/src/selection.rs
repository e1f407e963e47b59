//! The data buffer and its replacement policies.
//!
//! All policies share one tie-break: primary ranking value descending,
//! then entries already in the buffer before incoming ones, then
//! arrival index ascending. Selected candidates are stored in candidate
//! order (buffer order first, then arrival order), which keeps buffer
//! contents sorted by arrival across iterations.
//!
//! Ages are not touched during selection; the iteration loop advances
//! them once per iteration via [`Buffer::advance_ages`].

use rand_chacha::ChaCha8Rng;

use crate::augment::Augmentor;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::objective::{per_anchor_loss, ContrastBatch};
use crate::scoring::ScoreRecord;
use crate::stream::Sample;
use crate::Tensor;

#[derive(Debug, Clone)]
pub struct BufferEntry {
    pub sample: Sample,
    /// Cached contrast score; `None` under policies that never score.
    pub score: Option<ScoreRecord>,
    /// Completed iterations since insertion, as read at scoring time.
    pub age: u64,
    pub insertion_iteration: u64,
}

impl BufferEntry {
    pub fn arrival_index(&self) -> u64 {
        self.sample.arrival_index
    }
}

#[derive(Debug)]
pub struct Buffer {
    capacity: usize,
    entries: Vec<BufferEntry>,
}

impl Buffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Contract("buffer capacity must be positive".into()));
        }
        Ok(Buffer {
            capacity,
            entries: Vec::new(),
        })
    }

    pub fn from_entries(capacity: usize, entries: Vec<BufferEntry>) -> Result<Self> {
        if entries.len() > capacity {
            return Err(Error::Contract(format!(
                "{} entries exceed capacity {capacity}",
                entries.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.arrival_index()) {
                return Err(Error::Contract(format!(
                    "duplicate arrival index {}",
                    e.arrival_index()
                )));
            }
        }
        Ok(Buffer { capacity, entries })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.entries.iter().map(|e| &e.sample)
    }

    /// Increment every entry's age by exactly one iteration.
    pub fn advance_ages(&mut self) {
        for e in &mut self.entries {
            e.age += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Contrast,
    Random,
    Fifo,
    SelectiveBp,
    KCenter,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Contrast => "contrast",
            PolicyKind::Random => "random",
            PolicyKind::Fifo => "fifo",
            PolicyKind::SelectiveBp => "selective-bp",
            PolicyKind::KCenter => "k-center",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrast" => Ok(PolicyKind::Contrast),
            "random" => Ok(PolicyKind::Random),
            "fifo" => Ok(PolicyKind::Fifo),
            "selective-bp" | "selective_bp" => Ok(PolicyKind::SelectiveBp),
            "k-center" | "k_center" => Ok(PolicyKind::KCenter),
            other => Err(Error::Config(format!(
                "unknown policy {other:?}; expected contrast, random, fifo, selective-bp or k-center"
            ))),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
pub struct SelectionOutcome {
    pub buffer: Buffer,
    pub kept_from_buffer: usize,
    pub kept_from_incoming: usize,
}

struct Candidate {
    rank: f64,
    from_buffer: bool,
    arrival: u64,
}

/// Indices of the top `n` candidates under the shared tie-break,
/// returned in candidate order.
fn rank_and_take(candidates: &[Candidate], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = &candidates[a];
        let cb = &candidates[b];
        cb.rank
            .total_cmp(&ca.rank)
            .then_with(|| cb.from_buffer.cmp(&ca.from_buffer))
            .then_with(|| ca.arrival.cmp(&cb.arrival))
    });
    order.truncate(n.min(candidates.len()));
    order.sort_unstable();
    order
}

fn rebuild(
    buffer: Buffer,
    incoming: Vec<Sample>,
    incoming_scores: Option<Vec<ScoreRecord>>,
    selected: &[usize],
    iteration: u64,
) -> Result<SelectionOutcome> {
    let capacity = buffer.capacity();
    let buffer_len = buffer.len();
    let mut old_entries: Vec<Option<BufferEntry>> = buffer.entries.into_iter().map(Some).collect();
    let mut new_samples: Vec<Option<Sample>> = incoming.into_iter().map(Some).collect();
    let mut new_scores: Vec<Option<ScoreRecord>> = match incoming_scores {
        Some(s) => s.into_iter().map(Some).collect(),
        None => vec![None; new_samples.len()],
    };

    let mut entries = Vec::with_capacity(selected.len());
    let mut kept_from_buffer = 0;
    let mut kept_from_incoming = 0;
    for &idx in selected {
        if idx < buffer_len {
            entries.push(old_entries[idx].take().expect("selected once"));
            kept_from_buffer += 1;
        } else {
            let sample = new_samples[idx - buffer_len].take().expect("selected once");
            entries.push(BufferEntry {
                sample,
                score: new_scores[idx - buffer_len].take(),
                age: 0,
                insertion_iteration: iteration,
            });
            kept_from_incoming += 1;
        }
    }
    Ok(SelectionOutcome {
        buffer: Buffer::from_entries(capacity, entries)?,
        kept_from_buffer,
        kept_from_incoming,
    })
}

/// Keep the N highest-scoring candidates out of buffer plus incoming.
/// `buffer_scores` and `incoming_scores` must align with buffer order
/// and arrival order; buffer entries keep their refreshed records.
pub fn select_contrast(
    mut buffer: Buffer,
    incoming: Vec<Sample>,
    buffer_scores: &[ScoreRecord],
    incoming_scores: &[ScoreRecord],
    iteration: u64,
) -> Result<SelectionOutcome> {
    if buffer_scores.len() != buffer.len() || incoming_scores.len() != incoming.len() {
        return Err(Error::Contract(format!(
            "score count mismatch: {} buffer scores for {} entries, {} incoming scores for {} samples",
            buffer_scores.len(),
            buffer.len(),
            incoming_scores.len(),
            incoming.len()
        )));
    }
    for (entry, record) in buffer.entries.iter_mut().zip(buffer_scores) {
        entry.score = Some(record.clone());
    }

    let mut candidates = Vec::with_capacity(buffer.len() + incoming.len());
    for (entry, record) in buffer.entries.iter().zip(buffer_scores) {
        candidates.push(Candidate {
            rank: record.value,
            from_buffer: true,
            arrival: entry.arrival_index(),
        });
    }
    for (sample, record) in incoming.iter().zip(incoming_scores) {
        candidates.push(Candidate {
            rank: record.value,
            from_buffer: false,
            arrival: sample.arrival_index,
        });
    }
    let selected = rank_and_take(&candidates, buffer.capacity());
    rebuild(
        buffer,
        incoming,
        Some(incoming_scores.to_vec()),
        &selected,
        iteration,
    )
}

/// Keep N candidates drawn uniformly without replacement.
pub fn select_random(
    buffer: Buffer,
    incoming: Vec<Sample>,
    rng: &mut ChaCha8Rng,
    iteration: u64,
) -> Result<SelectionOutcome> {
    let total = buffer.len() + incoming.len();
    let n = buffer.capacity().min(total);
    let mut selected: Vec<usize> = rand::seq::index::sample(rng, total, n).into_vec();
    selected.sort_unstable();
    rebuild(buffer, incoming, None, &selected, iteration)
}

/// Evict the oldest entries (insertion iteration, then arrival index)
/// to make room, then append the incoming segment in arrival order.
pub fn select_fifo(
    buffer: Buffer,
    incoming: Vec<Sample>,
    iteration: u64,
) -> Result<SelectionOutcome> {
    let total = buffer.len() + incoming.len();
    let evict = total.saturating_sub(buffer.capacity()).min(buffer.len());

    let mut oldness: Vec<usize> = (0..buffer.len()).collect();
    oldness.sort_by_key(|&i| {
        (
            buffer.entries[i].insertion_iteration,
            buffer.entries[i].arrival_index(),
        )
    });
    let evicted: std::collections::HashSet<usize> = oldness.into_iter().take(evict).collect();

    let mut selected: Vec<usize> = (0..buffer.len()).filter(|i| !evicted.contains(i)).collect();
    // Incoming beyond capacity is evicted oldest-first as well.
    let room = buffer.capacity() - selected.len();
    let skip = incoming.len().saturating_sub(room);
    selected.extend((buffer.len() + skip..buffer.len() + incoming.len()).collect::<Vec<_>>());
    rebuild(buffer, incoming, None, &selected, iteration)
}

/// Keep the N candidates with the largest contrastive loss, where each
/// candidate's loss is its pair's two anchor terms evaluated on strong
/// augmented views against all other candidates as negatives.
pub fn select_selective_bp(
    buffer: Buffer,
    incoming: Vec<Sample>,
    model: &Model,
    augmentor: &Augmentor,
    tau: f64,
    iteration: u64,
) -> Result<SelectionOutcome> {
    let total = buffer.len() + incoming.len();
    if total <= buffer.capacity() {
        let selected: Vec<usize> = (0..total).collect();
        return rebuild(buffer, incoming, None, &selected, iteration);
    }
    let losses = selective_bp_losses(
        buffer.samples().chain(incoming.iter()),
        total,
        model,
        augmentor,
        tau,
        iteration,
    )?;

    let mut candidates = Vec::with_capacity(total);
    for (i, loss) in losses.iter().enumerate() {
        let (from_buffer, arrival) = if i < buffer.len() {
            (true, buffer.entries[i].arrival_index())
        } else {
            (false, incoming[i - buffer.len()].arrival_index)
        };
        candidates.push(Candidate {
            rank: *loss,
            from_buffer,
            arrival,
        });
    }
    let selected = rank_and_take(&candidates, buffer.capacity());
    rebuild(buffer, incoming, None, &selected, iteration)
}

/// Per-candidate contrastive losses used by the largest-loss policy.
pub fn selective_bp_losses<'a>(
    samples: impl Iterator<Item = &'a Sample>,
    total: usize,
    model: &Model,
    augmentor: &Augmentor,
    tau: f64,
    iteration: u64,
) -> Result<Vec<f64>> {
    let mut views = Vec::with_capacity(2 * total);
    for sample in samples {
        let (a, b) = augmentor.strong_pair(sample, iteration);
        views.push(a.features);
        views.push(b.features);
    }
    let z = model.projected_unit(&Tensor::from_rows(&views)?)?;
    let rows: Vec<Vec<f64>> = (0..2 * total).map(|i| z.row(i).to_vec()).collect();
    let batch = ContrastBatch::new(rows, tau)?;
    Ok((0..total)
        .map(|i| per_anchor_loss(&batch, 2 * i) + per_anchor_loss(&batch, 2 * i + 1))
        .collect())
}

/// Greedy farthest-point traversal over `points`; the first center is
/// the point farthest from the centroid. Ties keep the earliest index.
/// Returns `n` center indices in pick order.
pub fn k_center_indices(points: &[Vec<f64>], n: usize) -> Vec<usize> {
    if points.is_empty() || n == 0 {
        return Vec::new();
    }
    if points.len() <= n {
        return (0..points.len()).collect();
    }
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= points.len() as f64;
    }

    let dist = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for (x, y) in a.iter().zip(b) {
            let d = x - y;
            s += d * d;
        }
        s.sqrt()
    };

    let mut first = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = dist(p, &mean);
        if d > best {
            best = d;
            first = i;
        }
    }

    let mut centers = vec![first];
    let mut chosen = vec![false; points.len()];
    chosen[first] = true;
    let mut min_dist: Vec<f64> = points.iter().map(|p| dist(p, &points[first])).collect();
    while centers.len() < n {
        let mut next = usize::MAX;
        let mut far = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            if !chosen[i] && d > far {
                far = d;
                next = i;
            }
        }
        centers.push(next);
        chosen[next] = true;
        for (i, p) in points.iter().enumerate() {
            let d = dist(p, &points[next]);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }
    centers
}

/// Max distance from any point to its nearest center.
pub fn covering_radius(points: &[Vec<f64>], centers: &[usize]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for (x, y) in a.iter().zip(b) {
            let d = x - y;
            s += d * d;
        }
        s.sqrt()
    };
    points
        .iter()
        .map(|p| {
            centers
                .iter()
                .map(|&c| dist(p, &points[c]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Keep N centers of a greedy k-center traversal over the unit-norm
/// projected features of buffer plus incoming.
pub fn select_k_center(
    buffer: Buffer,
    incoming: Vec<Sample>,
    model: &Model,
    iteration: u64,
) -> Result<SelectionOutcome> {
    let total = buffer.len() + incoming.len();
    if total <= buffer.capacity() {
        let selected: Vec<usize> = (0..total).collect();
        return rebuild(buffer, incoming, None, &selected, iteration);
    }
    let feats: Vec<Vec<f64>> = {
        let rows: Vec<Vec<f64>> = buffer
            .samples()
            .chain(incoming.iter())
            .map(|s| s.features.clone())
            .collect();
        let z = model.projected_unit(&Tensor::from_rows(&rows)?)?;
        (0..total).map(|i| z.row(i).to_vec()).collect()
    };
    let mut selected = k_center_indices(&feats, buffer.capacity());
    selected.sort_unstable();
    rebuild(buffer, incoming, None, &selected, iteration)
}
