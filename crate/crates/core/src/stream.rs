//! Dataset handling and the temporally correlated input stream.
//!
//! Streams emit runs of consecutive same-class samples; the run length
//! is the stream's temporal-correlation strength. Labels ride along as
//! evaluation-only metadata: reading one through [`Sample::label`] is
//! counted by a per-thread audit, which the training loop uses to prove
//! that selection and training never touch them.

use std::cell::Cell;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::binio::CountingReader;
use crate::error::{Error, Result};

thread_local! {
    static LABEL_READS: Cell<u64> = const { Cell::new(0) };
}

/// Number of audited label reads on this thread.
pub fn label_read_count() -> u64 {
    LABEL_READS.with(|c| c.get())
}

/// One stream item: features plus a hidden class label.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    label: u32,
    pub arrival_index: u64,
}

impl Sample {
    pub fn new(id: u64, features: Vec<f64>, label: u32, arrival_index: u64) -> Self {
        Sample {
            id,
            features,
            label,
            arrival_index,
        }
    }

    /// Audited label access. Selection, scoring and training must never
    /// call this; the stage-1 loop asserts the counter stays flat.
    pub fn label(&self) -> u32 {
        LABEL_READS.with(|c| c.set(c.get() + 1));
        self.label
    }

    /// Unaudited access for carrying the label through augmented views
    /// as inert metadata. Not for decision making.
    pub(crate) fn label_raw(&self) -> u32 {
        self.label
    }
}

/// In-memory dataset: row-major features plus one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u32>,
    feature_dim: usize,
    num_classes: u32,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<u32>,
        feature_dim: usize,
        num_classes: u32,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Data("feature_dim must be positive".into()));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::Data(format!(
                "feature array length {} does not match {} samples of dim {feature_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature value {bad}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            feature_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn features_of(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Dataset-level label access for stream generation and evaluation.
    pub fn label_of(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes as usize];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        by_class
    }

    /// Population standard deviation over every feature entry.
    pub fn feature_std(&self) -> f64 {
        if self.features.is_empty() {
            return 0.0;
        }
        let n = self.features.len() as f64;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for &v in &self.features {
            s += v;
            s2 += v * v;
        }
        let mean = s / n;
        (s2 / n - mean * mean).max(0.0).sqrt()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features_of(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
        }
    }

    /// Deterministic per-class split: the first `train_fraction` of each
    /// class (in dataset order) forms the training side.
    pub fn split_train_test(&self, train_fraction: f64) -> (Dataset, Dataset) {
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for class in self.class_indices() {
            let n_train = ((class.len() as f64) * train_fraction).round() as usize;
            let n_train = n_train.min(class.len());
            train_idx.extend_from_slice(&class[..n_train]);
            test_idx.extend_from_slice(&class[n_train..]);
        }
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        (self.subset(&train_idx), self.subset(&test_idx))
    }

    /// Gaussian-mixture synthetic dataset: per class, an isotropic unit
    /// variance Gaussian centered at a random unit direction scaled by
    /// `separation`.
    pub fn make_synthetic(
        num_classes: u32,
        dim: usize,
        per_class: usize,
        separation: f64,
        seed: u64,
    ) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(num_classes as usize * per_class * dim);
        let mut labels = Vec::with_capacity(num_classes as usize * per_class);
        for class in 0..num_classes {
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = crate::numcore::ops::norm(&dir);
            let mean: Vec<f64> = dir.iter().map(|v| v / norm * separation).collect();
            for _ in 0..per_class {
                for m in &mean {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    features.push(m + noise);
                }
                labels.push(class);
            }
        }
        Dataset {
            features,
            labels,
            feature_dim: dim,
            num_classes,
        }
    }
}

// ---------------------------------------------------------------------
// On-disk dataset format
//
// Header: magic "SSDS", version u32, num_samples u64, feature_dim u64,
// num_classes u32. Then per sample: label u32 followed by feature_dim
// float64 values. All integers and floats little-endian.
// ---------------------------------------------------------------------

const DATASET_MAGIC: &[u8; 4] = b"SSDS";
const DATASET_VERSION: u32 = 1;

impl Dataset {
    pub fn save_ssds(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.feature_dim as u64).to_le_bytes())?;
        w.write_all(&self.num_classes.to_le_bytes())?;
        for i in 0..self.len() {
            w.write_all(&self.labels[i].to_le_bytes())?;
            for v in self.features_of(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_ssds(path: &Path) -> Result<Dataset> {
        let mut r = CountingReader::new(BufReader::new(File::open(path)?));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic, "magic")?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected {DATASET_MAGIC:?}"),
            });
        }
        let version = r.read_u32("version")?;
        if version != DATASET_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let num_samples = r.read_u64("num_samples")?;
        let feature_dim = r.read_u64("feature_dim")? as usize;
        let num_classes = r.read_u32("num_classes")?;
        if feature_dim == 0 {
            return Err(Error::Format {
                offset: 16,
                message: "feature_dim must be positive".into(),
            });
        }
        let mut features = Vec::with_capacity(num_samples as usize * feature_dim);
        let mut labels = Vec::with_capacity(num_samples as usize);
        for _ in 0..num_samples {
            let at = r.offset;
            let label = r.read_u32("sample label")?;
            if label >= num_classes {
                return Err(Error::Format {
                    offset: at,
                    message: format!("label {label} out of range for {num_classes} classes"),
                });
            }
            labels.push(label);
            for _ in 0..feature_dim {
                features.push(r.read_f64("sample feature")?);
            }
        }
        Dataset::new(features, labels, feature_dim, num_classes)
    }

    /// Ingest a CSV file with the label in the first column.
    pub fn from_csv(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        let mut features = Vec::new();
        let mut labels: Vec<u32> = Vec::new();
        let mut dim = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let label_field = fields.next().unwrap_or("");
            let label: u32 = label_field.trim().parse().map_err(|_| {
                Error::Data(format!("line {}: bad label {label_field:?}", lineno + 1))
            })?;
            let row: Vec<f64> = fields
                .map(|f| {
                    f.trim()
                        .parse()
                        .map_err(|_| Error::Data(format!("line {}: bad feature {f:?}", lineno + 1)))
                })
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::Data(format!(
                        "line {}: {} features, expected {d}",
                        lineno + 1,
                        row.len()
                    )));
                }
                _ => {}
            }
            labels.push(label);
            features.extend(row);
        }
        let dim = dim.ok_or_else(|| Error::Data("empty CSV".into()))?;
        let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        Dataset::new(features, labels, dim, num_classes)
    }
}

// ---------------------------------------------------------------------
// Stream generation
// ---------------------------------------------------------------------

/// How run lengths are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunLengthMode {
    /// Every run has exactly the configured length.
    Fixed,
    /// Geometric with the configured mean.
    Geometric,
}

#[derive(Debug, Clone)]
pub struct StreamConfig {
    /// Consecutive same-class emissions per run.
    pub stc: u32,
    pub total_emissions: u64,
    pub seed: u64,
    pub run_lengths: RunLengthMode,
}

/// Lazy sequence of samples drawn from a dataset in same-class runs.
/// Fully determined by `(dataset, config)`.
pub struct StreamIter<'a> {
    dataset: &'a Dataset,
    class_indices: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
    stc: u32,
    total: u64,
    run_lengths: RunLengthMode,
    emitted: u64,
    run_remaining: u64,
    current_class: u32,
    prev_class: Option<u32>,
}

/// Start a stream over `dataset`. Each run picks a class uniformly at
/// random (excluding the immediately previous class when more than one
/// exists) and then draws samples uniformly with replacement from that
/// class.
pub fn emit_stream<'a>(dataset: &'a Dataset, cfg: &StreamConfig) -> Result<StreamIter<'a>> {
    if cfg.stc == 0 {
        return Err(Error::Contract("stream stc must be at least 1".into()));
    }
    let class_indices = dataset.class_indices();
    for (c, idx) in class_indices.iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::Data(format!("class {c} has no samples")));
        }
    }
    Ok(StreamIter {
        dataset,
        class_indices,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        stc: cfg.stc,
        total: cfg.total_emissions,
        run_lengths: cfg.run_lengths,
        emitted: 0,
        run_remaining: 0,
        current_class: 0,
        prev_class: None,
    })
}

impl StreamIter<'_> {
    fn next_run(&mut self) {
        let k = self.class_indices.len() as u32;
        let class = match self.prev_class {
            Some(prev) if k > 1 => {
                let r = self.rng.random_range(0..k - 1);
                if r >= prev {
                    r + 1
                } else {
                    r
                }
            }
            _ => self.rng.random_range(0..k),
        };
        self.current_class = class;
        self.prev_class = Some(class);
        self.run_remaining = match self.run_lengths {
            RunLengthMode::Fixed => self.stc as u64,
            RunLengthMode::Geometric => {
                if self.stc == 1 {
                    1
                } else {
                    let p = 1.0 / self.stc as f64;
                    let u: f64 = self.rng.random_range(0.0..1.0);
                    ((1.0 - u).ln() / (1.0 - p).ln()).ceil().max(1.0) as u64
                }
            }
        };
    }
}

impl Iterator for StreamIter<'_> {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        if self.emitted >= self.total {
            return None;
        }
        if self.run_remaining == 0 {
            self.next_run();
        }
        let members = &self.class_indices[self.current_class as usize];
        let pick = members[self.rng.random_range(0..members.len())];
        let sample = Sample::new(
            pick as u64,
            self.dataset.features_of(pick).to_vec(),
            self.dataset.label_of(pick),
            self.emitted,
        );
        self.emitted += 1;
        self.run_remaining -= 1;
        Some(sample)
    }
}
