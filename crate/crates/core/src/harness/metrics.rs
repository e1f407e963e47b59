//! Per-run metrics and their CSV serialization.
//!
//! The iteration and checkpoint files contain only deterministic
//! quantities, so identical configs produce byte-identical files. Wall
//! times go to a separate timing sidecar that is excluded from any
//! reproducibility comparison.

use std::path::Path;

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct IterationRow {
    pub iteration: u64,
    /// Cumulative stream emissions consumed.
    pub seen_samples: u64,
    pub train_loss: f64,
    pub fresh_scores: u64,
    pub reused_scores: u64,
    pub kept_from_buffer: u64,
    pub kept_from_incoming: u64,
}

#[derive(Debug, Clone)]
pub struct CheckpointRow {
    pub seen_samples: u64,
    pub probe_accuracy: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub iterations: Vec<IterationRow>,
    pub checkpoints: Vec<CheckpointRow>,
    /// Wall time per iteration, aligned with `iterations`.
    pub wall_times_ms: Vec<u64>,
}

pub const ITERATIONS_HEADER: &str =
    "iteration,seen_samples,train_loss,fresh_scores,reused_scores,kept_from_buffer,kept_from_incoming";
pub const CHECKPOINTS_HEADER: &str = "seen_samples,probe_accuracy";
pub const TIMING_HEADER: &str = "iteration,wall_time_ms";

impl RunMetrics {
    pub fn push_iteration(&mut self, row: IterationRow, wall_time_ms: u64) {
        debug_assert!(
            self.iterations
                .last()
                .is_none_or(|prev| prev.seen_samples <= row.seen_samples),
            "seen_samples must be non-decreasing"
        );
        self.iterations.push(row);
        self.wall_times_ms.push(wall_time_ms);
    }

    pub fn iterations_csv(&self) -> String {
        let mut out = String::from(ITERATIONS_HEADER);
        out.push('\n');
        for r in &self.iterations {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iteration,
                r.seen_samples,
                r.train_loss,
                r.fresh_scores,
                r.reused_scores,
                r.kept_from_buffer,
                r.kept_from_incoming
            ));
        }
        out
    }

    pub fn checkpoints_csv(&self) -> String {
        let mut out = String::from(CHECKPOINTS_HEADER);
        out.push('\n');
        for r in &self.checkpoints {
            out.push_str(&format!("{},{}\n", r.seen_samples, r.probe_accuracy));
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from(TIMING_HEADER);
        out.push('\n');
        for (r, ms) in self.iterations.iter().zip(&self.wall_times_ms) {
            out.push_str(&format!("{},{}\n", r.iteration, ms));
        }
        out
    }

    /// Write metrics.csv, checkpoints.csv and timing.csv into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.iterations_csv())?;
        std::fs::write(dir.join("checkpoints.csv"), self.checkpoints_csv())?;
        std::fs::write(dir.join("timing.csv"), self.timing_csv())?;
        Ok(())
    }
}
