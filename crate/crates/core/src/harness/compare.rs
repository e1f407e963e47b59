//! Multi-configuration sweeps over shared seeds.
//!
//! Runs share nothing mutable, so configurations execute on a small
//! thread pool; results are collected in input order regardless of
//! completion order.

use std::fmt;

use crate::error::Result;
use crate::selection::PolicyKind;

use super::config::RunConfig;
use super::stage1::run_stage1;

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub policy: String,
    pub seed: u64,
    pub probe_accuracy: f64,
    pub fresh_scores: u64,
    pub reused_scores: u64,
}

#[derive(Debug, Clone)]
pub struct CompareSummary {
    pub policy: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_fresh_scores: f64,
}

#[derive(Debug, Clone)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
    pub summaries: Vec<CompareSummary>,
}

/// Run every (policy, seed) combination of `base` and aggregate final
/// probe accuracies.
pub fn compare_policies(
    base: &RunConfig,
    policies: &[PolicyKind],
    seeds: &[u64],
    threads: usize,
) -> Result<CompareTable> {
    let mut configs = Vec::new();
    for &policy in policies {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.policy = policy;
            cfg.seed = seed;
            // Final-checkpoint probe only; sweeps care about the end state.
            cfg.checkpoints = 1;
            cfg.probe_at_checkpoints = true;
            configs.push(cfg);
        }
    }

    let results = run_many(&configs, threads)?;

    let mut rows = Vec::with_capacity(results.len());
    for (cfg, out) in configs.iter().zip(results) {
        rows.push(CompareRow {
            policy: cfg.policy.name().to_string(),
            seed: cfg.seed,
            probe_accuracy: out.0,
            fresh_scores: out.1,
            reused_scores: out.2,
        });
    }

    let mut summaries = Vec::new();
    for &policy in policies {
        let acc: Vec<f64> = rows
            .iter()
            .filter(|r| r.policy == policy.name())
            .map(|r| r.probe_accuracy)
            .collect();
        let fresh: Vec<f64> = rows
            .iter()
            .filter(|r| r.policy == policy.name())
            .map(|r| r.fresh_scores as f64)
            .collect();
        summaries.push(CompareSummary {
            policy: policy.name().to_string(),
            mean_accuracy: mean(&acc),
            std_accuracy: sample_std(&acc),
            mean_fresh_scores: mean(&fresh),
        });
    }

    Ok(CompareTable { rows, summaries })
}

/// Execute runs across `threads` workers, preserving input order.
fn run_many(configs: &[RunConfig], threads: usize) -> Result<Vec<(f64, u64, u64)>> {
    let threads = threads.max(1);
    let results: Vec<Result<(f64, u64, u64)>> = {
        let mut slots: Vec<Option<Result<(f64, u64, u64)>>> = Vec::new();
        slots.resize_with(configs.len(), || None);
        let slots = std::sync::Mutex::new(slots);
        let next = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..threads.min(configs.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= configs.len() {
                        break;
                    }
                    let out = run_stage1(&configs[i], None).map(|o| {
                        let acc = o.final_accuracy.unwrap_or(f64::NAN);
                        let fresh = o.scoring.incoming_fresh + o.scoring.buffer_fresh;
                        (acc, fresh, o.scoring.buffer_reused)
                    });
                    slots.lock().expect("no poisoned lock")[i] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("no poisoned lock")
            .into_iter()
            .map(|s| s.expect("every slot filled"))
            .collect()
    };
    results.into_iter().collect()
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

impl CompareTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,seed,probe_accuracy,fresh_scores,reused_scores\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.policy, r.seed, r.probe_accuracy, r.fresh_scores, r.reused_scores
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("policy,mean_accuracy,std_accuracy,mean_fresh_scores\n");
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.policy, s.mean_accuracy, s.std_accuracy, s.mean_fresh_scores
            ));
        }
        out
    }
}

impl fmt::Display for CompareTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<14} {:>10} {:>10} {:>14}",
            "policy", "mean acc", "std", "fresh scores"
        )?;
        for s in &self.summaries {
            writeln!(
                f,
                "{:<14} {:>10.4} {:>10.4} {:>14.1}",
                s.policy, s.mean_accuracy, s.std_accuracy, s.mean_fresh_scores
            )?;
        }
        Ok(())
    }
}
