//! Two-stage pipeline orchestration: streaming contrastive training
//! with buffer selection (stage 1), then linear-probe evaluation with a
//! label fraction (stage 2), plus config handling and metrics.

pub mod compare;
pub mod config;
pub mod metrics;
pub mod stage1;
pub mod stage2;

pub use compare::{compare_policies, CompareTable};
pub use config::{DataSource, LayoutChoice, RunConfig, Seeds};
pub use metrics::{CheckpointRow, IterationRow, RunMetrics};
pub use stage1::{load_dataset, run_stage1, Stage1Output};
pub use stage2::{run_stage2, ProbeConfig};
