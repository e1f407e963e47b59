//! Command-line front end for the streaming self-supervised learning
//! pipeline.
//!
//! Exit codes: 0 on success, 1 on configuration errors (bad flags, bad
//! config file, invalid parameter combinations), 2 on runtime errors.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use streamsel_core::gradcheck::{run_gradient_suite, SuiteConfig};
use streamsel_core::harness::{
    compare_policies, load_dataset, run_stage1, run_stage2, DataSource, ProbeConfig, RunConfig,
};
use streamsel_core::model::load_checkpoint;
use streamsel_core::selection::PolicyKind;
use streamsel_core::stream::Dataset;
use streamsel_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "streamsel",
    about = "Streaming self-supervised learning with contrast-scored buffer selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-mixture dataset file
    GenData {
        #[arg(long, default_value_t = 10)]
        classes: u32,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long = "per-class", default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 3.0)]
        separation: f64,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a CSV file (label in the first column) to a dataset file
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1: streaming contrastive training with buffer selection
    Train {
        /// Flat key=value config file; flags override file values
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        stc: Option<u32>,
        /// Buffer capacity; also sets the segment size
        #[arg(long = "buffer-size")]
        buffer_size: Option<usize>,
        /// 0 disables lazy scoring
        #[arg(long = "lazy-interval")]
        lazy_interval: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset file; overrides the config data source
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        emissions: Option<u64>,
        /// Extra config overrides as KEY=VALUE
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: linear-probe evaluation of a trained checkpoint
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "label-fraction")]
        label_fraction: Option<f64>,
        /// Config file supplying the dataset and probe settings
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset file; overrides the config data source
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "probe-epochs")]
        probe_epochs: Option<usize>,
    },
    /// Run a policy sweep over shared seeds
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated policies
        #[arg(long, default_value = "contrast,random,fifo")]
        policies: String,
        /// Comma-separated master seeds
        #[arg(long, default_value = "1,2,3,4,5")]
        seeds: String,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the loss gradients against finite differences
    GradientCheck {
        #[arg(long, default_value_t = 50)]
        batches: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                1
            } else {
                2
            }
        }
    }
}

fn parse_set_pairs(set: &[String]) -> Result<Vec<(String, String)>> {
    set.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))
        })
        .collect()
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenData {
            classes,
            dim,
            per_class,
            separation,
            seed,
            out,
        } => {
            let ds = Dataset::make_synthetic(classes, dim, per_class, separation, seed);
            ds.save_ssds(&out)?;
            println!(
                "wrote {} samples ({classes} classes, dim {dim}) to {}",
                ds.len(),
                out.display()
            );
            Ok(0)
        }
        Command::Convert { input, out } => {
            let ds = Dataset::from_csv(&input)?;
            ds.save_ssds(&out)?;
            println!(
                "converted {} samples ({} classes, dim {}) to {}",
                ds.len(),
                ds.num_classes(),
                ds.feature_dim(),
                out.display()
            );
            Ok(0)
        }
        Command::Train {
            config,
            policy,
            stc,
            buffer_size,
            lazy_interval,
            seed,
            data,
            emissions,
            set,
            out,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            cfg.apply_pairs(parse_set_pairs(&set)?)?;
            if let Some(p) = policy {
                cfg.policy = PolicyKind::from_str(&p)?;
            }
            if let Some(s) = stc {
                cfg.stc = s;
            }
            if let Some(n) = buffer_size {
                cfg.buffer_capacity = n;
                cfg.segment_size = n;
            }
            if let Some(t) = lazy_interval {
                cfg.lazy_interval = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(path) = data {
                cfg.data = DataSource::File { path };
            }
            if let Some(n) = emissions {
                cfg.total_emissions = n;
            }
            let output = run_stage1(&cfg, Some(&out))?;
            let last_loss = output
                .metrics
                .iterations
                .last()
                .map(|r| r.train_loss)
                .unwrap_or(f64::NAN);
            println!(
                "trained {} iterations ({} samples seen), final loss {last_loss}",
                output.metrics.iterations.len(),
                output
                    .metrics
                    .iterations
                    .last()
                    .map(|r| r.seen_samples)
                    .unwrap_or(0),
            );
            if let Some(acc) = output.final_accuracy {
                println!("final probe accuracy: {acc:.4}");
            }
            println!("artifacts in {}", out.display());
            Ok(0)
        }
        Command::Probe {
            checkpoint,
            label_fraction,
            config,
            data,
            seed,
            probe_epochs,
        } => {
            let cfg = load_config(config.as_ref())?;
            let model = load_checkpoint(&checkpoint)?;
            let dataset = match data {
                Some(path) => Dataset::load_ssds(&path)?,
                None => load_dataset(&cfg.data)?,
            };
            let (train, test) = dataset.split_train_test(cfg.train_fraction);
            let probe = ProbeConfig {
                label_fraction: label_fraction.unwrap_or(cfg.label_fraction),
                epochs: probe_epochs.unwrap_or(cfg.probe_epochs),
                lr: cfg.probe_lr,
                batch_size: cfg.probe_batch,
                seed: seed.unwrap_or_else(|| cfg.seeds().probe),
            };
            let accuracy = run_stage2(&model, &train, &test, &probe)?;
            println!("probe accuracy: {accuracy}");
            Ok(0)
        }
        Command::Compare {
            config,
            policies,
            seeds,
            threads,
            set,
            out,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            cfg.apply_pairs(parse_set_pairs(&set)?)?;
            let policies: Vec<PolicyKind> = policies
                .split(',')
                .map(|p| PolicyKind::from_str(p.trim()))
                .collect::<Result<_>>()?;
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad seed {s:?}")))
                })
                .collect::<Result<_>>()?;
            let threads = threads.unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            });
            let table = compare_policies(&cfg, &policies, &seeds, threads)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("compare.csv"), table.to_csv())?;
            std::fs::write(out.join("compare_summary.csv"), table.summary_csv())?;
            print!("{table}");
            println!("tables written to {}", out.display());
            Ok(0)
        }
        Command::GradientCheck { batches, seed } => {
            let cfg = SuiteConfig {
                batches,
                seed,
                ..SuiteConfig::default()
            };
            let report = run_gradient_suite(&cfg)?;
            for (i, c) in report.checks.iter().enumerate() {
                println!(
                    "batch {i:02} pairs={} dim={} tau={}: autodiff rel err {:.2e}, closed forms (anchor {:.2e}, partner {:.2e})",
                    c.n_pairs, c.dim, c.tau, c.autodiff_err, c.anchor_form_err, c.partner_form_err
                );
            }
            let autodiff_ok = report.autodiff_ok();
            println!(
                "{}: autodiff gradient vs finite differences, max rel err {:.2e} (tolerance {:.0e})",
                if autodiff_ok { "PASS" } else { "FAIL" },
                report.autodiff_max_err(),
                report.tolerance
            );
            let reconciled = report.reconciled();
            println!(
                "{}: closed-form reconciliation; anchor-vector form matches {}/{} batches, partner-vector form {}/{}",
                if reconciled { "PASS" } else { "FAIL" },
                report.anchor_form_matches(),
                report.checks.len(),
                report.partner_form_matches(),
                report.checks.len()
            );
            match report.matching_form() {
                Some(form) => println!("closed form confirmed by finite differences: {form:?}"),
                None => println!("no single closed form matched every batch"),
            }
            if autodiff_ok && reconciled {
                Ok(0)
            } else {
                Err(Error::Data("gradient check failed".into()))
            }
        }
    }
}
