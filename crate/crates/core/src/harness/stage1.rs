//! Stage 1: streaming contrastive training with buffer selection.
//!
//! Per iteration: take a model snapshot, receive a segment, score the
//! candidates (contrast policy only), select the next buffer contents,
//! train once on strong-augmented pairs of the whole buffer, advance
//! ages, and log metrics. A label-read audit brackets the selection and
//! training span; checkpoint probes run outside it.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::augment::{Augmentor, AugmentorConfig};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Adam, AdamConfig, Model, ModelConfig};
use crate::numcore::{Tape, TensorId};
use crate::objective::nt_xent_loss;
use crate::scoring::score_candidates;
use crate::selection::{
    select_contrast, select_fifo, select_k_center, select_random, select_selective_bp, Buffer,
    PolicyKind,
};
use crate::stream::{emit_stream, label_read_count, Dataset, Sample, StreamConfig};
use crate::{seeding, Tensor};

use super::config::{DataSource, ResolvedConfig, RunConfig};
use super::metrics::{CheckpointRow, IterationRow, RunMetrics};
use super::stage2::{run_stage2, ProbeConfig};

#[derive(Debug, Clone, Copy, Default)]
pub struct ScoringTotals {
    pub incoming_fresh: u64,
    pub buffer_fresh: u64,
    pub buffer_reused: u64,
}

#[derive(Debug)]
pub struct Stage1Output {
    pub model: Model,
    pub metrics: RunMetrics,
    pub scoring: ScoringTotals,
    /// Arrival indices of the training batch, per iteration.
    pub batch_arrivals: Vec<Vec<u64>>,
    /// (first arrival index, length) of the received segment, per iteration.
    pub segment_arrivals: Vec<(u64, u64)>,
    /// Probe accuracy at the final checkpoint, when probes ran.
    pub final_accuracy: Option<f64>,
    pub final_checkpoint: Option<PathBuf>,
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic {
            classes,
            dim,
            per_class,
            separation,
            seed,
        } => Ok(Dataset::make_synthetic(
            *classes,
            *dim,
            *per_class,
            *separation,
            *seed,
        )),
        DataSource::File { path } => Dataset::load_ssds(path),
    }
}

fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    buffer: &Buffer,
    augmentor: &Augmentor,
    tau: f64,
    iteration: u64,
) -> Result<f64> {
    let mut rows = Vec::with_capacity(2 * buffer.len());
    for entry in buffer.entries() {
        let (a, b) = augmentor.strong_pair(&entry.sample, iteration);
        rows.push(a.features);
        rows.push(b.features);
    }
    let mut tape = Tape::new();
    let enc = model.encoder.bind(&mut tape);
    let proj = model.projection.bind(&mut tape);
    let x = tape.leaf(Tensor::from_rows(&rows)?);
    let h = enc.forward(&mut tape, x)?;
    let z_raw = proj.forward(&mut tape, h)?;
    let z = tape.l2_normalize_rows(z_raw)?;
    let loss = nt_xent_loss(&mut tape, z, tau)?;
    let loss_value = tape.value(loss).item()?;
    tape.backward(loss)?;

    let ids: Vec<TensorId> = enc
        .param_ids()
        .into_iter()
        .chain(proj.param_ids())
        .collect();
    let grads: Vec<Option<Vec<f64>>> = ids
        .iter()
        .map(|id| tape.grad(*id).map(<[f64]>::to_vec))
        .collect();
    let grad_refs: Vec<Option<&[f64]>> = grads.iter().map(Option::as_deref).collect();
    let mut params = model.parameters_mut();
    adam.step(&mut params, &grad_refs)?;
    Ok(loss_value)
}

pub fn run_stage1(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Stage1Output> {
    cfg.validate()?;
    let seeds = cfg.seeds();

    let dataset = load_dataset(&cfg.data)?;
    let (train, test) = dataset.split_train_test(cfg.train_fraction);
    let layout = cfg.data_layout(train.feature_dim())?;
    let noise_sigma = cfg.noise_sigma.unwrap_or_else(|| 0.1 * train.feature_std());

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let sidecar = ResolvedConfig {
            config: cfg,
            seeds,
            noise_sigma,
            format_version: 1,
        };
        std::fs::write(dir.join("config.json"), sidecar.to_json())?;
    }

    let make_augmentor = |seed: u64| {
        Augmentor::new(AugmentorConfig {
            layout,
            noise_sigma,
            mask_fraction: cfg.mask_fraction,
            crop_min: cfg.crop_min,
            crop_max: cfg.crop_max,
            seed,
        })
    };
    let aug_train = make_augmentor(seeds.augment)?;
    let aug_policy = make_augmentor(seeds.policy)?;

    let model_cfg = ModelConfig {
        input_dim: train.feature_dim(),
        encoder_hidden: cfg.encoder_hidden.clone(),
        repr_dim: cfg.repr_dim,
        proj_hidden: cfg.proj_hidden.clone(),
        proj_dim: cfg.proj_dim,
    };
    let mut model = Model::init(&model_cfg, seeds.model)?;
    let mut adam = Adam::for_model(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
        &model,
    );

    let probe_cfg = ProbeConfig {
        label_fraction: cfg.label_fraction,
        epochs: cfg.probe_epochs,
        lr: cfg.probe_lr,
        batch_size: cfg.probe_batch,
        seed: seeds.probe,
    };

    let mut stream = emit_stream(
        &train,
        &StreamConfig {
            stc: cfg.stc,
            total_emissions: cfg.total_emissions,
            seed: seeds.stream,
            run_lengths: cfg.run_lengths,
        },
    )?;

    let mut thresholds: Vec<u64> = if cfg.total_emissions > 0 {
        (1..=u64::from(cfg.checkpoints))
            .map(|k| cfg.total_emissions * k / u64::from(cfg.checkpoints))
            .collect()
    } else {
        Vec::new()
    };
    thresholds.dedup();
    let mut next_threshold = 0usize;

    let lazy = cfg.lazy();
    let mut buffer = Buffer::new(cfg.buffer_capacity)?;
    let mut metrics = RunMetrics::default();
    let mut totals = ScoringTotals::default();
    let mut batch_arrivals = Vec::new();
    let mut segment_arrivals = Vec::new();
    let mut final_accuracy = None;
    let mut seen: u64 = 0;
    let mut iteration: u64 = 0;

    loop {
        let segment: Vec<Sample> = stream.by_ref().take(cfg.segment_size).collect();
        if segment.is_empty() {
            break;
        }
        let started = Instant::now();
        segment_arrivals.push((segment[0].arrival_index, segment.len() as u64));
        seen += segment.len() as u64;

        let result = (|| -> Result<(IterationRow, Vec<u64>, u64)> {
            let audit_before = label_read_count();

            let (outcome, fresh, reused, buffer_fresh) = match cfg.policy {
                PolicyKind::Contrast => {
                    let scored =
                        score_candidates(&model, &aug_train, &buffer, &segment, &lazy, iteration)?;
                    let fresh = scored.fresh_count as u64;
                    let reused = scored.reused_count as u64;
                    let buffer_fresh = scored.buffer_fresh as u64;
                    let outcome = select_contrast(
                        std::mem::replace(&mut buffer, Buffer::new(cfg.buffer_capacity)?),
                        segment,
                        &scored.buffer_scores,
                        &scored.incoming_scores,
                        iteration,
                    )?;
                    (outcome, fresh, reused, buffer_fresh)
                }
                PolicyKind::Random => {
                    let mut rng = seeding::substream(seeds.policy, &[iteration]);
                    let outcome = select_random(
                        std::mem::replace(&mut buffer, Buffer::new(cfg.buffer_capacity)?),
                        segment,
                        &mut rng,
                        iteration,
                    )?;
                    (outcome, 0, 0, 0)
                }
                PolicyKind::Fifo => {
                    let outcome = select_fifo(
                        std::mem::replace(&mut buffer, Buffer::new(cfg.buffer_capacity)?),
                        segment,
                        iteration,
                    )?;
                    (outcome, 0, 0, 0)
                }
                PolicyKind::SelectiveBp => {
                    let outcome = select_selective_bp(
                        std::mem::replace(&mut buffer, Buffer::new(cfg.buffer_capacity)?),
                        segment,
                        &model,
                        &aug_policy,
                        cfg.tau,
                        iteration,
                    )?;
                    (outcome, 0, 0, 0)
                }
                PolicyKind::KCenter => {
                    let outcome = select_k_center(
                        std::mem::replace(&mut buffer, Buffer::new(cfg.buffer_capacity)?),
                        segment,
                        &model,
                        iteration,
                    )?;
                    (outcome, 0, 0, 0)
                }
            };
            buffer = outcome.buffer;

            let batch: Vec<u64> = buffer.entries().iter().map(|e| e.arrival_index()).collect();
            let train_loss = if buffer.len() >= 2 {
                train_step(
                    &mut model, &mut adam, &buffer, &aug_train, cfg.tau, iteration,
                )?
            } else {
                f64::NAN
            };

            if label_read_count() != audit_before {
                return Err(Error::Contract(
                    "label read during selection or training".into(),
                ));
            }

            Ok((
                IterationRow {
                    iteration,
                    seen_samples: seen,
                    train_loss,
                    fresh_scores: fresh,
                    reused_scores: reused,
                    kept_from_buffer: outcome.kept_from_buffer as u64,
                    kept_from_incoming: outcome.kept_from_incoming as u64,
                },
                batch,
                buffer_fresh,
            ))
        })();

        let (row, batch, buffer_fresh) = match result {
            Ok(v) => v,
            Err(e) => {
                // Flush what we have before aborting.
                if let Some(dir) = out_dir {
                    let _ = metrics.write_all(dir);
                }
                return Err(e.at_iteration(iteration));
            }
        };
        totals.buffer_fresh += buffer_fresh;
        totals.buffer_reused += row.reused_scores;
        totals.incoming_fresh += row.fresh_scores - buffer_fresh;

        buffer.advance_ages();
        batch_arrivals.push(batch);
        metrics.push_iteration(row, started.elapsed().as_millis() as u64);

        if next_threshold < thresholds.len() && seen >= thresholds[next_threshold] {
            while next_threshold < thresholds.len() && seen >= thresholds[next_threshold] {
                next_threshold += 1;
            }
            if let Some(dir) = out_dir {
                save_checkpoint(
                    &model,
                    &dir.join(format!("checkpoint_{next_threshold:03}.ssel")),
                )?;
            }
            if cfg.probe_at_checkpoints {
                let accuracy = run_stage2(&model, &train, &test, &probe_cfg)?;
                metrics.checkpoints.push(CheckpointRow {
                    seen_samples: seen,
                    probe_accuracy: accuracy,
                });
                final_accuracy = Some(accuracy);
            }
        }

        iteration += 1;
    }

    let final_checkpoint = if let Some(dir) = out_dir {
        let path = dir.join("checkpoint.ssel");
        save_checkpoint(&model, &path)?;
        metrics.write_all(dir)?;
        Some(path)
    } else {
        None
    };

    Ok(Stage1Output {
        model,
        metrics,
        scoring: totals,
        batch_arrivals,
        segment_arrivals,
        final_accuracy,
        final_checkpoint,
    })
}
