//! Cross-module integration tests for the two-stage pipeline.

use std::path::PathBuf;

use streamsel_core::harness::{
    compare_policies, run_stage1, run_stage2, DataSource, ProbeConfig, RunConfig,
};
use streamsel_core::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use streamsel_core::selection::PolicyKind;
use streamsel_core::stream::{label_read_count, Dataset};

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("streamsel-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small but non-trivial config used across these tests.
fn small_config(policy: PolicyKind, seed: u64) -> RunConfig {
    RunConfig {
        policy,
        seed,
        data: DataSource::Synthetic {
            classes: 4,
            dim: 8,
            per_class: 80,
            separation: 2.0,
            seed: 77,
        },
        encoder_hidden: vec![32],
        repr_dim: 16,
        proj_hidden: vec![16],
        proj_dim: 8,
        buffer_capacity: 8,
        segment_size: 8,
        total_emissions: 480,
        stc: 12,
        checkpoints: 2,
        probe_epochs: 20,
        probe_batch: 64,
        ..RunConfig::default()
    }
}

#[test]
fn every_policy_trains_end_to_end() {
    for policy in [
        PolicyKind::Contrast,
        PolicyKind::Random,
        PolicyKind::Fifo,
        PolicyKind::SelectiveBp,
        PolicyKind::KCenter,
    ] {
        let out =
            run_stage1(&small_config(policy, 3), None).unwrap_or_else(|e| panic!("{policy}: {e}"));
        assert_eq!(out.metrics.iterations.len(), 60, "{policy}");
        assert!(
            out.metrics
                .iterations
                .iter()
                .all(|r| r.train_loss.is_finite()),
            "{policy}: non-finite loss"
        );
        let acc = out.final_accuracy.expect("probe ran");
        assert!((0.0..=1.0).contains(&acc), "{policy}: accuracy {acc}");
    }
}

#[test]
fn zero_emissions_emit_the_untouched_initial_checkpoint() {
    let dir = tmp_dir("zero-emissions");
    let mut cfg = small_config(PolicyKind::Contrast, 5);
    cfg.total_emissions = 0;
    let out = run_stage1(&cfg, Some(&dir)).unwrap();
    assert!(out.metrics.iterations.is_empty());

    // The emitted checkpoint equals a fresh init with the same seeds.
    let fresh = Model::init(
        &ModelConfig {
            input_dim: 8,
            encoder_hidden: cfg.encoder_hidden.clone(),
            repr_dim: cfg.repr_dim,
            proj_hidden: cfg.proj_hidden.clone(),
            proj_dim: cfg.proj_dim,
        },
        cfg.seeds().model,
    )
    .unwrap();
    let fresh_path = dir.join("fresh.ssel");
    save_checkpoint(&fresh, &fresh_path).unwrap();
    assert_eq!(
        std::fs::read(dir.join("checkpoint.ssel")).unwrap(),
        std::fs::read(&fresh_path).unwrap()
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn identical_configs_give_identical_runs() {
    let dir_a = tmp_dir("det-a");
    let dir_b = tmp_dir("det-b");
    run_stage1(&small_config(PolicyKind::Contrast, 9), Some(&dir_a)).unwrap();
    run_stage1(&small_config(PolicyKind::Contrast, 9), Some(&dir_b)).unwrap();
    for file in [
        "metrics.csv",
        "checkpoints.csv",
        "checkpoint.ssel",
        "config.json",
    ] {
        assert_eq!(
            std::fs::read(dir_a.join(file)).unwrap(),
            std::fs::read(dir_b.join(file)).unwrap(),
            "{file} differs"
        );
    }
    std::fs::remove_dir_all(&dir_a).ok();
    std::fs::remove_dir_all(&dir_b).ok();
}

#[test]
fn scoring_accounting_covers_every_candidate() {
    let out = run_stage1(&small_config(PolicyKind::Contrast, 11), None).unwrap();
    for (row, (_, seg_len)) in out.metrics.iterations.iter().zip(&out.segment_arrivals) {
        let buffer_len = if row.iteration == 0 { 0 } else { 8 };
        assert_eq!(
            row.fresh_scores + row.reused_scores,
            buffer_len + seg_len,
            "iteration {}",
            row.iteration
        );
    }
}

#[test]
fn stage1_reads_no_labels() {
    let before = label_read_count();
    run_stage1(&small_config(PolicyKind::Contrast, 13), None).unwrap();
    run_stage1(&small_config(PolicyKind::SelectiveBp, 13), None).unwrap();
    assert_eq!(label_read_count(), before);
}

#[test]
fn checkpoint_probe_round_trip_matches_in_memory_model() {
    let dir = tmp_dir("probe-roundtrip");
    let cfg = small_config(PolicyKind::Contrast, 15);
    let out = run_stage1(&cfg, Some(&dir)).unwrap();

    let dataset = Dataset::make_synthetic(4, 8, 80, 2.0, 77);
    let (train, test) = dataset.split_train_test(cfg.train_fraction);
    let probe = ProbeConfig {
        label_fraction: 1.0,
        epochs: 20,
        lr: cfg.probe_lr,
        batch_size: 64,
        seed: cfg.seeds().probe,
    };
    let from_memory = run_stage2(&out.model, &train, &test, &probe).unwrap();
    let reloaded = load_checkpoint(&dir.join("checkpoint.ssel")).unwrap();
    let from_disk = run_stage2(&reloaded, &train, &test, &probe).unwrap();
    assert_eq!(from_memory.to_bits(), from_disk.to_bits());
    assert_eq!(out.final_accuracy.unwrap().to_bits(), from_memory.to_bits());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn compare_runs_policies_over_shared_seeds() {
    let mut base = small_config(PolicyKind::Contrast, 1);
    base.total_emissions = 160;
    base.probe_epochs = 10;
    let table =
        compare_policies(&base, &[PolicyKind::Contrast, PolicyKind::Fifo], &[1, 2], 2).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert_eq!(table.summaries.len(), 2);
    for row in &table.rows {
        assert!(row.probe_accuracy.is_finite());
    }
    // Baselines never score.
    let fifo_fresh: u64 = table
        .rows
        .iter()
        .filter(|r| r.policy == "fifo")
        .map(|r| r.fresh_scores)
        .sum();
    assert_eq!(fifo_fresh, 0);
    let csv = table.to_csv();
    assert!(csv.lines().count() == 5, "{csv}");
}

#[test]
fn label_permuted_replay_yields_identical_selections() {
    // Replay the same sample sequence with every label permuted; every
    // policy must select the same arrival indices.
    use rand::SeedableRng;
    use streamsel_core::augment::{Augmentor, AugmentorConfig, DataLayout};
    use streamsel_core::scoring::{score_candidates, LazyConfig};
    use streamsel_core::selection::{
        select_contrast, select_fifo, select_k_center, select_random, select_selective_bp, Buffer,
    };
    use streamsel_core::stream::Sample;

    let dataset = Dataset::make_synthetic(4, 8, 80, 2.0, 77);
    let stream_cfg = streamsel_core::stream::StreamConfig {
        stc: 6,
        total_emissions: 48,
        seed: 5,
        run_lengths: streamsel_core::stream::RunLengthMode::Fixed,
    };
    let emitted: Vec<Sample> = streamsel_core::stream::emit_stream(&dataset, &stream_cfg)
        .unwrap()
        .collect();
    let relabel = |s: &Sample, shift: u32| {
        Sample::new(
            s.id,
            s.features.clone(),
            (s.label() + shift) % 4,
            s.arrival_index,
        )
    };

    let model = Model::init(&ModelConfig::with_input_dim(8), 2).unwrap();
    let augmentor = Augmentor::new(AugmentorConfig {
        layout: DataLayout::Vector { len: 8 },
        noise_sigma: 0.1,
        mask_fraction: 0.1,
        crop_min: 1.0,
        crop_max: 1.0,
        seed: 9,
    })
    .unwrap();

    let selections_for = |shift: u32| {
        let samples: Vec<Sample> = emitted.iter().map(|s| relabel(s, shift)).collect();
        let mut all = Vec::new();
        for policy in [
            PolicyKind::Contrast,
            PolicyKind::Random,
            PolicyKind::Fifo,
            PolicyKind::SelectiveBp,
            PolicyKind::KCenter,
        ] {
            let mut buffer = Buffer::new(8).unwrap();
            for (t, segment) in samples.chunks(8).enumerate() {
                let t = t as u64;
                let segment = segment.to_vec();
                let outcome = match policy {
                    PolicyKind::Contrast => {
                        let scored = score_candidates(
                            &model,
                            &augmentor,
                            &buffer,
                            &segment,
                            &LazyConfig::disabled(),
                            t,
                        )
                        .unwrap();
                        select_contrast(
                            buffer,
                            segment,
                            &scored.buffer_scores,
                            &scored.incoming_scores,
                            t,
                        )
                        .unwrap()
                    }
                    PolicyKind::Random => {
                        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + t);
                        select_random(buffer, segment, &mut rng, t).unwrap()
                    }
                    PolicyKind::Fifo => select_fifo(buffer, segment, t).unwrap(),
                    PolicyKind::SelectiveBp => {
                        select_selective_bp(buffer, segment, &model, &augmentor, 0.5, t).unwrap()
                    }
                    PolicyKind::KCenter => select_k_center(buffer, segment, &model, t).unwrap(),
                };
                buffer = outcome.buffer;
                buffer.advance_ages();
                all.push(
                    buffer
                        .entries()
                        .iter()
                        .map(|e| e.arrival_index())
                        .collect::<Vec<u64>>(),
                );
            }
        }
        all
    };

    assert_eq!(selections_for(0), selections_for(1));
}
