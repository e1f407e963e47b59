//! Stage 2: linear-probe evaluation of a frozen encoder.
//!
//! A class-stratified labeled subset of the training split is encoded
//! once; a single dense layer is trained on those representations with
//! softmax cross-entropy and Adam, then scored on the disjoint test
//! split.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{Adam, AdamConfig, Model};
use crate::numcore::ops;
use crate::numcore::Tape;
use crate::seeding;
use crate::stream::Dataset;
use crate::Tensor;

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    /// Fraction of training labels available, in (0, 1].
    pub label_fraction: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Stratified labeled indices: per class, a seeded shuffle of the class
/// members, truncated to the labeled fraction.
fn stratified_labeled_indices(train: &Dataset, cfg: &ProbeConfig) -> Result<Vec<usize>> {
    if !(cfg.label_fraction > 0.0 && cfg.label_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "label fraction must be in (0, 1], got {}",
            cfg.label_fraction
        )));
    }
    let mut labeled = Vec::new();
    for (class, members) in train.class_indices().into_iter().enumerate() {
        let take = ((members.len() as f64) * cfg.label_fraction).round() as usize;
        if take == 0 {
            return Err(Error::Config(format!(
                "class {class} has no labeled samples at fraction {}",
                cfg.label_fraction
            )));
        }
        let mut shuffled = members;
        shuffled.shuffle(&mut seeding::substream(cfg.seed, &[10, class as u64]));
        shuffled.truncate(take);
        labeled.extend(shuffled);
    }
    labeled.sort_unstable();
    Ok(labeled)
}

fn dataset_tensor(ds: &Dataset, indices: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(indices.len() * ds.feature_dim());
    for &i in indices {
        data.extend_from_slice(ds.features_of(i));
    }
    Tensor::from_vec(vec![indices.len(), ds.feature_dim()], data)
}

fn one_hot(labels: &[u32], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l as usize] = 1.0;
    }
    Tensor::from_vec(vec![labels.len(), classes], data)
}

/// Softmax cross-entropy of `x @ w + b` against one-hot targets,
/// averaged over the batch. The per-row shift by the row max is treated
/// as a constant; the gradient is unchanged by it.
fn cross_entropy_step(
    tape: &mut Tape<f64>,
    x: &Tensor,
    targets: &Tensor,
    w: crate::numcore::TensorId,
    b: crate::numcore::TensorId,
) -> Result<crate::numcore::TensorId> {
    let rows = x.shape()[0] as f64;
    let xid = tape.leaf(x.clone());
    let prod = tape.matmul(xid, w)?;
    let logits = tape.add_bias(prod, b)?;
    let shift = tape.leaf(ops::row_max(tape.value(logits))?);
    let shifted = tape.sub_rowwise(logits, shift)?;
    let expd = tape.exp(shifted)?;
    let sums = tape.row_sums(expd)?;
    let lse = tape.log(sums)?;
    let lse_total = tape.sum(lse)?;
    let mask = tape.leaf(targets.clone());
    let picked = tape.mul(shifted, mask)?;
    let picked_total = tape.sum(picked)?;
    let diff = tape.sub(lse_total, picked_total)?;
    tape.div_scalar(diff, rows)
}

/// Train and evaluate the probe. Returns held-out accuracy in [0, 1].
pub fn run_stage2(
    model: &Model,
    train: &Dataset,
    test: &Dataset,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Config("probe test split is empty".into()));
    }
    let labeled = stratified_labeled_indices(train, cfg)?;
    let classes = train.num_classes() as usize;

    // Frozen encoder: representations computed once.
    let reps = model.encode(&dataset_tensor(train, &labeled)?)?;
    let labels: Vec<u32> = labeled.iter().map(|&i| train.label_of(i)).collect();
    let d_h = reps.shape()[1];

    let mut w = Tensor::zeros(vec![d_h, classes]);
    let mut b = Tensor::zeros(vec![classes]);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
        &[w.numel(), b.numel()],
    );

    let mut order: Vec<usize> = (0..labeled.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seeding::substream(cfg.seed, &[20, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            let x = Tensor::from_vec(
                vec![chunk.len(), d_h],
                chunk.iter().flat_map(|&i| reps.row(i).to_vec()).collect(),
            )?;
            let y: Vec<u32> = chunk.iter().map(|&i| labels[i]).collect();
            let targets = one_hot(&y, classes)?;

            let mut tape = Tape::new();
            let wid = tape.leaf(w.clone().with_grad());
            let bid = tape.leaf(b.clone().with_grad());
            let loss = cross_entropy_step(&mut tape, &x, &targets, wid, bid)?;
            tape.backward(loss)?;
            let wg = tape.grad(wid).map(<[f64]>::to_vec);
            let bg = tape.grad(bid).map(<[f64]>::to_vec);
            adam.step(&mut [&mut w, &mut b], &[wg.as_deref(), bg.as_deref()])?;
        }
    }

    // Held-out accuracy; argmax ties resolve to the lowest class index.
    let test_reps = model.encode(&dataset_tensor(test, &(0..test.len()).collect::<Vec<_>>())?)?;
    let logits = ops::add_bias(&ops::matmul(&test_reps, &w)?, &b)?;
    let mut correct = 0usize;
    for i in 0..test.len() {
        let row = logits.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best as u32 == test.label_of(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DenseLayer, Mlp, ModelConfig};

    fn identity_model(dim: usize) -> Model {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        let ident = || {
            Mlp::from_layers(vec![DenseLayer {
                weight: Tensor::from_vec(vec![dim, dim], w.clone()).unwrap(),
                bias: Tensor::zeros(vec![dim]),
            }])
            .unwrap()
        };
        Model {
            encoder: ident(),
            projection: ident(),
        }
    }

    fn probe_cfg(fraction: f64, seed: u64) -> ProbeConfig {
        ProbeConfig {
            label_fraction: fraction,
            epochs: 60,
            lr: 0.05,
            batch_size: 128,
            seed,
        }
    }

    #[test]
    fn identity_encoder_on_separated_data_scores_high() {
        let ds = Dataset::make_synthetic(4, 8, 100, 10.0, 3);
        let (train, test) = ds.split_train_test(0.8);
        let acc = run_stage2(&identity_model(8), &train, &test, &probe_cfg(1.0, 1)).unwrap();
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn zero_separation_scores_near_chance() {
        let ds = Dataset::make_synthetic(10, 8, 200, 0.0, 5);
        let (train, test) = ds.split_train_test(0.8);
        let acc = run_stage2(&identity_model(8), &train, &test, &probe_cfg(1.0, 1)).unwrap();
        assert!((acc - 0.1).abs() <= 0.05, "accuracy {acc}");
        // Same with an untrained random encoder: no signal to find.
        let random = Model::init(&ModelConfig::with_input_dim(8), 17).unwrap();
        let acc = run_stage2(&random, &train, &test, &probe_cfg(1.0, 1)).unwrap();
        assert!((acc - 0.1).abs() <= 0.05, "accuracy {acc}");
    }

    #[test]
    fn probe_is_deterministic_per_seed() {
        let ds = Dataset::make_synthetic(3, 6, 50, 2.0, 7);
        let (train, test) = ds.split_train_test(0.8);
        let model = Model::init(&ModelConfig::with_input_dim(6), 2).unwrap();
        let a = run_stage2(&model, &train, &test, &probe_cfg(1.0, 9)).unwrap();
        let b = run_stage2(&model, &train, &test, &probe_cfg(1.0, 9)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn empty_stratum_is_a_config_error() {
        let ds = Dataset::make_synthetic(5, 4, 20, 1.0, 2);
        let (train, test) = ds.split_train_test(0.8);
        // 16 train per class; 1% rounds to zero.
        let r = run_stage2(&identity_model(4), &train, &test, &probe_cfg(0.01, 1));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn label_fraction_subsets_are_stratified() {
        let ds = Dataset::make_synthetic(4, 3, 50, 1.0, 2);
        let (train, _) = ds.split_train_test(0.8);
        let labeled = stratified_labeled_indices(&train, &probe_cfg(0.1, 3)).unwrap();
        // 40 per class in train, 10% = 4 from each class.
        assert_eq!(labeled.len(), 16);
        let mut per_class = vec![0; 4];
        for &i in &labeled {
            per_class[train.label_of(i) as usize] += 1;
        }
        assert_eq!(per_class, vec![4, 4, 4, 4]);
    }
}
