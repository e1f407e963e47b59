//! Dense-tensor numeric core with reverse-mode automatic differentiation.
//!
//! Generic over the scalar type (see [`crate::scalar::Scalar`]); the rest
//! of the crate works through the `f64` aliases exported at the crate root.

pub mod ops;
mod tape;
mod tensor;

pub use tape::{Tape, TensorId};
pub use tensor::TensorBase;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    type T64 = TensorBase<f64>;

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn tensor(shape: &[usize], data: &[f64]) -> T64 {
        T64::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn tensor_shape_data_mismatch_rejected() {
        assert!(T64::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(T64::from_vec(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let i = tensor(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = tensor(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = ops::matmul(&i, &b).unwrap();
        assert_eq!(c.data(), b.data());
    }

    #[test]
    fn matmul_hand_expansion() {
        let a = tensor(&[1, 2], &[1.0, 2.0]);
        let b = tensor(&[2, 1], &[3.0, 4.0]);
        let c = ops::matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = tensor(&[2, 3], &[0.0; 6]);
        let b = tensor(&[2, 2], &[0.0; 4]);
        let err = ops::matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn relu_definition() {
        let x = tensor(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(ops::relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn exp_identity_case() {
        let x = tensor(&[1], &[0.0]);
        assert_eq!(ops::exp(&x).data(), &[1.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let x = tensor(&[2], &[1.0, -0.5]);
        assert!(matches!(ops::log(&x), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn div_by_zero_scalar_rejected() {
        let x = tensor(&[1], &[1.0]);
        assert!(matches!(
            ops::div_scalar(&x, 0.0),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn l2_normalize_345_triangle() {
        let v = tensor(&[2], &[3.0, 4.0]);
        let u = ops::l2_normalize(&v).unwrap();
        assert!((u.data()[0] - 0.6).abs() < 1e-15);
        assert!((u.data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_already_unit() {
        let v = tensor(&[3], &[1.0, 0.0, 0.0]);
        assert_eq!(ops::l2_normalize(&v).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn l2_normalize_zero_vector_rejected() {
        let v = tensor(&[3], &[0.0, 0.0, 0.0]);
        assert!(matches!(
            ops::l2_normalize(&v),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(tensor(&[2], &[1.0, 2.0]).with_grad());
        assert!(matches!(tape.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn backward_accumulates_additively() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(tensor(&[2], &[1.0, 2.0]).with_grad());
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn forward_bit_identical_across_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = tensor(&[6, 5], &randn(&mut rng, 30));
        let b = tensor(&[5, 4], &randn(&mut rng, 20));
        let c1 = ops::matmul(&a, &b).unwrap();
        let c2 = ops::matmul(&a, &b).unwrap();
        assert_eq!(
            c1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            c2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn generic_core_works_with_f32() {
        let a = TensorBase::<f32>::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = TensorBase::<f32>::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let c = ops::matmul(&a, &b).unwrap();
        assert_eq!(c.data(), a.data());
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(a.with_grad());
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0f32; 4]);
    }

    /// Scalarize a tape output against fixed weights so finite differences
    /// have a single number to probe.
    fn weighted_loss(tape: &mut Tape<f64>, out: TensorId, weights: &T64) -> TensorId {
        let w = tape.leaf(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        tape.sum(prod).unwrap()
    }

    /// Check the tape gradient of `build` against central differences for
    /// every input, `trials` times.
    fn fd_check(
        name: &str,
        trials: usize,
        tol: f64,
        input_shapes: &[Vec<usize>],
        sample_input: impl Fn(&mut ChaCha8Rng, usize, usize) -> f64,
        build_tape: impl Fn(&mut Tape<f64>, &[TensorId]) -> TensorId,
        build_raw: impl Fn(&[T64]) -> T64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ name.len() as u64);
        for trial in 0..trials {
            let inputs: Vec<T64> = input_shapes
                .iter()
                .enumerate()
                .map(|(which, shape)| {
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|i| sample_input(&mut rng, which, i)).collect();
                    T64::from_vec(shape.clone(), data).unwrap()
                })
                .collect();
            let out_raw = build_raw(&inputs);
            let weights =
                T64::from_vec(out_raw.shape().to_vec(), randn(&mut rng, out_raw.numel())).unwrap();

            let mut tape = Tape::new();
            let ids: Vec<TensorId> = inputs
                .iter()
                .map(|t| tape.leaf(t.clone().with_grad()))
                .collect();
            let out = build_tape(&mut tape, &ids);
            let loss = weighted_loss(&mut tape, out, &weights);
            tape.backward(loss).unwrap();

            for (which, id) in ids.iter().enumerate() {
                let analytic = tape.grad(*id).unwrap().to_vec();
                let f = |x: &[f64]| {
                    let mut probe = inputs.clone();
                    probe[which] = T64::from_vec(input_shapes[which].clone(), x.to_vec()).unwrap();
                    let o = build_raw(&probe);
                    ops::sum(&ops::mul(&o, &weights).unwrap()).data()[0]
                };
                let numeric = central_diff(f, inputs[which].data(), 1e-6);
                let err = max_rel_err(&analytic, &numeric);
                assert!(
                    err <= tol,
                    "{name} input {which} trial {trial}: rel err {err} > {tol}"
                );
            }
        }
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn matmul_backward_matches_finite_differences() {
        fd_check(
            "matmul",
            20,
            1e-6,
            &[vec![4, 5], vec![5, 3]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.matmul(ids[0], ids[1]).unwrap(),
            |ins| ops::matmul(&ins[0], &ins[1]).unwrap(),
        );
    }

    #[test]
    fn mul_backward_matches_finite_differences() {
        fd_check(
            "mul",
            100,
            1e-6,
            &[vec![3, 3], vec![3, 3]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.mul(ids[0], ids[1]).unwrap(),
            |ins| ops::mul(&ins[0], &ins[1]).unwrap(),
        );
    }

    #[test]
    fn l2_normalize_backward_matches_finite_differences() {
        fd_check(
            "l2_normalize",
            100,
            1e-6,
            &[vec![8]],
            |rng, _, _| gauss(rng) + 0.1,
            |tape, ids| tape.l2_normalize(ids[0]).unwrap(),
            |ins| ops::l2_normalize(&ins[0]).unwrap(),
        );
    }

    #[test]
    fn elementwise_backward_matches_finite_differences() {
        fd_check(
            "add",
            100,
            1e-5,
            &[vec![3, 4], vec![3, 4]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.add(ids[0], ids[1]).unwrap(),
            |ins| ops::add(&ins[0], &ins[1]).unwrap(),
        );
        fd_check(
            "sub",
            100,
            1e-5,
            &[vec![3, 4], vec![3, 4]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.sub(ids[0], ids[1]).unwrap(),
            |ins| ops::sub(&ins[0], &ins[1]).unwrap(),
        );
        // Inputs kept away from the relu kink so finite differences stay valid.
        fd_check(
            "relu",
            100,
            1e-5,
            &[vec![4, 4]],
            |rng, _, _| {
                let v: f64 = gauss(rng);
                v + 0.05 * v.signum()
            },
            |tape, ids| tape.relu(ids[0]).unwrap(),
            |ins| ops::relu(&ins[0]),
        );
        fd_check(
            "exp",
            100,
            1e-5,
            &[vec![3, 3]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.exp(ids[0]).unwrap(),
            |ins| ops::exp(&ins[0]),
        );
        fd_check(
            "log",
            100,
            1e-5,
            &[vec![3, 3]],
            |rng, _, _| 0.1 + gauss(rng).abs(),
            |tape, ids| tape.log(ids[0]).unwrap(),
            |ins| ops::log(&ins[0]).unwrap(),
        );
        fd_check(
            "div_scalar",
            100,
            1e-5,
            &[vec![3, 3]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.div_scalar(ids[0], 1.7).unwrap(),
            |ins| ops::div_scalar(&ins[0], 1.7).unwrap(),
        );
        fd_check(
            "mul_scalar",
            100,
            1e-5,
            &[vec![3, 3]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.mul_scalar(ids[0], -2.5).unwrap(),
            |ins| ops::mul_scalar(&ins[0], -2.5),
        );
    }

    #[test]
    fn structural_ops_backward_match_finite_differences() {
        fd_check(
            "transpose",
            100,
            1e-5,
            &[vec![3, 5]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.transpose(ids[0]).unwrap(),
            |ins| ops::transpose(&ins[0]).unwrap(),
        );
        fd_check(
            "add_bias",
            100,
            1e-5,
            &[vec![4, 3], vec![3]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.add_bias(ids[0], ids[1]).unwrap(),
            |ins| ops::add_bias(&ins[0], &ins[1]).unwrap(),
        );
        fd_check(
            "sub_rowwise",
            100,
            1e-5,
            &[vec![4, 3], vec![4]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.sub_rowwise(ids[0], ids[1]).unwrap(),
            |ins| ops::sub_rowwise(&ins[0], &ins[1]).unwrap(),
        );
        fd_check(
            "row_sums",
            100,
            1e-5,
            &[vec![4, 3]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.row_sums(ids[0]).unwrap(),
            |ins| ops::row_sums(&ins[0]).unwrap(),
        );
        fd_check(
            "sum",
            100,
            1e-5,
            &[vec![3, 4]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.sum(ids[0]).unwrap(),
            |ins| ops::sum(&ins[0]),
        );
        fd_check(
            "mean",
            100,
            1e-5,
            &[vec![3, 4]],
            |rng, _, _| gauss(rng),
            |tape, ids| tape.mean(ids[0]).unwrap(),
            |ins| ops::mean(&ins[0]),
        );
        fd_check(
            "l2_normalize_rows",
            100,
            1e-5,
            &[vec![4, 6]],
            |rng, _, _| gauss(rng) + 0.1,
            |tape, ids| tape.l2_normalize_rows(ids[0]).unwrap(),
            |ins| ops::l2_normalize_rows(&ins[0]).unwrap(),
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn l2_normalize_output_has_unit_norm(
                v in proptest::collection::vec(-100.0f64..100.0, 1..32)
            ) {
                let t = T64::from_vec(vec![v.len()], v.clone()).unwrap();
                match ops::l2_normalize(&t) {
                    Ok(u) => {
                        let n = ops::norm(u.data());
                        prop_assert!((n - 1.0).abs() < 1e-12, "norm {n}");
                    }
                    Err(_) => prop_assert!(ops::norm(&v) < ops::NORM_EPS),
                }
            }

            #[test]
            fn matmul_matches_naive_triple_loop(
                m in 1usize..5, k in 1usize..5, n in 1usize..5,
                seed in 0u64..1000
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = T64::from_vec(vec![m, k], randn(&mut rng, m * k)).unwrap();
                let b = T64::from_vec(vec![k, n], randn(&mut rng, k * n)).unwrap();
                let c = ops::matmul(&a, &b).unwrap();
                for i in 0..m {
                    for j in 0..n {
                        let mut s = 0.0;
                        for p in 0..k {
                            s += a.data()[i * k + p] * b.data()[p * n + j];
                        }
                        prop_assert!((c.data()[i * n + j] - s).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
