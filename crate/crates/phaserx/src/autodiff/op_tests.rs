use rand::Rng;

use crate::groups::{circulant_from_kernel, cyclic_shift};
use crate::rng::derive_rng;

use super::*;

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn pointwise_linear_identity() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[2], &[1.0, 2.0]), false);
    let w = tape.leaf(t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
    let b = tape.leaf(t64(&[2], &[0.0, 0.0]), false);
    let y = tape.pointwise_linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
}

#[test]
fn pointwise_linear_hand_matrix() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[2], &[1.0, 2.0]), false);
    let w = tape.leaf(t64(&[2, 2], &[1.0, 0.0, 1.0, 0.0]), false);
    let b = tape.leaf(t64(&[2], &[3.0, 0.0]), false);
    let y = tape.pointwise_linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[6.0, 0.0]);
}

#[test]
fn pointwise_linear_zero_input_passes_bias() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[2], &[0.0, 0.0]), false);
    let w = tape.leaf(t64(&[2, 2], &[0.3, -0.4, 0.9, 2.0]), false);
    let b = tape.leaf(t64(&[2], &[5.0, -1.0]), false);
    let y = tape.pointwise_linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0, -1.0]);
}

#[test]
fn pointwise_linear_shape_mismatch() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[3], &[0.0; 3]), false);
    let w = tape.leaf(t64(&[2, 2], &[0.0; 4]), false);
    let b = tape.leaf(t64(&[2], &[0.0; 2]), false);
    assert!(tape.pointwise_linear(x, w, b).is_err());
}

#[test]
fn depthwise_delta_kernel_is_identity() {
    let mut rng = derive_rng(3, 0);
    let mut tape = Tape::new();
    let x = tape.leaf(rand_tensor(&[2, 3, 4, 2], &mut rng), false);
    // centered delta in a 3x3 kernel
    let mut k = Tensor::zeros(&[2, 3, 3]);
    k.data_mut()[1 * 3 + 1] = 1.0;
    k.data_mut()[9 + 1 * 3 + 1] = 1.0;
    let kv = tape.leaf(k, false);
    let y = tape.depthwise_conv_ft(x, kv, (1, 1)).unwrap();
    assert!(tape.value(y).max_abs_diff(tape.value(x)) < 1e-15);
}

#[test]
fn depthwise_hand_convolution() {
    // 1 channel, F=1, T=3, kernel 1x3 all ones -> [3, 6, 5]
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[1, 1, 3, 1], &[1.0, 2.0, 3.0]), false);
    let k = tape.leaf(t64(&[1, 1, 3], &[1.0, 1.0, 1.0]), false);
    let y = tape.depthwise_conv_ft(x, k, (1, 1)).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 6.0, 5.0]);
}

#[test]
fn depthwise_zero_kernel() {
    let mut rng = derive_rng(3, 1);
    let mut tape = Tape::new();
    let x = tape.leaf(rand_tensor(&[1, 4, 5, 3], &mut rng), false);
    let k = tape.leaf(Tensor::zeros(&[3, 5, 3]), false);
    let y = tape.depthwise_conv_ft(x, k, (1, 1)).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn depthwise_even_kernel_rejected() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f64>::zeros(&[1, 2, 2, 1]), false);
    let k = tape.leaf(Tensor::<f64>::zeros(&[1, 2, 3]), false);
    assert!(tape.depthwise_conv_ft(x, k, (1, 1)).is_err());
}

#[test]
fn group_conv_delta_is_identity() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[4, 1, 1, 1], &[1.0, 2.0, 3.0, 4.0]), false);
    let k = tape.leaf(t64(&[1, 1], &[1.0]), false);
    let y = tape.circular_group_conv(x, k).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn group_conv_pure_shift() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[4, 1, 1, 1], &[1.0, 2.0, 3.0, 4.0]), false);
    let k = tape.leaf(t64(&[1, 2], &[0.0, 1.0]), false);
    let y = tape.circular_group_conv(x, k).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0, 1.0, 2.0, 3.0]);
}

#[test]
fn group_conv_matches_circulant_matrix() {
    let mut rng = derive_rng(3, 2);
    for n in [5usize, 6, 16] {
        let x = rand_tensor(&[n, 1, 1, 1], &mut rng);
        let psi = rand_tensor(&[1, n], &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let kv = tape.leaf(psi.clone(), false);
        let y = tape.circular_group_conv(xv, kv).unwrap();

        let a = circulant_from_kernel(psi.data());
        for (i, row) in a.iter().enumerate() {
            let expect: f64 = row.iter().zip(x.data().iter()).map(|(m, v)| m * v).sum();
            assert!((tape.value(y).data()[i] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn group_conv_kernel_too_long_rejected() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f64>::zeros(&[3, 1, 1, 1]), false);
    let k = tape.leaf(Tensor::<f64>::zeros(&[1, 4]), false);
    assert!(tape.circular_group_conv(x, k).is_err());
}

#[test]
fn group_conv_shift_equivariance_f64_and_f32() {
    let mut rng = derive_rng(3, 3);
    for n in [2usize, 5, 9] {
        for kg in 1..=n {
            let shape = [n, 2, 3, 2];
            let x = rand_tensor(&shape, &mut rng);
            let psi = rand_tensor(&[2, kg], &mut rng);
            for m in 0..n as i64 {
                // f64 path
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), false);
                let kv = tape.leaf(psi.clone(), false);
                let y = tape.circular_group_conv(xv, kv).unwrap();
                let shifted_in =
                    Tensor::from_vec(&shape, cyclic_shift(x.data(), &shape, 0, m)).unwrap();
                let sv = tape.leaf(shifted_in, false);
                let y_shift_in = tape.circular_group_conv(sv, kv).unwrap();
                let shift_out = cyclic_shift(tape.value(y).data(), &shape, 0, m);
                let dev = tape
                    .value(y_shift_in)
                    .data()
                    .iter()
                    .zip(shift_out.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                assert!(dev <= 1e-12, "f64 n={} kg={} m={} dev={}", n, kg, m, dev);

                // f32 path
                let x32 = Tensor::<f32>::from_f64(&shape, x.data()).unwrap();
                let p32 = Tensor::<f32>::from_f64(&[2, kg], psi.data()).unwrap();
                let mut tape32 = Tape::new();
                let xv = tape32.leaf(x32.clone(), false);
                let kv = tape32.leaf(p32, false);
                let y = tape32.circular_group_conv(xv, kv).unwrap();
                let shifted_in =
                    Tensor::from_vec(&shape, cyclic_shift(x32.data(), &shape, 0, m)).unwrap();
                let sv = tape32.leaf(shifted_in, false);
                let y_shift_in = tape32.circular_group_conv(sv, kv).unwrap();
                let shift_out = cyclic_shift(tape32.value(y).data(), &shape, 0, m);
                let dev32 = tape32
                    .value(y_shift_in)
                    .data()
                    .iter()
                    .zip(shift_out.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f32, f32::max);
                assert!(dev32 <= 1e-5, "f32 n={} kg={} m={} dev={}", n, kg, m, dev32);
            }
        }
    }
}

#[test]
fn layer_norm_hand_case() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[3], &[1.0, 2.0, 3.0]), false);
    let g = tape.leaf(t64(&[3], &[1.0; 3]), false);
    let b = tape.leaf(t64(&[3], &[0.0; 3]), false);
    let y = tape.layer_norm(x, g, b, 0.0).unwrap();
    let expect = [-1.224744871391589, 0.0, 1.224744871391589];
    for (v, e) in tape.value(y).data().iter().zip(expect.iter()) {
        assert!((v - e).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_constant_input_is_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[2, 4], &[7.5; 8]), false);
    let g = tape.leaf(t64(&[4], &[1.0; 4]), false);
    let b = tape.leaf(t64(&[4], &[0.0; 4]), false);
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn layer_norm_affine_collapse() {
    let mut rng = derive_rng(3, 4);
    let mut tape = Tape::new();
    let x = tape.leaf(rand_tensor(&[5, 3], &mut rng), false);
    let g = tape.leaf(t64(&[3], &[0.0; 3]), false);
    let b = tape.leaf(t64(&[3], &[5.0; 3]), false);
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 5.0));
}

#[test]
fn layer_norm_zero_channels_rejected() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f64>::from_vec(&[2, 0], vec![]).unwrap(), false);
    let g = tape.leaf(Tensor::<f64>::from_vec(&[0], vec![]).unwrap(), false);
    let b = tape.leaf(Tensor::<f64>::from_vec(&[0], vec![]).unwrap(), false);
    assert!(tape.layer_norm(x, g, b, 1e-5).is_err());
}

#[test]
fn gelu_reference_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[3], &[0.0, 1.0, -10.0]), false);
    let y = tape.gelu(x).unwrap();
    let out = tape.value(y).data();
    assert_eq!(out[0], 0.0);
    assert!((out[1] - 0.841345).abs() < 1e-6);
    assert!(out[2].abs() < 1e-9);
}

#[test]
fn mean_over_group_cases() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[4, 1, 1, 1], &[1.0, 2.0, 3.0, 4.0]), false);
    let y = tape.mean_over_group(x).unwrap();
    assert_eq!(tape.value(y).data(), &[2.5]);

    // constant along the group axis
    let c = tape.leaf(t64(&[3, 1, 2, 1], &[9.0; 6]), false);
    let yc = tape.mean_over_group(c).unwrap();
    assert!(tape.value(yc).data().iter().all(|&v| v == 9.0));

    // G = 1 passes through
    let one = tape.leaf(t64(&[1, 1, 2, 1], &[3.0, 4.0]), false);
    let y1 = tape.mean_over_group(one).unwrap();
    assert_eq!(tape.value(y1).data(), &[3.0, 4.0]);
}

#[test]
fn mean_over_group_shift_invariant() {
    let mut rng = derive_rng(3, 5);
    let shape = [6, 2, 2, 3];
    let x = rand_tensor(&shape, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), false);
    let base = tape.mean_over_group(xv).unwrap();
    for m in 0..6 {
        let shifted = Tensor::from_vec(&shape, cyclic_shift(x.data(), &shape, 0, m)).unwrap();
        let sv = tape.leaf(shifted, false);
        let y = tape.mean_over_group(sv).unwrap();
        let dev = tape.value(y).max_abs_diff(tape.value(base));
        assert!(dev <= 1e-12, "m={} dev={}", m, dev);
    }
}

#[test]
fn residual_add_cases() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[2], &[1.0, 2.0]), false);
    let z = tape.leaf(t64(&[2], &[0.0, 0.0]), false);
    let y = tape.residual_add(x, z).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0]);

    let b = tape.leaf(t64(&[2], &[3.0, 4.0]), false);
    let s = tape.residual_add(x, b).unwrap();
    assert_eq!(tape.value(s).data(), &[4.0, 6.0]);

    let neg = tape.leaf(t64(&[2], &[-1.0, -2.0]), false);
    let zero = tape.residual_add(x, neg).unwrap();
    assert_eq!(tape.value(zero).data(), &[0.0, 0.0]);

    let bad = tape.leaf(t64(&[3], &[0.0; 3]), false);
    assert!(tape.residual_add(x, bad).is_err());
}

#[test]
fn bce_reference_values() {
    let mut tape = Tape::new();
    let z = tape.leaf(t64(&[1], &[0.0]), false);
    let y = tape.leaf(t64(&[1], &[1.0]), false);
    let l = tape.bce_with_logits(z, y).unwrap();
    assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);

    let z = tape.leaf(t64(&[1], &[2.0]), false);
    let y = tape.leaf(t64(&[1], &[0.0]), false);
    let l = tape.bce_with_logits(z, y).unwrap();
    assert!((tape.value(l).data()[0] - 2.1269280110429727).abs() < 1e-12);

    let z = tape.leaf(t64(&[1], &[40.0]), false);
    let y = tape.leaf(t64(&[1], &[1.0]), false);
    let l = tape.bce_with_logits(z, y).unwrap();
    let v = tape.value(l).data()[0];
    assert!(v.is_finite() && v < 1e-17, "got {}", v);
}

#[test]
fn bce_rejects_non_binary_labels() {
    let mut tape = Tape::new();
    let z = tape.leaf(t64(&[1], &[0.0]), false);
    let y = tape.leaf(t64(&[1], &[0.5]), false);
    assert!(tape.bce_with_logits(z, y).is_err());
}

#[test]
fn bce_finite_for_huge_logits() {
    let mut tape = Tape::new();
    for &z in &[-1e6, -12345.0, 0.0, 777.0, 1e6] {
        let zv = tape.leaf(t64(&[2], &[z, -z]), false);
        let yv = tape.leaf(t64(&[2], &[1.0, 0.0]), false);
        let l = tape.bce_with_logits(zv, yv).unwrap();
        let v = tape.value(l).data()[0];
        assert!(v.is_finite() && v >= 0.0, "z={} loss={}", z, v);
    }
}

#[test]
fn backward_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[3], &[4.0, -1.0, 0.5]), true);
    let l = tape.sum(x).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_sum_of_squares() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[2], &[1.0, -2.0]), true);
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0]);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[2], &[1.0, 2.0]), true);
    assert!(tape.backward(x).is_err());
}

#[test]
fn backward_leaves_disconnected_untouched() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[2], &[1.0, 2.0]), true);
    let other = tape.leaf(t64(&[2], &[5.0, 6.0]), true);
    let l = tape.sum(x).unwrap();
    tape.backward(l).unwrap();
    assert!(tape.grad(other).is_none());
}

#[test]
fn reshape_concat_select_roundtrip() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
    let r = tape.reshape(x, &[3, 2]).unwrap();
    assert_eq!(tape.value(r).shape(), &[3, 2]);

    let a = tape.leaf(t64(&[2, 1], &[1.0, 2.0]), true);
    let b = tape.leaf(t64(&[2, 2], &[3.0, 4.0, 5.0, 6.0]), true);
    let c = tape.concat_last(&[a, b]).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);

    let grid = tape.leaf(t64(&[1, 3, 2], &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]), true);
    let sel = tape.select_time(grid, &[0, 2]).unwrap();
    assert_eq!(tape.value(sel).data(), &[0.0, 1.0, 20.0, 21.0]);

    let l1 = tape.sum(c).unwrap();
    let l2 = tape.sum(sel).unwrap();
    let l = tape.residual_add(l1, l2).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 1.0]);
    assert_eq!(tape.grad(b).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    assert_eq!(tape.grad(grid).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
}

// Gradient checks across the op vocabulary, ten random instances each.
#[test]
fn finite_diff_all_ops() {
    let mut rng = derive_rng(99, 0);
    for trial in 0..10 {
        let seed_tag = trial as u64;

        // pointwise_linear
        let x = rand_tensor(&[3, 4], &mut rng);
        let params = vec![
            ("w".to_string(), rand_tensor(&[4, 4], &mut rng)),
            ("b".to_string(), rand_tensor(&[4], &mut rng)),
        ];
        let report = finite_diff_check(
            |tape, vars| {
                let xv = tape.leaf(x.clone(), false);
                let y = tape.pointwise_linear(xv, vars[0], vars[1])?;
                let sq = tape.mul(y, y)?;
                tape.sum(sq)
            },
            &params,
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "pointwise trial {}: {}", seed_tag, report);

        // circular_group_conv, G=5, k_g=3
        let x = rand_tensor(&[5, 2, 2, 2], &mut rng);
        let params = vec![
            ("x".to_string(), x),
            ("psi".to_string(), rand_tensor(&[2, 3], &mut rng)),
        ];
        let report = finite_diff_check(
            |tape, vars| {
                let y = tape.circular_group_conv(vars[0], vars[1])?;
                let sq = tape.mul(y, y)?;
                tape.sum(sq)
            },
            &params,
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "groupconv trial {}: {}", seed_tag, report);

        // depthwise conv with dilation
        let params = vec![
            ("x".to_string(), rand_tensor(&[2, 3, 5, 2], &mut rng)),
            ("k".to_string(), rand_tensor(&[2, 3, 3], &mut rng)),
        ];
        let report = finite_diff_check(
            |tape, vars| {
                let y = tape.depthwise_conv_ft(vars[0], vars[1], (1, 2))?;
                let sq = tape.mul(y, y)?;
                tape.sum(sq)
            },
            &params,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "dwconv trial {}: {}", seed_tag, report);

        // layer_norm + gelu + mean + bce chained. Three channels: with only
        // two, the normalized output is structurally +-1 and the true input
        // gradient collapses to eps scale, which makes a relative-error
        // comparison meaningless.
        let labels = {
            let n = 2 * 2 * 3;
            Tensor::from_vec(
                &[2, 2, 3],
                (0..n).map(|_| if rng.random_range(0.0..1.0) < 0.5 { 0.0 } else { 1.0 }).collect(),
            )
            .unwrap()
        };
        // Keep per-row variance away from zero so the check stays well
        // conditioned; the dedicated near-constant test below covers the
        // degenerate regime at a looser tolerance.
        let x_cond = {
            let mut x = rand_tensor(&[3, 2, 2, 3], &mut rng);
            for (i, v) in x.data_mut().iter_mut().enumerate() {
                *v = *v * 0.3 + (i % 3) as f64 - 1.0;
            }
            x
        };
        let params = vec![
            ("x".to_string(), x_cond),
            ("gamma".to_string(), rand_tensor(&[3], &mut rng)),
            ("beta".to_string(), rand_tensor(&[3], &mut rng)),
        ];
        let report = finite_diff_check(
            |tape, vars| {
                let y = tape.layer_norm(vars[0], vars[1], vars[2], 1e-5)?;
                let a = tape.gelu(y)?;
                let m = tape.mean_over_group(a)?;
                let lv = tape.leaf(labels.clone(), false);
                tape.bce_with_logits(m, lv)
            },
            &params,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "chain trial {}: {}", seed_tag, report);
    }
}

#[test]
fn finite_diff_layer_norm_near_constant() {
    // variance ~1e-8 with eps 1e-5; ill-conditioned, looser tolerance
    let mut rng = derive_rng(99, 1);
    let base = 0.3;
    let x = Tensor::from_vec(
        &[4],
        (0..4).map(|_| base + rng.random_range(-1e-4..1e-4)).collect(),
    )
    .unwrap();
    let params = vec![
        ("x".to_string(), x),
        ("gamma".to_string(), rand_tensor(&[4], &mut rng)),
        ("beta".to_string(), rand_tensor(&[4], &mut rng)),
    ];
    let report = finite_diff_check(
        |tape, vars| {
            let y = tape.layer_norm(vars[0], vars[1], vars[2], 1e-5)?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        },
        &params,
        1e-6,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{}", report);
}

#[test]
fn gradients_accumulate_into_shared_inputs() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[2], &[1.0, 2.0]), true);
    let a = tape.residual_add(x, x).unwrap();
    let l = tape.sum(a).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0]);
}
