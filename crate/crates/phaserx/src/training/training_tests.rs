use num_complex::Complex64;

use crate::autodiff::Tensor;
use crate::phy::{count_errors, make_constellation, maxlog_demap, mrc_equalize, ConstellationKind};
use crate::receiver::{infer, input_channels_for, StageConfig};
use crate::rng::derive_rng;

use super::*;

fn tiny_run(channel: ChannelModel, seed: u64, steps: usize) -> RunConfig {
    RunConfig {
        link: LinkConfig {
            subcarriers: 4,
            symbols: 6,
            pilot_symbol_indices: vec![1, 4],
            rx_antennas: 2,
            constellation: ConstellationKind::Qpsk,
        },
        receiver: ReceiverConfig {
            group_order: 2,
            group_kernel: 2,
            stages: vec![StageConfig { blocks: 1, channels: 6, dilation: (1, 1) }],
            ft_kernel: (3, 3),
            bottleneck_ratio: 2,
            input_channels: input_channels_for(2),
            bits_per_symbol: 2,
        },
        train: TrainConfig {
            steps,
            batch_size: 4,
            ebno_range_db: (8.0, 12.0),
            channel,
            lr: 1e-3,
            lr_milestones: default_milestones(steps),
            lr_factor: 0.1,
            weight_decay: 0.01,
            seed,
            random_global_phase: false,
        },
    }
}

#[test]
fn batches_are_deterministic() {
    let run = tiny_run(ChannelModel::FlatRayleigh, 3, 10);
    let spec = run.link.to_spec().unwrap();
    let group = roots_of_unity(2).unwrap();
    let a = generate_batch::<f64>(3, 7, 4, &run.train.channel, &spec, &group, (0.0, 12.0), true)
        .unwrap();
    let b = generate_batch::<f64>(3, 7, 4, &run.train.channel, &spec, &group, (0.0, 12.0), true)
        .unwrap();
    for (x, y) in a.features.iter().zip(b.features.iter()) {
        assert_eq!(x.data(), y.data());
    }
    assert_eq!(a.bits, b.bits);
    // different batch index gives different data
    let c = generate_batch::<f64>(3, 8, 4, &run.train.channel, &spec, &group, (0.0, 12.0), true)
        .unwrap();
    assert_ne!(a.bits, c.bits);
    // mask marks exactly the non-pilot columns
    assert_eq!(a.data_mask, vec![true, false, true, true, false, true]);
}

#[test]
fn noiseless_pipeline_roundtrip() {
    // No global phase, unity channel, essentially no noise: LS-equalized
    // hard decisions recover the transmitted bits.
    let run = tiny_run(ChannelModel::AwgnOnly, 5, 10);
    let spec = run.link.to_spec().unwrap();
    let group = roots_of_unity(1).unwrap();
    let mut rng = derive_rng(5, 99);
    let ex: Example<f64> =
        generate_example(&mut rng, &ChannelModel::AwgnOnly, &spec, &group, (200.0, 200.0), false)
            .unwrap();
    let ls = crate::phy::ls_estimate(&ex.received, &spec).unwrap();
    let n0 = ebno_to_noise_var(200.0, &spec.constellation);
    let (xhat, nv) = mrc_equalize(&ex.received, &ls, n0).unwrap();
    let data = crate::phy::extract_data(&xhat, &spec);
    let data_nv: Vec<f64> = {
        let t_n = spec.symbols;
        let mut out = Vec::new();
        for f in 0..spec.subcarriers {
            for &t in &spec.data_symbol_indices() {
                out.push(nv[f * t_n + t]);
            }
        }
        out
    };
    let llrs = maxlog_demap(&data, &data_nv, &spec.constellation).unwrap();
    let (bits, errs) = count_errors(&llrs, &ex.bits).unwrap();
    assert_eq!(bits, ex.bits.len());
    assert_eq!(errs, 0);
}

#[test]
fn random_phase_offsets_average_out() {
    // Arithmetic mean of the principal-value phase offset observed at a
    // pilot position, over many draws with the global phase enabled.
    let run = tiny_run(ChannelModel::AwgnOnly, 6, 10);
    let spec = run.link.to_spec().unwrap();
    let group = roots_of_unity(1).unwrap();
    let mut rng = derive_rng(6, 100);
    let n = 10_000;
    let mut sum = 0.0;
    for _ in 0..n {
        let ex: Example<f64> = generate_example(
            &mut rng,
            &ChannelModel::AwgnOnly,
            &spec,
            &group,
            (30.0, 30.0),
            true,
        )
        .unwrap();
        let observed = ex.received.get(0, 0, spec.pilot_symbol_indices[0]);
        let offset = (observed / spec.pilot_value(0, 0)).arg();
        sum += offset;
    }
    let mean = sum / n as f64;
    assert!(mean.abs() < 0.05, "mean offset {}", mean);
}

#[test]
fn adamw_first_step_closed_form() {
    let config = ReceiverConfig {
        group_order: 1,
        group_kernel: 1,
        stages: vec![StageConfig { blocks: 1, channels: 1, dilation: (1, 1) }],
        ft_kernel: (1, 1),
        bottleneck_ratio: 1,
        input_channels: 1,
        bits_per_symbol: 1,
    };
    let mut rng = derive_rng(7, 0);
    let mut params: ModelParams<f64> = ModelParams::init(&config, &mut rng).unwrap();
    // zero everything, then apply unit gradient to every element
    for p in params.iter_mut() {
        p.tensor = Tensor::zeros(p.tensor.shape());
    }
    let grads: Vec<Tensor<f64>> = params
        .iter()
        .map(|p| {
            let mut t = Tensor::zeros(p.tensor.shape());
            t.data_mut().fill(1.0);
            t
        })
        .collect();
    adamw_step(&mut params, &grads, 1, 1e-3, 0.0).unwrap();
    for p in params.iter() {
        for &w in p.tensor.data() {
            assert!((w + 1e-3).abs() < 1e-9, "{}: {}", p.name, w);
        }
    }
}

#[test]
fn adamw_zero_grad_and_pure_decay() {
    let config = ReceiverConfig {
        group_order: 1,
        group_kernel: 1,
        stages: vec![StageConfig { blocks: 1, channels: 1, dilation: (1, 1) }],
        ft_kernel: (1, 1),
        bottleneck_ratio: 1,
        input_channels: 1,
        bits_per_symbol: 1,
    };
    let mut rng = derive_rng(7, 1);
    let mut params: ModelParams<f64> = ModelParams::init(&config, &mut rng).unwrap();
    for p in params.iter_mut() {
        let mut t = Tensor::zeros(p.tensor.shape());
        t.data_mut().fill(1.0);
        p.tensor = t;
    }
    let zeros: Vec<Tensor<f64>> =
        params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
    // no decay: parameters unchanged
    let snapshot: Vec<Vec<f64>> = params.iter().map(|p| p.tensor.data().to_vec()).collect();
    adamw_step(&mut params, &zeros, 1, 1e-3, 0.0).unwrap();
    for (p, before) in params.iter().zip(snapshot.iter()) {
        assert_eq!(p.tensor.data(), &before[..]);
    }
    // pure decay: 1 -> 1 - lr*wd
    adamw_step(&mut params, &zeros, 2, 1e-3, 0.01).unwrap();
    for p in params.iter() {
        for &w in p.tensor.data() {
            assert!((w - 0.99999).abs() < 1e-12, "{}", w);
        }
    }
}

#[test]
fn adamw_rejects_non_finite_grads() {
    let config = ReceiverConfig {
        group_order: 1,
        group_kernel: 1,
        stages: vec![StageConfig { blocks: 1, channels: 1, dilation: (1, 1) }],
        ft_kernel: (1, 1),
        bottleneck_ratio: 1,
        input_channels: 1,
        bits_per_symbol: 1,
    };
    let mut rng = derive_rng(7, 2);
    let mut params: ModelParams<f64> = ModelParams::init(&config, &mut rng).unwrap();
    let mut grads: Vec<Tensor<f64>> =
        params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
    grads[0].data_mut()[0] = f64::NAN;
    assert!(adamw_step(&mut params, &grads, 1, 1e-3, 0.0).is_err());
}

#[test]
fn lr_schedule_reference_points() {
    let mut cfg = tiny_run(ChannelModel::AwgnOnly, 0, 150).train;
    cfg.lr_milestones = vec![100, 125];
    assert!((lr_at(50, &cfg) - 1e-3).abs() < 1e-15);
    assert!((lr_at(110, &cfg) - 1e-4).abs() < 1e-15);
    assert!((lr_at(130, &cfg) - 1e-5).abs() < 1e-15);
}

#[test]
fn default_milestones_scale() {
    assert_eq!(default_milestones(150), vec![100, 125]);
    assert_eq!(default_milestones(5000), vec![3333, 4166]);
}

#[test]
fn step_zero_loss_is_ln2_and_order_independent() {
    // Zero-initialized heads emit zero logits, so both the order-2 model
    // and its order-1 twin start from ln(2).
    let mut run1 = tiny_run(ChannelModel::FlatRayleigh, 11, 1);
    run1.train.random_global_phase = true;
    let mut run2 = run1.clone();
    run2.receiver.group_order = 1;
    run2.receiver.group_kernel = 1;
    let t1 = train::<f64>(&run1).unwrap();
    let t2 = train::<f64>(&run2).unwrap();
    assert!((t1.loss_trace[0] - std::f64::consts::LN_2).abs() < 1e-9);
    assert!((t2.loss_trace[0] - std::f64::consts::LN_2).abs() < 1e-9);
}

#[test]
fn training_is_seed_deterministic() {
    let run = tiny_run(ChannelModel::FlatRayleigh, 13, 5);
    let a = train::<f64>(&run).unwrap();
    let b = train::<f64>(&run).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    for (pa, pb) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(pa.tensor.data(), pb.tensor.data());
    }
}

#[test]
fn moments_and_params_stay_finite() {
    let run = tiny_run(ChannelModel::FlatRayleigh, 17, 8);
    let out = train::<f64>(&run).unwrap();
    for p in out.params.iter() {
        assert!(p.tensor.is_finite());
        assert!(p.v.iter().all(|&v| v >= 0.0), "second moments non-negative");
    }
}

#[test]
fn sanity_run_reduces_loss_tenfold() {
    // Easy channel, high SNR: a short run must cut the loss by 10x. Adam
    // moves each weight by at most ~lr per step, so a 200-step run needs a
    // learning rate large enough for the head to reach saturating logits.
    let mut run = tiny_run(ChannelModel::AwgnOnly, 19, 200);
    run.train.ebno_range_db = (14.0, 20.0);
    run.train.batch_size = 8;
    run.train.lr = 3e-2;
    run.train.lr_milestones = vec![];
    let out = train::<f64>(&run).unwrap();
    let initial = out.loss_trace[0];
    let last = *out.loss_trace.last().unwrap();
    assert!(
        last < 0.1 * initial,
        "loss {} -> {} did not drop 10x",
        initial,
        last
    );
}

#[test]
fn rotated_batch_has_equal_loss_for_equivariant_model() {
    let run = tiny_run(ChannelModel::FlatRayleigh, 23, 1);
    let spec = run.link.to_spec().unwrap();
    let n = run.receiver.group_order;
    let group = roots_of_unity(n).unwrap();
    let mut rng = derive_rng(23, 1000);
    let mut params: ModelParams<f32> = ModelParams::init(&run.receiver, &mut rng).unwrap();
    params.randomize(&mut rng).unwrap();

    let mut rng_data = derive_rng(23, 1001);
    let ex: Example<f32> = generate_example(
        &mut rng_data,
        &ChannelModel::FlatRayleigh,
        &spec,
        &group,
        (10.0, 10.0),
        false,
    )
    .unwrap();
    let batch = TrainBatch {
        features: vec![ex.features.clone()],
        targets: vec![ex.targets.clone()],
        bits: vec![ex.bits.clone()],
        data_mask: vec![],
    };
    let base = batch_loss(&params, &run.receiver, &spec, &batch).unwrap();
    for m in 0..n {
        let y_rot = rotate_grid(&ex.received, group.root(m)).unwrap();
        let ls = crate::phy::ls_estimate(&y_rot, &spec).unwrap();
        let feat = crate::receiver::build_input_features::<f32>(&y_rot, &ls, &spec, &group).unwrap();
        let rotated = TrainBatch {
            features: vec![feat],
            targets: vec![ex.targets.clone()],
            bits: vec![ex.bits.clone()],
            data_mask: vec![],
        };
        let rot = batch_loss(&params, &run.receiver, &spec, &rotated).unwrap();
        assert!((base - rot).abs() <= 1e-4, "m={} {} vs {}", m, base, rot);
    }
}

#[test]
fn divergence_detector_reports() {
    // A huge learning rate reliably blows the loss up; accept either the
    // runaway-loss report or a non-finite abort.
    let mut run = tiny_run(ChannelModel::FlatRayleigh, 29, 400);
    run.train.lr = 500.0;
    run.train.lr_milestones = vec![];
    match train::<f32>(&run) {
        Err(Error::Diverged(msg)) => {
            assert!(!msg.is_empty());
        }
        Err(Error::NonFinite(_)) => {}
        Ok(out) => panic!(
            "expected divergence, got final loss {}",
            out.loss_trace.last().unwrap()
        ),
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn checkpoint_roundtrip_bitexact() {
    let run = tiny_run(ChannelModel::FlatRayleigh, 31, 3);
    let out = train::<f64>(&run).unwrap();
    let ckpt = Checkpoint {
        config_text: run.to_toml(),
        step: 3,
        master_seed: run.train.seed,
        params: out.params,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.prx");
    save_checkpoint(&path, &ckpt).unwrap();
    let loaded: Checkpoint<f64> = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.step, 3);
    assert_eq!(loaded.master_seed, run.train.seed);
    assert_eq!(loaded.config_text, ckpt.config_text);
    for (a, b) in ckpt.params.iter().zip(loaded.params.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.tensor.data(), b.tensor.data());
        assert_eq!(a.m, b.m);
        assert_eq!(a.v, b.v);
    }
    // save -> load -> save is byte identical
    let bytes1 = std::fs::read(&path).unwrap();
    let path2 = dir.path().join("model2.prx");
    save_checkpoint(&path2, &loaded).unwrap();
    let bytes2 = std::fs::read(&path2).unwrap();
    assert_eq!(bytes1, bytes2);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let run = tiny_run(ChannelModel::FlatRayleigh, 37, 1);
    let out = train::<f32>(&run).unwrap();
    let ckpt = Checkpoint {
        config_text: run.to_toml(),
        step: 1,
        master_seed: run.train.seed,
        params: out.params,
    };
    let bytes = checkpoint::encode_checkpoint(&ckpt);

    // truncation
    assert!(checkpoint::decode_checkpoint::<f32>(&bytes[..bytes.len() / 2]).is_err());
    // bad magic
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::decode_checkpoint::<f32>(&bad).is_err());
    // bad version
    let mut bad = bytes.clone();
    bad[4] = 99;
    assert!(checkpoint::decode_checkpoint::<f32>(&bad).is_err());
    // wrong precision on load
    assert!(checkpoint::decode_checkpoint::<f64>(&bytes).is_err());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let run = tiny_run(ChannelModel::FlatRayleigh, 41, 20);
    let spec = run.link.to_spec().unwrap();

    let straight = train::<f64>(&run).unwrap();

    let mut rng = derive_rng(run.train.seed, INIT_STREAM);
    let mut params = ModelParams::<f64>::init(&run.receiver, &mut rng).unwrap();
    let first_half = train_steps(&run, &spec, &mut params, 0, 10).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.prx");
    save_checkpoint(
        &path,
        &Checkpoint {
            config_text: run.to_toml(),
            step: 10,
            master_seed: run.train.seed,
            params,
        },
    )
    .unwrap();

    let mut restored: Checkpoint<f64> = load_checkpoint(&path).unwrap();
    let second_half =
        train_steps(&run, &spec, &mut restored.params, restored.step, 10).unwrap();

    let stitched: Vec<f64> = first_half.into_iter().chain(second_half).collect();
    assert_eq!(straight.loss_trace, stitched);
    for (a, b) in straight.params.iter().zip(restored.params.iter()) {
        assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
        assert_eq!(a.m, b.m);
        assert_eq!(a.v, b.v);
    }
}

#[test]
fn run_config_toml_roundtrip() {
    let run = tiny_run(
        ChannelModel::Rician { los_magnitude: 1.0, scatter_variance: 0.5 },
        43,
        10,
    );
    let text = run.to_toml();
    let parsed = RunConfig::from_toml(&text).unwrap();
    assert_eq!(run, parsed);
    assert!(RunConfig::from_toml("not a config").is_err());
}

#[test]
fn trained_model_beats_fresh_model_on_easy_channel() {
    // End-to-end: 200 steps on AWGN must push BER well below the fresh
    // model's coin-flip output.
    let mut run = tiny_run(ChannelModel::AwgnOnly, 47, 200);
    run.train.ebno_range_db = (14.0, 20.0);
    run.train.batch_size = 8;
    let spec = run.link.to_spec().unwrap();
    let group = roots_of_unity(run.receiver.group_order).unwrap();
    let out = train::<f64>(&run).unwrap();
    let mut errors = 0usize;
    let mut total = 0usize;
    let mut rng = derive_rng(47, 5000);
    for _ in 0..50 {
        let ex: Example<f64> =
            generate_example(&mut rng, &ChannelModel::AwgnOnly, &spec, &group, (16.0, 16.0), false)
                .unwrap();
        let llr = infer(&out.params, &run.receiver, &spec, &ex.received, &ex.ls).unwrap();
        let (b, e) = count_errors(&llr.to_f64_vec(), &ex.bits).unwrap();
        errors += e;
        total += b;
    }
    let ber = errors as f64 / total as f64;
    assert!(ber < 0.05, "trained BER {}", ber);
}

#[allow(unused_imports)]
use num_complex::Complex64 as _KeepImport;
