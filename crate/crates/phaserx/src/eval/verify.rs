//! Runtime verification suites: executable forms of each module's
//! invariants, runnable from the CLI (`phaserx verify <suite>`) and reused
//! by the acceptance tests. Every check is deterministic for a fixed seed.

use rand::Rng;

use crate::autodiff::{finite_diff_check, Tape, Tensor};
use crate::error::{Error, Result};
use crate::groups::{
    circulant_from_kernel, cyclic_shift, rotate_grid, roots_of_unity, verify_theorem1_converse,
    verify_theorem1_forward, ComplexGrid,
};
use crate::phy::stats::{ber_standard_error, ks_two_sample_pass, qpsk_awgn_ber};
use crate::phy::{
    ls_estimate, make_constellation, sample_channel, ChannelModel, ConstellationKind,
    ResourceGridSpec,
};
use crate::real::Real;
use crate::receiver::{
    build_input_features, group_kernel_param_count, infer, input_channels_for, param_count,
    param_count_breakdown, ModelParams, ReceiverConfig, StageConfig,
};
use crate::rng::{derive_rng, derive_rng2};

use super::{run_baselines, run_sweep, GridDecoder, PerfectCsi, StopRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Groups,
    Autodiff,
    Phy,
    Receiver,
    All,
}

impl Suite {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "groups" => Ok(Suite::Groups),
            "autodiff" => Ok(Suite::Autodiff),
            "phy" => Ok(Suite::Phy),
            "receiver" => Ok(Suite::Receiver),
            "all" => Ok(Suite::All),
            other => Err(Error::InvalidArgument(format!("unknown suite {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(id: &str, passed: bool, detail: String) -> Self {
        CheckResult { id: id.to_string(), passed, detail }
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    match suite {
        Suite::Groups => groups_suite(seed, &mut results)?,
        Suite::Autodiff => autodiff_suite(seed, &mut results)?,
        Suite::Phy => phy_suite(seed, &mut results)?,
        Suite::Receiver => receiver_suite(seed, &mut results)?,
        Suite::All => {
            groups_suite(seed, &mut results)?;
            autodiff_suite(seed, &mut results)?;
            phy_suite(seed, &mut results)?;
            receiver_suite(seed, &mut results)?;
        }
    }
    Ok(results)
}

fn random_grid<R: Rng>(a: usize, f: usize, t: usize, rng: &mut R) -> ComplexGrid {
    ComplexGrid::from_fn(a, f, t, |_, _, _| {
        num_complex::Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

fn groups_suite(seed: u64, out: &mut Vec<CheckResult>) -> Result<()> {
    // group axioms
    let mut worst: f64 = 0.0;
    for n in 1..=16 {
        let g = roots_of_unity(n)?;
        worst = worst.max((g.root(0) - num_complex::Complex64::new(1.0, 0.0)).norm());
        for k in 0..n {
            worst = worst.max((g.root(k).norm() - 1.0).abs());
            for j in 0..n {
                worst = worst.max((g.root(j) * g.root(k) - g.root((j + k) % n)).norm());
            }
        }
    }
    out.push(CheckResult::new(
        "groups.axioms",
        worst <= 1e-12,
        format!("max deviation {worst:.3e} over n in 1..16"),
    ));

    // lifting equivariance
    let mut rng = derive_rng(seed, 1);
    let mut worst: f64 = 0.0;
    for n in [2usize, 3, 5, 8, 9] {
        let g = roots_of_unity(n)?;
        let x = random_grid(2, 4, 5, &mut rng);
        let lifted = crate::groups::lift(&x, &g);
        for m in 0..n {
            let rotated = rotate_grid(&x, g.root(m))?;
            let lifted_rot = crate::groups::lift(&rotated, &g);
            for (k, slice) in lifted_rot.iter().enumerate() {
                worst = worst.max(slice.max_abs_diff(&lifted[(k + m) % n]));
            }
        }
    }
    out.push(CheckResult::new(
        "groups.lifting_equivariance",
        worst <= 1e-12,
        format!("max slice deviation {worst:.3e}"),
    ));

    // circulant matrix multiplication agrees with circular convolution
    let mut worst: f64 = 0.0;
    for n in 1..=16 {
        let s: Vec<num_complex::Complex64> = (0..n)
            .map(|_| num_complex::Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let psi: Vec<num_complex::Complex64> = (0..n)
            .map(|_| num_complex::Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let a = circulant_from_kernel(&psi);
        let by_mat = crate::groups::mat_vec(&a, &s);
        let by_conv = crate::groups::circular_conv(&s, &psi);
        for (x, y) in by_mat.iter().zip(by_conv.iter()) {
            worst = worst.max((x - y).norm());
        }
    }
    out.push(CheckResult::new(
        "groups.circulant_equals_conv",
        worst <= 1e-12,
        format!("max deviation {worst:.3e} for n <= 16"),
    ));

    // shift-equivariance holds iff circulant: both directions
    let mut fwd_worst: f64 = 0.0;
    let mut all_pass = true;
    for n in 2..=9 {
        let rep = verify_theorem1_forward(n, 100, &mut rng)?;
        fwd_worst = fwd_worst.max(rep.max_deviation);
        all_pass &= rep.passed;
    }
    out.push(CheckResult::new(
        "groups.shift_equivariance_forward",
        all_pass,
        format!("n in 2..9, 100 trials each, max deviation {fwd_worst:.3e} (tol 1e-12)"),
    ));

    let mut conv_worst: f64 = 0.0;
    let mut all_pass = true;
    for n in 2..=9 {
        let rep = verify_theorem1_converse(n, 100, &mut rng)?;
        conv_worst = conv_worst.max(rep.max_commutator.max(rep.max_circulant_deviation));
        all_pass &= rep.passed;
    }
    out.push(CheckResult::new(
        "groups.shift_equivariance_converse",
        all_pass,
        format!("n in 2..9, 100 trials each, max deviation {conv_worst:.3e} (tol 1e-10)"),
    ));
    Ok(())
}

fn autodiff_suite(seed: u64, out: &mut Vec<CheckResult>) -> Result<()> {
    let mut rng = derive_rng(seed, 2);

    // finite differences across the op vocabulary
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x: Tensor<f64> = rand_tensor(&[5, 2, 3, 3], &mut rng);
        let labels = Tensor::from_vec(
            &[2, 3, 3],
            (0..18).map(|_| f64::from(rng.random_range(0..2u8))).collect(),
        )?;
        let params = vec![
            ("x".to_string(), x),
            ("psi".to_string(), rand_tensor(&[3, 3], &mut rng)),
            ("k".to_string(), rand_tensor(&[3, 3, 3], &mut rng)),
            ("gamma".to_string(), rand_tensor(&[3], &mut rng)),
            ("beta".to_string(), rand_tensor(&[3], &mut rng)),
            ("w".to_string(), rand_tensor(&[3, 3], &mut rng)),
            ("b".to_string(), rand_tensor(&[3], &mut rng)),
        ];
        let report = finite_diff_check(
            |tape, vars| {
                let h = tape.circular_group_conv(vars[0], vars[1])?;
                let h = tape.depthwise_conv_ft(h, vars[2], (1, 1))?;
                let h = tape.layer_norm(h, vars[3], vars[4], 1e-5)?;
                let h = tape.pointwise_linear(h, vars[5], vars[6])?;
                let h = tape.gelu(h)?;
                let m = tape.mean_over_group(h)?;
                let lv = tape.leaf(labels.clone(), false);
                tape.bce_with_logits(m, lv)
            },
            &params,
            1e-6,
            1e-5,
        )?;
        worst = worst.max(report.max_rel_err());
    }
    out.push(CheckResult::new(
        "autodiff.finite_diff_ops",
        worst < 1e-5,
        format!("10 random instances, max relative error {worst:.3e} (tol 1e-5)"),
    ));

    // shift equivariance of the group convolution, exact-ish in f64
    let mut worst64: f64 = 0.0;
    let mut worst32: f64 = 0.0;
    for n in 2..=9usize {
        for kg in [1, 2, n] {
            let shape = [n, 2, 2, 2];
            let x = rand_tensor(&shape, &mut rng);
            let psi = rand_tensor(&[2, kg], &mut rng);
            for m in 0..n as i64 {
                worst64 = worst64.max(groupconv_shift_dev::<f64>(&x, &psi, &shape, m));
                let x32 = Tensor::<f32>::from_f64(&shape, x.data())?;
                let p32 = Tensor::<f32>::from_f64(&[2, kg], psi.data())?;
                worst32 = worst32.max(groupconv_shift_dev::<f32>(&x32, &p32, &shape, m));
            }
        }
    }
    out.push(CheckResult::new(
        "autodiff.groupconv_shift_equivariance",
        worst64 <= 1e-12 && worst32 <= 1e-5,
        format!("max deviation f64 {worst64:.3e} (tol 1e-12), f32 {worst32:.3e} (tol 1e-5)"),
    ));

    // full-length group conv equals the circulant matrix route
    let mut worst: f64 = 0.0;
    for n in 2..=9usize {
        let x = rand_tensor(&[n, 1, 1, 1], &mut rng);
        let psi = rand_tensor(&[1, n], &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let kv = tape.leaf(psi.clone(), false);
        let y = tape.circular_group_conv(xv, kv)?;
        let a = circulant_from_kernel(psi.data());
        for (i, row) in a.iter().enumerate() {
            let expect: f64 = row.iter().zip(x.data().iter()).map(|(m, v)| m * v).sum();
            worst = worst.max((tape.value(y).data()[i] - expect).abs());
        }
    }
    out.push(CheckResult::new(
        "autodiff.groupconv_equals_circulant",
        worst <= 1e-12,
        format!("max deviation {worst:.3e} (tol 1e-12)"),
    ));

    // mean over the group axis is shift invariant
    let mut worst: f64 = 0.0;
    for n in 2..=9usize {
        let shape = [n, 2, 3, 2];
        let x = rand_tensor(&shape, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let base = tape.mean_over_group(xv)?;
        for m in 0..n as i64 {
            let shifted = Tensor::from_vec(&shape, cyclic_shift(x.data(), &shape, 0, m))?;
            let sv = tape.leaf(shifted, false);
            let y = tape.mean_over_group(sv)?;
            worst = worst.max(tape.value(y).max_abs_diff(tape.value(base)));
        }
    }
    out.push(CheckResult::new(
        "autodiff.mean_shift_invariance",
        worst <= 1e-12,
        format!("max deviation {worst:.3e} (tol 1e-12)"),
    ));

    // loss stays finite and non-negative for extreme logits
    let mut ok = true;
    let mut tape: Tape<f64> = Tape::new();
    for &z in &[-1e6, -3.3e4, -1.0, 0.0, 2.5, 7.7e5, 1e6] {
        let zv = tape.leaf(Tensor::from_vec(&[2], vec![z, -z])?, false);
        let yv = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 0.0])?, false);
        let l = tape.bce_with_logits(zv, yv)?;
        let v = tape.value(l).data()[0];
        ok &= v.is_finite() && v >= 0.0;
    }
    out.push(CheckResult::new(
        "autodiff.bce_finite",
        ok,
        "finite, non-negative loss for |logit| <= 1e6".to_string(),
    ));
    Ok(())
}

fn rand_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn groupconv_shift_dev<F: Real>(x: &Tensor<F>, psi: &Tensor<F>, shape: &[usize], m: i64) -> f64 {
    let mut tape: Tape<F> = Tape::new();
    let xv = tape.leaf(x.clone(), false);
    let kv = tape.leaf(psi.clone(), false);
    let y = tape.circular_group_conv(xv, kv).unwrap();
    let shifted = Tensor::from_vec(shape, cyclic_shift(x.data(), shape, 0, m)).unwrap();
    let sv = tape.leaf(shifted, false);
    let ys = tape.circular_group_conv(sv, kv).unwrap();
    let expect = cyclic_shift(tape.value(y).data(), shape, 0, m);
    tape.value(ys)
        .data()
        .iter()
        .zip(expect.iter())
        .map(|(a, b)| (*a - *b).abs().as_f64())
        .fold(0.0, f64::max)
}

/// Number of test bits used by the analytic BER checks.
pub const BER_ORACLE_MIN_BITS: u64 = 1_000_000;

/// Analytic BER comparison: perfect-CSI QPSK over a single-antenna AWGN
/// channel against `Q(sqrt(2 Eb/N0))` at 0, 4 and 8 dB, three binomial
/// standard errors at a million-plus bits.
pub fn qpsk_awgn_oracle_check(seed: u64) -> Result<Vec<CheckResult>> {
    let spec = ResourceGridSpec::new(
        64,
        14,
        vec![2, 11],
        1,
        make_constellation(ConstellationKind::Qpsk),
    )?;
    let stop = StopRule::with_min_bits(&spec, BER_ORACLE_MIN_BITS);
    let records = run_sweep(
        &PerfectCsi,
        &[0.0, 4.0, 8.0],
        &spec,
        &ChannelModel::AwgnOnly,
        stop,
        seed,
    )?;
    let mut results = Vec::new();
    for r in &records {
        let target = qpsk_awgn_ber(r.ebno_db);
        let se = ber_standard_error(target, r.bits_tested as usize);
        let dev = (r.ber() - target).abs();
        results.push(CheckResult::new(
            &format!("phy.qpsk_awgn_ber_{}db", r.ebno_db),
            dev <= 3.0 * se && r.bits_tested >= BER_ORACLE_MIN_BITS,
            format!(
                "measured {:.4e} vs Q-function {:.4e} over {} bits ({:+.2} standard errors)",
                r.ber(),
                target,
                r.bits_tested,
                (r.ber() - target) / se
            ),
        ));
    }
    Ok(results)
}

fn phy_suite(seed: u64, out: &mut Vec<CheckResult>) -> Result<()> {
    out.extend(qpsk_awgn_oracle_check(seed)?);

    // LS-estimated reception is never better than perfect CSI (paired, 3
    // standard errors of slack).
    let spec = ResourceGridSpec::default_link(make_constellation(ConstellationKind::Qpsk));
    let stop = StopRule::with_min_bits(&spec, BER_ORACLE_MIN_BITS);
    for &ebno in &[2.0, 6.0, 10.0] {
        let records =
            run_baselines(&spec, &ChannelModel::FlatRayleigh, &[ebno], stop, seed ^ 0xB0)?;
        let ls = records.iter().find(|r| r.method == "ls_maxlog").unwrap();
        let csi = records.iter().find(|r| r.method == "perfect_csi").unwrap();
        let se = ber_standard_error(csi.ber().max(1e-9), csi.bits_tested as usize);
        out.push(CheckResult::new(
            &format!("phy.ls_bounded_by_csi_{ebno}db"),
            ls.ber() + 3.0 * se >= csi.ber(),
            format!("ls {:.4e} vs perfect {:.4e} over {} bits", ls.ber(), csi.ber(), ls.bits_tested),
        ));
    }

    // degenerate line-of-sight recovers the scatter-only fading law
    let mut rng = derive_rng(seed, 3);
    let tiny = ResourceGridSpec::new(1, 1, vec![], 1, make_constellation(ConstellationKind::Qpsk))?;
    let degenerate = ChannelModel::Rician { los_magnitude: 0.0, scatter_variance: 1.0 };
    let a: Vec<f64> = (0..10_000)
        .map(|_| sample_channel(&degenerate, &tiny, 0.0, &mut rng).unwrap().h.values()[0].norm_sqr())
        .collect();
    let b: Vec<f64> = (0..10_000)
        .map(|_| {
            sample_channel(&ChannelModel::FlatRayleigh, &tiny, 0.0, &mut rng)
                .unwrap()
                .h
                .values()[0]
                .norm_sqr()
        })
        .collect();
    let pass = ks_two_sample_pass(&a, &b);
    out.push(CheckResult::new(
        "phy.rician_zero_los_is_rayleigh",
        pass,
        "two-sample KS at alpha=0.01 over 10^4 draws".to_string(),
    ));

    // global-phase invariance of the perfect-CSI pipeline decisions
    let mut rng = derive_rng(seed, 4);
    let small = ResourceGridSpec::new(8, 6, vec![1], 2, make_constellation(ConstellationKind::Qpsk))?;
    let mut ok = true;
    for _ in 0..20 {
        let (_, y, ch) = super::simulate_block(&mut rng, &small, &ChannelModel::FlatRayleigh, 6.0)?;
        let llr_base = PerfectCsi.decode(&y, &ch, &small)?;
        let z = num_complex::Complex64::from_polar(1.0, rng.random_range(-3.0..3.0));
        let ch_rot = crate::phy::ChannelRealization {
            h: rotate_grid(&ch.h, z)?,
            noise_var: ch.noise_var,
        };
        let llr_rot = PerfectCsi.decode(&rotate_grid(&y, z)?, &ch_rot, &small)?;
        for (a, b) in llr_base.iter().zip(llr_rot.iter()) {
            ok &= a.signum() == b.signum();
        }
    }
    out.push(CheckResult::new(
        "phy.joint_rotation_decisions",
        ok,
        "hard decisions identical under joint rotation of y and h".to_string(),
    ));
    Ok(())
}

fn receiver_test_spec() -> Result<ResourceGridSpec> {
    ResourceGridSpec::new(8, 14, vec![2, 11], 2, make_constellation(ConstellationKind::Qpsk))
}

fn receiver_test_config(n: usize, kg: usize) -> ReceiverConfig {
    ReceiverConfig {
        group_order: n,
        group_kernel: kg,
        stages: vec![
            StageConfig { blocks: 1, channels: 8, dilation: (1, 1) },
            StageConfig { blocks: 1, channels: 10, dilation: (2, 2) },
        ],
        ft_kernel: (3, 5),
        bottleneck_ratio: 2,
        input_channels: input_channels_for(2),
        bits_per_symbol: 2,
    }
}

fn invariance_deviation<F: Real>(
    config: &ReceiverConfig,
    spec: &ResourceGridSpec,
    seed: u64,
) -> Result<f64> {
    let group = roots_of_unity(config.group_order)?;
    let mut rng = derive_rng2(seed, config.group_order as u64, config.group_kernel as u64);
    let (_, y, _) = super::simulate_block(&mut rng, spec, &ChannelModel::FlatRayleigh, 8.0)?;
    let mut params: ModelParams<F> = ModelParams::init(config, &mut rng)?;
    params.randomize(&mut rng)?;
    let base = infer(&params, config, spec, &y, &ls_estimate(&y, spec)?)?;
    let mut worst: f64 = 0.0;
    for m in 0..config.group_order {
        let y_rot = rotate_grid(&y, group.root(m))?;
        let out = infer(&params, config, spec, &y_rot, &ls_estimate(&y_rot, spec)?)?;
        worst = worst.max(base.max_abs_diff(&out));
    }
    Ok(worst)
}

/// End-to-end rotation invariance across the configuration matrix
/// `{n in 1..9} x {k_g in {1, 2, n}}`, in both precisions, on random
/// untrained models.
pub fn invariance_matrix_check(seed: u64) -> Result<Vec<CheckResult>> {
    let spec = receiver_test_spec()?;
    let mut results = Vec::new();
    for n in 1..=9usize {
        let mut kernels = vec![1usize];
        if n >= 2 {
            kernels.push(2);
        }
        if n > 2 {
            kernels.push(n);
        }
        for kg in kernels {
            let config = receiver_test_config(n, kg);
            let dev64 = invariance_deviation::<f64>(&config, &spec, seed)?;
            let dev32 = invariance_deviation::<f32>(&config, &spec, seed)?;
            results.push(CheckResult::new(
                &format!("receiver.invariance_n{n}_kg{kg}"),
                dev64 <= 1e-9 && dev32 <= 1e-4,
                format!("max LLR deviation f64 {dev64:.3e} (tol 1e-9), f32 {dev32:.3e} (tol 1e-4)"),
            ));
        }
    }
    Ok(results)
}

fn receiver_suite(seed: u64, out: &mut Vec<CheckResult>) -> Result<()> {
    out.extend(invariance_matrix_check(seed)?);

    // the discrete approximation has a gap: a half-step rotation is not a
    // symmetry of the model
    let spec = receiver_test_spec()?;
    let config = receiver_test_config(4, 2);
    let group_err = invariance_deviation::<f64>(&config, &spec, seed ^ 0x11)?;
    let mid = num_complex::Complex64::from_polar(1.0, std::f64::consts::PI / 4.0);
    let mut rng = derive_rng(seed ^ 0x11, 40);
    let (_, y, _) = super::simulate_block(&mut rng, &spec, &ChannelModel::FlatRayleigh, 8.0)?;
    let mut params: ModelParams<f64> = ModelParams::init(&config, &mut rng)?;
    params.randomize(&mut rng)?;
    let base = infer(&params, &config, &spec, &y, &ls_estimate(&y, &spec)?)?;
    let y_mid = rotate_grid(&y, mid)?;
    let mid_err = base.max_abs_diff(&infer(&params, &config, &spec, &y_mid, &ls_estimate(&y_mid, &spec)?)?);
    out.push(CheckResult::new(
        "receiver.midpoint_rotation_gap",
        mid_err > 1e3 * group_err.max(1e-12) && mid_err > 1e-6,
        format!("group rotations deviate {group_err:.3e}, midpoint rotation {mid_err:.3e}"),
    ));

    // parameter accounting
    let c5 = ReceiverConfig::standard(5, 5, 2, 2);
    let c1 = ReceiverConfig::standard(1, 1, 2, 2);
    let n5 = param_count(&c5);
    let n1 = param_count(&c1);
    let within = |count: usize, anchor: f64| (count as f64 - anchor).abs() / anchor < 0.15;
    let delta_ok = n5 - n1 == group_kernel_param_count(&c5) - group_kernel_param_count(&c1);
    let mut rng = derive_rng(seed, 41);
    let enumerated = ModelParams::<f64>::init(&c5, &mut rng)?.total_params();
    let breakdown: usize = param_count_breakdown(&c5).iter().map(|(_, c)| c).sum();
    out.push(CheckResult::new(
        "receiver.param_count_anchors",
        within(n5, 169_000.0)
            && within(n1, 167_000.0)
            && delta_ok
            && enumerated == n5
            && breakdown == n5,
        format!("order-5 {n5}, order-1 {n1}, delta {} (group kernels only)", n5 - n1),
    ));

    // kernel-size-1 ablation: only the head mixes group elements, and the
    // count matches the order-1 model exactly
    let ablated = ReceiverConfig::standard(4, 1, 2, 2);
    let count_match = param_count(&ablated) == param_count(&c1);
    let small_ablated = receiver_test_config(4, 1);
    let dev = invariance_deviation::<f64>(&small_ablated, &spec, seed ^ 0x22)?;
    out.push(CheckResult::new(
        "receiver.kernel_one_ablation",
        count_match && dev <= 1e-9,
        format!("count {} == {}, invariance deviation {dev:.3e}", param_count(&ablated), param_count(&c1)),
    ));
    Ok(())
}

/// Gradient suite shared by `verify autodiff` callers that want the tiny
/// end-to-end receiver check as well.
pub fn tiny_receiver_gradient_check(seed: u64) -> Result<CheckResult> {
    let spec = ResourceGridSpec::new(4, 6, vec![1, 4], 2, make_constellation(ConstellationKind::Qpsk))?;
    let config = ReceiverConfig {
        group_order: 3,
        group_kernel: 2,
        stages: vec![StageConfig { blocks: 1, channels: 4, dilation: (1, 1) }],
        ft_kernel: (3, 3),
        bottleneck_ratio: 2,
        input_channels: input_channels_for(2),
        bits_per_symbol: 2,
    };
    let mut rng = derive_rng(seed, 42);
    let mut params: ModelParams<f64> = ModelParams::init(&config, &mut rng)?;
    params.randomize(&mut rng)?;
    let (_, y, _) = super::simulate_block(&mut rng, &spec, &ChannelModel::FlatRayleigh, 8.0)?;
    let group = roots_of_unity(3)?;
    let features = build_input_features::<f64>(&y, &ls_estimate(&y, &spec)?, &spec, &group)?;
    let labels = Tensor::from_vec(
        &[4, 4, 2],
        (0..32).map(|_| f64::from(rng.random_range(0..2u8))).collect(),
    )?;
    let named: Vec<(String, Tensor<f64>)> =
        params.iter().map(|p| (p.name.clone(), p.tensor.clone())).collect();
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let report = finite_diff_check(
        |tape, vars| {
            let mut map = std::collections::HashMap::new();
            for (name, &v) in names.iter().zip(vars.iter()) {
                map.insert(name.clone(), v);
            }
            let taped = crate::receiver::taped_params_from_map(map, vars.to_vec());
            let fv = tape.leaf(features.clone(), false);
            let out = crate::receiver::forward(tape, fv, &taped, &config, &spec)?;
            let lv = tape.leaf(labels.clone(), false);
            tape.bce_with_logits(out, lv)
        },
        &named,
        1e-6,
        1e-5,
    )?;
    Ok(CheckResult::new(
        "receiver.tiny_gradient_flow",
        report.passed(),
        format!("max relative error {:.3e} (tol 1e-5)", report.max_rel_err()),
    ))
}
