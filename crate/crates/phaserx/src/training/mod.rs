//! Data generation, loss, optimizer, schedule and checkpointing.
//!
//! Determinism contract: every random decision derives from the master seed
//! and structural indices (training step, batch element), never from shared
//! mutable RNG state, so runs reproduce exactly regardless of how many
//! worker threads participate.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::groups::{roots_of_unity, rotate_grid, ComplexGrid, CyclicGroup};
use crate::phy::{
    apply_channel, assemble_grid, ebno_to_noise_var, ls_estimate, map_bits, sample_channel,
    ChannelModel, ConstellationKind, ResourceGridSpec,
};
use crate::real::Real;
use crate::receiver::{
    build_input_features, forward, register_params, ModelParams, ReceiverConfig,
};
use crate::rng::{derive_rng, derive_rng2};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Stream id reserved for parameter initialization.
const INIT_STREAM: u64 = 0xFFFF_FFFF_0000_0001;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Per-element Eb/N0 sampled uniformly in dB over this inclusive range.
    pub ebno_range_db: (f64, f64),
    pub channel: ChannelModel,
    /// Initial learning rate; the schedule multiplies by `lr_factor` at
    /// each milestone step.
    pub lr: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_factor: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Rotate each received grid by a fresh uniform global phase before
    /// feature construction.
    pub random_global_phase: bool,
}

/// Milestones at 2/3 and 5/6 of the run, scaled from the reference
/// schedule of a 150-step run stepping down at 100 and 125. Degenerate
/// values collapse for very short runs.
pub fn default_milestones(steps: usize) -> Vec<usize> {
    let mut m = vec![steps * 2 / 3, steps * 5 / 6];
    m.retain(|&v| v > 0);
    m.dedup();
    m
}

impl TrainConfig {
    pub fn desk_default(channel: ChannelModel, seed: u64) -> Self {
        let steps = 5000;
        TrainConfig {
            steps,
            batch_size: 16,
            ebno_range_db: (0.0, 12.0),
            channel,
            lr: 1e-3,
            lr_milestones: default_milestones(steps),
            lr_factor: 0.1,
            weight_decay: 0.01,
            seed,
            random_global_phase: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !self.lr_milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("milestones must be strictly increasing".into()));
        }
        if self.lr_factor <= 0.0 || self.lr_factor >= 1.0 {
            return Err(Error::Config("lr factor must be in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.ebno_range_db.0 > self.ebno_range_db.1 {
            return Err(Error::Config("ebno range must be ordered".into()));
        }
        self.channel.validate()
    }
}

/// Piecewise-constant learning rate at a step.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    let drops = config.lr_milestones.iter().filter(|&&m| m <= step).count();
    config.lr * config.lr_factor.powi(drops as i32)
}

/// Link geometry in config-file form.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinkConfig {
    pub subcarriers: usize,
    pub symbols: usize,
    pub pilot_symbol_indices: Vec<usize>,
    pub rx_antennas: usize,
    pub constellation: ConstellationKind,
}

impl LinkConfig {
    pub fn default_link() -> Self {
        LinkConfig {
            subcarriers: 64,
            symbols: 14,
            pilot_symbol_indices: vec![2, 11],
            rx_antennas: 2,
            constellation: ConstellationKind::Qpsk,
        }
    }

    pub fn to_spec(&self) -> Result<ResourceGridSpec> {
        ResourceGridSpec::new(
            self.subcarriers,
            self.symbols,
            self.pilot_symbol_indices.clone(),
            self.rx_antennas,
            crate::phy::make_constellation(self.constellation),
        )
    }
}

/// Complete description of a training run; serializes to the TOML config
/// file format accepted by the CLI.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub link: LinkConfig,
    pub receiver: ReceiverConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config file: {e}")))
    }
}

/// One simulated training example with its intermediate products.
pub struct Example<F> {
    pub received: ComplexGrid,
    pub ls: ComplexGrid,
    pub features: Tensor<F>,
    /// Data bits in (f-major, t-minor, bit) order.
    pub bits: Vec<u8>,
    /// BCE targets aligned with the LLR output: the complement of each bit,
    /// because a positive LLR favors bit 0.
    pub targets: Tensor<F>,
}

/// Simulate one example: bits -> symbols -> grid -> channel -> noise ->
/// optional global phase -> LS estimate -> lifted features.
pub fn generate_example<F: Real, R: Rng>(
    rng: &mut R,
    channel: &ChannelModel,
    spec: &ResourceGridSpec,
    group: &CyclicGroup,
    ebno_range_db: (f64, f64),
    random_global_phase: bool,
) -> Result<Example<F>> {
    let ebno = if ebno_range_db.0 == ebno_range_db.1 {
        ebno_range_db.0
    } else {
        rng.random_range(ebno_range_db.0..ebno_range_db.1)
    };
    let n0 = ebno_to_noise_var(ebno, &spec.constellation);
    let bits: Vec<u8> = (0..spec.bits_per_grid()).map(|_| rng.random_range(0..2u8)).collect();
    let symbols = map_bits(&bits, &spec.constellation)?;
    let tx = assemble_grid(&symbols, spec)?;
    let ch = sample_channel(channel, spec, n0, rng)?;
    let mut y = apply_channel(&tx, &ch, rng)?;
    if random_global_phase {
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        y = rotate_grid(&y, num_complex::Complex64::from_polar(1.0, theta))?;
    }
    let ls = ls_estimate(&y, spec)?;
    let features = build_input_features::<F>(&y, &ls, spec, group)?;
    let k = spec.constellation.bits_per_symbol();
    let t_data = spec.symbols - spec.pilot_symbol_indices.len();
    let targets = Tensor::from_vec(
        &[spec.subcarriers, t_data, k],
        bits.iter().map(|&b| if b == 0 { F::one() } else { F::zero() }).collect(),
    )?;
    Ok(Example { received: y, ls, features, bits, targets })
}

/// A generated batch. The mask lists which time columns carry data; the
/// labels/targets already cover only those columns.
pub struct TrainBatch<F> {
    pub features: Vec<Tensor<F>>,
    pub targets: Vec<Tensor<F>>,
    pub bits: Vec<Vec<u8>>,
    pub data_mask: Vec<bool>,
}

/// Deterministic batch: element `e` of batch `batch_index` always sees the
/// stream derived from `(seed, batch_index, e)`.
#[allow(clippy::too_many_arguments)]
pub fn generate_batch<F: Real>(
    seed: u64,
    batch_index: u64,
    batch_size: usize,
    channel: &ChannelModel,
    spec: &ResourceGridSpec,
    group: &CyclicGroup,
    ebno_range_db: (f64, f64),
    random_global_phase: bool,
) -> Result<TrainBatch<F>> {
    let examples: Vec<Example<F>> = (0..batch_size)
        .into_par_iter()
        .map(|e| {
            let mut rng = derive_rng2(seed, batch_index, e as u64);
            generate_example(&mut rng, channel, spec, group, ebno_range_db, random_global_phase)
        })
        .collect::<Result<_>>()?;
    let data_mask = (0..spec.symbols).map(|t| !spec.is_pilot_symbol(t)).collect();
    let mut features = Vec::with_capacity(batch_size);
    let mut targets = Vec::with_capacity(batch_size);
    let mut bits = Vec::with_capacity(batch_size);
    for ex in examples {
        features.push(ex.features);
        targets.push(ex.targets);
        bits.push(ex.bits);
    }
    Ok(TrainBatch { features, targets, bits, data_mask })
}

/// One decoupled-weight-decay Adam update. `step` is 1-based for the bias
/// correction. Gradients are checked for finiteness before any state is
/// touched.
pub fn adamw_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &[Tensor<F>],
    step: usize,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "adamw_step: {} grads for {} params",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(grads.iter()) {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
        if g.shape() != p.tensor.shape() {
            return Err(Error::ShapeMismatch(format!("gradient shape for {}", p.name)));
        }
    }
    let b1 = F::from_f64(ADAM_BETA1);
    let b2 = F::from_f64(ADAM_BETA2);
    let eps = F::from_f64(ADAM_EPS);
    let lr_f = F::from_f64(lr);
    let decay = F::from_f64(lr * weight_decay);
    let corr1 = F::from_f64(1.0 - ADAM_BETA1.powi(step as i32));
    let corr2 = F::from_f64(1.0 - ADAM_BETA2.powi(step as i32));
    for (p, g) in params.iter_mut().zip(grads.iter()) {
        let data = p.tensor.data_mut();
        for ((w, &gv), (m, v)) in data
            .iter_mut()
            .zip(g.data().iter())
            .zip(p.m.iter_mut().zip(p.v.iter_mut()))
        {
            *w -= decay * *w;
            *m = b1 * *m + (F::one() - b1) * gv;
            *v = b2 * *v + (F::one() - b2) * gv * gv;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *w -= lr_f * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Forward + backward for one example; returns the loss and gradients in
/// canonical parameter order.
fn element_pass<F: Real>(
    params: &ModelParams<F>,
    config: &ReceiverConfig,
    spec: &ResourceGridSpec,
    features: &Tensor<F>,
    targets: &Tensor<F>,
) -> Result<(f64, Vec<Tensor<F>>)> {
    let mut tape = Tape::new();
    let taped = register_params(&mut tape, params, true);
    let fv = tape.leaf(features.clone(), false);
    let out = forward(&mut tape, fv, &taped, config, spec)?;
    let tv = tape.leaf(targets.clone(), false);
    let loss = tape.bce_with_logits(out, tv)?;
    let loss_value = tape.value(loss).data()[0].as_f64();
    tape.backward(loss)?;
    let grads = taped
        .ordered()
        .iter()
        .map(|&v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape())))
        .collect();
    Ok((loss_value, grads))
}

/// Mean loss of the model on a prepared batch, without updating anything.
pub fn batch_loss<F: Real>(
    params: &ModelParams<F>,
    config: &ReceiverConfig,
    spec: &ResourceGridSpec,
    batch: &TrainBatch<F>,
) -> Result<f64> {
    let mut total = 0.0;
    for (features, targets) in batch.features.iter().zip(batch.targets.iter()) {
        let mut tape = Tape::new();
        let taped = register_params(&mut tape, params, false);
        let fv = tape.leaf(features.clone(), false);
        let out = forward(&mut tape, fv, &taped, config, spec)?;
        let tv = tape.leaf(targets.clone(), false);
        let loss = tape.bce_with_logits(out, tv)?;
        total += tape.value(loss).data()[0].as_f64();
    }
    Ok(total / batch.features.len() as f64)
}

pub struct TrainOutcome<F> {
    pub params: ModelParams<F>,
    pub loss_trace: Vec<f64>,
}

/// Run `steps` optimizer steps starting at `start_step` (so checkpoint
/// resume replays the identical stream of batches and learning rates).
pub fn train_steps<F: Real>(
    run: &RunConfig,
    spec: &ResourceGridSpec,
    params: &mut ModelParams<F>,
    start_step: u64,
    steps: usize,
) -> Result<Vec<f64>> {
    run.train.validate()?;
    run.receiver.validate()?;
    let group = roots_of_unity(run.receiver.group_order)?;
    let mut trace = Vec::with_capacity(steps);
    let mut reference_loss = f64::INFINITY;
    let mut runaway_steps = 0usize;
    for i in 0..steps {
        let step = start_step + i as u64;
        let batch = generate_batch::<F>(
            run.train.seed,
            step,
            run.train.batch_size,
            &run.train.channel,
            spec,
            &group,
            run.train.ebno_range_db,
            run.train.random_global_phase,
        )?;
        let passes: Vec<(f64, Vec<Tensor<F>>)> = batch
            .features
            .par_iter()
            .zip(batch.targets.par_iter())
            .map(|(f, t)| element_pass(params, &run.receiver, spec, f, t))
            .collect::<Result<_>>()?;
        // Deterministic reduction in batch-element order.
        let scale = F::from_f64(1.0 / passes.len() as f64);
        let mut loss = passes[0].0;
        let mut grads: Vec<Tensor<F>> = passes[0].1.clone();
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
        for (l, elem_grads) in passes.iter().skip(1) {
            loss += l;
            for (acc, g) in grads.iter_mut().zip(elem_grads.iter()) {
                for (a, &v) in acc.data_mut().iter_mut().zip(g.data().iter()) {
                    *a += scale * v;
                }
            }
        }
        loss /= passes.len() as f64;
        trace.push(loss);

        if !loss.is_finite() {
            return Err(Error::Diverged(format!("loss became non-finite at step {step}")));
        }
        if i == 0 {
            reference_loss = loss;
        }
        if loss > 10.0 * reference_loss {
            runaway_steps += 1;
            if runaway_steps >= 100 {
                return Err(Error::Diverged(format!(
                    "loss exceeded 10x the initial value for 100 consecutive steps (step {step})"
                )));
            }
        } else {
            runaway_steps = 0;
        }

        let lr = lr_at(step as usize, &run.train);
        adamw_step(params, &grads, step as usize + 1, lr, run.train.weight_decay)?;
    }
    Ok(trace)
}

/// Fresh training run: initialize parameters from the seed and run the full
/// schedule.
pub fn train<F: Real>(run: &RunConfig) -> Result<TrainOutcome<F>> {
    let spec = run.link.to_spec()?;
    let mut rng = derive_rng(run.train.seed, INIT_STREAM);
    let mut params = ModelParams::<F>::init(&run.receiver, &mut rng)?;
    let loss_trace = train_steps(run, &spec, &mut params, 0, run.train.steps)?;
    Ok(TrainOutcome { params, loss_trace })
}

#[cfg(test)]
mod training_tests;
