//! The phase-equivariant neural receiver.
//!
//! The received grid is lifted over the roots of unity of a cyclic group of
//! order `n`: slice `k` of the input feature tensor carries the received
//! samples and the least-squares channel estimate rotated by `z_k`, next to
//! the unrotated pilot pattern. Rotating the input by a group element then
//! only permutes slices along the group axis. Every layer in the trunk
//! commutes with that permutation (the only cross-slice mixing is a
//! circular convolution along the group axis), and the head averages over
//! the group axis, so the bit LLRs are invariant to input rotations from
//! the group. With `n = 1` the model degenerates to a plain
//! ConvNeXt-style receiver.
//!
//! Activation layout throughout: `[group, freq, time, channel]`.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::Rng;

use crate::autodiff::{init_tensor, InitScheme, Parameter, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::groups::{roots_of_unity, ComplexGrid, CyclicGroup};
use crate::phy::ResourceGridSpec;
use crate::real::Real;

/// LayerNorm epsilon used by every normalization in the model.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
    pub dilation: (usize, usize),
}

/// Full architectural description; parameter counts and the parameter name
/// table are pure functions of this.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReceiverConfig {
    /// Cyclic group order `n`; 1 disables the equivariant lifting.
    pub group_order: usize,
    /// Circular kernel length along the group axis, `1 ..= group_order`.
    pub group_kernel: usize,
    pub stages: Vec<StageConfig>,
    /// (freq, time) extent of the depthwise spatial kernel.
    pub ft_kernel: (usize, usize),
    /// Expansion factor of the inverted bottleneck.
    pub bottleneck_ratio: usize,
    /// Derived from the feature layout: 4 * rx_antennas + 2.
    pub input_channels: usize,
    pub bits_per_symbol: usize,
}

/// Input channels for the fixed feature layout: per antenna Re/Im of the
/// (rotated) received grid and of the (rotated) LS estimate, plus Re/Im of
/// the unrotated pilot pattern.
pub fn input_channels_for(rx_antennas: usize) -> usize {
    4 * rx_antennas + 2
}

impl ReceiverConfig {
    /// The reference architecture: stages of 5/4/3 blocks at 32/48/32
    /// channels, dilation 2 in the middle stage, a 5x9 spatial kernel and a
    /// x4 inverted bottleneck.
    pub fn standard(
        group_order: usize,
        group_kernel: usize,
        rx_antennas: usize,
        bits_per_symbol: usize,
    ) -> Self {
        ReceiverConfig {
            group_order,
            group_kernel,
            stages: vec![
                StageConfig { blocks: 5, channels: 32, dilation: (1, 1) },
                StageConfig { blocks: 4, channels: 48, dilation: (2, 2) },
                StageConfig { blocks: 3, channels: 32, dilation: (1, 1) },
            ],
            ft_kernel: (5, 9),
            bottleneck_ratio: 4,
            input_channels: input_channels_for(rx_antennas),
            bits_per_symbol,
        }
    }

    /// Same topology with all channel widths scaled by `factor`.
    pub fn with_width_scale(mut self, factor: f64) -> Self {
        for stage in &mut self.stages {
            stage.channels = ((stage.channels as f64 * factor).round() as usize).max(1);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_order == 0 {
            return Err(Error::Config("group order must be >= 1".into()));
        }
        if self.group_kernel == 0 || self.group_kernel > self.group_order {
            return Err(Error::Config(format!(
                "group kernel {} must be in 1..={}",
                self.group_kernel, self.group_order
            )));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("at least one stage required".into()));
        }
        if self.stages.iter().any(|s| s.blocks == 0 || s.channels == 0) {
            return Err(Error::Config("stages need blocks >= 1 and channels >= 1".into()));
        }
        if self.ft_kernel.0 % 2 == 0 || self.ft_kernel.1 % 2 == 0 {
            return Err(Error::Config("spatial kernel sizes must be odd".into()));
        }
        if self.bottleneck_ratio == 0 || self.input_channels == 0 || self.bits_per_symbol == 0 {
            return Err(Error::Config("ratio, input channels and bits must be >= 1".into()));
        }
        Ok(())
    }
}

/// How each parameter tensor starts out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamInit {
    UniformFanIn,
    Zeros,
    Ones,
    /// Delta at the group-kernel origin: a fresh model computes the same
    /// function as its order-1 counterpart.
    GroupIdentity,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: ParamInit,
}

/// The canonical parameter table. Everything that walks the parameters --
/// initialization, counting, checkpointing, the forward pass -- derives its
/// order from this enumeration.
fn param_table(config: &ReceiverConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: ParamInit| {
        specs.push(ParamSpec { name, shape, init });
    };
    let c0 = config.stages[0].channels;
    push("input.linear.weight".into(), vec![config.input_channels, c0], ParamInit::UniformFanIn);
    push("input.linear.bias".into(), vec![c0], ParamInit::Zeros);
    push("input.norm.gamma".into(), vec![c0], ParamInit::Ones);
    push("input.norm.beta".into(), vec![c0], ParamInit::Zeros);
    let (kf, kt) = config.ft_kernel;
    for (s, stage) in config.stages.iter().enumerate() {
        let c = stage.channels;
        let hidden = c * config.bottleneck_ratio;
        for b in 0..stage.blocks {
            let p = format!("stage{}.block{}", s, b);
            push(format!("{p}.groupconv.weight"), vec![c, config.group_kernel], ParamInit::GroupIdentity);
            push(format!("{p}.dwconv.weight"), vec![c, kf, kt], ParamInit::UniformFanIn);
            push(format!("{p}.norm.gamma"), vec![c], ParamInit::Ones);
            push(format!("{p}.norm.beta"), vec![c], ParamInit::Zeros);
            push(format!("{p}.pwconv1.weight"), vec![c, hidden], ParamInit::UniformFanIn);
            push(format!("{p}.pwconv1.bias"), vec![hidden], ParamInit::Zeros);
            push(format!("{p}.pwconv2.weight"), vec![hidden, c], ParamInit::UniformFanIn);
            push(format!("{p}.pwconv2.bias"), vec![c], ParamInit::Zeros);
        }
        if s + 1 < config.stages.len() {
            let c_next = config.stages[s + 1].channels;
            let p = format!("resample{}", s);
            push(format!("{p}.linear.weight"), vec![c, c_next], ParamInit::UniformFanIn);
            push(format!("{p}.linear.bias"), vec![c_next], ParamInit::Zeros);
            push(format!("{p}.norm.gamma"), vec![c_next], ParamInit::Ones);
            push(format!("{p}.norm.beta"), vec![c_next], ParamInit::Zeros);
        }
    }
    let c_last = config.stages.last().unwrap().channels;
    push("output.norm.gamma".into(), vec![c_last], ParamInit::Ones);
    push("output.norm.beta".into(), vec![c_last], ParamInit::Zeros);
    // Zero-initialized head: a fresh model emits zero LLRs, so training
    // starts from ln(2) loss and order-n models match their order-1 twins.
    push("output.linear.weight".into(), vec![c_last, config.bits_per_symbol], ParamInit::Zeros);
    push("output.linear.bias".into(), vec![config.bits_per_symbol], ParamInit::Zeros);
    specs
}

/// Exact number of scalar parameters, by closed form:
///
/// * input layer: `C_in*C0 + C0` plus `2*C0` norm parameters;
/// * each block at width C: group kernel `C*k_g`, spatial kernel
///   `C*k_f*k_t`, norm `2C`, bottleneck `C*rC + rC + rC*C + C`;
/// * each resample: `C_s*C_{s+1} + C_{s+1}` plus `2*C_{s+1}`;
/// * head: `2C + C*k + k`.
pub fn param_count(config: &ReceiverConfig) -> usize {
    let r = config.bottleneck_ratio;
    let (kf, kt) = config.ft_kernel;
    let c0 = config.stages[0].channels;
    let mut count = config.input_channels * c0 + c0 + 2 * c0;
    for (s, stage) in config.stages.iter().enumerate() {
        let c = stage.channels;
        count += stage.blocks
            * (c * config.group_kernel + c * kf * kt + 2 * c + c * (r * c) + r * c + (r * c) * c + c);
        if s + 1 < config.stages.len() {
            let c_next = config.stages[s + 1].channels;
            count += c * c_next + c_next + 2 * c_next;
        }
    }
    let c_last = config.stages.last().unwrap().channels;
    count + 2 * c_last + c_last * config.bits_per_symbol + config.bits_per_symbol
}

/// Scalar parameters held in circular group kernels only.
pub fn group_kernel_param_count(config: &ReceiverConfig) -> usize {
    config
        .stages
        .iter()
        .map(|s| s.blocks * s.channels * config.group_kernel)
        .sum()
}

/// Per-layer parameter counts for reporting.
pub fn param_count_breakdown(config: &ReceiverConfig) -> Vec<(String, usize)> {
    param_table(config)
        .iter()
        .map(|spec| (spec.name.clone(), spec.shape.iter().product()))
        .collect()
}

/// Named parameter collection in canonical table order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    params: Vec<Parameter<F>>,
    index: HashMap<String, usize>,
}

impl<F: Real> ModelParams<F> {
    /// Initialize fresh parameters for `config`.
    pub fn init<R: Rng>(config: &ReceiverConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        let mut index = HashMap::new();
        for spec in param_table(config) {
            let tensor = match spec.init {
                ParamInit::UniformFanIn => init_tensor(&spec.shape, InitScheme::UniformFanIn, rng)?,
                ParamInit::Zeros => Tensor::zeros(&spec.shape),
                ParamInit::Ones => {
                    let mut t = Tensor::zeros(&spec.shape);
                    t.data_mut().fill(F::one());
                    t
                }
                ParamInit::GroupIdentity => {
                    let mut t = Tensor::zeros(&spec.shape);
                    let kg = spec.shape[1];
                    for c in 0..spec.shape[0] {
                        t.data_mut()[c * kg] = F::one();
                    }
                    t
                }
            };
            index.insert(spec.name.clone(), params.len());
            params.push(Parameter::new(spec.name, tensor));
        }
        Ok(ModelParams { params, index })
    }

    /// Re-draw every tensor (including heads and group kernels) from the
    /// fan-in uniform scheme. Used by randomized property checks.
    pub fn randomize<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        for p in &mut self.params {
            p.tensor = init_tensor(p.tensor.shape(), InitScheme::UniformFanIn, rng)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<F>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<F>> {
        self.index.get(name).copied().map(move |i| &mut self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Brute-force scalar count over the actual tensors.
    pub fn total_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Rebuild a collection from raw (name, shape, values, m, v) tuples,
    /// e.g. when decoding a checkpoint. The given order becomes canonical.
    pub fn from_raw(raw: Vec<(String, Vec<usize>, Vec<F>, Vec<F>, Vec<F>)>) -> Result<Self> {
        let mut params = Vec::with_capacity(raw.len());
        let mut index = HashMap::new();
        for (name, shape, values, m, v) in raw {
            let tensor = Tensor::from_vec(&shape, values)?;
            if m.len() != tensor.numel() || v.len() != tensor.numel() {
                return Err(Error::ShapeMismatch(format!(
                    "moment buffers of {} do not match its shape",
                    name
                )));
            }
            if index.insert(name.clone(), params.len()).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate parameter {}", name)));
            }
            let mut p = Parameter::new(name, tensor);
            p.m = m;
            p.v = v;
            params.push(p);
        }
        Ok(ModelParams { params, index })
    }

    /// Copy tensor values from `other` wherever names and shapes match.
    pub fn copy_matching(&mut self, other: &ModelParams<F>) {
        for p in &mut self.params {
            if let Some(src) = other.get(&p.name) {
                if src.tensor.shape() == p.tensor.shape() {
                    p.tensor = src.tensor.clone();
                }
            }
        }
    }
}

/// Tape handles for one registration of the parameters.
pub struct TapedParams {
    vars: HashMap<String, Var>,
    ordered: Vec<Var>,
}

impl TapedParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {:?}", name))
    }

    /// Vars in canonical parameter order, aligned with `ModelParams`.
    pub fn ordered(&self) -> &[Var] {
        &self.ordered
    }
}

/// Assemble a [`TapedParams`] from an explicit name-to-var map; gradient
/// checking harnesses that register leaves themselves use this.
pub fn taped_params_from_map(vars: HashMap<String, Var>, ordered: Vec<Var>) -> TapedParams {
    TapedParams { vars, ordered }
}

/// Put every parameter on the tape; `trainable` controls gradient tracking.
pub fn register_params<F: Real>(
    tape: &mut Tape<F>,
    params: &ModelParams<F>,
    trainable: bool,
) -> TapedParams {
    let mut vars = HashMap::new();
    let mut ordered = Vec::with_capacity(params.len());
    for p in params.iter() {
        let v = tape.leaf(p.tensor.clone(), trainable);
        vars.insert(p.name.clone(), v);
        ordered.push(v);
    }
    TapedParams { vars, ordered }
}

/// Assemble the lifted input features: for each group index k the channels
/// are, in order, Re/Im of `z_k * y` per antenna, Re/Im of `z_k * ls` per
/// antenna, then Re/Im of the pilot pattern (shared across the group axis).
pub fn build_input_features<F: Real>(
    y: &ComplexGrid,
    ls: &ComplexGrid,
    spec: &ResourceGridSpec,
    group: &CyclicGroup,
) -> Result<Tensor<F>> {
    let (a_n, f_n, t_n) = (y.antennas(), y.subcarriers(), y.symbols());
    if ls.antennas() != a_n || ls.subcarriers() != f_n || ls.symbols() != t_n {
        return Err(Error::ShapeMismatch(
            "received grid and channel estimate differ in shape".into(),
        ));
    }
    if f_n != spec.subcarriers || t_n != spec.symbols || a_n != spec.rx_antennas {
        return Err(Error::ShapeMismatch(
            "grid does not match the resource grid spec".into(),
        ));
    }
    let n = group.order();
    let c_in = input_channels_for(a_n);
    let pilot = spec.pilot_pattern_grid();
    let mut out = Tensor::zeros(&[n, f_n, t_n, c_in]);
    {
        let data = out.data_mut();
        let mut write = |k: usize, f: usize, t: usize, c: usize, v: f64| {
            data[((k * f_n + f) * t_n + t) * c_in + c] = F::from_f64(v);
        };
        for (k, &z) in group.roots().iter().enumerate() {
            for f in 0..f_n {
                for t in 0..t_n {
                    for a in 0..a_n {
                        let ry = y.get(a, f, t) * z;
                        write(k, f, t, 2 * a, ry.re);
                        write(k, f, t, 2 * a + 1, ry.im);
                        let rh = ls.get(a, f, t) * z;
                        write(k, f, t, 2 * a_n + 2 * a, rh.re);
                        write(k, f, t, 2 * a_n + 2 * a + 1, rh.im);
                    }
                    let p: Complex64 = pilot.get(0, f, t);
                    write(k, f, t, 4 * a_n, p.re);
                    write(k, f, t, 4 * a_n + 1, p.im);
                }
            }
        }
    }
    Ok(out)
}

/// One residual block: circular group conv, spatial depthwise conv,
/// LayerNorm, inverted bottleneck with GeLU, skip connection.
fn block<F: Real>(
    tape: &mut Tape<F>,
    x: Var,
    taped: &TapedParams,
    prefix: &str,
    dilation: (usize, usize),
) -> Result<Var> {
    let h = tape.circular_group_conv(x, taped.var(&format!("{prefix}.groupconv.weight")))?;
    let h = tape.depthwise_conv_ft(h, taped.var(&format!("{prefix}.dwconv.weight")), dilation)?;
    let h = tape.layer_norm(
        h,
        taped.var(&format!("{prefix}.norm.gamma")),
        taped.var(&format!("{prefix}.norm.beta")),
        LN_EPS,
    )?;
    let h = tape.pointwise_linear(
        h,
        taped.var(&format!("{prefix}.pwconv1.weight")),
        taped.var(&format!("{prefix}.pwconv1.bias")),
    )?;
    let h = tape.gelu(h)?;
    let h = tape.pointwise_linear(
        h,
        taped.var(&format!("{prefix}.pwconv2.weight")),
        taped.var(&format!("{prefix}.pwconv2.bias")),
    )?;
    tape.residual_add(x, h)
}

/// Run the receiver on lifted features, producing LLRs at the data
/// positions only, shape `[F, T_data, bits_per_symbol]`. Positive LLR
/// favors bit 0, matching the classical demapper convention.
pub fn forward<F: Real>(
    tape: &mut Tape<F>,
    features: Var,
    taped: &TapedParams,
    config: &ReceiverConfig,
    spec: &ResourceGridSpec,
) -> Result<Var> {
    config.validate()?;
    let shape = tape.value(features).shape().to_vec();
    if shape.len() != 4
        || shape[0] != config.group_order
        || shape[3] != config.input_channels
        || shape[1] != spec.subcarriers
        || shape[2] != spec.symbols
    {
        return Err(Error::ShapeMismatch(format!(
            "features {:?} do not match config/spec (n={}, C_in={}, F={}, T={})",
            shape, config.group_order, config.input_channels, spec.subcarriers, spec.symbols
        )));
    }
    let mut x = tape.pointwise_linear(
        features,
        taped.var("input.linear.weight"),
        taped.var("input.linear.bias"),
    )?;
    x = tape.layer_norm(x, taped.var("input.norm.gamma"), taped.var("input.norm.beta"), LN_EPS)?;
    for (s, stage) in config.stages.iter().enumerate() {
        for b in 0..stage.blocks {
            x = block(tape, x, taped, &format!("stage{}.block{}", s, b), stage.dilation)?;
        }
        if s + 1 < config.stages.len() {
            let p = format!("resample{}", s);
            x = tape.pointwise_linear(
                x,
                taped.var(&format!("{p}.linear.weight")),
                taped.var(&format!("{p}.linear.bias")),
            )?;
            x = tape.layer_norm(
                x,
                taped.var(&format!("{p}.norm.gamma")),
                taped.var(&format!("{p}.norm.beta")),
                LN_EPS,
            )?;
        }
    }
    x = tape.layer_norm(x, taped.var("output.norm.gamma"), taped.var("output.norm.beta"), LN_EPS)?;
    let pooled = tape.mean_over_group(x)?;
    let data = tape.select_time(pooled, &spec.data_symbol_indices())?;
    tape.pointwise_linear(data, taped.var("output.linear.weight"), taped.var("output.linear.bias"))
}

/// Inference helper: build features from a received grid and its LS
/// estimate, run the model without gradient tracking, return the LLR grid.
pub fn infer<F: Real>(
    params: &ModelParams<F>,
    config: &ReceiverConfig,
    spec: &ResourceGridSpec,
    y: &ComplexGrid,
    ls: &ComplexGrid,
) -> Result<Tensor<F>> {
    let group = roots_of_unity(config.group_order)?;
    let features = build_input_features::<F>(y, ls, spec, &group)?;
    let mut tape = Tape::new();
    let taped = register_params(&mut tape, params, false);
    let fv = tape.leaf(features, false);
    let out = forward(&mut tape, fv, &taped, config, spec)?;
    Ok(tape.value(out).clone())
}
