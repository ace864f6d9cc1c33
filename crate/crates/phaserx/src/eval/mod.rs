//! Monte Carlo BER evaluation: sweeps with a block/error stopping rule,
//! paired classical baselines, verification suites and report emission.
//!
//! One "block" is one resource grid's worth of data bits. Per sweep point,
//! blocks are simulated until either `max_blocks` is reached or
//! `target_error_blocks` blocks containing at least one bit error have been
//! seen. The random stream of a block depends only on (seed, point index,
//! block index), never on the method, so different receivers are compared
//! on identical channel and noise realizations.

pub mod report;
pub mod verify;

use rayon::prelude::*;

use rand::Rng;

use crate::error::{Error, Result};
use crate::groups::ComplexGrid;
use crate::phy::{
    apply_channel, assemble_grid, count_errors, ebno_to_noise_var, extract_data, ls_estimate,
    map_bits, maxlog_demap, mrc_equalize, sample_channel, ChannelModel, ChannelRealization,
    ResourceGridSpec,
};
use crate::real::Real;
use crate::receiver::{infer, ModelParams, ReceiverConfig};
use crate::rng::derive_rng2;

/// One Monte Carlo result row. `wall_time_s` is kept at zero inside
/// deterministic outputs; measured timings live in the run manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub method: String,
    pub ebno_db: f64,
    pub bits_tested: u64,
    pub bit_errors: u64,
    pub blocks_tested: u64,
    pub error_blocks: u64,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl SweepRecord {
    pub fn ber(&self) -> f64 {
        if self.bits_tested == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits_tested as f64
        }
    }
}

/// Stopping rule per sweep point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StopRule {
    pub max_blocks: u64,
    pub target_error_blocks: u64,
}

impl StopRule {
    /// Desk-scale default, scaled down from a 500-batch / 5000-error-block
    /// lab rule.
    pub fn desk_default() -> Self {
        StopRule { max_blocks: 2000, target_error_blocks: 200 }
    }

    pub fn with_min_bits(spec: &ResourceGridSpec, min_bits: u64) -> Self {
        let blocks = min_bits.div_ceil(spec.bits_per_grid() as u64);
        StopRule { max_blocks: blocks, target_error_blocks: u64::MAX }
    }
}

/// Anything that turns one received grid into data-position LLRs
/// (f-major, t-minor, bit-minor, positive favors bit 0).
pub trait GridDecoder: Sync {
    fn label(&self) -> String;
    fn decode(
        &self,
        y: &ComplexGrid,
        ch: &ChannelRealization,
        spec: &ResourceGridSpec,
    ) -> Result<Vec<f64>>;
}

/// Maximal-ratio combining with the true channel; the BER lower bound.
pub struct PerfectCsi;

impl GridDecoder for PerfectCsi {
    fn label(&self) -> String {
        "perfect_csi".into()
    }

    fn decode(
        &self,
        y: &ComplexGrid,
        ch: &ChannelRealization,
        spec: &ResourceGridSpec,
    ) -> Result<Vec<f64>> {
        let (xhat, nv) = mrc_equalize(y, &ch.h, ch.noise_var)?;
        let symbols = extract_data(&xhat, spec);
        let nv_data = extract_noise_vars(&nv, spec);
        maxlog_demap(&symbols, &nv_data, &spec.constellation)
    }
}

/// Least-squares channel estimation feeding the same combiner; the
/// classical upper bound. A neural receiver doing worse than this is
/// considered non-functional, since it receives the LS estimate as input.
pub struct LsMaxlog;

impl GridDecoder for LsMaxlog {
    fn label(&self) -> String {
        "ls_maxlog".into()
    }

    fn decode(
        &self,
        y: &ComplexGrid,
        ch: &ChannelRealization,
        spec: &ResourceGridSpec,
    ) -> Result<Vec<f64>> {
        let est = ls_estimate(y, spec)?;
        let (xhat, nv) = mrc_equalize(y, &est, ch.noise_var)?;
        let symbols = extract_data(&xhat, spec);
        let nv_data = extract_noise_vars(&nv, spec);
        maxlog_demap(&symbols, &nv_data, &spec.constellation)
    }
}

/// A trained model behind the same interface.
pub struct NeuralDecoder<'a, F: Real> {
    pub id: String,
    pub params: &'a ModelParams<F>,
    pub config: &'a ReceiverConfig,
}

impl<F: Real> GridDecoder for NeuralDecoder<'_, F> {
    fn label(&self) -> String {
        format!("neural:{}", self.id)
    }

    fn decode(
        &self,
        y: &ComplexGrid,
        _ch: &ChannelRealization,
        spec: &ResourceGridSpec,
    ) -> Result<Vec<f64>> {
        let ls = ls_estimate(y, spec)?;
        let llr = infer(self.params, self.config, spec, y, &ls)?;
        Ok(llr.to_f64_vec())
    }
}

fn extract_noise_vars(nv: &[f64], spec: &ResourceGridSpec) -> Vec<f64> {
    let t_n = spec.symbols;
    let data_cols = spec.data_symbol_indices();
    let mut out = Vec::with_capacity(spec.data_positions());
    for f in 0..spec.subcarriers {
        for &t in &data_cols {
            out.push(nv[f * t_n + t]);
        }
    }
    out
}

/// Simulate one block: data bits onto a grid, through the channel, with
/// noise for the given Eb/N0.
pub fn simulate_block<R: Rng>(
    rng: &mut R,
    spec: &ResourceGridSpec,
    channel: &ChannelModel,
    ebno_db: f64,
) -> Result<(Vec<u8>, ComplexGrid, ChannelRealization)> {
    let n0 = ebno_to_noise_var(ebno_db, &spec.constellation);
    let bits: Vec<u8> = (0..spec.bits_per_grid()).map(|_| rng.random_range(0..2u8)).collect();
    let tx = assemble_grid(&map_bits(&bits, &spec.constellation)?, spec)?;
    let ch = sample_channel(channel, spec, n0, rng)?;
    let y = apply_channel(&tx, &ch, rng)?;
    Ok((bits, y, ch))
}

fn sweep_point(
    decoder: &dyn GridDecoder,
    point_index: usize,
    ebno_db: f64,
    spec: &ResourceGridSpec,
    channel: &ChannelModel,
    stop: StopRule,
    seed: u64,
) -> Result<SweepRecord> {
    let mut bits_tested = 0u64;
    let mut bit_errors = 0u64;
    let mut blocks = 0u64;
    let mut error_blocks = 0u64;
    while blocks < stop.max_blocks && error_blocks < stop.target_error_blocks {
        let mut rng = derive_rng2(seed, point_index as u64, blocks);
        let (bits, y, ch) = simulate_block(&mut rng, spec, channel, ebno_db)?;
        let llrs = decoder.decode(&y, &ch, spec)?;
        let (n, e) = count_errors(&llrs, &bits)?;
        bits_tested += n as u64;
        bit_errors += e as u64;
        blocks += 1;
        if e > 0 {
            error_blocks += 1;
        }
    }
    Ok(SweepRecord {
        method: decoder.label(),
        ebno_db,
        bits_tested,
        bit_errors,
        blocks_tested: blocks,
        error_blocks,
        seed,
        wall_time_s: 0.0,
    })
}

/// Sweep one receiver over a list of Eb/N0 points. Points run in parallel;
/// output order follows the input list. Deterministic for a fixed seed.
pub fn run_sweep(
    decoder: &dyn GridDecoder,
    ebno_list: &[f64],
    spec: &ResourceGridSpec,
    channel: &ChannelModel,
    stop: StopRule,
    seed: u64,
) -> Result<Vec<SweepRecord>> {
    if ebno_list.is_empty() {
        return Err(Error::InvalidArgument("empty Eb/N0 list".into()));
    }
    channel.validate()?;
    ebno_list
        .par_iter()
        .enumerate()
        .map(|(pi, &ebno)| sweep_point(decoder, pi, ebno, spec, channel, stop, seed))
        .collect()
}

/// Run both classical baselines on identical realizations (the block
/// streams depend only on seed/point/block, not on the method) and return
/// the records ordered by (method, ebno).
pub fn run_baselines(
    spec: &ResourceGridSpec,
    channel: &ChannelModel,
    ebno_list: &[f64],
    stop: StopRule,
    seed: u64,
) -> Result<Vec<SweepRecord>> {
    let mut records = run_sweep(&LsMaxlog, ebno_list, spec, channel, stop, seed)?;
    records.extend(run_sweep(&PerfectCsi, ebno_list, spec, channel, stop, seed)?);
    records.sort_by(|a, b| {
        (a.method.as_str(), a.ebno_db)
            .partial_cmp(&(b.method.as_str(), b.ebno_db))
            .unwrap()
    });
    Ok(records)
}

/// Mean BER per method: the arithmetic mean of per-point BERs across the
/// sweep grid.
pub fn mean_ber(records: &[SweepRecord]) -> Vec<(String, f64)> {
    let mut methods: Vec<String> = records.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    methods
        .into_iter()
        .map(|m| {
            let points: Vec<f64> =
                records.iter().filter(|r| r.method == m).map(|r| r.ber()).collect();
            let mean = points.iter().sum::<f64>() / points.len() as f64;
            (m, mean)
        })
        .collect()
}
