//! Classical physical-layer machinery: constellations, resource grids with
//! Kronecker pilot columns, fading channels, least-squares channel
//! estimation, maximal-ratio combining and max-log soft demapping.
//!
//! Conventions fixed here and used everywhere else:
//!
//! * LLR sign: `LLR_b = (min_{bit=1} |x-s|^2 - min_{bit=0} |x-s|^2) / N0`,
//!   so a positive LLR favors bit 0 and the hard decision is the sign;
//! * Eb/N0 accounting assumes unit symbol energy and excludes pilot
//!   overhead: `N0 = 1 / (k * 10^(EbN0_dB/10))`;
//! * a zero LLR counts as a bit error (pessimistic tie-break).

mod channel;
mod constellation;
pub mod stats;

pub use channel::{apply_channel, sample_channel, ChannelModel, ChannelRealization};
pub use constellation::{make_constellation, map_bits, Constellation, ConstellationKind};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::groups::ComplexGrid;

/// Seed of the fixed pilot sequence. Pilot symbols are unit-magnitude
/// QPSK-like values drawn once per (subcarrier, pilot column) position; the
/// sequence is part of the format, not of any particular run.
pub const PILOT_SEQUENCE_SEED: u64 = 0x5049_4c4f_5453_3031;

/// Geometry and content of one OFDM resource grid: subcarrier/symbol
/// extents, the pilot columns with their known values, the constellation
/// for data positions, and the receive antenna count.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGridSpec {
    pub subcarriers: usize,
    pub symbols: usize,
    pub pilot_symbol_indices: Vec<usize>,
    pub rx_antennas: usize,
    pub constellation: Constellation,
    pilot_values: Vec<Complex64>,
}

impl ResourceGridSpec {
    pub fn new(
        subcarriers: usize,
        symbols: usize,
        mut pilot_symbol_indices: Vec<usize>,
        rx_antennas: usize,
        constellation: Constellation,
    ) -> Result<Self> {
        if subcarriers == 0 || symbols == 0 || rx_antennas == 0 {
            return Err(Error::InvalidArgument(
                "grid extents and antenna count must be positive".into(),
            ));
        }
        pilot_symbol_indices.sort_unstable();
        pilot_symbol_indices.dedup();
        if pilot_symbol_indices.iter().any(|&t| t >= symbols) {
            return Err(Error::InvalidArgument(format!(
                "pilot index out of range 0..{}",
                symbols
            )));
        }
        if pilot_symbol_indices.len() >= symbols {
            return Err(Error::InvalidArgument("no data columns left".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(PILOT_SEQUENCE_SEED);
        let pilot_values = (0..subcarriers * pilot_symbol_indices.len())
            .map(|_| {
                let quadrant: u8 = rng.random_range(0..4);
                Complex64::from_polar(
                    1.0,
                    std::f64::consts::FRAC_PI_4
                        + f64::from(quadrant) * std::f64::consts::FRAC_PI_2,
                )
            })
            .collect();
        Ok(ResourceGridSpec {
            subcarriers,
            symbols,
            pilot_symbol_indices,
            rx_antennas,
            constellation,
            pilot_values,
        })
    }

    /// The default link: 64 subcarriers, 14 symbols, Kronecker pilots at
    /// time indices 2 and 11, two receive antennas.
    pub fn default_link(constellation: Constellation) -> Self {
        Self::new(64, 14, vec![2, 11], 2, constellation).expect("default grid")
    }

    pub fn is_pilot_symbol(&self, t: usize) -> bool {
        self.pilot_symbol_indices.binary_search(&t).is_ok()
    }

    /// Time indices carrying data, in order.
    pub fn data_symbol_indices(&self) -> Vec<usize> {
        (0..self.symbols).filter(|&t| !self.is_pilot_symbol(t)).collect()
    }

    pub fn data_positions(&self) -> usize {
        self.subcarriers * (self.symbols - self.pilot_symbol_indices.len())
    }

    pub fn bits_per_grid(&self) -> usize {
        self.data_positions() * self.constellation.bits_per_symbol()
    }

    /// Known pilot value at subcarrier `f`, pilot column ordinal `p`.
    pub fn pilot_value(&self, f: usize, p: usize) -> Complex64 {
        self.pilot_values[f * self.pilot_symbol_indices.len() + p]
    }

    /// The pilot pattern as a full grid: pilot values at pilot positions,
    /// zero elsewhere. This is the phase-reference input channel of the
    /// neural receiver.
    pub fn pilot_pattern_grid(&self) -> ComplexGrid {
        let mut g = ComplexGrid::zeros(1, self.subcarriers, self.symbols);
        for f in 0..self.subcarriers {
            for (p, &t) in self.pilot_symbol_indices.iter().enumerate() {
                g.set(0, f, t, self.pilot_value(f, p));
            }
        }
        g
    }
}

/// Place data symbols (f-major, t-minor over data columns) and pilots onto
/// a single-antenna transmit grid.
pub fn assemble_grid(symbols: &[Complex64], spec: &ResourceGridSpec) -> Result<ComplexGrid> {
    if symbols.len() != spec.data_positions() {
        return Err(Error::InvalidArgument(format!(
            "expected {} data symbols, got {}",
            spec.data_positions(),
            symbols.len()
        )));
    }
    let mut grid = ComplexGrid::zeros(1, spec.subcarriers, spec.symbols);
    let data_cols = spec.data_symbol_indices();
    let mut it = symbols.iter();
    for f in 0..spec.subcarriers {
        for &t in &data_cols {
            grid.set(0, f, t, *it.next().unwrap());
        }
    }
    for f in 0..spec.subcarriers {
        for (p, &t) in spec.pilot_symbol_indices.iter().enumerate() {
            grid.set(0, f, t, spec.pilot_value(f, p));
        }
    }
    Ok(grid)
}

/// Inverse of [`assemble_grid`]'s data placement: read the data positions
/// of a single-antenna grid in (f-major, t-minor) order.
pub fn extract_data(grid: &ComplexGrid, spec: &ResourceGridSpec) -> Vec<Complex64> {
    let data_cols = spec.data_symbol_indices();
    let mut out = Vec::with_capacity(spec.data_positions());
    for f in 0..spec.subcarriers {
        for &t in &data_cols {
            out.push(grid.get(0, f, t));
        }
    }
    out
}

/// Least-squares channel estimate over the full grid. At pilot columns the
/// estimate is the received sample divided by the known pilot; between
/// pilot columns it is linearly interpolated in time per subcarrier, and
/// held constant outside the outermost pilots.
pub fn ls_estimate(y: &ComplexGrid, spec: &ResourceGridSpec) -> Result<ComplexGrid> {
    if spec.pilot_symbol_indices.is_empty() {
        return Err(Error::InvalidArgument(
            "ls_estimate needs at least one pilot column".into(),
        ));
    }
    let pilots = &spec.pilot_symbol_indices;
    let (a_n, f_n, t_n) = (y.antennas(), y.subcarriers(), y.symbols());
    let mut h = ComplexGrid::zeros(a_n, f_n, t_n);
    for a in 0..a_n {
        for f in 0..f_n {
            let estimates: Vec<Complex64> = pilots
                .iter()
                .enumerate()
                .map(|(p, &t)| {
                    let pv = spec.pilot_value(f, p);
                    if pv.norm() == 0.0 {
                        return Err(Error::InvalidArgument("zero pilot value".into()));
                    }
                    Ok(y.get(a, f, t) / pv)
                })
                .collect::<Result<_>>()?;
            for t in 0..t_n {
                let est = match pilots.binary_search(&t) {
                    Ok(p) => estimates[p],
                    Err(pos) => {
                        if pos == 0 {
                            estimates[0]
                        } else if pos == pilots.len() {
                            estimates[pilots.len() - 1]
                        } else {
                            let (t0, t1) = (pilots[pos - 1] as f64, pilots[pos] as f64);
                            let alpha = (t as f64 - t0) / (t1 - t0);
                            estimates[pos - 1] * (1.0 - alpha) + estimates[pos] * alpha
                        }
                    }
                };
                h.set(a, f, t, est);
            }
        }
    }
    Ok(h)
}

/// Maximal-ratio combining with a known (or estimated) channel:
/// `x_hat = sum_a conj(h_a) y_a / sum_a |h_a|^2`, post-combining noise
/// variance `N0 / sum_a |h_a|^2` per position. Positions where the channel
/// is identically zero are unrecoverable and get infinite noise variance.
pub fn mrc_equalize(
    y: &ComplexGrid,
    h: &ComplexGrid,
    noise_var: f64,
) -> Result<(ComplexGrid, Vec<f64>)> {
    if y.antennas() != h.antennas()
        || y.subcarriers() != h.subcarriers()
        || y.symbols() != h.symbols()
    {
        return Err(Error::ShapeMismatch("mrc_equalize: y and h differ".into()));
    }
    let (a_n, f_n, t_n) = (y.antennas(), y.subcarriers(), y.symbols());
    let mut symbols = ComplexGrid::zeros(1, f_n, t_n);
    let mut nv = vec![0.0f64; f_n * t_n];
    for f in 0..f_n {
        for t in 0..t_n {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for a in 0..a_n {
                let ha = h.get(a, f, t);
                num += ha.conj() * y.get(a, f, t);
                den += ha.norm_sqr();
            }
            if den == 0.0 {
                symbols.set(0, f, t, Complex64::new(0.0, 0.0));
                nv[f * t_n + t] = f64::INFINITY;
            } else {
                symbols.set(0, f, t, num / den);
                nv[f * t_n + t] = noise_var / den;
            }
        }
    }
    Ok((symbols, nv))
}

/// Max-log LLRs for one equalized symbol. Positive LLR favors bit 0.
pub fn maxlog_demap_symbol(
    x_hat: Complex64,
    constellation: &Constellation,
    eff_noise_var: f64,
) -> Result<Vec<f64>> {
    if eff_noise_var <= 0.0 {
        return Err(Error::InvalidArgument(
            "effective noise variance must be positive".into(),
        ));
    }
    let k = constellation.bits_per_symbol();
    let mut min0 = vec![f64::INFINITY; k];
    let mut min1 = vec![f64::INFINITY; k];
    for (m, p) in constellation.points().iter().enumerate() {
        let d = (x_hat - p).norm_sqr();
        for b in 0..k {
            if constellation.label_bit(m, b) == 0 {
                if d < min0[b] {
                    min0[b] = d;
                }
            } else if d < min1[b] {
                min1[b] = d;
            }
        }
    }
    Ok((0..k).map(|b| (min1[b] - min0[b]) / eff_noise_var).collect())
}

/// Demap a slice of equalized symbols with matching per-symbol noise
/// variances; returns LLRs laid out symbol-major.
pub fn maxlog_demap(
    symbols: &[Complex64],
    noise_vars: &[f64],
    constellation: &Constellation,
) -> Result<Vec<f64>> {
    if symbols.len() != noise_vars.len() {
        return Err(Error::ShapeMismatch(
            "maxlog_demap: symbols and noise variances differ".into(),
        ));
    }
    let mut out = Vec::with_capacity(symbols.len() * constellation.bits_per_symbol());
    for (&s, &nv) in symbols.iter().zip(noise_vars.iter()) {
        if nv.is_infinite() {
            // Unrecoverable position: zero LLRs, counted as errors.
            out.extend(std::iter::repeat(0.0).take(constellation.bits_per_symbol()));
        } else {
            out.extend(maxlog_demap_symbol(s, constellation, nv)?);
        }
    }
    Ok(out)
}

/// Noise variance for a given Eb/N0 in dB, unit symbol energy, pilot
/// overhead excluded from the energy accounting.
pub fn ebno_to_noise_var(ebno_db: f64, constellation: &Constellation) -> f64 {
    1.0 / (constellation.bits_per_symbol() as f64 * 10f64.powf(ebno_db / 10.0))
}

/// Count hard-decision errors. The decision is the LLR sign (positive means
/// bit 0); an exactly zero LLR is counted as an error.
pub fn count_errors(llrs: &[f64], true_bits: &[u8]) -> Result<(usize, usize)> {
    if llrs.len() != true_bits.len() {
        return Err(Error::ShapeMismatch(format!(
            "count_errors: {} llrs vs {} bits",
            llrs.len(),
            true_bits.len()
        )));
    }
    let errors = llrs
        .iter()
        .zip(true_bits.iter())
        .filter(|&(&llr, &bit)| llr == 0.0 || (llr > 0.0 && bit == 1) || (llr < 0.0 && bit == 0))
        .count();
    Ok((llrs.len(), errors))
}
