//! Fading channel models and noise application. All models are block
//! fading: one channel draw per resource grid, constant over time; the
//! tapped-delay-line model adds frequency selectivity on top.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::groups::ComplexGrid;

use super::ResourceGridSpec;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ChannelModel {
    /// `h = 1`: noise is the only impairment.
    AwgnOnly,
    /// One zero-mean unit-variance complex Gaussian draw per antenna.
    FlatRayleigh,
    /// Line-of-sight term `m * exp(i*theta)` with `theta ~ U(-pi, pi)` plus
    /// complex Gaussian scatter of the given variance.
    Rician {
        los_magnitude: f64,
        scatter_variance: f64,
    },
    /// Tapped delay line: per-antenna frequency response
    /// `H[f] = sum_l g_l * exp(-2*pi*i*f*d_l/F)` with `g_l ~ CN(0, p_l)`.
    Tdl { delays: Vec<f64>, powers: Vec<f64> },
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            ChannelModel::Rician {
                los_magnitude,
                scatter_variance,
            } => {
                if *los_magnitude < 0.0 || *scatter_variance < 0.0 {
                    return Err(Error::InvalidArgument(
                        "rician parameters must be non-negative".into(),
                    ));
                }
            }
            ChannelModel::Tdl { delays, powers } => {
                if delays.len() != powers.len() || delays.is_empty() {
                    return Err(Error::InvalidArgument(
                        "tdl delays and powers must be nonempty and equal length".into(),
                    ));
                }
                if powers.iter().any(|&p| p < 0.0) {
                    return Err(Error::InvalidArgument("tdl powers must be >= 0".into()));
                }
                let total: f64 = powers.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "tdl powers must sum to 1, got {}",
                        total
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ChannelModel::AwgnOnly => "awgn",
            ChannelModel::FlatRayleigh => "rayleigh",
            ChannelModel::Rician { .. } => "rician",
            ChannelModel::Tdl { .. } => "tdl",
        }
    }

    /// Named presets for the CLI `--channel` flag.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelModel::AwgnOnly),
            "rayleigh" => Ok(ChannelModel::FlatRayleigh),
            "rician" => Ok(ChannelModel::Rician {
                los_magnitude: 1.0,
                scatter_variance: 0.5,
            }),
            "tdl" => Ok(ChannelModel::Tdl {
                delays: vec![0.0, 1.5, 3.0],
                powers: vec![0.6, 0.3, 0.1],
            }),
            other => Err(Error::InvalidArgument(format!(
                "unsupported channel {:?}",
                other
            ))),
        }
    }
}

/// One fading draw: per-antenna channel grid plus the total complex noise
/// variance per received sample.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h: ComplexGrid,
    pub noise_var: f64,
}

fn complex_normal<R: Rng>(variance: f64, rng: &mut R) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    Complex64::new(
        rng.sample::<f64, _>(StandardNormal) * s,
        rng.sample::<f64, _>(StandardNormal) * s,
    )
}

/// Draw one block-fading channel realization for the grid described by
/// `spec`, with total noise variance `noise_var` attached for later use by
/// [`apply_channel`] and the equalizers.
pub fn sample_channel<R: Rng>(
    model: &ChannelModel,
    spec: &ResourceGridSpec,
    noise_var: f64,
    rng: &mut R,
) -> Result<ChannelRealization> {
    model.validate()?;
    if noise_var < 0.0 {
        return Err(Error::InvalidArgument("noise variance must be >= 0".into()));
    }
    let (a_n, f_n, t_n) = (spec.rx_antennas, spec.subcarriers, spec.symbols);
    let mut h = ComplexGrid::zeros(a_n, f_n, t_n);
    match model {
        ChannelModel::AwgnOnly => {
            for v in h.values_mut() {
                *v = Complex64::new(1.0, 0.0);
            }
        }
        ChannelModel::FlatRayleigh => {
            for a in 0..a_n {
                let coeff = complex_normal(1.0, rng);
                for f in 0..f_n {
                    for t in 0..t_n {
                        h.set(a, f, t, coeff);
                    }
                }
            }
        }
        ChannelModel::Rician {
            los_magnitude,
            scatter_variance,
        } => {
            for a in 0..a_n {
                let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let coeff = Complex64::from_polar(*los_magnitude, theta)
                    + complex_normal(*scatter_variance, rng);
                for f in 0..f_n {
                    for t in 0..t_n {
                        h.set(a, f, t, coeff);
                    }
                }
            }
        }
        ChannelModel::Tdl { delays, powers } => {
            for a in 0..a_n {
                let gains: Vec<Complex64> =
                    powers.iter().map(|&p| complex_normal(p, rng)).collect();
                for f in 0..f_n {
                    let mut resp = Complex64::new(0.0, 0.0);
                    for (g, d) in gains.iter().zip(delays.iter()) {
                        let phase = -2.0 * std::f64::consts::PI * f as f64 * d / f_n as f64;
                        resp += g * Complex64::from_polar(1.0, phase);
                    }
                    for t in 0..t_n {
                        h.set(a, f, t, resp);
                    }
                }
            }
        }
    }
    Ok(ChannelRealization { h, noise_var })
}

/// `y_a = h_a .* x + w`, `w ~ CN(0, noise_var)` i.i.d. per sample (real and
/// imaginary parts each `N(0, noise_var/2)`).
pub fn apply_channel<R: Rng>(
    x: &ComplexGrid,
    ch: &ChannelRealization,
    rng: &mut R,
) -> Result<ComplexGrid> {
    if x.antennas() != 1
        || x.subcarriers() != ch.h.subcarriers()
        || x.symbols() != ch.h.symbols()
    {
        return Err(Error::ShapeMismatch(format!(
            "apply_channel: tx grid {}x{}x{} vs channel {}x{}x{}",
            x.antennas(),
            x.subcarriers(),
            x.symbols(),
            ch.h.antennas(),
            ch.h.subcarriers(),
            ch.h.symbols()
        )));
    }
    let (a_n, f_n, t_n) = (ch.h.antennas(), ch.h.subcarriers(), ch.h.symbols());
    let mut y = ComplexGrid::zeros(a_n, f_n, t_n);
    for a in 0..a_n {
        for f in 0..f_n {
            for t in 0..t_n {
                let noise = if ch.noise_var > 0.0 {
                    complex_normal(ch.noise_var, rng)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                y.set(a, f, t, ch.h.get(a, f, t) * x.get(0, f, t) + noise);
            }
        }
    }
    Ok(y)
}
