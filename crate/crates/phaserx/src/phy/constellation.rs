//! Square Gray-coded QAM constellations, normalized to unit average energy.
//!
//! Bit convention per symbol: the first half of the k bits selects the real
//! amplitude, the second half the imaginary amplitude. Amplitudes run from
//! most positive (all-zero Gray codeword) to most negative, so QPSK maps
//! bits (0,0) to (+1+i)/sqrt(2), the first bit being the real-axis sign.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConstellationKind {
    Qpsk,
    Qam16,
    Qam64,
    Qam256,
}

impl ConstellationKind {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            ConstellationKind::Qpsk => 2,
            ConstellationKind::Qam16 => 4,
            ConstellationKind::Qam64 => 6,
            ConstellationKind::Qam256 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstellationKind::Qpsk => "qpsk",
            ConstellationKind::Qam16 => "qam16",
            ConstellationKind::Qam64 => "qam64",
            ConstellationKind::Qam256 => "qam256",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "qpsk" => Ok(ConstellationKind::Qpsk),
            "qam16" | "16qam" => Ok(ConstellationKind::Qam16),
            "qam64" | "64qam" => Ok(ConstellationKind::Qam64),
            "qam256" | "256qam" => Ok(ConstellationKind::Qam256),
            other => Err(Error::InvalidArgument(format!(
                "unsupported constellation {:?}",
                other
            ))),
        }
    }
}

/// Constellation table: `points[m]` is the symbol whose Gray label is the
/// k-bit pattern of `m` (first bit most significant).
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    kind: ConstellationKind,
    bits_per_symbol: usize,
    points: Vec<Complex64>,
}

/// Binary value of a Gray codeword (inverse of `i ^ (i >> 1)`).
fn gray_decode(mut g: usize) -> usize {
    let mut b = g;
    while g > 1 {
        g >>= 1;
        b ^= g;
    }
    b
}

pub fn make_constellation(kind: ConstellationKind) -> Constellation {
    let k = kind.bits_per_symbol();
    let half = k / 2;
    let levels = 1usize << half;
    // Per-axis PAM levels {..., -3, -1, +1, +3, ...}; the unnormalized
    // lattice has mean energy 2*(L^2 - 1)/3.
    let scale = (3.0 / (2.0 * ((levels * levels - 1) as f64))).sqrt();
    let amplitude = |bits: usize| -> f64 {
        let idx = gray_decode(bits);
        ((levels - 1) as f64 - 2.0 * idx as f64) * scale
    };
    let points = (0..1usize << k)
        .map(|m| Complex64::new(amplitude(m >> half), amplitude(m & (levels - 1))))
        .collect();
    Constellation {
        kind,
        bits_per_symbol: k,
        points,
    }
}

impl Constellation {
    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Label bit `b` (0 = first) of point index `m`.
    pub fn label_bit(&self, m: usize, b: usize) -> u8 {
        ((m >> (self.bits_per_symbol - 1 - b)) & 1) as u8
    }

    pub fn average_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }

    /// Index of the nearest constellation point; the hard-decision oracle.
    pub fn nearest_point(&self, x: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (m, p) in self.points.iter().enumerate() {
            let d = (x - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = m;
            }
        }
        best
    }
}

/// Map a bit sequence onto constellation symbols, k bits per symbol.
pub fn map_bits(bits: &[u8], constellation: &Constellation) -> Result<Vec<Complex64>> {
    let k = constellation.bits_per_symbol();
    if bits.len() % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "bit count {} not divisible by {}",
            bits.len(),
            k
        )));
    }
    Ok(bits
        .chunks(k)
        .map(|chunk| {
            let m = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
            constellation.points()[m]
        })
        .collect())
}
