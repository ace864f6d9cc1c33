//! Cyclic-group machinery: roots of unity, global phase actions on resource
//! grids, lifting, cyclic shifts, circulant matrices, and executable checks
//! that cyclic-shift equivariance of a linear map holds exactly when the map
//! is a circular convolution.
//!
//! Conventions used throughout the crate:
//!
//! * roots of unity `z_k = exp(2*pi*i*k/n)`, `z_0 = 1`;
//! * `cyclic_shift(x, m)[i] = x[(i - m) mod n]`;
//! * circular convolution `(psi * x)[g] = sum_j psi[j] * x[(g - j) mod n]`;
//! * lifting slice `k` of grid `x` is `z_k * x`, so rotating the input by
//!   `z_m` permutes lifted slices: `lift(z_m * x)[k] == lift(x)[(k + m) mod n]`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Cyclic group of order `n`, represented by its precomputed roots of unity.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicGroup {
    order: usize,
    roots: Vec<Complex64>,
}

impl CyclicGroup {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn roots(&self) -> &[Complex64] {
        &self.roots
    }

    /// Root `z_{k mod n}`.
    pub fn root(&self, k: usize) -> Complex64 {
        self.roots[k % self.order]
    }
}

/// Build the cyclic group of order `n` from `z_k = exp(2*pi*i*k/n)`.
pub fn roots_of_unity(n: usize) -> Result<CyclicGroup> {
    if n == 0 {
        return Err(Error::InvalidArgument("group order must be >= 1".into()));
    }
    let roots = (0..n)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            Complex64::new(angle.cos(), angle.sin())
        })
        .collect();
    Ok(CyclicGroup { order: n, roots })
}

/// Complex samples indexed (rx antenna, subcarrier, OFDM symbol).
///
/// Storage is row-major in (a, f, t); a transmit grid is the single-antenna
/// case.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    antennas: usize,
    subcarriers: usize,
    symbols: usize,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(antennas: usize, subcarriers: usize, symbols: usize) -> Self {
        ComplexGrid {
            antennas,
            subcarriers,
            symbols,
            data: vec![Complex64::new(0.0, 0.0); antennas * subcarriers * symbols],
        }
    }

    pub fn from_fn(
        antennas: usize,
        subcarriers: usize,
        symbols: usize,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let mut g = Self::zeros(antennas, subcarriers, symbols);
        for a in 0..antennas {
            for fq in 0..subcarriers {
                for t in 0..symbols {
                    let v = f(a, fq, t);
                    g.set(a, fq, t, v);
                }
            }
        }
        g
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    #[inline]
    fn idx(&self, a: usize, f: usize, t: usize) -> usize {
        (a * self.subcarriers + f) * self.symbols + t
    }

    #[inline]
    pub fn get(&self, a: usize, f: usize, t: usize) -> Complex64 {
        self.data[self.idx(a, f, t)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, f: usize, t: usize, v: Complex64) {
        let i = self.idx(a, f, t);
        self.data[i] = v;
    }

    pub fn values(&self) -> &[Complex64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Scale every sample by `z` without the unit-magnitude check; used
    /// internally where `z` is arbitrary (e.g. channel application).
    pub fn scaled(&self, z: Complex64) -> ComplexGrid {
        ComplexGrid {
            antennas: self.antennas,
            subcarriers: self.subcarriers,
            symbols: self.symbols,
            data: self.data.iter().map(|v| v * z).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &ComplexGrid) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Apply a global phase: multiply every sample by a unit-magnitude `z`.
pub fn rotate_grid(x: &ComplexGrid, z: Complex64) -> Result<ComplexGrid> {
    if (z.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "rotation must have unit magnitude, got |z| = {}",
            z.norm()
        )));
    }
    Ok(x.scaled(z))
}

/// Lift a grid to the group: slice `k` of the result is `z_k * x`.
pub fn lift(x: &ComplexGrid, group: &CyclicGroup) -> Vec<ComplexGrid> {
    group.roots().iter().map(|&z| x.scaled(z)).collect()
}

/// Cyclic shift of a flat row-major array along `axis`:
/// `out[i] = in[(i - m) mod n]` in that axis's index.
pub fn cyclic_shift<T: Clone>(data: &[T], shape: &[usize], axis: usize, m: i64) -> Vec<T> {
    assert!(axis < shape.len(), "axis {} out of range", axis);
    assert_eq!(data.len(), shape.iter().product::<usize>());
    let n = shape[axis] as i64;
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = data.to_vec();
    for o in 0..outer {
        for i in 0..shape[axis] {
            let src = (i as i64 - m).rem_euclid(n) as usize;
            let dst_base = (o * shape[axis] + i) * inner;
            let src_base = (o * shape[axis] + src) * inner;
            out[dst_base..dst_base + inner].clone_from_slice(&data[src_base..src_base + inner]);
        }
    }
    out
}

/// One-dimensional convenience form of [`cyclic_shift`].
pub fn cyclic_shift_slice<T: Clone>(data: &[T], m: i64) -> Vec<T> {
    cyclic_shift(data, &[data.len()], 0, m)
}

/// Circulant matrix with first column `psi`: `A[i][j] = psi[(i - j) mod n]`.
///
/// Multiplying by this matrix is the circular convolution with kernel `psi`.
pub fn circulant_from_kernel<T: Copy>(psi: &[T]) -> Vec<Vec<T>> {
    let n = psi.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| psi[(i as i64 - j as i64).rem_euclid(n as i64) as usize])
                .collect()
        })
        .collect()
}

/// Plain circular convolution on a 1-D sequence:
/// `out[g] = sum_j psi[j] * s[(g - j) mod n]`.
pub fn circular_conv(s: &[Complex64], psi: &[Complex64]) -> Vec<Complex64> {
    let n = s.len();
    (0..n)
        .map(|g| {
            psi.iter()
                .enumerate()
                .map(|(j, &p)| p * s[(g as i64 - j as i64).rem_euclid(n as i64) as usize])
                .sum()
        })
        .collect()
}

/// Apply an n x n matrix to a sequence.
pub fn mat_vec(a: &[Vec<Complex64>], s: &[Complex64]) -> Vec<Complex64> {
    a.iter()
        .map(|row| row.iter().zip(s.iter()).map(|(m, v)| m * v).sum())
        .collect()
}

/// Outcome of a randomized equivariance check.
#[derive(Debug, Clone)]
pub struct TheoremReport {
    pub group_order: usize,
    pub trials: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for TheoremReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "n={} trials={} max_dev={:.3e} tol={:.1e} {}",
            self.group_order,
            self.trials,
            self.max_deviation,
            self.tolerance,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

fn random_complex_seq<R: Rng>(n: usize, rng: &mut R) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

/// Forward direction: a circular convolution commutes with every cyclic
/// shift. Runs random `(s, psi, m)` trials, alternating full-length kernels
/// with shorter kernels zero-extended to length `n`, and reports the largest
/// observed deviation between `shift(conv(s))` and `conv(shift(s))`.
pub fn verify_theorem1_forward<R: Rng>(n: usize, trials: usize, rng: &mut R) -> Result<TheoremReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("group order must be >= 1".into()));
    }
    let tolerance = 1e-12;
    let mut max_dev: f64 = 0.0;
    for trial in 0..trials {
        let s = random_complex_seq(n, rng);
        let mut psi = random_complex_seq(n, rng);
        if trial % 2 == 1 && n > 1 {
            // Partial kernel: only the first k_g taps are nonzero.
            let k_g = rng.random_range(1..=n);
            for tap in psi.iter_mut().skip(k_g) {
                *tap = Complex64::new(0.0, 0.0);
            }
        }
        let m = rng.random_range(0..n) as i64;
        let lhs = cyclic_shift_slice(&circular_conv(&s, &psi), m);
        let rhs = circular_conv(&cyclic_shift_slice(&s, m), &psi);
        let dev = lhs
            .iter()
            .zip(rhs.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        max_dev = max_dev.max(dev);
    }
    Ok(TheoremReport {
        group_order: n,
        trials,
        max_deviation: max_dev,
        tolerance,
        passed: max_dev <= tolerance,
    })
}

type Mat = Vec<Vec<f64>>;

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Permutation matrix of the shift-by-one action: `(P x)[i] = x[(i - 1) mod n]`.
fn shift_matrix(n: usize) -> Mat {
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        p[i][(i + n - 1) % n] = 1.0;
    }
    p
}

fn max_abs(a: &Mat) -> f64 {
    a.iter()
        .flat_map(|row| row.iter())
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

fn mat_sub(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b.iter())
        .map(|(ra, rb)| ra.iter().zip(rb.iter()).map(|(x, y)| x - y).collect())
        .collect()
}

/// Commutator norm `max |AP - PA|`.
fn commutator_norm(a: &Mat, p: &Mat) -> f64 {
    max_abs(&mat_sub(&mat_mul(a, p), &mat_mul(p, a)))
}

/// Project a matrix onto the commutant of the cyclic shift by averaging its
/// conjugates: `(1/n) * sum_k P^k A P^{-k}`.
pub fn commutant_projection(a: &Mat) -> Mat {
    let n = a.len();
    let p = shift_matrix(n);
    let mut pk = identity(n);
    let mut acc = vec![vec![0.0; n]; n];
    for _ in 0..n {
        // P^k A P^{-k}; P^{-1} = P^T for a permutation matrix.
        let conj = mat_mul(&mat_mul(&pk, a), &transpose(&pk));
        for i in 0..n {
            for j in 0..n {
                acc[i][j] += conj[i][j] / n as f64;
            }
        }
        pk = mat_mul(&pk, &p);
    }
    acc
}

fn identity(n: usize) -> Mat {
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn transpose(a: &Mat) -> Mat {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| a[j][i]).collect()).collect()
}

/// Largest deviation of `A` from circulant structure: entries must depend
/// only on `(i - j) mod n`.
fn circulant_deviation(a: &Mat) -> f64 {
    let n = a.len();
    let mut dev: f64 = 0.0;
    for d in 0..n {
        // All entries on diagonal class d should equal A[d][0].
        let reference = a[d][0];
        for j in 0..n {
            let i = (j + d) % n;
            dev = dev.max((a[i][j] - reference).abs());
        }
    }
    dev
}

/// Report of the converse check: every shift-equivariant linear map is
/// circulant.
#[derive(Debug, Clone)]
pub struct ConverseReport {
    pub group_order: usize,
    pub trials: usize,
    pub max_commutator: f64,
    pub max_circulant_deviation: f64,
    pub noncirculant_rejected: bool,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for ConverseReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "n={} trials={} max_comm={:.3e} max_circ_dev={:.3e} reject_noncirc={} {}",
            self.group_order,
            self.trials,
            self.max_commutator,
            self.max_circulant_deviation,
            self.noncirculant_rejected,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

/// Converse direction, checked numerically: averaging random matrices over
/// shift conjugation lands on the commutant of `P`, and everything in that
/// commutant is circulant. A generic random matrix must fail the commutation
/// test before projection.
pub fn verify_theorem1_converse<R: Rng>(
    n: usize,
    trials: usize,
    rng: &mut R,
) -> Result<ConverseReport> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "converse check needs group order >= 2".into(),
        ));
    }
    let tolerance = 1e-10;
    let p = shift_matrix(n);
    let mut max_comm: f64 = 0.0;
    let mut max_circ: f64 = 0.0;
    let mut noncirculant_rejected = true;
    for _ in 0..trials {
        let a: Mat = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let projected = commutant_projection(&a);
        max_comm = max_comm.max(commutator_norm(&projected, &p));
        max_circ = max_circ.max(circulant_deviation(&projected));
        // A raw random matrix is non-circulant with probability one and must
        // visibly fail the commutation test.
        if commutator_norm(&a, &p) < 1e-6 {
            noncirculant_rejected = false;
        }
    }
    let passed = max_comm <= tolerance && max_circ <= tolerance && noncirculant_rejected;
    Ok(ConverseReport {
        group_order: n,
        trials,
        max_commutator: max_comm,
        max_circulant_deviation: max_circ,
        noncirculant_rejected,
        tolerance,
        passed,
    })
}
