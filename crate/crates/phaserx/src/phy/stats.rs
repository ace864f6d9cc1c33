//! Small statistics helpers used by the verification suites: the Gaussian
//! tail function for analytic BER targets and Kolmogorov-Smirnov tests for
//! distribution checks.

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Analytic uncoded BER of Gray-coded QPSK over AWGN with matched-filter
/// detection: `Q(sqrt(2 * Eb/N0))`.
pub fn qpsk_awgn_ber(ebno_db: f64) -> f64 {
    let ebno = 10f64.powf(ebno_db / 10.0);
    q_function((2.0 * ebno).sqrt())
}

/// Binomial standard error of a BER estimate from `bits` observations at
/// true error probability `p`.
pub fn ber_standard_error(p: f64, bits: usize) -> f64 {
    (p * (1.0 - p) / bits as f64).sqrt()
}

/// Asymptotic one-sample Kolmogorov-Smirnov critical value at alpha = 0.01.
fn ks_critical(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// One-sample KS test of `samples` against U(lo, hi) at alpha = 0.01.
pub fn ks_uniform_pass(samples: &[f64], lo: f64, hi: f64) -> bool {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        d = d.max((cdf - i as f64 / n as f64).abs());
        d = d.max(((i + 1) as f64 / n as f64 - cdf).abs());
    }
    d <= ks_critical(n)
}

/// Two-sample KS test at alpha = 0.01.
pub fn ks_two_sample_pass(a: &[f64], b: &[f64]) -> bool {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (sa.len(), sb.len());
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        if sa[i] <= sb[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let critical = 1.628 * (((n + m) as f64) / (n as f64 * m as f64)).sqrt();
    d <= critical
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    #[test]
    fn q_function_reference_points() {
        assert!((qpsk_awgn_ber(0.0) - 7.865e-2).abs() < 1e-5);
        assert!((qpsk_awgn_ber(4.0) - 1.250e-2).abs() < 1e-5);
        assert!((qpsk_awgn_ber(8.0) - 1.909e-4).abs() < 1e-7);
    }

    #[test]
    fn ks_accepts_uniform_rejects_skewed() {
        let mut rng = derive_rng(41, 0);
        let uniform: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..1.0)).collect();
        assert!(ks_uniform_pass(&uniform, 0.0, 1.0));
        let skewed: Vec<f64> = uniform.iter().map(|x| x * x).collect();
        assert!(!ks_uniform_pass(&skewed, 0.0, 1.0));
    }

    #[test]
    fn ks_two_sample_sanity() {
        let mut rng = derive_rng(41, 1);
        let a: Vec<f64> = (0..8_000).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..8_000).map(|_| rng.random_range(0.0..1.0)).collect();
        assert!(ks_two_sample_pass(&a, &b));
        let shifted: Vec<f64> = a.iter().map(|x| x + 0.1).collect();
        assert!(!ks_two_sample_pass(&a, &shifted));
    }
}
