//! Central-difference gradient checking. Runs in 64-bit only; the builder
//! closure re-evaluates the forward pass at perturbed parameter values, so
//! it must be pure.

use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct FiniteDiffEntry {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub entries: Vec<FiniteDiffEntry>,
    pub tol: f64,
}

impl FiniteDiffReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tol
    }
}

impl std::fmt::Display for FiniteDiffReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "finite-diff max_rel_err={:.3e} tol={:.1e} {}",
            self.max_rel_err(),
            self.tol,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

/// Compare tape gradients of `build`'s scalar output against central
/// differences with step `h`. Per parameter the reported figure is
/// `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-12)` with `|.|` the max-abs
/// norm over that parameter's elements, so an isolated zero-crossing of
/// the derivative does not blow up the comparison.
pub fn finite_diff_check<B>(
    build: B,
    params: &[(String, Tensor<f64>)],
    h: f64,
    tol: f64,
) -> Result<FiniteDiffReport>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = build(&mut tape, &vars)?;
        let v = tape.value(loss);
        if v.numel() != 1 {
            return Err(Error::InvalidArgument(
                "finite_diff_check needs a scalar output".into(),
            ));
        }
        let out = v.data()[0];
        if !out.is_finite() {
            return Err(Error::NonFinite("finite_diff_check forward".into()));
        }
        Ok(out)
    };

    // Analytic gradients in one recorded pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|(_, t)| tape.leaf(t.clone(), true))
        .collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; tape.value(v).numel()])
        })
        .collect();

    let base: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut entries = Vec::with_capacity(params.len());
    for (pi, (name, tensor)) in params.iter().enumerate() {
        let mut max_diff = 0.0f64;
        let mut norm_ad = 0.0f64;
        let mut norm_fd = 0.0f64;
        for e in 0..tensor.numel() {
            let mut plus = base.clone();
            plus[pi].data_mut()[e] += h;
            let mut minus = base.clone();
            minus[pi].data_mut()[e] -= h;
            let g_fd = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let g_ad = grads[pi][e];
            max_diff = max_diff.max((g_ad - g_fd).abs());
            norm_ad = norm_ad.max(g_ad.abs());
            norm_fd = norm_fd.max(g_fd.abs());
        }
        entries.push(FiniteDiffEntry {
            name: name.clone(),
            max_rel_err: max_diff / norm_ad.max(norm_fd).max(1e-12),
        });
    }
    Ok(FiniteDiffReport { entries, tol })
}
