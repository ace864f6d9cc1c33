//! Recording tape. Forward calls append op records in topological order;
//! `backward` replays them once in reverse, accumulating gradients
//! additively into shared inputs.
//!
//! Network activations use the layout [group, freq, time, channel] with the
//! channel axis contiguous, so pointwise ops and LayerNorm act on the last
//! axis, the spatial depthwise convolution on the middle two, and the
//! circular group convolution on axis 0.

use crate::error::{Error, Result};
use crate::real::{normal_cdf, Real};

use super::Tensor;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node<F> {
    value: Tensor<F>,
    grad: Option<Vec<F>>,
    requires_grad: bool,
}

#[derive(Clone)]
enum OpRecord {
    PointwiseLinear { x: Var, w: Var, b: Var, out: Var },
    DepthwiseConvFt { x: Var, kernel: Var, dilation: (usize, usize), out: Var },
    CircularGroupConv { x: Var, kernel: Var, out: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64, out: Var },
    Gelu { x: Var, out: Var },
    MeanOverGroup { x: Var, out: Var },
    Add { a: Var, b: Var, out: Var },
    Mul { a: Var, b: Var, out: Var },
    Sum { x: Var, out: Var },
    Reshape { x: Var, out: Var },
    ConcatLast { xs: Vec<Var>, out: Var },
    SelectTime { x: Var, cols: Vec<usize>, out: Var },
    BceWithLogits { logits: Var, labels: Var, out: Var },
}

pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    ops: Vec<OpRecord>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
        }
    }

    /// Register an input tensor. Only leaves with `requires_grad` (and ops
    /// downstream of them) participate in the backward pass.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
        });
        Var(id)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of a tensor after `backward`; `None` if no gradient flowed
    /// to it.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        self.nodes[v.0].grad.as_ref().map(|g| {
            Tensor::from_vec(self.nodes[v.0].value.shape(), g.clone()).expect("grad shape")
        })
    }

    fn push(&mut self, value: Tensor<F>, requires_grad: bool, opname: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(opname.to_string()));
        }
        Ok(self.leaf(value, requires_grad))
    }

    fn requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn accumulate(&mut self, v: Var, delta: &[F]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        debug_assert_eq!(delta.len(), n);
        let grad = self.nodes[v.0]
            .grad
            .get_or_insert_with(|| vec![F::zero(); n]);
        for (g, d) in grad.iter_mut().zip(delta.iter()) {
            *g += *d;
        }
    }

    fn take_out_grad(&self, out: Var) -> Option<Vec<F>> {
        self.nodes[out.0].grad.clone()
    }

    // ---- forward ops -----------------------------------------------------

    /// `out[..., j] = sum_i x[..., i] * w[i, j] + b[j]`, weights shared
    /// across all leading axes.
    pub fn pointwise_linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (c_in, c_out) = {
            let ws = self.value(w).shape();
            if ws.len() != 2 {
                return Err(Error::ShapeMismatch(format!(
                    "pointwise_linear weight must be 2-d, got {:?}",
                    ws
                )));
            }
            (ws[0], ws[1])
        };
        let xs = self.value(x).shape().to_vec();
        if xs.last().copied() != Some(c_in) {
            return Err(Error::ShapeMismatch(format!(
                "pointwise_linear: input last axis {:?} != C_in {}",
                xs.last(),
                c_in
            )));
        }
        if self.value(b).shape() != [c_out] {
            return Err(Error::ShapeMismatch(format!(
                "pointwise_linear: bias shape {:?} != [{}]",
                self.value(b).shape(),
                c_out
            )));
        }
        let rows = self.value(x).numel() / c_in;
        let mut out_shape = xs.clone();
        *out_shape.last_mut().unwrap() = c_out;
        let mut out = vec![F::zero(); rows * c_out];
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let bd = self.value(b).data();
            for r in 0..rows {
                let orow = &mut out[r * c_out..(r + 1) * c_out];
                orow.copy_from_slice(bd);
                let xrow = &xd[r * c_in..(r + 1) * c_in];
                for (i, &xv) in xrow.iter().enumerate() {
                    let wrow = &wd[i * c_out..(i + 1) * c_out];
                    for (o, &wv) in orow.iter_mut().zip(wrow.iter()) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let req = self.requires(&[x, w, b]);
        let out = self.push(Tensor::from_vec(&out_shape, out)?, req, "pointwise_linear")?;
        self.ops.push(OpRecord::PointwiseLinear { x, w, b, out });
        Ok(out)
    }

    /// Per-channel 2-d correlation over the (freq, time) axes with zero
    /// padding; the group axis is untouched. Input [G, F, T, C], kernel
    /// [C, k_f, k_t], odd kernel sizes, "same" output extent.
    pub fn depthwise_conv_ft(
        &mut self,
        x: Var,
        kernel: Var,
        dilation: (usize, usize),
    ) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        if xs.len() != 4 || ks.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "depthwise_conv_ft wants x [G,F,T,C] and kernel [C,k_f,k_t], got {:?} / {:?}",
                xs, ks
            )));
        }
        let (g_n, f_n, t_n, c_n) = (xs[0], xs[1], xs[2], xs[3]);
        let (kc, kf, kt) = (ks[0], ks[1], ks[2]);
        if kc != c_n {
            return Err(Error::ShapeMismatch(format!(
                "depthwise kernel channels {} != input channels {}",
                kc, c_n
            )));
        }
        if kf % 2 == 0 || kt % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "depthwise kernel sizes must be odd, got {}x{}",
                kf, kt
            )));
        }
        if dilation.0 == 0 || dilation.1 == 0 {
            return Err(Error::InvalidArgument("dilation must be >= 1".into()));
        }
        let out = {
            let xd = self.value(x).data();
            let kd = self.value(kernel).data();
            // [k_f, k_t, C] copy so the channel loop is contiguous.
            let mut kt_buf = vec![F::zero(); kc * kf * kt];
            for c in 0..c_n {
                for i in 0..kf {
                    for j in 0..kt {
                        kt_buf[(i * kt + j) * c_n + c] = kd[(c * kf + i) * kt + j];
                    }
                }
            }
            conv_ft_forward(xd, &kt_buf, g_n, f_n, t_n, c_n, kf, kt, dilation)
        };
        let req = self.requires(&[x, kernel]);
        let out = self.push(Tensor::from_vec(&xs, out)?, req, "depthwise_conv_ft")?;
        self.ops.push(OpRecord::DepthwiseConvFt {
            x,
            kernel,
            dilation,
            out,
        });
        Ok(out)
    }

    /// Depthwise circular convolution along the group axis:
    /// `out[g] = sum_j psi[j] * x[(g - j) mod G]`, per channel.
    pub fn circular_group_conv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        if xs.len() != 4 || ks.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "circular_group_conv wants x [G,F,T,C] and kernel [C,k_g], got {:?} / {:?}",
                xs, ks
            )));
        }
        let (g_n, inner, c_n) = (xs[0], xs[1] * xs[2], xs[3]);
        let (kc, kg) = (ks[0], ks[1]);
        if kc != c_n {
            return Err(Error::ShapeMismatch(format!(
                "group kernel channels {} != input channels {}",
                kc, c_n
            )));
        }
        if kg == 0 || kg > g_n {
            return Err(Error::InvalidArgument(format!(
                "group kernel size {} must be in 1..={}",
                kg, g_n
            )));
        }
        let out = {
            let xd = self.value(x).data();
            let kd = self.value(kernel).data();
            let mut out = vec![F::zero(); xd.len()];
            let stride = inner * c_n;
            for g in 0..g_n {
                let orow = &mut out[g * stride..(g + 1) * stride];
                for j in 0..kg {
                    let src = (g + g_n - j) % g_n;
                    let xrow = &xd[src * stride..(src + 1) * stride];
                    for p in 0..inner {
                        let ob = &mut orow[p * c_n..(p + 1) * c_n];
                        let xb = &xrow[p * c_n..(p + 1) * c_n];
                        for c in 0..c_n {
                            ob[c] += kd[c * kg + j] * xb[c];
                        }
                    }
                }
            }
            out
        };
        let req = self.requires(&[x, kernel]);
        let out = self.push(Tensor::from_vec(&xs, out)?, req, "circular_group_conv")?;
        self.ops.push(OpRecord::CircularGroupConv { x, kernel, out });
        Ok(out)
    }

    /// Normalize over the channel (last) axis with population variance:
    /// `(x - mean) / sqrt(var + eps) * gamma + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let c = *xs.last().ok_or_else(|| {
            Error::ShapeMismatch("layer_norm input must have at least one axis".into())
        })?;
        if c == 0 {
            return Err(Error::InvalidArgument("layer_norm over zero channels".into()));
        }
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::ShapeMismatch(format!(
                "layer_norm gamma/beta must be [{}], got {:?}/{:?}",
                c,
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        let rows = self.value(x).numel() / c;
        let out = {
            let xd = self.value(x).data();
            let gd = self.value(gamma).data();
            let bd = self.value(beta).data();
            let eps = F::from_f64(eps);
            let inv_c = F::one() / F::from_f64(c as f64);
            let mut out = vec![F::zero(); xd.len()];
            for r in 0..rows {
                let xrow = &xd[r * c..(r + 1) * c];
                let orow = &mut out[r * c..(r + 1) * c];
                let mut mean = F::zero();
                for &v in xrow {
                    mean += v;
                }
                mean *= inv_c;
                let mut var = F::zero();
                for &v in xrow {
                    var += (v - mean) * (v - mean);
                }
                var *= inv_c;
                let inv_std = F::one() / (var + eps).sqrt();
                for i in 0..c {
                    orow[i] = (xrow[i] - mean) * inv_std * gd[i] + bd[i];
                }
            }
            out
        };
        let req = self.requires(&[x, gamma, beta]);
        let out = self.push(Tensor::from_vec(&xs, out)?, req, "layer_norm")?;
        self.ops.push(OpRecord::LayerNorm {
            x,
            gamma,
            beta,
            eps,
            out,
        });
        Ok(out)
    }

    /// Exact GeLU `x * Phi(x)` with the erf-based normal CDF.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let out: Vec<F> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v * normal_cdf(v))
            .collect();
        let req = self.requires(&[x]);
        let out = self.push(Tensor::from_vec(&shape, out)?, req, "gelu")?;
        self.ops.push(OpRecord::Gelu { x, out });
        Ok(out)
    }

    /// Arithmetic mean along the group (first) axis: [G, ...] -> [...].
    pub fn mean_over_group(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.is_empty() {
            return Err(Error::ShapeMismatch("mean_over_group needs a group axis".into()));
        }
        let g_n = xs[0];
        let rest: usize = xs[1..].iter().product();
        let out_shape: Vec<usize> = if xs.len() == 1 { vec![1] } else { xs[1..].to_vec() };
        let out = {
            let xd = self.value(x).data();
            let inv_g = F::one() / F::from_f64(g_n as f64);
            let mut out = vec![F::zero(); rest.max(1)];
            for g in 0..g_n {
                let xrow = &xd[g * rest..(g + 1) * rest];
                for (o, &v) in out.iter_mut().zip(xrow.iter()) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o *= inv_g;
            }
            out
        };
        let req = self.requires(&[x]);
        let out = self.push(Tensor::from_vec(&out_shape, out)?, req, "mean_over_group")?;
        self.ops.push(OpRecord::MeanOverGroup { x, out });
        Ok(out)
    }

    /// Elementwise sum; the residual connection.
    pub fn residual_add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch(format!(
                "residual_add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let shape = self.value(a).shape().to_vec();
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let req = self.requires(&[a, b]);
        let out = self.push(Tensor::from_vec(&shape, out)?, req, "residual_add")?;
        self.ops.push(OpRecord::Add { a, b, out });
        Ok(out)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch(format!(
                "mul: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let shape = self.value(a).shape().to_vec();
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(&x, &y)| x * y)
            .collect();
        let req = self.requires(&[a, b]);
        let out = self.push(Tensor::from_vec(&shape, out)?, req, "mul")?;
        self.ops.push(OpRecord::Mul { a, b, out });
        Ok(out)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let mut total = F::zero();
        for &v in self.value(x).data() {
            total += v;
        }
        let req = self.requires(&[x]);
        let out = self.push(Tensor::scalar(total), req, "sum")?;
        self.ops.push(OpRecord::Sum { x, out });
        Ok(out)
    }

    pub fn reshape(&mut self, x: Var, new_shape: &[usize]) -> Result<Var> {
        let numel: usize = new_shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::ShapeMismatch(format!(
                "reshape {:?} -> {:?}",
                self.value(x).shape(),
                new_shape
            )));
        }
        let data = self.value(x).data().to_vec();
        let req = self.requires(&[x]);
        let out = self.push(Tensor::from_vec(new_shape, data)?, req, "reshape")?;
        self.ops.push(OpRecord::Reshape { x, out });
        Ok(out)
    }

    /// Concatenate along the last axis; all leading axes must match.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let lead = self.value(xs[0]).shape()[..self.value(xs[0]).shape().len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.value(v).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::ShapeMismatch(format!(
                    "concat_last leading axes differ: {:?} vs {:?}",
                    &s[..s.len() - 1],
                    lead
                )));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out_shape = lead.clone();
        out_shape.push(total);
        let mut out = vec![F::zero(); rows * total];
        let mut offset = 0;
        for (&v, &w) in xs.iter().zip(widths.iter()) {
            let d = self.value(v).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let req = self.requires(xs);
        let out = self.push(Tensor::from_vec(&out_shape, out)?, req, "concat_last")?;
        self.ops.push(OpRecord::ConcatLast { xs: xs.to_vec(), out });
        Ok(out)
    }

    /// Keep only the given time columns of a [F, T, C] tensor.
    pub fn select_time(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "select_time wants [F, T, C], got {:?}",
                xs
            )));
        }
        let (f_n, t_n, c_n) = (xs[0], xs[1], xs[2]);
        if cols.iter().any(|&t| t >= t_n) {
            return Err(Error::InvalidArgument(format!(
                "time column out of range 0..{}",
                t_n
            )));
        }
        let out_shape = [f_n, cols.len(), c_n];
        let mut out = vec![F::zero(); f_n * cols.len() * c_n];
        {
            let xd = self.value(x).data();
            for f in 0..f_n {
                for (ti, &t) in cols.iter().enumerate() {
                    let src = (f * t_n + t) * c_n;
                    let dst = (f * cols.len() + ti) * c_n;
                    out[dst..dst + c_n].copy_from_slice(&xd[src..src + c_n]);
                }
            }
        }
        let req = self.requires(&[x]);
        let out = self.push(Tensor::from_vec(&out_shape, out)?, req, "select_time")?;
        self.ops.push(OpRecord::SelectTime {
            x,
            cols: cols.to_vec(),
            out,
        });
        Ok(out)
    }

    /// Numerically stable binary cross-entropy with logits, mean over
    /// elements: `max(z, 0) - z*y + log(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Var) -> Result<Var> {
        if self.value(logits).shape() != self.value(labels).shape() {
            return Err(Error::ShapeMismatch(format!(
                "bce_with_logits: {:?} vs {:?}",
                self.value(logits).shape(),
                self.value(labels).shape()
            )));
        }
        if self
            .value(labels)
            .data()
            .iter()
            .any(|&y| y != F::zero() && y != F::one())
        {
            return Err(Error::InvalidArgument(
                "bce_with_logits labels must be exactly 0 or 1".into(),
            ));
        }
        let n = F::from_f64(self.value(logits).numel() as f64);
        let mut total = F::zero();
        for (&z, &y) in self
            .value(logits)
            .data()
            .iter()
            .zip(self.value(labels).data().iter())
        {
            let pos = if z > F::zero() { z } else { F::zero() };
            total += pos - z * y + (F::one() + (-z.abs()).exp()).ln();
        }
        let req = self.requires(&[logits]);
        let out = self.push(Tensor::scalar(total / n), req, "bce_with_logits")?;
        self.ops.push(OpRecord::BceWithLogits { logits, labels, out });
        Ok(out)
    }

    // ---- backward --------------------------------------------------------

    /// Populate gradients of everything reachable from `loss` that requires
    /// them. `loss` must be scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.nodes[loss.0].grad = Some(vec![F::one()]);
        for idx in (0..self.ops.len()).rev() {
            let op = self.ops[idx].clone();
            self.backward_op(&op);
        }
        Ok(())
    }

    fn backward_op(&mut self, op: &OpRecord) {
        match op {
            OpRecord::PointwiseLinear { x, w, b, out } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                let c_in = self.value(*w).shape()[0];
                let c_out = self.value(*w).shape()[1];
                let rows = self.value(*x).numel() / c_in;
                if self.nodes[x.0].requires_grad {
                    let wd = self.value(*w).data();
                    let mut dx = vec![F::zero(); rows * c_in];
                    for r in 0..rows {
                        let dyr = &dy[r * c_out..(r + 1) * c_out];
                        let dxr = &mut dx[r * c_in..(r + 1) * c_in];
                        for i in 0..c_in {
                            let wrow = &wd[i * c_out..(i + 1) * c_out];
                            let mut s = F::zero();
                            for (dv, wv) in dyr.iter().zip(wrow.iter()) {
                                s += *dv * *wv;
                            }
                            dxr[i] = s;
                        }
                    }
                    self.accumulate(*x, &dx);
                }
                if self.nodes[w.0].requires_grad {
                    let xd = self.value(*x).data();
                    let mut dw = vec![F::zero(); c_in * c_out];
                    for r in 0..rows {
                        let xrow = &xd[r * c_in..(r + 1) * c_in];
                        let dyr = &dy[r * c_out..(r + 1) * c_out];
                        for (i, &xv) in xrow.iter().enumerate() {
                            let dwrow = &mut dw[i * c_out..(i + 1) * c_out];
                            for (dwv, &dv) in dwrow.iter_mut().zip(dyr.iter()) {
                                *dwv += xv * dv;
                            }
                        }
                    }
                    self.accumulate(*w, &dw);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![F::zero(); c_out];
                    for r in 0..rows {
                        for (dbv, &dv) in db.iter_mut().zip(dy[r * c_out..(r + 1) * c_out].iter()) {
                            *dbv += dv;
                        }
                    }
                    self.accumulate(*b, &db);
                }
            }
            OpRecord::DepthwiseConvFt {
                x,
                kernel,
                dilation,
                out,
            } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                let xs = self.value(*x).shape().to_vec();
                let ks = self.value(*kernel).shape().to_vec();
                let (g_n, f_n, t_n, c_n) = (xs[0], xs[1], xs[2], xs[3]);
                let (kf, kt) = (ks[1], ks[2]);
                let (cf, ct) = ((kf - 1) / 2, (kt - 1) / 2);
                let (df, dt) = *dilation;
                if self.nodes[x.0].requires_grad {
                    // dX is a correlation of dY with the flipped kernel;
                    // scatter form keeps the padding logic in one place.
                    let kd = self.value(*kernel).data();
                    let mut kt_buf = vec![F::zero(); c_n * kf * kt];
                    for c in 0..c_n {
                        for i in 0..kf {
                            for j in 0..kt {
                                kt_buf[(i * kt + j) * c_n + c] = kd[(c * kf + i) * kt + j];
                            }
                        }
                    }
                    let mut dx = vec![F::zero(); self.value(*x).numel()];
                    for g in 0..g_n {
                        for f in 0..f_n {
                            for t in 0..t_n {
                                let dyb = (((g * f_n + f) * t_n) + t) * c_n;
                                let dyrow = &dy[dyb..dyb + c_n];
                                for i in 0..kf {
                                    let fi = f as i64 + (i as i64 - cf as i64) * df as i64;
                                    if fi < 0 || fi >= f_n as i64 {
                                        continue;
                                    }
                                    for j in 0..kt {
                                        let ti = t as i64 + (j as i64 - ct as i64) * dt as i64;
                                        if ti < 0 || ti >= t_n as i64 {
                                            continue;
                                        }
                                        let xb = (((g * f_n + fi as usize) * t_n)
                                            + ti as usize)
                                            * c_n;
                                        let krow = &kt_buf[(i * kt + j) * c_n..(i * kt + j + 1) * c_n];
                                        let dxrow = &mut dx[xb..xb + c_n];
                                        for c in 0..c_n {
                                            dxrow[c] += krow[c] * dyrow[c];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(*x, &dx);
                }
                if self.nodes[kernel.0].requires_grad {
                    let xd = self.value(*x).data();
                    let mut dk = vec![F::zero(); c_n * kf * kt];
                    for g in 0..g_n {
                        for f in 0..f_n {
                            for t in 0..t_n {
                                let dyb = (((g * f_n + f) * t_n) + t) * c_n;
                                let dyrow = &dy[dyb..dyb + c_n];
                                for i in 0..kf {
                                    let fi = f as i64 + (i as i64 - cf as i64) * df as i64;
                                    if fi < 0 || fi >= f_n as i64 {
                                        continue;
                                    }
                                    for j in 0..kt {
                                        let ti = t as i64 + (j as i64 - ct as i64) * dt as i64;
                                        if ti < 0 || ti >= t_n as i64 {
                                            continue;
                                        }
                                        let xb = (((g * f_n + fi as usize) * t_n)
                                            + ti as usize)
                                            * c_n;
                                        let xrow = &xd[xb..xb + c_n];
                                        for c in 0..c_n {
                                            dk[(c * kf + i) * kt + j] += xrow[c] * dyrow[c];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(*kernel, &dk);
                }
            }
            OpRecord::CircularGroupConv { x, kernel, out } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                let xs = self.value(*x).shape().to_vec();
                let (g_n, inner, c_n) = (xs[0], xs[1] * xs[2], xs[3]);
                let kg = self.value(*kernel).shape()[1];
                let stride = inner * c_n;
                if self.nodes[x.0].requires_grad {
                    // dX[g'] = sum_j psi[j] * dY[(g' + j) mod G]
                    let kd = self.value(*kernel).data();
                    let mut dx = vec![F::zero(); self.value(*x).numel()];
                    for gp in 0..g_n {
                        let dxrow = &mut dx[gp * stride..(gp + 1) * stride];
                        for j in 0..kg {
                            let gsrc = (gp + j) % g_n;
                            let dyrow = &dy[gsrc * stride..(gsrc + 1) * stride];
                            for p in 0..inner {
                                let db = &mut dxrow[p * c_n..(p + 1) * c_n];
                                let yb = &dyrow[p * c_n..(p + 1) * c_n];
                                for c in 0..c_n {
                                    db[c] += kd[c * kg + j] * yb[c];
                                }
                            }
                        }
                    }
                    self.accumulate(*x, &dx);
                }
                if self.nodes[kernel.0].requires_grad {
                    let xd = self.value(*x).data();
                    let mut dk = vec![F::zero(); c_n * kg];
                    for g in 0..g_n {
                        let dyrow = &dy[g * stride..(g + 1) * stride];
                        for j in 0..kg {
                            let gsrc = (g + g_n - j) % g_n;
                            let xrow = &xd[gsrc * stride..(gsrc + 1) * stride];
                            for p in 0..inner {
                                let yb = &dyrow[p * c_n..(p + 1) * c_n];
                                let xb = &xrow[p * c_n..(p + 1) * c_n];
                                for c in 0..c_n {
                                    dk[c * kg + j] += xb[c] * yb[c];
                                }
                            }
                        }
                    }
                    self.accumulate(*kernel, &dk);
                }
            }
            OpRecord::LayerNorm {
                x,
                gamma,
                beta,
                eps,
                out,
            } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                let c = *self.value(*x).shape().last().unwrap();
                let rows = self.value(*x).numel() / c;
                let xd = self.value(*x).data().to_vec();
                let gd = self.value(*gamma).data().to_vec();
                let eps_f = F::from_f64(*eps);
                let inv_c = F::one() / F::from_f64(c as f64);
                let need_dx = self.nodes[x.0].requires_grad;
                let need_dg = self.nodes[gamma.0].requires_grad;
                let need_db = self.nodes[beta.0].requires_grad;
                let mut dx = if need_dx { vec![F::zero(); xd.len()] } else { Vec::new() };
                let mut dg = vec![F::zero(); c];
                let mut db = vec![F::zero(); c];
                for r in 0..rows {
                    let xrow = &xd[r * c..(r + 1) * c];
                    let dyr = &dy[r * c..(r + 1) * c];
                    let mut mean = F::zero();
                    for &v in xrow {
                        mean += v;
                    }
                    mean *= inv_c;
                    let mut var = F::zero();
                    for &v in xrow {
                        var += (v - mean) * (v - mean);
                    }
                    var *= inv_c;
                    let inv_std = F::one() / (var + eps_f).sqrt();
                    if need_dg || need_db {
                        for i in 0..c {
                            let xhat = (xrow[i] - mean) * inv_std;
                            dg[i] += dyr[i] * xhat;
                            db[i] += dyr[i];
                        }
                    }
                    if need_dx {
                        // dx = (g*dy - mean(g*dy) - xhat * mean(g*dy*xhat)) / std
                        let mut m1 = F::zero();
                        let mut m2 = F::zero();
                        for i in 0..c {
                            let gdy = gd[i] * dyr[i];
                            let xhat = (xrow[i] - mean) * inv_std;
                            m1 += gdy;
                            m2 += gdy * xhat;
                        }
                        m1 *= inv_c;
                        m2 *= inv_c;
                        let dxr = &mut dx[r * c..(r + 1) * c];
                        for i in 0..c {
                            let gdy = gd[i] * dyr[i];
                            let xhat = (xrow[i] - mean) * inv_std;
                            dxr[i] = (gdy - m1 - xhat * m2) * inv_std;
                        }
                    }
                }
                if need_dx {
                    self.accumulate(*x, &dx);
                }
                if need_dg {
                    self.accumulate(*gamma, &dg);
                }
                if need_db {
                    self.accumulate(*beta, &db);
                }
            }
            OpRecord::Gelu { x, out } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                if !self.nodes[x.0].requires_grad {
                    return;
                }
                let inv_sqrt_2pi = F::from_f64(0.3989422804014327);
                let half = F::from_f64(0.5);
                let dx: Vec<F> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(dy.iter())
                    .map(|(&v, &d)| {
                        let pdf = inv_sqrt_2pi * (-half * v * v).exp();
                        d * (normal_cdf(v) + v * pdf)
                    })
                    .collect();
                self.accumulate(*x, &dx);
            }
            OpRecord::MeanOverGroup { x, out } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                if !self.nodes[x.0].requires_grad {
                    return;
                }
                let g_n = self.value(*x).shape()[0];
                let rest = self.value(*x).numel() / g_n;
                let inv_g = F::one() / F::from_f64(g_n as f64);
                let mut dx = vec![F::zero(); self.value(*x).numel()];
                for g in 0..g_n {
                    for (d, &v) in dx[g * rest..(g + 1) * rest].iter_mut().zip(dy.iter()) {
                        *d = v * inv_g;
                    }
                }
                self.accumulate(*x, &dx);
            }
            OpRecord::Add { a, b, out } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                self.accumulate(*a, &dy);
                self.accumulate(*b, &dy);
            }
            OpRecord::Mul { a, b, out } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                if self.nodes[a.0].requires_grad {
                    let da: Vec<F> = dy
                        .iter()
                        .zip(self.value(*b).data().iter())
                        .map(|(&d, &v)| d * v)
                        .collect();
                    self.accumulate(*a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let db: Vec<F> = dy
                        .iter()
                        .zip(self.value(*a).data().iter())
                        .map(|(&d, &v)| d * v)
                        .collect();
                    self.accumulate(*b, &db);
                }
            }
            OpRecord::Sum { x, out } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                if !self.nodes[x.0].requires_grad {
                    return;
                }
                let dx = vec![dy[0]; self.value(*x).numel()];
                self.accumulate(*x, &dx);
            }
            OpRecord::Reshape { x, out } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                self.accumulate(*x, &dy);
            }
            OpRecord::ConcatLast { xs, out } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                let total = *self.value(*out).shape().last().unwrap();
                let rows = self.value(*out).numel() / total;
                let mut offset = 0;
                for &v in xs {
                    let w = *self.value(v).shape().last().unwrap();
                    if self.nodes[v.0].requires_grad {
                        let mut dv = vec![F::zero(); rows * w];
                        for r in 0..rows {
                            dv[r * w..(r + 1) * w].copy_from_slice(
                                &dy[r * total + offset..r * total + offset + w],
                            );
                        }
                        self.accumulate(v, &dv);
                    }
                    offset += w;
                }
            }
            OpRecord::SelectTime { x, cols, out } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                if !self.nodes[x.0].requires_grad {
                    return;
                }
                let xs = self.value(*x).shape().to_vec();
                let (f_n, t_n, c_n) = (xs[0], xs[1], xs[2]);
                let mut dx = vec![F::zero(); self.value(*x).numel()];
                for f in 0..f_n {
                    for (ti, &t) in cols.iter().enumerate() {
                        let dst = (f * t_n + t) * c_n;
                        let src = (f * cols.len() + ti) * c_n;
                        for c in 0..c_n {
                            dx[dst + c] += dy[src + c];
                        }
                    }
                }
                self.accumulate(*x, &dx);
            }
            OpRecord::BceWithLogits { logits, labels, out } => {
                let Some(dy) = self.take_out_grad(*out) else { return };
                if !self.nodes[logits.0].requires_grad {
                    return;
                }
                let scale = dy[0] / F::from_f64(self.value(*logits).numel() as f64);
                let dz: Vec<F> = self
                    .value(*logits)
                    .data()
                    .iter()
                    .zip(self.value(*labels).data().iter())
                    .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                    .collect();
                self.accumulate(*logits, &dz);
            }
        }
    }
}

fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_ft_forward<F: Real>(
    xd: &[F],
    kt_buf: &[F],
    g_n: usize,
    f_n: usize,
    t_n: usize,
    c_n: usize,
    kf: usize,
    kt: usize,
    dilation: (usize, usize),
) -> Vec<F> {
    let (cf, ct) = ((kf - 1) / 2, (kt - 1) / 2);
    let (df, dt) = dilation;
    let mut out = vec![F::zero(); xd.len()];
    for g in 0..g_n {
        for f in 0..f_n {
            for t in 0..t_n {
                let ob = (((g * f_n + f) * t_n) + t) * c_n;
                for i in 0..kf {
                    let fi = f as i64 + (i as i64 - cf as i64) * df as i64;
                    if fi < 0 || fi >= f_n as i64 {
                        continue;
                    }
                    for j in 0..kt {
                        let ti = t as i64 + (j as i64 - ct as i64) * dt as i64;
                        if ti < 0 || ti >= t_n as i64 {
                            continue;
                        }
                        let xb = (((g * f_n + fi as usize) * t_n) + ti as usize) * c_n;
                        let kb = (i * kt + j) * c_n;
                        let (orow, xrow, krow) =
                            (&mut out[ob..ob + c_n], &xd[xb..xb + c_n], &kt_buf[kb..kb + c_n]);
                        for c in 0..c_n {
                            orow[c] += xrow[c] * krow[c];
                        }
                    }
                }
            }
        }
    }
    out
}
