//! Forward and backward kernels. Free functions so inference and streaming
//! can run forward math without a tape; [`super::Graph`] pairs them with
//! their adjoints.

use super::grid::ValueGrid;
use crate::error::{Error, Result};

/// Configuration of a grouped 1-D convolution. `pad_left` is the only
/// padding mode: causal layers pad by `(kernel - 1) * dilation`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub pad_left: usize,
}

impl ConvSpec {
    pub fn pointwise() -> Self {
        ConvSpec {
            kernel: 1,
            stride: 1,
            dilation: 1,
            groups: 1,
            pad_left: 0,
        }
    }

    pub fn causal(kernel: usize, dilation: usize, groups: usize) -> Self {
        ConvSpec {
            kernel,
            stride: 1,
            dilation,
            groups,
            pad_left: (kernel - 1) * dilation,
        }
    }

    fn check(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 || self.groups == 0 {
            return Err(Error::invalid("conv: zero kernel/stride/dilation/groups"));
        }
        Ok(())
    }

    /// `floor((T + pad - dilation*(K-1) - 1) / stride) + 1`.
    pub fn out_len(&self, t: usize) -> Result<usize> {
        self.check()?;
        let span = self.dilation * (self.kernel - 1) + 1;
        let vt = t + self.pad_left;
        if vt < span {
            return Err(Error::shape(format!(
                "conv: input length {t} (+pad {}) shorter than receptive span {span}",
                self.pad_left
            )));
        }
        Ok((vt - span) / self.stride + 1)
    }
}

fn conv_shapes(x: &ValueGrid, w: &ValueGrid, spec: &ConvSpec) -> Result<(usize, usize, usize)> {
    let cin = x.channels;
    let cout = w.channels;
    if cin % spec.groups != 0 || cout % spec.groups != 0 {
        return Err(Error::shape(format!(
            "conv: channels {cin}->{cout} not divisible by {} groups",
            spec.groups
        )));
    }
    let cin_g = cin / spec.groups;
    if w.time != cin_g * spec.kernel {
        return Err(Error::shape(format!(
            "conv: weight row length {} != {cin_g}x{}",
            w.time, spec.kernel
        )));
    }
    Ok((cin_g, cout / spec.groups, spec.out_len(x.time)?))
}

fn padded(x: &ValueGrid, pad: usize) -> ValueGrid {
    if pad == 0 {
        return x.clone();
    }
    let mut xp = ValueGrid::zeros(x.channels, x.time + pad);
    for c in 0..x.channels {
        xp.row_mut(c)[pad..].copy_from_slice(x.row(c));
    }
    xp
}

/// Grouped 1-D convolution with cross-correlation semantics:
/// `y[o, t] = bias[o] + sum_{i, k} x[i, t*stride - pad + k*dilation] * w[o, i*K + k]`
/// over the input channels of `o`'s group. Out-of-range reads are zeros
/// (left padding only).
pub fn conv1d_forward(
    x: &ValueGrid,
    w: &ValueGrid,
    bias: Option<&ValueGrid>,
    spec: &ConvSpec,
) -> Result<ValueGrid> {
    let (cin_g, cout_g, t_out) = conv_shapes(x, w, spec)?;
    if let Some(b) = bias {
        if b.channels != w.channels || b.time != 1 {
            return Err(Error::shape("conv: bias shape mismatch"));
        }
    }
    let xp = padded(x, spec.pad_left);
    let mut y = ValueGrid::zeros(w.channels, t_out);
    for g in 0..spec.groups {
        for oc_local in 0..cout_g {
            let oc = g * cout_g + oc_local;
            let yrow = y.row_mut(oc);
            if let Some(b) = bias {
                yrow.fill(b.at(oc, 0));
            }
            for ic_local in 0..cin_g {
                let xrow = xp.row(g * cin_g + ic_local);
                for k in 0..spec.kernel {
                    let wv = w.at(oc, ic_local * spec.kernel + k);
                    let off = k * spec.dilation;
                    if spec.stride == 1 {
                        for (yo, xi) in yrow.iter_mut().zip(&xrow[off..off + t_out]) {
                            *yo += wv * xi;
                        }
                    } else {
                        for (to, yo) in yrow.iter_mut().enumerate() {
                            *yo += wv * xrow[to * spec.stride + off];
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Adjoints of [`conv1d_forward`]: gradients for the input, the weights,
/// and (when requested) the bias.
pub fn conv1d_backward(
    x: &ValueGrid,
    w: &ValueGrid,
    gy: &ValueGrid,
    spec: &ConvSpec,
    with_bias: bool,
) -> Result<(ValueGrid, ValueGrid, Option<ValueGrid>)> {
    let (cin_g, cout_g, t_out) = conv_shapes(x, w, spec)?;
    if gy.shape() != (w.channels, t_out) {
        return Err(Error::shape("conv backward: gradient shape mismatch"));
    }
    let xp = padded(x, spec.pad_left);
    let mut gxp = ValueGrid::zeros(x.channels, x.time + spec.pad_left);
    let mut gw = ValueGrid::zeros(w.channels, w.time);
    for g in 0..spec.groups {
        for oc_local in 0..cout_g {
            let oc = g * cout_g + oc_local;
            let gyrow = gy.row(oc);
            for ic_local in 0..cin_g {
                let ic = g * cin_g + ic_local;
                let xrow = xp.row(ic);
                for k in 0..spec.kernel {
                    let off = k * spec.dilation;
                    let wv = w.at(oc, ic_local * spec.kernel + k);
                    let gxrow = gxp.row_mut(ic);
                    let mut acc = 0.0;
                    if spec.stride == 1 {
                        for (to, gyv) in gyrow.iter().enumerate() {
                            acc += gyv * xrow[to + off];
                            gxrow[to + off] += wv * gyv;
                        }
                    } else {
                        for (to, gyv) in gyrow.iter().enumerate() {
                            let ti = to * spec.stride + off;
                            acc += gyv * xrow[ti];
                            gxrow[ti] += wv * gyv;
                        }
                    }
                    *gw.at_mut(oc, ic_local * spec.kernel + k) += acc;
                }
            }
        }
    }
    let mut gx = ValueGrid::zeros(x.channels, x.time);
    for c in 0..x.channels {
        gx.row_mut(c)
            .copy_from_slice(&gxp.row(c)[spec.pad_left..]);
    }
    let gb = with_bias.then(|| {
        let mut gb = ValueGrid::zeros(gy.channels, 1);
        for c in 0..gy.channels {
            *gb.at_mut(c, 0) = gy.row(c).iter().sum();
        }
        gb
    });
    Ok((gx, gw, gb))
}

/// Transposed 1-D convolution (overlap-add): weight rows are input
/// channels, laid out `[C_in, C_out*K]`;
/// `y[o, f*stride + k] += x[i, f] * w[i, o*K + k]`, output length
/// `(F - 1)*stride + K`. This is the exact adjoint of an unpadded
/// [`conv1d_forward`] with the same weight.
pub fn tconv1d_forward(
    x: &ValueGrid,
    w: &ValueGrid,
    stride: usize,
    kernel: usize,
) -> Result<ValueGrid> {
    let (cout, t_out) = tconv_shapes(x, w, stride, kernel)?;
    let mut y = ValueGrid::zeros(cout, t_out);
    for ic in 0..x.channels {
        let xrow = x.row(ic);
        for oc in 0..cout {
            let yrow = y.row_mut(oc);
            for k in 0..kernel {
                let wv = w.at(ic, oc * kernel + k);
                for (f, xv) in xrow.iter().enumerate() {
                    yrow[f * stride + k] += wv * xv;
                }
            }
        }
    }
    Ok(y)
}

fn tconv_shapes(x: &ValueGrid, w: &ValueGrid, stride: usize, kernel: usize) -> Result<(usize, usize)> {
    if kernel == 0 || stride == 0 || stride > kernel {
        return Err(Error::invalid(format!(
            "tconv: need 0 < stride <= kernel, got stride {stride}, kernel {kernel}"
        )));
    }
    if w.channels != x.channels || w.time % kernel != 0 {
        return Err(Error::shape("tconv: weight shape mismatch"));
    }
    if x.time == 0 {
        return Err(Error::shape("tconv: empty input"));
    }
    Ok((w.time / kernel, (x.time - 1) * stride + kernel))
}

pub fn tconv1d_backward(
    x: &ValueGrid,
    w: &ValueGrid,
    gy: &ValueGrid,
    stride: usize,
    kernel: usize,
) -> Result<(ValueGrid, ValueGrid)> {
    let (cout, t_out) = tconv_shapes(x, w, stride, kernel)?;
    if gy.shape() != (cout, t_out) {
        return Err(Error::shape("tconv backward: gradient shape mismatch"));
    }
    let mut gx = ValueGrid::zeros(x.channels, x.time);
    let mut gw = ValueGrid::zeros(w.channels, w.time);
    for ic in 0..x.channels {
        let xrow = x.row(ic);
        let gxrow = gx.row_mut(ic);
        for oc in 0..cout {
            let gyrow = gy.row(oc);
            for k in 0..kernel {
                let wv = w.at(ic, oc * kernel + k);
                let mut acc = 0.0;
                for f in 0..x.time {
                    let gyv = gyrow[f * stride + k];
                    gxrow[f] += wv * gyv;
                    acc += xrow[f] * gyv;
                }
                *gw.at_mut(ic, oc * kernel + k) += acc;
            }
        }
    }
    Ok((gx, gw))
}

/// Per-step mean and inverse standard deviation over channels and all time
/// steps up to t. The accumulation order (time outer, channels ascending)
/// is part of the contract: the streaming path reproduces it exactly.
pub fn cln_stats(x: &ValueGrid, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (c, t) = x.shape();
    let mut mu = vec![0.0; t];
    let mut inv_std = vec![0.0; t];
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for ti in 0..t {
        for ci in 0..c {
            let v = x.at(ci, ti);
            s1 += v;
            s2 += v * v;
        }
        let n = (c * (ti + 1)) as f64;
        let m = s1 / n;
        mu[ti] = m;
        inv_std[ti] = 1.0 / (s2 / n - m * m + eps).sqrt();
    }
    (mu, inv_std)
}

/// Cumulative layer norm:
/// `y[c,t] = gain[c] * (x[c,t] - mu_t) * inv_std_t + bias[c]`.
pub fn cln_forward(
    x: &ValueGrid,
    gain: &ValueGrid,
    bias: &ValueGrid,
    eps: f64,
) -> Result<ValueGrid> {
    if gain.shape() != (x.channels, 1) || bias.shape() != (x.channels, 1) {
        return Err(Error::shape("cln: gain/bias must be [C, 1]"));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("cln: eps must be positive"));
    }
    let (mu, inv_std) = cln_stats(x, eps);
    let mut y = ValueGrid::zeros(x.channels, x.time);
    for c in 0..x.channels {
        let (g, b) = (gain.at(c, 0), bias.at(c, 0));
        let xrow = x.row(c);
        let yrow = y.row_mut(c);
        for t in 0..x.time {
            yrow[t] = g * (xrow[t] - mu[t]) * inv_std[t] + b;
        }
    }
    Ok(y)
}

/// Reverse-mode cLN. Statistics are recomputed from the saved input; the
/// cumulative coupling is resolved with suffix sums, so the pass is O(CT).
pub fn cln_backward(
    x: &ValueGrid,
    gain: &ValueGrid,
    gy: &ValueGrid,
    eps: f64,
) -> Result<(ValueGrid, ValueGrid, ValueGrid)> {
    let (c, t) = x.shape();
    if gy.shape() != (c, t) || gain.shape() != (c, 1) {
        return Err(Error::shape("cln backward: shape mismatch"));
    }
    let (mu, inv_std) = cln_stats(x, eps);
    let mut ggain = ValueGrid::zeros(c, 1);
    let mut gbias = ValueGrid::zeros(c, 1);
    // Per-step aggregates of the gain-scaled output gradient.
    let mut a = vec![0.0; t]; // sum_c ggamma[c,t]
    let mut bsum = vec![0.0; t]; // sum_c ggamma[c,t] * (x - mu_t)
    for ci in 0..c {
        let g = gain.at(ci, 0);
        let xrow = x.row(ci);
        let gyrow = gy.row(ci);
        let mut gg = 0.0;
        let mut gb = 0.0;
        for ti in 0..t {
            let centered = xrow[ti] - mu[ti];
            gg += gyrow[ti] * centered * inv_std[ti];
            gb += gyrow[ti];
            let gamma = gyrow[ti] * g;
            a[ti] += gamma;
            bsum[ti] += gamma * centered;
        }
        *ggain.at_mut(ci, 0) = gg;
        *gbias.at_mut(ci, 0) = gb;
    }
    // Suffix sums over future steps whose statistics include x[., t'].
    let mut u = vec![0.0; t];
    let mut v = vec![0.0; t];
    let mut w = vec![0.0; t];
    let mut su = 0.0;
    let mut sv = 0.0;
    let mut sw = 0.0;
    for ti in (0..t).rev() {
        let n = (c * (ti + 1)) as f64;
        let p = inv_std[ti];
        let p3b = p * p * p * bsum[ti] / n;
        su += p * a[ti] / n;
        sv += p3b;
        sw += p3b * mu[ti];
        u[ti] = su;
        v[ti] = sv;
        w[ti] = sw;
    }
    let mut gx = ValueGrid::zeros(c, t);
    for ci in 0..c {
        let g = gain.at(ci, 0);
        let xrow = x.row(ci);
        let gyrow = gy.row(ci);
        let gxrow = gx.row_mut(ci);
        for ti in 0..t {
            gxrow[ti] = gyrow[ti] * g * inv_std[ti] - u[ti] - xrow[ti] * v[ti] + w[ti];
        }
    }
    Ok((gx, ggain, gbias))
}

/// PReLU with a learnable per-channel slope on the negative side.
pub fn prelu_forward(x: &ValueGrid, slope: &ValueGrid) -> Result<ValueGrid> {
    if slope.shape() != (x.channels, 1) {
        return Err(Error::shape("prelu: slope must be [C, 1]"));
    }
    let mut y = ValueGrid::zeros(x.channels, x.time);
    for c in 0..x.channels {
        let s = slope.at(c, 0);
        for (yo, &xi) in y.row_mut(c).iter_mut().zip(x.row(c)) {
            *yo = if xi >= 0.0 { xi } else { s * xi };
        }
    }
    Ok(y)
}

pub fn prelu_backward(
    x: &ValueGrid,
    slope: &ValueGrid,
    gy: &ValueGrid,
) -> Result<(ValueGrid, ValueGrid)> {
    if gy.shape() != x.shape() {
        return Err(Error::shape("prelu backward: shape mismatch"));
    }
    let mut gx = ValueGrid::zeros(x.channels, x.time);
    let mut gs = ValueGrid::zeros(x.channels, 1);
    for c in 0..x.channels {
        let s = slope.at(c, 0);
        let mut acc = 0.0;
        for ((gxo, &xi), &gyv) in gx.row_mut(c).iter_mut().zip(x.row(c)).zip(gy.row(c)) {
            if xi >= 0.0 {
                *gxo = gyv;
            } else {
                *gxo = s * gyv;
                acc += xi * gyv;
            }
        }
        *gs.at_mut(c, 0) = acc;
    }
    Ok((gx, gs))
}

pub fn sigmoid_forward(x: &ValueGrid) -> ValueGrid {
    let mut y = x.clone();
    for v in &mut y.data {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    y
}

/// Uses the saved output: `dy/dx = y * (1 - y)`.
pub fn sigmoid_backward(y: &ValueGrid, gy: &ValueGrid) -> ValueGrid {
    let mut gx = gy.clone();
    for (g, &yv) in gx.data.iter_mut().zip(&y.data) {
        *g *= yv * (1.0 - yv);
    }
    gx
}

pub fn relu_forward(x: &ValueGrid) -> ValueGrid {
    let mut y = x.clone();
    for v in &mut y.data {
        *v = v.max(0.0);
    }
    y
}

pub fn relu_backward(x: &ValueGrid, gy: &ValueGrid) -> ValueGrid {
    let mut gx = gy.clone();
    for (g, &xv) in gx.data.iter_mut().zip(&x.data) {
        if xv < 0.0 {
            *g = 0.0;
        }
    }
    gx
}

const LOSS_EPS_REL: f64 = 1e-12;
const TEN_OVER_LN10: f64 = 10.0 / std::f64::consts::LN_10;

/// `-10*log10(||x||^2 / (||e||^2 + 1e-12*||x||^2))`, treating the grid as
/// one signal vector.
pub fn neg_snr_loss_forward(est: &ValueGrid, reference: &ValueGrid) -> Result<f64> {
    if est.shape() != reference.shape() {
        return Err(Error::shape("snr loss: shape mismatch"));
    }
    let xx: f64 = reference.data.iter().map(|v| v * v).sum();
    if xx == 0.0 {
        return Err(Error::DegenerateSource("snr loss: silent reference".into()));
    }
    let ee: f64 = est
        .data
        .iter()
        .zip(&reference.data)
        .map(|(e, x)| (e - x) * (e - x))
        .sum();
    Ok(-TEN_OVER_LN10 * (xx.ln() - (ee + LOSS_EPS_REL * xx).ln()))
}

pub fn neg_snr_loss_backward(est: &ValueGrid, reference: &ValueGrid, g: f64) -> Result<ValueGrid> {
    let xx: f64 = reference.data.iter().map(|v| v * v).sum();
    let ee: f64 = est
        .data
        .iter()
        .zip(&reference.data)
        .map(|(e, x)| (e - x) * (e - x))
        .sum();
    let scale = g * TEN_OVER_LN10 * 2.0 / (ee + LOSS_EPS_REL * xx);
    let mut gx = ValueGrid::zeros(est.channels, est.time);
    for ((go, e), x) in gx.data.iter_mut().zip(&est.data).zip(&reference.data) {
        *go = scale * (e - x);
    }
    Ok(gx)
}

/// Scale-invariant counterpart: the reference is projected onto the
/// estimate's scale before the ratio.
pub fn neg_si_sdr_loss_forward(est: &ValueGrid, reference: &ValueGrid) -> Result<f64> {
    let (_, _, ss, ee) = si_sdr_parts(est, reference)?;
    Ok(-TEN_OVER_LN10 * (ss.ln() - (ee + LOSS_EPS_REL * ss).ln()))
}

fn si_sdr_parts(est: &ValueGrid, reference: &ValueGrid) -> Result<(f64, f64, f64, f64)> {
    if est.shape() != reference.shape() {
        return Err(Error::shape("si-sdr loss: shape mismatch"));
    }
    let xx: f64 = reference.data.iter().map(|v| v * v).sum();
    if xx == 0.0 {
        return Err(Error::DegenerateSource("si-sdr loss: silent reference".into()));
    }
    let xy: f64 = est
        .data
        .iter()
        .zip(&reference.data)
        .map(|(e, x)| e * x)
        .sum();
    let alpha = xy / xx;
    if alpha == 0.0 {
        return Err(Error::DegenerateSource(
            "si-sdr loss: estimate orthogonal to reference".into(),
        ));
    }
    let ss = alpha * alpha * xx;
    let ee: f64 = est
        .data
        .iter()
        .zip(&reference.data)
        .map(|(e, x)| {
            let d = e - alpha * x;
            d * d
        })
        .sum();
    Ok((xx, alpha, ss, ee))
}

pub fn neg_si_sdr_loss_backward(
    est: &ValueGrid,
    reference: &ValueGrid,
    g: f64,
) -> Result<ValueGrid> {
    let (xx, alpha, ss, ee) = si_sdr_parts(est, reference)?;
    let den = ee + LOSS_EPS_REL * ss;
    let c_target = -g * TEN_OVER_LN10 * 2.0 / (alpha * xx);
    let c_err = g * TEN_OVER_LN10 * 2.0 / den;
    let c_eps = g * TEN_OVER_LN10 * 2.0 * LOSS_EPS_REL * alpha / den;
    let mut gx = ValueGrid::zeros(est.channels, est.time);
    for ((go, e), x) in gx.data.iter_mut().zip(&est.data).zip(&reference.data) {
        *go = c_target * x + c_err * (e - alpha * x) + c_eps * x;
    }
    Ok(gx)
}
