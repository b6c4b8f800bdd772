use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, solve_spd_ridge, Matrix};
use crate::model::{CoefficientSet, Dataset};
use crate::normal;

#[allow(unused_imports)]
use num_traits::Float;

/// Bandwidth of the normal-CDF surrogate for the threshold indicator, with an optional
/// annealing schedule that starts wide and shrinks geometrically to `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingSpec {
    pub h: f64,
    pub anneal_factor: f64,
    pub anneal_steps: usize,
}

impl SmoothingSpec {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidInput(alloc::format!(
                "bandwidth must be positive, got {h}"
            )));
        }
        Ok(Self {
            h,
            anneal_factor: 1.0,
            anneal_steps: 0,
        })
    }

    /// Starts at `h / factor^steps` and divides by `1 / factor` each stage.
    pub fn annealed(h: f64, anneal_factor: f64, anneal_steps: usize) -> Result<Self> {
        let mut s = Self::new(h)?;
        if !(anneal_factor > 0.0 && anneal_factor <= 1.0) {
            return Err(Error::InvalidInput("anneal factor must lie in (0, 1]".into()));
        }
        s.anneal_factor = anneal_factor;
        s.anneal_steps = anneal_steps;
        Ok(s)
    }

    /// Bandwidths from widest to `h`.
    pub fn schedule(&self) -> Vec<f64> {
        if self.anneal_factor >= 1.0 || self.anneal_steps == 0 {
            return vec![self.h];
        }
        (0..=self.anneal_steps)
            .rev()
            .map(|k| self.h / self.anneal_factor.powi(k as i32))
            .collect()
    }
}

/// `sd(w) * n^(-0.7)`, so that `n h^2 -> 0`.
pub fn default_bandwidth(w: &[f64]) -> f64 {
    bandwidth_with_rate(w, 0.7)
}

pub(crate) fn bandwidth_with_rate(w: &[f64], rate: f64) -> f64 {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    sd * n.powf(-rate)
}

/// `Phi(w / h)`.
pub fn smoothed_indicator(w: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(alloc::format!(
            "bandwidth must be positive, got {h}"
        )));
    }
    Ok(normal::cdf(w / h))
}

/// `(1/n) sum_i [y_i - x_i'beta - sum_k x_i'delta_k Phi((z_i'theta - a_k) / h)]^2`.
pub fn smoothed_objective(data: &Dataset, coeffs: &CoefficientSet, a: &[f64], theta: &[f64], h: f64) -> f64 {
    let n = data.n();
    let mut loss = 0.0;
    for i in 0..n {
        let r = smoothed_residual(data, coeffs, a, theta, h, i);
        loss += r * r;
    }
    loss / n as f64
}

#[inline]
fn smoothed_residual(data: &Dataset, coeffs: &CoefficientSet, a: &[f64], theta: &[f64], h: f64, i: usize) -> f64 {
    let x = data.x.row(i);
    let w = dot(data.z.row(i), theta);
    let mut fit = dot(x, &coeffs.beta);
    for (d, &ak) in coeffs.deltas.iter().zip(a) {
        fit += dot(x, d) * normal::cdf((w - ak) / h);
    }
    data.y[i] - fit
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedGradient {
    /// With respect to `(beta', delta_1', ..., delta_s')'`.
    pub gamma: Vec<f64>,
    pub a: Vec<f64>,
    /// Ambient (unprojected) gradient in `theta`.
    pub theta: Vec<f64>,
}

/// Analytic gradient of [`smoothed_objective`] together with its value.
pub fn smoothed_gradient(
    data: &Dataset,
    coeffs: &CoefficientSet,
    a: &[f64],
    theta: &[f64],
    h: f64,
) -> (f64, SmoothedGradient) {
    let (n, p, d, s) = (data.n(), data.p(), data.d(), a.len());
    let mut g_gamma = vec![0.0; (s + 1) * p];
    let mut g_a = vec![0.0; s];
    let mut g_theta = vec![0.0; d];
    let mut cdfs = vec![0.0; s];
    let mut pdfs = vec![0.0; s];
    let mut xd = vec![0.0; s];
    let mut loss = 0.0;
    for i in 0..n {
        let x = data.x.row(i);
        let z = data.z.row(i);
        let w = dot(z, theta);
        let mut fit = dot(x, &coeffs.beta);
        for k in 0..s {
            let u = (w - a[k]) / h;
            cdfs[k] = normal::cdf(u);
            pdfs[k] = normal::pdf(u) / h;
            xd[k] = dot(x, &coeffs.deltas[k]);
            fit += xd[k] * cdfs[k];
        }
        let r = data.y[i] - fit;
        loss += r * r;
        let c = -2.0 * r;
        for (g, &xj) in g_gamma[..p].iter_mut().zip(x) {
            *g += c * xj;
        }
        let mut dw = 0.0;
        for k in 0..s {
            let ck = c * cdfs[k];
            for (g, &xj) in g_gamma[(k + 1) * p..(k + 2) * p].iter_mut().zip(x) {
                *g += ck * xj;
            }
            g_a[k] -= c * xd[k] * pdfs[k];
            dw += xd[k] * pdfs[k];
        }
        let cw = c * dw;
        for (g, &zj) in g_theta.iter_mut().zip(z) {
            *g += cw * zj;
        }
    }
    let inv_n = 1.0 / n as f64;
    for v in g_gamma.iter_mut().chain(g_a.iter_mut()).chain(g_theta.iter_mut()) {
        *v *= inv_n;
    }
    (
        loss * inv_n,
        SmoothedGradient {
            gamma: g_gamma,
            a: g_a,
            theta: g_theta,
        },
    )
}

/// Expanded design with the indicators replaced by `Phi((w - a_k) / h)`.
pub fn smoothed_design(data: &Dataset, a: &[f64], theta: &[f64], h: f64) -> Matrix {
    let (n, p, s) = (data.n(), data.p(), a.len());
    let mut out = Matrix::zeros(n, (s + 1) * p);
    for i in 0..n {
        let x = data.x.row(i);
        let w = dot(data.z.row(i), theta);
        let row = out.row_mut(i);
        row[..p].copy_from_slice(x);
        for (k, &ak) in a.iter().enumerate() {
            let phi = normal::cdf((w - ak) / h);
            for (dst, &xj) in row[(k + 1) * p..(k + 2) * p].iter_mut().zip(x) {
                *dst = xj * phi;
            }
        }
    }
    out
}

/// Smoothed loss with `gamma` profiled out by least squares. Returns the value, the gradient
/// in `(a, theta)` (by the envelope theorem) and the profiled coefficients.
pub fn profiled_objective(data: &Dataset, a: &[f64], theta: &[f64], h: f64) -> (f64, SmoothedGradient, CoefficientSet) {
    let design = smoothed_design(data, a, theta, h);
    let n = data.n() as f64;
    let gram = design.gram(n);
    let c: Vec<f64> = design.tr_mul_vec(&data.y).into_iter().map(|v| v / n).collect();
    let gamma = solve_spd_ridge(&gram, &c);
    let coeffs = CoefficientSet::from_gamma(&gamma, data.p()).expect("block layout");
    let (value, grad) = smoothed_gradient(data, &coeffs, a, theta, h);
    (value, grad, coeffs)
}
