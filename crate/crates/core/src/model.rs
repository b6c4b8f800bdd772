//! Data model, subgroup labelling and the exact (indicator) least-squares objective.
//!
//! Thresholds use cumulative coding: a row with index `w` receives `delta_j` for every
//! `j` with `w > a_j`, so its group label is the number of thresholds strictly below `w`.
//! A row sitting exactly on a threshold belongs to the lower group.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: Matrix,
    pub z: Matrix,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Matrix, z: Matrix) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset has no rows".into()));
        }
        if x.rows() != n || z.rows() != n {
            return Err(Error::dim(format!(
                "row counts differ: y has {n}, x has {}, z has {}",
                x.rows(),
                z.rows()
            )));
        }
        if !y.iter().all(|v| v.is_finite()) || !x.is_finite() || !z.is_finite() {
            return Err(Error::NonFinite("dataset contains NaN or infinite entries".into()));
        }
        Ok(Self { y, x, z })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.x.cols()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.z.cols()
    }

    /// Grouping index `w_i = z_i' theta`.
    pub fn index(&self, theta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(theta.len(), self.d());
        (0..self.n()).map(|i| dot(self.z.row(i), theta)).collect()
    }

    /// Same data with a constant-1 column prepended to `z`.
    pub fn with_z_intercept(&self) -> Dataset {
        let (n, d) = (self.n(), self.d());
        let mut z = Matrix::zeros(n, d + 1);
        for i in 0..n {
            z[(i, 0)] = 1.0;
            z.row_mut(i)[1..].copy_from_slice(self.z.row(i));
        }
        Dataset {
            y: self.y.clone(),
            x: self.x.clone(),
            z,
        }
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let xs: Vec<usize> = (0..self.p()).collect();
        let zs: Vec<usize> = (0..self.d()).collect();
        Dataset {
            y: rows.iter().map(|&i| self.y[i]).collect(),
            x: self.x.select(rows, &xs),
            z: self.z.select(rows, &zs),
        }
    }
}

/// Unit-norm plane direction with a designated coordinate `r` that is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    values: Vec<f64>,
    r: usize,
}

impl ThetaVector {
    /// Normalizes `values` and orients the vector so that coordinate `r` is positive.
    pub fn new(values: Vec<f64>, r: usize) -> Result<Self> {
        if r >= values.len() {
            return Err(Error::dim(format!(
                "identifiability coordinate {r} outside a {}-vector",
                values.len()
            )));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidInput("plane direction must be nonzero and finite".into()));
        }
        if values[r] == 0.0 {
            return Err(Error::InvalidInput(format!("identifiability coordinate {r} is zero")));
        }
        let sign = if values[r] < 0.0 { -1.0 } else { 1.0 };
        let values = values.into_iter().map(|v| sign * v / norm).collect();
        Ok(Self { values, r })
    }

    /// Uses the largest-magnitude coordinate as the identifiability coordinate.
    pub fn canonical(values: Vec<f64>) -> Result<Self> {
        let r = largest_coordinate(&values);
        Self::new(values, r)
    }

    /// The one-dimensional direction `theta = 1`.
    pub fn unit() -> Self {
        Self {
            values: vec![1.0],
            r: 0,
        }
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn coordinate(&self) -> usize {
        self.r
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn largest_coordinate(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| {
            if v.abs() > bv {
                (i, v.abs())
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Strictly increasing threshold locations `a_1 < ... < a_s`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Thresholds(Vec<f64>);

impl Thresholds {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("threshold is not finite".into()));
        }
        if a.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("thresholds must be strictly increasing".into()));
        }
        Ok(Self(a))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn s(&self) -> usize {
        self.0.len()
    }
}

/// Baseline coefficients and the `s` cumulative jump vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub beta: Vec<f64>,
    pub deltas: Vec<Vec<f64>>,
}

impl CoefficientSet {
    pub fn zeros(p: usize, s: usize) -> Self {
        Self {
            beta: vec![0.0; p],
            deltas: vec![vec![0.0; p]; s],
        }
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn s(&self) -> usize {
        self.deltas.len()
    }

    /// Stacked `(beta', delta_1', ..., delta_s')'`.
    pub fn gamma(&self) -> Vec<f64> {
        let mut g = self.beta.clone();
        for d in &self.deltas {
            g.extend_from_slice(d);
        }
        g
    }

    pub fn from_gamma(gamma: &[f64], p: usize) -> Result<Self> {
        if p == 0 || gamma.len() % p != 0 {
            return Err(Error::dim(format!(
                "stacked coefficient length {} is not a multiple of p = {p}",
                gamma.len()
            )));
        }
        let blocks = gamma.len() / p;
        Ok(Self {
            beta: gamma[..p].to_vec(),
            deltas: (1..blocks).map(|b| gamma[b * p..(b + 1) * p].to_vec()).collect(),
        })
    }

    /// Coefficient vector in effect for group `label`.
    pub fn group_coefficients(&self, label: usize) -> Vec<f64> {
        let mut c = self.beta.clone();
        for d in self.deltas.iter().take(label) {
            for (ci, di) in c.iter_mut().zip(d) {
                *ci += di;
            }
        }
        c
    }
}

/// Which model a fit describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Multi-threshold change plane; `z` excludes an intercept.
    Multi,
    /// Single change plane with intercept-augmented `z` and the threshold fixed at zero.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FitFlags {
    /// No jump was detected and the fit is a plain penalized regression.
    pub no_subgroup: bool,
    /// The estimated number of thresholds did not settle; the best visited fit by BIC is returned.
    pub oscillated: bool,
    /// Thresholds collapsed, a group emptied or a jump was estimated as zero, and the fit was
    /// retried with fewer thresholds.
    pub degenerate_retry: bool,
    /// All jump coefficients are zero, so the plane direction is not identified.
    pub theta_unidentified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub mode: FitMode,
    pub coeffs: CoefficientSet,
    pub thresholds: Thresholds,
    pub theta: ThetaVector,
    pub labels: Vec<usize>,
    pub rss: f64,
    /// Value of the (penalized, smoothed) criterion at the returned parameters.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub lambda: f64,
    pub bandwidth: f64,
    pub flags: FitFlags,
}

impl ModelFit {
    pub fn s(&self) -> usize {
        self.thresholds.s()
    }

    /// Assembles a fit, computing labels and residual sum of squares on `data`.
    pub fn assemble(
        mode: FitMode,
        data: &Dataset,
        coeffs: CoefficientSet,
        thresholds: Thresholds,
        theta: ThetaVector,
    ) -> Result<Self> {
        let labels = group_labels(data, &theta, &thresholds)?;
        let fitted = fitted_values(data, &coeffs, &labels);
        let rss = data.y.iter().zip(&fitted).map(|(y, f)| (y - f) * (y - f)).sum();
        Ok(Self {
            mode,
            coeffs,
            thresholds,
            theta,
            labels,
            rss,
            objective: f64::NAN,
            converged: true,
            iterations: 0,
            lambda: 0.0,
            bandwidth: 0.0,
            flags: FitFlags::default(),
        })
    }

    /// Nonzero stacked coefficients.
    pub fn nonzero_count(&self) -> usize {
        self.coeffs.gamma().iter().filter(|v| **v != 0.0).count()
    }

    /// Number of training rows per group, `s + 1` entries.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.s() + 1];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Number of thresholds strictly below each row's index.
pub fn group_labels(data: &Dataset, theta: &ThetaVector, a: &Thresholds) -> Result<Vec<usize>> {
    check_theta(data, theta.values())?;
    Ok(labels_from_index(&data.index(theta.values()), a.values()))
}

pub fn labels_from_index(w: &[f64], a: &[f64]) -> Vec<usize> {
    w.iter().map(|&wi| a.iter().filter(|&&aj| wi > aj).count()).collect()
}

fn check_theta(data: &Dataset, theta: &[f64]) -> Result<()> {
    if theta.len() != data.d() {
        return Err(Error::dim(format!(
            "theta has length {}, grouping covariates have {} columns",
            theta.len(),
            data.d()
        )));
    }
    Ok(())
}

fn check_coeffs(data: &Dataset, coeffs: &CoefficientSet, a: &[f64]) -> Result<()> {
    if coeffs.p() != data.p() || coeffs.deltas.iter().any(|d| d.len() != data.p()) {
        return Err(Error::dim(format!(
            "coefficients have length {}, design has {} columns",
            coeffs.p(),
            data.p()
        )));
    }
    if coeffs.s() != a.len() {
        return Err(Error::dim(format!(
            "{} jump vectors for {} thresholds",
            coeffs.s(),
            a.len()
        )));
    }
    Ok(())
}

/// Cumulative-coded design `[X, X 1(w > a_1), ..., X 1(w > a_s)]`.
pub fn design_expand(data: &Dataset, theta: &ThetaVector, a: &Thresholds) -> Result<Matrix> {
    check_theta(data, theta.values())?;
    Ok(expand_with_index(&data.x, &data.index(theta.values()), a.values()))
}

pub(crate) fn expand_with_index(x: &Matrix, w: &[f64], a: &[f64]) -> Matrix {
    let (n, p, s) = (x.rows(), x.cols(), a.len());
    let mut out = Matrix::zeros(n, (s + 1) * p);
    for i in 0..n {
        let xi = x.row(i);
        let row = out.row_mut(i);
        row[..p].copy_from_slice(xi);
        for (j, &aj) in a.iter().enumerate() {
            if w[i] > aj {
                row[(j + 1) * p..(j + 2) * p].copy_from_slice(xi);
            }
        }
    }
    out
}

fn fitted_values(data: &Dataset, coeffs: &CoefficientSet, labels: &[usize]) -> Vec<f64> {
    let group_coefs: Vec<Vec<f64>> = (0..=coeffs.s()).map(|g| coeffs.group_coefficients(g)).collect();
    (0..data.n())
        .map(|i| dot(data.x.row(i), &group_coefs[labels[i]]))
        .collect()
}

/// Mean squared residual of the cumulative-coded model.
pub fn exact_objective(data: &Dataset, coeffs: &CoefficientSet, a: &Thresholds, theta: &ThetaVector) -> Result<f64> {
    check_theta(data, theta.values())?;
    check_coeffs(data, coeffs, a.values())?;
    let labels = labels_from_index(&data.index(theta.values()), a.values());
    let fitted = fitted_values(data, coeffs, &labels);
    let rss: f64 = data.y.iter().zip(&fitted).map(|(y, f)| (y - f) * (y - f)).sum();
    Ok(rss / data.n() as f64)
}

/// Fitted values `x_i'(beta + sum_{j <= label_i} delta_j)` on new rows.
pub fn predict(fit: &ModelFit, newdata: &Dataset) -> Result<Vec<f64>> {
    if newdata.p() != fit.coeffs.p() {
        return Err(Error::dim(format!(
            "new data has {} covariates, fit has {}",
            newdata.p(),
            fit.coeffs.p()
        )));
    }
    let labels = group_labels(newdata, &fit.theta, &fit.thresholds)?;
    Ok(fitted_values(newdata, &fit.coeffs, &labels))
}

/// Re-expresses `(coeffs, a, theta)` in terms of `-theta`: thresholds are reflected and
/// reversed and the group order flips, so group `g` becomes `s - g` with identical fitted values
/// (up to rows lying exactly on a threshold).
pub fn flip_orientation(coeffs: &CoefficientSet, a: &[f64], theta: &[f64]) -> (CoefficientSet, Vec<f64>, Vec<f64>) {
    let s = a.len();
    let mut beta = coeffs.beta.clone();
    for d in &coeffs.deltas {
        for (b, v) in beta.iter_mut().zip(d) {
            *b += v;
        }
    }
    let deltas = (0..s)
        .map(|k| coeffs.deltas[s - 1 - k].iter().map(|v| -v).collect())
        .collect();
    let a_new = (0..s).map(|k| -a[s - 1 - k]).collect();
    let theta_new = theta.iter().map(|v| -v).collect();
    (CoefficientSet { beta, deltas }, a_new, theta_new)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(z: &[f64]) -> Dataset {
        let n = z.len();
        let x = Matrix::from_vec(n, 2, (0..n).flat_map(|i| [1.0, i as f64]).collect()).unwrap();
        let zm = Matrix::from_vec(n, 1, z.to_vec()).unwrap();
        Dataset::new(vec![0.0; n], x, zm).unwrap()
    }

    #[test]
    fn labels_without_thresholds_are_zero() {
        let d = toy(&[-1.0, 0.0, 1.0]);
        let l = group_labels(&d, &ThetaVector::unit(), &Thresholds::empty()).unwrap();
        assert_eq!(l, vec![0, 0, 0]);
    }

    #[test]
    fn labels_use_strict_inequality() {
        let d = toy(&[-1.0, 0.0, 1.0]);
        let a = Thresholds::new(vec![0.0]).unwrap();
        let l = group_labels(&d, &ThetaVector::unit(), &a).unwrap();
        assert_eq!(l, vec![0, 0, 1]);
    }

    #[test]
    fn example_two_thresholds_label_middle_group() {
        let d = toy(&[0.0]);
        let a = Thresholds::new(vec![-0.524, 0.253]).unwrap();
        let l = group_labels(&d, &ThetaVector::unit(), &a).unwrap();
        assert_eq!(l, vec![1]);
    }

    #[test]
    fn label_dimension_mismatch_errors() {
        let d = toy(&[0.0]);
        let th = ThetaVector::canonical(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            group_labels(&d, &th, &Thresholds::empty()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn design_expand_blocks() {
        let d = toy(&[-2.0, 0.0, 3.0]);
        let a = Thresholds::new(vec![-1.0, 1.0]).unwrap();
        let m = design_expand(&d, &ThetaVector::unit(), &a).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.row(1), &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.row(2), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let plain = design_expand(&d, &ThetaVector::unit(), &Thresholds::empty()).unwrap();
        assert_eq!(plain, d.x);
    }

    #[test]
    fn zero_coefficients_give_mean_square_response() {
        let mut d = toy(&[-1.0, 0.5, 2.0]);
        d.y = vec![1.0, -2.0, 3.0];
        let a = Thresholds::new(vec![0.0]).unwrap();
        let c = CoefficientSet::zeros(2, 1);
        let v = exact_objective(&d, &c, &a, &ThetaVector::unit()).unwrap();
        assert!((v - 14.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn prediction_at_threshold_uses_lower_group() {
        let d = toy(&[0.0, 0.5]);
        let coeffs = CoefficientSet {
            beta: vec![1.0, 0.0],
            deltas: vec![vec![10.0, 0.0]],
        };
        let a = Thresholds::new(vec![0.0]).unwrap();
        let fit = ModelFit::assemble(FitMode::Multi, &d, coeffs, a, ThetaVector::unit()).unwrap();
        assert_eq!(predict(&fit, &d).unwrap(), vec![1.0, 11.0]);
    }

    #[test]
    fn flip_preserves_fitted_values() {
        let z = [-1.7, -0.3, 0.2, 0.9, 1.4, 2.2];
        let mut d = toy(&z);
        d.z = Matrix::from_vec(6, 2, z.iter().flat_map(|&v| [v, 0.5 * v]).collect()).unwrap();
        let coeffs = CoefficientSet {
            beta: vec![1.0, 2.0],
            deltas: vec![vec![-1.0, 0.5], vec![3.0, 0.0]],
        };
        let a = [-0.1, 0.8];
        let theta = [0.8, 0.6];
        let f0 = ModelFit::assemble(
            FitMode::Multi,
            &d,
            coeffs.clone(),
            Thresholds::new(a.to_vec()).unwrap(),
            ThetaVector::new(theta.to_vec(), 0).unwrap(),
        )
        .unwrap();
        let (c1, a1, t1) = flip_orientation(&coeffs, &a, &theta);
        // Build the flipped fit without renormalizing the sign convention.
        let w: Vec<f64> = d.index(&t1);
        let labels = labels_from_index(&w, &a1);
        let p0 = predict(&f0, &d).unwrap();
        for i in 0..d.n() {
            let c = c1.group_coefficients(labels[i]);
            assert!((dot(d.x.row(i), &c) - p0[i]).abs() < 1e-12);
        }
    }
}
