//! Regularization-parameter selection by BIC or GCV along a descending grid.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Bic,
    Gcv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    lambdas: Vec<f64>,
    criterion: Criterion,
}

impl TuningGrid {
    /// Sorts the values in descending order and removes duplicates.
    pub fn new(mut lambdas: Vec<f64>, criterion: Criterion) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::InvalidInput("empty lambda grid".into()));
        }
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidPenalty(
                "lambda grid must be finite and nonnegative".into(),
            ));
        }
        lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
        lambdas.dedup();
        Ok(Self { lambdas, criterion })
    }

    /// `count` log-spaced values from `hi` down to `lo`.
    pub fn log_spaced(lo: f64, hi: f64, count: usize, criterion: Criterion) -> Result<Self> {
        if !(lo > 0.0) || !(hi >= lo) || count == 0 {
            return Err(Error::InvalidInput("log grid needs 0 < lo <= hi and count >= 1".into()));
        }
        if count == 1 || hi == lo {
            return Self::new(alloc::vec![hi], criterion);
        }
        let (l0, l1) = (lo.ln(), hi.ln());
        let step = (l1 - l0) / (count - 1) as f64;
        let values = (0..count).map(|i| (l1 - step * i as f64).exp()).collect();
        Self::new(values, criterion)
    }

    /// 50 values over `[lambda_max * 1e-3, lambda_max]`.
    pub fn default_path(lambda_max: f64, criterion: Criterion) -> Result<Self> {
        let hi = if lambda_max > 0.0 { lambda_max } else { 1e-8 };
        Self::log_spaced(hi * 1e-3, hi, 50, criterion)
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    pub fn score(&self, rss: f64, n: usize, df: usize) -> f64 {
        match self.criterion {
            Criterion::Bic => bic_score(rss, n, df),
            Criterion::Gcv => gcv_score(rss, n, df).unwrap_or(f64::INFINITY),
        }
    }
}

/// How a fitter obtains its regularization parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    Grid(TuningGrid),
    /// [`TuningGrid::default_path`] from the problem's `lambda_max`.
    Auto(Criterion),
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Auto(Criterion::Bic)
    }
}

impl LambdaChoice {
    /// Grid to search given `lambda_max`; a fixed value becomes a one-point grid.
    pub fn grid(&self, lambda_max: f64) -> Result<TuningGrid> {
        match self {
            LambdaChoice::Fixed(l) => TuningGrid::new(alloc::vec![*l], Criterion::Bic),
            LambdaChoice::Grid(g) => Ok(g.clone()),
            LambdaChoice::Auto(c) => TuningGrid::default_path(lambda_max, *c),
        }
    }
}

/// `n log(rss/n) + df log(n)`; `-inf` for a perfect fit.
pub fn bic_score(rss: f64, n: usize, df: usize) -> f64 {
    let nf = n as f64;
    if rss <= 0.0 {
        return f64::NEG_INFINITY;
    }
    nf * (rss / nf).ln() + df as f64 * nf.ln()
}

/// `(rss/n) / (1 - df/n)^2`.
pub fn gcv_score(rss: f64, n: usize, df: usize) -> Result<f64> {
    if df >= n {
        return Err(Error::DegreesOfFreedom { df, n });
    }
    let nf = n as f64;
    let shrink = 1.0 - df as f64 / nf;
    Ok((rss / nf) / (shrink * shrink))
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub lambda: f64,
    pub rss: f64,
    pub df: usize,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct Candidate<F> {
    pub fit: F,
    pub rss: f64,
    pub df: usize,
}

#[derive(Debug, Clone)]
pub struct Selection<F> {
    pub lambda: f64,
    pub fit: F,
    pub table: Vec<ScoreRow>,
}

/// Walks the grid from the largest value down, passing the previous fit as a warm start, and
/// keeps the criterion minimizer. Ties go to the larger `lambda`; failed or non-finite fits
/// are recorded with an infinite score and skipped.
pub fn select_lambda<F, C>(grid: &TuningGrid, n: usize, mut fit: C) -> Result<Selection<F>>
where
    F: Clone,
    C: FnMut(f64, Option<&F>) -> Result<Candidate<F>>,
{
    let mut best: Option<(f64, f64, F)> = None;
    let mut last: Option<F> = None;
    let mut table = Vec::with_capacity(grid.lambdas.len());
    for &lambda in &grid.lambdas {
        match fit(lambda, last.as_ref()) {
            Ok(c) if c.rss.is_finite() => {
                let score = grid.score(c.rss, n, c.df);
                table.push(ScoreRow {
                    lambda,
                    rss: c.rss,
                    df: c.df,
                    score,
                });
                let better = match &best {
                    None => !score.is_nan(),
                    Some((b, _, _)) => score < *b,
                };
                if better {
                    best = Some((score, lambda, c.fit.clone()));
                }
                last = Some(c.fit);
            }
            _ => table.push(ScoreRow {
                lambda,
                rss: f64::NAN,
                df: 0,
                score: f64::INFINITY,
            }),
        }
    }
    let (_, lambda, fit) = best.ok_or(Error::TuningFailed)?;
    Ok(Selection { lambda, fit, table })
}
