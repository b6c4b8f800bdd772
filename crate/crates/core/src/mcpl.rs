//! Multiple parallel change planes: `y = x'(beta + sum_j delta_j 1(z'theta > a_j)) + e`.
//!
//! The fit alternates two stages. The splitting stage orders the sample by the current index
//! `w = z'theta`, cuts it into segments, and fits a cumulative block design with one
//! group-penalized jump block per segment boundary; runs of selected blocks mark the jumps.
//! The refining stage then minimizes the smoothed penalized loss over `(gamma, a, theta)` for
//! that number of jumps. The two repeat with the refined direction until the number of jumps
//! stops changing.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{
    flip_orientation, largest_coordinate, CoefficientSet, Dataset, FitMode, ModelFit, ThetaVector, Thresholds,
};
use crate::optimize::{
    cd_penalized_ls, default_bandwidth, gcd_penalized_ls, lambda_max_groups, CdFit, GramSystem, OptimizerSettings,
    SmoothingSpec,
};
use crate::penalty::PenaltySpec;
use crate::stage::{
    exact_profile, fit_penalized, nonzero, optimize_plane, penalty_total, pilot_plane, smoothed_system, Profile,
};
use crate::tuning::{bic_score, select_lambda, Candidate, Criterion, LambdaChoice, ScoreRow, TuningGrid};

#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct McplConfig {
    /// Family and concavity; regularization levels come from the two choices below.
    pub penalty: PenaltySpec,
    /// `Auto` searches 50 log-spaced values over
    /// `[0.05, 5] sqrt(log n log(q_n p)) / sqrt(n)`.
    pub split_lambda: LambdaChoice,
    /// `Auto` searches the default path below the smoothed design's `lambda_max`.
    pub refine_lambda: LambdaChoice,
    /// Segment size; `None` uses `ceil(sqrt(n))`.
    pub m: Option<usize>,
    /// Smoothing bandwidth; `None` uses `sd(z'theta) n^(-0.7)` at the refining start.
    pub bandwidth: Option<f64>,
    /// Halvings of the bandwidth during the unpenalized warm-up (starts at `2^steps h`).
    pub anneal_steps: usize,
    pub settings: OptimizerSettings,
    /// Starting direction; `None` runs the multistart pilot (ignored when `z` has one column).
    pub theta0: Option<Vec<f64>>,
    /// Split/refine rounds before the number of jumps is declared unsettled.
    pub max_rounds: usize,
}

impl Default for McplConfig {
    fn default() -> Self {
        Self {
            penalty: PenaltySpec::scad(0.0).expect("valid"),
            split_lambda: LambdaChoice::default(),
            refine_lambda: LambdaChoice::default(),
            m: None,
            bandwidth: None,
            anneal_steps: 3,
            settings: OptimizerSettings::default(),
            theta0: None,
            max_rounds: 10,
        }
    }
}

/// Partition of the sample into `q_n + 1` consecutive runs of the sorted index.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub m: usize,
    pub q_n: usize,
    /// `rank_map[k]` is the original row holding the `k`-th smallest index.
    pub rank_map: Vec<usize>,
    /// Rank ranges; the first holds `n - q_n m` rows, the others `m`.
    pub segments: Vec<Range<usize>>,
    pub sorted_w: Vec<f64>,
}

/// Sorts `w` (ties by row) and cuts it into segments of `m`, the first taking the remainder.
pub fn make_split_plan(w: &[f64], m: usize) -> Result<SplitPlan> {
    let n = w.len();
    if m == 0 || 2 * m > n {
        return Err(Error::SegmentTooLarge { m, n });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("grouping index".into()));
    }
    let mut rank_map: Vec<usize> = (0..n).collect();
    rank_map.sort_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap().then(i.cmp(&j)));
    let q_n = n / m - 1;
    let first = n - q_n * m;
    let mut segments = Vec::with_capacity(q_n + 1);
    segments.push(0..first);
    for k in 0..q_n {
        segments.push(first + k * m..first + (k + 1) * m);
    }
    let sorted_w = rank_map.iter().map(|&i| w[i]).collect();
    Ok(SplitPlan {
        m,
        q_n,
        rank_map,
        segments,
        sorted_w,
    })
}

/// Cumulative block design on the sorted rows: block 0 is `x`, block `j` is `x` with the rows
/// of segments `0..j` zeroed. Returns the design and the matching response.
pub fn build_block_design(data: &Dataset, plan: &SplitPlan) -> (Matrix, Vec<f64>) {
    let (n, p) = (data.n(), data.p());
    let blocks = plan.q_n + 1;
    let mut out = Matrix::zeros(n, blocks * p);
    let mut y = Vec::with_capacity(n);
    for (seg_idx, seg) in plan.segments.iter().enumerate() {
        for rank in seg.clone() {
            let i = plan.rank_map[rank];
            y.push(data.y[i]);
            let xi = data.x.row(i);
            let row = out.row_mut(rank);
            for b in 0..=seg_idx {
                row[b * p..(b + 1) * p].copy_from_slice(xi);
            }
        }
    }
    (out, y)
}

/// Blocks `j >= 1` that are selected while block `j - 1` is not.
pub fn jump_starts(active: &[usize]) -> Vec<usize> {
    active
        .iter()
        .copied()
        .filter(|&j| j >= 1 && !active.contains(&(j - 1)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub plan: SplitPlan,
    /// Stacked `(beta, delta_1, ..., delta_{q_n})` of the block fit.
    pub gamma_star: Vec<f64>,
    /// Nonzero blocks, 0-based (block 0 is the baseline).
    pub active: Vec<usize>,
    pub jump_starts: Vec<usize>,
    pub s_hat: usize,
    /// Index range spanning segments `k - 1` and `k` for each jump start `k`.
    pub candidate_intervals: Vec<(f64, f64)>,
    pub lambda: f64,
    pub table: Vec<ScoreRow>,
}

impl SplitResult {
    /// Sorted index values inside the candidate interval of jump `j`.
    pub fn interval_values(&self, j: usize) -> &[f64] {
        let k = self.jump_starts[j];
        let lo = self.plan.segments[k - 1].start;
        let hi = self.plan.segments[k].end;
        &self.plan.sorted_w[lo..hi]
    }
}

fn theory_grid(n: usize, q_n: usize, p: usize, criterion: Criterion) -> Result<TuningGrid> {
    let nf = n as f64;
    let qp = ((q_n * p) as f64).max(core::f64::consts::E);
    let scale = (nf.ln() * qp.ln()).sqrt() / nf.sqrt();
    TuningGrid::log_spaced(0.05 * scale, 5.0 * scale, 50, criterion)
}

/// Group-penalized fit of the cumulative block design at the ordering given by `theta`.
pub fn split_stage(
    data: &Dataset,
    theta: &[f64],
    m: usize,
    template: &PenaltySpec,
    choice: &LambdaChoice,
    settings: &OptimizerSettings,
) -> Result<SplitResult> {
    let (n, p) = (data.n(), data.p());
    let plan = make_split_plan(&data.index(theta), m)?;
    let (design, y) = build_block_design(data, &plan);
    let sys = GramSystem::from_design(&design, &y)?;
    let grid = match choice {
        LambdaChoice::Auto(c) => theory_grid(n, plan.q_n, p, *c)?,
        other => other.grid(lambda_max_groups(&sys, p))?,
    };
    let sel = select_lambda(&grid, n, |lambda, warm: Option<&CdFit>| {
        let spec = template.with_lambda(lambda)?;
        let fit = gcd_penalized_ls(
            &sys,
            &spec,
            p,
            warm.map(|w| w.coef.as_slice()),
            settings.cd_tol,
            settings.max_sweeps,
        )?;
        let rss = sys.loss(&fit.coef) * n as f64;
        let df = nonzero(&fit.coef);
        Ok(Candidate { fit, rss, df })
    })?;
    let gamma_star = sel.fit.coef;
    let active: Vec<usize> = (0..=plan.q_n)
        .filter(|&b| gamma_star[b * p..(b + 1) * p].iter().any(|v| *v != 0.0))
        .collect();
    let starts = jump_starts(&active);
    let candidate_intervals = starts
        .iter()
        .map(|&k| {
            (
                plan.sorted_w[plan.segments[k - 1].start],
                plan.sorted_w[plan.segments[k].end - 1],
            )
        })
        .collect();
    Ok(SplitResult {
        s_hat: starts.len(),
        jump_starts: starts,
        candidate_intervals,
        active,
        gamma_star,
        lambda: sel.lambda,
        table: sel.table,
        plan,
    })
}

fn median(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

/// Starting thresholds: the median index inside each candidate interval, then one pass that
/// moves each threshold to the cut between consecutive index values in its interval with the
/// smallest least-squares residual sum of squares of the indicator-coded model.
pub fn initial_thresholds(data: &Dataset, theta: &[f64], split: &SplitResult) -> Vec<f64> {
    let w = data.index(theta);
    let mut a: Vec<f64> = (0..split.s_hat).map(|j| median(split.interval_values(j))).collect();
    for j in 0..split.s_hat {
        let vals = split.interval_values(j);
        let mut best = (f64::INFINITY, a[j]);
        for pair in vals.windows(2) {
            if pair[1] <= pair[0] {
                continue;
            }
            let cut = 0.5 * (pair[0] + pair[1]);
            a[j] = cut;
            let (_, rss) = exact_profile(data, &w, &a);
            if rss < best.0 {
                best = (rss, cut);
            }
        }
        a[j] = best.1;
    }
    a
}

/// Parameters of a refining run, before labels are attached.
struct Refined {
    coeffs: CoefficientSet,
    a: Vec<f64>,
    theta: Vec<f64>,
    objective: f64,
    converged: bool,
    iterations: usize,
    spec: PenaltySpec,
    h: f64,
}

fn refine_once(data: &Dataset, a0: &[f64], theta0: &[f64], config: &McplConfig) -> Result<Refined> {
    let settings = &config.settings;
    let h = config
        .bandwidth
        .unwrap_or_else(|| default_bandwidth(&data.index(theta0)));
    let schedule = SmoothingSpec::annealed(h, 0.5, config.anneal_steps)?.schedule();
    let (mut a, mut theta) = (a0.to_vec(), theta0.to_vec());
    for hk in schedule {
        let pf = optimize_plane(data, &a, true, &theta, hk, Profile::Profiled, settings);
        if pf.value.is_finite() {
            a = pf.a;
            theta = pf.theta;
        }
    }

    let tuned = fit_penalized(
        smoothed_system(data, &a, &theta, h)?,
        &config.penalty,
        &config.refine_lambda,
        settings,
    )?;
    let spec = tuned.spec;
    let mut gamma = tuned.cd.coef;
    let mut objective = tuned.sys.loss(&gamma) + penalty_total(&spec, &gamma);
    let mask = vec![true; gamma.len()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_outer_iter {
        iterations += 1;
        let coeffs = CoefficientSet::from_gamma(&gamma, data.p())?;
        let pf = optimize_plane(data, &a, true, &theta, h, Profile::Fixed(&coeffs), settings);
        let sys = smoothed_system(data, &pf.a, &pf.theta, h)?;
        let cd = cd_penalized_ls(&sys, &spec, &mask, Some(&gamma), settings.cd_tol, settings.max_sweeps)?;
        let value = sys.loss(&cd.coef) + penalty_total(&spec, &cd.coef);
        if !(value <= objective) {
            converged = true;
            break;
        }
        a = pf.a;
        theta = pf.theta;
        gamma = cd.coef;
        let change = (objective - value) / objective.abs().max(1e-300);
        objective = value;
        if change < settings.tol {
            converged = true;
            break;
        }
    }
    Ok(Refined {
        coeffs: CoefficientSet::from_gamma(&gamma, data.p())?,
        a,
        theta,
        objective,
        converged,
        iterations,
        spec,
        h,
    })
}

/// Orients `theta` so its largest coordinate is positive, re-expressing the other parameters.
fn canonical_orientation(
    coeffs: CoefficientSet,
    a: Vec<f64>,
    theta: Vec<f64>,
) -> (CoefficientSet, Vec<f64>, Vec<f64>, usize) {
    let r = largest_coordinate(&theta);
    if theta[r] < 0.0 {
        let (c, a, t) = flip_orientation(&coeffs, &a, &theta);
        (c, a, t, r)
    } else {
        (coeffs, a, theta, r)
    }
}

/// First threshold to merge or drop: two thresholds closer than `1e-8`, or a group with no
/// training rows.
fn degeneracy(a: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let s = a.len();
    if let Some(k) = (0..s.saturating_sub(1)).find(|&k| a[k + 1] - a[k] < 1e-8) {
        let mut out = a.to_vec();
        out[k] = 0.5 * (a[k] + a[k + 1]);
        out.remove(k + 1);
        return Some(out);
    }
    let mut sizes = vec![0usize; s + 1];
    for &wi in w {
        sizes[a.iter().filter(|&&ak| wi > ak).count()] += 1;
    }
    let g = sizes.iter().position(|&c| c == 0)?;
    let mut out = a.to_vec();
    if g == 0 {
        out.remove(0);
    } else if g == s {
        out.remove(s - 1);
    } else {
        out[g - 1] = 0.5 * (a[g - 1] + a[g]);
        out.remove(g);
    }
    Some(out)
}

/// Smoothed penalized fit over `(gamma, a, theta)` with `a0.len()` thresholds.
///
/// An unpenalized warm-up minimizes the profiled smoothed loss over `(a, theta)` while the
/// bandwidth is annealed down to `h`; the regularization level is then chosen on the smoothed
/// design, and coefficient and plane steps alternate until the relative objective change falls
/// below the tolerance. A collapsed threshold pair, an empty group or a threshold with an
/// all-zero jump is removed and the fit is rerun with fewer thresholds; when none would remain
/// this is an error.
pub fn refine_stage(data: &Dataset, a0: &[f64], theta0: &[f64], config: &McplConfig) -> Result<ModelFit> {
    if a0.is_empty() {
        return Err(Error::InvalidInput("refining needs at least one threshold".into()));
    }
    Thresholds::new(a0.to_vec())?;
    if theta0.len() != data.d() {
        return Err(Error::dim("starting direction length differs from z"));
    }
    let mut a_start = a0.to_vec();
    let mut theta_start = theta0.to_vec();
    let mut retried = false;
    loop {
        let r = refine_once(data, &a_start, &theta_start, config)?;
        let (coeffs, mut a, theta, idx) = canonical_orientation(r.coeffs, r.a, r.theta);
        let w = data.index(&theta);
        let (lo, hi) = w
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        for ak in a.iter_mut() {
            *ak = ak.clamp(lo, hi);
        }
        // A threshold whose jump is entirely zero leaves the model unchanged; drop it.
        let kept: Vec<f64> = a
            .iter()
            .zip(&coeffs.deltas)
            .filter(|(_, d)| d.iter().any(|v| *v != 0.0))
            .map(|(ak, _)| *ak)
            .collect();
        if kept.len() < a.len() {
            if kept.is_empty() {
                return Err(Error::Degenerate("no threshold carries a nonzero jump".into()));
            }
            a_start = kept;
            theta_start = theta;
            retried = true;
            continue;
        }
        if let Some(merged) = degeneracy(&a, &w) {
            if merged.is_empty() {
                return Err(Error::Degenerate(format!(
                    "the single threshold {} leaves a group empty",
                    a[0]
                )));
            }
            a_start = merged;
            theta_start = theta;
            retried = true;
            continue;
        }
        let mut fit = ModelFit::assemble(
            FitMode::Multi,
            data,
            coeffs,
            Thresholds::new(a)?,
            ThetaVector::new(theta, idx)?,
        )?;
        fit.objective = r.objective;
        fit.converged = r.converged;
        fit.iterations = r.iterations;
        fit.lambda = r.spec.lambda();
        fit.bandwidth = r.h;
        fit.flags.degenerate_retry = retried;
        fit.flags.theta_unidentified = fit.coeffs.deltas.iter().all(|d| d.iter().all(|v| *v == 0.0));
        return Ok(fit);
    }
}

/// Penalized regression of `y` on `x` alone, reported as a fit with no thresholds.
pub fn no_subgroup_fit(data: &Dataset, theta: &[f64], config: &McplConfig) -> Result<ModelFit> {
    let sys = GramSystem::from_design(&data.x, &data.y)?;
    let tuned = fit_penalized(sys, &config.penalty, &config.refine_lambda, &config.settings)?;
    let objective = tuned.sys.loss(&tuned.cd.coef) + penalty_total(&tuned.spec, &tuned.cd.coef);
    let r = largest_coordinate(theta);
    let mut fit = ModelFit::assemble(
        FitMode::Multi,
        data,
        CoefficientSet::from_gamma(&tuned.cd.coef, data.p())?,
        Thresholds::empty(),
        ThetaVector::new(theta.to_vec(), r)?,
    )?;
    fit.objective = objective;
    fit.converged = tuned.cd.converged;
    fit.iterations = tuned.cd.sweeps;
    fit.lambda = tuned.spec.lambda();
    fit.flags.no_subgroup = true;
    fit.flags.theta_unidentified = true;
    Ok(fit)
}

/// BIC used to compare fits with different numbers of thresholds; every threshold carries
/// `d + 1` extra parameters.
pub fn comparison_bic(fit: &ModelFit, n: usize, d: usize) -> f64 {
    bic_score(fit.rss, n, fit.nonzero_count() + fit.s() * (d + 1))
}

/// Default segment size `ceil(sqrt(n))`.
pub fn default_segment_size(n: usize) -> usize {
    let mut m = (n as f64).sqrt() as usize;
    while m * m < n {
        m += 1;
    }
    m.max(1)
}

fn check_inputs(data: &Dataset, config: &McplConfig) -> Result<()> {
    config.settings.validate()?;
    if config.max_rounds == 0 {
        return Err(Error::InvalidInput("max_rounds must be at least 1".into()));
    }
    if let Some(t) = &config.theta0 {
        if t.len() != data.d() {
            return Err(Error::dim("starting direction length differs from z"));
        }
    }
    if let Some(h) = config.bandwidth {
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")));
        }
    }
    Ok(())
}

/// Starting direction: the non-intercept part of a single-plane pilot through
/// intercept-augmented `z`.
pub fn pilot_direction(data: &Dataset, settings: &OptimizerSettings) -> Vec<f64> {
    let d = data.d();
    if d == 1 {
        return vec![1.0];
    }
    let aug = data.with_z_intercept();
    let full = pilot_plane(&aug, settings, None);
    let tail = &full[1..];
    let norm = crate::linalg::norm2(tail);
    if norm > 0.0 {
        tail.iter().map(|v| v / norm).collect()
    } else {
        let mut v = vec![0.0; d];
        v[0] = 1.0;
        v
    }
}

/// Two-stage multi-threshold fit, iterated until the estimated number of thresholds repeats.
pub fn fit_mcpl(data: &Dataset, config: &McplConfig) -> Result<ModelFit> {
    check_inputs(data, config)?;
    let (n, d) = (data.n(), data.d());
    let m = config.m.unwrap_or_else(|| default_segment_size(n));
    if 2 * m > n {
        return Err(Error::SegmentTooLarge { m, n });
    }
    let mut theta = if d == 1 {
        vec![1.0]
    } else {
        match &config.theta0 {
            Some(t) => t.clone(),
            None => pilot_direction(data, &config.settings),
        }
    };
    theta = ThetaVector::canonical(theta)?.values().to_vec();

    let mut visited: Vec<ModelFit> = Vec::new();
    let mut prev_split: Option<usize> = None;
    for _ in 0..config.max_rounds {
        let split = split_stage(data, &theta, m, &config.penalty, &config.split_lambda, &config.settings)?;
        let s = split.s_hat;
        if prev_split == Some(s) {
            if let Some(last) = visited.pop() {
                return Ok(last);
            }
        }
        if s == 0 {
            return no_subgroup_fit(data, &theta, config);
        }
        let a0 = initial_thresholds(data, &theta, &split);
        let fit = match refine_stage(data, &a0, &theta, config) {
            Ok(f) => f,
            Err(Error::Degenerate(_)) => {
                let mut f = no_subgroup_fit(data, &theta, config)?;
                f.flags.degenerate_retry = true;
                return Ok(f);
            }
            Err(e) => return Err(e),
        };
        theta = fit.theta.values().to_vec();
        visited.push(fit);
        prev_split = Some(s);
    }
    let best = visited.into_iter().map(|f| (comparison_bic(&f, n, d), f)).fold(
        None::<(f64, ModelFit)>,
        |acc, (b, f)| match acc {
            Some((ab, af)) if ab <= b => Some((ab, af)),
            _ => Some((b, f)),
        },
    );
    let (_, mut fit) = best.ok_or(Error::TuningFailed)?;
    fit.flags.oscillated = true;
    Ok(fit)
}
