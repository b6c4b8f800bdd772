//! Pieces shared by the single- and multi-threshold fitters: penalized coefficient fits on the
//! smoothed design, joint `(a, theta)` minimization and the multistart plane pilot.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::linalg::{dot, norm2, solve_spd_ridge, Matrix};
use crate::model::{expand_with_index, CoefficientSet, Dataset};
use crate::optimize::{
    bandwidth_with_rate, cd_penalized_ls, lambda_max_coordinates, minimize_with_sphere_block, profiled_objective,
    smoothed_design, smoothed_gradient, CdFit, GramSystem, OptimizerSettings,
};
use crate::penalty::PenaltySpec;
use crate::tuning::{select_lambda, Candidate, LambdaChoice};

#[allow(unused_imports)]
use num_traits::Float;

/// Relative tolerance for the inner quasi-Newton solves.
pub(crate) const INNER_TOL: f64 = 1e-10;

pub(crate) struct GammaFit {
    pub spec: PenaltySpec,
    pub cd: CdFit,
    pub sys: GramSystem,
}

pub(crate) fn penalty_total(spec: &PenaltySpec, gamma: &[f64]) -> f64 {
    gamma.iter().map(|g| spec.value(*g)).sum()
}

pub(crate) fn nonzero(v: &[f64]) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

pub(crate) fn smoothed_system(data: &Dataset, a: &[f64], theta: &[f64], h: f64) -> Result<GramSystem> {
    GramSystem::from_design(&smoothed_design(data, a, theta, h), &data.y)
}

/// Penalized least squares on a fixed design with every coefficient penalized, `lambda` chosen
/// by `choice`.
pub(crate) fn fit_penalized(
    sys: GramSystem,
    template: &PenaltySpec,
    choice: &LambdaChoice,
    settings: &OptimizerSettings,
) -> Result<GammaFit> {
    let mask = vec![true; sys.dim()];
    let grid = choice.grid(lambda_max_coordinates(&sys, &mask))?;
    let n = sys.n;
    let ls = solve_spd_ridge(&sys.g, &sys.c);
    let sel = select_lambda(&grid, n, |lambda, warm: Option<&CdFit>| {
        let spec = template.with_lambda(lambda)?;
        let run =
            |start: Option<&[f64]>| cd_penalized_ls(&sys, &spec, &mask, start, settings.cd_tol, settings.max_sweeps);
        // The path start and the least-squares start can reach different local minima of the
        // concave objective; keep the lower one.
        let path = run(warm.map(|w| w.coef.as_slice()))?;
        let local = run(Some(&ls))?;
        let cd = if local.objective() < path.objective() {
            local
        } else {
            path
        };
        let rss = sys.loss(&cd.coef) * n as f64;
        let df = nonzero(&cd.coef);
        Ok(Candidate { fit: cd, rss, df })
    })?;
    Ok(GammaFit {
        spec: template.with_lambda(sel.lambda)?,
        cd: sel.fit,
        sys,
    })
}

/// What `gamma` does while `(a, theta)` move.
#[derive(Clone, Copy)]
pub(crate) enum Profile<'a> {
    /// Least squares for every `(a, theta)`.
    Profiled,
    Fixed(&'a CoefficientSet),
}

pub(crate) struct PlaneFit {
    pub a: Vec<f64>,
    pub theta: Vec<f64>,
    pub value: f64,
}

/// `(a_1, log(a_2 - a_1), ..., log(a_s - a_{s-1}))`.
pub(crate) fn encode_thresholds(a: &[f64]) -> Vec<f64> {
    let mut u = Vec::with_capacity(a.len());
    if let Some(first) = a.first() {
        u.push(*first);
    }
    for w in a.windows(2) {
        u.push((w[1] - w[0]).max(1e-300).ln());
    }
    u
}

pub(crate) fn decode_thresholds(u: &[f64]) -> Vec<f64> {
    let mut a = Vec::with_capacity(u.len());
    let mut cur = 0.0;
    for (k, v) in u.iter().enumerate() {
        cur = if k == 0 { *v } else { cur + v.exp() };
        a.push(cur);
    }
    a
}

/// Minimizes the smoothed loss over `(a, theta)` at bandwidth `h`. With `free_a = false` the
/// thresholds stay at `a0` and only the direction moves.
pub(crate) fn optimize_plane(
    data: &Dataset,
    a0: &[f64],
    free_a: bool,
    theta0: &[f64],
    h: f64,
    profile: Profile<'_>,
    settings: &OptimizerSettings,
) -> PlaneFit {
    let s = a0.len();
    let euclid = if free_a { s } else { 0 };
    let mut x0 = if free_a { encode_thresholds(a0) } else { Vec::new() };
    x0.extend_from_slice(theta0);
    let f = |x: &[f64]| {
        let a = if free_a {
            decode_thresholds(&x[..s])
        } else {
            a0.to_vec()
        };
        let theta = &x[euclid..];
        let (value, grad) = match profile {
            Profile::Profiled => {
                let (v, g, _) = profiled_objective(data, &a, theta, h);
                (v, g)
            }
            Profile::Fixed(c) => smoothed_gradient(data, c, &a, theta, h),
        };
        let mut out = Vec::with_capacity(x.len());
        if free_a {
            // d a_k / d u_0 = 1; d a_k / d u_j = exp(u_j) for k >= j.
            let mut tail = 0.0;
            let mut suffix = vec![0.0; s];
            for k in (0..s).rev() {
                tail += grad.a[k];
                suffix[k] = tail;
            }
            out.push(suffix[0]);
            for j in 1..s {
                out.push(x[j].exp() * suffix[j]);
            }
        }
        out.extend_from_slice(&grad.theta);
        (value, out)
    };
    let m = minimize_with_sphere_block(f, &x0, euclid, settings.max_inner_iter, INNER_TOL);
    let a = if free_a {
        decode_thresholds(&m.x[..s])
    } else {
        a0.to_vec()
    };
    PlaneFit {
        a,
        theta: m.x[euclid..].to_vec(),
        value: m.value,
    }
}

/// Least-squares coefficients and residual sum of squares of the indicator-coded model.
pub(crate) fn exact_profile(data: &Dataset, w: &[f64], a: &[f64]) -> (CoefficientSet, f64) {
    let design = expand_with_index(&data.x, w, a);
    exact_profile_design(data, &design)
}

fn exact_profile_design(data: &Dataset, design: &Matrix) -> (CoefficientSet, f64) {
    let sys = GramSystem::from_design(design, &data.y).expect("shapes agree");
    let gamma = solve_spd_ridge(&sys.g, &sys.c);
    let rss = sys.loss(&gamma) * data.n() as f64;
    (CoefficientSet::from_gamma(&gamma, data.p()).expect("block layout"), rss)
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let nv = norm2(&v);
        if nv > 1e-8 {
            return v.into_iter().map(|x| x / nv).collect();
        }
    }
}

/// Start built from the data: least-squares direction of `z` regressed on the sign of the
/// residuals from a plain regression of `y` on `x`.
fn residual_sign_start(data: &Dataset) -> Option<Vec<f64>> {
    let sys = GramSystem::from_design(&data.x, &data.y).ok()?;
    let beta = solve_spd_ridge(&sys.g, &sys.c);
    let sign: Vec<f64> = (0..data.n())
        .map(|i| {
            let r = data.y[i] - dot(data.x.row(i), &beta);
            if r > 0.0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    let zs = GramSystem::from_design(&data.z, &sign).ok()?;
    let dir = solve_spd_ridge(&zs.g, &zs.c);
    let nd = norm2(&dir);
    (nd > 0.0 && nd.is_finite()).then(|| dir.into_iter().map(|v| v / nd).collect())
}

/// Multistart pilot for a single plane through intercept-augmented `z` (threshold fixed at 0):
/// profiled smoothed fits at a coarse bandwidth from random unit starts and one data-driven
/// start, the winner picked by the exact (indicator) profiled residual sum of squares, ties to
/// the earlier start. The winner is then annealed down to `fine_rate` when given.
pub(crate) fn pilot_plane(data: &Dataset, settings: &OptimizerSettings, fine_rate: Option<f64>) -> Vec<f64> {
    let d = data.d();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(settings.multistarts + 1);
    if let Some(s) = residual_sign_start(data) {
        starts.push(s);
    }
    for _ in 0..settings.multistarts {
        starts.push(random_unit(&mut rng, d));
    }
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for start in &starts {
        let h0 = bandwidth_with_rate(&data.index(start), 0.3);
        let fit = optimize_plane(data, &[0.0], false, start, h0, Profile::Profiled, settings);
        if !fit.value.is_finite() {
            continue;
        }
        let (_, rss) = exact_profile(data, &data.index(&fit.theta), &[0.0]);
        if best.as_ref().is_none_or(|(b, _, _)| rss < *b) {
            best = Some((rss, fit.theta, h0));
        }
    }
    let (_, mut theta, h0) = best.unwrap_or_else(|| {
        let mut v = vec![0.0; d];
        v[d - 1] = 1.0;
        (f64::INFINITY, v, 1.0)
    });
    if let Some(rate) = fine_rate {
        let h1 = bandwidth_with_rate(&data.index(&theta), rate);
        let steps = 4;
        for k in 1..=steps {
            let h = h0 * (h1 / h0).powf(k as f64 / steps as f64);
            let fit = optimize_plane(data, &[0.0], false, &theta, h, Profile::Profiled, settings);
            if fit.value.is_finite() {
                theta = fit.theta;
            }
        }
    }
    theta
}
