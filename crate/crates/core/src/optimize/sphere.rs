use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{dot, norm2};

#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest step length (in parameter norm) the first trial point may take.
const MAX_STEP: f64 = 0.5;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;

fn normalize_block(x: &mut [f64], euclid: usize) {
    let tail = &mut x[euclid..];
    if tail.is_empty() {
        return;
    }
    let nrm = norm2(tail);
    if nrm > 0.0 {
        for v in tail.iter_mut() {
            *v /= nrm;
        }
    }
}

/// Tangent-space gradient: the sphere block has its radial component removed.
fn project(x: &[f64], g: &mut [f64], euclid: usize) {
    if x.len() == euclid {
        return;
    }
    let r = dot(&x[euclid..], &g[euclid..]);
    for (gj, xj) in g[euclid..].iter_mut().zip(&x[euclid..]) {
        *gj -= r * xj;
    }
}

/// Quasi-Newton minimization of `f` over `R^euclid x S^(k-1)`, where the first `euclid`
/// coordinates of `x0` are free and the remaining `k` form a unit vector.
///
/// `f` receives points whose sphere block is already normalized and returns the value and
/// the ambient gradient there. BFGS runs on the unnormalized parameters with Armijo
/// backtracking; accepted points are renormalized. A one-dimensional sphere block never moves.
pub fn minimize_with_sphere_block<F>(mut f: F, x0: &[f64], euclid: usize, max_iter: usize, tol: f64) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let k = x0.len();
    debug_assert!(euclid <= k);
    let mut x = x0.to_vec();
    normalize_block(&mut x, euclid);
    let (mut fx, mut g) = f(&x);
    project(&x, &mut g, euclid);
    if !fx.is_finite() {
        return Minimum {
            x,
            value: fx,
            iterations: 0,
            converged: false,
        };
    }
    // Inverse Hessian approximation, row-major.
    let mut hinv = identity(k);
    let mut scaled = false;
    let mut small_changes = 0usize;
    let mut trial = vec![0.0; k];
    for iter in 0..max_iter {
        if norm2(&g) <= 1e-12 * (1.0 + fx.abs()) {
            return Minimum {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            };
        }
        let mut dir: Vec<f64> = (0..k).map(|i| -dot(&hinv[i * k..(i + 1) * k], &g)).collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            hinv = identity(k);
            scaled = false;
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        let dn = norm2(&dir);
        if dn > MAX_STEP {
            let s = MAX_STEP / dn;
            for v in dir.iter_mut() {
                *v *= s;
            }
            slope *= s;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            for i in 0..k {
                trial[i] = x[i] + step * dir[i];
            }
            normalize_block(&mut trial, euclid);
            let (ft, gt) = f(&trial);
            if ft.is_finite() && ft <= fx + ARMIJO * step * slope {
                accepted = Some((ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((fnew, mut gnew)) = accepted else {
            // No descent along the current direction; a steepest-descent restart has already
            // been tried when the metric was the identity.
            if scaled || !is_identity(&hinv) {
                hinv = identity(k);
                scaled = false;
                continue;
            }
            return Minimum {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            };
        };
        project(&trial, &mut gnew, euclid);
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                for v in hinv.iter_mut() {
                    *v *= gamma;
                }
                scaled = true;
            }
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        let change = (fx - fnew).abs();
        x.copy_from_slice(&trial);
        g = gnew;
        let prev = fx;
        fx = fnew;
        if change <= tol * (prev.abs() + 1e-12) {
            small_changes += 1;
            if small_changes >= 2 {
                return Minimum {
                    x,
                    value: fx,
                    iterations: iter + 1,
                    converged: true,
                };
            }
        } else {
            small_changes = 0;
        }
    }
    Minimum {
        x,
        value: fx,
        iterations: max_iter,
        converged: false,
    }
}

/// Minimization over the unit sphere alone.
pub fn sphere_optimize<F>(f: F, v0: &[f64], max_iter: usize, tol: f64) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    minimize_with_sphere_block(f, v0, 0, max_iter, tol)
}

fn identity(k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        m[i * k + i] = 1.0;
    }
    m
}

fn is_identity(m: &[f64]) -> bool {
    let k = (m.len() as f64).sqrt() as usize;
    (0..k).all(|i| (0..k).all(|j| m[i * k + j] == if i == j { 1.0 } else { 0.0 }))
}

/// `H <- (I - rho s y') H (I - rho y s') + rho s s'`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let k = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..k).map(|i| dot(&h[i * k..(i + 1) * k], y)).collect();
    let yhy = dot(y, &hy);
    let coef = rho * rho * yhy + rho;
    for i in 0..k {
        for j in 0..k {
            h[i * k + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}
