use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, dot, max_eigenvalue, solve_spd_ridge, Matrix};
use crate::penalty::PenaltySpec;

#[allow(unused_imports)]
use num_traits::Float;

/// Sufficient statistics of a least-squares problem: `G = X'X/n`, `c = X'y/n`, `yy = y'y/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSystem {
    pub g: Matrix,
    pub c: Vec<f64>,
    pub yy: f64,
    pub n: usize,
}

impl GramSystem {
    pub fn from_design(x: &Matrix, y: &[f64]) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::dim(alloc::format!(
                "design has {} rows but response has {}",
                x.rows(),
                y.len()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::InvalidInput("empty design".into()));
        }
        let n = x.rows() as f64;
        Ok(Self {
            g: x.gram(n),
            c: x.tr_mul_vec(y).into_iter().map(|v| v / n).collect(),
            yy: dot(y, y) / n,
            n: x.rows(),
        })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// `(1/n)||y - Xb||^2`.
    pub fn loss(&self, b: &[f64]) -> f64 {
        let gb = self.g.mul_vec(b);
        (self.yy - 2.0 * dot(&self.c, b) + dot(b, &gb)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdFit {
    pub coef: Vec<f64>,
    /// Loss plus penalty after every sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl CdFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

fn coordinate_objective(sys: &GramSystem, pen: &PenaltySpec, mask: &[bool], b: &[f64]) -> f64 {
    let p: f64 = b.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| pen.value(*v)).sum();
    sys.loss(b) + p
}

fn least_squares(sys: &GramSystem) -> Vec<f64> {
    match cholesky(&sys.g) {
        Ok(l) => cholesky_solve(&l, &sys.c),
        Err(_) => solve_spd_ridge(&sys.g, &sys.c),
    }
}

/// Coordinate descent for `(1/n)||y - Xb||^2 + sum_{j in mask} p_lambda(|b_j|)`.
///
/// Each coordinate is minimized exactly, so the objective never increases across sweeps.
pub fn cd_penalized_ls(
    sys: &GramSystem,
    penalty: &PenaltySpec,
    penalized: &[bool],
    warm: Option<&[f64]>,
    tol: f64,
    max_sweeps: usize,
) -> Result<CdFit> {
    let k = sys.dim();
    if penalized.len() != k {
        return Err(Error::dim("penalty mask length differs from design width"));
    }
    if penalty.lambda() == 0.0 || !penalized.iter().any(|&m| m) {
        let coef = least_squares(sys);
        let obj = coordinate_objective(sys, penalty, penalized, &coef);
        return Ok(CdFit {
            coef,
            objective_trace: vec![obj],
            sweeps: 0,
            converged: true,
        });
    }
    let mut b = match warm {
        Some(w) if w.len() == k => w.to_vec(),
        Some(_) => return Err(Error::dim("warm start length differs from design width")),
        None => vec![0.0; k],
    };
    let mut t = sys.g.mul_vec(&b);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..k {
            let gjj = sys.g[(j, j)];
            let old = b[j];
            let new = if gjj <= 0.0 {
                0.0
            } else {
                let u = (sys.c[j] - t[j] + gjj * old) / gjj;
                if penalized[j] {
                    penalty.prox(u, 2.0 * gjj)
                } else {
                    u
                }
            };
            let diff = new - old;
            if diff != 0.0 {
                b[j] = new;
                let row = sys.g.row(j);
                for (ti, gji) in t.iter_mut().zip(row) {
                    *ti += diff * gji;
                }
                max_change = max_change.max(diff.abs());
            }
        }
        trace.push(coordinate_objective(sys, penalty, penalized, &b));
        if max_change < tol {
            converged = true;
            break;
        }
    }
    Ok(CdFit {
        coef: b,
        objective_trace: trace,
        sweeps,
        converged,
    })
}

fn group_objective(sys: &GramSystem, pen: &PenaltySpec, size: usize, b: &[f64]) -> f64 {
    let p: f64 = b[size..]
        .chunks(size)
        .map(|g| pen.value(g.iter().map(|v| v * v).sum::<f64>().sqrt()))
        .sum();
    sys.loss(b) + p
}

/// Block coordinate descent for
/// `(1/n)||y - Xb||^2 + sum_{g >= 1} p_lambda(||b_g||)` with equal blocks of `size` columns.
/// The first block is unpenalized and solved exactly; the others take majorize-minimize
/// steps with the block's largest Gram eigenvalue.
pub fn gcd_penalized_ls(
    sys: &GramSystem,
    penalty: &PenaltySpec,
    size: usize,
    warm: Option<&[f64]>,
    tol: f64,
    max_sweeps: usize,
) -> Result<CdFit> {
    let k = sys.dim();
    if size == 0 || k % size != 0 {
        return Err(Error::dim("design width is not a multiple of the block size"));
    }
    if penalty.lambda() == 0.0 || k == size {
        let coef = least_squares(sys);
        let obj = group_objective(sys, penalty, size, &coef);
        return Ok(CdFit {
            coef,
            objective_trace: vec![obj],
            sweeps: 0,
            converged: true,
        });
    }
    let blocks = k / size;
    let idx: Vec<usize> = (0..size).collect();
    let first = sys.g.select(&idx, &idx);
    let first_chol = cholesky(&first).ok();
    let lips: Vec<f64> = (1..blocks)
        .map(|gi| {
            let cols: Vec<usize> = (gi * size..(gi + 1) * size).collect();
            max_eigenvalue(&sys.g.select(&cols, &cols))
        })
        .collect();
    let mut b = match warm {
        Some(w) if w.len() == k => w.to_vec(),
        Some(_) => return Err(Error::dim("warm start length differs from design width")),
        None => vec![0.0; k],
    };
    let mut t = sys.g.mul_vec(&b);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    let mut rhs = vec![0.0; size];
    let mut u = vec![0.0; size];
    let update = |b: &mut [f64], t: &mut [f64], j: usize, new: f64| -> f64 {
        let diff = new - b[j];
        if diff != 0.0 {
            b[j] = new;
            for (ti, gji) in t.iter_mut().zip(sys.g.row(j)) {
                *ti += diff * gji;
            }
        }
        diff.abs()
    };
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        // Unpenalized block: exact solve given the others.
        for j in 0..size {
            rhs[j] = sys.c[j] - t[j] + dot(&sys.g.row(j)[..size], &b[..size]);
        }
        let sol = match &first_chol {
            Some(l) => cholesky_solve(l, &rhs),
            None => solve_spd_ridge(&first, &rhs),
        };
        for j in 0..size {
            max_change = max_change.max(update(&mut b, &mut t, j, sol[j]));
        }
        for gi in 1..blocks {
            let lip = lips[gi - 1];
            let range = gi * size..(gi + 1) * size;
            if lip <= 0.0 {
                for j in range {
                    max_change = max_change.max(update(&mut b, &mut t, j, 0.0));
                }
                continue;
            }
            for _ in 0..5 {
                for (o, j) in range.clone().enumerate() {
                    u[o] = b[j] + (sys.c[j] - t[j]) / lip;
                }
                let nb = penalty.group_prox(&u, 2.0 * lip);
                let mut inner: f64 = 0.0;
                for (o, j) in range.clone().enumerate() {
                    inner = inner.max(update(&mut b, &mut t, j, nb[o]));
                }
                max_change = max_change.max(inner);
                if inner < tol {
                    break;
                }
            }
        }
        trace.push(group_objective(sys, penalty, size, &b));
        if max_change < tol {
            converged = true;
            break;
        }
    }
    Ok(CdFit {
        coef: b,
        objective_trace: trace,
        sweeps,
        converged,
    })
}

fn unpenalized_fit(sys: &GramSystem, free: &[usize]) -> Vec<f64> {
    let mut b = vec![0.0; sys.dim()];
    if free.is_empty() {
        return b;
    }
    let g = sys.g.select(free, free);
    let c: Vec<f64> = free.iter().map(|&j| sys.c[j]).collect();
    let sol = solve_spd_ridge(&g, &c);
    for (&j, v) in free.iter().zip(sol) {
        b[j] = v;
    }
    b
}

/// Smallest `lambda` at which every penalized coordinate is zero at a stationary point.
pub fn lambda_max_coordinates(sys: &GramSystem, penalized: &[bool]) -> f64 {
    let free: Vec<usize> = (0..sys.dim()).filter(|&j| !penalized[j]).collect();
    let b = unpenalized_fit(sys, &free);
    let gb = sys.g.mul_vec(&b);
    (0..sys.dim())
        .filter(|&j| penalized[j])
        .map(|j| 2.0 * (sys.c[j] - gb[j]).abs())
        .fold(0.0, f64::max)
}

/// Group analogue of [`lambda_max_coordinates`] for the layout of [`gcd_penalized_ls`].
pub fn lambda_max_groups(sys: &GramSystem, size: usize) -> f64 {
    let free: Vec<usize> = (0..size.min(sys.dim())).collect();
    let b = unpenalized_fit(sys, &free);
    let gb = sys.g.mul_vec(&b);
    let r: Vec<f64> = sys.c.iter().zip(&gb).map(|(c, g)| 2.0 * (c - g)).collect();
    r[size..]
        .chunks(size)
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Matrix, Vec<f64>) {
        let rows: Vec<[f64; 4]> = (0..40)
            .map(|i| {
                let t = i as f64;
                [
                    1.0,
                    (t * 0.37).sin(),
                    (t * 0.11).cos(),
                    ((t * 0.53).sin() + 0.3 * (t * 0.2).cos()),
                ]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| 1.0 + 2.0 * r[1] + 0.05 * r[3] + 0.01 * ((i as f64) * 1.7).sin())
            .collect();
        (x, y)
    }

    #[test]
    fn zero_lambda_is_least_squares() {
        let (x, y) = toy();
        let sys = GramSystem::from_design(&x, &y).unwrap();
        let fit = cd_penalized_ls(&sys, &PenaltySpec::scad(0.0).unwrap(), &[true; 4], None, 1e-10, 100).unwrap();
        let ls = least_squares(&sys);
        for (a, b) in fit.coef.iter().zip(&ls) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_is_monotone() {
        let (x, y) = toy();
        let sys = GramSystem::from_design(&x, &y).unwrap();
        for pen in [PenaltySpec::scad(0.08).unwrap(), PenaltySpec::mcp(0.08).unwrap()] {
            let fit = cd_penalized_ls(&sys, &pen, &[false, true, true, true], None, 1e-10, 1000).unwrap();
            assert!(fit.converged);
            for w in fit.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-14);
            }
            let g = gcd_penalized_ls(&sys, &pen, 2, None, 1e-10, 1000).unwrap();
            for w in g.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-14);
            }
        }
    }

    #[test]
    fn above_lambda_max_everything_zero() {
        let (x, y) = toy();
        let sys = GramSystem::from_design(&x, &y).unwrap();
        let mask = [false, true, true, true];
        let lmax = lambda_max_coordinates(&sys, &mask);
        let fit = cd_penalized_ls(&sys, &PenaltySpec::scad(lmax * 1.01).unwrap(), &mask, None, 1e-10, 1000).unwrap();
        assert!(fit.coef[1..].iter().all(|&v| v == 0.0), "{:?}", fit.coef);
        let gmax = lambda_max_groups(&sys, 2);
        let g = gcd_penalized_ls(&sys, &PenaltySpec::scad(gmax * 1.01).unwrap(), 2, None, 1e-10, 1000).unwrap();
        assert!(g.coef[2..].iter().all(|&v| v == 0.0));
    }
}
