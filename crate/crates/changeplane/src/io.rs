//! CSV ingestion by column role, standardization and its inverse.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use changeplane_core::linalg::Matrix;
use changeplane_core::model::{CoefficientSet, FitMode, ModelFit, ThetaVector, Thresholds};
use changeplane_core::Dataset;

use crate::error::AppError;

/// Column names for each role. `x` and `z` may share columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roles {
    pub y: String,
    pub x: Vec<String>,
    pub z: Vec<String>,
    /// Prepend a constant-1 column to `x`.
    pub intercept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub data: Dataset,
    /// Names of the `x` columns, `"intercept"` first when one was added.
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
}

pub const INTERCEPT_NAME: &str = "intercept";

pub fn load_csv(path: &Path, roles: &Roles) -> Result<LoadedData, AppError> {
    let file = File::open(path).map_err(|source| AppError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, roles)
}

/// Reads a headed, comma-separated table. Rows are numbered from 1 after the header in errors.
pub fn read_csv<R: Read>(reader: R, roles: &Roles) -> Result<LoadedData, AppError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AppError::MissingColumn(name.to_owned()))
    };
    let yi = find(&roles.y)?;
    let xi = roles.x.iter().map(|c| find(c)).collect::<Result<Vec<_>, _>>()?;
    let zi = roles.z.iter().map(|c| find(c)).collect::<Result<Vec<_>, _>>()?;
    if roles.z.is_empty() {
        return Err(AppError::Usage("at least one grouping column is required".into()));
    }
    if roles.x.is_empty() && !roles.intercept {
        return Err(AppError::Usage(
            "no covariates: give x columns or keep the intercept".into(),
        ));
    }

    let off = usize::from(roles.intercept);
    let p = xi.len() + off;
    let d = zi.len();
    let (mut y, mut xv, mut zv) = (Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let cell = |j: usize| -> Result<f64, AppError> {
            let raw = rec.get(j).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| AppError::NonNumeric {
                    row,
                    column: header[j].clone(),
                    value: raw.to_owned(),
                })
        };
        y.push(cell(yi)?);
        if roles.intercept {
            xv.push(1.0);
        }
        for &j in &xi {
            xv.push(cell(j)?);
        }
        for &j in &zi {
            zv.push(cell(j)?);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(AppError::Empty);
    }
    let x = Matrix::from_vec(n, p, xv)?;
    let z = Matrix::from_vec(n, d, zv)?;
    let mut x_names = Vec::with_capacity(p);
    if roles.intercept {
        x_names.push(INTERCEPT_NAME.to_owned());
    }
    x_names.extend(roles.x.iter().cloned());
    Ok(LoadedData {
        data: Dataset::new(y, x, z)?,
        x_names,
        z_names: roles.z.clone(),
    })
}

/// Replaces the grouping columns by their row mean, giving a one-dimensional index.
pub fn equal_weight_z(data: &Dataset) -> Dataset {
    let d = data.d() as f64;
    let z = (0..data.n()).map(|i| data.z.row(i).iter().sum::<f64>() / d).collect();
    Dataset {
        y: data.y.clone(),
        x: data.x.clone(),
        z: Matrix::from_vec(data.n(), 1, z).expect("one column"),
    }
}

/// Per-column centers and scales; constant-1 columns are left alone (center 0, scale 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub x_center: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub z_center: Vec<f64>,
    pub z_scale: Vec<f64>,
    /// Position of the constant-1 column of `x`, if any.
    pub x_intercept: Option<usize>,
}

fn column_moments(m: &Matrix, j: usize) -> (f64, f64, bool) {
    let n = m.rows() as f64;
    let col = m.column(j);
    let ones = col.iter().all(|v| *v == 1.0);
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt(), ones)
}

fn scale_columns(
    m: &Matrix,
    names: &[String],
    label: &str,
) -> Result<(Matrix, Vec<f64>, Vec<f64>, Option<usize>), AppError> {
    let mut out = m.clone();
    let mut center = Vec::with_capacity(m.cols());
    let mut scale = Vec::with_capacity(m.cols());
    let mut intercept = None;
    for j in 0..m.cols() {
        let (mean, sd, ones) = column_moments(m, j);
        if ones {
            intercept.get_or_insert(j);
            center.push(0.0);
            scale.push(1.0);
            continue;
        }
        if !(sd > 0.0) {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("{label}{j}"));
            return Err(AppError::ZeroVariance(name));
        }
        for i in 0..m.rows() {
            out[(i, j)] = (m[(i, j)] - mean) / sd;
        }
        center.push(mean);
        scale.push(sd);
    }
    Ok((out, center, scale, intercept))
}

/// Centers every non-constant column of `x` and `z` and scales it to unit sample variance.
pub fn standardize(
    data: &Dataset,
    x_names: &[String],
    z_names: &[String],
) -> Result<(Dataset, Standardization), AppError> {
    let (x, x_center, x_scale, x_intercept) = scale_columns(&data.x, x_names, "x")?;
    let (z, z_center, z_scale, _) = scale_columns(&data.z, z_names, "z")?;
    Ok((
        Dataset {
            y: data.y.clone(),
            x,
            z,
        },
        Standardization {
            x_center,
            x_scale,
            z_center,
            z_scale,
            x_intercept,
        },
    ))
}

impl Standardization {
    fn map_coefficients(&self, v: &[f64]) -> Result<Vec<f64>, changeplane_core::Error> {
        let mut out: Vec<f64> = v.iter().zip(&self.x_scale).map(|(b, s)| b / s).collect();
        let shift: f64 = out.iter().zip(&self.x_center).map(|(b, c)| b * c).sum();
        if shift != 0.0 {
            let Some(k) = self.x_intercept else {
                return Err(changeplane_core::Error::InvalidInput(
                    "coefficients of centered covariates cannot be mapped back without an intercept".into(),
                ));
            };
            out[k] -= shift;
        }
        Ok(out)
    }

    /// Re-expresses a fit on standardized data on the original scale of `original`. Group
    /// memberships are unchanged; the direction is renormalized and thresholds shifted and
    /// rescaled to match. A single-plane fit carries the augmented intercept in the first
    /// direction coordinate, which absorbs the shift instead of the threshold.
    pub fn back_map(&self, fit: &ModelFit, original: &Dataset) -> Result<ModelFit, changeplane_core::Error> {
        let beta = self.map_coefficients(&fit.coeffs.beta)?;
        let deltas = fit
            .coeffs
            .deltas
            .iter()
            .map(|d| self.map_coefficients(d))
            .collect::<Result<Vec<_>, _>>()?;
        let theta = fit.theta.values();
        let single = fit.mode == FitMode::Single;
        let off = usize::from(single);
        let mut t = theta.to_vec();
        let mut shift = 0.0;
        for j in 0..self.z_scale.len() {
            t[j + off] = theta[j + off] / self.z_scale[j];
            shift += t[j + off] * self.z_center[j];
        }
        let mut a: Vec<f64> = fit.thresholds.values().to_vec();
        if single {
            t[0] -= shift;
        } else {
            for ak in a.iter_mut() {
                *ak += shift;
            }
        }
        let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (t, a) = if theta.len() == 1 {
            (t, a)
        } else {
            (
                t.iter().map(|v| v / norm).collect::<Vec<_>>(),
                a.iter().map(|v| v / norm).collect::<Vec<_>>(),
            )
        };
        // Keep the orientation: pick the largest coordinate whose sign survived the shift.
        let r = (0..t.len())
            .filter(|&j| theta[j] != 0.0 && t[j].signum() == theta[j].signum())
            .max_by(|&i, &j| t[i].abs().total_cmp(&t[j].abs()))
            .ok_or_else(|| changeplane_core::Error::InvalidInput("direction vanished in back-mapping".into()))?;
        let data_theta = ThetaVector::new(t, r)?;
        let original_fit = if theta.len() == 1 && !single {
            // Scaling a one-dimensional index only moves the thresholds.
            let a: Vec<f64> = fit
                .thresholds
                .values()
                .iter()
                .map(|v| v * self.z_scale[0] + self.z_center[0])
                .collect();
            ModelFit::assemble(
                fit.mode,
                original,
                CoefficientSet { beta, deltas },
                Thresholds::new(a)?,
                ThetaVector::unit(),
            )?
        } else {
            ModelFit::assemble(
                fit.mode,
                original,
                CoefficientSet { beta, deltas },
                Thresholds::new(a)?,
                data_theta,
            )?
        };
        Ok(ModelFit {
            objective: fit.objective,
            converged: fit.converged,
            iterations: fit.iterations,
            lambda: fit.lambda,
            bandwidth: fit.bandwidth,
            flags: fit.flags,
            ..original_fit
        })
    }
}
