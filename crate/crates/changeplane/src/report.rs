//! JSON and CSV reports, and their rendering as aligned text tables.
//!
//! Numbers are rounded to six significant digits and keys follow struct field order, so equal
//! inputs give byte-identical files.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use changeplane_core::inference::{AsymptoticReport, ParameterLayout};
use changeplane_core::model::{FitFlags, FitMode, ModelFit};
use changeplane_core::simlab::{MCReport, SigmaKind};

use crate::error::AppError;

pub const SCHEMA: u32 = 1;

/// Rounds to six significant digits; non-finite values pass through.
pub fn round6(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

/// Non-finite numbers are written as `null` and read back as NaN.
mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

fn round_opt(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite()).map(round6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub name: String,
    /// Covariate or grouping column the parameter belongs to, when there is one.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub column: Option<String>,
    #[serde(with = "nullable")]
    pub estimate: f64,
    /// Absent for coefficients estimated as exactly zero and when inference was not requested
    /// or is unavailable.
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagsJson {
    pub no_subgroup: bool,
    pub oscillated: bool,
    pub degenerate_retry: bool,
    pub theta_unidentified: bool,
}

impl From<FitFlags> for FlagsJson {
    fn from(f: FitFlags) -> Self {
        Self {
            no_subgroup: f.no_subgroup,
            oscillated: f.oscillated,
            degenerate_retry: f.degenerate_retry,
            theta_unidentified: f.theta_unidentified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceJson {
    #[serde(with = "nullable")]
    pub sigma2: f64,
    pub df: usize,
    /// Set when a threshold lies where the index has (numerically) no density.
    pub density_hole: bool,
    pub note: String,
}

/// Back-mapped estimates for a fit run on standardized data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginalScaleJson {
    pub coefficients: Vec<ParamRow>,
    pub thresholds: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema: u32,
    pub kind: String,
    pub mode: String,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub s_hat: usize,
    pub coefficients: Vec<ParamRow>,
    pub thresholds: Vec<ParamRow>,
    pub theta: Vec<ParamRow>,
    pub group_sizes: Vec<usize>,
    /// Mean squared residual on the fitted data.
    #[serde(with = "nullable")]
    pub mse: f64,
    #[serde(with = "nullable")]
    pub rss: f64,
    #[serde(with = "nullable")]
    pub lambda: f64,
    #[serde(with = "nullable")]
    pub bandwidth: f64,
    pub converged: bool,
    pub iterations: usize,
    pub flags: FlagsJson,
    pub standardized: bool,
    pub inference: Option<InferenceJson>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub original_scale: Option<OriginalScaleJson>,
}

/// Names of the stacked coefficients: `beta{j}` then `delta{k}_{j}`.
pub fn coefficient_names(p: usize, s: usize) -> Vec<String> {
    let mut names: Vec<String> = (0..p).map(|j| format!("beta{j}")).collect();
    for k in 1..=s {
        names.extend((0..p).map(|j| format!("delta{k}_{j}")));
    }
    names
}

fn coefficient_rows(fit: &ModelFit, x_names: &[String], inf: Option<&AsymptoticReport>) -> Vec<ParamRow> {
    let p = fit.coeffs.p();
    coefficient_names(p, fit.s())
        .into_iter()
        .zip(fit.coeffs.gamma())
        .enumerate()
        .map(|(i, (name, est))| ParamRow {
            name,
            column: x_names.get(i % p).cloned(),
            estimate: round6(est),
            se: inf.and_then(|r| round_opt(r.se[i])),
            z: inf.and_then(|r| round_opt(r.z[i])),
            p_value: inf.and_then(|r| round_opt(r.p_values[i])),
        })
        .collect()
}

fn mode_name(mode: FitMode) -> &'static str {
    match mode {
        FitMode::Multi => "multi",
        FitMode::Single => "single",
    }
}

pub struct FitContext<'a> {
    pub x_names: &'a [String],
    /// Names of the direction coordinates (including a leading intercept for a single plane).
    pub theta_names: &'a [String],
    pub standardized: bool,
    pub inference: Option<(&'a AsymptoticReport, f64, usize)>,
    pub original: Option<&'a ModelFit>,
}

pub fn fit_report(fit: &ModelFit, n: usize, d: usize, ctx: &FitContext<'_>) -> FitReport {
    let inf = ctx.inference.map(|(r, _, _)| r);
    let layout = AsymptoticReport::parameter_layout(fit);
    let ParameterLayout { gamma, thresholds, .. } = layout;
    let coefficients = coefficient_rows(fit, ctx.x_names, inf);
    let stat = |i: usize| -> (Option<f64>, Option<f64>, Option<f64>) {
        match inf {
            Some(r) => (round_opt(r.se[i]), round_opt(r.z[i]), round_opt(r.p_values[i])),
            None => (None, None, None),
        }
    };
    let threshold_rows = if fit.mode == FitMode::Multi {
        fit.thresholds
            .values()
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let (se, z, p_value) = stat(gamma + k);
                ParamRow {
                    name: format!("a{}", k + 1),
                    column: None,
                    estimate: round6(*a),
                    se,
                    z,
                    p_value,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let theta_rows = if fit.s() > 0 {
        fit.theta
            .values()
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let (se, z, p_value) = stat(gamma + thresholds + j);
                ParamRow {
                    name: format!("theta{j}"),
                    column: ctx.theta_names.get(j).cloned(),
                    estimate: round6(*t),
                    se,
                    z,
                    p_value,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let inference = ctx.inference.map(|(r, sigma2, df)| InferenceJson {
        sigma2: round6(sigma2),
        df,
        density_hole: r.density_hole,
        note: "sigma^2 = rss / (n - df) with df the number of nonzero coefficients".into(),
    });
    let original_scale = ctx.original.map(|o| OriginalScaleJson {
        coefficients: coefficient_rows(o, ctx.x_names, None),
        thresholds: if o.mode == FitMode::Multi {
            o.thresholds.values().iter().map(|v| round6(*v)).collect()
        } else {
            Vec::new()
        },
        theta: if o.s() > 0 {
            o.theta.values().iter().map(|v| round6(*v)).collect()
        } else {
            Vec::new()
        },
    });
    FitReport {
        schema: SCHEMA,
        kind: "fit".into(),
        mode: mode_name(fit.mode).into(),
        n,
        p: fit.coeffs.p(),
        d,
        s_hat: fit.s(),
        coefficients,
        thresholds: threshold_rows,
        theta: theta_rows,
        group_sizes: fit.group_sizes(),
        mse: round6(fit.rss / n as f64),
        rss: round6(fit.rss),
        lambda: round6(fit.lambda),
        bandwidth: round6(fit.bandwidth),
        converged: fit.converged,
        iterations: fit.iterations,
        flags: fit.flags.into(),
        standardized: ctx.standardized,
        inference,
        original_scale,
    }
}

pub fn labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("row,group\n");
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(out, "{},{l}", i + 1);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    #[serde(with = "nullable")]
    pub truth: f64,
    #[serde(with = "nullable")]
    pub bias: f64,
    #[serde(with = "nullable")]
    pub sd: f64,
    #[serde(with = "nullable")]
    pub rmse: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmiJson {
    #[serde(with = "nullable")]
    pub mean: f64,
    #[serde(with = "nullable")]
    pub median: f64,
    #[serde(with = "nullable")]
    pub min: f64,
    #[serde(with = "nullable")]
    pub q25: f64,
    #[serde(with = "nullable")]
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReportJson {
    pub schema: u32,
    pub kind: String,
    pub example: u8,
    pub n: usize,
    pub p: usize,
    pub sigma: String,
    pub seed: u64,
    pub replicates: usize,
    pub failures: usize,
    pub true_s: usize,
    pub s_hat_frequencies: Vec<usize>,
    /// Conditional on the number of thresholds being estimated correctly.
    pub params: Vec<SummaryRow>,
    pub nmi: NmiJson,
    #[serde(with = "nullable")]
    pub correct_zeros: f64,
    #[serde(with = "nullable")]
    pub incorrect_zeros: f64,
    pub true_zeros: usize,
}

pub fn sigma_name(kind: SigmaKind) -> &'static str {
    match kind {
        SigmaKind::Identity => "identity",
        SigmaKind::Toeplitz => "toeplitz",
        SigmaKind::Equicorrelation => "equicorrelation",
    }
}

pub fn mc_report(r: &MCReport, true_s: usize) -> McReportJson {
    McReportJson {
        schema: SCHEMA,
        kind: "mc".into(),
        example: r.example.number(),
        n: r.n,
        p: r.p,
        sigma: sigma_name(r.sigma).into(),
        seed: r.seed,
        replicates: r.replicates,
        failures: r.failures,
        true_s,
        s_hat_frequencies: r.s_hat_frequencies.clone(),
        params: r
            .params
            .iter()
            .map(|s| SummaryRow {
                name: s.name.clone(),
                truth: round6(s.truth),
                bias: round6(s.bias),
                sd: round6(s.sd),
                rmse: round6(s.rmse),
                count: s.count,
            })
            .collect(),
        nmi: NmiJson {
            mean: round6(r.nmi.mean),
            median: round6(r.nmi.median),
            min: round6(r.nmi.min),
            q25: round6(r.nmi.q25),
            q75: round6(r.nmi.q75),
        },
        correct_zeros: round6(r.zero_selection.0),
        incorrect_zeros: round6(r.zero_selection.1),
        true_zeros: r.true_zeros,
    }
}

/// Per-parameter summary table as CSV.
pub fn mc_params_csv(r: &McReportJson) -> String {
    let mut out = String::from("parameter,truth,bias,sd,rmse,count\n");
    for s in &r.params {
        let _ = writeln!(out, "{},{},{},{},{},{}", s.name, s.truth, s.bias, s.sd, s.rmse, s.count);
    }
    out
}

/// Per-replicate NMI values as CSV, for box plots.
pub fn nmi_csv(values: &[f64]) -> String {
    let mut out = String::from("replicate,nmi\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i, round6(*v));
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, AppError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// A saved report of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedReport {
    Fit(Box<FitReport>),
    Mc(Box<McReportJson>),
}

pub fn parse_report(text: &str) -> Result<SavedReport, AppError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("kind").and_then(|k| k.as_str()) {
        Some("fit") => Ok(SavedReport::Fit(Box::new(serde_json::from_value(value)?))),
        Some("mc") => Ok(SavedReport::Mc(Box::new(serde_json::from_value(value)?))),
        other => Err(AppError::Usage(format!("unknown report kind {other:?}"))),
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "-".into()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn fmt_p(v: Option<f64>) -> String {
    match v {
        Some(p) if p < 0.001 => "<0.001".into(),
        Some(p) => format!("{p:.3}"),
        None => "-".into(),
    }
}

/// Renders rows as a table with right-aligned columns after the first.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        for (j, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if j == 0 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "  {c:>w$}");
            }
        }
        out.push('\n');
    };
    line(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>(), &mut out);
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in rows {
        line(r, &mut out);
    }
    out
}

fn param_table(rows: &[ParamRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let name = match &r.column {
                Some(c) => format!("{} ({c})", r.name),
                None => r.name.clone(),
            };
            let excluded = r.estimate == 0.0 && r.se.is_none();
            vec![
                name,
                fmt_num(r.estimate),
                if excluded { "excluded".into() } else { fmt_opt(r.se) },
                fmt_p(r.p_value),
            ]
        })
        .collect();
    table(&["Parameter", "Estimate", "S.E.", "p-value"], &body)
}

pub fn render_fit(r: &FitReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} change-plane fit: n = {}, p = {}, d = {}, s_hat = {}",
        if r.mode == "single" {
            "Single"
        } else {
            "Multi-threshold"
        },
        r.n,
        r.p,
        r.d,
        r.s_hat
    );
    let _ = writeln!(
        out,
        "MSE = {}, lambda = {}, bandwidth = {}, converged = {}{}",
        fmt_num(r.mse),
        r.lambda,
        r.bandwidth,
        r.converged,
        if r.standardized {
            ", standardized covariates"
        } else {
            ""
        }
    );
    out.push('\n');
    out.push_str(&param_table(&r.coefficients));
    if !r.thresholds.is_empty() || !r.theta.is_empty() {
        out.push('\n');
        let mut rows = r.thresholds.clone();
        rows.extend(r.theta.iter().cloned());
        out.push_str(&param_table(&rows));
    }
    out.push('\n');
    let sizes: Vec<String> = r.group_sizes.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "Group sizes: {}", sizes.join(", "));
    if let Some(inf) = &r.inference {
        let _ = writeln!(out, "sigma^2 = {} (df = {})", fmt_num(inf.sigma2), inf.df);
        if inf.density_hole {
            let _ = writeln!(
                out,
                "threshold standard errors unavailable: no index density at a threshold"
            );
        }
    }
    let f = &r.flags;
    let notes: Vec<&str> = [
        (f.no_subgroup, "no subgroup detected"),
        (f.oscillated, "number of thresholds did not settle"),
        (f.degenerate_retry, "refit with fewer thresholds"),
        (f.theta_unidentified, "plane direction not identified"),
    ]
    .iter()
    .filter(|(on, _)| *on)
    .map(|(_, s)| *s)
    .collect();
    if !notes.is_empty() {
        let _ = writeln!(out, "Notes: {}", notes.join("; "));
    }
    out
}

pub fn render_mc(r: &McReportJson) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Example {}: n = {}, p = {}, Sigma = {}, seed = {}, {} replicates ({} failed)",
        r.example, r.n, r.p, r.sigma, r.seed, r.replicates, r.failures
    );
    out.push('\n');
    let header: Vec<String> = (0..r.s_hat_frequencies.len()).map(|s| format!("s_hat={s}")).collect();
    let mut h: Vec<&str> = vec!["true s"];
    h.extend(header.iter().map(String::as_str));
    let mut row = vec![r.true_s.to_string()];
    row.extend(r.s_hat_frequencies.iter().map(|c| c.to_string()));
    out.push_str(&table(&h, &[row]));
    out.push('\n');
    let rows: Vec<Vec<String>> = r
        .params
        .iter()
        .map(|s| {
            vec![
                s.name.clone(),
                fmt_num(s.truth),
                fmt_num(s.bias),
                fmt_num(s.sd),
                fmt_num(s.rmse),
            ]
        })
        .collect();
    out.push_str(&table(&["Parameter", "True", "Bias", "SD", "RMSE"], &rows));
    out.push('\n');
    let _ = writeln!(
        out,
        "Zeros ({} true): correct {:.3}, incorrect {:.3}",
        r.true_zeros, r.correct_zeros, r.incorrect_zeros
    );
    let _ = writeln!(
        out,
        "NMI: mean {:.3}, median {:.3}, min {:.3}, quartiles {:.3} / {:.3}",
        r.nmi.mean, r.nmi.median, r.nmi.min, r.nmi.q25, r.nmi.q75
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(round6(0.0123456789), 0.0123457);
        assert_eq!(round6(-123456789.0), -123457000.0);
        assert_eq!(round6(1.0), 1.0);
        assert!(round6(f64::NAN).is_nan());
    }

    #[test]
    fn aligned_table() {
        let t = table(&["a", "bb"], &[vec!["long".into(), "1".into()]]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "a     bb");
        assert_eq!(lines[2], "long   1");
    }
}
