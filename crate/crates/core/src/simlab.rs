//! Simulation designs, the normalized mutual information between partitions, and Monte Carlo
//! aggregation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, Matrix};
use crate::mcpl::{fit_mcpl, McplConfig};
use crate::model::{flip_orientation, labels_from_index, CoefficientSet, Dataset, FitMode, ModelFit};
use crate::scpl::{fit_scpl, ScplConfig};

#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Example {
    /// One plane through `(1, x_1, x_2)`, `p = 6` columns including the intercept.
    One,
    /// Two thresholds at the 30% and 60% normal quantiles along `(x_2, x_3, x_4)`.
    Two,
    /// No subgroup.
    Three,
    /// Two thresholds at `-sqrt(2)/2` and `sqrt(2)/2`.
    Four,
}

impl Example {
    pub fn number(self) -> u8 {
        match self {
            Example::One => 1,
            Example::Two => 2,
            Example::Three => 3,
            Example::Four => 4,
        }
    }

    pub fn from_number(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Example::One),
            2 => Ok(Example::Two),
            3 => Ok(Example::Three),
            4 => Ok(Example::Four),
            _ => Err(Error::InvalidInput(format!("unknown example {k}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaKind {
    Identity,
    /// `0.5^|i-j|`.
    Toeplitz,
    /// Unit diagonal, `0.5` elsewhere.
    Equicorrelation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimDesign {
    pub example: Example,
    pub n: usize,
    /// Example 1: total columns including the intercept (6). Examples 2-4: covariates besides
    /// the intercept (5 or 20); the design then has `p + 1` columns.
    pub p: usize,
    pub sigma: SigmaKind,
    pub seed: u64,
    /// Standard deviation of the Gaussian noise (0.5 gives variance 0.25).
    pub noise_sd: f64,
}

impl SimDesign {
    pub fn new(example: Example, n: usize, p: usize, sigma: SigmaKind, seed: u64) -> Result<Self> {
        let d = Self {
            example,
            n,
            p,
            sigma,
            seed,
            noise_sd: 0.5,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.example {
            Example::One => self.p == 6,
            _ => self.p == 5 || self.p == 20,
        };
        if !ok {
            return Err(Error::InvalidInput(format!(
                "p = {} not available for example {}",
                self.p,
                self.example.number()
            )));
        }
        if self.n < 10 {
            return Err(Error::InvalidInput("simulations need n >= 10".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidInput("noise sd must be nonnegative".into()));
        }
        Ok(())
    }

    /// Number of columns of `x`, intercept included.
    pub fn columns(&self) -> usize {
        match self.example {
            Example::One => self.p,
            _ => self.p + 1,
        }
    }
}

/// True parameters of a design.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub mode: FitMode,
    pub coeffs: CoefficientSet,
    pub thresholds: Vec<f64>,
    /// Direction as printed in the designs (three decimals).
    pub theta_raw: Vec<f64>,
    /// Unit-norm direction used to generate data and to measure bias.
    pub theta: Vec<f64>,
    /// Columns of `x` (0 = intercept) that form `z`; Example 1 additionally prepends a 1.
    pub z_columns: Vec<usize>,
}

impl Truth {
    pub fn for_design(design: &SimDesign) -> Self {
        let cols = design.columns();
        let pad = |v: &[f64]| {
            let mut out = v.to_vec();
            out.resize(cols, 0.0);
            out
        };
        let two_theta = [0.75, -0.25, 0.612];
        let (mode, beta, deltas, thresholds, theta_raw, z_columns): (
            _,
            Vec<f64>,
            Vec<Vec<f64>>,
            Vec<f64>,
            Vec<f64>,
            Vec<usize>,
        ) = match design.example {
            Example::One => (
                FitMode::Single,
                vec![2.0, 1.0, 1.0, 1.0, 1.0, 1.0],
                vec![vec![-1.0, 0.0, 0.0, -1.0, -1.0, -1.0]],
                vec![0.0],
                vec![-0.15, 0.3, 0.942],
                vec![1, 2],
            ),
            Example::Two => (
                FitMode::Multi,
                pad(&[2.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
                vec![
                    pad(&[-1.0, 0.0, 0.0, -1.0, -1.0, -1.0]),
                    pad(&[0.0, -1.0, 1.0, 0.0, 0.0, 0.0]),
                ],
                vec![-0.524, 0.253],
                two_theta.to_vec(),
                vec![2, 3, 4],
            ),
            Example::Three => (
                FitMode::Multi,
                pad(&[1.0, 0.0, 2.0, 0.0, 0.0, 0.0]),
                vec![],
                vec![],
                two_theta.to_vec(),
                vec![2, 3, 4],
            ),
            Example::Four => {
                let h = core::f64::consts::FRAC_1_SQRT_2;
                (
                    FitMode::Multi,
                    pad(&[2.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
                    vec![
                        pad(&[-1.0, 0.0, 0.0, -1.0, -1.0, -1.0]),
                        pad(&[0.0, -1.0, 1.0, 0.0, 0.0, 0.0]),
                    ],
                    vec![-h, h],
                    two_theta.to_vec(),
                    vec![2, 3, 4],
                )
            }
        };
        let norm = theta_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self {
            mode,
            coeffs: CoefficientSet { beta, deltas },
            thresholds,
            theta: theta_raw.iter().map(|v| v / norm).collect(),
            theta_raw,
            z_columns,
        }
    }

    pub fn s(&self) -> usize {
        self.thresholds.len()
    }
}

pub fn gen_covariance(kind: SigmaKind, p: usize) -> Matrix {
    let mut m = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            m[(i, j)] = match kind {
                SigmaKind::Identity => f64::from(u8::from(i == j)),
                SigmaKind::Toeplitz => 0.5f64.powi((i as i32 - j as i32).abs()),
                SigmaKind::Equicorrelation => {
                    if i == j {
                        1.0
                    } else {
                        0.5
                    }
                }
            };
        }
    }
    m
}

/// RNG for replicate `rep`: the master seed with the replicate number as stream.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// One dataset and the true labels from the design's stream `rep`.
pub fn simulate_replicate(design: &SimDesign, rep: u64) -> Result<(Dataset, Truth, Vec<usize>)> {
    design.validate()?;
    let truth = Truth::for_design(design);
    let mut rng = replicate_rng(design.seed, rep);
    let (n, cols) = (design.n, design.columns());
    let k = cols - 1;
    let chol = cholesky(&gen_covariance(design.sigma, k))?;
    let mut x = Matrix::zeros(n, cols);
    let mut e = vec![0.0; k];
    for i in 0..n {
        for v in e.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let row = x.row_mut(i);
        row[0] = 1.0;
        for r in 0..k {
            row[r + 1] = dot(&chol.row(r)[..=r], &e[..=r]);
        }
    }
    let single = truth.mode == FitMode::Single;
    let dz = truth.z_columns.len() + usize::from(single);
    let mut z = Matrix::zeros(n, dz);
    for i in 0..n {
        let row = z.row_mut(i);
        let off = usize::from(single);
        if single {
            row[0] = 1.0;
        }
        for (j, &c) in truth.z_columns.iter().enumerate() {
            row[off + j] = x[(i, c)];
        }
    }
    let w: Vec<f64> = (0..n).map(|i| dot(z.row(i), &truth.theta)).collect();
    let labels = labels_from_index(&w, &truth.thresholds);
    let group: Vec<Vec<f64>> = (0..=truth.s()).map(|g| truth.coeffs.group_coefficients(g)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            dot(x.row(i), &group[labels[i]]) + design.noise_sd * noise
        })
        .collect();
    Ok((Dataset::new(y, x, z)?, truth, labels))
}

/// Replicate 0 of the design.
pub fn simulate_dataset(design: &SimDesign) -> Result<(Dataset, Truth)> {
    let (data, truth, _) = simulate_replicate(design, 0)?;
    Ok((data, truth))
}

/// `I(C, D) / ((H(C) + H(D)) / 2)` with natural logarithms; two trivial partitions give 1.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("partitions have different lengths"));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty partitions".into()));
    }
    let n = a.len() as f64;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&i, &j) in a.iter().zip(b) {
        table[i * kb + j] += 1;
        ca[i] += 1;
        cb[j] += 1;
    }
    let entropy = |c: &[usize]| -> f64 {
        c.iter()
            .filter(|&&v| v > 0)
            .map(|&v| {
                let p = v as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (ha, hb) = (entropy(&ca), entropy(&cb));
    if ha + hb == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let c = table[i * kb + j];
            if c > 0 {
                let cf = c as f64;
                mi += cf / n * (n * cf / (ca[i] as f64 * cb[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (0.5 * (ha + hb))).clamp(0.0, 1.0))
}

/// Which estimator a Monte Carlo study runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Fitter {
    Single(ScplConfig),
    Multi(McplConfig),
}

impl Fitter {
    /// Single-plane fitter for Example 1, multi-threshold for the others, with default settings.
    pub fn for_example(example: Example) -> Self {
        match example {
            Example::One => Fitter::Single(ScplConfig::default()),
            _ => Fitter::Multi(McplConfig::default()),
        }
    }

    pub fn fit(&self, data: &Dataset) -> Result<ModelFit> {
        match self {
            Fitter::Single(c) => fit_scpl(data, c),
            Fitter::Multi(c) => fit_mcpl(data, c),
        }
    }
}

/// Names of the summarized parameters in report order: coefficients, thresholds (multi mode),
/// then the direction.
pub fn parameter_names(truth: &Truth) -> Vec<String> {
    let p = truth.coeffs.p();
    let mut names: Vec<String> = (0..p).map(|j| format!("beta{j}")).collect();
    for k in 0..truth.s() {
        names.extend((0..p).map(|j| format!("delta{}_{j}", k + 1)));
    }
    if truth.mode == FitMode::Multi {
        names.extend((0..truth.s()).map(|k| format!("a{}", k + 1)));
    }
    if truth.s() > 0 {
        names.extend((0..truth.theta.len()).map(|j| format!("theta{j}")));
    }
    names
}

fn truth_vector(truth: &Truth) -> Vec<f64> {
    let mut v = truth.coeffs.gamma();
    if truth.mode == FitMode::Multi {
        v.extend_from_slice(&truth.thresholds);
    }
    if truth.s() > 0 {
        v.extend_from_slice(&truth.theta);
    }
    v
}

/// Result of fitting one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub rep: u64,
    pub s_hat: usize,
    /// Estimates in [`parameter_names`] order when `s_hat` equals the true `s`.
    pub estimates: Option<Vec<f64>>,
    pub nmi: f64,
    pub correct_zeros: usize,
    pub incorrect_zeros: usize,
    pub converged: bool,
    pub error: Option<String>,
}

/// Simulates replicate `rep` and fits it. The estimate's orientation is matched to the truth
/// (`theta` with nonnegative inner product) before comparison.
pub fn run_replicate(design: &SimDesign, rep: u64, fitter: &Fitter) -> ReplicateOutcome {
    let failed = |msg: String| ReplicateOutcome {
        rep,
        s_hat: 0,
        estimates: None,
        nmi: f64::NAN,
        correct_zeros: 0,
        incorrect_zeros: 0,
        converged: false,
        error: Some(msg),
    };
    let (data, truth, labels) = match simulate_replicate(design, rep) {
        Ok(v) => v,
        Err(e) => return failed(format!("{e}")),
    };
    let fit = match fitter.fit(&data) {
        Ok(f) => f,
        Err(e) => return failed(format!("{e}")),
    };
    let nmi_value = nmi(&labels, &fit.labels).unwrap_or(f64::NAN);
    let s_hat = fit.s();
    let mut estimates = None;
    let (mut correct, mut incorrect) = (0, 0);
    if s_hat == truth.s() {
        let (coeffs, a, theta) = if s_hat > 0 && dot(fit.theta.values(), &truth.theta) < 0.0 {
            flip_orientation(&fit.coeffs, fit.thresholds.values(), fit.theta.values())
        } else {
            (
                fit.coeffs.clone(),
                fit.thresholds.values().to_vec(),
                fit.theta.values().to_vec(),
            )
        };
        let gamma = coeffs.gamma();
        for (est, tru) in gamma.iter().zip(truth.coeffs.gamma()) {
            match (tru == 0.0, *est == 0.0) {
                (true, true) => correct += 1,
                (false, true) => incorrect += 1,
                _ => {}
            }
        }
        let mut v = gamma;
        if truth.mode == FitMode::Multi {
            v.extend_from_slice(&a);
        }
        if truth.s() > 0 {
            v.extend_from_slice(&theta);
        }
        estimates = Some(v);
    }
    ReplicateOutcome {
        rep,
        s_hat,
        estimates,
        nmi: nmi_value,
        correct_zeros: correct,
        incorrect_zeros: incorrect,
        converged: fit.converged,
        error: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmiSummary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCReport {
    pub example: Example,
    pub n: usize,
    pub p: usize,
    pub sigma: SigmaKind,
    pub seed: u64,
    pub replicates: usize,
    pub failures: usize,
    /// `s_hat_frequencies[s]` replicates estimated `s` thresholds.
    pub s_hat_frequencies: Vec<usize>,
    /// Summaries over replicates whose estimated number of thresholds is correct.
    pub params: Vec<ParamSummary>,
    pub nmi: NmiSummary,
    pub nmi_values: Vec<f64>,
    /// Average (correct, incorrect) zero counts over replicates with the correct `s`.
    pub zero_selection: (f64, f64),
    pub true_zeros: usize,
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

/// Aggregates outcomes in replicate order, so the result does not depend on how they were
/// produced.
pub fn aggregate(design: &SimDesign, outcomes: &[ReplicateOutcome]) -> MCReport {
    let truth = Truth::for_design(design);
    let names = parameter_names(&truth);
    let tv = truth_vector(&truth);
    let mut ordered: Vec<&ReplicateOutcome> = outcomes.iter().collect();
    ordered.sort_by_key(|o| o.rep);
    let failures = ordered.iter().filter(|o| o.error.is_some()).count();
    let ok: Vec<&&ReplicateOutcome> = ordered.iter().filter(|o| o.error.is_none()).collect();
    let max_s = ok.iter().map(|o| o.s_hat).max().unwrap_or(0).max(truth.s());
    let mut freq = vec![0usize; max_s + 1];
    for o in &ok {
        freq[o.s_hat] += 1;
    }
    let matched: Vec<&Vec<f64>> = ok.iter().filter_map(|o| o.estimates.as_ref()).collect();
    let r = matched.len();
    let params = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (mut s1, mut s2) = (Kahan::default(), Kahan::default());
            for est in &matched {
                let e = est[j] - tv[j];
                s1.add(e);
                s2.add(e * e);
            }
            let rf = r as f64;
            let (bias, rmse) = if r > 0 {
                (s1.sum / rf, (s2.sum / rf).sqrt())
            } else {
                (f64::NAN, f64::NAN)
            };
            let sd = if r > 1 {
                let mut dev = Kahan::default();
                for est in &matched {
                    let e = est[j] - tv[j] - bias;
                    dev.add(e * e);
                }
                (dev.sum / (rf - 1.0)).sqrt()
            } else if r == 1 {
                0.0
            } else {
                f64::NAN
            };
            ParamSummary {
                name: name.clone(),
                truth: tv[j],
                bias,
                sd,
                rmse,
                count: r,
            }
        })
        .collect();
    let nmi_values: Vec<f64> = ok.iter().map(|o| o.nmi).filter(|v| v.is_finite()).collect();
    let mut sorted = nmi_values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut nsum = Kahan::default();
    for v in &nmi_values {
        nsum.add(*v);
    }
    let nmi = NmiSummary {
        mean: if sorted.is_empty() {
            f64::NAN
        } else {
            nsum.sum / sorted.len() as f64
        },
        median: quantile(&sorted, 0.5),
        min: sorted.first().copied().unwrap_or(f64::NAN),
        q25: quantile(&sorted, 0.25),
        q75: quantile(&sorted, 0.75),
    };
    let with_s: Vec<&&&ReplicateOutcome> = ok.iter().filter(|o| o.estimates.is_some()).collect();
    let zero_selection = if with_s.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let k = with_s.len() as f64;
        (
            with_s.iter().map(|o| o.correct_zeros as f64).sum::<f64>() / k,
            with_s.iter().map(|o| o.incorrect_zeros as f64).sum::<f64>() / k,
        )
    };
    MCReport {
        example: design.example,
        n: design.n,
        p: design.p,
        sigma: design.sigma,
        seed: design.seed,
        replicates: outcomes.len(),
        failures,
        s_hat_frequencies: freq,
        params,
        nmi,
        nmi_values,
        zero_selection,
        true_zeros: truth.coeffs.gamma().iter().filter(|v| **v == 0.0).count(),
    }
}

/// Runs `replicates` replicates one after another.
pub fn run_monte_carlo(design: &SimDesign, replicates: usize, fitter: &Fitter) -> Result<MCReport> {
    design.validate()?;
    if replicates == 0 {
        return Err(Error::InvalidInput("at least one replicate is required".into()));
    }
    let outcomes: Vec<ReplicateOutcome> = (0..replicates as u64)
        .map(|rep| run_replicate(design, rep, fitter))
        .collect();
    Ok(aggregate(design, &outcomes))
}
