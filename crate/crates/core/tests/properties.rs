use changeplane_core::model::{exact_objective, flip_orientation, labels_from_index};
use changeplane_core::simlab::{
    aggregate, nmi, simulate_replicate, Example, ReplicateOutcome, SigmaKind, SimDesign, Truth,
};
use changeplane_core::tuning::{bic_score, gcv_score, select_lambda, Candidate, Criterion, TuningGrid};
use changeplane_core::{CoefficientSet, Dataset, ThetaVector, Thresholds};
use proptest::prelude::*;

fn example_data(example: Example, n: usize, seed: u64) -> (Dataset, Truth, Vec<usize>) {
    let p = if example == Example::One { 6 } else { 5 };
    let design = SimDesign::new(example, n, p, SigmaKind::Identity, seed).unwrap();
    simulate_replicate(&design, 0).unwrap()
}

#[test]
fn example_two_group_shares() {
    let (_, _, labels) = example_data(Example::Two, 40_000, 1);
    let n = labels.len() as f64;
    let share = |g: usize| labels.iter().filter(|&&l| l == g).count() as f64 / n;
    // Thresholds sit at the 30% and 60% quantiles of the standard normal index.
    for (g, want) in [(0, 0.3), (1, 0.3), (2, 0.4)] {
        assert!((share(g) - want).abs() < 0.01, "group {g}: {}", share(g));
    }
}

#[test]
fn truths_have_unit_directions() {
    for (example, p) in [
        (Example::One, 6),
        (Example::Two, 5),
        (Example::Two, 20),
        (Example::Four, 5),
    ] {
        let design = SimDesign::new(example, 100, p, SigmaKind::Toeplitz, 0).unwrap();
        let truth = Truth::for_design(&design);
        let norm: f64 = truth.theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-15);
        assert_eq!(truth.coeffs.p(), design.columns());
    }
    let t2 = Truth::for_design(&SimDesign::new(Example::Two, 100, 5, SigmaKind::Identity, 0).unwrap());
    assert_eq!(t2.coeffs.gamma().iter().filter(|v| **v == 0.0).count(), 6);
}

#[test]
fn simulation_is_reproducible() {
    let (a, _, la) = example_data(Example::Four, 200, 77);
    let (b, _, lb) = example_data(Example::Four, 200, 77);
    let (c, _, _) = example_data(Example::Four, 200, 78);
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_ne!(a.y, c.y);
}

#[test]
fn truth_has_zero_exact_loss_without_noise() {
    let mut design = SimDesign::new(Example::Four, 500, 5, SigmaKind::Equicorrelation, 3).unwrap();
    design.noise_sd = 0.0;
    let (data, truth, labels) = simulate_replicate(&design, 0).unwrap();
    let theta = ThetaVector::canonical(truth.theta.clone()).unwrap();
    let a = Thresholds::new(truth.thresholds.clone()).unwrap();
    assert_eq!(exact_objective(&data, &truth.coeffs, &a, &theta).unwrap(), 0.0);
    assert_eq!(labels, labels_from_index(&data.index(&truth.theta), &truth.thresholds));
}

#[test]
fn labels_use_strict_inequality() {
    assert_eq!(
        labels_from_index(&[-1.0, 0.0, 0.5, 1.0, 2.0], &[0.0, 1.0]),
        vec![0, 0, 1, 1, 2]
    );
}

#[test]
fn monte_carlo_rmse_decomposes() {
    let design = SimDesign::new(Example::Two, 300, 5, SigmaKind::Identity, 0).unwrap();
    let truth = Truth::for_design(&design);
    let mut tv = truth.coeffs.gamma();
    tv.extend_from_slice(&truth.thresholds);
    tv.extend_from_slice(&truth.theta);
    let outcomes: Vec<ReplicateOutcome> = (0..7u64)
        .rev()
        .map(|rep| ReplicateOutcome {
            rep,
            s_hat: 2,
            estimates: Some(
                tv.iter()
                    .enumerate()
                    .map(|(j, v)| v + ((rep * 31 + j as u64) % 11) as f64 * 0.01 - 0.04)
                    .collect(),
            ),
            nmi: 0.9 + rep as f64 * 0.01,
            correct_zeros: 6,
            incorrect_zeros: 0,
            converged: true,
            error: None,
        })
        .collect();
    let report = aggregate(&design, &outcomes);
    assert_eq!(report.s_hat_frequencies, vec![0, 0, 7]);
    let r = 7.0;
    for p in &report.params {
        let lhs = p.rmse * p.rmse;
        let rhs = p.bias * p.bias + p.sd * p.sd * (r - 1.0) / r;
        assert!((lhs - rhs).abs() < 1e-14, "{}: {lhs} vs {rhs}", p.name);
    }
    assert!((report.nmi.median - 0.93).abs() < 1e-12);
    assert_eq!(report.zero_selection, (6.0, 0.0));
}

#[test]
fn information_criteria() {
    let (n, rss, df) = (100usize, 25.0, 4usize);
    let nf = n as f64;
    assert!((bic_score(rss, n, df) - (nf * (rss / nf).ln() + df as f64 * nf.ln())).abs() < 1e-12);
    let want = (rss / nf) / (1.0 - df as f64 / nf).powi(2);
    assert!((gcv_score(rss, n, df).unwrap() - want).abs() < 1e-12);
    assert!(gcv_score(rss, n, n).is_err());
}

#[test]
fn selection_runs_descending_and_picks_minimum() {
    let grid = TuningGrid::new(vec![0.1, 1.0, 0.5], Criterion::Bic).unwrap();
    let mut seen = Vec::new();
    let sel = select_lambda(&grid, 50, |lambda, warm: Option<&f64>| {
        seen.push((lambda, warm.copied()));
        // Quadratic in lambda with its best value at 0.5.
        Ok(Candidate {
            fit: lambda,
            rss: 10.0 + (lambda - 0.5).powi(2) * 50.0,
            df: 3,
        })
    })
    .unwrap();
    assert_eq!(seen, vec![(1.0, None), (0.5, Some(1.0)), (0.1, Some(0.5))]);
    assert_eq!(sel.lambda, 0.5);
}

fn arbitrary_fit(seed: u64, s: usize) -> (Dataset, CoefficientSet, Vec<f64>, Vec<f64>) {
    let (data, _, _) = example_data(Example::Two, 120, seed);
    let p = data.p();
    let gamma: Vec<f64> = (0..(s + 1) * p)
        .map(|j| ((j as u64 * 7 + seed) % 13) as f64 / 6.0 - 1.0)
        .collect();
    let coeffs = CoefficientSet::from_gamma(&gamma, p).unwrap();
    let mut a: Vec<f64> = (0..s)
        .map(|k| -0.8 + 1.3 * k as f64 / s.max(1) as f64 + (seed % 5) as f64 * 0.01)
        .collect();
    a.sort_by(f64::total_cmp);
    let raw = [0.3 + (seed % 3) as f64, -0.5, 0.2];
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let theta = raw.iter().map(|v| v / norm).collect();
    (data, coeffs, a, theta)
}

proptest! {
    #[test]
    fn flipping_preserves_fitted_values(seed in 0u64..1000, s in 1usize..4) {
        let (data, coeffs, a, theta) = arbitrary_fit(seed, s);
        let (fc, fa, ft) = flip_orientation(&coeffs, &a, &theta);
        let w = data.index(&theta);
        // Rows on a threshold are assigned differently after a flip; none occur here.
        prop_assume!(w.iter().all(|wi| a.iter().all(|ak| (wi - ak).abs() > 1e-12)));
        let fitted = |c: &CoefficientSet, a: &[f64], t: &[f64]| -> (Vec<usize>, Vec<f64>) {
            let labels = labels_from_index(&data.index(t), a);
            let values = labels
                .iter()
                .enumerate()
                .map(|(i, &g)| data.x.row(i).iter().zip(c.group_coefficients(g)).map(|(x, b)| x * b).sum())
                .collect();
            (labels, values)
        };
        let (l1, p1) = fitted(&coeffs, &a, &theta);
        let (l2, p2) = fitted(&fc, &fa, &ft);
        for (u, v) in p1.iter().zip(&p2) {
            prop_assert!((u - v).abs() < 1e-12);
        }
        for (g1, g2) in l1.iter().zip(&l2) {
            prop_assert_eq!(*g1, s - *g2);
        }
    }

    #[test]
    fn nmi_symmetric_and_label_invariant(labels in proptest::collection::vec((0usize..4, 0usize..3), 1..200), perm in Just([2usize, 0, 3, 1])) {
        let a: Vec<usize> = labels.iter().map(|l| l.0).collect();
        let b: Vec<usize> = labels.iter().map(|l| l.1).collect();
        let relabeled: Vec<usize> = a.iter().map(|&l| perm[l]).collect();
        let v = nmi(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - nmi(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((v - nmi(&relabeled, &b).unwrap()).abs() < 1e-12);
        prop_assert!((nmi(&a, &relabeled).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_theta_is_unit_with_positive_lead(v in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let t = ThetaVector::canonical(v).unwrap();
        let norm: f64 = t.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        prop_assert!(t.values()[t.coordinate()] > 0.0);
    }
}
