use lbgm::numeric::{covariance, mean};
use lbgm::simstudy::{
    bias, coverage, empirical_se, generate_dataset, relative_bias, relative_rmse, rmse, run_study, run_study_with,
    ReplicationFit, SimulationDesign, StudyOptions,
};
use lbgm::estimator::FitStatus;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn generated_moments_match_the_population() {
    let mut d = SimulationDesign::ten_wave_decreasing();
    d.n = 100_000;
    let g = generate_dataset(&d, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let cols: Vec<Vec<f64>> = (0..4).map(|c| g.factors.iter().map(|f| f[c]).collect()).collect();
    let means = d.growth_means();
    let cov = d.growth_cov();
    for a in 0..4 {
        let se = (cov[(a, a)] / d.n as f64).sqrt();
        assert!((mean(&cols[a]) - means[a]).abs() < 4.0 * se, "mean {a}");
        for b in 0..4 {
            let c = covariance(&cols[a], &cols[b]);
            let scale = (cov[(a, a)] * cov[(b, b)]).sqrt();
            assert!((c - cov[(a, b)]).abs() < 0.03 * scale, "cov {a},{b}: {c}");
        }
    }

    // residual covariance from the deviation around each individual's curve at wave 1
    let resid: Vec<(f64, f64)> = g
        .sample
        .individuals()
        .iter()
        .zip(&g.factors)
        .map(|(ind, f)| (ind.series[0].observations[0].value - f[0], ind.series[1].observations[0].value - f[2]))
        .collect();
    let (ry, rz): (Vec<f64>, Vec<f64>) = resid.into_iter().unzip();
    let r = d.residual_cov();
    assert!((covariance(&ry, &ry) - r[(0, 0)]).abs() < 0.03);
    assert!((covariance(&ry, &rz) - r[(0, 1)]).abs() < 0.03);

    // every time stays within its wave's window
    for ind in g.sample.individuals().iter().take(1000) {
        for (o, &t) in ind.series[0].observations.iter().zip(&d.wave_times) {
            assert!((o.time - t).abs() <= d.delta);
        }
    }
}

#[test]
fn studies_are_reproducible() {
    let mut d = SimulationDesign::ten_wave_decreasing();
    d.n = 120;
    d.outcomes.truncate(1);
    d.wave_times.truncate(5);
    for o in &mut d.outcomes {
        o.gammas = vec![1.0, 0.8, 0.6, 0.4];
    }
    let opts = StudyOptions::new(4, 99);
    let a = run_study(&d, &opts).unwrap();
    let b = run_study(&d, &StudyOptions { parallel: false, ..opts.clone() }).unwrap();
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_replications_csv(&mut ca).unwrap();
    b.write_replications_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    let (mut ma, mut mb) = (Vec::new(), Vec::new());
    a.report.write_csv(&mut ma).unwrap();
    b.report.write_csv(&mut mb).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(a.report.converged, 4);

    let other = run_study(&d, &StudyOptions::new(4, 100)).unwrap();
    assert_ne!(other.attempts, a.attempts);
}

#[test]
fn zero_truth_uses_absolute_metrics() {
    let mut d = SimulationDesign::ten_wave_decreasing();
    d.between_corr = 0.0;
    d.residual_corr = 0.0;
    let layout = d.layout().unwrap();
    let truth: Vec<f64> = layout.vector(&d.truth(&layout.rates)).iter().copied().collect();
    let shifted: Vec<f64> = truth.iter().map(|x| x + 0.25).collect();
    let est = move |_: &_, _: &_, _: u64| {
        let e = shifted.clone();
        Ok(ReplicationFit {
            se: vec![Some(1.0); e.len()],
            estimates: e,
            status: FitStatus::Converged,
            fit_attempts: 1,
            deviance: 0.0,
        })
    };
    let res = run_study_with(&d, &StudyOptions::new(10, 3), est).unwrap();
    let mut csv = Vec::new();
    res.report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("parameter,truth,relative_bias,empirical_se,relative_rmse,coverage\n"));
    assert!(text.contains("\ncross.psi11(abs),0,0.25,0,0.25,1\n"), "{text}");
    for p in &res.report.parameters {
        assert_eq!(p.coverage, 1.0);
        assert_eq!(p.absolute, p.truth == 0.0);
        let want = if p.absolute { 0.25 } else { 0.25 / p.truth };
        assert!((p.relative_bias - want).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn mean_square_error_decomposes(
        est in prop::collection::vec(-100.0f64..100.0, 2..60),
        truth in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0],
    ) {
        let s = est.len() as f64;
        let b = bias(&est, truth).unwrap();
        let se = empirical_se(&est).unwrap();
        let r = rmse(&est, truth).unwrap();
        let lhs = r * r;
        let rhs = b * b + (s - 1.0) / s * se * se;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
        prop_assert_eq!(relative_bias(&est, truth).unwrap(), b / truth);
        prop_assert_eq!(relative_rmse(&est, truth).unwrap(), r / truth);
    }

    #[test]
    fn coverage_counts_hits(
        centers in prop::collection::vec(-3.0f64..3.0, 1..40),
        width in 0.0f64..2.0,
        missing in prop::collection::vec(any::<bool>(), 40),
    ) {
        let ivs: Vec<Option<(f64, f64)>> = centers
            .iter()
            .zip(&missing)
            .map(|(&c, &m)| (!m).then_some((c - width, c + width)))
            .collect();
        let hits = ivs.iter().filter(|iv| matches!(iv, Some((lo, hi)) if *lo <= 0.0 && 0.0 <= *hi)).count();
        prop_assert_eq!(coverage(&ivs, 0.0).unwrap(), hits as f64 / ivs.len() as f64);
    }
}
