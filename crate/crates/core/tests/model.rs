mod common;

use common::{random_params, random_sample, spec};
use lbgm::data::{read_long_csv, validate, write_long_csv, LoadOptions};
use lbgm::model::{build_loading_matrix, implied_moments, interval_overlaps, rescale_parameters};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Strictly increasing times with at least two entries, plus their wave indices.
fn occasions(waves: usize) -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (
        prop::collection::vec(0.05f64..2.0, waves),
        prop::collection::vec(any::<bool>(), waves),
        -3.0f64..3.0,
    )
        .prop_map(move |(gaps, keep, start)| {
            let mut t = start;
            let mut times = Vec::new();
            let mut idx = Vec::new();
            for w in 0..waves {
                t += gaps[w];
                if keep[w] || w == 0 || w == waves - 1 {
                    times.push(t);
                    idx.push(w + 1);
                }
            }
            (times, idx)
        })
}

proptest! {
    #[test]
    fn elapsed_window_splits_additively((times, idx) in occasions(7), a in 0usize..7, b in 0usize..7) {
        let (a, b) = (a % times.len(), b % times.len());
        let (a, b) = (a.min(b), a.max(b));
        let base = times[0];
        let full = interval_overlaps(&times, &idx, 7, base).unwrap();
        let later = interval_overlaps(&times, &idx, 7, times[a]).unwrap();
        for k in 0..6 {
            let split = full[(a, k)] + later[(b, k)];
            prop_assert!((split - full[(b, k)]).abs() < 1e-12);
        }
        // total overlap is the elapsed time
        prop_assert!((full.row(b).sum() - (times[b] - base)).abs() < 1e-12);
    }

    #[test]
    fn loadings_are_linear_in_the_rates(
        (times, idx) in occasions(6),
        g1 in prop::collection::vec(-2.0f64..2.0, 5),
        g2 in prop::collection::vec(-2.0f64..2.0, 5),
        c in -3.0f64..3.0,
    ) {
        let sum: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + c * b).collect();
        let l1 = build_loading_matrix(&times, &g1, &idx, 6, times[0]).unwrap();
        let l2 = build_loading_matrix(&times, &g2, &idx, 6, times[0]).unwrap();
        let ls = build_loading_matrix(&times, &sum, &idx, 6, times[0]).unwrap();
        for r in 0..times.len() {
            prop_assert_eq!(ls[(r, 0)], 1.0);
            prop_assert!((ls[(r, 1)] - (l1[(r, 1)] + c * l2[(r, 1)])).abs() < 1e-10);
        }
        prop_assert_eq!(l1[(0, 1)], 0.0);
    }

    #[test]
    fn rescaling_leaves_moments_unchanged(seed in any::<u64>(), to_y in 1usize..6, to_z in 1usize..6, from in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s_from = spec(&["y", "z"], 6, from);
        let s_to = s_from.with_fixed_intervals(&[to_y, to_z]).unwrap();
        let sample = random_sample(&mut rng, 4, 6, &["y", "z"], 0.3);
        let p = random_params(&mut rng, 2, 6, from, true);
        let q = rescale_parameters(&p, &s_from, &s_to).unwrap();
        prop_assert_eq!(q.outcomes[0].gamma[to_y - 1], 1.0);
        prop_assert_eq!(q.outcomes[1].gamma[to_z - 1], 1.0);
        for ind in sample.individuals() {
            let a = implied_moments(&s_from, &p, ind).unwrap();
            let b = implied_moments(&s_to, &q, ind).unwrap();
            let scale = a.covariance.amax().max(a.mean.amax()).max(1.0);
            prop_assert!((&a.mean - &b.mean).amax() <= 1e-12 * scale);
            prop_assert!((&a.covariance - &b.covariance).amax() <= 1e-12 * scale);
        }
    }

    #[test]
    fn implied_covariance_is_positive_definite(seed in any::<u64>(), cross in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = spec(&["y", "z"], 5, 2);
        let sample = random_sample(&mut rng, 6, 5, &["y", "z"], 0.4);
        let p = random_params(&mut rng, 2, 5, 2, cross);
        for ind in sample.individuals() {
            let m = implied_moments(&s, &p, ind).unwrap();
            prop_assert_eq!(&m.covariance, &m.covariance.transpose());
            prop_assert!(m.covariance.clone().cholesky().is_some());
        }
    }

    #[test]
    fn dropping_the_last_occasion_takes_a_submatrix(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = spec(&["y"], 6, 1);
        let sample = random_sample(&mut rng, 1, 6, &["y"], 0.3);
        let p = random_params(&mut rng, 1, 6, 1, false);
        let ind = &sample.individuals()[0];
        let full = implied_moments(&s, &p, ind).unwrap();
        let mut short = ind.clone();
        short.series[0].observations.pop();
        let n = short.series[0].observations.len();
        let sub = implied_moments(&s, &p, &short).unwrap();
        prop_assert_eq!(sub.mean, full.mean.rows(0, n).into_owned());
        prop_assert_eq!(sub.covariance, full.covariance.view((0, 0), (n, n)).into_owned());
    }

    #[test]
    fn long_csv_round_trips(seed in any::<u64>(), parallel in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: &[&str] = if parallel { &["y", "z"] } else { &["y"] };
        let sample = random_sample(&mut rng, 8, 5, labels, 0.3);
        let mut buf = Vec::new();
        write_long_csv(&sample, &mut buf).unwrap();
        let back = read_long_csv(buf.as_slice(), &LoadOptions::default()).unwrap();
        prop_assert!(validate(&back).is_empty());
        prop_assert_eq!(back.individuals(), sample.individuals());
        prop_assert_eq!(back.outcome_labels(), sample.outcome_labels());
    }
}

#[test]
fn sequential_rates_accumulate() {
    let times = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let idx = [1, 2, 3, 4, 5, 6];
    let l = build_loading_matrix(&times, &[1.0, 0.8, 0.6, 0.4, 0.2], &idx, 6, 0.0).unwrap();
    let got: Vec<f64> = l.column(1).iter().copied().collect();
    assert_eq!(got, vec![0.0, 1.0, 1.8, 2.4, 2.8, 3.0]);
    let rates = DVector::from_vec(vec![1.0, 0.8, 0.6, 0.4, 0.2]);
    let o = interval_overlaps(&times, &idx, 6, 0.0).unwrap();
    assert_eq!(&o * rates, l.column(1));
}
