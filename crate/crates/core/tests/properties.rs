use clusterperm_core::calibrate::{rejection_rate, Threshold};
use clusterperm_core::estimators::{per_cluster_ols, ClusterDataset, EstimatorSpec, Mode, Observation};
use clusterperm_core::linalg::{least_squares, Matrix};
use clusterperm_core::numerics::{phi, std_normal_quantile, student_t_cdf};
use clusterperm_core::permkit::{assignment_variance, enumerate_assignments, AssignmentSet, Design};
use clusterperm_core::permtest::{
    adjusted_test, comparison_of_means, critical_value, max_characterization, p_value, permutation_distribution,
    size_bound, ClusterEstimates,
};
use clusterperm_core::power::{power_lower_bound, PowerSpec};
use clusterperm_core::rivals::im_statistic;
use clusterperm_core::rng::RngStream;
use clusterperm_core::Side;
use proptest::prelude::*;

fn design_and_values() -> impl Strategy<Value = (Design, Vec<f64>)> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(q1, q0)| {
        (Just(Design::new(q1, q0).unwrap()), prop::collection::vec(-10.0f64..10.0, q1 + q0))
    })
}

proptest! {
    #[test]
    fn phi_round_trip(p in 1e-10f64..(1.0 - 1e-10)) {
        prop_assert!((phi(std_normal_quantile(p).unwrap()) - p).abs() <= 1e-10);
    }

    #[test]
    fn phi_monotone(x in -9.0f64..9.0, dx in 0.0f64..1.0) {
        prop_assert!(phi(x) <= phi(x + dx));
    }

    #[test]
    fn student_t_large_df_is_normal(x in -4.0f64..4.0) {
        prop_assert!((student_t_cdf(x, 1_000_000).unwrap() - phi(x)).abs() <= 1e-4);
    }

    #[test]
    fn variance_ratio_bound(q1 in 1usize..=5, q0 in 1usize..=5, seed in any::<u64>()) {
        let design = Design::new(q1, q0).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let sigmas: Vec<f64> = (0..q1 + q0).map(|_| (4.0 * rng.normal()).exp()).collect();
        let base = assignment_variance(&design, &design.identity(), &sigmas).unwrap();
        let (lo, hi) = if q1 <= q0 {
            ((q1 as f64 / q0 as f64).powi(2), (q0 as f64 / q1 as f64).powi(2))
        } else {
            ((q0 as f64 / q1 as f64).powi(2), (q1 as f64 / q0 as f64).powi(2))
        };
        for a in enumerate_assignments(&design, 1 << 20).unwrap() {
            let r = assignment_variance(&design, &a, &sigmas).unwrap() / base;
            prop_assert!(r >= lo * (1.0 - 1e-12) && r <= hi * (1.0 + 1e-12));
        }
    }

    #[test]
    fn duality_and_monotone_critical_values((design, x) in design_and_values(), p in 0.001f64..0.999) {
        let est = ClusterEstimates::new(design, x).unwrap();
        let set = AssignmentSet::full(design, 1 << 20).unwrap();
        let dist = permutation_distribution(&est, &set).unwrap();
        let distinct = dist.sorted_values().windows(2).all(|w| w[1] - w[0] > 1e-9);
        prop_assume!(distinct);
        let t = comparison_of_means(&est);
        let crit = critical_value(&dist, p).unwrap();
        prop_assert_eq!(t > crit, p_value(&est, &set).unwrap() <= p);
        prop_assert!(critical_value(&dist, (p + 0.2).min(0.999)).unwrap() <= crit);
    }

    #[test]
    fn max_characterization_matches_largest_value((design, x) in design_and_values()) {
        let est = ClusterEstimates::new(design, x).unwrap();
        let set = AssignmentSet::full(design, 1 << 20).unwrap();
        let dist = permutation_distribution(&est, &set).unwrap();
        let v = dist.sorted_values();
        prop_assume!(v.windows(2).all(|w| w[1] - w[0] > 1e-9));
        let is_max = comparison_of_means(&est) == *v.last().unwrap();
        prop_assert_eq!(max_characterization(&est), is_max);
    }

    #[test]
    fn adjusted_test_is_translation_invariant(x in prop::collection::vec(-5.0f64..5.0, 12), c in -50.0f64..50.0) {
        let design = Design::new(6, 6).unwrap();
        let set = AssignmentSet::full(design, 1 << 20).unwrap();
        let a = ClusterEstimates::new(design, x.clone()).unwrap();
        let b = ClusterEstimates::new(design, x.iter().map(|v| v + c).collect()).unwrap();
        let ra = adjusted_test(&a, 0.05, Side::Right, 0.0, &set).unwrap();
        let rb = adjusted_test(&b, 0.05, Side::Right, 0.0, &set).unwrap();
        prop_assert_eq!(ra.p_value_right, rb.p_value_right);
    }

    #[test]
    fn im_shift_invariance_and_swap(x in prop::collection::vec(-5.0f64..5.0, 7), c in -20.0f64..20.0) {
        let (t, ctl) = x.split_at(3);
        let a = ClusterEstimates::from_groups(t, ctl).unwrap();
        prop_assume!(!a.is_constant());
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let (ts, cs) = shifted.split_at(3);
        let b = ClusterEstimates::from_groups(ts, cs).unwrap();
        let swapped = ClusterEstimates::from_groups(ctl, t).unwrap();
        let s = im_statistic(&a).unwrap();
        prop_assert!((s - im_statistic(&b).unwrap()).abs() < 1e-8 * (1.0 + s.abs()));
        prop_assert!((s + im_statistic(&swapped).unwrap()).abs() < 1e-12 * (1.0 + s.abs()));
    }

    #[test]
    fn power_bound_range_monotone_scale(
        q1 in 1usize..=4, q0 in 1usize..=4, delta in -2.0f64..4.0, seed in any::<u64>(), scale in 0.1f64..10.0,
    ) {
        let mut rng = RngStream::new(seed, 1);
        let mut draw = |n: usize| (0..n).map(|_| 0.2 + 3.0 * rng.uniform()).collect::<Vec<f64>>();
        let (st, sc) = (draw(q1), draw(q0));
        let spec = PowerSpec::new(delta, st.clone(), sc.clone()).unwrap();
        let b = power_lower_bound(&spec).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!(power_lower_bound(&spec.with_delta(delta + 0.5).unwrap()).unwrap() >= b - 1e-9);
        let scaled = PowerSpec::new(
            delta * scale,
            st.iter().map(|s| s * scale).collect(),
            sc.iter().map(|s| s * scale).collect(),
        ).unwrap();
        prop_assert!((power_lower_bound(&scaled).unwrap() - b).abs() < 1e-9);
    }

    #[test]
    fn intercept_estimates_are_shift_equivariant(seed in any::<u64>(), c in -10.0f64..10.0) {
        let rows = |shift: f64| {
            let mut rng = RngStream::new(seed, 2);
            (0..4).flat_map(|k| {
                (0..6).map(|_| {
                    let x = rng.normal();
                    Observation { cluster_id: format!("{k}"), treated: k % 2 == 0, outcome: x + rng.normal() + shift, post: None, covariates: vec![x] }
                }).collect::<Vec<_>>()
            }).collect::<Vec<_>>()
        };
        let spec = EstimatorSpec::linear(Mode::Intercept);
        let a = per_cluster_ols(&ClusterDataset::from_observations(rows(0.0), vec!["x".into()]).unwrap(), &spec).unwrap();
        let b = per_cluster_ols(&ClusterDataset::from_observations(rows(c), vec!["x".into()]).unwrap(), &spec).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            prop_assert!((v - u - c).abs() < 1e-9);
        }
        prop_assert!((comparison_of_means(&a) - comparison_of_means(&b)).abs() < 1e-9);
    }

    #[test]
    fn per_cluster_fits_equal_fully_interacted_pooled_fit(seed in any::<u64>()) {
        let q = 4;
        let mut rng = RngStream::new(seed, 3);
        let mut obs = Vec::new();
        for k in 0..q {
            for t in 0..8 {
                let x = rng.normal();
                obs.push(Observation {
                    cluster_id: format!("{k}"), treated: k < 2,
                    outcome: k as f64 + 0.7 * x + if t >= 4 { 1.5 } else { 0.0 } + rng.normal(),
                    post: Some(t >= 4), covariates: vec![x],
                });
            }
        }
        let data = ClusterDataset::from_observations(obs, vec!["x".into()]).unwrap();
        let per = per_cluster_ols(&data, &EstimatorSpec::linear(Mode::DidSlope)).unwrap();
        // stacked design: for each cluster its own post, x and intercept columns
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (g, c) in data.clusters().iter().enumerate() {
            for i in 0..c.outcome.len() {
                let mut r = vec![0.0; 3 * q];
                r[3 * g] = if c.post.as_ref().unwrap()[i] { 1.0 } else { 0.0 };
                r[3 * g + 1] = c.covariates[i][0];
                r[3 * g + 2] = 1.0;
                rows.push(r);
                y.push(c.outcome[i]);
            }
        }
        let fit = least_squares(&Matrix::from_rows(&rows).unwrap(), &y, "stacked").unwrap();
        for g in 0..q {
            prop_assert!((fit.coef[3 * g] - per.values()[g]).abs() < 1e-10);
        }
    }
}

#[test]
fn size_bound_symmetry() {
    for q1 in 1..=12 {
        for q0 in 1..=12 {
            assert_eq!(size_bound(q1, q0), size_bound(q0, q1));
        }
    }
}

#[test]
fn enumeration_has_no_duplicates() {
    for q1 in 1..=6 {
        for q0 in 1..=6 {
            let mut masks: Vec<u64> =
                enumerate_assignments(&Design::new(q1, q0).unwrap(), 1 << 20).unwrap().iter().map(|a| a.mask()).collect();
            let n = masks.len();
            masks.sort_unstable();
            masks.dedup();
            assert_eq!(masks.len(), n);
        }
    }
}

#[test]
fn sampled_assignments_are_uniform() {
    // chi-square goodness of fit against uniform over all 70 relabelings
    let design = Design::new(4, 4).unwrap();
    let all = enumerate_assignments(&design, 1 << 20).unwrap();
    let m = 100_000;
    let set = AssignmentSet::sampled(design, m, false, &mut RngStream::new(8, 0)).unwrap();
    let mut counts = vec![0usize; all.len()];
    for a in set.assignments() {
        counts[all.iter().position(|b| b == a).unwrap()] += 1;
    }
    let e = m as f64 / all.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 0.999 quantile of chi-square with 69 degrees of freedom
    assert!(chi2 < 111.1, "{chi2}");
}

#[test]
fn continuous_draws_give_distinct_permutation_values() {
    let design = Design::new(5, 5).unwrap();
    let set = AssignmentSet::full(design, 1 << 20).unwrap();
    let mut rng = RngStream::new(12, 0);
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
        let d = permutation_distribution(&ClusterEstimates::new(design, x).unwrap(), &set).unwrap();
        assert!(d.sorted_values().windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn rejection_rate_nonincreasing_in_order_index() {
    let design = Design::new(4, 4).unwrap();
    let variances = [1.0, 4.0, 0.01, 9.0, 1.0, 0.5, 2.0, 100.0];
    let rates: Vec<f64> = (60..70)
        .map(|j| rejection_rate(&design, Threshold::OrderIndex(j), &variances, 20_000, &mut RngStream::new(3, 0)).unwrap())
        .collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
}

#[test]
fn exchangeable_unadjusted_test_is_exact() {
    // q1 = q0 = 4, equal variances, unadjusted level 7/70
    let design = Design::new(4, 4).unwrap();
    let s = 100_000;
    let rate = rejection_rate(&design, Threshold::OrderIndex(63), &[1.0; 8], s, &mut RngStream::new(4, 0)).unwrap();
    let p: f64 = 0.1;
    assert!((rate - p).abs() <= 3.0 * (p * (1.0 - p) / s as f64).sqrt(), "{rate}");
}
