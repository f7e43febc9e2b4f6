use proptest::prelude::*;
use taskforge_analytics::agreement::{average_ranks, kendall_tau_b};
use taskforge_analytics::{
    best_so_far, corr_stats, normalize_trajectory, reliability_stats, Direction, RunTrajectory,
};

fn direction() -> impl Strategy<Value = Direction> {
    prop_oneof![Just(Direction::HigherIsBetter), Just(Direction::LowerIsBetter)]
}

fn raw_steps() -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(prop::option::weighted(0.7, -1e3f64..1e3), 10)
}

proptest! {
    #[test]
    fn normalized_values_stay_in_unit_interval(dir in direction(), raw in raw_steps()) {
        let t = RunTrajectory::new("t", "m", dir, raw, 10);
        let n = normalize_trajectory(&t);
        prop_assert!(n.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let y = best_so_far(&n.values);
        prop_assert!(y.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn direction_symmetry(raw in prop::collection::vec(-1e3f64..1e3, 1..12)) {
        let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let mirrored: Vec<Option<f64>> = raw.iter().map(|&r| Some(hi + lo - r)).collect();
        let up = normalize_trajectory(&RunTrajectory::new("t", "m", Direction::HigherIsBetter, raw.iter().map(|&r| Some(r)), raw.len()));
        let down = normalize_trajectory(&RunTrajectory::new("t", "m", Direction::LowerIsBetter, mirrored, raw.len()));
        for (a, b) in up.values.iter().zip(&down.values) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn classic_kendall_without_ties(perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle()) {
        let x: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let y: Vec<f64> = perm.iter().map(|&v| v as f64).collect();
        let n = x.len();
        let mut s = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                s += ((x[i] - x[j]).signum() * (y[i] - y[j]).signum()) as i64;
            }
        }
        let classic = s as f64 / (n * (n - 1) / 2) as f64;
        prop_assert!((kendall_tau_b(&x, &y) - classic).abs() < 1e-12);

        // Spearman on distinct values: 1 − 6Σd² / (n(n² − 1)).
        let labels: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
        let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
        let s = corr_stats(&labels, &x, &y, &[]).unwrap();
        let (rx, ry) = (average_ranks(&x), average_ranks(&y));
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
        let nf = n as f64;
        prop_assert!((s.spearman - (1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0)))).abs() < 1e-12);
    }

    #[test]
    fn concordance_bounded_by_pearson(
        xy in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..20)
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let labels: Vec<String> = (0..x.len()).map(|i| i.to_string()).collect();
        let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
        let s = corr_stats(&labels, &x, &y, &[1]).unwrap();
        prop_assume!(!s.undefined);
        prop_assert!(s.ccc <= s.pearson.abs() + 1e-12);
        for v in [s.pearson, s.spearman, s.kendall_tau_b, s.ccc] {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
        }
        prop_assert!((s.r2 - s.pearson * s.pearson).abs() < 1e-12);
    }

    #[test]
    fn concordance_equals_pearson_when_moments_match(x in prop::collection::vec(-1e3f64..1e3, 3..12)) {
        // y is x reordered: same mean and variance.
        let mut y = x.clone();
        y.rotate_left(1);
        let labels: Vec<String> = (0..x.len()).map(|i| i.to_string()).collect();
        let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
        let s = corr_stats(&labels, &x, &y, &[]).unwrap();
        prop_assume!(!s.undefined);
        prop_assert!((s.ccc - s.pearson).abs() < 1e-9);
    }

    #[test]
    fn anova_sums_of_squares_add_up(
        rows in (2usize..10, 2usize..5).prop_flat_map(|(n, k)| prop::collection::vec(prop::collection::vec(-1e3f64..1e3, k), n))
    ) {
        let r = reliability_stats(&rows).unwrap();
        let a = &r.anova;
        let parts = a.ss_targets + a.ss_raters + a.ss_residual;
        prop_assert!((a.ss_total - parts).abs() <= 1e-9 * a.ss_total.max(1.0));
    }
}
