mod common;

use proptest::prelude::*;

use trajscope::effects::{cramers_v_signed, mann_whitney_u, rank_biserial};
use trajscope::meta::{dersimonian_laird, direction_split, pseudo_r2, r2_for_labels, Heterogeneity};
use trajscope::rng::SeededRng;
use trajscope::robustness::{permutation_null, ModeratorData};
use trajscope::stats::{midranks, percentile};
use trajscope::table::{fmt_f64, parse_req, Table};
use trajscope::taxonomy::adjusted_rand_index;

fn sample(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![(-5i32..5).prop_map(f64::from), -100.0f64..100.0], 1..max_len)
}

fn meta_fixture() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..25).prop_flat_map(|k| {
        (
            prop::collection::vec(-2.0f64..2.0, k),
            prop::collection::vec(0.001f64..1.0, k),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rank_biserial_is_antisymmetric(a in sample(30), b in sample(30)) {
        let (r_ab, v_ab) = rank_biserial(&a, &b).unwrap();
        let (r_ba, v_ba) = rank_biserial(&b, &a).unwrap();
        prop_assert!((r_ab + r_ba).abs() < 1e-12);
        prop_assert!((v_ab - v_ba).abs() < 1e-15);
        prop_assert!((-1.0..=1.0).contains(&r_ab));
    }

    #[test]
    fn rank_biserial_ignores_monotone_transforms(a in sample(30), b in sample(30)) {
        let f = |x: &f64| x * x * x + 3.0 * x + 1.0;
        let (r, _) = rank_biserial(&a, &b).unwrap();
        let fa: Vec<f64> = a.iter().map(f).collect();
        let fb: Vec<f64> = b.iter().map(f).collect();
        let (rt, _) = rank_biserial(&fa, &fb).unwrap();
        prop_assert_eq!(r, rt);
    }

    #[test]
    fn u_statistics_of_both_groups_sum_to_pairs(a in sample(30), b in sample(30)) {
        let total = mann_whitney_u(&a, &b) + mann_whitney_u(&b, &a);
        prop_assert!((total - (a.len() * b.len()) as f64).abs() < 1e-9);
    }

    #[test]
    fn cramers_v_symmetries(a in 0i64..40, b in 0i64..40, c in 0i64..40, d in 0i64..40) {
        let v = cramers_v_signed([[a, b], [c, d]]).unwrap();
        let rows_swapped = cramers_v_signed([[c, d], [a, b]]).unwrap();
        let cols_swapped = cramers_v_signed([[b, a], [d, c]]).unwrap();
        let transposed = cramers_v_signed([[a, c], [b, d]]).unwrap();
        match v {
            None => {
                prop_assert!(rows_swapped.is_none() && cols_swapped.is_none() && transposed.is_none());
            }
            Some((v, var)) => {
                prop_assert!((-1.0..=1.0).contains(&v));
                prop_assert!((v + rows_swapped.unwrap().0).abs() < 1e-12);
                prop_assert!((v + cols_swapped.unwrap().0).abs() < 1e-12);
                prop_assert!((v - transposed.unwrap().0).abs() < 1e-12);
                prop_assert!((var - 1.0 / (a + b + c + d) as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn i2_is_scale_equivariant((effects, variances) in meta_fixture(), c in 0.01f64..100.0) {
        let base = dersimonian_laird(&effects, &variances).unwrap();
        let scaled: Vec<f64> = effects.iter().map(|e| e * c).collect();
        let scaled_var: Vec<f64> = variances.iter().map(|v| v * c * c).collect();
        let other = dersimonian_laird(&scaled, &scaled_var).unwrap();
        prop_assert!((base.i2 - other.i2).abs() < 1e-9);
        prop_assert!((base.q - other.q).abs() < 1e-9 * base.q.max(1.0));
        prop_assert!((other.tau2 - base.tau2 * c * c).abs() <= 1e-9 * other.tau2.max(1e-12));
        prop_assert_eq!(Heterogeneity::classify(base.i2), Heterogeneity::classify(other.i2));
    }

    #[test]
    fn heterogeneity_is_bounded((effects, variances) in meta_fixture()) {
        let fit = dersimonian_laird(&effects, &variances).unwrap();
        prop_assert!(fit.tau2 >= 0.0);
        prop_assert!((0.0..100.0).contains(&fit.i2));
        if fit.q <= (effects.len() - 1) as f64 {
            prop_assert_eq!(fit.i2, 0.0);
            prop_assert_eq!(fit.tau2, 0.0);
        }
        let lo = effects.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = effects.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(fit.random_mean >= lo - 1e-12 && fit.random_mean <= hi + 1e-12);
    }

    #[test]
    fn direction_split_partitions(effects in prop::collection::vec(-1.0f64..1.0, 0..40), band in 0.0f64..0.5) {
        let (pos, neg, zero) = direction_split(&effects, band);
        prop_assert_eq!(pos + neg + zero, effects.len());
        let (pos0, neg0, _) = direction_split(&effects, 0.0);
        prop_assert!(pos <= pos0 && neg <= neg0);
    }

    #[test]
    fn pseudo_r2_is_a_share(null in -1.0f64..2.0, residual in 0.0f64..3.0) {
        let r2 = pseudo_r2(null, residual);
        prop_assert!((0.0..=1.0).contains(&r2));
    }

    #[test]
    fn r2_ignores_level_names((effects, variances) in meta_fixture(), seed in any::<u64>()) {
        let k = effects.len();
        prop_assume!(k >= 3);
        let labels: Vec<String> = (0..k).map(|i| format!("level-{}", i % 2)).collect();
        let renamed: Vec<String> = labels.iter().map(|l| format!("{seed}-{l}")).collect();
        let constant: Vec<String> = vec!["only".into(); k];
        let flipped: Vec<String> = labels.iter().map(|l| if l.ends_with('0') { "b".into() } else { "a".into() }).collect();
        let r = r2_for_labels(&effects, &variances, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(r, r2_for_labels(&effects, &variances, &flipped).unwrap());
        prop_assert_eq!(r, r2_for_labels(&effects, &variances, &renamed).unwrap());
        prop_assert!(r2_for_labels(&effects, &variances, &constant).is_err());
    }

    #[test]
    fn midranks_sum_to_triangle(values in sample(60)) {
        let (ranks, _) = midranks(&values);
        let n = values.len() as f64;
        prop_assert!((ranks.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn percentile_is_monotone(mut values in prop::collection::vec(-50.0f64..50.0, 1..50), q1 in 0.0f64..100.0, q2 in 0.0f64..100.0) {
        values.sort_by(f64::total_cmp);
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let (a, b) = (percentile(&values, lo), percentile(&values, hi));
        prop_assert!(a <= b);
        prop_assert!(a >= values[0] && b <= values[values.len() - 1]);
    }

    #[test]
    fn ari_is_symmetric_and_label_free(a in prop::collection::vec(0usize..4, 2..40), seed in any::<u64>()) {
        let mut b = a.clone();
        SeededRng::new(seed).shuffle(&mut b);
        let ab = adjusted_rand_index(&a, &b);
        prop_assert!((ab - adjusted_rand_index(&b, &a)).abs() < 1e-12);
        let relabeled: Vec<usize> = a.iter().map(|x| 10 + 3 * x).collect();
        prop_assert!((adjusted_rand_index(&a, &relabeled) - adjusted_rand_index(&a, &a)).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
    }

    #[test]
    fn table_cells_round_trip(cells in prop::collection::vec("[ -~]{0,12}", 1..8), x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let headers: Vec<String> = (0..=cells.len()).map(|i| format!("c{i}")).collect();
        let mut t = Table::new(&headers);
        let mut row = cells.clone();
        row.push(fmt_f64(x));
        t.push(row);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Table::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(parse_req(&back.rows[0][cells.len()], "x").unwrap(), if x == 0.0 { 0.0 } else { x });
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn permutation_p_is_a_probability((effects, variances) in meta_fixture(), seed in any::<u64>()) {
        let k = effects.len();
        prop_assume!(k >= 4);
        let estimates: Vec<trajscope::effects::EffectEstimate> = effects
            .iter()
            .zip(&variances)
            .enumerate()
            .map(|(i, (&effect, &variance))| trajscope::effects::EffectEstimate {
                config: trajscope::ConfigurationId::new(format!("fw-{}", i % 3), format!("llm-{i}"), "family"),
                feature: "f".into(),
                kind: trajscope::effects::EffectKind::RankBiserial,
                effect,
                variance,
                n_resolved: 10,
                n_unresolved: 10,
            })
            .collect();
        let data = ModeratorData::new(&estimates, trajscope::meta::Moderator::Framework);
        let null = permutation_null(&data, 50, seed).unwrap();
        prop_assert!(null.p > 0.0 && null.p <= 1.0);
        prop_assert!(null.p >= 1.0 / 51.0 - 1e-15);
        prop_assert!((0.0..=1.0).contains(&null.null_mean));
        prop_assert_eq!(null, permutation_null(&data, 50, seed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn raising_length_median_never_clears_p5(seed in any::<u64>(), lo in 1.0f64..60.0, extra in 0.0f64..40.0) {
        use trajscope::patterns::{detect_patterns, ThresholdManifest};
        let spec = common::regime("p5", trajscope::synth::Direction::Lower, 0.5);
        let config = trajscope::ConfigurationId::new("fw", "llm", "family");
        let corpus = trajscope::synth::generate(&spec, 20, &config, seed).unwrap();
        let annotated = trajscope::annotate::annotate_all(corpus, &trajscope::annotate::RuleSet::default(), 1);
        let manifest = |length_median| ThresholdManifest {
            cascade_median: 2.0,
            length_median,
            late_entropy_median: 0.5,
            exploration_band: ThresholdManifest::DEFAULT_BAND,
            recovery_max_turns: 2,
            source: "property".into(),
        };
        for t in &annotated {
            let f = trajscope::features::trajectory_features(t);
            let before = detect_patterns(t, &f, &manifest(lo)).get("p5").unwrap();
            let after = detect_patterns(t, &f, &manifest(lo + extra)).get("p5").unwrap();
            prop_assert!(!before || after);
        }
    }
}
