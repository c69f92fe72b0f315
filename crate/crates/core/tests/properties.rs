use proptest::prelude::*;

use tabexplain::evalmetrics::{
    cplt_score, cs_score, rule_similarity, spearman, triplet_accuracy, triplet_accuracy_exhaustive,
};
use tabexplain::explain::{latent_to_oblique, oblique_to_axis, AxisRule};
use tabexplain::metaenc::{apply_transform, MetaEncoder};
use tabexplain::surrogate::LatentRule;

fn point(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, m)
}

/// Offsets from a latent code to the bounds of a rule around it; `None`
/// leaves that side open.
fn offsets(k: usize) -> impl Strategy<Value = Vec<(Option<f64>, Option<f64>)>> {
    prop::collection::vec(
        (
            prop::option::of(1e-6..2.0f64),
            prop::option::of(0.0..2.0f64),
        ),
        k,
    )
}

fn rule_around(z: &[f64], off: &[(Option<f64>, Option<f64>)]) -> LatentRule {
    LatentRule {
        lower: z
            .iter()
            .zip(off)
            .map(|(v, o)| o.0.map_or(f64::NEG_INFINITY, |d| v - d))
            .collect(),
        upper: z
            .iter()
            .zip(off)
            .map(|(v, o)| o.1.map_or(f64::INFINITY, |d| v + d))
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn axis_rules_contain_their_instance(
        seed in 0u64..1000,
        (m, k, alpha) in (1usize..7, 1usize..5).prop_flat_map(|(m, k)| (Just(m), Just(k), 1..=m)),
        x in point(6),
        off in offsets(4),
    ) {
        let enc = MetaEncoder::new(m, k, alpha, [8, 6], seed).unwrap();
        let x = &x[..m];
        let w = enc.sparse_transform(x).unwrap();
        let z = enc.encode(x).unwrap();
        let rule = rule_around(&z, &off[..k]);
        prop_assume!(rule.contains(&z));
        let axis = oblique_to_axis(&rule, &w, x, &z, 1).unwrap();
        prop_assert!(axis.contains(x));
    }

    #[test]
    fn oblique_rule_matches_latent_membership(
        seed in 0u64..1000,
        x in point(5),
        y in point(5),
        off in offsets(3),
    ) {
        let enc = MetaEncoder::new(5, 3, 2, [8, 6], seed).unwrap();
        let w = enc.sparse_transform(&x).unwrap();
        let z = enc.encode(&x).unwrap();
        let rule = rule_around(&z, &off);
        let oblique = latent_to_oblique(&rule, &w).unwrap();
        prop_assert_eq!(oblique.contains(&y), rule.contains(&apply_transform(&w, &y)));
    }

    #[test]
    fn cs_ignores_positive_scale(a in point(6), b in point(6), c in 1e-3..1e3f64) {
        let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
        prop_assert!((cs_score(&scaled, &b) - cs_score(&a, &b)).abs() < 1e-9);
        prop_assert!((cs_score(&a, &b) - cs_score(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn spearman_is_rank_invariant(a in prop::collection::vec(-5.0..5.0f64, 3..20), shift in -5.0..5.0f64) {
        let b: Vec<f64> = a.iter().map(|v| (v + shift).powi(3)).collect();
        let c = spearman(&a, &b).unwrap();
        prop_assert!(c.degenerate || (c.value - 1.0).abs() < 1e-12);
        let flipped: Vec<f64> = b.iter().map(|v| -v).collect();
        let d = spearman(&a, &flipped).unwrap();
        prop_assert!((d.value + c.value).abs() < 1e-12);
    }

    #[test]
    fn identical_distances_preserve_all_triplets(pts in prop::collection::vec(-5.0..5.0f64, 3..12), seed in 0u64..100) {
        let n = pts.len();
        let d = |i: usize, j: usize| (pts[i] - pts[j]).abs();
        prop_assert_eq!(triplet_accuracy(n, d, d, 300, seed).unwrap(), 1.0);
        prop_assert_eq!(triplet_accuracy_exhaustive(n, d, d).unwrap(), 1.0);
    }

    #[test]
    fn rule_scores_are_one_on_identical_rules(lo in point(5), width in prop::collection::vec(0.0..3.0f64, 5), open in prop::collection::vec(any::<bool>(), 5)) {
        let mut r = AxisRule::unbounded(5, 0);
        for j in 0..5 {
            if !open[j] {
                r.lower[j] = lo[j];
                r.upper[j] = lo[j] + width[j];
            }
        }
        prop_assert_eq!(cplt_score(&r, &r).unwrap(), 1.0);
        prop_assert_eq!(rule_similarity(&r, &r).unwrap(), 1.0);
    }

    #[test]
    fn rule_similarity_is_symmetric_and_bounded(a in point(4), b in point(4), c in point(4), d in point(4)) {
        let r = AxisRule { lower: a, upper: b, class: 0 };
        let s = AxisRule { lower: c, upper: d, class: 1 };
        let v = rule_similarity(&r, &s).unwrap();
        prop_assert_eq!(v, rule_similarity(&s, &r).unwrap());
        prop_assert!((0.0..=1.0).contains(&v));
        let p = cplt_score(&r, &s).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }
}
