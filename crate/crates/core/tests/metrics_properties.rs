mod common;

use common::*;
use debiaslens_core::metrics::{
    cosine_retrieval, disproportion_rate, max_skew_at_k, similarity_gap, Answer, DesiredDistribution, Query,
};
use debiaslens_core::synth::{generate_biased_queries, generate_dataset, oracle_expected_skew, PlantedBiasSpec};
use debiaslens_core::{AttributeTable, EmbeddingDataset};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn random_gallery(seed: u64, n: usize, d: usize, groups: usize) -> (EmbeddingDataset, AttributeTable) {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((n, d), |_| gaussian(&mut r) as f32);
    let ds = EmbeddingDataset::new(x, (0..n).map(|i| format!("r{i}")).collect()).unwrap();
    let labels = (0..n).map(|i| Some(if i < groups { i } else { r.gen_range(0..groups) })).collect();
    let t = AttributeTable::new("a".into(), (0..groups).map(|g| format!("g{g}")).collect(), labels).unwrap();
    (ds, t)
}

fn queries(seed: u64, m: usize, d: usize) -> Vec<Query> {
    let mut r = rng(seed);
    (0..m)
        .map(|i| Query {
            id: format!("q{i}"),
            vector: random_vec(&mut r, d),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn query_scale_does_not_change_ranking(seed in 0u64..1000, s in 0.01f64..100.0) {
        let (ds, _) = random_gallery(seed, 40, 5, 2);
        let q = queries(seed + 1, 4, 5);
        let scaled: Vec<Query> = q.iter().map(|q| Query { id: q.id.clone(), vector: q.vector.iter().map(|x| x * s).collect() }).collect();
        let a = cosine_retrieval(&q, &ds, 7).unwrap();
        let b = cosine_retrieval(&scaled, &ds, 7).unwrap();
        for (x, y) in a.rankings.iter().zip(&b.rankings) {
            prop_assert_eq!(&x.rows, &y.rows);
        }
    }

    #[test]
    fn skew_ignores_group_relabeling_and_query_order(seed in 0u64..1000, groups in 2usize..5) {
        let (ds, t) = random_gallery(seed, 60, 4, groups);
        let q = queries(seed + 7, 6, 4);
        let run = cosine_retrieval(&q, &ds, 10).unwrap();
        let base = max_skew_at_k(&run, &t, &DesiredDistribution::uniform()).unwrap().mean_max_skew.unwrap();

        // Rotate group indices.
        let rotated = AttributeTable::new(
            t.attribute.clone(),
            t.groups.clone(),
            t.labels.iter().map(|l| l.map(|g| (g + 1) % groups)).collect(),
        ).unwrap();
        let r2 = max_skew_at_k(&run, &rotated, &DesiredDistribution::uniform()).unwrap().mean_max_skew.unwrap();
        prop_assert!((base - r2).abs() < 1e-9);

        let mut rev = run.clone();
        rev.rankings.reverse();
        let r3 = max_skew_at_k(&rev, &t, &DesiredDistribution::uniform()).unwrap().mean_max_skew.unwrap();
        prop_assert!((base - r3).abs() < 1e-9);
        prop_assert!(base >= 0.0);
        prop_assert!(base <= 100.0 * (groups as f64).ln() + 1e-9);
    }

    #[test]
    fn oracle_equivalence(seed in 0u64..1000, noise in 0.0f64..0.5, mix in 0.0f64..=1.0) {
        let spec = PlantedBiasSpec::orthogonal(6, &[("a", 30), ("b", 25), ("c", 20)], 1.0, noise, 0.4, seed).unwrap();
        let (ds, t) = generate_dataset(&spec).unwrap();
        let q = generate_biased_queries(&spec, 3, mix).unwrap();
        let rep = max_skew_at_k(&cosine_retrieval(&q, &ds, 10).unwrap(), &t, &DesiredDistribution::uniform()).unwrap();
        let oracle = oracle_expected_skew(&spec, &q, 10).unwrap();
        for (a, b) in rep.per_query.iter().zip(oracle) {
            prop_assert!((a.max_skew.unwrap() - b.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn disproportion_symmetric_under_swap(seed in 0u64..1000) {
        let mut r = rng(seed);
        let mut answers = Vec::new();
        for p in 0..8 {
            for g in ["x", "y"] {
                let bias: f64 = r.gen_range(0.05..0.95);
                for i in 0..r.gen_range(5..40) {
                    answers.push(Answer { prompt: format!("p{p}"), group: g.into(), yes: r.gen_bool(bias), id: format!("{p}{g}{i}") });
                }
            }
        }
        let swapped: Vec<Answer> = answers.iter().map(|a| Answer { group: if a.group == "x" { "y".into() } else { "x".into() }, ..a.clone() }).collect();
        let a = disproportion_rate(&answers, 0.05).unwrap();
        let b = disproportion_rate(&swapped, 0.05).unwrap();
        prop_assert_eq!(a.rate, b.rate);
        for (x, y) in a.per_prompt.iter().zip(&b.per_prompt) {
            prop_assert_eq!(x.p_value, y.p_value);
            prop_assert_eq!(x.statistic, -y.statistic);
        }
    }
}

#[test]
fn skew_grows_with_bias_mix() {
    let spec = PlantedBiasSpec::orthogonal(8, &[("a", 200), ("b", 200)], 1.0, 0.3, 0.5, 2).unwrap();
    let (ds, t) = generate_dataset(&spec).unwrap();
    let mut last = -1.0;
    for mix in [0.0, 0.1, 0.3, 1.0] {
        let q = generate_biased_queries(&spec, 20, mix).unwrap();
        let s = max_skew_at_k(&cosine_retrieval(&q, &ds, 50).unwrap(), &t, &DesiredDistribution::uniform())
            .unwrap()
            .mean_max_skew
            .unwrap();
        assert!(s > last, "mix {mix}: {s} <= {last}");
        last = s;
    }
}

#[test]
fn balanced_noise_free_gallery_has_zero_skew() {
    let spec = PlantedBiasSpec::orthogonal(8, &[("a", 1000), ("b", 1000)], 1.0, 0.0, 0.5, 0).unwrap();
    let (ds, t) = generate_dataset(&spec).unwrap();
    let q = generate_biased_queries(&spec, 5, 0.0).unwrap();
    let rep = max_skew_at_k(&cosine_retrieval(&q, &ds, 100).unwrap(), &t, &DesiredDistribution::uniform()).unwrap();
    assert_eq!(rep.mean_max_skew, Some(0.0));
}

#[test]
fn planted_gallery_has_similarity_gap() {
    let spec = PlantedBiasSpec::orthogonal(8, &[("a", 100), ("b", 100)], 1.0, 0.1, 0.2, 0).unwrap();
    let (ds, t) = generate_dataset(&spec).unwrap();
    let rep = similarity_gap(&ds, &t, 2000, 1).unwrap();
    assert!(rep.gap > 0.2, "{rep:?}");
}
