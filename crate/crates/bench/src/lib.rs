//! Fixtures shared by the benchmarks.

use debiaslens_core::metrics::Query;
use debiaslens_core::synth::{generate_biased_queries, generate_dataset, PlantedBiasSpec};
use debiaslens_core::train::init_params;
use debiaslens_core::{AttributeTable, EmbeddingDataset, SaeParams, TrainConfig};
use ndarray::Array2;

pub struct Fixture {
    pub gallery: EmbeddingDataset,
    pub table: AttributeTable,
    pub queries: Vec<Query>,
    pub config: TrainConfig,
    pub params: SaeParams,
}

/// Two planted groups of `per_group` rows in dimension `d`.
pub fn fixture(d: usize, per_group: usize, expansion_factor: usize) -> Fixture {
    let spec = PlantedBiasSpec::orthogonal(d, &[("a", per_group), ("b", per_group)], 1.0, 0.1, 0.5, 0).unwrap();
    let (gallery, table) = generate_dataset(&spec).unwrap();
    let queries = generate_biased_queries(&spec, 50, 0.8).unwrap();
    let config = TrainConfig {
        expansion_factor,
        k: 8,
        batch_size: 256,
        learning_rate: 1e-3,
        aux_k: 64,
        ..TrainConfig::default()
    };
    let params = init_params(d, &config, &rows(&gallery, 0..gallery.n())).unwrap();
    Fixture {
        gallery,
        table,
        queries,
        config,
        params,
    }
}

pub fn rows(ds: &EmbeddingDataset, range: std::ops::Range<usize>) -> Array2<f64> {
    let d = ds.d();
    let len = range.len();
    Array2::from_shape_fn((len, d), |(i, j)| ds.rows()[[range.start + i, j]] as f64)
}
