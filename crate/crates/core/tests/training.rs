use debiaslens_core::synth::{generate_dataset, PlantedBiasSpec};
use debiaslens_core::{train, TrainConfig};

fn config(steps: usize) -> TrainConfig {
    TrainConfig {
        expansion_factor: 4,
        k: 4,
        steps,
        batch_size: 64,
        learning_rate: 1e-3,
        dead_after_steps: 50,
        aux_k: 16,
        seed: 3,
        log_every: 10,
        ..TrainConfig::default()
    }
}

fn data() -> debiaslens_core::EmbeddingDataset {
    let spec = PlantedBiasSpec::orthogonal(8, &[("a", 128), ("b", 128)], 1.0, 0.1, 0.3, 5).unwrap();
    generate_dataset(&spec).unwrap().0
}

#[test]
fn loss_goes_down() {
    let (_, log) = train(&data(), &config(300)).unwrap();
    let first = log.first().unwrap().recon;
    let last = log.last().unwrap().recon;
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert_eq!(log.last().unwrap().step, 299);
}

#[test]
fn deterministic_given_seed() {
    let ds = data();
    let (a, la) = train(&ds, &config(40)).unwrap();
    let (b, lb) = train(&ds, &config(40)).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    assert_eq!(la.to_jsonl().unwrap(), lb.to_jsonl().unwrap());
    let mut other = config(40);
    other.seed = 4;
    assert_ne!(train(&ds, &other).unwrap().0.checksum(), a.checksum());
}

#[test]
fn decoder_rows_unit_norm() {
    let (p, _) = train(&data(), &config(20)).unwrap();
    for row in p.w_dec.outer_iter() {
        assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
    }
}
