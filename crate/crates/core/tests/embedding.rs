use std::collections::HashSet;

use rand::Rng;

use help_core::archspace::{default_reference_set, sample_architectures, SearchSpace};
use help_core::devicesim::{build_dataset, generate_pool, LatencyDataset, PoolConfig};
use help_core::embedding::{compute_embedding, EmbeddingError, HardwareEmbedding, TaskSource};
use help_core::{rng, stats};

#[test]
fn embedding_law_on_random_vectors() {
    let mut r = rng::rng(2);
    for trial in 0..1000 {
        let d = r.random_range(2..=16);
        let raw: Vec<f64> = (0..d).map(|_| r.random_range(0.1..100.0)).collect();
        let e = HardwareEmbedding::from_raw("dev", &raw).unwrap();
        assert!(
            e.values.iter().all(|v| (0.0..=1.0).contains(v)),
            "trial {trial}"
        );
        assert_eq!(e.values.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(
            e.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            1.0
        );
        assert_eq!(stats::average_ranks(&e.values), stats::average_ranks(&raw));

        let c = r.random_range(0.01..50.0);
        let b = r.random_range(-0.05..20.0);
        let moved: Vec<f64> = raw.iter().map(|y| c * y + b).collect();
        let e2 = HardwareEmbedding::from_raw("dev", &moved).unwrap();
        for (x, y) in e.values.iter().zip(&e2.values) {
            assert!((x - y).abs() < 1e-12, "trial {trial}: {x} vs {y}");
        }
    }
}

struct Fixture {
    ds: LatencyDataset,
    source: TaskSource,
}

fn fixture(remeasure: bool) -> Fixture {
    let pool = generate_pool(&PoolConfig::default(), 4, 1).unwrap();
    let archs = sample_architectures(SearchSpace::Cell, 1200, 2).unwrap();
    let ds = build_dataset(&pool, &archs, 900, 3).unwrap();
    let refset = default_reference_set(SearchSpace::Cell, 10, 0).unwrap();
    let source = TaskSource::new(&ds, pool.profiles(), refset, remeasure, 4).unwrap();
    Fixture { ds, source }
}

#[test]
fn episodes_are_disjoint_and_sized() {
    let f = fixture(true);
    let ids = f.source.device_ids();
    for seed in 0..50 {
        let ep = f
            .source
            .sample_episode(&ids[seed as usize % ids.len()], 10, 128, seed)
            .unwrap();
        assert_eq!(ep.support_archs.len(), 10);
        assert_eq!(ep.query_archs.len(), 128);
        let all: HashSet<_> = ep.support_archs.iter().chain(&ep.query_archs).collect();
        assert_eq!(all.len(), 138);
        assert_eq!(ep.v_h.d(), 10);
        for (a, y) in ep.support_archs.iter().zip(&ep.support_ms) {
            let row = f.ds.rows_for(&ep.device_id).find(|r| r.arch == *a).unwrap();
            assert_eq!(row.latency_ms, *y);
        }
    }
}

#[test]
fn episode_sampling_is_seeded() {
    let f = fixture(true);
    let id = &f.source.device_ids()[0];
    let a = f.source.sample_episode(id, 10, 128, 7).unwrap();
    assert_eq!(a, f.source.sample_episode(id, 10, 128, 7).unwrap());
    let b = f.source.sample_episode(id, 10, 128, 8).unwrap();
    assert_ne!(a.support_archs, b.support_archs);
}

#[test]
fn full_support_with_empty_query() {
    let f = fixture(false);
    let id = &f.source.device_ids()[1];
    let ep = f.source.sample_episode(id, 900, 0, 1).unwrap();
    assert_eq!(ep.support_archs.len(), 900);
    assert!(ep.query_archs.is_empty());
    let err = f.source.sample_episode(id, 900, 1, 1).unwrap_err();
    assert!(matches!(
        err,
        EmbeddingError::InsufficientRows {
            available: 900,
            needed: 901,
            ..
        }
    ));
    assert!(err.to_string().contains("900") && err.to_string().contains("901"));
}

#[test]
fn meta_batches() {
    let f = fixture(true);
    let ids = f.source.device_ids();
    let batch = f.source.build_meta_batch(&ids, 8, 10, 128, 3).unwrap();
    assert_eq!(batch.len(), 8);
    assert_eq!(
        batch,
        f.source.build_meta_batch(&ids, 8, 10, 128, 3).unwrap()
    );

    let single = vec![ids[2].clone()];
    let batch = f.source.build_meta_batch(&single, 8, 10, 128, 3).unwrap();
    assert!(batch.iter().all(|e| e.device_id == ids[2]));
    assert!(matches!(
        f.source.build_meta_batch(&[], 8, 10, 128, 3),
        Err(EmbeddingError::NoDevices)
    ));
}

#[test]
fn remeasure_flag_controls_embedding_noise() {
    let fresh = fixture(true);
    let cached = fixture(false);
    let id = &fresh.source.device_ids()[0];
    let a = fresh.source.embedding(id, 1).unwrap();
    let b = fresh.source.embedding(id, 2).unwrap();
    assert_ne!(a.values, b.values);
    assert_eq!(
        cached.source.embedding(id, 1).unwrap(),
        cached.source.embedding(id, 2).unwrap()
    );
}

#[test]
fn pool_embeddings_are_valid() {
    let pool = generate_pool(&PoolConfig::default(), 18, 1).unwrap();
    let refset = default_reference_set(SearchSpace::Cell, 10, 0).unwrap();
    for p in pool.profiles() {
        let e = compute_embedding(p, &refset, 5).unwrap();
        assert_eq!(e.d(), 10);
        assert!(e.raw_min > 0.0 && e.raw_max > e.raw_min);
    }
}
