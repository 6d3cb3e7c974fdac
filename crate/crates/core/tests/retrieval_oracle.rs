use std::time::Instant;

use atelier_core::dataset::Partition;
use atelier_core::head::{FeatureRow, FeatureTable};
use atelier_core::model::Tap;
use atelier_core::retrieval::{build_index, EmbeddingIndex, IndexEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 2048;

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn random_table(n: usize, seed: u64) -> FeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = FeatureTable::new(Tap::Pooled, DIM, vec!["a".into(), "b".into()]);
    for i in 0..n {
        t.push(FeatureRow {
            id: format!("img{i:04}"),
            embedding: random_vec(&mut rng, DIM),
            class_index: i % 2,
            partition: Partition::Train,
        })
        .unwrap();
    }
    t
}

/// Full-sort reference: cosine from raw vectors, stable sort by descending similarity.
fn oracle(table: &FeatureTable, query: &[f32], k: usize) -> Vec<(String, f64)> {
    let norm = |v: &[f32]| v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let qn = norm(query);
    let mut all: Vec<(String, f64)> = table
        .rows()
        .iter()
        .map(|r| {
            let dot: f64 = r.embedding.iter().zip(query).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
            (r.id.clone(), dot / (norm(&r.embedding) * qn))
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    all.truncate(k);
    all
}

fn assert_matches_oracle(index: &EmbeddingIndex, table: &FeatureTable, queries: &[Vec<f32>]) {
    for (qi, q) in queries.iter().enumerate() {
        let hits = index.search(q, 10).unwrap();
        let want = oracle(table, q, 10);
        let ids: Vec<&str> = hits.iter().map(|h| h.id.as_str()).collect();
        let want_ids: Vec<&str> = want.iter().map(|w| w.0.as_str()).collect();
        assert_eq!(ids, want_ids, "query {qi}");
        for (h, w) in hits.iter().zip(&want) {
            assert!((h.similarity - w.1).abs() < 1e-6);
        }
    }
}

#[test]
fn rankings_equal_full_sort_oracle_and_survive_round_trip() {
    let start = Instant::now();
    let table = random_table(1000, 1);
    let index = build_index(&table).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let queries: Vec<Vec<f32>> = (0..50).map(|_| random_vec(&mut rng, DIM)).collect();
    assert_matches_oracle(&index, &table, &queries);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.atlr");
    index.save(&path).unwrap();
    let loaded = EmbeddingIndex::load(&path).unwrap();
    assert_eq!(loaded, index);
    for q in &queries {
        assert_eq!(loaded.search(q, 10).unwrap(), index.search(q, 10).unwrap());
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn self_query_ranks_first() {
    let table = random_table(200, 3);
    let index = build_index(&table).unwrap();
    for row in table.rows().iter().step_by(17) {
        let hits = index.search(&row.embedding, 3).unwrap();
        assert_eq!(hits[0].id, row.id);
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
        let by_id = index.search_by_id(&row.id, 3).unwrap();
        assert_eq!(by_id[0].id, row.id);
    }
}

#[test]
fn query_scaling_and_k_cap() {
    let table = random_table(30, 4);
    let index = build_index(&table).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = random_vec(&mut rng, DIM);
    let scaled: Vec<f32> = q.iter().map(|v| v * 7.0).collect();
    let a: Vec<String> = index.search(&q, 30).unwrap().into_iter().map(|h| h.id).collect();
    let b: Vec<String> = index.search(&scaled, 30).unwrap().into_iter().map(|h| h.id).collect();
    assert_eq!(a, b);
    let all = index.search(&q, 1000).unwrap();
    assert_eq!(all.len(), 30);
    assert!(all.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    assert!(all.iter().all(|h| h.similarity.abs() <= 1.0 + 1e-6));
}

#[test]
fn duplicate_vectors_are_adjacent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut index = EmbeddingIndex::new(Tap::Pooled, 16);
    let dup = random_vec(&mut rng, 16);
    for i in 0..20 {
        let v = if i == 4 || i == 13 { dup.clone() } else { random_vec(&mut rng, 16) };
        let entry = IndexEntry {
            id: format!("{i}"),
            path: format!("{i}.png"),
            class_name: "x".into(),
            thumbnail: None,
        };
        index.insert(entry, &v).unwrap();
    }
    for _ in 0..30 {
        let hits = index.search(&random_vec(&mut rng, 16), 20).unwrap();
        let pos = |id: &str| hits.iter().position(|h| h.id == id).unwrap();
        assert_eq!(pos("13"), pos("4") + 1);
    }
}

#[test]
fn zero_rows_are_skipped_at_build() {
    let mut t = FeatureTable::new(Tap::Pooled, 4, vec!["a".into()]);
    for (i, v) in [[1.0, 0.0, 0.0, 0.0], [0.0; 4], [0.0, 3.0, 0.0, 0.0]].iter().enumerate() {
        t.push(FeatureRow {
            id: format!("{i}"),
            embedding: v.to_vec(),
            class_index: 0,
            partition: Partition::Val,
        })
        .unwrap();
    }
    let index = build_index(&t).unwrap();
    assert_eq!(index.len(), 2);
    assert_eq!(index.vector(1), &[0.0, 1.0, 0.0, 0.0]);
}
