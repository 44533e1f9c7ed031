#![allow(dead_code)]

use std::path::{Path, PathBuf};

use flame_core::{DifferentialVector, DistanceMatrix, ModelVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_model(rng: &mut ChaCha8Rng, p: usize, spread: f32) -> ModelVector {
    ModelVector::new((0..p).map(|_| rng.random_range(-spread..spread)).collect()).unwrap()
}

pub fn random_diffs(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<DifferentialVector> {
    (0..n)
        .map(|client| DifferentialVector {
            client,
            values: (0..p).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        })
        .collect()
}

pub struct Fixture {
    pub name: String,
    pub matrix: DistanceMatrix,
    pub labels: Vec<u8>,
}

pub fn fixture_dir() -> PathBuf {
    // also included from other crates' test targets
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/hdbscan")
}

pub fn parse_fixture(name: &str, text: &str) -> Fixture {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let n: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("n "))
        .expect("n header")
        .parse()
        .unwrap();
    assert_eq!(lines.next(), Some("matrix"));
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            lines
                .next()
                .unwrap()
                .split_whitespace()
                .map(|v| v.parse().unwrap())
                .collect()
        })
        .collect();
    assert_eq!(lines.next(), Some("labels"));
    let labels = lines
        .next()
        .unwrap()
        .split_whitespace()
        .map(|v| v.parse().unwrap())
        .collect();
    Fixture {
        name: name.to_string(),
        matrix: DistanceMatrix::from_rows(rows).unwrap(),
        labels,
    }
}

pub fn load_fixtures() -> Vec<Fixture> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            parse_fixture(&name, &std::fs::read_to_string(p).unwrap())
        })
        .collect()
}

/// Fixtures loaded once per test binary.
pub fn fixtures() -> &'static [Fixture] {
    static CACHE: std::sync::OnceLock<Vec<Fixture>> = std::sync::OnceLock::new();
    CACHE.get_or_init(load_fixtures)
}
