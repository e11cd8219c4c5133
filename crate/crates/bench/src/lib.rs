//! Synthetic workloads shared by the benchmarks.

use actsom::{populate_base, populate_concept, ActivationSet, FrequencyMap, SomConfig, SomGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` points in `dim` dimensions, drawn around `clusters` random centers.
pub fn clustered(n: usize, dim: usize, clusters: usize, seed: u64) -> ActivationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..clusters)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let values = (0..n)
        .flat_map(|i| {
            let c = &centers[i % clusters];
            c.iter()
                .map(|v| v + rng.gen_range(-0.1..0.1))
                .collect::<Vec<_>>()
        })
        .collect();
    ActivationSet::new("bench", vec![n, dim], values).expect("valid shape")
}

/// An untrained default-sized grid for `dim` inputs.
pub fn grid(dim: usize, n_iterations: usize) -> SomGrid {
    let config = SomConfig {
        n_iterations,
        seed: 7,
        ..SomConfig::default()
    };
    SomGrid::new(config, dim).expect("valid config")
}

/// A base map from `data` together with a concept map built from every third example.
pub fn map_pair(grid: &SomGrid, data: &ActivationSet) -> (FrequencyMap, FrequencyMap) {
    let base = populate_base(grid, data).expect("populate");
    let picked: Vec<usize> = (0..data.n_examples()).step_by(3).collect();
    let concept =
        populate_concept(grid, &data.select(&picked).expect("select"), "third").expect("populate");
    (base, concept)
}
