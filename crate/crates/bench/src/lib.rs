//! Fixtures shared by the criterion benchmarks in `benches/`.

use cleaneval_core::{BinDim, BinningSpec, GroundMetric, Histogram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two seeded histograms on a `bins^dims` grid over the unit cube, each with
/// about `fill` of its bins occupied.
pub fn histogram_pair(dims: usize, bins: usize, fill: f64, seed: u64) -> (Histogram, Histogram) {
    let spec = BinningSpec::new(
        vec![BinDim { min: 0.0, max: 1.0, bins }; dims],
        GroundMetric::Normalized,
    )
    .expect("valid grid");
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        let mut w: Vec<f64> = (0..spec.cell_count())
            .map(|_| if r.random_bool(fill) { r.random::<f64>() } else { 0.0 })
            .collect();
        w[0] += 1e-3;
        Histogram::from_weights(spec.clone(), &w).expect("positive mass")
    };
    (draw(), draw())
}
