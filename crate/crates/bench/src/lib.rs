//! Fixtures shared by the kernel benchmarks in `benches/`.

use plume::synth::gaussian_blob;
use plume::{Dims, ScalarField3, VectorField3};

/// Centered blob on an `n^3` unit-spacing grid.
pub fn blob(n: usize) -> ScalarField3 {
    let c = 0.5 * (n as f64 - 1.0);
    gaussian_blob(Dims::cube(n), 1.0, [c; 3], 0.15 * n as f64, 0.15)
}

/// Rotation about z plus a small updraft, about one cell per step.
pub fn swirl(n: usize) -> VectorField3 {
    let c = 0.5 * (n as f64 - 1.0);
    let w = 2.0 / n as f64;
    VectorField3::from_fn(Dims::cube(n), 1.0, |i, j, _| {
        [-w * (j as f64 - c), w * (i as f64 - c), 0.3]
    })
}
