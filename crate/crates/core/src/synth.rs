//! Small synthetic scenes used by tests, benchmarks and the self-check.

use crate::error::Result;
use crate::fields::{Dims, ScalarField3, VectorField3};
use crate::render::GrayImage;
use crate::transport::{advect_maccormack, VelocitySequence};

/// `peak * exp(-|x - center|^2 / (2 sigma^2))`, with `center` and `sigma` in
/// world units.
pub fn gaussian_blob(dims: Dims, spacing: f64, center: [f64; 3], sigma: f64, peak: f64) -> ScalarField3 {
    let inv = 1.0 / (2.0 * sigma * sigma);
    ScalarField3::from_fn(dims, spacing, |i, j, k| {
        let p = [i, j, k].map(|v| v as f64 * spacing);
        let r2: f64 = (0..3).map(|a| (p[a] - center[a]).powi(2)).sum();
        peak * (-r2 * inv).exp()
    })
}

/// Sinusoidal stripes in `[0, 1]` with the given period in pixels, tilted by
/// `angle` degrees from vertical.
pub fn stripes_image(height: usize, width: usize, period: f64, angle: f64) -> GrayImage {
    let (s, c) = angle.to_radians().sin_cos();
    let k = std::f64::consts::TAU / period;
    GrayImage::from_fn(height, width, |r, col| 0.5 + 0.5 * (k * (col as f64 * c + r as f64 * s)).sin())
}

/// A blob carried by a uniform drift plus a slow swirl about the z axis.
/// Returns `frames` densities and the `frames - 1` velocities between them
/// (cells per frame, unit spacing, unit time step).
pub fn advected_blob_sequence(dims: Dims, frames: usize, drift: [f64; 3], peak: f64) -> (Vec<ScalarField3>, VelocitySequence) {
    let n = dims.as_array().map(|v| v as f64);
    let travel = drift.map(|v| v * frames.saturating_sub(1) as f64);
    let start = [0, 1, 2].map(|a| 0.5 * (n[a] - 1.0) - 0.5 * travel[a]);
    let sigma = 0.15 * n.iter().cloned().fold(f64::INFINITY, f64::min);
    let d0 = gaussian_blob(dims, 1.0, start, sigma, peak);
    let mid = [0.5 * (n[0] - 1.0), 0.5 * (n[1] - 1.0)];
    let swirl = 0.02;
    let u = VectorField3::from_fn(dims, 1.0, |i, j, _| {
        let (x, y) = (i as f64 - mid[0], j as f64 - mid[1]);
        [drift[0] - swirl * y, drift[1] + swirl * x, drift[2]]
    });
    let mut ds = vec![d0];
    for _ in 1..frames {
        let next = advect_maccormack(ds.last().unwrap(), &u, 1.0).expect("grid sized for advection");
        ds.push(next);
    }
    let seq = VelocitySequence::new(vec![u; frames.saturating_sub(1)], 1.0).expect("valid sequence");
    (ds, seq)
}

/// Writes a scene's frames and velocities in the on-disk layout used by the CLI.
pub fn write_sequence(dir: &std::path::Path, densities: &[ScalarField3], seq: &VelocitySequence) -> Result<()> {
    let ddir = dir.join("density");
    std::fs::create_dir_all(&ddir).map_err(|e| crate::Error::io(&ddir, e))?;
    for (i, d) in densities.iter().enumerate() {
        crate::fields::vf32::write_scalar(ddir.join(crate::fields::vf32::frame_file_name(i)), d)?;
    }
    seq.write_dir(dir.join("velocity"))
}
