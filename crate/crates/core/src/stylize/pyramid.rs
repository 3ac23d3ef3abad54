use crate::error::Result;
use crate::fields::{resample_to, Dims, ResampleMode, ScalarField3, VectorField3};

const BAND_EPS: f64 = 1e-7;

fn half(dims: Dims) -> Dims {
    Dims::from_array(dims.as_array().map(|n| n.div_ceil(2)))
}

/// Largest usable depth: every axis must hold at least `2^levels` cells.
fn usable_levels(dims: Dims, levels: usize) -> usize {
    let mut l = levels.max(1);
    while l > 1 && dims.min_axis() < 1usize << l.min(63) {
        l -= 1;
    }
    if l < levels {
        log::warn!("grid {dims} too small for {levels} pyramid levels, using {l}");
    }
    l
}

fn rebuild(dims: Dims, spacing: f64, data: Vec<f64>) -> Result<ScalarField3> {
    ScalarField3::from_vec(dims, spacing, data)
}

/// Band-pass decomposition, finest band first, coarse residual last.
fn decompose(g: &ScalarField3, levels: usize) -> Result<Vec<ScalarField3>> {
    let mut bands = Vec::with_capacity(levels);
    let mut cur = g.clone();
    for _ in 1..levels {
        let down = resample_to(&cur, half(cur.dims()), ResampleMode::Trilinear)?;
        let up = resample_to(&down, cur.dims(), ResampleMode::Trilinear)?;
        let band: Vec<f64> = cur.data().iter().zip(up.data()).map(|(a, b)| a - b).collect();
        bands.push(rebuild(cur.dims(), cur.spacing(), band)?);
        cur = down;
    }
    bands.push(cur);
    Ok(bands)
}

fn recombine(mut bands: Vec<ScalarField3>, spacing: f64) -> Result<ScalarField3> {
    let mut acc = bands.pop().expect("at least one band");
    while let Some(band) = bands.pop() {
        let up = resample_to(&acc, band.dims(), ResampleMode::Trilinear)?;
        let data = band.data().iter().zip(up.data()).map(|(a, b)| a + b).collect();
        acc = rebuild(band.dims(), band.spacing(), data)?;
    }
    rebuild(acc.dims(), spacing, acc.into_vec())
}

fn normalize_band(b: &ScalarField3) -> ScalarField3 {
    let mean = b.data().iter().map(|v| v.abs()).sum::<f64>() / b.data().len() as f64;
    b.map(|v| v / (mean + BAND_EPS))
}

/// Splits `grad` into a Laplacian pyramid of `levels` bands, scales each band
/// to unit mean magnitude and sums the bands back up.
pub fn lap_normalize(grad: &ScalarField3, levels: usize) -> Result<ScalarField3> {
    let levels = usable_levels(grad.dims(), levels);
    let bands = decompose(grad, levels)?;
    recombine(bands.iter().map(normalize_band).collect(), grad.spacing())
}

/// [`lap_normalize`] applied to each component.
pub fn lap_normalize_vector(grad: &VectorField3, levels: usize) -> Result<VectorField3> {
    let [x, y, z] = grad.clone().into_components();
    VectorField3::from_components(lap_normalize(&x, levels)?, lap_normalize(&y, levels)?, lap_normalize(&z, levels)?)
}
