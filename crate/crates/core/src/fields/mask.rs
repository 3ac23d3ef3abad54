use super::{Dims, ScalarField3};
use crate::error::{Error, Result};

/// A `[0, 1]` weight per cell confining velocity edits to the smoke.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask(ScalarField3);

impl SoftMask {
    pub fn new(field: ScalarField3) -> Result<Self> {
        if let Some(v) = field.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("mask value {v} outside [0, 1]")));
        }
        Ok(SoftMask(field))
    }

    pub fn ones(dims: Dims, spacing: f64) -> Self {
        SoftMask(ScalarField3::filled(dims, spacing, 1.0))
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn field(&self) -> &ScalarField3 {
        &self.0
    }

    pub fn into_field(self) -> ScalarField3 {
        self.0
    }
}

/// Normalized, truncated (3 sigma) Gaussian taps.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// One separable pass along `axis`, zero outside the grid.
fn convolve_axis(data: &[f64], dims: Dims, axis: usize, kernel: &[f64]) -> Vec<f64> {
    let n = dims.as_array()[axis] as isize;
    let s = dims.stride(axis);
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let c = ((idx / s) as isize) % n;
        let base = idx as isize - c * s as isize;
        let mut acc = 0.0;
        for (t, w) in kernel.iter().enumerate() {
            let q = c + t as isize - r;
            if (0..n).contains(&q) {
                acc += w * data[(base + q * s as isize) as usize];
            }
        }
        *o = acc;
    }
    out
}

/// Indicator of `d > threshold` blurred by a separable Gaussian with standard
/// deviation `blur_radius` cells (zero padding), clamped to `[0, 1]`.
pub fn soft_mask_from_density(d: &ScalarField3, threshold: f64, blur_radius: f64) -> Result<SoftMask> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("mask threshold must be positive, got {threshold}")));
    }
    if !(blur_radius >= 0.0) {
        return Err(Error::invalid(format!("blur radius must be non-negative, got {blur_radius}")));
    }
    let dims = d.dims();
    let mut data: Vec<f64> = d.data().iter().map(|&v| if v > threshold { 1.0 } else { 0.0 }).collect();
    let kernel = gaussian_kernel(blur_radius);
    if kernel.len() > 1 {
        for axis in 0..3 {
            data = convolve_axis(&data, dims, axis, &kernel);
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(SoftMask(ScalarField3::from_vec(dims, d.spacing(), data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_density_gives_empty_mask() {
        let m = soft_mask_from_density(&ScalarField3::zeros(Dims::cube(6), 1.0), 0.01, 2.0).unwrap();
        assert_eq!(m.field().max_abs(), 0.0);
    }

    #[test]
    fn full_density_saturates_interior() {
        let d = ScalarField3::filled(Dims::cube(20), 1.0, 1.0);
        for radius in [0.0, 1.0, 2.5] {
            let m = soft_mask_from_density(&d, 0.01, radius).unwrap();
            assert!(m.field().data().iter().all(|&v| v <= 1.0));
            assert!((m.field().get(10, 10, 10) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let d = ScalarField3::zeros(Dims::cube(4), 1.0);
        assert!(soft_mask_from_density(&d, 0.0, 1.0).is_err());
        assert!(soft_mask_from_density(&d, 0.1, -1.0).is_err());
        assert!(SoftMask::new(ScalarField3::filled(Dims::cube(3), 1.0, 1.5)).is_err());
    }

    #[test]
    fn half_space_step_matches_dense_convolution() {
        let dims = Dims::new(24, 5, 5);
        let d = ScalarField3::from_fn(dims, 1.0, |i, _, _| if i >= 8 { 1.0 } else { 0.0 });
        let radius = 2.0;
        let m = soft_mask_from_density(&d, 0.5, radius).unwrap();

        // Dense 3D convolution with the full (non-separated) Gaussian.
        let r = (3.0 * radius).ceil() as isize;
        let g1: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * radius * radius)).exp()).collect();
        let norm: f64 = g1.iter().sum::<f64>().powi(3);
        let n = dims.as_array().map(|v| v as isize);
        for k in 0..dims.nz {
            for j in 0..dims.ny {
                for i in 0..dims.nx {
                    let mut acc = 0.0;
                    for dz in -r..=r {
                        for dy in -r..=r {
                            for dx in -r..=r {
                                let (x, y, z) = (i as isize + dx, j as isize + dy, k as isize + dz);
                                if x < 0 || y < 0 || z < 0 || x >= n[0] || y >= n[1] || z >= n[2] {
                                    continue;
                                }
                                let w = g1[(dx + r) as usize] * g1[(dy + r) as usize] * g1[(dz + r) as usize];
                                acc += w * d.get(x as usize, y as usize, z as usize);
                            }
                        }
                    }
                    let want = (acc / norm).clamp(0.0, 1.0);
                    assert!((m.field().get(i, j, k) - want).abs() < 1e-12);
                }
            }
        }
        // Monotone across the interface along the centre line.
        let profile: Vec<f64> = (0..15).map(|i| m.field().get(i, 2, 2)).collect();
        assert!(profile.windows(2).all(|w| w[1] >= w[0]));
        assert!(profile[7] < profile[8]);
    }
}
