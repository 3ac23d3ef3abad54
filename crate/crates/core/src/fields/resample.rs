use super::{Dims, ScalarField3, Stencil, VectorField3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    /// Trilinear sampling at the target cell centers.
    Trilinear,
    /// Catmull-Rom sampling at the target cell centers, clamped to the
    /// source range.
    Tricubic,
}

/// Dims of a coarser level: `floor(n / factor^level)` per axis, at least 3.
pub fn scaled_dims(dims: Dims, factor: f64, level: u32) -> Dims {
    let s = factor.powi(level as i32);
    Dims::from_array(dims.as_array().map(|n| ((n as f64 / s).floor() as usize).max(3)))
}

/// Source-space coordinate of target cell `i` with both grids spanning the
/// same physical extent.
#[inline]
fn map_coord(i: usize, n_src: usize, n_dst: usize) -> f64 {
    (i as f64 + 0.5) * (n_src as f64 / n_dst as f64) - 0.5
}

#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

fn cubic_taps(p: f64, n: usize) -> ([usize; 4], [f64; 4]) {
    let q = p.clamp(0.0, (n - 1) as f64);
    let i0 = q.floor() as isize;
    let t = q - i0 as f64;
    let idx = [-1isize, 0, 1, 2].map(|o| (i0 + o).clamp(0, n as isize - 1) as usize);
    (idx, catmull_rom(t))
}

fn resample_data(src: &[f64], from: Dims, to: Dims, mode: ResampleMode) -> Vec<f64> {
    let nf = from.as_array();
    let nt = to.as_array();
    let mut out = Vec::with_capacity(to.len());
    match mode {
        ResampleMode::Trilinear => {
            for k in 0..to.nz {
                for j in 0..to.ny {
                    for i in 0..to.nx {
                        let p = [
                            map_coord(i, nf[0], nt[0]),
                            map_coord(j, nf[1], nt[1]),
                            map_coord(k, nf[2], nt[2]),
                        ];
                        out.push(Stencil::locate(from, p).eval(src));
                    }
                }
            }
        }
        ResampleMode::Tricubic => {
            let (lo, hi) = src
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let xs: Vec<_> = (0..to.nx).map(|i| cubic_taps(map_coord(i, nf[0], nt[0]), nf[0])).collect();
            let ys: Vec<_> = (0..to.ny).map(|j| cubic_taps(map_coord(j, nf[1], nt[1]), nf[1])).collect();
            let zs: Vec<_> = (0..to.nz).map(|k| cubic_taps(map_coord(k, nf[2], nt[2]), nf[2])).collect();
            for (zi, zw) in &zs {
                for (yi, yw) in &ys {
                    for (xi, xw) in &xs {
                        let mut acc = 0.0;
                        for c in 0..4 {
                            let mut row_acc = 0.0;
                            for b in 0..4 {
                                let base = from.index(0, yi[b], zi[c]);
                                let mut line = 0.0;
                                for a in 0..4 {
                                    line += xw[a] * src[base + xi[a]];
                                }
                                row_acc += yw[b] * line;
                            }
                            acc += zw[c] * row_acc;
                        }
                        out.push(acc.clamp(lo, hi));
                    }
                }
            }
        }
    }
    out
}

/// Resamples onto `new_dims` cells covering the same physical extent. The
/// output spacing follows the x-axis ratio.
pub fn resample_to(field: &ScalarField3, new_dims: Dims, mode: ResampleMode) -> Result<ScalarField3> {
    if new_dims.min_axis() < 2 {
        return Err(Error::invalid(format!("resample target {new_dims} needs >= 2 cells per axis")));
    }
    let from = field.dims();
    if from == new_dims {
        return Ok(field.clone());
    }
    let spacing = field.spacing() * from.nx as f64 / new_dims.nx as f64;
    ScalarField3::from_vec(new_dims, spacing, resample_data(field.data(), from, new_dims, mode))
}

pub fn resample_vector_to(field: &VectorField3, new_dims: Dims, mode: ResampleMode) -> Result<VectorField3> {
    let [x, y, z] = field.clone().into_components();
    VectorField3::from_components(
        resample_to(&x, new_dims, mode)?,
        resample_to(&y, new_dims, mode)?,
        resample_to(&z, new_dims, mode)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_ladder() {
        let full = Dims::new(200, 300, 200);
        assert_eq!(scaled_dims(full, 1.8, 1), Dims::new(111, 166, 111));
        assert_eq!(scaled_dims(full, 1.8, 2), Dims::new(61, 92, 61));
        assert_eq!(scaled_dims(full, 1.8, 0), full);
    }

    #[test]
    fn upsample_to_ladder_dims() {
        let coarse = ScalarField3::from_fn(Dims::new(61, 92, 61), 1.0, |i, j, k| ((i + j + k) % 5) as f64);
        let fine = resample_to(&coarse, Dims::new(111, 166, 111), ResampleMode::Tricubic).unwrap();
        assert_eq!(fine.dims(), Dims::new(111, 166, 111));
        let (lo, hi) = fine.min_max();
        assert!(lo >= 0.0 && hi <= 4.0);
    }

    #[test]
    fn constant_preserved_both_modes() {
        let f = ScalarField3::filled(Dims::new(7, 9, 5), 1.0, 0.37);
        for mode in [ResampleMode::Trilinear, ResampleMode::Tricubic] {
            for to in [Dims::new(3, 4, 2), Dims::new(13, 16, 11)] {
                let g = resample_to(&f, to, mode).unwrap();
                assert!(g.data().iter().all(|&v| v == 0.37));
            }
        }
    }

    #[test]
    fn tricubic_interpolates_source_samples() {
        let f = ScalarField3::from_fn(Dims::cube(3), 1.0, |i, j, k| (i * i + 2 * j + k * k * k) as f64);
        let g = resample_to(&f, Dims::cube(9), ResampleMode::Tricubic).unwrap();
        // Target cells 1, 4, 7 sit on source centers 0, 1, 2.
        for (a, sa) in [(1, 0), (4, 1), (7, 2)] {
            for (b, sb) in [(1, 0), (4, 1), (7, 2)] {
                for (c, sc) in [(1, 0), (4, 1), (7, 2)] {
                    assert_eq!(g.get(a, b, c), f.get(sa, sb, sc));
                }
            }
        }
        assert!((g.spacing() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tricubic_clamps_overshoot() {
        let f = ScalarField3::from_fn(Dims::new(8, 3, 3), 1.0, |i, _, _| if i >= 4 { 1.0 } else { 0.0 });
        let g = resample_to(&f, Dims::new(29, 5, 5), ResampleMode::Tricubic).unwrap();
        let (lo, hi) = g.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn same_dims_is_identity() {
        let f = ScalarField3::from_fn(Dims::new(4, 5, 6), 0.5, |i, j, k| (i * 100 + j * 10 + k) as f64);
        for mode in [ResampleMode::Trilinear, ResampleMode::Tricubic] {
            assert_eq!(resample_to(&f, f.dims(), mode).unwrap(), f);
        }
    }

    #[test]
    fn tiny_target_rejected() {
        let f = ScalarField3::zeros(Dims::cube(4), 1.0);
        assert!(resample_to(&f, Dims::new(1, 4, 4), ResampleMode::Trilinear).is_err());
    }
}
