//! Differentiable grayscale smoke renderer.
//!
//! A view is rendered in two stages: the density grid is resampled into a
//! camera-aligned grid of identical dims (the camera looks down +z of the
//! aligned grid), then every (x, y) column is integrated with an absorption
//! term. Both stages have exact adjoints.

mod image;
mod views;

pub use image::GrayImage;
pub use views::{poisson_sample_views, ViewSample};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{Dims, ScalarField3, Stencil, VectorField3};

/// Orthographic camera orbiting a fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    /// Elevation in degrees (rotation about x).
    pub theta1: f64,
    /// Azimuth in degrees (rotation about y).
    pub theta2: f64,
    /// World-space point the camera orbits and keeps centered in the image;
    /// `None` means the domain center.
    pub look_at: Option<[f64; 3]>,
}

impl CameraPose {
    pub fn new(theta1: f64, theta2: f64) -> Self {
        CameraPose {
            theta1,
            theta2,
            look_at: None,
        }
    }

    pub fn looking_at(mut self, p: [f64; 3]) -> Self {
        self.look_at = Some(p);
        self
    }

    /// Camera-to-world rotation `R_elevation * R_azimuth`.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let (se, ce) = sin_cos_deg(self.theta1);
        let (sa, ca) = sin_cos_deg(self.theta2);
        let elev = [[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]];
        let azim = [[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]];
        matmul(&elev, &azim)
    }

    fn validate(&self) -> Result<()> {
        if self.theta1.is_finite() && self.theta2.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("non-finite camera angles ({}, {})", self.theta1, self.theta2)))
        }
    }
}

/// Sine and cosine of an angle in degrees, exact at multiples of 90.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let quarter = deg / 90.0;
    if quarter.fract() == 0.0 {
        match (quarter as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        deg.to_radians().sin_cos()
    }
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Absorption factor; zero disables attenuation.
    pub gamma: f64,
    /// Integration step along the ray in world units; defaults to the spacing.
    pub step: Option<f64>,
    /// Expected `(height, width)`; must equal the grid's `(ny, nx)` face.
    pub image_dims: Option<(usize, usize)>,
}

impl RenderConfig {
    pub fn new(gamma: f64) -> Self {
        RenderConfig {
            gamma,
            step: None,
            image_dims: None,
        }
    }

    fn resolve(&self, d: &ScalarField3) -> Result<f64> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        let dims = d.dims();
        if let Some((h, w)) = self.image_dims {
            if (h, w) != (dims.ny, dims.nx) {
                return Err(Error::invalid(format!(
                    "image {h}x{w} does not match the grid face {}x{}",
                    dims.ny, dims.nx
                )));
            }
        }
        let step = self.step.unwrap_or(d.spacing());
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid(format!("render step must be positive, got {step}")));
        }
        Ok(step)
    }
}

/// Sample positions recorded by [`view_align`].
#[derive(Debug, Clone)]
pub struct ResampleTape {
    dims: Dims,
    positions: Vec<[f64; 3]>,
}

impl ResampleTape {
    pub fn dims(&self) -> Dims {
        self.dims
    }
}

fn aligned_positions(dims: Dims, spacing: f64, pose: &CameraPose) -> Vec<[f64; 3]> {
    let r = pose.rotation();
    // R - I, so that the identity pose reproduces cell centers bit-exactly.
    let mut rm = r;
    for (a, row) in rm.iter_mut().enumerate() {
        row[a] -= 1.0;
    }
    let mid = crate::fields::domain_center(dims, spacing).map(|v| v / spacing);
    let look = pose.look_at.map(|p| p.map(|v| v / spacing)).unwrap_or(mid);
    let shift = [0, 1, 2].map(|a| look[a] - mid[a]);
    // look_at lands on the image center: src = look + R (c - mid).
    (0..dims.len())
        .into_par_iter()
        .map(|idx| {
            let (i, j, k) = dims.coords(idx);
            let c = [i as f64, j as f64, k as f64];
            let q = [c[0] - mid[0], c[1] - mid[1], c[2] - mid[2]];
            [0, 1, 2].map(|a| c[a] + shift[a] + (rm[a][0] * q[0] + rm[a][1] * q[1] + rm[a][2] * q[2]))
        })
        .collect()
}

/// Resamples `d` into a grid of identical dims whose +z axis is the view
/// direction of `pose`.
pub fn view_align(d: &ScalarField3, pose: &CameraPose) -> Result<(ScalarField3, ResampleTape)> {
    pose.validate()?;
    let dims = d.dims();
    let positions = aligned_positions(dims, d.spacing(), pose);
    let data = positions
        .par_iter()
        .map(|&p| Stencil::locate(dims, p).eval(d.data()))
        .collect();
    Ok((
        ScalarField3::from_vec(dims, d.spacing(), data)?,
        ResampleTape { dims, positions },
    ))
}

/// Velocity resampled into the camera frame, with components expressed in
/// camera axes.
pub fn view_align_vector(v: &VectorField3, pose: &CameraPose) -> Result<VectorField3> {
    pose.validate()?;
    let dims = v.dims();
    let positions = aligned_positions(dims, v.spacing(), pose);
    let r = pose.rotation();
    let world: Vec<[f64; 3]> = positions
        .par_iter()
        .map(|&p| {
            let st = Stencil::locate(dims, p);
            [0, 1, 2].map(|a| st.eval(v.comp(a)))
        })
        .collect();
    // camera = R^T world
    let comps = [0, 1, 2].map(|a| {
        world
            .iter()
            .map(|w| r[0][a] * w[0] + r[1][a] * w[1] + r[2][a] * w[2])
            .collect()
    });
    VectorField3::from_vecs(dims, v.spacing(), comps)
}

/// Transpose of [`view_align`]: scatters an aligned-grid gradient back onto
/// the source grid.
pub fn view_align_adjoint(tape: &ResampleTape, grad_aligned: &ScalarField3) -> Result<ScalarField3> {
    if tape.dims != grad_aligned.dims() {
        return Err(Error::StaleTape("resample tape does not match the gradient dims"));
    }
    let mut out = vec![0.0; tape.dims.len()];
    for (c, &p) in tape.positions.iter().enumerate() {
        Stencil::locate(tape.dims, p).scatter(grad_aligned.data()[c], &mut out);
    }
    ScalarField3::from_vec(tape.dims, grad_aligned.spacing(), out)
}

/// Integrates every (x, y) column of a camera-aligned density.
///
/// With samples `d_k` (k = 0 nearest the camera) and step `D`:
/// `tau_k = exp(-gamma * D * sum_{m > k} d_m)` and `I = D * sum_k d_k * tau_k`.
/// The image is `ny` rows by `nx` columns with +y pointing up.
pub fn render(d_aligned: &ScalarField3, cfg: &RenderConfig) -> Result<GrayImage> {
    let step = cfg.resolve(d_aligned)?;
    d_aligned.ensure_nonnegative()?;
    let dims = d_aligned.dims();
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let plane = nx * ny;
    let data = d_aligned.data();
    let g = cfg.gamma;
    let mut img = vec![0.0; plane];
    img.par_chunks_mut(nx).enumerate().for_each(|(row, out)| {
        let y = ny - 1 - row;
        let mut tau = vec![0.0; nz];
        for (x, px) in out.iter_mut().enumerate() {
            let base = x + nx * y;
            let mut suffix = 0.0;
            for k in (0..nz).rev() {
                tau[k] = (-g * step * suffix).exp();
                suffix += data[base + k * plane];
            }
            let mut acc = 0.0;
            for k in 0..nz {
                acc += data[base + k * plane] * tau[k];
            }
            *px = step * acc;
        }
    });
    GrayImage::from_vec(ny, nx, img)
}

/// Gradient of `sum(image_grad * render(d_aligned))` with respect to the
/// aligned density.
pub fn render_adjoint_aligned(d_aligned: &ScalarField3, cfg: &RenderConfig, image_grad: &GrayImage) -> Result<ScalarField3> {
    let step = cfg.resolve(d_aligned)?;
    let dims = d_aligned.dims();
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    if image_grad.height() != ny || image_grad.width() != nx {
        return Err(Error::StaleTape("image gradient does not match the aligned grid face"));
    }
    let plane = nx * ny;
    let data = d_aligned.data();
    let g = cfg.gamma;
    // Columns are independent; compute per column then write back.
    let cols: Vec<Vec<f64>> = (0..plane)
        .into_par_iter()
        .map(|col| {
            let (x, y) = (col % nx, col / nx);
            let seed = image_grad.get(ny - 1 - y, x);
            let mut out = vec![0.0; nz];
            if seed == 0.0 {
                return out;
            }
            let mut tau = vec![0.0; nz];
            let mut suffix = 0.0;
            for k in (0..nz).rev() {
                tau[k] = (-g * step * suffix).exp();
                suffix += data[col + k * plane];
            }
            // dI/dd_k = D tau_k - gamma D^2 sum_{m<k} d_m tau_m
            let mut prefix = 0.0;
            for k in 0..nz {
                out[k] = seed * (step * tau[k] - g * step * step * prefix);
                prefix += data[col + k * plane] * tau[k];
            }
            out
        })
        .collect();
    let mut grad = vec![0.0; dims.len()];
    for (col, vals) in cols.into_iter().enumerate() {
        for (k, v) in vals.into_iter().enumerate() {
            grad[col + k * plane] = v;
        }
    }
    ScalarField3::from_vec(dims, d_aligned.spacing(), grad)
}

/// Full render adjoint: through the column integral and back through the
/// camera resampling onto the unrotated grid.
pub fn render_adjoint(
    tape: &ResampleTape,
    d_aligned: &ScalarField3,
    cfg: &RenderConfig,
    image_grad: &GrayImage,
) -> Result<ScalarField3> {
    if tape.dims != d_aligned.dims() {
        return Err(Error::StaleTape("resample tape does not match the aligned density"));
    }
    let ga = render_adjoint_aligned(d_aligned, cfg, image_grad)?;
    view_align_adjoint(tape, &ga)
}

/// Convenience: align and render one view.
pub fn render_view(d: &ScalarField3, pose: &CameraPose, cfg: &RenderConfig) -> Result<GrayImage> {
    let (aligned, _) = view_align(d, pose)?;
    render(&aligned, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_density(dims: Dims, seed: u64) -> ScalarField3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField3::from_fn(dims, 1.0, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn identity_pose_is_exact() {
        let d = random_density(Dims::new(5, 6, 7), 1);
        let (a, _) = view_align(&d, &CameraPose::new(0.0, 0.0)).unwrap();
        assert_eq!(a, d);
        // A whole-cell offset of look_at pans the picture by that many cells.
        let (a, _) = view_align(&d, &CameraPose::new(0.0, 0.0).looking_at([1.0, 2.5, 3.0])).unwrap();
        for k in 0..7 {
            for j in 0..6 {
                for i in 1..5 {
                    assert_eq!(a.get(i, j, k), d.get(i - 1, j, k));
                }
            }
        }
    }

    #[test]
    fn quarter_turn_permutes_axes() {
        let n = 6;
        let d = random_density(Dims::cube(n), 2);
        let (a, _) = view_align(&d, &CameraPose::new(0.0, 90.0)).unwrap();
        // Azimuth 90: aligned (i, j, k) samples source (k, j, n-1-i).
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    assert_eq!(a.get(i, j, k), d.get(k, j, n - 1 - i));
                }
            }
        }
        let (e, _) = view_align(&d, &CameraPose::new(90.0, 0.0)).unwrap();
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    assert_eq!(e.get(i, j, k), d.get(i, n - 1 - k, j));
                }
            }
        }
    }

    #[test]
    fn oblique_view_matches_per_cell_oracle() {
        let dims = Dims::cube(7);
        let d = random_density(dims, 3);
        let pose = CameraPose::new(0.0, 45.0);
        let (a, _) = view_align(&d, &pose).unwrap();
        let (lo, hi) = d.min_max();
        let (s, c) = 45f64.to_radians().sin_cos();
        for k in 0..7 {
            for j in 0..7 {
                for i in 0..7 {
                    let q = [i as f64 - 3.0, j as f64 - 3.0, k as f64 - 3.0];
                    let p = [3.0 + c * q[0] + s * q[2], 3.0 + q[1], 3.0 - s * q[0] + c * q[2]];
                    let want = crate::fields::sample_trilinear(&d, p);
                    let got = a.get(i, j, k);
                    assert!((got - want).abs() < 1e-12);
                    assert!(got >= lo && got <= hi);
                }
            }
        }
    }

    #[test]
    fn zero_gamma_is_column_sum() {
        let d = random_density(Dims::new(4, 5, 6), 4);
        let step = 0.75;
        let cfg = RenderConfig {
            gamma: 0.0,
            step: Some(step),
            image_dims: Some((5, 4)),
        };
        let img = render(&d, &cfg).unwrap();
        for y in 0..5 {
            for x in 0..4 {
                let sum: f64 = (0..6).map(|k| d.get(x, y, k)).sum();
                assert_eq!(img.get(4 - y, x), step * sum);
            }
        }
    }

    #[test]
    fn empty_density_renders_black() {
        let img = render(&ScalarField3::zeros(Dims::cube(4), 1.0), &RenderConfig::new(3.0)).unwrap();
        assert_eq!(img.sum(), 0.0);
    }

    #[test]
    fn single_voxel_independent_of_depth() {
        for k0 in 0..5 {
            let mut d = ScalarField3::zeros(Dims::cube(5), 0.5);
            d.set(2, 1, k0, 0.8);
            let img = render(&d, &RenderConfig::new(7.0)).unwrap();
            assert_eq!(img.get(3, 2), 0.5 * 0.8);
        }
    }

    #[test]
    fn matches_scalar_reference_loop() {
        let d = random_density(Dims::cube(8), 5);
        let gamma = 0.5;
        let img = render(&d, &RenderConfig::new(gamma)).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let mut want = 0.0;
                for k in 0..8 {
                    let behind: f64 = (k + 1..8).map(|m| d.get(x, y, m)).sum();
                    want += d.get(x, y, k) * (-gamma * behind).exp();
                }
                assert!((img.get(7 - y, x) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        let mut d = ScalarField3::zeros(Dims::cube(3), 1.0);
        d.set(0, 0, 0, -0.1);
        assert!(matches!(render(&d, &RenderConfig::new(1.0)), Err(Error::NegativeDensity { .. })));
        let d = ScalarField3::zeros(Dims::cube(3), 1.0);
        assert!(render(&d, &RenderConfig::new(-1.0)).is_err());
        let cfg = RenderConfig {
            image_dims: Some((4, 4)),
            ..RenderConfig::new(1.0)
        };
        assert!(render(&d, &cfg).is_err());
        assert!(view_align(&d, &CameraPose::new(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn absorption_monotone_in_gamma() {
        let mut d = ScalarField3::zeros(Dims::cube(4), 1.0);
        d.set(1, 1, 0, 0.6);
        d.set(1, 1, 2, 0.9);
        let mut prev = f64::INFINITY;
        for gamma in [0.0, 0.1, 0.5, 1.0, 4.0] {
            let s = render(&d, &RenderConfig::new(gamma)).unwrap().sum();
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn homogeneous_without_absorption() {
        let d = random_density(Dims::cube(5), 6);
        let a = render(&d, &RenderConfig::new(0.0)).unwrap();
        let b = render(&d.map(|v| 2.5 * v), &RenderConfig::new(0.0)).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((2.5 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_shift_with_recentering_is_invariant() {
        let dims = Dims::cube(12);
        let blob = |c: [f64; 3]| {
            ScalarField3::from_fn(dims, 1.0, |i, j, k| {
                let r2 = (i as f64 - c[0]).powi(2) + (j as f64 - c[1]).powi(2) + (k as f64 - c[2]).powi(2);
                (-r2 / 3.0).exp()
            })
        };
        let a = blob([5.0, 5.0, 5.0]);
        let b = blob([7.0, 6.0, 5.0]);
        let pose = CameraPose::new(3.0, -7.0);
        let cfg = RenderConfig::new(0.4);
        let ia = render_view(&a, &pose.looking_at(a.centroid()), &cfg).unwrap();
        let ib = render_view(&b, &pose.looking_at(b.centroid()), &cfg).unwrap();
        let mut err: f64 = 0.0;
        for r in 3..9 {
            for c in 3..9 {
                err = err.max((ia.get(r, c) - ib.get(r, c)).abs());
            }
        }
        // Centroids differ slightly due to truncation at the domain edge.
        assert!(err < 1e-3, "{err}");
    }

    fn fd_check(dims: Dims, pose: CameraPose, gamma: f64, seed: u64) -> f64 {
        let d = random_density(dims, seed);
        let cfg = RenderConfig::new(gamma);
        let (a, tape) = view_align(&d, &pose).unwrap();
        let seed_img = GrayImage::from_fn(dims.ny, dims.nx, |r, c| 1.0 + 0.1 * ((r * 3 + c) % 5) as f64);
        let g = render_adjoint(&tape, &a, &cfg, &seed_img).unwrap();
        let f = |d: &ScalarField3| -> f64 {
            let img = render_view(d, &pose, &cfg).unwrap();
            img.data().iter().zip(seed_img.data()).map(|(x, w)| x * w).sum()
        };
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        let scale = g.max_abs();
        for c in 0..dims.len() {
            let mut p = d.clone();
            p.data_mut()[c] += eps;
            let mut m = d.clone();
            m.data_mut()[c] -= eps;
            let fd = (f(&p) - f(&m)) / (2.0 * eps);
            worst = worst.max((fd - g.data()[c]).abs() / scale);
        }
        worst
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        assert!(fd_check(Dims::cube(6), CameraPose::new(0.0, 0.0), 0.5, 7) < 1e-6);
        assert!(fd_check(Dims::cube(6), CameraPose::new(4.0, -8.0), 1.5, 8) < 1e-6);
    }

    #[test]
    fn adjoint_limits() {
        let d = random_density(Dims::cube(4), 9);
        let (a, tape) = view_align(&d, &CameraPose::new(0.0, 0.0)).unwrap();
        let zero = GrayImage::zeros(4, 4);
        assert_eq!(render_adjoint(&tape, &a, &RenderConfig::new(1.0), &zero).unwrap().max_abs(), 0.0);
        let gi = GrayImage::from_fn(4, 4, |r, c| (r * 4 + c) as f64);
        let g = render_adjoint(&tape, &a, &RenderConfig::new(0.0), &gi).unwrap();
        for k in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(g.get(x, y, k), gi.get(3 - y, x));
                }
            }
        }
        let other = random_density(Dims::cube(5), 1);
        assert!(render_adjoint(&tape, &other, &RenderConfig::new(0.0), &gi).is_err());
    }

    #[test]
    fn vector_alignment_rotates_components() {
        let dims = Dims::cube(5);
        let v = VectorField3::filled(dims, 1.0, [1.0, 0.0, 0.0]);
        let a = view_align_vector(&v, &CameraPose::new(0.0, 90.0)).unwrap();
        // World +x seen from a camera turned by 90 degrees about y.
        let r = CameraPose::new(0.0, 90.0).rotation();
        for c in 0..dims.len() {
            assert_eq!([a.comp(0)[c], a.comp(1)[c], a.comp(2)[c]], [r[0][0], r[0][1], r[0][2]]);
        }
    }
}
