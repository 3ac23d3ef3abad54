//! Cell-centered 3D grids and the discrete calculus built on them.
//!
//! Every grid stores its values x-fastest: the linear index of cell `(i, j, k)`
//! is `i + nx * (j + ny * k)`. Cell `(i, j, k)` has its center at world
//! position `(i, j, k) * spacing`, so index space and world space differ only
//! by the uniform spacing.

mod mask;
mod ops;
mod resample;
pub mod vf32;

pub use mask::{soft_mask_from_density, SoftMask};
pub use ops::{
    compose_velocity, compose_velocity_adjoint, curl, curl_adjoint, divergence, gradient,
    gradient_adjoint, interior_max_abs,
};
pub use resample::{resample_to, resample_vector_to, scaled_dims, ResampleMode};

use crate::error::{Error, Result};

/// Cell counts along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Dims::new(n, n, n)
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub const fn from_array(a: [usize; 3]) -> Self {
        Dims::new(a[0], a[1], a[2])
    }

    #[inline]
    pub const fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub const fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / (self.nx * self.ny);
        (i, j, k)
    }

    /// Linear stride of one step along `axis`.
    #[inline]
    pub const fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.nx,
            _ => self.nx * self.ny,
        }
    }

    pub fn min_axis(&self) -> usize {
        self.nx.min(self.ny).min(self.nz)
    }

    /// Cells whose full central stencil stays inside the grid.
    pub fn is_interior(&self, i: usize, j: usize, k: usize) -> bool {
        i >= 1 && j >= 1 && k >= 1 && i + 1 < self.nx && j + 1 < self.ny && k + 1 < self.nz
    }

    pub(crate) fn ensure_same(&self, other: Dims, what: &'static str) -> Result<()> {
        if *self == other {
            Ok(())
        } else {
            Err(Error::DimMismatch {
                what,
                left: *self,
                right: other,
            })
        }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// A scalar value per cell: densities, the irrotational potential, masks.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField3 {
    dims: Dims,
    spacing: f64,
    data: Vec<f64>,
}

impl ScalarField3 {
    pub fn zeros(dims: Dims, spacing: f64) -> Self {
        Self::filled(dims, spacing, 0.0)
    }

    pub fn filled(dims: Dims, spacing: f64, value: f64) -> Self {
        ScalarField3 {
            dims,
            spacing,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, spacing: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                what: "scalar field data",
                left: data.len(),
                right: dims.len(),
            });
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing}")));
        }
        Ok(ScalarField3 { dims, spacing, data })
    }

    /// Builds a field by evaluating `f(i, j, k)` at every cell.
    pub fn from_fn(dims: Dims, spacing: f64, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for k in 0..dims.nz {
            for j in 0..dims.ny {
                for i in 0..dims.nx {
                    data.push(f(i, j, k));
                }
            }
        }
        ScalarField3 { dims, spacing, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.dims.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.dims.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField3 {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &ScalarField3) -> Result<()> {
        self.dims.ensure_same(other.dims, "add_scaled")?;
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
        Ok(())
    }

    /// Density-weighted centroid in world coordinates, or the domain center
    /// when the field carries no mass.
    pub fn centroid(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let mut mass = 0.0;
        for k in 0..self.dims.nz {
            for j in 0..self.dims.ny {
                for i in 0..self.dims.nx {
                    let w = self.get(i, j, k).max(0.0);
                    acc[0] += w * i as f64;
                    acc[1] += w * j as f64;
                    acc[2] += w * k as f64;
                    mass += w;
                }
            }
        }
        if mass > 0.0 {
            acc.map(|a| a / mass * self.spacing)
        } else {
            self.center()
        }
    }

    /// Geometric center of the domain in world coordinates.
    pub fn center(&self) -> [f64; 3] {
        domain_center(self.dims, self.spacing)
    }

    /// Checks the density invariant (no negative values).
    pub fn ensure_nonnegative(&self) -> Result<()> {
        match self.data.iter().position(|&v| v < 0.0) {
            Some(index) => Err(Error::NegativeDensity {
                index,
                value: self.data[index],
            }),
            None => Ok(()),
        }
    }
}

pub(crate) fn domain_center(dims: Dims, spacing: f64) -> [f64; 3] {
    [
        (dims.nx as f64 - 1.0) * 0.5 * spacing,
        (dims.ny as f64 - 1.0) * 0.5 * spacing,
        (dims.nz as f64 - 1.0) * 0.5 * spacing,
    ]
}

/// Three collocated scalar components per cell: velocities and the vector potential.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField3 {
    dims: Dims,
    spacing: f64,
    comps: [Vec<f64>; 3],
}

impl VectorField3 {
    pub fn zeros(dims: Dims, spacing: f64) -> Self {
        Self::filled(dims, spacing, [0.0; 3])
    }

    pub fn filled(dims: Dims, spacing: f64, value: [f64; 3]) -> Self {
        VectorField3 {
            dims,
            spacing,
            comps: value.map(|v| vec![v; dims.len()]),
        }
    }

    pub fn from_components(x: ScalarField3, y: ScalarField3, z: ScalarField3) -> Result<Self> {
        x.dims.ensure_same(y.dims, "vector components")?;
        x.dims.ensure_same(z.dims, "vector components")?;
        Ok(VectorField3 {
            dims: x.dims,
            spacing: x.spacing,
            comps: [x.data, y.data, z.data],
        })
    }

    pub fn from_vecs(dims: Dims, spacing: f64, comps: [Vec<f64>; 3]) -> Result<Self> {
        for c in &comps {
            if c.len() != dims.len() {
                return Err(Error::LengthMismatch {
                    what: "vector field component",
                    left: c.len(),
                    right: dims.len(),
                });
            }
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing}")));
        }
        Ok(VectorField3 { dims, spacing, comps })
    }

    pub fn from_fn(dims: Dims, spacing: f64, mut f: impl FnMut(usize, usize, usize) -> [f64; 3]) -> Self {
        let mut comps: [Vec<f64>; 3] = Default::default();
        for c in comps.iter_mut() {
            c.reserve(dims.len());
        }
        for k in 0..dims.nz {
            for j in 0..dims.ny {
                for i in 0..dims.nx {
                    let v = f(i, j, k);
                    for a in 0..3 {
                        comps[a].push(v[a]);
                    }
                }
            }
        }
        VectorField3 { dims, spacing, comps }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn comp(&self, axis: usize) -> &[f64] {
        &self.comps[axis]
    }

    pub fn comp_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.comps[axis]
    }

    pub fn comps(&self) -> &[Vec<f64>; 3] {
        &self.comps
    }

    /// One component as a standalone scalar field.
    pub fn component(&self, axis: usize) -> ScalarField3 {
        ScalarField3 {
            dims: self.dims,
            spacing: self.spacing,
            data: self.comps[axis].clone(),
        }
    }

    pub fn into_components(self) -> [ScalarField3; 3] {
        let (dims, spacing) = (self.dims, self.spacing);
        self.comps.map(|data| ScalarField3 { dims, spacing, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let idx = self.dims.index(i, j, k);
        [self.comps[0][idx], self.comps[1][idx], self.comps[2][idx]]
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, a: f64) -> Self {
        VectorField3 {
            dims: self.dims,
            spacing: self.spacing,
            comps: self.comps.clone().map(|c| c.into_iter().map(|v| a * v).collect()),
        }
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &VectorField3) -> Result<()> {
        self.dims.ensure_same(other.dims, "add_scaled")?;
        for (s, o) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in s.iter_mut().zip(o) {
                *x += a * y;
            }
        }
        Ok(())
    }
}

/// Interpolation weights and cell indices for one trilinear lookup.
///
/// Corner `c` of `idx`/`w` takes the upper cell along x when bit 0 of `c` is
/// set, along y for bit 1, along z for bit 2.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub idx: [usize; 8],
    pub t: [f64; 3],
    pub clamped: [bool; 3],
}

impl Stencil {
    /// Locates continuous index-space position `p` in a grid of `dims`,
    /// clamping to the outermost cell centers.
    #[inline]
    pub fn locate(dims: Dims, p: [f64; 3]) -> Stencil {
        let n = dims.as_array();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut t = [0.0; 3];
        let mut clamped = [false; 3];
        for a in 0..3 {
            let max = (n[a] - 1) as f64;
            let q = if p[a] < 0.0 {
                clamped[a] = true;
                0.0
            } else if p[a] > max {
                clamped[a] = true;
                max
            } else if p[a].is_nan() {
                clamped[a] = true;
                0.0
            } else {
                p[a]
            };
            let i0 = (q.floor() as usize).min(n[a] - 1);
            lo[a] = i0;
            hi[a] = (i0 + 1).min(n[a] - 1);
            t[a] = q - i0 as f64;
        }
        let mut idx = [0usize; 8];
        for (c, slot) in idx.iter_mut().enumerate() {
            let i = if c & 1 != 0 { hi[0] } else { lo[0] };
            let j = if c & 2 != 0 { hi[1] } else { lo[1] };
            let k = if c & 4 != 0 { hi[2] } else { lo[2] };
            *slot = dims.index(i, j, k);
        }
        Stencil { idx, t, clamped }
    }

    /// Product weights; they sum to one.
    #[inline]
    pub fn weights(&self) -> [f64; 8] {
        let [tx, ty, tz] = self.t;
        let mut w = [0.0; 8];
        for (c, slot) in w.iter_mut().enumerate() {
            let wx = if c & 1 != 0 { tx } else { 1.0 - tx };
            let wy = if c & 2 != 0 { ty } else { 1.0 - ty };
            let wz = if c & 4 != 0 { tz } else { 1.0 - tz };
            *slot = wx * wy * wz;
        }
        w
    }

    /// Interpolated value via nested lerps. Exact for constant data and at
    /// cell centers.
    #[inline]
    pub fn eval(&self, data: &[f64]) -> f64 {
        let v = self.idx.map(|i| data[i]);
        let [tx, ty, tz] = self.t;
        let c00 = lerp(v[0], v[1], tx);
        let c10 = lerp(v[2], v[3], tx);
        let c01 = lerp(v[4], v[5], tx);
        let c11 = lerp(v[6], v[7], tx);
        lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz)
    }

    /// Derivative of the interpolated value with respect to the index-space
    /// position; zero along clamped axes and exactly zero for constant data.
    #[inline]
    pub fn eval_grad(&self, data: &[f64]) -> [f64; 3] {
        let v = self.idx.map(|i| data[i]);
        let [tx, ty, tz] = self.t;
        let mut g = [
            lerp(lerp(v[1] - v[0], v[3] - v[2], ty), lerp(v[5] - v[4], v[7] - v[6], ty), tz),
            lerp(lerp(v[2] - v[0], v[3] - v[1], tx), lerp(v[6] - v[4], v[7] - v[5], tx), tz),
            lerp(lerp(v[4] - v[0], v[5] - v[1], tx), lerp(v[6] - v[2], v[7] - v[3], tx), ty),
        ];
        for a in 0..3 {
            if self.clamped[a] {
                g[a] = 0.0;
            }
        }
        g
    }

    /// Scatters `g` into `out` with the interpolation weights (the transpose of `eval`).
    #[inline]
    pub fn scatter(&self, g: f64, out: &mut [f64]) {
        if g == 0.0 {
            return;
        }
        for (i, w) in self.idx.iter().zip(self.weights()) {
            out[*i] += w * g;
        }
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Trilinear interpolation at world position `pos`; positions outside the
/// grid are clamped to the boundary cell centers.
pub fn sample_trilinear(field: &ScalarField3, pos: [f64; 3]) -> f64 {
    let h = field.spacing;
    Stencil::locate(field.dims, pos.map(|p| p / h)).eval(&field.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(dims: Dims) -> ScalarField3 {
        ScalarField3::from_fn(dims, 1.0, |i, j, k| (i * 7 + j * 3 + k * 11) as f64 * 0.1)
    }

    #[test]
    fn sample_at_cell_center_is_exact() {
        let f = ramp(Dims::new(4, 5, 6));
        for (i, j, k) in [(0, 0, 0), (3, 4, 5), (2, 1, 3)] {
            assert_eq!(sample_trilinear(&f, [i as f64, j as f64, k as f64]), f.get(i, j, k));
        }
    }

    #[test]
    fn sample_midpoint_is_mean() {
        let f = ScalarField3::from_fn(Dims::cube(3), 2.0, |i, j, k| ((i + 1) * (j + 2) * (k + 3)) as f64);
        let v = sample_trilinear(&f, [1.0, 2.0, 2.0]);
        assert!((v - 0.5 * (f.get(0, 1, 1) + f.get(1, 1, 1))).abs() < 1e-12);
    }

    #[test]
    fn sample_constant_anywhere() {
        let f = ScalarField3::filled(Dims::new(3, 4, 5), 0.7, 0.3125);
        for p in [[-4.0, 1.3, 2.2], [0.11, 0.91, 1.7], [9.0, 9.0, 9.0]] {
            assert_eq!(sample_trilinear(&f, p), 0.3125);
        }
    }

    #[test]
    fn out_of_range_clamps() {
        let f = ramp(Dims::cube(4));
        assert_eq!(sample_trilinear(&f, [-3.0, 0.0, 0.0]), f.get(0, 0, 0));
        assert_eq!(sample_trilinear(&f, [10.0, 3.0, 3.0]), f.get(3, 3, 3));
    }

    #[test]
    fn centroid_of_single_voxel() {
        let mut f = ScalarField3::zeros(Dims::cube(5), 2.0);
        f.set(1, 2, 3, 4.0);
        assert_eq!(f.centroid(), [2.0, 4.0, 6.0]);
    }

    proptest! {
        #[test]
        fn trilinear_reproduces_trilinear_functions(
            c in proptest::array::uniform8(-2.0f64..2.0),
            p in proptest::array::uniform3(0.0f64..4.0),
        ) {
            let f = |x: f64, y: f64, z: f64| {
                c[0] + c[1] * x + c[2] * y + c[3] * z + c[4] * x * y + c[5] * y * z + c[6] * x * z + c[7] * x * y * z
            };
            let grid = ScalarField3::from_fn(Dims::new(5, 5, 5), 1.0, |i, j, k| f(i as f64, j as f64, k as f64));
            let v = sample_trilinear(&grid, p);
            prop_assert!((v - f(p[0], p[1], p[2])).abs() < 1e-10);
        }

        #[test]
        fn stencil_gradient_matches_difference(p in proptest::array::uniform3(0.05f64..2.95)) {
            let grid = ScalarField3::from_fn(Dims::cube(4), 1.0, |i, j, k| ((i * 31 + j * 17 + k * 5) % 7) as f64);
            let st = Stencil::locate(grid.dims(), p);
            let g = st.eval_grad(grid.data());
            for a in 0..3 {
                let h = 1e-6;
                let mut q = p;
                q[a] = p[a] + h;
                let fp = Stencil::locate(grid.dims(), q).eval(grid.data());
                q[a] = p[a] - h;
                let fm = Stencil::locate(grid.dims(), q).eval(grid.data());
                let fd = (fp - fm) / (2.0 * h);
                // Straddling a cell face makes the difference one-sided.
                let frac = p[a] - p[a].floor();
                if frac > 1e-4 && frac < 1.0 - 1e-4 {
                    prop_assert!((fd - g[a]).abs() < 1e-6, "axis {a}: {fd} vs {}", g[a]);
                }
            }
        }
    }
}
