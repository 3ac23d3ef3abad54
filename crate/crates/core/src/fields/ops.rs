//! Central-difference vector calculus on collocated grids.
//!
//! Interior cells use `(f[i+1] - f[i-1]) / 2h`, boundary cells one-sided
//! first-order differences. Because every operator is assembled from the same
//! per-axis difference, mixed differences commute and `div(curl)` and
//! `curl(grad)` vanish on interior cells up to roundoff.

use rayon::prelude::*;

use super::{Dims, ScalarField3, SoftMask, VectorField3};
use crate::error::{Error, Result};

fn check_stencil(dims: Dims) -> Result<()> {
    if dims.min_axis() < 3 {
        Err(Error::GridTooSmall(dims))
    } else {
        Ok(())
    }
}

/// Per-axis derivative of a flat x-fastest array.
fn diff_axis(data: &[f64], dims: Dims, h: f64, axis: usize) -> Vec<f64> {
    let n = dims.as_array()[axis];
    let s = dims.stride(axis);
    let h2 = 2.0 * h;
    let mut out = vec![0.0; data.len()];
    out.par_iter_mut().enumerate().for_each(|(idx, o)| {
        let c = (idx / s) % n;
        *o = if c == 0 {
            (data[idx + s] - data[idx]) / h
        } else if c == n - 1 {
            (data[idx] - data[idx - s]) / h
        } else {
            (data[idx + s] - data[idx - s]) / h2
        };
    });
    out
}

/// Transpose of `diff_axis`, accumulated into `out` with factor `sign`.
fn diff_axis_transpose(g: &[f64], dims: Dims, h: f64, axis: usize, sign: f64, out: &mut [f64]) {
    let n = dims.as_array()[axis];
    let s = dims.stride(axis);
    let inv_h = sign / h;
    let inv_2h = 0.5 * sign / h;
    // Gather form of the scatter so the loop stays race-free: cell `idx`
    // receives contributions from the rows whose stencil touches it.
    out.par_iter_mut().enumerate().for_each(|(idx, o)| {
        let c = (idx / s) % n;
        let mut acc = 0.0;
        // Own row.
        if c == 0 {
            acc -= g[idx] * inv_h;
        } else if c == n - 1 {
            acc += g[idx] * inv_h;
        }
        // Row below (c - 1) references this cell as its upper neighbour.
        if c >= 1 {
            let r = c - 1;
            let gi = g[idx - s];
            acc += if r == 0 { gi * inv_h } else { gi * inv_2h };
        }
        // Row above (c + 1) references this cell as its lower neighbour.
        if c + 1 < n {
            let r = c + 1;
            let gi = g[idx + s];
            acc -= if r == n - 1 { gi * inv_h } else { gi * inv_2h };
        }
        *o += acc;
    });
}

pub fn gradient(phi: &ScalarField3) -> Result<VectorField3> {
    let dims = phi.dims();
    check_stencil(dims)?;
    let h = phi.spacing();
    let comps = [0, 1, 2].map(|a| diff_axis(phi.data(), dims, h, a));
    VectorField3::from_vecs(dims, h, comps)
}

pub fn curl(psi: &VectorField3) -> Result<VectorField3> {
    let dims = psi.dims();
    check_stencil(dims)?;
    let h = psi.spacing();
    let d = |comp: usize, axis: usize| diff_axis(psi.comp(comp), dims, h, axis);
    let sub = |a: Vec<f64>, b: Vec<f64>| a.into_iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    let cx = sub(d(2, 1), d(1, 2));
    let cy = sub(d(0, 2), d(2, 0));
    let cz = sub(d(1, 0), d(0, 1));
    VectorField3::from_vecs(dims, h, [cx, cy, cz])
}

pub fn divergence(v: &VectorField3) -> Result<ScalarField3> {
    let dims = v.dims();
    check_stencil(dims)?;
    let h = v.spacing();
    let mut out = diff_axis(v.comp(0), dims, h, 0);
    for a in 1..3 {
        for (o, d) in out.iter_mut().zip(diff_axis(v.comp(a), dims, h, a)) {
            *o += d;
        }
    }
    ScalarField3::from_vec(dims, h, out)
}

/// Exact transpose of [`gradient`] as a linear map.
pub fn gradient_adjoint(g: &VectorField3) -> Result<ScalarField3> {
    let dims = g.dims();
    check_stencil(dims)?;
    let h = g.spacing();
    let mut out = vec![0.0; dims.len()];
    for a in 0..3 {
        diff_axis_transpose(g.comp(a), dims, h, a, 1.0, &mut out);
    }
    ScalarField3::from_vec(dims, h, out)
}

/// Exact transpose of [`curl`] as a linear map.
pub fn curl_adjoint(g: &VectorField3) -> Result<VectorField3> {
    let dims = g.dims();
    check_stencil(dims)?;
    let h = g.spacing();
    let mut out: [Vec<f64>; 3] = [0, 1, 2].map(|_| vec![0.0; dims.len()]);
    // curl_x = Dy psi_z - Dz psi_y, curl_y = Dz psi_x - Dx psi_z, curl_z = Dx psi_y - Dy psi_x
    diff_axis_transpose(g.comp(1), dims, h, 2, 1.0, &mut out[0]);
    diff_axis_transpose(g.comp(2), dims, h, 1, -1.0, &mut out[0]);
    diff_axis_transpose(g.comp(2), dims, h, 0, 1.0, &mut out[1]);
    diff_axis_transpose(g.comp(0), dims, h, 2, -1.0, &mut out[1]);
    diff_axis_transpose(g.comp(0), dims, h, 1, 1.0, &mut out[2]);
    diff_axis_transpose(g.comp(1), dims, h, 0, -1.0, &mut out[2]);
    VectorField3::from_vecs(dims, h, out)
}

/// Stylization velocity `lambda * grad(mask * phi) + (1 - lambda) * curl(mask * psi)`.
///
/// The mask multiplies the potentials, so a `lambda = 0` velocity stays
/// discretely divergence-free for any mask.
pub fn compose_velocity(
    phi: &ScalarField3,
    psi: &VectorField3,
    lambda: f64,
    mask: &SoftMask,
) -> Result<VectorField3> {
    let dims = phi.dims();
    dims.ensure_same(psi.dims(), "compose_velocity: phi vs psi")?;
    dims.ensure_same(mask.dims(), "compose_velocity: phi vs mask")?;
    let m = mask.field().data();
    let mphi = ScalarField3::from_vec(dims, phi.spacing(), phi.data().iter().zip(m).map(|(p, w)| p * w).collect())?;
    let mpsi = mask_vector(psi, m)?;
    let g = gradient(&mphi)?;
    let c = curl(&mpsi)?;
    let comps = [0, 1, 2].map(|a| {
        g.comp(a)
            .iter()
            .zip(c.comp(a))
            .map(|(gv, cv)| lambda * gv + (1.0 - lambda) * cv)
            .collect()
    });
    VectorField3::from_vecs(dims, phi.spacing(), comps)
}

fn mask_vector(v: &VectorField3, m: &[f64]) -> Result<VectorField3> {
    VectorField3::from_vecs(
        v.dims(),
        v.spacing(),
        [0, 1, 2].map(|a| v.comp(a).iter().zip(m).map(|(g, w)| g * w).collect()),
    )
}

/// Pulls a velocity gradient back onto the two potentials.
pub fn compose_velocity_adjoint(
    grad_v: &VectorField3,
    lambda: f64,
    mask: &SoftMask,
) -> Result<(ScalarField3, VectorField3)> {
    grad_v.dims().ensure_same(mask.dims(), "compose_velocity_adjoint: grad vs mask")?;
    let m = mask.field().data();
    let ga = gradient_adjoint(grad_v)?;
    let gphi = ScalarField3::from_vec(
        ga.dims(),
        ga.spacing(),
        ga.data().iter().zip(m).map(|(g, w)| lambda * g * w).collect(),
    )?;
    let gpsi = mask_vector(&curl_adjoint(grad_v)?, m)?.scaled(1.0 - lambda);
    Ok((gphi, gpsi))
}

/// Largest magnitude over interior cells (those with a full central stencil).
pub fn interior_max_abs(data: &[f64], dims: Dims) -> f64 {
    let mut m: f64 = 0.0;
    for k in 1..dims.nz.saturating_sub(1) {
        for j in 1..dims.ny.saturating_sub(1) {
            for i in 1..dims.nx.saturating_sub(1) {
                m = m.max(data[dims.index(i, j, k)].abs());
            }
        }
    }
    m
}
