//! Semi-Lagrangian and MacCormack advection with an adjoint for the former,
//! plus temporal alignment and window blending of velocity fields.

mod temporal;

pub use temporal::{align_velocity, blend_window, window_weights, OmegaShape, VelocitySequence};
pub(crate) use temporal::clamped_window;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{Dims, ScalarField3, Stencil, VectorField3};

/// A grid quantity that can be transported channel by channel.
pub trait Transportable: Sized {
    fn dims(&self) -> Dims;
    fn spacing(&self) -> f64;
    fn channels(&self) -> Vec<&[f64]>;
    fn from_channels(dims: Dims, spacing: f64, channels: Vec<Vec<f64>>) -> Result<Self>;
}

impl Transportable for ScalarField3 {
    fn dims(&self) -> Dims {
        ScalarField3::dims(self)
    }
    fn spacing(&self) -> f64 {
        ScalarField3::spacing(self)
    }
    fn channels(&self) -> Vec<&[f64]> {
        vec![self.data()]
    }
    fn from_channels(dims: Dims, spacing: f64, mut channels: Vec<Vec<f64>>) -> Result<Self> {
        ScalarField3::from_vec(dims, spacing, channels.remove(0))
    }
}

impl Transportable for VectorField3 {
    fn dims(&self) -> Dims {
        VectorField3::dims(self)
    }
    fn spacing(&self) -> f64 {
        VectorField3::spacing(self)
    }
    fn channels(&self) -> Vec<&[f64]> {
        vec![self.comp(0), self.comp(1), self.comp(2)]
    }
    fn from_channels(dims: Dims, spacing: f64, channels: Vec<Vec<f64>>) -> Result<Self> {
        let [x, y, z]: [Vec<f64>; 3] = channels
            .try_into()
            .map_err(|_| Error::invalid("vector field needs three channels"))?;
        VectorField3::from_vecs(dims, spacing, [x, y, z])
    }
}

/// Backtraced sample positions (index space) of one semi-Lagrangian step.
/// The interpolation weights are a pure function of these positions.
#[derive(Debug, Clone)]
pub struct AdvectionTape {
    dims: Dims,
    dt: f64,
    positions: Vec<[f64; 3]>,
}

impl AdvectionTape {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    fn stencil(&self, cell: usize) -> Stencil {
        Stencil::locate(self.dims, self.positions[cell])
    }
}

fn backtrace(vel: &VectorField3, dt: f64) -> Vec<[f64; 3]> {
    let dims = vel.dims();
    let s = dt / vel.spacing();
    let (vx, vy, vz) = (vel.comp(0), vel.comp(1), vel.comp(2));
    (0..dims.len())
        .into_par_iter()
        .map(|idx| {
            let (i, j, k) = dims.coords(idx);
            [
                i as f64 - s * vx[idx],
                j as f64 - s * vy[idx],
                k as f64 - s * vz[idx],
            ]
        })
        .collect()
}

fn gather(tape: &AdvectionTape, data: &[f64]) -> Vec<f64> {
    (0..tape.dims.len())
        .into_par_iter()
        .map(|c| tape.stencil(c).eval(data))
        .collect()
}

/// One semi-Lagrangian step: `out(x) = field(x - dt * vel(x))`, sampled
/// trilinearly with boundary clamping.
pub fn advect_sl<F: Transportable>(field: &F, vel: &VectorField3, dt: f64) -> Result<(F, AdvectionTape)> {
    let dims = field.dims();
    dims.ensure_same(vel.dims(), "advect: field vs velocity")?;
    let tape = AdvectionTape {
        dims,
        dt,
        positions: backtrace(vel, dt),
    };
    let out = field.channels().into_iter().map(|c| gather(&tape, c)).collect();
    Ok((F::from_channels(dims, field.spacing(), out)?, tape))
}

/// MacCormack predictor-corrector step with the min/max limiter over the
/// eight cells read by the forward trace.
pub fn advect_maccormack<F: Transportable>(field: &F, vel: &VectorField3, dt: f64) -> Result<F> {
    let dims = field.dims();
    dims.ensure_same(vel.dims(), "advect: field vs velocity")?;
    let fwd_tape = AdvectionTape {
        dims,
        dt,
        positions: backtrace(vel, dt),
    };
    let back_tape = AdvectionTape {
        dims,
        dt,
        positions: backtrace(vel, -dt),
    };
    let out = field
        .channels()
        .into_iter()
        .map(|src| {
            let forward = gather(&fwd_tape, src);
            let backward = gather(&back_tape, &forward);
            (0..dims.len())
                .into_par_iter()
                .map(|c| {
                    let corrected = forward[c] + 0.5 * (src[c] - backward[c]);
                    let st = fwd_tape.stencil(c);
                    let (lo, hi) = st
                        .idx
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(src[i]), hi.max(src[i])));
                    corrected.clamp(lo, hi)
                })
                .collect()
        })
        .collect();
    F::from_channels(dims, field.spacing(), out)
}

/// Reverse pass of [`advect_sl`]: returns the gradients of a scalar loss with
/// respect to the advected field and the velocity, given its gradient with
/// respect to the output.
pub fn advect_adjoint<F: Transportable>(
    tape: &AdvectionTape,
    field: &F,
    vel: &VectorField3,
    dt: f64,
    out_grad: &F,
) -> Result<(F, VectorField3)> {
    let dims = field.dims();
    if tape.dims != dims || vel.dims() != dims || out_grad.dims() != dims {
        return Err(Error::StaleTape("advection tape does not match the field dimensions"));
    }
    if tape.dt != dt {
        return Err(Error::StaleTape("advection tape was recorded with a different time step"));
    }
    let n = dims.len();
    let src = field.channels();
    let og = out_grad.channels();
    if src.len() != og.len() {
        return Err(Error::StaleTape("output gradient has a different channel count"));
    }

    let mut field_grad: Vec<Vec<f64>> = vec![vec![0.0; n]; src.len()];
    // Scatter is serial so accumulation order is fixed.
    for c in 0..n {
        let st = tape.stencil(c);
        for (g, fg) in og.iter().zip(field_grad.iter_mut()) {
            st.scatter(g[c], fg);
        }
    }

    let scale = -dt / field.spacing();
    let vel_grad: Vec<[f64; 3]> = (0..n)
        .into_par_iter()
        .map(|c| {
            let st = tape.stencil(c);
            let mut acc = [0.0; 3];
            for (data, g) in src.iter().zip(&og) {
                if g[c] == 0.0 {
                    continue;
                }
                let d = st.eval_grad(data);
                for a in 0..3 {
                    acc[a] += g[c] * d[a] * scale;
                }
            }
            acc
        })
        .collect();
    let comps = [0, 1, 2].map(|a| vel_grad.iter().map(|v| v[a]).collect());
    Ok((
        F::from_channels(dims, field.spacing(), field_grad)?,
        VectorField3::from_vecs(dims, vel.spacing(), comps)?,
    ))
}
