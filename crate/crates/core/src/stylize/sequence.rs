use rayon::prelude::*;

use super::{
    ensure_same_dims, level_density, level_dims, sample_views, single_frame_gradients, step_potentials,
    stylize_frame, stylize_frame_warm, view_seed, BlendMode, FrameResult, FrameState, Objective, Observer, StylizeConfig,
};
use crate::error::{Error, Result};
use crate::fields::{resample_vector_to, ResampleMode, ScalarField3, VectorField3};
use crate::render::{view_align_vector, CameraPose, GrayImage};
use crate::transport::{advect_maccormack, align_velocity, blend_window, clamped_window, Transportable, VelocitySequence};

/// Stylized frames and the velocities that produced them.
#[derive(Debug, Clone)]
pub struct SequenceResult {
    pub densities: Vec<ScalarField3>,
    /// Blended stylization velocity per frame.
    pub velocities: Vec<VectorField3>,
    /// Per-frame results of the last independent pass (empty in gradient mode).
    pub frames: Vec<FrameResult>,
}

fn check_inputs(densities: &[ScalarField3], seq: &VelocitySequence) -> Result<()> {
    let dims = ensure_same_dims(densities, "sequence densities")?;
    let n = densities.len();
    if seq.len() + 1 != n && seq.len() != n {
        return Err(Error::LengthMismatch {
            what: "density frames vs velocity frames (expected n or n - 1 velocities)",
            left: n,
            right: seq.len(),
        });
    }
    if let Some(u) = seq.frames().first() {
        dims.ensure_same(u.dims(), "densities vs simulation velocities")?;
    }
    Ok(())
}

/// Weighted sum of the fields of `window`, each carried to frame `t`.
fn blend_aligned<F>(fields: &[F], seq: &VelocitySequence, t: usize, cfg: &StylizeConfig) -> Result<F>
where
    F: Transportable + Clone + Send + Sync,
{
    let window = clamped_window(t, cfg.window, fields.len() - 1, cfg.omega);
    let aligned = window
        .par_iter()
        .map(|&(i, _)| align_velocity(&fields[i], seq, i, t))
        .collect::<Result<Vec<F>>>()?;
    let dims = fields[t].dims();
    let mut acc = vec![vec![0.0; dims.len()]; fields[t].channels().len()];
    for (f, &(_, w)) in aligned.iter().zip(&window) {
        for (dst, src) in acc.iter_mut().zip(f.channels()) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += w * b);
        }
    }
    F::from_channels(dims, fields[t].spacing(), acc)
}

/// Phase one: every frame stylized on its own.
pub fn stylize_frames(densities: &[ScalarField3], obj: &Objective, cfg: &StylizeConfig, observer: Option<Observer<'_>>) -> Result<Vec<FrameResult>> {
    densities
        .par_iter()
        .enumerate()
        .map(|(t, d)| stylize_frame(d, obj, cfg, t, observer))
        .collect()
}

/// Phases two and three: blends each frame's velocity with its aligned
/// neighbours and transports the original density with the result.
pub fn blend_sequence(
    densities: &[ScalarField3],
    frames: &[FrameResult],
    seq: &VelocitySequence,
    cfg: &StylizeConfig,
) -> Result<(Vec<ScalarField3>, Vec<VectorField3>)> {
    check_inputs(densities, seq)?;
    if frames.len() != densities.len() {
        return Err(Error::LengthMismatch {
            what: "frame results vs densities",
            left: frames.len(),
            right: densities.len(),
        });
    }
    let velocities: Vec<VectorField3> = frames.iter().map(|f| f.velocity.clone()).collect();
    let blended = (0..densities.len())
        .into_par_iter()
        .map(|t| {
            let window = clamped_window(t, cfg.window, densities.len() - 1, cfg.omega);
            if window.len() == 1 {
                return Ok(velocities[t].clone());
            }
            let aligned = window
                .iter()
                .map(|&(i, _)| align_velocity(&velocities[i], seq, i, t))
                .collect::<Result<Vec<_>>>()?;
            let omega: Vec<f64> = window.iter().map(|&(_, w)| w).collect();
            blend_window(&aligned, &omega)
        })
        .collect::<Result<Vec<_>>>()?;
    let out = densities
        .par_iter()
        .zip(&blended)
        .map(|(d, v)| advect_maccormack(d, v, cfg.dt))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, blended))
}

/// Time-coherent stylization of a density sequence driven by the simulation
/// velocities `seq` (`seq[t]` carries frame `t` to `t + 1`).
pub fn stylize_sequence(
    densities: &[ScalarField3],
    seq: &VelocitySequence,
    obj: &Objective,
    cfg: &StylizeConfig,
    observer: Option<Observer<'_>>,
) -> Result<SequenceResult> {
    cfg.validate()?;
    check_inputs(densities, seq)?;
    for d in densities {
        d.ensure_nonnegative()?;
    }
    match cfg.blend {
        BlendMode::Velocity => velocity_mode(densities, seq, obj, cfg, observer),
        BlendMode::Gradient => gradient_mode(densities, seq, obj, cfg, observer),
    }
}

fn velocity_mode(
    densities: &[ScalarField3],
    seq: &VelocitySequence,
    obj: &Objective,
    cfg: &StylizeConfig,
    observer: Option<Observer<'_>>,
) -> Result<SequenceResult> {
    let mut frames = stylize_frames(densities, obj, cfg, observer)?;
    for sweep in 1..cfg.sweeps {
        log::info!("sequence sweep {}", sweep + 1);
        let phis: Vec<ScalarField3> = frames.iter().map(|f| f.phi.clone()).collect();
        let psis: Vec<VectorField3> = frames.iter().map(|f| f.psi.clone()).collect();
        let sweep_cfg = StylizeConfig {
            seed: cfg.seed.wrapping_add(sweep as u64),
            ..cfg.clone()
        };
        frames = (0..densities.len())
            .into_par_iter()
            .map(|t| {
                let phi = blend_aligned(&phis, seq, t, cfg)?;
                let psi = blend_aligned(&psis, seq, t, cfg)?;
                stylize_frame_warm(&densities[t], &phi, &psi, obj, &sweep_cfg, t, observer)
            })
            .collect::<Result<Vec<_>>>()?;
    }
    let (out, velocities) = blend_sequence(densities, &frames, seq, cfg)?;
    Ok(SequenceResult {
        densities: out,
        velocities,
        frames,
    })
}

/// Lockstep optimization of all frames, blending aligned potential gradients
/// at every iteration.
fn gradient_mode(
    densities: &[ScalarField3],
    seq: &VelocitySequence,
    obj: &Objective,
    cfg: &StylizeConfig,
    observer: Option<Observer<'_>>,
) -> Result<SequenceResult> {
    let n = densities.len();
    let full = densities[0].dims();
    let mut carried: Option<Vec<FrameState>> = None;
    for level in (0..cfg.scales).rev() {
        let ds = densities
            .par_iter()
            .map(|d| level_density(d, cfg, level))
            .collect::<Result<Vec<_>>>()?;
        let dims = level_dims(full, cfg, level);
        let seq_s = if level == 0 {
            seq.clone()
        } else {
            let frames = seq
                .frames()
                .iter()
                .map(|u| resample_vector_to(u, dims, ResampleMode::Trilinear))
                .collect::<Result<Vec<_>>>()?;
            VelocitySequence::new(frames, seq.dt())?
        };
        let mut states = ds
            .iter()
            .enumerate()
            .map(|(t, d)| {
                let s = FrameState::new(t, d, cfg)?;
                match &carried {
                    Some(prev) => s.with_potentials(&prev[t].phi, &prev[t].psi),
                    None => Ok(s),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let targets = obj.targets(dims.ny, dims.nx)?;
        for iter in 0..cfg.iters_per_scale {
            let grads = states
                .par_iter()
                .zip(&ds)
                .map(|(s, d)| {
                    let views = sample_views(cfg, s.look_at, view_seed(cfg.seed, level, iter));
                    single_frame_gradients(d, s, obj, &targets, cfg, &views)
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(obs) = observer {
                for (s, g) in states.iter().zip(&grads) {
                    obs(&super::IterationReport {
                        frame: s.t,
                        scale: level,
                        iter,
                        loss: g.loss,
                        velocity: &g.velocity,
                        density: &g.density,
                    });
                }
            }
            let gphi: Vec<ScalarField3> = grads.iter().map(|g| g.phi.clone()).collect();
            let gpsi: Vec<VectorField3> = grads.into_iter().map(|g| g.psi).collect();
            let blended = (0..n)
                .into_par_iter()
                .map(|t| Ok((blend_aligned(&gphi, &seq_s, t, cfg)?, blend_aligned(&gpsi, &seq_s, t, cfg)?)))
                .collect::<Result<Vec<_>>>()?;
            states
                .par_iter_mut()
                .zip(&blended)
                .try_for_each(|(s, (gp, gs))| step_potentials(s, gp, gs, cfg))?;
        }
        carried = Some(states);
    }
    let states = carried.expect("scales >= 1");
    let velocities = states.iter().map(|s| s.velocity(cfg.lambda)).collect::<Result<Vec<_>>>()?;
    let out = densities
        .par_iter()
        .zip(&velocities)
        .map(|(d, v)| advect_maccormack(d, v, cfg.dt))
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceResult {
        densities: out,
        velocities,
        frames: Vec::new(),
    })
}

/// Image-plane motion of `u` seen from `pose`: mean camera-frame (x, y)
/// velocity of each column, in cells per unit time.
fn projected_flow(u: &VectorField3, pose: &CameraPose) -> Result<(Vec<f64>, Vec<f64>)> {
    let cam = view_align_vector(u, pose)?;
    let dims = cam.dims();
    let plane = dims.nx * dims.ny;
    let mut fx = vec![0.0; plane];
    let mut fy = vec![0.0; plane];
    for k in 0..dims.nz {
        for c in 0..plane {
            fx[c] += cam.comp(0)[c + k * plane];
            fy[c] += cam.comp(1)[c + k * plane];
        }
    }
    let s = 1.0 / (dims.nz as f64 * u.spacing());
    fx.iter_mut().chain(fy.iter_mut()).for_each(|v| *v *= s);
    Ok((fx, fy))
}

/// Mean squared difference between each rendering and its predecessor
/// warped by the projected simulation velocity, averaged over frame pairs and
/// poses. `frames[t][p]` is frame `t` rendered from `poses[p]`.
pub fn temporal_flicker_metric(frames: &[Vec<GrayImage>], seq: &VelocitySequence, poses: &[CameraPose]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::invalid("flicker metric needs at least two frames"));
    }
    if seq.len() + 1 < frames.len() {
        return Err(Error::LengthMismatch {
            what: "rendered frames vs velocity frames",
            left: frames.len(),
            right: seq.len(),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..frames.len() - 1 {
        if frames[t].len() != poses.len() || frames[t + 1].len() != poses.len() {
            return Err(Error::invalid(format!("frame {t} does not hold one render per pose")));
        }
        let u = &seq.frames()[t];
        for (p, pose) in poses.iter().enumerate() {
            let (a, b) = (&frames[t][p], &frames[t + 1][p]);
            let (h, w) = (a.height(), a.width());
            if (b.height(), b.width()) != (h, w) || (u.dims().ny, u.dims().nx) != (h, w) {
                return Err(Error::invalid("render size does not match the velocity grid face"));
            }
            let (fx, fy) = projected_flow(u, pose)?;
            let mut err = 0.0;
            for r in 0..h {
                let y = h - 1 - r;
                for c in 0..w {
                    let i = c + w * y;
                    // Backtrace; image rows grow downward while y grows upward.
                    let warped = a.sample(r as f64 + seq.dt() * fy[i], c as f64 - seq.dt() * fx[i]);
                    let d = b.get(r, c) - warped;
                    err += d * d;
                }
            }
            total += err / (h * w) as f64;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
