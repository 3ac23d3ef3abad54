//! Optimization driver: multi-view single-frame stylization, the
//! coarse-to-fine loop, and time-coherent sequence stylization.

mod config;
mod pyramid;
mod sequence;

pub use config::{BlendMode, StylizeConfig, CONFIG_KEYS};
pub use pyramid::{lap_normalize, lap_normalize_vector};
pub use sequence::{
    blend_sequence, stylize_frames, stylize_sequence, temporal_flicker_metric, SequenceResult,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{combined_loss, ContentParams, FeatureNetwork, LossWeights, StyleParams};
use crate::fields::{
    compose_velocity, compose_velocity_adjoint, resample_to, resample_vector_to, scaled_dims, soft_mask_from_density,
    Dims, ResampleMode, ScalarField3, SoftMask, VectorField3,
};
use crate::render::{poisson_sample_views, render, render_adjoint, view_align, CameraPose, GrayImage, RenderConfig};
use crate::transport::{advect_adjoint, advect_maccormack, advect_sl};

/// Network and targets shared by every frame of a run.
#[derive(Debug, Clone)]
pub struct Objective {
    pub net: FeatureNetwork,
    pub style: StyleParams,
    /// Content image, resized to each scale's render size.
    pub content: Option<GrayImage>,
    pub content_layers: Vec<String>,
    pub weights: LossWeights,
}

impl Objective {
    pub fn new(net: FeatureNetwork, style: Option<&GrayImage>, content: Option<GrayImage>, cfg: &StylizeConfig) -> Result<Self> {
        let style = match style {
            Some(img) if cfg.beta > 0.0 => StyleParams::from_image(&net, img, &cfg.style_layers)?,
            _ => StyleParams::none(),
        };
        if cfg.alpha > 0.0 {
            for name in &cfg.content_layers {
                net.layer_index(name)?;
            }
        }
        Ok(Objective {
            net,
            style,
            content,
            content_layers: cfg.content_layers.clone(),
            weights: LossWeights::new(cfg.alpha, cfg.beta)?,
        })
    }

    /// Content and style targets for renders of `h x w` pixels.
    pub fn targets(&self, h: usize, w: usize) -> Result<LevelTargets> {
        let content = match &self.content {
            Some(img) if self.weights.alpha > 0.0 && !self.content_layers.is_empty() => {
                ContentParams::from_image(&self.net, &img.resize(h, w), &self.content_layers)?
            }
            _ => ContentParams::none(),
        };
        Ok(LevelTargets {
            content,
            style: self.style.for_size(&self.net, h, w)?,
        })
    }
}

/// Loss targets matched to one render size.
#[derive(Debug, Clone)]
pub struct LevelTargets {
    pub content: ContentParams,
    pub style: StyleParams,
}

/// Optimization variables of one frame at the current scale.
#[derive(Debug, Clone)]
pub struct FrameState {
    pub t: usize,
    pub phi: ScalarField3,
    pub psi: VectorField3,
    pub mask: SoftMask,
    pub look_at: [f64; 3],
}

impl FrameState {
    /// Zero potentials, mask and look-at point derived from `d`.
    pub fn new(t: usize, d: &ScalarField3, cfg: &StylizeConfig) -> Result<Self> {
        Ok(FrameState {
            t,
            phi: ScalarField3::zeros(d.dims(), d.spacing()),
            psi: VectorField3::zeros(d.dims(), d.spacing()),
            mask: soft_mask_from_density(d, cfg.mask_threshold, cfg.mask_blur)?,
            look_at: d.centroid(),
        })
    }

    /// Replaces the potentials, resampling them onto this state's grid.
    pub fn with_potentials(mut self, phi: &ScalarField3, psi: &VectorField3) -> Result<Self> {
        let dims = self.phi.dims();
        let h = self.phi.spacing();
        self.phi = respace(resample_to(phi, dims, ResampleMode::Tricubic)?, h)?;
        self.psi = respace_vec(resample_vector_to(psi, dims, ResampleMode::Tricubic)?, h)?;
        Ok(self)
    }

    pub fn velocity(&self, lambda: f64) -> Result<VectorField3> {
        compose_velocity(&self.phi, &self.psi, lambda, &self.mask)
    }
}

fn respace(f: ScalarField3, h: f64) -> Result<ScalarField3> {
    let dims = f.dims();
    ScalarField3::from_vec(dims, h, f.into_vec())
}

fn respace_vec(f: VectorField3, h: f64) -> Result<VectorField3> {
    let dims = f.dims();
    let [x, y, z] = f.into_components();
    VectorField3::from_vecs(dims, h, [x.into_vec(), y.into_vec(), z.into_vec()])
}

/// Potential gradients of one iteration together with what produced them.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub phi: ScalarField3,
    pub psi: VectorField3,
    /// Sum of the per-view combined losses.
    pub loss: f64,
    pub velocity: VectorField3,
    /// `d` transported by `velocity` (semi-Lagrangian).
    pub density: ScalarField3,
}

/// Mixes run seed, scale and iteration into one view-sampling seed. Frames
/// share view samples so identical inputs stylize identically.
pub fn view_seed(seed: u64, scale: usize, iter: usize) -> u64 {
    let mut z = seed ^ (scale as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ (iter as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Poisson-sampled camera poses around the configured view, aimed at `look_at`.
pub fn sample_views(cfg: &StylizeConfig, look_at: [f64; 3], seed: u64) -> Vec<CameraPose> {
    let center = CameraPose::new(cfg.theta1, cfg.theta2).looking_at(look_at);
    poisson_sample_views(&center, cfg.range1, cfg.range2, cfg.views_per_frame, cfg.view_min_dist, seed).poses
}

fn render_config(cfg: &StylizeConfig) -> RenderConfig {
    RenderConfig::new(cfg.gamma)
}

/// Loss of `d` seen from `views`, and its gradient with respect to `d`.
/// Views are evaluated concurrently and summed in view order.
pub fn density_loss_gradient(
    d: &ScalarField3,
    obj: &Objective,
    targets: &LevelTargets,
    cfg: &StylizeConfig,
    views: &[CameraPose],
) -> Result<(f64, ScalarField3)> {
    let rcfg = render_config(cfg);
    let per_view = views
        .par_iter()
        .map(|pose| -> Result<(f64, ScalarField3)> {
            let (aligned, tape) = view_align(d, pose)?;
            let img = render(&aligned, &rcfg)?;
            let (loss, gimg) = combined_loss(&obj.net, &img, &targets.content, &targets.style, &obj.weights)?;
            Ok((loss, render_adjoint(&tape, &aligned, &rcfg, &gimg)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut grad = ScalarField3::zeros(d.dims(), d.spacing());
    for (l, g) in per_view {
        loss += l;
        grad.add_scaled(1.0, &g)?;
    }
    Ok((loss, grad))
}

/// Sum of combined losses of `d` over `views`.
pub fn evaluate_loss(d: &ScalarField3, obj: &Objective, cfg: &StylizeConfig, views: &[CameraPose]) -> Result<f64> {
    let dims = d.dims();
    let t = obj.targets(dims.ny, dims.nx)?;
    let rcfg = render_config(cfg);
    let losses = views
        .par_iter()
        .map(|pose| {
            let (aligned, _) = view_align(d, pose)?;
            let img = render(&aligned, &rcfg)?;
            Ok(combined_loss(&obj.net, &img, &t.content, &t.style, &obj.weights)?.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum())
}

/// Gradients of the multi-view loss of `advect_sl(d, v)` with respect to the
/// potentials, where `v` is composed from `state`.
pub fn single_frame_gradients(
    d: &ScalarField3,
    state: &FrameState,
    obj: &Objective,
    targets: &LevelTargets,
    cfg: &StylizeConfig,
    views: &[CameraPose],
) -> Result<Gradients> {
    d.dims().ensure_same(state.phi.dims(), "density vs frame state")?;
    let v = state.velocity(cfg.lambda)?;
    let (moved, tape) = advect_sl(d, &v, cfg.dt)?;
    let (loss, gd) = density_loss_gradient(&moved, obj, targets, cfg, views)?;
    let (_, gv) = advect_adjoint(&tape, d, &v, cfg.dt, &gd)?;
    let (phi, psi) = compose_velocity_adjoint(&gv, cfg.lambda, &state.mask)?;
    Ok(Gradients {
        phi,
        psi,
        loss,
        velocity: v,
        density: moved,
    })
}

/// Normalized descent step `x -= eta * lap_normalize(g)` on both potentials.
pub fn step_potentials(state: &mut FrameState, gphi: &ScalarField3, gpsi: &VectorField3, cfg: &StylizeConfig) -> Result<()> {
    let nphi = lap_normalize(gphi, cfg.lap_levels)?;
    let npsi = lap_normalize_vector(gpsi, cfg.lap_levels)?;
    state.phi.add_scaled(-cfg.eta, &nphi)?;
    state.psi.add_scaled(-cfg.eta, &npsi)?;
    Ok(())
}

/// Passed to observers after every iteration, before the update.
#[derive(Debug)]
pub struct IterationReport<'a> {
    pub frame: usize,
    /// Pyramid level, 0 being the full resolution.
    pub scale: usize,
    pub iter: usize,
    pub loss: f64,
    pub velocity: &'a VectorField3,
    pub density: &'a ScalarField3,
}

pub type Observer<'a> = &'a (dyn Fn(&IterationReport<'_>) + Sync);

/// Outcome of stylizing one frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub phi: ScalarField3,
    pub psi: VectorField3,
    pub mask: SoftMask,
    /// Final composed stylization velocity.
    pub velocity: VectorField3,
    /// `advect_maccormack(d, velocity)`.
    pub density: ScalarField3,
    /// `(scale, iter, loss)` per iteration.
    pub losses: Vec<(usize, usize, f64)>,
    /// Full-resolution loss on [`eval_views`] at the starting potentials, then after each
    /// scale (coarsest first), with the MacCormack-transported density.
    pub checkpoints: Vec<f64>,
}

/// Grid dims of pyramid level `level` for a full-resolution grid `dims`.
pub fn level_dims(dims: Dims, cfg: &StylizeConfig, level: usize) -> Dims {
    if level == 0 {
        dims
    } else {
        scaled_dims(dims, cfg.scale_factor, level as u32)
    }
}

fn level_density(d: &ScalarField3, cfg: &StylizeConfig, level: usize) -> Result<ScalarField3> {
    let dims = level_dims(d.dims(), cfg, level);
    resample_to(d, dims, ResampleMode::Trilinear)
}

fn run_iterations(
    d: &ScalarField3,
    state: &mut FrameState,
    obj: &Objective,
    cfg: &StylizeConfig,
    level: usize,
    observer: Option<Observer<'_>>,
    losses: &mut Vec<(usize, usize, f64)>,
) -> Result<()> {
    let dims = d.dims();
    let targets = obj.targets(dims.ny, dims.nx)?;
    for iter in 0..cfg.iters_per_scale {
        let views = sample_views(cfg, state.look_at, view_seed(cfg.seed, level, iter));
        let g = single_frame_gradients(d, state, obj, &targets, cfg, &views)?;
        if let Some(obs) = observer {
            obs(&IterationReport {
                frame: state.t,
                scale: level,
                iter,
                loss: g.loss,
                velocity: &g.velocity,
                density: &g.density,
            });
        }
        losses.push((level, iter, g.loss));
        step_potentials(state, &g.phi, &g.psi, cfg)?;
    }
    Ok(())
}

/// Fixed views used to compare losses across scales and runs.
pub fn eval_views(cfg: &StylizeConfig, d: &ScalarField3) -> Vec<CameraPose> {
    sample_views(cfg, d.centroid(), view_seed(cfg.seed, usize::MAX, 0))
}

/// Fixed cameras aimed at the domain center, for renders compared across frames.
pub fn flicker_views(cfg: &StylizeConfig, d: &ScalarField3) -> Vec<CameraPose> {
    sample_views(cfg, d.center(), view_seed(cfg.seed, usize::MAX, 1))
}

/// Full-resolution loss of `d` transported by the given potentials.
fn checkpoint(d: &ScalarField3, phi: &ScalarField3, psi: &VectorField3, obj: &Objective, cfg: &StylizeConfig) -> Result<f64> {
    let state = FrameState::new(0, d, cfg)?.with_potentials(phi, psi)?;
    let moved = advect_maccormack(d, &state.velocity(cfg.lambda)?, cfg.dt)?;
    evaluate_loss(&moved, obj, cfg, &eval_views(cfg, d))
}

fn finish(
    d: &ScalarField3,
    state: FrameState,
    obj: &Objective,
    cfg: &StylizeConfig,
    losses: Vec<(usize, usize, f64)>,
    mut checkpoints: Vec<f64>,
) -> Result<FrameResult> {
    let velocity = state.velocity(cfg.lambda)?;
    let density = advect_maccormack(d, &velocity, cfg.dt)?;
    checkpoints.push(evaluate_loss(&density, obj, cfg, &eval_views(cfg, d))?);
    Ok(FrameResult {
        phi: state.phi,
        psi: state.psi,
        mask: state.mask,
        velocity,
        density,
        losses,
        checkpoints,
    })
}

/// Coarse-to-fine stylization of one density. Each finer level restarts from
/// the original density with the upsampled potentials.
pub fn stylize_frame(d: &ScalarField3, obj: &Objective, cfg: &StylizeConfig, frame: usize, observer: Option<Observer<'_>>) -> Result<FrameResult> {
    cfg.validate()?;
    d.ensure_nonnegative()?;
    let mut losses = Vec::new();
    let mut checkpoints = vec![evaluate_loss(d, obj, cfg, &eval_views(cfg, d))?];
    let mut carried: Option<(ScalarField3, VectorField3)> = None;
    let mut last = None;
    for level in (0..cfg.scales).rev() {
        let ds = level_density(d, cfg, level)?;
        let mut state = FrameState::new(frame, &ds, cfg)?;
        if let Some((phi, psi)) = &carried {
            state = state.with_potentials(phi, psi)?;
        }
        run_iterations(&ds, &mut state, obj, cfg, level, observer, &mut losses)?;
        if level > 0 {
            checkpoints.push(checkpoint(d, &state.phi, &state.psi, obj, cfg)?);
        }
        carried = Some((state.phi.clone(), state.psi.clone()));
        last = Some(state);
    }
    finish(d, last.expect("scales >= 1"), obj, cfg, losses, checkpoints)
}

/// Full-resolution iterations only, starting from the given potentials.
pub fn stylize_frame_warm(
    d: &ScalarField3,
    phi: &ScalarField3,
    psi: &VectorField3,
    obj: &Objective,
    cfg: &StylizeConfig,
    frame: usize,
    observer: Option<Observer<'_>>,
) -> Result<FrameResult> {
    cfg.validate()?;
    d.ensure_nonnegative()?;
    let mut state = FrameState::new(frame, d, cfg)?.with_potentials(phi, psi)?;
    let mut losses = Vec::new();
    let checkpoints = vec![checkpoint(d, phi, psi, obj, cfg)?];
    run_iterations(d, &mut state, obj, cfg, 0, observer, &mut losses)?;
    finish(d, state, obj, cfg, losses, checkpoints)
}

pub(crate) fn ensure_same_dims(fields: &[ScalarField3], what: &'static str) -> Result<Dims> {
    let first = fields.first().ok_or_else(|| Error::invalid(format!("{what}: no frames")))?;
    for f in fields {
        first.dims().ensure_same(f.dims(), what)?;
    }
    Ok(first.dims())
}
