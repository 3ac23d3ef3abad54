//! Central finite-difference checks of every hand-written adjoint, on small
//! random instances synthesized from a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{
    backward, combined_loss, content_loss, forward, init_random, style_loss, ContentParams, FeatureNetwork,
    LossWeights, MiniNetSpec, StyleParams,
};
use crate::fields::{compose_velocity, compose_velocity_adjoint, Dims, ScalarField3, SoftMask, VectorField3};
use crate::render::{render, render_adjoint, view_align, CameraPose, GrayImage, RenderConfig};
use crate::stylize::{single_frame_gradients, FrameState, Objective, StylizeConfig};
use crate::synth;
use crate::transport::{advect_adjoint, advect_sl};

/// Component names, in the order they are checked.
pub const COMPONENTS: &[&str] = &[
    "render_adjoint",
    "advect_adjoint",
    "compose_adjoint",
    "content_loss",
    "style_loss",
    "combined_loss",
    "end_to_end",
];

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

const EPS: f64 = 1e-6;
const PROBES: usize = 12;
/// Relative mismatch of the one-sided differences that marks a kink.
const KINK: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentCheck {
    pub name: &'static str,
    /// `max |fd - analytic| / max |analytic|` over the probed entries.
    pub max_rel_error: f64,
    pub probes: usize,
    /// Probes redrawn because they straddled a kink.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub checks: Vec<ComponentCheck>,
}

impl GradcheckReport {
    pub fn failing(&self, tolerance: f64) -> Vec<&ComponentCheck> {
        self.checks.iter().filter(|c| !(c.max_rel_error < tolerance)).collect()
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.failing(tolerance).is_empty()
    }

    pub fn max_error(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

/// Runs every component check. `corrupt` names a component whose analytic
/// gradient is deliberately scaled by 1.01 before comparison (fault injection).
pub fn run_gradcheck(seed: u64, corrupt: Option<&str>) -> Result<GradcheckReport> {
    if let Some(name) = corrupt {
        if !COMPONENTS.contains(&name) {
            return Err(Error::invalid(format!(
                "unknown gradcheck component `{name}` (expected one of {})",
                COMPONENTS.join(", ")
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::with_capacity(COMPONENTS.len());
    for &name in COMPONENTS {
        let sub = rng.random::<u64>();
        let mut case = match name {
            "render_adjoint" => render_case(sub)?,
            "advect_adjoint" => advect_case(sub)?,
            "compose_adjoint" => compose_case(sub)?,
            "content_loss" => network_case(sub, NetLoss::Content)?,
            "style_loss" => network_case(sub, NetLoss::Style)?,
            "combined_loss" => network_case(sub, NetLoss::Combined)?,
            "end_to_end" => end_to_end_case(sub)?,
            _ => unreachable!("component list and dispatch agree"),
        };
        if corrupt == Some(name) {
            case.analytic.iter_mut().for_each(|g| *g *= 1.01);
        }
        let (err, probes, skipped) = compare(&case, sub)?;
        log::debug!("gradcheck {name}: max rel error {err:.3e} over {probes} probes, {skipped} at kinks");
        checks.push(ComponentCheck {
            name,
            max_rel_error: err,
            probes,
            skipped,
        });
    }
    Ok(GradcheckReport { seed, checks })
}

/// A flattened input, its analytic gradient and the scalar functional.
struct Case {
    x: Vec<f64>,
    analytic: Vec<f64>,
    #[allow(clippy::type_complexity)]
    eval: Box<dyn Fn(&[f64]) -> Result<f64>>,
}

/// Probes that straddle a ReLU or max-pool kink have one-sided differences
/// that disagree at first order; they are redrawn rather than compared.
fn compare(case: &Case, seed: u64) -> Result<(f64, usize, usize)> {
    let scale = case.analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if !(scale > 0.0) {
        return Err(Error::invalid("gradcheck instance has an all-zero gradient"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let argmax = case
        .analytic
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let f0 = (case.eval)(&case.x)?;
    let mut worst: f64 = 0.0;
    let mut x = case.x.clone();
    let (mut probes, mut skipped) = (0, 0);
    let mut next = Some(argmax);
    while probes <= PROBES && skipped < 4 * PROBES {
        let i = next.take().unwrap_or_else(|| rng.random_range(0..case.x.len()));
        let x0 = x[i];
        x[i] = x0 + EPS;
        let fp = (case.eval)(&x)?;
        x[i] = x0 - EPS;
        let fm = (case.eval)(&x)?;
        x[i] = x0;
        if ((fp - f0) - (f0 - fm)).abs() / EPS > KINK * scale {
            skipped += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * EPS);
        worst = worst.max((fd - case.analytic[i]).abs() / scale);
        probes += 1;
    }
    if probes == 0 {
        return Err(Error::invalid("every gradcheck probe straddled a kink"));
    }
    Ok((worst, probes, skipped))
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn render_case(seed: u64) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(6, 7, 8);
    let h = 0.8;
    let pose = CameraPose::new(rng.random_range(-20.0..20.0), rng.random_range(-30.0..30.0));
    let cfg = RenderConfig::new(0.7);
    let x = uniform(&mut rng, dims.len(), 0.05, 0.5);
    let w = uniform(&mut rng, dims.nx * dims.ny, -1.0, 1.0);
    let weights = GrayImage::from_vec(dims.ny, dims.nx, w.clone())?;
    let d = ScalarField3::from_vec(dims, h, x.clone())?;
    let (aligned, tape) = view_align(&d, &pose)?;
    let analytic = render_adjoint(&tape, &aligned, &cfg, &weights)?.into_vec();
    let eval = move |x: &[f64]| -> Result<f64> {
        let d = ScalarField3::from_vec(dims, h, x.to_vec())?;
        let img = render(&view_align(&d, &pose)?.0, &cfg)?;
        Ok(dot(img.data(), &w))
    };
    Ok(Case {
        x,
        analytic,
        eval: Box::new(eval),
    })
}

fn advect_case(seed: u64) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::cube(6);
    let (h, dt) = (1.0, 0.9);
    let n = dims.len();
    let f = uniform(&mut rng, n, -1.0, 1.0);
    let v: [Vec<f64>; 3] = [0; 3].map(|_| uniform(&mut rng, n, -1.5, 1.5));
    let w = uniform(&mut rng, n, -1.0, 1.0);
    let field = ScalarField3::from_vec(dims, h, f.clone())?;
    let vel = VectorField3::from_vecs(dims, h, v.clone())?;
    let (_, tape) = advect_sl(&field, &vel, dt)?;
    let out_grad = ScalarField3::from_vec(dims, h, w.clone())?;
    let (gf, gv) = advect_adjoint(&tape, &field, &vel, dt, &out_grad)?;
    let mut x = f;
    v.iter().for_each(|c| x.extend_from_slice(c));
    let mut analytic = gf.into_vec();
    (0..3).for_each(|a| analytic.extend_from_slice(gv.comp(a)));
    let eval = move |x: &[f64]| -> Result<f64> {
        let field = ScalarField3::from_vec(dims, h, x[..n].to_vec())?;
        let vel = VectorField3::from_vecs(dims, h, [1, 2, 3].map(|a| x[a * n..(a + 1) * n].to_vec()))?;
        Ok(dot(advect_sl(&field, &vel, dt)?.0.data(), &w))
    };
    Ok(Case {
        x,
        analytic,
        eval: Box::new(eval),
    })
}

fn compose_case(seed: u64) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(7, 6, 8);
    let h = 1.1;
    let n = dims.len();
    let lambda = 0.3;
    let mask = SoftMask::new(ScalarField3::from_vec(dims, h, uniform(&mut rng, n, 0.0, 1.0))?)?;
    let x = uniform(&mut rng, 4 * n, -1.0, 1.0);
    let w: [Vec<f64>; 3] = [0; 3].map(|_| uniform(&mut rng, n, -1.0, 1.0));
    let wv = VectorField3::from_vecs(dims, h, w.clone())?;
    let (gphi, gpsi) = compose_velocity_adjoint(&wv, lambda, &mask)?;
    let mut analytic = gphi.into_vec();
    (0..3).for_each(|a| analytic.extend_from_slice(gpsi.comp(a)));
    let eval = move |x: &[f64]| -> Result<f64> {
        let phi = ScalarField3::from_vec(dims, h, x[..n].to_vec())?;
        let psi = VectorField3::from_vecs(dims, h, [1, 2, 3].map(|a| x[a * n..(a + 1) * n].to_vec()))?;
        let v = compose_velocity(&phi, &psi, lambda, &mask)?;
        Ok((0..3).map(|a| dot(v.comp(a), &w[a])).sum())
    };
    Ok(Case {
        x,
        analytic,
        eval: Box::new(eval),
    })
}

#[derive(Clone, Copy)]
enum NetLoss {
    Content,
    Style,
    Combined,
}

fn small_net(seed: u64) -> Result<FeatureNetwork> {
    init_random(
        &MiniNetSpec {
            in_channels: 1,
            kernel: 3,
            channels: vec![4, 6, 8],
        },
        seed,
    )
}

fn network_case(seed: u64, which: NetLoss) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hh, ww) = (12, 12);
    let net = small_net(rng.random())?;
    let x = uniform(&mut rng, hh * ww, 0.0, 1.0);
    let other = GrayImage::from_vec(hh, ww, uniform(&mut rng, hh * ww, 0.0, 1.0))?;
    let style_src = GrayImage::from_vec(hh, ww, uniform(&mut rng, hh * ww, 0.0, 1.0))?;
    let pc = ContentParams::from_image(&net, &other, &["L2".to_string()])?;
    let layers: Vec<String> = ["L1", "L2", "L3"].map(String::from).to_vec();
    let ps = StyleParams::from_image(&net, &style_src, &layers)?;
    let weights = LossWeights::new(0.7, 1.3)?;
    let img = GrayImage::from_vec(hh, ww, x.clone())?;
    let loss_and_grad = move |img: &GrayImage| -> Result<(f64, GrayImage)> {
        match which {
            NetLoss::Combined => combined_loss(&net, img, &pc, &ps, &weights),
            NetLoss::Content | NetLoss::Style => {
                let acts = forward(&net, img)?;
                let (l, seeds) = match which {
                    NetLoss::Content => content_loss(&net, acts.outputs(), &pc)?,
                    _ => style_loss(&net, acts.outputs(), &ps)?,
                };
                Ok((l, backward(&net, &acts, &seeds)?))
            }
        }
    };
    let analytic = loss_and_grad(&img)?.1.data().to_vec();
    let eval = move |x: &[f64]| -> Result<f64> { Ok(loss_and_grad(&GrayImage::from_vec(hh, ww, x.to_vec())?)?.0) };
    Ok(Case {
        x,
        analytic,
        eval: Box::new(eval),
    })
}

fn end_to_end_case(seed: u64) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 8;
    let dims = Dims::cube(n);
    let cfg = StylizeConfig {
        lambda: 0.4,
        views_per_frame: 2,
        style_layers: vec!["L1".into(), "L2".into()],
        content_layers: vec![],
        alpha: 0.0,
        mask_blur: 1.0,
        seed: rng.random(),
        ..StylizeConfig::default()
    };
    let d = synth::gaussian_blob(dims, 1.0, [3.6, 4.0, 4.4], 1.8, 0.3);
    let style = synth::stripes_image(16, 16, 4.0, rng.random_range(0.0..90.0));
    let obj = Objective::new(small_net(rng.random())?, Some(&style), None, &cfg)?;
    let targets = obj.targets(n, n)?;
    let base = FrameState::new(0, &d, &cfg)?;
    let views = crate::stylize::sample_views(&cfg, base.look_at, cfg.seed);
    let len = dims.len();
    let x = uniform(&mut rng, 4 * len, -0.05, 0.05);
    let state_of = move |x: &[f64]| -> Result<FrameState> {
        let mut s = base.clone();
        s.phi = ScalarField3::from_vec(dims, 1.0, x[..len].to_vec())?;
        s.psi = VectorField3::from_vecs(dims, 1.0, [1, 2, 3].map(|a| x[a * len..(a + 1) * len].to_vec()))?;
        Ok(s)
    };
    let g = single_frame_gradients(&d, &state_of(&x)?, &obj, &targets, &cfg, &views)?;
    let mut analytic = g.phi.into_vec();
    (0..3).for_each(|a| analytic.extend_from_slice(g.psi.comp(a)));
    let eval = move |x: &[f64]| -> Result<f64> {
        Ok(single_frame_gradients(&d, &state_of(x)?, &obj, &targets, &cfg, &views)?.loss)
    };
    Ok(Case {
        x,
        analytic,
        eval: Box::new(eval),
    })
}
