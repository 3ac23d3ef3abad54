use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::transport::OmegaShape;

/// How neighbouring frames are merged in a sequence run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendMode {
    /// Stylize frames independently, then blend aligned velocities.
    Velocity,
    /// Blend aligned potential gradients at every iteration.
    Gradient,
}

impl FromStr for BlendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "velocity" => Ok(BlendMode::Velocity),
            "gradient" => Ok(BlendMode::Gradient),
            other => Err(Error::invalid(format!("unknown blend mode `{other}`"))),
        }
    }
}

impl Display for BlendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BlendMode::Velocity => "velocity",
            BlendMode::Gradient => "gradient",
        })
    }
}

/// Every user-facing parameter of a stylization run.
#[derive(Debug, Clone, PartialEq)]
pub struct StylizeConfig {
    /// Weight of the irrotational part; 0 gives an incompressible velocity.
    pub lambda: f64,
    /// Step applied to normalized potential gradients.
    pub eta: f64,
    pub iters_per_scale: usize,
    pub scales: usize,
    pub scale_factor: f64,
    pub lap_levels: usize,
    pub views_per_frame: usize,
    /// Half-range of elevation around `theta1`, degrees.
    pub range1: f64,
    /// Half-range of azimuth around `theta2`, degrees.
    pub range2: f64,
    pub theta1: f64,
    pub theta2: f64,
    /// Requested separation of sampled views, degrees.
    pub view_min_dist: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub style_layers: Vec<String>,
    pub content_layers: Vec<String>,
    /// Blending window half-size.
    pub window: usize,
    pub omega: OmegaShape,
    pub blend: BlendMode,
    /// Sequence sweeps; each extra sweep warm-starts from blended potentials.
    pub sweeps: usize,
    /// Time step of the stylization transport.
    pub dt: f64,
    pub mask_threshold: f64,
    /// Gaussian blur of the mask, in cells.
    pub mask_blur: f64,
    pub seed: u64,
}

impl Default for StylizeConfig {
    fn default() -> Self {
        StylizeConfig {
            lambda: 0.0,
            eta: 0.003,
            iters_per_scale: 15,
            scales: 2,
            scale_factor: 1.8,
            lap_levels: 3,
            views_per_frame: 9,
            range1: 5.0,
            range2: 10.0,
            theta1: 0.0,
            theta2: 0.0,
            view_min_dist: 3.0,
            gamma: 0.1,
            alpha: 1.0,
            beta: 1.0,
            style_layers: vec!["L1".into(), "L2".into(), "L3".into()],
            content_layers: vec!["L2".into()],
            window: 4,
            omega: OmegaShape::Gaussian,
            blend: BlendMode::Velocity,
            sweeps: 1,
            dt: 1.0,
            mask_threshold: 0.01,
            mask_blur: 2.0,
            seed: 0,
        }
    }
}

/// Keys accepted by [`StylizeConfig::set`], in declaration order.
pub const CONFIG_KEYS: &[&str] = &[
    "lambda",
    "eta",
    "iters_per_scale",
    "scales",
    "scale_factor",
    "lap_levels",
    "views_per_frame",
    "range1",
    "range2",
    "theta1",
    "theta2",
    "view_min_dist",
    "gamma",
    "alpha",
    "beta",
    "style_layers",
    "content_layers",
    "window",
    "omega",
    "blend",
    "sweeps",
    "dt",
    "mask_threshold",
    "mask_blur",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::invalid(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

impl StylizeConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "lambda" => self.lambda = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "iters_per_scale" => self.iters_per_scale = parse(key, value)?,
            "scales" => self.scales = parse(key, value)?,
            "scale_factor" => self.scale_factor = parse(key, value)?,
            "lap_levels" => self.lap_levels = parse(key, value)?,
            "views_per_frame" => self.views_per_frame = parse(key, value)?,
            "range1" => self.range1 = parse(key, value)?,
            "range2" => self.range2 = parse(key, value)?,
            "theta1" => self.theta1 = parse(key, value)?,
            "theta2" => self.theta2 = parse(key, value)?,
            "view_min_dist" => self.view_min_dist = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "style_layers" => self.style_layers = parse_list(value),
            "content_layers" => self.content_layers = parse_list(value),
            "window" => self.window = parse(key, value)?,
            "omega" => self.omega = parse(key, value)?,
            "blend" => self.blend = parse(key, value)?,
            "sweeps" => self.sweeps = parse(key, value)?,
            "dt" => self.dt = parse(key, value)?,
            "mask_threshold" => self.mask_threshold = parse(key, value)?,
            "mask_blur" => self.mask_blur = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::invalid(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes to the `key = value` form read by [`Self::apply_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            s.push_str(&format!("{key} = {}\n", self.value_of(key)));
        }
        s
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "lambda" => self.lambda.to_string(),
            "eta" => self.eta.to_string(),
            "iters_per_scale" => self.iters_per_scale.to_string(),
            "scales" => self.scales.to_string(),
            "scale_factor" => self.scale_factor.to_string(),
            "lap_levels" => self.lap_levels.to_string(),
            "views_per_frame" => self.views_per_frame.to_string(),
            "range1" => self.range1.to_string(),
            "range2" => self.range2.to_string(),
            "theta1" => self.theta1.to_string(),
            "theta2" => self.theta2.to_string(),
            "view_min_dist" => self.view_min_dist.to_string(),
            "gamma" => self.gamma.to_string(),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "style_layers" => self.style_layers.join(","),
            "content_layers" => self.content_layers.join(","),
            "window" => self.window.to_string(),
            "omega" => self.omega.to_string(),
            "blend" => self.blend.to_string(),
            "sweeps" => self.sweeps.to_string(),
            "dt" => self.dt.to_string(),
            "mask_threshold" => self.mask_threshold.to_string(),
            "mask_blur" => self.mask_blur.to_string(),
            "seed" => self.seed.to_string(),
            _ => unreachable!("key list and match arms agree"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        // eta = 0 is accepted: it turns a run into an exact identity.
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return fail(format!("eta must be >= 0, got {}", self.eta));
        }
        if !(self.scale_factor > 1.0) {
            return fail(format!("scale_factor must exceed 1, got {}", self.scale_factor));
        }
        for (name, v) in [
            ("iters_per_scale", self.iters_per_scale),
            ("scales", self.scales),
            ("lap_levels", self.lap_levels),
            ("views_per_frame", self.views_per_frame),
            ("sweeps", self.sweeps),
        ] {
            if v == 0 {
                return fail(format!("{name} must be >= 1"));
            }
        }
        if !(self.range1 > 0.0 && self.range2 > 0.0) {
            return fail(format!("view ranges must be positive, got ({}, {})", self.range1, self.range2));
        }
        if !(self.gamma >= 0.0 && self.alpha >= 0.0 && self.beta >= 0.0) || self.alpha + self.beta == 0.0 {
            return fail("gamma, alpha and beta must be >= 0 with alpha + beta > 0".into());
        }
        if !(self.dt > 0.0 && self.mask_threshold > 0.0 && self.mask_blur >= 0.0 && self.view_min_dist >= 0.0) {
            return fail("dt and mask_threshold must be positive; mask_blur and view_min_dist non-negative".into());
        }
        Ok(())
    }
}
