use std::path::PathBuf;

use clap::Args;
use plume::StylizeConfig;

use crate::CliError;

macro_rules! config_flags {
    ($($(#[doc = $doc:literal])* $field:ident: $ty:ty),* $(,)?) => {
        /// Stylization parameters. Precedence: defaults, then `--config`, then
        /// the individual flags, then `--set`.
        #[derive(Args, Debug, Default, Clone)]
        pub struct ConfigFlags {
            /// File of `key = value` lines
            #[arg(long, value_name = "FILE")]
            pub config: Option<PathBuf>,
            /// Override any config key, repeatable
            #[arg(long = "set", value_name = "KEY=VALUE")]
            pub set: Vec<String>,
            $(
                $(#[doc = $doc])*
                #[arg(long, help_heading = "Config")]
                pub $field: Option<$ty>,
            )*
        }

        impl ConfigFlags {
            pub fn resolve(&self) -> Result<StylizeConfig, CliError> {
                let mut cfg = StylizeConfig::default();
                if let Some(path) = &self.config {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                    cfg.apply_text(&text)?;
                }
                $(
                    if let Some(v) = &self.$field {
                        cfg.set(stringify!($field), &v.to_string())?;
                    }
                )*
                for kv in &self.set {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| CliError::Input(format!("--set expects KEY=VALUE, got `{kv}`")))?;
                    cfg.set(k, v)?;
                }
                cfg.validate()?;
                Ok(cfg)
            }
        }
    };
}

config_flags! {
    /// Irrotational share of the velocity, 0 = incompressible
    lambda: f64,
    /// Step on the normalized potential gradients
    eta: f64,
    iters_per_scale: usize,
    scales: usize,
    scale_factor: f64,
    lap_levels: usize,
    views_per_frame: usize,
    /// Elevation half-range, degrees
    range1: f64,
    /// Azimuth half-range, degrees
    range2: f64,
    theta1: f64,
    theta2: f64,
    view_min_dist: f64,
    /// Absorption factor of the renderer
    gamma: f64,
    alpha: f64,
    beta: f64,
    /// Comma-separated layer names
    style_layers: String,
    /// Comma-separated layer names
    content_layers: String,
    /// Blending window half-size
    window: usize,
    /// gaussian | uniform
    omega: String,
    /// velocity | gradient
    blend: String,
    sweeps: usize,
    dt: f64,
    mask_threshold: f64,
    /// Mask blur in cells
    mask_blur: f64,
    seed: u64,
}
