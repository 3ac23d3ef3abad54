use std::path::Path;
use std::str::FromStr;

use super::{advect_sl, Transportable};
use crate::error::{Error, Result};
use crate::fields::{vf32, VectorField3};

/// Simulation velocities `u_0 .. u_n`, one per frame transition.
#[derive(Debug, Clone)]
pub struct VelocitySequence {
    frames: Vec<VectorField3>,
    dt: f64,
}

impl VelocitySequence {
    pub fn new(frames: Vec<VectorField3>, dt: f64) -> Result<Self> {
        if let Some(first) = frames.first() {
            for f in &frames[1..] {
                first.dims().ensure_same(f.dims(), "velocity sequence frames")?;
                if f.spacing() != first.spacing() {
                    return Err(Error::invalid("velocity sequence frames differ in spacing"));
                }
            }
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        Ok(VelocitySequence { frames, dt })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn frames(&self) -> &[VectorField3] {
        &self.frames
    }

    pub fn get(&self, i: usize) -> Option<&VectorField3> {
        self.frames.get(i)
    }

    /// Loads `frame_%04d.vf32` files of `dir` in lexicographic order.
    pub fn read_dir(dir: impl AsRef<Path>, dt: f64) -> Result<Self> {
        let frames = vf32::list_frames(dir)?
            .into_iter()
            .map(|p| vf32::read(&p)?.into_vector())
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, dt)
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, f) in self.frames.iter().enumerate() {
            vf32::write_vector(dir.join(vf32::frame_file_name(i)), f)?;
        }
        Ok(())
    }
}

/// Carries a field defined at frame `i` to frame `j` by chaining single
/// semi-Lagrangian steps along the simulation velocities (negated when
/// going backwards in time).
pub fn align_velocity<F: Transportable + Clone>(field: &F, seq: &VelocitySequence, i: usize, j: usize) -> Result<F> {
    let limit = seq.len();
    for (what, idx) in [("source frame", i), ("target frame", j)] {
        if idx > limit {
            return Err(Error::OutOfRange { what, index: idx, limit });
        }
    }
    let mut out = field.clone();
    if i < j {
        for step in i..j {
            out = advect_sl(&out, &seq.frames[step], seq.dt)?.0;
        }
    } else if i > j {
        for step in (j..i).rev() {
            out = advect_sl(&out, &seq.frames[step].scaled(-1.0), seq.dt)?.0;
        }
    }
    Ok(out)
}

/// `sum_i omega_i * aligned_i`.
pub fn blend_window(aligned: &[VectorField3], omega: &[f64]) -> Result<VectorField3> {
    if aligned.len() != omega.len() {
        return Err(Error::LengthMismatch {
            what: "blend window fields vs weights",
            left: aligned.len(),
            right: omega.len(),
        });
    }
    let Some(first) = aligned.first() else {
        return Err(Error::invalid("blend window is empty"));
    };
    if let Some(w) = omega.iter().find(|w| !w.is_finite()) {
        return Err(Error::invalid(format!("non-finite blend weight {w}")));
    }
    let mut out = first.scaled(omega[0]);
    for (f, &w) in aligned.iter().zip(omega).skip(1) {
        out.add_scaled(w, f)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaShape {
    /// Gaussian over the offset with standard deviation `w / 2`.
    Gaussian,
    Uniform,
}

impl FromStr for OmegaShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(OmegaShape::Gaussian),
            "uniform" => Ok(OmegaShape::Uniform),
            other => Err(Error::invalid(format!("unknown omega shape `{other}`"))),
        }
    }
}

impl std::fmt::Display for OmegaShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OmegaShape::Gaussian => "gaussian",
            OmegaShape::Uniform => "uniform",
        })
    }
}

/// Raw (unnormalized) weight of frame offset `k` in a half-window of `w`.
fn raw_weight(k: isize, w: usize, shape: OmegaShape) -> f64 {
    match shape {
        OmegaShape::Uniform => 1.0,
        OmegaShape::Gaussian if w == 0 => 1.0,
        OmegaShape::Gaussian => {
            let sigma = w as f64 / 2.0;
            (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()
        }
    }
}

/// Normalized weights for offsets `-w ..= w`.
pub fn window_weights(w: usize, shape: OmegaShape) -> Vec<f64> {
    let w_i = w as isize;
    let raw: Vec<f64> = (-w_i..=w_i).map(|k| raw_weight(k, w, shape)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Frames in the window around `t` clipped to `0 ..= last`, with their
/// renormalized weights.
pub(crate) fn clamped_window(t: usize, w: usize, last: usize, shape: OmegaShape) -> Vec<(usize, f64)> {
    let lo = t.saturating_sub(w);
    let hi = (t + w).min(last);
    let raw: Vec<(usize, f64)> = (lo..=hi)
        .map(|i| (i, raw_weight(i as isize - t as isize, w, shape)))
        .collect();
    let s: f64 = raw.iter().map(|(_, v)| v).sum();
    raw.into_iter().map(|(i, v)| (i, v / s)).collect()
}
