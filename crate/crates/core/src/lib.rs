//! Volumetric smoke stylization by optimizing a transporting velocity field.
//!
//! The velocity is built from an irrotational potential and an incompressible
//! vector potential, advects the input density, and is driven by feature
//! losses measured on differentiable renderings of the result.

mod atomic;
pub mod error;
pub mod features;
pub mod fields;
pub mod gradcheck;
pub mod render;
pub mod stylize;
pub mod synth;
pub mod transport;

pub use atomic::write_atomic;
pub use error::{Error, Result};
pub use fields::{Dims, ScalarField3, SoftMask, VectorField3};
pub use render::{CameraPose, GrayImage, RenderConfig};
pub use stylize::{BlendMode, Objective, StylizeConfig};
pub use transport::VelocitySequence;
