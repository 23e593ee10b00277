//! Latent-space face reenactment over style-based generators.
//!
//! A reference image is projected to a W+ code, then animated by a driving
//! video: the global rigid motion is replayed through the generator's input
//! transform, the head pose is matched on the coarse layers, and local
//! motion is transferred through a sparse set of S-space channels tied to
//! facial parts.

pub mod blend;
pub mod container;
pub mod error;
pub mod generator;
pub mod image;
pub mod latent;
pub mod metrics;
pub mod mining;
pub mod perception;
pub mod pipeline;
pub mod pose;
pub mod rigid;

pub use error::{invalid, Error, Result};
