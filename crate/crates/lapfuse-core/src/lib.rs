//! Core numerics for guided Laplacian-pyramid image fusion.
//!
//! The crate is split along the pipeline:
//!
//! - [`image`]: planar float images, YCbCr color split, reflection padding
//! - [`pyramid`]: the fixed fusion kernel — exactly invertible Laplacian
//!   pyramids plus the per-level linear blend driven by a guidance map
//! - [`net`]: the guidance network, a small convolutional encoder–decoder
//!   with hand-rolled forward/backward passes
//! - [`loss`]: the unsupervised training objective and its analytic gradients
//! - [`fuse`]: end-to-end composition (guided and direct modes) including the
//!   backward pass used for training
//! - [`train`]: decoupled-weight-decay Adam steps over the network parameters
//! - [`metrics`]: fusion quality metrics (EN, MI, VIF, Qabf, SSIM) and the
//!   composite reward
//!
//! Everything here is pure computation on `alloc` buffers; file formats,
//! timing, and parallel drivers live in the companion `lapfuse-tools` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod fuse;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod pyramid;
pub mod train;

pub use error::CoreError;
pub use fuse::{FuseMode, FuseSettings, FusedCore, GuidanceOverride};
pub use image::{PadRecord, Plane, PlanarImage, SourcePair, YCbCrSplit};
pub use loss::{LossBreakdown, LossWeights};
pub use metrics::MetricReport;
pub use net::{GuidanceNet, NetConfig};
pub use pyramid::{GuidanceMap, GuidancePyramid, LaplacianPyramid};

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, CoreError>;
