//! Scene hiding inside gaussian-splat reconstructions.
//!
//! One optimization produces a cover scene that renders normally, together
//! with a keyed decoder that rewrites the splat attributes into one or more
//! hidden scenes when given the right passphrase. The crate also ships the
//! audit side: distribution-level divergence between carrier and clean
//! checkpoints, detectability probes, and pruning robustness.
//!
//! Everything numeric is generic over [`Real`] (f32 or f64). The concrete
//! aliases below pick the precision used by the trainer and the tools.

pub mod camera;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod gaussians;
pub mod gradcheck;
pub mod histogram;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod ply;
pub mod render;
pub mod scalar;
pub mod scene;
pub mod security;
pub mod sh;
pub mod sinkhorn;
pub mod ssim;
pub mod synth;
pub mod train;

pub use camera::Camera;
pub use error::{
    DecodeError, GaussianError, MetricError, PlyError, RenderError, SceneError, TrainError,
};
pub use gaussians::{ActivatedGaussians, GaussianGrads, GaussianSet};
pub use image::Image;
pub use render::{backward, project, render, render_activated, RenderAux, RenderOptions, Splat2D};
pub use scalar::Real;

/// Precision used by training and the command-line tools.
pub type Scalar = f32;

pub type GaussianSet32 = gaussians::GaussianSet<f32>;
pub type GaussianSet64 = gaussians::GaussianSet<f64>;
pub type Camera32 = camera::Camera<f32>;
pub type Camera64 = camera::Camera<f64>;
pub type Image32 = image::Image<f32>;
pub type Image64 = image::Image<f64>;
