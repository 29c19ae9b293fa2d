//! Gaussian-splatting reconstruction for tilted-axis X-ray laminography.
//!
//! A volume is represented by anisotropic 3D Gaussians with a density each.
//! Projections are rendered by splatting under a tilted cone-beam geometry and
//! fitted to measured data with L1 + SSIM and Adam. An FDK reconstruction,
//! filtered to suppress its laminographic artifacts, seeds the Gaussians.

pub mod error;
pub mod fdk;
pub mod geometry;
pub mod init;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod oracle;
pub mod raster;
pub mod ssim;
pub mod types;

pub use error::{Error, Result};
pub use fdk::{FdkConfig, RampFilter};
pub use geometry::{Detector, LaminographyGeometry};
pub use init::AfConfig;
pub use optim::{MetricsRecord, TrainConfig, Trainer};
pub use raster::RenderSettings;
pub use types::{Aabb, ActivatedGaussian, Axis, GaussianScene, GridSpec, Image, ProjectionStack, RadiativeGaussian, Volume};
