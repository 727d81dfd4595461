//! Conditional GAN mapping signatures to virtual covariance images.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod predict;
pub mod real;
pub mod train;

pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use loss::{gan_loss, GanLoss, GeneratorLoss};
pub use model::{Discriminator, Gan, GanSpec, Generator, ModelError};
pub use predict::{PredictError, Predictor, ZPolicy};
pub use real::Real;
pub use train::{EpochStats, ReconKind, TrainConfig, TrainError, Trainer};
