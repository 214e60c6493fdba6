//! Single-image super-resolution with a feature-augmented random forest.
//!
//! The engine upscales the luma channel of an image by learning per-leaf
//! ridge regressors over gradient-derived patch features. Tree routing runs
//! on linearly compressed features (PCA or random-hyperplane projection)
//! while the leaf regressors see the full-dimensional original features.
//! The initial coarse estimate comes from bicubic interpolation or
//! iterative back projection, and the forest predicts the residual on top
//! of it.

pub mod error;
pub mod features;
pub mod forest;
pub mod ibp;
pub mod imgproc;
pub mod pipeline;
pub mod projection;
pub mod regression;

pub use error::{FarfError, Result};
