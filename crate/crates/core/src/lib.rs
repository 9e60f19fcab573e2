//! Optimization engine for 3D Gaussian splat clouds under multi-view
//! guidance, with surface-alignment regularizers, uncertainty-weighted loss
//! balancing, and depth-backprojection pruning.

pub mod camera;
pub mod cloud;
pub mod config;
pub mod densify;
pub mod error;
pub mod guidance;
pub mod io;
pub mod math;
pub mod optim;
pub mod raster;
pub mod regularizers;
pub mod spatial;
pub mod runner;
pub mod surface;
pub mod trainer;

pub use camera::{BackgroundPolicy, Camera, SceneConfig};
pub use cloud::{build_covariance, init_cloud, GaussianCloud, Splat};
pub use error::{Error, Result};
pub use raster::{project, render, render_backward, ParamGradients, RenderOutput};
