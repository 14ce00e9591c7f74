//! Sound-speed inversion of ultrasonic surface wavefields with physics-informed
//! neural networks.
//!
//! The crate is split into four layers:
//!
//! * [`diffnet`]: fully connected networks with an adaptive activation slope and
//!   exact first/second input derivatives plus parameter gradients.
//! * [`wavegen`]: a finite-difference solver for `u_tt = v(x, y)^2 Δu` that
//!   synthesizes snapshot stacks, the WFD container and CSV writers.
//! * [`pca_filter`]: per-snapshot PCA denoising with explained-variance selection.
//! * [`pinn_trainer`]: the composite data + residual loss, ADAM and the training loop.

pub mod checks;
pub mod diffnet;
pub mod pca_filter;
pub mod pinn_trainer;
pub mod wavegen;

pub use diffnet::{Activation, EvalResult, Mlp};
pub use pca_filter::{PcaMode, PcaModel};
pub use pinn_trainer::{TrainConfig, TrainTrace, VelocityModel};
pub use wavegen::{Grid2D, SourceSpec, SpeedField, WavefieldDataset};
