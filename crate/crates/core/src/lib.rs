//! Two-stage, residual-guided domain decomposition PINN for LWR traffic speed
//! reconstruction from sparse fixed sensors, with baselines, a Godunov oracle
//! and an experiment harness.
//!
//! Numerical kernels are generic over [`scalar::Scalar`] (`f32`/`f64`); the
//! trainer and experiment layer run in `f64`.

pub mod ablation;
pub mod autodiff;
pub mod decomposition;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod field;
pub mod interfaces;
pub mod losses;
pub mod network;
pub mod optim;
pub mod partition;
pub mod physics;
pub mod sampling;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};

pub type Network = network::PinnNetwork<f64>;
pub type Network32 = network::PinnNetwork<f32>;
pub type DomainPartition = partition::Partition<f64>;
pub type FundamentalDiagram = physics::FundamentalDiagram<f64>;
pub type Coeffs = physics::NondimCoeffs<f64>;
pub type Optimizer = optim::Adam<f64>;
