//! Sensor-aided beamwidth and power control (BPC) for line-of-sight
//! vehicle-to-vehicle mmWave links.
//!
//! The crate provides the full chain needed to study dynamic beam control at
//! desk scale:
//!
//! * [`geometry`] — frames, quaternion algebra and LOS pointing angles;
//! * [`fusion`] — quaternion EKF fusing IMU and GPS streams;
//! * [`channel`] — Gaussian-beam link budget at mmWave;
//! * [`bpc`] — covariance-driven beamwidth selection and power control;
//! * [`optimizer`] — outage-constrained beamwidth/power benchmark;
//! * [`trajectory`] / [`sim`] — synthetic trajectories, CSV ingestion and the
//!   two-vehicle experiment engine;
//! * [`numdiff`] — finite-difference Jacobians used to validate gradients.
//!
//! The math modules are generic over the scalar type through [`Scalar`]
//! (`f32` or `f64`); the simulation layer is concrete in `f64`. The aliases
//! below cover the common double-precision case.
//!
//! ```
//! use bpc_core::sim::{metrics, run, SimConfig};
//! use bpc_core::trajectory::{curvy_default, generate_trajectory};
//!
//! let samples = generate_trajectory(&curvy_default(100.0)).unwrap();
//! let summary = metrics(&run(&SimConfig::s2(), &samples).unwrap());
//! assert!(summary.outage_rate < 0.01);
//! assert!(summary.beam_min_rad.to_degrees() >= 1.8);
//! ```

pub use nalgebra;

pub mod bpc;
pub mod channel;
pub mod fusion;
pub mod geometry;
mod num;
pub mod numdiff;
pub mod optimizer;
pub(crate) mod quad;
pub mod sim;
pub mod trajectory;

pub use num::Scalar;

pub use geometry::{EulerAngles, LosAngles, Quaternion, Vec3};

/// Double-precision aliases for the main library types.
pub type Quaternion64 = geometry::Quaternion<f64>;
pub type EulerAngles64 = geometry::EulerAngles<f64>;
pub type LosAngles64 = geometry::LosAngles<f64>;
pub type Vec364 = geometry::Vec3<f64>;
pub type Beamwidth64 = channel::Beamwidth<f64>;
pub type LinkConfig64 = channel::LinkConfig<f64>;
pub type FilterState64 = fusion::FilterState<f64>;
pub type NoiseConfig64 = fusion::NoiseConfig<f64>;
pub type PeerEstimate64 = bpc::PeerEstimate<f64>;
pub type BpcParams64 = bpc::BpcParams<f64>;

/// Single-precision aliases for the geometric core.
pub type Quaternion32 = geometry::Quaternion<f32>;
pub type EulerAngles32 = geometry::EulerAngles<f32>;
