//! Simulation and analysis toolkit for multiplexed NV-center magnetometry.
//!
//! Forward models (camera frames, rate equations, spin dynamics, holographic
//! spot arrays) and the matching analysis pipeline (photon counting,
//! Poisson-mixture fitting, readout noise, pairwise covariance) share the
//! domain types and seeded RNG contract defined here.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod constants;
pub mod config;
pub mod covariance;
pub mod error;
pub mod experiment;
pub mod frames;
pub mod holography;
pub mod lm;
pub mod nvfr;
pub mod photonstats;
pub mod rateq;
pub mod rng;
pub mod site;
pub mod spinphysics;

pub use camera::CameraModel;
pub use constants::PhysConstants;
pub use error::InvalidField;
pub use nvfr::{read_frames, write_frames, FormatError, FrameStack};
pub use rng::{SeedTree, StreamRng};
pub use site::{NVSite, OrientationFamily, SpinPrep};
