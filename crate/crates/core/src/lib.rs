//! Haptic localization for legged robots.
//!
//! The pipeline has four stages:
//!
//! 1. [`train`] fits a small transformer ([`net`]) with a Batch-All triplet
//!    loss, mining positives and negatives from the geometric distance
//!    between footholds instead of class labels.
//! 2. [`map`] runs every step of a mapping walk through the trained network
//!    and stores the embeddings at their footholds in a sparse 2D map.
//! 3. [`mcl`] tracks the robot pose with a particle filter, scoring each
//!    particle by how well the current step's embedding (and optionally its
//!    foot elevation) matches the nearest map entry.
//! 4. [`eval`] computes translational absolute pose errors.
//!
//! [`synth`] produces deterministic synthetic worlds and walks so the whole
//! loop can be exercised without a robot.

pub mod error;
pub mod eval;
pub mod map;
pub mod mcl;
pub mod net;
pub mod pose;
pub mod seed;
pub mod signal_io;
pub mod synth;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
pub use pose::Pose;
pub use signal_io::{HapticSignal, StepEvent, Trial};
