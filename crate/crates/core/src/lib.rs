//! Simulator and analysis toolkit for a single-actuator exotendon hand orthosis.
//!
//! The pieces mirror the device: a kinematic hand ([`hand`]), the tendon
//! network routed over it ([`tendon`]), the actuator, magnetic breakaway
//! coupling and load cell ([`actuation`]), a spring model of finger
//! spasticity ([`spasticity`]), the quasi-static trial loop ([`trial`]), and
//! the force-position post-processing ([`analysis`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuation;
pub mod analysis;
mod error;
pub mod hand;
pub mod spasticity;
pub mod tendon;
pub mod trace;
pub mod trial;

pub use error::{Error, Result};
