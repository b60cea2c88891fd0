//! Extended-Kalman PMB and PMBM filters for single-base-station radio SLAM.
//!
//! The sensor (user equipment) state is `[x, y, z, heading, clock bias]` and
//! the map holds point landmarks of three kinds: the base station itself,
//! virtual anchors (mirror images of the base station across reflecting
//! surfaces) and scattering points. Each landmark carries a probability over
//! its kind, so one filter can track all three.

pub mod assignment;
pub mod association;
pub mod density;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod model;
pub mod multimodel;
pub mod plot;
pub mod reduction;
pub mod sim;
pub mod update;

pub use error::{Result, SlamError};
