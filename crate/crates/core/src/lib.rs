//! Risk-aware motion planning for interactive driving scenarios.
//!
//! The crate couples multi-modal trajectory prediction over a lane-piece
//! graph with a model predictive contouring controller whose objective
//! carries a probability-weighted risk potential field, plus a deterministic
//! synchronous traffic simulator that closes the loop.
//!
//! The crate is `no_std`-compatible (`alloc` required); disable the default
//! `std` feature for embedded use. File formats, configuration loading and
//! the command line live in the companion `riskplan-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod collision;
pub mod lane_graph;
pub mod math;
pub mod mpcc;
pub mod prediction;
pub mod reference_path;
pub mod risk_field;
pub mod rng;
pub mod sim;
pub mod synthetic;
pub mod trtp;
pub mod vehicle;

pub use math::{Pose, Vec2};
