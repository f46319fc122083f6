//! Simulated autonomous surface vehicle for lake water-quality surveys.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bus;
pub mod config;
pub mod frames;
pub mod gpfield;
pub mod link;
pub mod mission;
pub mod perception;
pub mod planner;
pub mod sim;
pub mod station;
pub mod vehicle;
pub mod worldsim;
