//! Simulation core for a solar-powered smart-agriculture node.
//!
//! The crate models one or more field nodes end to end: the solar/battery
//! power path ([`power`]), the soil and air sensors ([`sensors`]), the
//! threshold irrigation loop ([`controller`]), the channel-based telemetry
//! store the nodes report to ([`cloud`]), a small convolutional leaf-disease
//! classifier written from scratch ([`classifier`]), and the deterministic
//! day-long scenario engine tying them together ([`scenario`]).

pub mod classifier;
pub mod clock;
pub mod cloud;
pub mod controller;
pub mod power;
pub mod scenario;
pub mod sensors;
