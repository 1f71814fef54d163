//! A master-worker task framework for pools of machines that come and go,
//! and a photoionization ray tracer built on it.
//!
//! The physics in [`radtrans`] is generic over the scalar type; the aliases
//! below fix it to `f64`, which is what the application and the wire format
//! use.

pub mod app;
pub mod churn;
pub mod cli;
pub mod clock;
pub mod config;
pub mod master;
pub mod num;
pub mod radtrans;
pub mod task;
pub mod transport;
pub mod worker;

pub type Grid = radtrans::Grid<f64>;
pub type Grid32 = radtrans::Grid<f32>;
pub type PhysicsParams = radtrans::PhysicsParams<f64>;
pub type GridDelta = radtrans::GridDelta<f64>;
pub type GammaField = radtrans::GammaField<f64>;
pub type RaySegmentTask = radtrans::RaySegmentTask<f64>;
