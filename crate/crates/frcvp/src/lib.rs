//! Scheduling for fixed-route coordinated vehicle platooning.
//!
//! Vehicles travel fixed routes over a road network, each with an earliest
//! departure and a latest arrival. Choosing departure times so that vehicles
//! enter shared road links simultaneously lets them platoon and save fuel.
//! This crate models such instances, discretizes the coordination time axis
//! into buckets, builds solver-agnostic MILP formulations, and solves or
//! approximates the schedule with embedded algorithms:
//!
//! - [`model`]: networks, vehicles, route graphs and structural checks.
//! - [`timewin`]: node time windows, relative time windows, the interval
//!   overlap graph and adaptive time discretization.
//! - [`objective`]: fuel-saving arithmetic and schedule evaluation.
//! - [`milp`]: linear-model builders (`va`, `twof`, `ct`, `gva`, `lp`) and
//!   LP-format text export.
//! - [`solvers`]: dense-tableau simplex, exact enumeration and LP-bounded
//!   branch and bound.
//! - [`approx`]: greedy algorithms with competitive ratios, a PTAS and
//!   LP randomized rounding.
//! - [`looped`]: loop breaking with virtual vehicle copies for route graphs
//!   that are not trees.
//! - [`instgen`]: reproducible instance generators.

pub mod approx;
mod error;
pub mod instgen;
pub mod looped;
pub mod milp;
pub mod model;
pub mod objective;
pub mod solvers;
pub mod timewin;

pub use error::Error;

/// Absolute tolerance for comparing time coordinates (bucket endpoints,
/// departure instants). Break points closer than this are merged.
pub const TIME_EPS: f64 = 1e-9;

pub type Result<T> = std::result::Result<T, Error>;
