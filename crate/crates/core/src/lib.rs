//! Optimal-exit mean field games on bounded domains.
//!
//! Agents leave a domain `Ω` through its boundary, moving at a speed that
//! depends on the surrounding density. The crate solves the value function
//! of the non-autonomous exit-time problem, traces optimal trajectories,
//! transports the population along them and iterates to a Lagrangian
//! equilibrium.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod hjb;
pub mod io;
pub mod pipeline;
pub mod trajectories;
pub mod transport;

pub use error::{Error, Result};
