//! Peer-to-peer electricity market clearing with transmission and
//! distribution system operators as market actors.
//!
//! The [`clearing`] module builds and solves the joint equilibrium problem.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod admm;
pub mod agents;
pub mod clearing;
pub mod error;
pub mod grid;
pub mod io;
pub mod policy;
pub mod settlement;
pub mod solver;

pub use error::{Error, Result};
