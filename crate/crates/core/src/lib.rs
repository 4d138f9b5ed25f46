//! Solvers for time-varying Markov decision processes (TVMDPs) on grid worlds.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the spatial grid, the time grid, the transition law and
//!   the policy/value containers.
//! * [`disturbance`] provides time-varying current fields.
//! * [`transition`] turns a field plus a vehicle model into a transition law
//!   and local transition times.
//! * [`ppt`] computes the first two moments of passage percolation times and
//!   the reachable space they induce.
//! * [`solvers`] contains full spatiotemporal value iteration, expected-time
//!   value iteration and reachable-space value iteration.
//! * [`sim`] executes policies and aggregates benchmark statistics.
//! * [`harness`] wires scenario configuration files to all of the above.

pub mod disturbance;
pub mod error;
pub mod harness;
pub mod model;
pub mod par;
pub mod ppt;
pub mod sim;
pub mod solvers;
pub mod transition;

pub use error::{Error, Result};
pub use model::{
    ActionId, ActionSet, Grid, Heading, Policy, RewardScheme, StateId, TabularDynamics, TimeGrid,
    Transition, TvmdpModel, ValueTable,
};
