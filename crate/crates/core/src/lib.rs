//! Exact, desk-scale reinforcement-learning engine built around coverability.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithmic piece:
//!
//! - [`mdp`]: finite episodic MDPs, policies, value functions, exact planning
//!   and trajectory sampling; [`env`] builds instances.
//! - [`coverage`]: exact occupancy measures, concentrability (plain, clipped),
//!   coverability and the potential quantities used in the regret analysis.
//! - [`classes`]: finite value and weight function classes, including the
//!   mixture and signed/layer-masked augmentations.
//! - [`glow`]: the optimistic online learner with truncated density-ratio
//!   confidence sets.
//! - [`offline`]: clipped/regularized minimax weighted Bellman estimation,
//!   fitted Q-iteration, model-based maximum likelihood, and the
//!   clipped-concentrability risk certificate.
//! - [`hybrid`]: the hybrid-to-offline reduction and its instantiations.
//!
//! Layers, states and actions are zero-based throughout. The state index
//! `num_states` is reserved for the absorbing terminal state reached after
//! the last layer.
#![cfg_attr(not(test), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod classes;
pub mod coverage;
pub mod data;
pub mod env;
mod error;
pub mod glow;
pub mod hybrid;
pub mod math;
pub mod mdp;
pub mod offline;
pub mod record;

pub use self::error::{Error, Result};
pub use self::mdp::{Policy, TabularMdp, ValueFunction};
