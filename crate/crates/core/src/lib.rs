//! Tools for turning small recurrent control policies into finite-state Moore
//! machines and for analysing those machines.
//!
//! The pipeline runs in stages:
//!
//! 1. a GRU policy ([`policy::Rpn`]) is trained by behaviour cloning,
//! 2. quantized bottleneck autoencoders ([`qbn::Qbn`]) are fit to its
//!    observation features and hidden states and inserted into the network,
//! 3. ternary transition traces of the discretized network are turned into a
//!    [`automaton::MooreMachine`],
//! 4. the machine is inspected through interpretable reductions
//!    ([`reducer`]), differential attention ([`attention`]) and functional
//!    pruning ([`pruner`]).
//!
//! Everything is deterministic given a seed; see [`seed`].

pub mod attention;
pub mod automaton;
pub mod envs;
mod error;
pub mod neural;
pub mod pipeline;
pub mod policy;
pub mod pruner;
pub mod qbn;
pub mod reducer;
pub mod seed;
mod trit;

pub use error::{Error, Result};
pub use trit::{InvalidTrit, TernaryCode};
