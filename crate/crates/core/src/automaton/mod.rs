//! Moore machines over ternary state and observation codes.
//!
//! A machine has a finite set of states, each labelled with an action and the
//! hidden code it was discovered under, an observation alphabet of ternary
//! codes, and a partial transition map carrying visit counts. Running the
//! machine follows the convention of the extracted networks: on observation
//! `o` in state `s` the machine moves to `t = Δ(s, o)` and emits the action
//! label of `t`.

mod build;
mod equiv;
mod format;
mod machine;
mod minimize;
mod run;
mod trace;

use thiserror::Error;

pub use build::build_from_traces;
pub use equiv::equivalent;
pub use format::{deserialize, serialize};
pub use machine::{
    decision_points, stats, MachineBuilder, MachineStats, MooreMachine, ObsId, StateId,
    StateRecord, Transition,
};
pub use minimize::minimize;
pub use run::{
    rollout_traces, run_policy, step, DirectCode, Fallback, MachinePolicy, ObservationEncoder,
};
#[cfg(test)]
pub(crate) use machine::tests::figure_machine;
pub use trace::{read_traces, write_traces, Trace, TransitionTuple};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutomatonError {
    #[error("no transition tuples in input")]
    EmptyInput,
    #[error(
        "conflicting transition from state code {state} on observation code {obs}: \
         seen target {first_target}/action {first_action}, then target {second_target}/action {second_action}"
    )]
    ConflictingTransition {
        state: String,
        obs: String,
        first_target: String,
        first_action: usize,
        second_target: String,
        second_action: usize,
    },
    #[error("state code {state} entered with actions {first} and {second}")]
    ConflictingLabel {
        state: String,
        first: usize,
        second: usize,
    },
    #[error("code length {found} does not match expected {expected} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("state {0} has no outgoing transitions")]
    DeadEnd(StateId),
    #[error("state {state} has no transition on observation {obs}")]
    UnknownObservation { state: StateId, obs: ObsId },
    #[error("raw observation could not be bound to the alphabet: {0}")]
    Unbindable(String),
    #[error("unknown state {0}")]
    UnknownState(StateId),
    #[error("observation alphabets differ")]
    AlphabetMismatch,
    #[error("invalid machine: {0}")]
    Invalid(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}
