//! Interpretable reductions of a Moore machine.
//!
//! A [`ReducedView`] is a drawing-oriented summary of the part of a machine
//! that recorded traces actually visit. Chains of non-branching states become
//! macro arcs, loops that are traversed exactly once per entry are unrolled
//! into those chains, parallel arcs between two nodes are merged into
//! abstract arcs, and annotated warm-up and termination phases become
//! boundary arcs. The machine itself is never modified.

mod counts;
mod dot;
mod view;

use thiserror::Error;

pub use counts::{visit_counts, VisitCounts};
pub use dot::{machine_to_dot, view_to_dot};
pub use view::{
    expand, mark_boundaries, merge_parallel, reduce_all, reduce_sequences, replay_expanded,
    unroll_once_loops, Annotations, ArcKind, NodeRole, ReducedView, UnrolledLoop, ViewArc,
    ViewNode,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReduceError {
    #[error("trace {trace} step {step} does not replay through the machine: {message}")]
    ReplayMismatch {
        trace: usize,
        step: usize,
        message: String,
    },
    #[error("step index {index} out of range ({message})")]
    IndexOutOfRange { index: usize, message: String },
}
