//! Parallel self-adjusting computation.
//!
//! A program written against [`Ctx`] records a tree of sequence, parallel and
//! read nodes while it runs. After the inputs change, [`Computation::propagate`]
//! walks the marked part of that tree and re-runs only the readers whose
//! values changed.

mod engine;
mod error;
pub mod metrics;
mod modifiable;
pub mod reader_set;
mod trace;
mod value;

pub use engine::{Computation, Config, Ctx, UpdateEpoch};
pub use error::{Result, SacError};
pub use metrics::{
    affected_readers, computation_distance, distance_sides, AffectedPair, OracleError, Phase, Slot, SnapNode,
    SnapshotBuilder, TraceMetrics, TraceSnapshot, VisitEvent, VisitKind,
};
pub use modifiable::{BlockReads, Deps, Mod};
pub use trace::{audit_trace, mark, tree_height, Node, NodeIds, NodeKind, Violation};
pub use value::{Data, DynValue, NeverEq};
