//! Trace format, synthetic generators, and op expansion.

mod disk;
mod expand;
mod generate;
mod trace;

use thiserror::Error;

pub use disk::{DiskMode, DiskModel};
pub use expand::{EventSink, ExpandConfig, ExpandStats, Expander, MicroEvent, Recorder};
pub use generate::{generate, GeneratorSpec, Pattern};
pub use trace::{format_trace, parse_trace, parse_trace_str, validate, write_trace, OpKind, TraceOp};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("line {line}: timestamps for cpu {cpu} go backwards")]
    OrderingViolation { line: usize, cpu: u32 },
    #[error("{op} on unknown target {target}")]
    UnknownTarget { op: OpKind, target: u64 },
    #[error("{op} on existing target {target}")]
    DuplicateTarget { op: OpKind, target: u64 },
}
