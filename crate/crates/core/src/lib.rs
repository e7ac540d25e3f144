//! Discrete-event simulation of kernel-object placement and migration across
//! a fast and a slow memory tier.

pub mod kloc;
pub mod memory;
pub mod objects;
pub mod policy;
pub mod prefetch;
pub mod sim;
pub mod workload;

pub use kloc::{Kloc, KlocError, KlocKey, KlocState, KlocTable};
pub use memory::{
    AllocOutcome, FrameId, FrameKind, LruList, MemError, MigrationCostModel, PageFrame, TierConfig, TierId, TierSystem,
    PAGE_SIZE,
};
pub use objects::{Grouping, KernelObject, LifetimeStats, ObjError, ObjectAlloc, ObjectId, ObjectKind, ObjectSizes, ObjectStore};
pub use policy::{decide_tier, AllocRequest, AllocTarget, MigrationOutcome, PolicyEngine, PolicyKind, ScanConfig};
pub use prefetch::{PrefetchConfig, PrefetchPlan, ReadaheadState};
pub use sim::{
    compare, footprint_pages, run, run_with, sweep, Capacity, ConfigError, CostEvent, CostLog, RunOptions, RunReport, SimConfig,
    SimError, Stats, SweepAxis, SweepPoint,
};
pub use workload::{generate, parse_trace, parse_trace_str, write_trace, GeneratorSpec, OpKind, Pattern, TraceOp, WorkloadError};
