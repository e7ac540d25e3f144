//! Fixed inputs shared by the benchmarks.

use klocsim::{generate, GeneratorSpec, Pattern, SimConfig, TraceOp};

/// A trace of roughly `ops` operations; rocksdb_like gets one table per cpu
/// sized to land near the same count.
pub fn fixture(pattern: Pattern, ops: u64) -> Vec<TraceOp> {
    let base = GeneratorSpec { n_ops: ops, seed: 42, ..GeneratorSpec::preset(pattern) };
    let spec = if pattern == Pattern::RocksdbLike {
        // Each flushed value brings about eleven ops with it.
        let puts = (ops / u64::from(base.n_cpus) / 11).max(1);
        GeneratorSpec { n_files: u64::from(base.n_cpus), file_size_bytes: puts * base.value_bytes, ..base }
    } else {
        base
    };
    generate(&spec)
}

pub fn config() -> SimConfig {
    SimConfig::default()
}
