//! Deterministic synthetic trace generation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trace::{OpKind, TraceOp};
use crate::memory::PAGE_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pattern {
    SeqRead,
    SeqWrite,
    RandRead,
    RandWrite,
    ReadWrite,
    RocksdbLike,
    RedisLike,
    FilebenchLike,
}

impl Pattern {
    pub const ALL: [Pattern; 8] = [
        Pattern::SeqRead,
        Pattern::SeqWrite,
        Pattern::RandRead,
        Pattern::RandWrite,
        Pattern::ReadWrite,
        Pattern::RocksdbLike,
        Pattern::RedisLike,
        Pattern::FilebenchLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::SeqRead => "seq_read",
            Pattern::SeqWrite => "seq_write",
            Pattern::RandRead => "rand_read",
            Pattern::RandWrite => "rand_write",
            Pattern::ReadWrite => "readwrite",
            Pattern::RocksdbLike => "rocksdb_like",
            Pattern::RedisLike => "redis_like",
            Pattern::FilebenchLike => "filebench_like",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Pattern::ALL.into_iter().find(|p| p.name() == norm).ok_or_else(|| format!("unknown pattern `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub pattern: Pattern,
    /// Op budget. `rocksdb_like` ignores it: its length follows from
    /// `n_files` tables of `file_size_bytes` each.
    pub n_ops: u64,
    pub n_cpus: u32,
    pub file_size_bytes: u64,
    pub n_files: u64,
    pub value_bytes: u64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Desk-scale defaults for each archetype.
    pub fn preset(pattern: Pattern) -> Self {
        let base = GeneratorSpec {
            pattern,
            n_ops: 20_000,
            n_cpus: 4,
            file_size_bytes: 16 << 20,
            n_files: 4,
            value_bytes: 16 << 10,
            seed: 1,
        };
        match pattern {
            Pattern::RocksdbLike => GeneratorSpec { n_ops: 60_000, n_cpus: 8, file_size_bytes: 4 << 20, n_files: 128, value_bytes: 64 << 10, ..base },
            Pattern::RedisLike => GeneratorSpec { n_ops: 60_000, n_cpus: 4, file_size_bytes: 8 << 20, n_files: 64, value_bytes: 1 << 10, ..base },
            Pattern::FilebenchLike => GeneratorSpec { n_ops: 40_000, n_cpus: 8, file_size_bytes: 8 << 20, n_files: 8, value_bytes: 4 << 10, ..base },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_cpus == 0 || self.n_files == 0 {
            return Err("n_cpus and n_files must be positive".into());
        }
        if self.value_bytes == 0 || self.file_size_bytes < self.value_bytes {
            return Err("need 0 < value_bytes <= file_size_bytes".into());
        }
        Ok(())
    }
}

/// Gap between consecutive ops of one cpu; ops mostly run back to back.
const STEP_NS: u64 = 1_000;

struct Cpu {
    id: u32,
    t: u64,
    ops: Vec<TraceOp>,
}

impl Cpu {
    fn new(id: u32) -> Self {
        Self { id, t: 0, ops: Vec::new() }
    }

    fn push(&mut self, op: OpKind, target: u64, offset: u64, len: u64) {
        self.ops.push(TraceOp::new(self.t, self.id, op, target, offset, len));
        self.t += STEP_NS;
    }
}

fn merge(cpus: Vec<Cpu>) -> Vec<TraceOp> {
    let mut all: Vec<TraceOp> = cpus.into_iter().flat_map(|c| c.ops).collect();
    all.sort_by_key(|o| (o.t_ns, o.cpu));
    all
}

fn aligned(rng: &mut ChaCha8Rng, size: u64, len: u64) -> u64 {
    let slots = (size / len).max(1);
    rng.gen_range(0..slots) * len
}

pub fn generate(spec: &GeneratorSpec) -> Vec<TraceOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.pattern {
        Pattern::SeqRead | Pattern::RandRead => reads(spec, &mut rng),
        Pattern::SeqWrite | Pattern::RandWrite => writes(spec, &mut rng),
        Pattern::ReadWrite => readwrite(spec),
        Pattern::RocksdbLike => rocksdb(spec, &mut rng),
        Pattern::RedisLike => redis(spec, &mut rng),
        Pattern::FilebenchLike => filebench(spec, &mut rng),
    }
}

fn per_cpu(spec: &GeneratorSpec) -> u64 {
    (spec.n_ops / u64::from(spec.n_cpus)).max(1)
}

fn reads(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Vec<TraceOp> {
    let len = spec.value_bytes;
    let mut cpus: Vec<Cpu> = (0..spec.n_cpus).map(Cpu::new).collect();
    let mut opened = vec![false; spec.n_files as usize];
    let budget = spec.n_ops;
    let mut emitted = 0;
    for c in cpus.iter_mut() {
        let file = u64::from(c.id) % spec.n_files;
        if !opened[file as usize] {
            opened[file as usize] = true;
            c.push(OpKind::Open, file, 0, spec.file_size_bytes);
            emitted += 1;
        }
    }
    let mut i = 0u64;
    while emitted < budget {
        for c in cpus.iter_mut() {
            if emitted >= budget {
                break;
            }
            let file = u64::from(c.id) % spec.n_files;
            let off = match spec.pattern {
                Pattern::SeqRead => (i * len) % spec.file_size_bytes,
                _ => aligned(rng, spec.file_size_bytes, len),
            };
            c.push(OpKind::Read, file, off, len);
            emitted += 1;
        }
        i += 1;
    }
    merge(cpus)
}

fn writes(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Vec<TraceOp> {
    let len = spec.value_bytes;
    let fsync_every = ((1 << 20) / len).max(1);
    let mut cpus = Vec::new();
    for id in 0..spec.n_cpus {
        let mut c = Cpu::new(id);
        let mut file = u64::from(id) << 32;
        let mut written = 0;
        let mut n = 0;
        c.push(OpKind::Create, file, 0, 0);
        for _ in 0..per_cpu(spec) {
            let off = match spec.pattern {
                Pattern::SeqWrite => written,
                _ => aligned(rng, spec.file_size_bytes, len),
            };
            c.push(OpKind::Write, file, off, len);
            written += len;
            n += 1;
            if n % fsync_every == 0 {
                c.push(OpKind::Fsync, file, 0, 0);
            }
            if written >= spec.file_size_bytes {
                c.push(OpKind::Fsync, file, 0, 0);
                c.push(OpKind::Close, file, 0, 0);
                file += 1;
                written = 0;
                c.push(OpKind::Create, file, 0, 0);
            }
        }
        c.push(OpKind::Fsync, file, 0, 0);
        c.push(OpKind::Close, file, 0, 0);
        cpus.push(c);
    }
    merge(cpus)
}

/// Sequential reads of an existing file interleaved with appends to a log.
fn readwrite(spec: &GeneratorSpec) -> Vec<TraceOp> {
    let len = spec.value_bytes;
    let mut cpus = Vec::new();
    for id in 0..spec.n_cpus {
        let mut c = Cpu::new(id);
        let input = u64::from(id);
        let mut log = (1 << 32) + (u64::from(id) << 16);
        c.push(OpKind::Open, input, 0, spec.file_size_bytes);
        c.push(OpKind::Create, log, 0, 0);
        let mut written = 0;
        let mut pos = 0;
        for i in 0..per_cpu(spec) / 2 {
            c.push(OpKind::Read, input, pos, len);
            pos = (pos + len) % spec.file_size_bytes;
            c.push(OpKind::Write, log, written, len);
            written += len;
            if i % 16 == 15 {
                c.push(OpKind::Fsync, log, 0, 0);
            }
            if written >= spec.file_size_bytes {
                c.push(OpKind::Fsync, log, 0, 0);
                c.push(OpKind::Close, log, 0, 0);
                log += 1;
                written = 0;
                c.push(OpKind::Create, log, 0, 0);
            }
        }
        c.push(OpKind::Fsync, log, 0, 0);
        c.push(OpKind::Close, log, 0, 0);
        cpus.push(c);
    }
    merge(cpus)
}

#[derive(Debug, Clone, Copy)]
struct RocksShape {
    gets_per_put: u64,
    /// Memtable pages probed per get.
    get_app_pages: u64,
    /// Pages read from a live table per get.
    get_read_pages: u64,
    /// One get in this many reads an older live table instead of the newest; 0 never does.
    read_every: u64,
    live_tables: usize,
    /// Short scans of older pre-existing tables per flush.
    scans_per_flush: u64,
    scan_blocks: u64,
    /// Per-cpu block cache size in pages; each table read fills the next slot.
    block_cache_pages: u64,
    /// A fresh memtable region after every flush.
    fresh_memtable: bool,
    /// Memtable bytes per table byte.
    memtable_factor: u64,
}

const ROCKS: RocksShape = RocksShape {
    gets_per_put: 10,
    get_app_pages: 4,
    get_read_pages: 32,
    read_every: 0,
    live_tables: 6,
    scans_per_flush: 3,
    scan_blocks: 3,
    block_cache_pages: 0,
    fresh_memtable: false,
    memtable_factor: 1,
};

fn rocksdb(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Vec<TraceOp> {
    let shape = ROCKS;
    let batch = spec.value_bytes;
    let chunk: u64 = 64 << 10;
    let file = spec.file_size_bytes;
    let n_cpus = u64::from(spec.n_cpus);
    let old_base = 1u64 << 40;
    let read_len = shape.get_read_pages * PAGE_SIZE;
    let mut cpus: Vec<Cpu> = (0..spec.n_cpus).map(Cpu::new).collect();
    for (i, c) in cpus.iter_mut().enumerate() {
        let quota = spec.n_files / n_cpus + u64::from((i as u64) < spec.n_files % n_cpus);
        let cpu_base = u64::from(c.id) << 32;
        let block_cache = (1u64 << 40) + u64::from(c.id);
        let mut bc_slot = 0;
        // Closed tables still live, oldest first.
        let mut live: Vec<u64> = Vec::new();
        // The newest table stays open while the next memtable fills.
        let mut newest: Option<u64> = None;
        let mut old_open = vec![false; spec.n_files as usize];
        for j in 0..quota {
            let memtable = if shape.fresh_memtable { cpu_base + j } else { cpu_base };
            let mut cursor = 0;
            let step = batch * shape.memtable_factor;
            while cursor < file * shape.memtable_factor {
                c.push(OpKind::AppTouch, memtable, cursor, step);
                cursor += step;
                for g in 0..shape.gets_per_put {
                    let off = aligned(rng, cursor, shape.get_app_pages * PAGE_SIZE);
                    c.push(OpKind::AppTouch, memtable, off, shape.get_app_pages * PAGE_SIZE);
                    let older = shape.read_every > 0 && g % shape.read_every == shape.read_every - 1;
                    let t = match (older, newest) {
                        (false, Some(t)) => Some(t),
                        _ => live.get(rng.gen_range(0..live.len().max(1))).copied(),
                    };
                    if let Some(t) = t {
                        c.push(OpKind::Read, t, aligned(rng, file, read_len), read_len);
                        if shape.block_cache_pages > 0 {
                            c.push(OpKind::AppTouch, block_cache, (bc_slot % shape.block_cache_pages) * PAGE_SIZE, PAGE_SIZE);
                            bc_slot += 1;
                        }
                    }
                }
            }
            if let Some(t) = newest.take() {
                c.push(OpKind::Close, t, 0, 0);
                live.push(t);
                if live.len() > shape.live_tables {
                    c.push(OpKind::Delete, live.remove(0), 0, 0);
                }
            }
            let table = cpu_base + j;
            c.push(OpKind::Create, table, 0, 0);
            let mut off = 0;
            while off < file {
                c.push(OpKind::Write, table, off, chunk);
                off += chunk;
            }
            c.push(OpKind::Fsync, table, 0, 0);
            newest = Some(table);
            for _ in 0..shape.scans_per_flush {
                let idx = rng.gen_range(0..spec.n_files);
                let t = old_base + idx;
                if !old_open[idx as usize] {
                    old_open[idx as usize] = true;
                    c.push(OpKind::Open, t, 0, file * 4);
                }
                let start = aligned(rng, file * 4, PAGE_SIZE);
                for b in 0..shape.scan_blocks {
                    c.push(OpKind::Read, t, start + b * PAGE_SIZE, PAGE_SIZE);
                }
            }
        }
        if let Some(t) = newest {
            c.push(OpKind::Close, t, 0, 0);
        }
    }
    merge(cpus)
}

fn redis(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Vec<TraceOp> {
    let conns_per_cpu = (spec.n_files / u64::from(spec.n_cpus)).max(1);
    let kv_pages = (spec.file_size_bytes / PAGE_SIZE).max(1);
    let ckpt_every = 2_000;
    let ckpt_chunk = 256 << 10;
    let mut cpus = Vec::new();
    for id in 0..spec.n_cpus {
        let mut c = Cpu::new(id);
        let sock_base = u64::from(id) << 32;
        let mut next_sock = sock_base;
        let mut conns: Vec<u64> = Vec::new();
        for _ in 0..conns_per_cpu {
            c.push(OpKind::SockOpen, next_sock, 0, 0);
            conns.push(next_sock);
            next_sock += 1;
        }
        let mut ckpt_gen = 0u64;
        let mut prev_ckpt: Option<u64> = None;
        let mut n = 0;
        while n < per_cpu(spec) {
            let slot = rng.gen_range(0..conns.len());
            let s = conns[slot];
            let page = rng.gen_range(0..kv_pages);
            if rng.gen_bool(0.75) {
                c.push(OpKind::Recv, s, 0, 64);
                c.push(OpKind::AppTouch, u64::from(id), page * PAGE_SIZE, spec.value_bytes);
                c.push(OpKind::Send, s, 0, spec.value_bytes);
            } else {
                c.push(OpKind::Recv, s, 0, spec.value_bytes);
                c.push(OpKind::AppTouch, u64::from(id), page * PAGE_SIZE, spec.value_bytes);
                c.push(OpKind::Send, s, 0, 16);
            }
            n += 3;
            if rng.gen_bool(0.01) {
                c.push(OpKind::SockClose, s, 0, 0);
                c.push(OpKind::SockOpen, next_sock, 0, 0);
                conns[slot] = next_sock;
                next_sock += 1;
                n += 2;
            }
            if id == 0 && n / ckpt_every > ckpt_gen {
                ckpt_gen += 1;
                let f = (1 << 40) + ckpt_gen;
                c.push(OpKind::Create, f, 0, 0);
                let dump = spec.file_size_bytes / 4;
                let mut off = 0;
                while off < dump {
                    c.push(OpKind::Write, f, off, ckpt_chunk);
                    off += ckpt_chunk;
                    n += 1;
                }
                c.push(OpKind::Fsync, f, 0, 0);
                c.push(OpKind::Close, f, 0, 0);
                if let Some(p) = prev_ckpt.replace(f) {
                    c.push(OpKind::Delete, p, 0, 0);
                }
                n += 4;
            }
        }
        for s in conns {
            c.push(OpKind::SockClose, s, 0, 0);
        }
        cpus.push(c);
    }
    merge(cpus)
}

fn filebench(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Vec<TraceOp> {
    let len = spec.value_bytes;
    let file_size = spec.file_size_bytes;
    let mut cpus = Vec::new();
    for id in 0..spec.n_cpus {
        let mut c = Cpu::new(id);
        let mut gen = 0u64;
        let budget = per_cpu(spec);
        let mut n = 0;
        while n < budget {
            let f = (u64::from(id) << 32) + gen;
            gen += 1;
            c.push(OpKind::Create, f, 0, 0);
            let mut size = 0;
            let mut k = 0;
            while size < file_size && n < budget {
                if size > 0 && rng.gen_bool(0.5) {
                    c.push(OpKind::Read, f, aligned(rng, size, len), len);
                } else if size > 0 && rng.gen_bool(0.3) {
                    c.push(OpKind::Write, f, aligned(rng, size, len), len);
                } else {
                    c.push(OpKind::Write, f, size, len);
                    size += len;
                }
                k += 1;
                n += 1;
                if k % 32 == 0 {
                    c.push(OpKind::Fsync, f, 0, 0);
                    n += 1;
                }
            }
            c.push(OpKind::Fsync, f, 0, 0);
            c.push(OpKind::Close, f, 0, 0);
            c.push(OpKind::Delete, f, 0, 0);
            n += 3;
        }
        cpus.push(c);
    }
    merge(cpus)
}
