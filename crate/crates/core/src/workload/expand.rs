//! Expansion of trace ops into kernel micro-events.

use std::collections::BTreeMap;

use super::disk::DiskMode;
use super::trace::{OpKind, TraceOp};
use super::WorkloadError;
use crate::kloc::KlocKey;
use crate::memory::PAGE_SIZE;
use crate::objects::{ObjectId, ObjectKind};
use crate::prefetch::{PrefetchConfig, ReadaheadState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicroEvent {
    Alloc { kind: ObjectKind, data_pages: u64, kloc: KlocKey, prefetch: bool },
    Access { object: ObjectId, bytes: u64, write: bool },
    AppTouch { region: u64, page: u64, bytes: u64 },
    Disk { bytes: u64, mode: DiskMode },
    Nic { bytes: u64 },
    Cpu { ns: u64 },
    Free { object: ObjectId },
    Close { kloc: KlocKey },
    Delete { kloc: KlocKey },
}

/// Receives micro-events as an op is expanded. `Alloc` must answer with the
/// new object's id; every other event answers `None`.
pub trait EventSink {
    type Error: From<WorkloadError>;

    fn emit(&mut self, ev: MicroEvent) -> Result<Option<ObjectId>, Self::Error>;
}

/// Sink that records events and hands out sequential ids.
#[derive(Debug, Default, Clone)]
pub struct Recorder {
    pub events: Vec<MicroEvent>,
    next: u64,
}

impl Recorder {
    pub fn count_allocs(&self, kind: ObjectKind) -> usize {
        self.events.iter().filter(|e| matches!(e, MicroEvent::Alloc { kind: k, .. } if *k == kind)).count()
    }

    pub fn count_disk(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, MicroEvent::Disk { .. })).count()
    }

    pub fn clear(&mut self) {
        self.events.clear();
    }
}

impl EventSink for Recorder {
    type Error = WorkloadError;

    fn emit(&mut self, ev: MicroEvent) -> Result<Option<ObjectId>, WorkloadError> {
        self.events.push(ev);
        Ok(match ev {
            MicroEvent::Alloc { .. } => {
                self.next += 1;
                Some(ObjectId(self.next - 1))
            }
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpandConfig {
    pub radix_fanout: u64,
    pub block_io_bytes: u64,
    pub stack_layers: u64,
    pub tag_cost_ns: u64,
    pub prefetch: PrefetchConfig,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        Self { radix_fanout: 64, block_io_bytes: 1 << 20, stack_layers: 4, tag_cost_ns: 200, prefetch: PrefetchConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExpandStats {
    pub read_hit_pages: u64,
    pub read_miss_pages: u64,
    pub prefetch_pages: u64,
    pub prefetch_hits: u64,
}

#[derive(Debug, Clone)]
struct FileState {
    size: u64,
    pages: BTreeMap<u64, ObjectId>,
    radix: BTreeMap<u64, ObjectId>,
    inode: ObjectId,
    dentry: ObjectId,
    journals: Vec<ObjectId>,
    dirty: u64,
    ra: ReadaheadState,
    /// Cached pages as merged `[start, end)` runs keyed by start.
    runs: BTreeMap<u64, u64>,
}

impl FileState {
    fn mark_cached(&mut self, page: u64) {
        let mut start = page;
        let mut end = page + 1;
        if let Some((&s, &e)) = self.runs.range(..=page).next_back() {
            if e >= page {
                start = s;
                end = end.max(e);
            }
        }
        if let Some(&e) = self.runs.get(&end) {
            self.runs.remove(&end);
            end = e;
        }
        self.runs.insert(start, end);
    }

    /// Uncached pages in `[from, to)`, in order.
    fn gaps(&self, from: u64, to: u64) -> Vec<u64> {
        let mut out = Vec::new();
        let mut at = from;
        if let Some((_, &e)) = self.runs.range(..=from).next_back() {
            at = at.max(e);
        }
        for (&s, &e) in self.runs.range(from..to) {
            out.extend(at..s.min(to));
            at = at.max(e);
        }
        out.extend(at..to);
        out
    }
}

#[derive(Debug, Clone)]
pub struct Expander {
    cfg: ExpandConfig,
    files: BTreeMap<u64, FileState>,
    sockets: BTreeMap<u64, ObjectId>,
    stats: ExpandStats,
}

const HEADER_BYTES: u64 = 256;
const META_BYTES: u64 = 64;

fn page_span(offset: u64, len: u64) -> (u64, u64) {
    (offset / PAGE_SIZE, (offset + len).div_ceil(PAGE_SIZE))
}

fn overlap(page: u64, offset: u64, len: u64) -> u64 {
    let lo = (page * PAGE_SIZE).max(offset);
    let hi = ((page + 1) * PAGE_SIZE).min(offset + len);
    hi.saturating_sub(lo)
}

fn alloc<S: EventSink>(sink: &mut S, kind: ObjectKind, data_pages: u64, kloc: KlocKey, prefetch: bool) -> Result<ObjectId, S::Error> {
    let id = sink.emit(MicroEvent::Alloc { kind, data_pages, kloc, prefetch })?;
    Ok(id.expect("sink must return an id for Alloc"))
}

fn access<S: EventSink>(sink: &mut S, object: ObjectId, bytes: u64, write: bool) -> Result<(), S::Error> {
    sink.emit(MicroEvent::Access { object, bytes, write }).map(|_| ())
}

fn free<S: EventSink>(sink: &mut S, object: ObjectId) -> Result<(), S::Error> {
    sink.emit(MicroEvent::Free { object }).map(|_| ())
}

impl Expander {
    pub fn new(cfg: ExpandConfig) -> Self {
        Self { cfg, files: BTreeMap::new(), sockets: BTreeMap::new(), stats: ExpandStats::default() }
    }

    pub fn stats(&self) -> ExpandStats {
        self.stats
    }

    pub fn key_for(op: &TraceOp) -> KlocKey {
        if op.op.is_socket() {
            KlocKey::Socket(op.target)
        } else {
            KlocKey::FileInode(op.target)
        }
    }

    pub fn cached_pages(&self, file: u64) -> Option<usize> {
        self.files.get(&file).map(|f| f.pages.len())
    }

    pub fn readahead(&self, file: u64) -> Option<&ReadaheadState> {
        self.files.get(&file).map(|f| &f.ra)
    }

    fn file(&mut self, op: &TraceOp) -> Result<&mut FileState, WorkloadError> {
        self.files.get_mut(&op.target).ok_or(WorkloadError::UnknownTarget { op: op.op, target: op.target })
    }

    fn ensure_page<S: EventSink>(
        f: &mut FileState,
        fanout: u64,
        page: u64,
        key: KlocKey,
        prefetch: bool,
        sink: &mut S,
    ) -> Result<(ObjectId, bool), S::Error> {
        if let Some(id) = f.pages.get(&page) {
            return Ok((*id, false));
        }
        let id = alloc(sink, ObjectKind::CachePage, 0, key, prefetch)?;
        f.pages.insert(page, id);
        f.mark_cached(page);
        let bucket = page / fanout;
        if !f.radix.contains_key(&bucket) {
            let node = alloc(sink, ObjectKind::RadixNode, 0, key, false)?;
            f.radix.insert(bucket, node);
        }
        Ok((id, true))
    }

    pub fn expand<S: EventSink>(&mut self, op: &TraceOp, sink: &mut S) -> Result<(), S::Error> {
        let key = Self::key_for(op);
        let fanout = self.cfg.radix_fanout.max(1);
        match op.op {
            OpKind::Create => {
                if self.files.contains_key(&op.target) {
                    return Err(WorkloadError::DuplicateTarget { op: op.op, target: op.target }.into());
                }
                let inode = alloc(sink, ObjectKind::Inode, 0, key, false)?;
                let dentry = alloc(sink, ObjectKind::Dentry, 0, key, false)?;
                let journal = alloc(sink, ObjectKind::JournalRecord, 0, key, false)?;
                access(sink, inode, META_BYTES, true)?;
                access(sink, dentry, META_BYTES, true)?;
                access(sink, journal, PAGE_SIZE, true)?;
                self.files.insert(
                    op.target,
                    FileState {
                        size: 0,
                        pages: BTreeMap::new(),
                        radix: BTreeMap::new(),
                        inode,
                        dentry,
                        journals: vec![journal],
                        dirty: 0,
                        ra: ReadaheadState::new(op.target, self.cfg.prefetch),
                        runs: BTreeMap::new(),
                    },
                );
            }
            OpKind::Open => {
                if let Some(f) = self.files.get(&op.target) {
                    access(sink, f.dentry, META_BYTES, false)?;
                    access(sink, f.inode, META_BYTES, false)?;
                } else {
                    let inode = alloc(sink, ObjectKind::Inode, 0, key, false)?;
                    let dentry = alloc(sink, ObjectKind::Dentry, 0, key, false)?;
                    sink.emit(MicroEvent::Disk { bytes: PAGE_SIZE, mode: DiskMode::Rand })?;
                    access(sink, inode, META_BYTES, true)?;
                    access(sink, dentry, META_BYTES, true)?;
                    self.files.insert(
                        op.target,
                        FileState {
                            size: op.len,
                            pages: BTreeMap::new(),
                            radix: BTreeMap::new(),
                            inode,
                            dentry,
                            journals: Vec::new(),
                            dirty: 0,
                            ra: ReadaheadState::new(op.target, self.cfg.prefetch),
                            runs: BTreeMap::new(),
                        },
                    );
                }
            }
            OpKind::Write => {
                let f = self.file(op)?;
                let (first, end) = page_span(op.offset, op.len);
                for page in first..end {
                    let (id, _) = Self::ensure_page(f, fanout, page, key, false, sink)?;
                    access(sink, id, overlap(page, op.offset, op.len), true)?;
                }
                for bucket in first / fanout..=(end - 1) / fanout {
                    access(sink, f.radix[&bucket], META_BYTES, true)?;
                }
                access(sink, f.inode, META_BYTES, true)?;
                let journal = alloc(sink, ObjectKind::JournalRecord, 0, key, false)?;
                access(sink, journal, PAGE_SIZE, true)?;
                f.journals.push(journal);
                f.dirty += op.len;
                f.size = f.size.max(op.offset + op.len);
            }
            OpKind::Fsync => {
                let block = self.cfg.block_io_bytes.max(1);
                let f = self.file(op)?;
                let mut bios = Vec::new();
                for _ in 0..f.dirty.div_ceil(block) {
                    let bio = alloc(sink, ObjectKind::BlockIo, 0, key, false)?;
                    access(sink, bio, 384, true)?;
                    bios.push(bio);
                }
                if f.dirty > 0 {
                    access(sink, f.inode, META_BYTES, true)?;
                    sink.emit(MicroEvent::Disk { bytes: f.dirty, mode: DiskMode::Seq })?;
                }
                for id in f.journals.drain(..).chain(bios) {
                    free(sink, id)?;
                }
                f.dirty = 0;
            }
            OpKind::Read => {
                let stats = &mut self.stats;
                let f = self.files.get_mut(&op.target).ok_or(WorkloadError::UnknownTarget { op: op.op, target: op.target })?;
                let size_pages = f.size.div_ceil(PAGE_SIZE);
                let (first, end) = page_span(op.offset, op.len);
                let end = end.min(size_pages);
                if first >= end {
                    return Ok(());
                }
                let sequential = f.ra.next_expected_page == Some(first);
                let mut missed = 0;
                for page in first..end {
                    let (id, fresh) = Self::ensure_page(f, fanout, page, key, false, sink)?;
                    if fresh {
                        missed += 1;
                    } else {
                        stats.read_hit_pages += 1;
                        stats.prefetch_hits += u64::from(f.ra.consume(page));
                    }
                    access(sink, id, overlap(page, op.offset, op.len), false)?;
                }
                stats.read_miss_pages += missed;
                if missed > 0 {
                    let mode = if sequential { DiskMode::Seq } else { DiskMode::Rand };
                    sink.emit(MicroEvent::Disk { bytes: missed * PAGE_SIZE, mode })?;
                }
                let plan = f.ra.on_read(first, end - first, op.t_ns);
                let stop = (plan.fetch_start + plan.fetch_count).min(size_pages);
                let mut fetched = 0;
                for page in f.gaps(plan.fetch_start, stop) {
                    Self::ensure_page(f, fanout, page, key, true, sink)?;
                    f.ra.mark_fetched(page);
                    fetched += 1;
                }
                if fetched > 0 {
                    stats.prefetch_pages += fetched;
                    sink.emit(MicroEvent::Disk { bytes: fetched * PAGE_SIZE, mode: DiskMode::Seq })?;
                }
            }
            OpKind::Close => {
                self.file(op)?;
                sink.emit(MicroEvent::Close { kloc: key })?;
            }
            OpKind::Delete => {
                let f = self.files.remove(&op.target).ok_or(WorkloadError::UnknownTarget { op: op.op, target: op.target })?;
                let ids = f.pages.values().chain(f.radix.values()).chain(&f.journals).chain([&f.inode, &f.dentry]);
                for id in ids {
                    free(sink, *id)?;
                }
                sink.emit(MicroEvent::Delete { kloc: key })?;
            }
            OpKind::SockOpen => {
                if self.sockets.contains_key(&op.target) {
                    return Err(WorkloadError::DuplicateTarget { op: op.op, target: op.target }.into());
                }
                let q = alloc(sink, ObjectKind::NetQueue, 0, key, false)?;
                access(sink, q, HEADER_BYTES, true)?;
                self.sockets.insert(op.target, q);
            }
            OpKind::Send | OpKind::Recv => {
                let q = *self.sockets.get(&op.target).ok_or(WorkloadError::UnknownTarget { op: op.op, target: op.target })?;
                let skb = alloc(sink, ObjectKind::Skbuff, op.len.div_ceil(PAGE_SIZE), key, false)?;
                let send = op.op == OpKind::Send;
                if send {
                    access(sink, skb, op.len, true)?;
                } else {
                    sink.emit(MicroEvent::Cpu { ns: self.cfg.tag_cost_ns })?;
                    sink.emit(MicroEvent::Nic { bytes: op.len })?;
                }
                for _ in 0..self.cfg.stack_layers {
                    access(sink, skb, HEADER_BYTES, !send)?;
                }
                access(sink, q, META_BYTES, true)?;
                if send {
                    sink.emit(MicroEvent::Nic { bytes: op.len })?;
                } else {
                    access(sink, skb, op.len, false)?;
                }
                free(sink, skb)?;
            }
            OpKind::SockClose => {
                let q = self.sockets.remove(&op.target).ok_or(WorkloadError::UnknownTarget { op: op.op, target: op.target })?;
                free(sink, q)?;
                sink.emit(MicroEvent::Close { kloc: key })?;
                sink.emit(MicroEvent::Delete { kloc: key })?;
            }
            OpKind::AppTouch => {
                let (first, end) = page_span(op.offset, op.len);
                for page in first..end {
                    sink.emit(MicroEvent::AppTouch { region: op.target, page, bytes: overlap(page, op.offset, op.len) })?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cached_runs_match_a_plain_set() {
        let mut f = FileState {
            size: 0,
            pages: BTreeMap::new(),
            radix: BTreeMap::new(),
            inode: ObjectId(0),
            dentry: ObjectId(1),
            journals: Vec::new(),
            dirty: 0,
            ra: ReadaheadState::new(0, PrefetchConfig::default()),
            runs: BTreeMap::new(),
        };
        let mut set = std::collections::BTreeSet::new();
        for p in [5, 6, 9, 7, 0, 8, 20, 2, 1, 19] {
            f.mark_cached(p);
            set.insert(p);
            let want: Vec<u64> = (0..24).filter(|q| !set.contains(q)).collect();
            assert_eq!(f.gaps(0, 24), want);
            let want: Vec<u64> = (6..10).filter(|q| !set.contains(q)).collect();
            assert_eq!(f.gaps(6, 10), want);
        }
        assert_eq!(f.runs.len(), 3);
    }

    fn run(ops: &[TraceOp]) -> (Expander, Recorder) {
        let mut e = Expander::new(ExpandConfig::default());
        let mut r = Recorder::default();
        for op in ops {
            e.expand(op, &mut r).unwrap();
        }
        (e, r)
    }

    fn op(kind: OpKind, target: u64, offset: u64, len: u64) -> TraceOp {
        TraceOp::new(0, 0, kind, target, offset, len)
    }

    #[test]
    fn create_fans_out() {
        let (_, r) = run(&[op(OpKind::Create, 1, 0, 0)]);
        for k in [ObjectKind::Inode, ObjectKind::Dentry, ObjectKind::JournalRecord] {
            assert_eq!(r.count_allocs(k), 1);
        }
    }

    #[test]
    fn write_two_pages_fresh_file() {
        let (mut e, mut r) = run(&[op(OpKind::Create, 1, 0, 0)]);
        r.clear();
        e.expand(&op(OpKind::Write, 1, 0, 8192), &mut r).unwrap();
        assert_eq!(r.count_allocs(ObjectKind::CachePage), 2);
        assert_eq!(r.count_allocs(ObjectKind::RadixNode), 1);
        assert_eq!(r.count_allocs(ObjectKind::JournalRecord), 1);
        assert_eq!(r.count_disk(), 0);
    }

    #[test]
    fn radix_node_per_fanout_pages() {
        let (_, r) = run(&[op(OpKind::Create, 1, 0, 0), op(OpKind::Write, 1, 0, 65 * PAGE_SIZE)]);
        assert_eq!(r.count_allocs(ObjectKind::RadixNode), 2);
    }

    #[test]
    fn cached_read_is_free_of_allocs_and_disk() {
        let (mut e, mut r) = run(&[op(OpKind::Create, 1, 0, 0), op(OpKind::Write, 1, 0, 16384)]);
        r.clear();
        e.expand(&op(OpKind::Read, 1, 4096, 8192), &mut r).unwrap();
        assert!(r.events.iter().all(|ev| !matches!(ev, MicroEvent::Alloc { .. } | MicroEvent::Disk { .. })), "{:?}", r.events);
    }

    #[test]
    fn read_miss_goes_to_disk_then_prefetches() {
        let (mut e, mut r) = run(&[op(OpKind::Open, 1, 0, 1 << 20)]);
        r.clear();
        e.expand(&op(OpKind::Read, 1, 0, 4096), &mut r).unwrap();
        assert_eq!(r.count_allocs(ObjectKind::CachePage), 33);
        let disk: Vec<_> = r.events.iter().filter_map(|ev| match ev {
            MicroEvent::Disk { bytes, mode } => Some((*bytes, *mode)),
            _ => None,
        }).collect();
        assert_eq!(disk, vec![(4096, DiskMode::Rand), (32 * 4096, DiskMode::Seq)]);
        assert_eq!(e.stats().prefetch_pages, 32);
        e.expand(&op(OpKind::Read, 1, 4096, 4096), &mut r).unwrap();
        assert_eq!(e.stats().prefetch_hits, 1);
    }

    #[test]
    fn fsync_frees_buffers() {
        let (mut e, mut r) = run(&[op(OpKind::Create, 1, 0, 0), op(OpKind::Write, 1, 0, 3 << 20)]);
        r.clear();
        e.expand(&op(OpKind::Fsync, 1, 0, 0), &mut r).unwrap();
        assert_eq!(r.count_allocs(ObjectKind::BlockIo), 3);
        let frees = r.events.iter().filter(|ev| matches!(ev, MicroEvent::Free { .. })).count();
        assert_eq!(frees, 5);
        assert!(r.events.contains(&MicroEvent::Disk { bytes: 3 << 20, mode: DiskMode::Seq }));
    }

    #[test]
    fn recv_one_kilobyte() {
        let (mut e, mut r) = run(&[TraceOp::new(0, 0, OpKind::SockOpen, 4, 0, 0)]);
        r.clear();
        e.expand(&TraceOp::new(0, 0, OpKind::Recv, 4, 0, 1024), &mut r).unwrap();
        assert_eq!(r.events[0], MicroEvent::Alloc { kind: ObjectKind::Skbuff, data_pages: 1, kloc: KlocKey::Socket(4), prefetch: false });
        assert!(matches!(r.events.last(), Some(MicroEvent::Free { object: ObjectId(1) })));
        assert!(r.events.contains(&MicroEvent::Cpu { ns: 200 }));
    }

    #[test]
    fn unknown_targets() {
        let mut e = Expander::new(ExpandConfig::default());
        let mut r = Recorder::default();
        for kind in [OpKind::Read, OpKind::Write, OpKind::Close, OpKind::Delete, OpKind::Send, OpKind::SockClose] {
            let err = e.expand(&op(kind, 9, 0, 1), &mut r).unwrap_err();
            assert_eq!(err, WorkloadError::UnknownTarget { op: kind, target: 9 });
        }
    }

    #[test]
    fn delete_frees_everything_it_allocated() {
        let (_, r) = run(&[
            op(OpKind::Create, 1, 0, 0),
            op(OpKind::Write, 1, 0, 100_000),
            op(OpKind::Close, 1, 0, 0),
            op(OpKind::Delete, 1, 0, 0),
        ]);
        let allocs = r.events.iter().filter(|ev| matches!(ev, MicroEvent::Alloc { .. })).count();
        let frees = r.events.iter().filter(|ev| matches!(ev, MicroEvent::Free { .. })).count();
        assert_eq!(allocs, frees);
    }
}
