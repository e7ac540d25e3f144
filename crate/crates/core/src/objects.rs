//! Kernel object allocation.
//!
//! Sub-page objects are packed either into per-kind slab frames (first-fit,
//! tier-aware) or into a per-context vmalloc region. Whole-page parts of an
//! object (a journal block, the two pages of a network queue, skbuff data
//! pages) take dedicated frames of the same grouping. Page-cache pages always
//! own exactly one cache frame.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::kloc::KlocKey;
use crate::memory::{FrameId, FrameKind, MemError, TierId, TierSystem, PAGE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectKind {
    Inode,
    Dentry,
    RadixNode,
    JournalRecord,
    BlockIo,
    CachePage,
    Skbuff,
    NetQueue,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 8] = [
        ObjectKind::Inode,
        ObjectKind::Dentry,
        ObjectKind::RadixNode,
        ObjectKind::JournalRecord,
        ObjectKind::BlockIo,
        ObjectKind::CachePage,
        ObjectKind::Skbuff,
        ObjectKind::NetQueue,
    ];

    /// Short-lived I/O buffers, as opposed to cache pages and long-lived metadata.
    pub const KERNEL_BUFFERS: [ObjectKind; 4] =
        [ObjectKind::RadixNode, ObjectKind::JournalRecord, ObjectKind::BlockIo, ObjectKind::Skbuff];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_network(self) -> bool {
        matches!(self, ObjectKind::Skbuff | ObjectKind::NetQueue)
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Inode => "inode",
            ObjectKind::Dentry => "dentry",
            ObjectKind::RadixNode => "radix_node",
            ObjectKind::JournalRecord => "journal_record",
            ObjectKind::BlockIo => "block_io",
            ObjectKind::CachePage => "cache_page",
            ObjectKind::Skbuff => "skbuff",
            ObjectKind::NetQueue => "net_queue",
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown object kind `{s}`"))
    }
}

/// Per-kind object sizes in bytes. `CachePage` is fixed at one page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectSizes([u64; 8]);

impl Default for ObjectSizes {
    fn default() -> Self {
        let mut s = [0; 8];
        s[ObjectKind::Inode.index()] = 1024;
        s[ObjectKind::Dentry.index()] = 192;
        s[ObjectKind::RadixNode.index()] = 576;
        s[ObjectKind::JournalRecord.index()] = 4096;
        s[ObjectKind::BlockIo.index()] = 384;
        s[ObjectKind::CachePage.index()] = PAGE_SIZE;
        s[ObjectKind::Skbuff.index()] = 256;
        s[ObjectKind::NetQueue.index()] = 8192;
        Self(s)
    }
}

impl ObjectSizes {
    pub fn get(&self, kind: ObjectKind) -> u64 {
        self.0[kind.index()]
    }

    pub fn set(&mut self, kind: ObjectKind, bytes: u64) -> Result<(), String> {
        if kind == ObjectKind::CachePage && bytes != PAGE_SIZE {
            return Err("cache_page size is fixed at 4096".into());
        }
        if bytes == 0 {
            return Err(format!("{kind} size must be positive"));
        }
        self.0[kind.index()] = bytes;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(pub u64);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "obj#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Slab,
    Vmalloc,
}

#[derive(Debug, Clone)]
pub struct KernelObject {
    pub object_id: ObjectId,
    pub kind: ObjectKind,
    pub kloc_id: Option<KlocKey>,
    /// Packed host frame first (if any), then dedicated frames.
    pub frame_ids: Vec<FrameId>,
    pub alloc_ns: u64,
    pub free_ns: Option<u64>,
    packed_bytes: u64,
}

impl KernelObject {
    pub fn is_live(&self) -> bool {
        self.free_ns.is_none()
    }

    /// Number of whole frames this object owns outright.
    fn dedicated(&self) -> &[FrameId] {
        if self.packed_bytes > 0 {
            &self.frame_ids[1..]
        } else {
            &self.frame_ids
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmallocRegion {
    pub kloc_id: KlocKey,
    pub frame_ids: Vec<FrameId>,
    /// Index of the frame the next packed object is tried in first.
    pub cursor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectAlloc {
    pub object_id: ObjectId,
    pub landed_tier: TierId,
    /// Frames newly taken from the tier system for this object.
    pub new_frames: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LifetimeStats {
    pub count: u64,
    pub mean_ns: Option<f64>,
    pub p50_ns: Option<u64>,
    pub p99_ns: Option<u64>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ObjError {
    #[error("unknown {0}")]
    UnknownObject(ObjectId),
    #[error("{0} freed twice")]
    DoubleFree(ObjectId),
    #[error("vmalloc grouping requires an owning context")]
    MissingKloc,
    #[error(transparent)]
    Mem(#[from] MemError),
}

/// Ledger of every kernel object ever allocated.
#[derive(Debug, Clone, Default)]
pub struct ObjectStore {
    sizes: ObjectSizes,
    objects: Vec<KernelObject>,
    slab_partial: BTreeMap<(ObjectKind, TierId), BTreeSet<FrameId>>,
    regions: BTreeMap<KlocKey, VmallocRegion>,
    lifetimes: [Vec<u64>; 8],
    alloc_count: [u64; 8],
    live_count: [u64; 8],
    epoch: u64,
}

enum Host {
    Slab(ObjectKind),
    Region(KlocKey),
}

impl ObjectStore {
    pub fn new(sizes: ObjectSizes) -> Self {
        Self { sizes, ..Self::default() }
    }

    pub fn sizes(&self) -> &ObjectSizes {
        &self.sizes
    }

    pub fn get(&self, id: ObjectId) -> Option<&KernelObject> {
        self.objects.get(id.0 as usize)
    }

    pub fn live(&self, id: ObjectId) -> Option<&KernelObject> {
        self.get(id).filter(|o| o.is_live())
    }

    pub fn region(&self, kloc: KlocKey) -> Option<&VmallocRegion> {
        self.regions.get(&kloc)
    }

    /// Bumped when an object is freed or changes owner.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn alloc_count(&self, kind: ObjectKind) -> u64 {
        self.alloc_count[kind.index()]
    }

    pub fn live_count(&self, kind: ObjectKind) -> u64 {
        self.live_count[kind.index()]
    }

    pub fn freed_count(&self, kind: ObjectKind) -> u64 {
        self.lifetimes[kind.index()].len() as u64
    }

    pub fn live_objects(&self) -> impl Iterator<Item = &KernelObject> {
        self.objects.iter().filter(|o| o.is_live())
    }

    fn split(&self, kind: ObjectKind, data_pages: u64) -> (u64, u64) {
        let size = self.sizes.get(kind);
        (size % PAGE_SIZE, size / PAGE_SIZE + data_pages)
    }

    /// Frames an allocation would newly take if placed in `tier`; used to
    /// decide whether room must be made first.
    pub fn pages_needed(
        &self,
        tiers: &TierSystem,
        kind: ObjectKind,
        data_pages: u64,
        kloc: Option<KlocKey>,
        grouping: Grouping,
        tier: TierId,
    ) -> u64 {
        let (packed, dedicated) = self.split(kind, data_pages);
        let host_needed = packed > 0 && self.find_host(tiers, &self.host_for(kind, kloc, grouping), packed, tier).is_none();
        dedicated + u64::from(host_needed)
    }

    fn host_for(&self, kind: ObjectKind, kloc: Option<KlocKey>, grouping: Grouping) -> Host {
        match (kind, grouping, kloc) {
            (_, Grouping::Vmalloc, Some(k)) => Host::Region(k),
            _ => Host::Slab(kind),
        }
    }

    fn find_host(&self, tiers: &TierSystem, host: &Host, bytes: u64, tier: TierId) -> Option<FrameId> {
        match host {
            Host::Slab(kind) => self.slab_partial.get(&(*kind, tier)).and_then(|set| set.first().copied()),
            Host::Region(k) => {
                let region = self.regions.get(k)?;
                let n = region.frame_ids.len();
                (0..n).map(|i| region.frame_ids[(region.cursor + i) % n]).find(|id| {
                    let f = tiers.frame(*id).expect("region frames exist");
                    f.tier == tier && f.used_bytes + bytes <= PAGE_SIZE
                })
            }
        }
    }

    fn new_frame(
        &mut self,
        tiers: &mut TierSystem,
        kind: FrameKind,
        kloc: Option<KlocKey>,
        preferred: TierId,
        now: u64,
    ) -> Result<(FrameId, TierId), MemError> {
        let out = tiers.allocate_frame(kind, preferred, now)?;
        if matches!(kind, FrameKind::Cache | FrameKind::Vmalloc) {
            tiers.frame_mut(out.frame_id).expect("just allocated").owner_kloc = kloc;
        }
        if kind == FrameKind::Vmalloc {
            let k = kloc.expect("vmalloc frames have an owner");
            self.regions
                .entry(k)
                .or_insert_with(|| VmallocRegion { kloc_id: k, frame_ids: Vec::new(), cursor: 0 })
                .frame_ids
                .push(out.frame_id);
        }
        Ok((out.frame_id, out.landed_tier))
    }

    /// Allocates one object. `data_pages` adds whole pages beyond the kind's
    /// fixed size (skbuff payload).
    #[allow(clippy::too_many_arguments)]
    pub fn alloc_object(
        &mut self,
        tiers: &mut TierSystem,
        kind: ObjectKind,
        data_pages: u64,
        kloc: Option<KlocKey>,
        preferred: TierId,
        now: u64,
        grouping: Grouping,
    ) -> Result<ObjectAlloc, ObjError> {
        if grouping == Grouping::Vmalloc && kloc.is_none() && kind != ObjectKind::CachePage {
            return Err(ObjError::MissingKloc);
        }
        let id = ObjectId(self.objects.len() as u64);
        let mut frame_ids = Vec::new();
        let mut new_frames = 0;
        let mut landed = None;

        if kind == ObjectKind::CachePage {
            let (fid, tier) = self.new_frame(tiers, FrameKind::Cache, kloc, preferred, now)?;
            let f = tiers.frame_mut(fid).expect("just allocated");
            f.used_bytes = PAGE_SIZE;
            f.resident_objects.push(id);
            frame_ids.push(fid);
            new_frames = 1;
            landed = Some(tier);
        } else {
            let (packed, dedicated) = self.split(kind, data_pages);
            let frame_kind = match grouping {
                Grouping::Slab => FrameKind::Slab,
                Grouping::Vmalloc => FrameKind::Vmalloc,
            };
            let frame_kloc = if grouping == Grouping::Vmalloc { kloc } else { None };
            if packed > 0 {
                let host = self.host_for(kind, kloc, grouping);
                let found = self.find_host(tiers, &host, packed, preferred);
                let fid = match found {
                    Some(fid) => fid,
                    None if tiers.free_pages(preferred) > 0 => {
                        new_frames += 1;
                        self.new_frame(tiers, frame_kind, frame_kloc, preferred, now)?.0
                    }
                    None => match self.find_host(tiers, &host, packed, preferred.other()) {
                        Some(fid) => fid,
                        None => {
                            new_frames += 1;
                            self.new_frame(tiers, frame_kind, frame_kloc, preferred, now)?.0
                        }
                    },
                };
                let f = tiers.frame_mut(fid).expect("host exists");
                f.used_bytes += packed;
                f.resident_objects.push(id);
                f.last_access_ns = f.last_access_ns.max(now);
                landed = Some(f.tier);
                let (tier, used) = (f.tier, f.used_bytes);
                match host {
                    Host::Slab(k) => {
                        let set = self.slab_partial.entry((k, tier)).or_default();
                        if used + packed <= PAGE_SIZE {
                            set.insert(fid);
                        } else {
                            set.remove(&fid);
                        }
                    }
                    Host::Region(k) => {
                        let region = self.regions.get_mut(&k).expect("region exists");
                        if let Some(pos) = region.frame_ids.iter().position(|x| *x == fid) {
                            region.cursor = pos;
                        }
                    }
                }
                frame_ids.push(fid);
            }
            for _ in 0..dedicated {
                let (fid, tier) = self.new_frame(tiers, frame_kind, frame_kloc, preferred, now)?;
                let f = tiers.frame_mut(fid).expect("just allocated");
                f.used_bytes = PAGE_SIZE;
                f.resident_objects.push(id);
                frame_ids.push(fid);
                new_frames += 1;
                landed.get_or_insert(tier);
            }
        }

        let (packed_bytes, _) = if kind == ObjectKind::CachePage { (0, 1) } else { self.split(kind, data_pages) };
        self.objects.push(KernelObject {
            object_id: id,
            kind,
            kloc_id: kloc,
            frame_ids,
            alloc_ns: now,
            free_ns: None,
            packed_bytes,
        });
        self.alloc_count[kind.index()] += 1;
        self.live_count[kind.index()] += 1;
        Ok(ObjectAlloc { object_id: id, landed_tier: landed.unwrap_or(preferred), new_frames })
    }

    /// Frees an object, releasing any frame it leaves empty.
    pub fn free_object(&mut self, tiers: &mut TierSystem, id: ObjectId, now: u64) -> Result<(), ObjError> {
        self.epoch += 1;
        let obj = self.objects.get(id.0 as usize).ok_or(ObjError::UnknownObject(id))?;
        if !obj.is_live() {
            return Err(ObjError::DoubleFree(id));
        }
        let kind = obj.kind;
        let packed = obj.packed_bytes;
        let host = if packed > 0 { obj.frame_ids.first().copied() } else { None };
        let dedicated = obj.dedicated().to_vec();
        let lifetime = now.saturating_sub(obj.alloc_ns);

        if let Some(fid) = host {
            let f = tiers.frame_mut(fid).expect("host frame exists");
            f.resident_objects.retain(|o| *o != id);
            f.used_bytes -= packed;
            let (tier, fkind, empty, owner) = (f.tier, f.kind, f.resident_objects.is_empty(), f.owner_kloc);
            if empty {
                self.release_frame(tiers, fid, fkind, owner, now)?;
            } else if fkind == FrameKind::Slab {
                self.slab_partial.entry((kind, tier)).or_default().insert(fid);
            }
        }
        for fid in dedicated {
            let f = tiers.frame_mut(fid).expect("dedicated frame exists");
            f.resident_objects.retain(|o| *o != id);
            let (fkind, owner) = (f.kind, f.owner_kloc);
            self.release_frame(tiers, fid, fkind, owner, now)?;
        }

        let obj = &mut self.objects[id.0 as usize];
        obj.free_ns = Some(now);
        obj.frame_ids = Vec::new();
        obj.kloc_id = None;
        self.lifetimes[kind.index()].push(lifetime);
        self.live_count[kind.index()] -= 1;
        Ok(())
    }

    fn release_frame(
        &mut self,
        tiers: &mut TierSystem,
        fid: FrameId,
        kind: FrameKind,
        owner: Option<KlocKey>,
        now: u64,
    ) -> Result<(), MemError> {
        match kind {
            FrameKind::Slab => {
                for set in self.slab_partial.values_mut() {
                    set.remove(&fid);
                }
            }
            FrameKind::Vmalloc => {
                if let Some(k) = owner {
                    if let Some(region) = self.regions.get_mut(&k) {
                        region.frame_ids.retain(|x| *x != fid);
                        region.cursor = 0;
                        if region.frame_ids.is_empty() {
                            self.regions.remove(&k);
                        }
                    }
                }
            }
            _ => {}
        }
        tiers.free_frame(fid, now)
    }

    /// Drops the ownership link of a live object (page-cache entries after close).
    pub fn detach(&mut self, id: ObjectId) {
        self.epoch += 1;
        if let Some(o) = self.objects.get_mut(id.0 as usize) {
            o.kloc_id = None;
        }
    }

    /// Re-attaches an unowned live object to a context.
    pub fn attach(&mut self, id: ObjectId, kloc: KlocKey) {
        self.epoch += 1;
        if let Some(o) = self.objects.get_mut(id.0 as usize).filter(|o| o.is_live()) {
            o.kloc_id = Some(kloc);
        }
    }

    pub fn lifetime_stats(&self, kinds: &[ObjectKind]) -> LifetimeStats {
        let mut all: Vec<u64> = kinds.iter().flat_map(|k| self.lifetimes[k.index()].iter().copied()).collect();
        if all.is_empty() {
            return LifetimeStats { count: 0, mean_ns: None, p50_ns: None, p99_ns: None };
        }
        all.sort_unstable();
        let n = all.len();
        let mean = all.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        let rank = |p: f64| all[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        LifetimeStats { count: n as u64, mean_ns: Some(mean), p50_ns: Some(rank(0.50)), p99_ns: Some(rank(0.99)) }
    }

    /// True iff any object resident on the frame belongs to a context the
    /// oracle reports as active.
    pub fn is_shared_with_active<F>(&self, tiers: &TierSystem, frame: FrameId, mut is_active: F) -> Result<bool, MemError>
    where
        F: FnMut(KlocKey) -> bool,
    {
        let f = tiers.frame(frame).ok_or(MemError::UnknownFrame(frame))?;
        Ok(f
            .resident_objects
            .iter()
            .filter_map(|id| self.get(*id).and_then(|o| o.kloc_id))
            .any(&mut is_active))
    }

    /// True iff every object on the frame is owned by `kloc`.
    pub fn exclusively_owned(&self, tiers: &TierSystem, frame: FrameId, kloc: KlocKey) -> bool {
        tiers.frame(frame).is_some_and(|f| {
            !f.resident_objects.is_empty()
                && f.resident_objects.iter().all(|id| self.get(*id).and_then(|o| o.kloc_id) == Some(kloc))
        })
    }

    /// Packing and ledger audit against the tier system.
    pub fn check_invariants(&self, tiers: &TierSystem) -> Result<(), String> {
        for f in tiers.frames() {
            if f.used_bytes > PAGE_SIZE {
                return Err(format!("{} overfull: {} bytes", f.frame_id, f.used_bytes));
            }
            let mut first_kind = None;
            for id in &f.resident_objects {
                let o = self.live(*id).ok_or_else(|| format!("{} hosts dead {id}", f.frame_id))?;
                match f.kind {
                    FrameKind::Slab => {
                        if *first_kind.get_or_insert(o.kind) != o.kind {
                            return Err(format!("slab {} mixes kinds", f.frame_id));
                        }
                    }
                    FrameKind::Vmalloc if o.kloc_id.is_some() && o.kloc_id != f.owner_kloc => {
                        return Err(format!("vmalloc {} hosts a foreign object", f.frame_id));
                    }
                    _ => {}
                }
            }
            if f.kind != FrameKind::App && f.resident_objects.is_empty() {
                return Err(format!("{} is an empty kernel frame", f.frame_id));
            }
        }
        for o in self.live_objects() {
            for fid in &o.frame_ids {
                let f = tiers.frame(*fid).ok_or_else(|| format!("{} lost {fid}", o.object_id))?;
                if !f.resident_objects.contains(&o.object_id) {
                    return Err(format!("{fid} does not list {}", o.object_id));
                }
            }
        }
        for kind in ObjectKind::ALL {
            if self.freed_count(kind) + self.live_count(kind) != self.alloc_count(kind) {
                return Err(format!("{kind}: ledger does not balance"));
            }
        }
        Ok(())
    }
}
