//! Two-tier memory model.
//!
//! Owns every page frame in the system, the per-tier ACTIVE/INACTIVE LRU
//! lists, and the access/migration cost model. LRU lists are intrusive
//! doubly linked lists threaded through the frame table so that touch,
//! removal and tail walks are all O(1) per frame.

use std::fmt;

use thiserror::Error;

use crate::kloc::KlocKey;
use crate::objects::ObjectId;

/// Size of one page frame in bytes.
pub const PAGE_SIZE: u64 = 4096;

const NS_PER_SEC: u128 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TierId {
    Fast,
    Slow,
}

impl TierId {
    pub const ALL: [TierId; 2] = [TierId::Fast, TierId::Slow];

    pub fn index(self) -> usize {
        match self {
            TierId::Fast => 0,
            TierId::Slow => 1,
        }
    }

    pub fn other(self) -> TierId {
        match self {
            TierId::Fast => TierId::Slow,
            TierId::Slow => TierId::Fast,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TierId::Fast => "fast",
            TierId::Slow => "slow",
        }
    }
}

impl fmt::Display for TierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TierConfig {
    pub tier_id: TierId,
    /// Number of 4 KiB frames.
    pub capacity_pages: u64,
    pub access_latency_ns: u64,
    pub bandwidth_bytes_per_sec: u64,
}

impl TierConfig {
    pub fn validate(&self) -> Result<(), MemError> {
        if self.capacity_pages == 0 {
            return Err(MemError::InvalidConfig(format!("{} tier has zero capacity", self.tier_id)));
        }
        if self.bandwidth_bytes_per_sec == 0 {
            return Err(MemError::InvalidConfig(format!("{} tier has zero bandwidth", self.tier_id)));
        }
        Ok(())
    }

    /// `latency + ceil(bytes * 1e9 / bandwidth)`.
    pub fn access_cost_ns(&self, bytes: u64) -> u64 {
        self.access_latency_ns + transfer_ns(bytes, self.bandwidth_bytes_per_sec)
    }
}

/// Nanoseconds to move `bytes` at `bandwidth` bytes/sec, rounded up.
pub fn transfer_ns(bytes: u64, bandwidth: u64) -> u64 {
    let num = bytes as u128 * NS_PER_SEC;
    num.div_ceil(bandwidth as u128) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameKind {
    App,
    Cache,
    Slab,
    Vmalloc,
}

impl FrameKind {
    pub const ALL: [FrameKind; 4] = [FrameKind::App, FrameKind::Cache, FrameKind::Slab, FrameKind::Vmalloc];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Kinds reachable through a page-table mapping pay a TLB shootdown on migration.
    pub fn is_mapped(self) -> bool {
        !matches!(self, FrameKind::Slab)
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameKind::App => "app",
            FrameKind::Cache => "cache",
            FrameKind::Slab => "slab",
            FrameKind::Vmalloc => "vmalloc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LruList {
    Active,
    Inactive,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameId(pub u64);

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "frame#{}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct PageFrame {
    pub frame_id: FrameId,
    pub tier: TierId,
    pub kind: FrameKind,
    pub owner_kloc: Option<KlocKey>,
    pub resident_objects: Vec<ObjectId>,
    /// Bytes of this frame occupied by resident objects.
    pub used_bytes: u64,
    pub last_access_ns: u64,
    pub migration_count: u8,
    pub pinned: bool,
    pub lru_list: LruList,
    prev: Option<FrameId>,
    next: Option<FrameId>,
}

/// Fixed migration overheads. Copy time is derived from tier bandwidths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MigrationCostModel {
    pub tlb_shootdown_ns: u64,
}

impl Default for MigrationCostModel {
    fn default() -> Self {
        Self { tlb_shootdown_ns: 4000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocOutcome {
    pub frame_id: FrameId,
    pub landed_tier: TierId,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemError {
    #[error("invalid tier configuration: {0}")]
    InvalidConfig(String),
    #[error("out of memory: both tiers are full")]
    OutOfMemory,
    #[error("{0} still hosts live objects")]
    FrameBusy(FrameId),
    #[error("unknown {0}")]
    UnknownFrame(FrameId),
    #[error("{0} is pinned in fast memory")]
    Pinned(FrameId),
    #[error("{0} is a slab frame and cannot migrate")]
    NonMigratableKind(FrameId),
    #[error("destination tier {0} is full")]
    DestFull(TierId),
}

#[derive(Debug, Clone, Copy, Default)]
struct ListHead {
    head: Option<FrameId>,
    tail: Option<FrameId>,
    len: u64,
}

#[derive(Debug, Clone)]
struct TierState {
    config: TierConfig,
    used_pages: u64,
    active: ListHead,
    inactive: ListHead,
}

impl TierState {
    fn list(&self, which: LruList) -> &ListHead {
        match which {
            LruList::Active => &self.active,
            LruList::Inactive => &self.inactive,
            LruList::None => unreachable!("no list head for LruList::None"),
        }
    }

    fn list_mut(&mut self, which: LruList) -> &mut ListHead {
        match which {
            LruList::Active => &mut self.active,
            LruList::Inactive => &mut self.inactive,
            LruList::None => unreachable!("no list head for LruList::None"),
        }
    }
}

/// The two memory tiers and every frame allocated from them.
#[derive(Debug, Clone)]
pub struct TierSystem {
    tiers: [TierState; 2],
    frames: Vec<Option<PageFrame>>,
    free_slots: Vec<u64>,
    kind_pages: [[u64; 4]; 2],
    cost: MigrationCostModel,
    pin_threshold: u32,
    fast_epoch: u64,
}

impl TierSystem {
    pub fn new(fast: TierConfig, slow: TierConfig) -> Result<Self, MemError> {
        Self::with_cost(fast, slow, MigrationCostModel::default(), 3)
    }

    pub fn with_cost(
        fast: TierConfig,
        slow: TierConfig,
        cost: MigrationCostModel,
        pin_threshold: u32,
    ) -> Result<Self, MemError> {
        if fast.tier_id != TierId::Fast || slow.tier_id != TierId::Slow {
            return Err(MemError::InvalidConfig("tier ids must be (fast, slow)".into()));
        }
        fast.validate()?;
        slow.validate()?;
        let state = |config| TierState {
            config,
            used_pages: 0,
            active: ListHead::default(),
            inactive: ListHead::default(),
        };
        Ok(Self {
            tiers: [state(fast), state(slow)],
            frames: Vec::new(),
            free_slots: Vec::new(),
            kind_pages: [[0; 4]; 2],
            cost,
            pin_threshold,
            fast_epoch: 0,
        })
    }

    pub fn config(&self, tier: TierId) -> &TierConfig {
        &self.tiers[tier.index()].config
    }

    pub fn cost_model(&self) -> MigrationCostModel {
        self.cost
    }

    pub fn pin_threshold(&self) -> u32 {
        self.pin_threshold
    }

    pub fn used_pages(&self, tier: TierId) -> u64 {
        self.tiers[tier.index()].used_pages
    }

    pub fn free_pages(&self, tier: TierId) -> u64 {
        let t = &self.tiers[tier.index()];
        t.config.capacity_pages - t.used_pages
    }

    /// Live frames of `kind` currently in `tier`.
    pub fn kind_pages(&self, tier: TierId, kind: FrameKind) -> u64 {
        self.kind_pages[tier.index()][kind.index()]
    }

    pub fn list_len(&self, tier: TierId, which: LruList) -> u64 {
        self.tiers[tier.index()].list(which).len
    }

    pub fn frame(&self, id: FrameId) -> Option<&PageFrame> {
        self.frames.get(id.0 as usize).and_then(Option::as_ref)
    }

    pub fn frame_mut(&mut self, id: FrameId) -> Option<&mut PageFrame> {
        if self.frame(id).is_some_and(|f| f.tier == TierId::Fast && f.kind != FrameKind::Slab) {
            self.fast_epoch += 1;
        }
        self.slot_mut(id)
    }

    fn slot_mut(&mut self, id: FrameId) -> Option<&mut PageFrame> {
        self.frames.get_mut(id.0 as usize).and_then(Option::as_mut)
    }

    /// Bumped whenever the set of fast frames a demotion scan could pick may
    /// have grown: frames arriving, leaving, aging or being edited. Plain
    /// accesses leave it alone.
    pub fn fast_epoch(&self) -> u64 {
        self.fast_epoch
    }

    fn get(&self, id: FrameId) -> Result<&PageFrame, MemError> {
        self.frame(id).ok_or(MemError::UnknownFrame(id))
    }

    pub fn frames(&self) -> impl Iterator<Item = &PageFrame> {
        self.frames.iter().filter_map(Option::as_ref)
    }

    pub fn live_frame_count(&self) -> u64 {
        self.used_pages(TierId::Fast) + self.used_pages(TierId::Slow)
    }

    /// Frames of `which` list in `tier`, head (most recent) first.
    pub fn list_frames(&self, tier: TierId, which: LruList) -> Vec<FrameId> {
        let mut out = Vec::new();
        let mut cur = self.tiers[tier.index()].list(which).head;
        while let Some(id) = cur {
            out.push(id);
            cur = self.frame(id).and_then(|f| f.next);
        }
        out
    }

    /// Allocates a frame in `preferred`, falling back to the other tier when full.
    pub fn allocate_frame(&mut self, kind: FrameKind, preferred: TierId, now: u64) -> Result<AllocOutcome, MemError> {
        let tier = if self.free_pages(preferred) > 0 {
            preferred
        } else if self.free_pages(preferred.other()) > 0 {
            preferred.other()
        } else {
            return Err(MemError::OutOfMemory);
        };
        let id = match self.free_slots.pop() {
            Some(slot) => FrameId(slot),
            None => {
                self.frames.push(None);
                FrameId(self.frames.len() as u64 - 1)
            }
        };
        self.frames[id.0 as usize] = Some(PageFrame {
            frame_id: id,
            tier,
            kind,
            owner_kloc: None,
            resident_objects: Vec::new(),
            used_bytes: 0,
            last_access_ns: now,
            migration_count: 0,
            pinned: false,
            lru_list: LruList::None,
            prev: None,
            next: None,
        });
        self.tiers[tier.index()].used_pages += 1;
        self.kind_pages[tier.index()][kind.index()] += 1;
        if tier == TierId::Fast {
            self.fast_epoch += 1;
        }
        self.push_head(id, LruList::Active);
        Ok(AllocOutcome { frame_id: id, landed_tier: tier })
    }

    pub fn free_frame(&mut self, id: FrameId, _now: u64) -> Result<(), MemError> {
        let frame = self.get(id)?;
        if !frame.resident_objects.is_empty() {
            return Err(MemError::FrameBusy(id));
        }
        let (tier, kind) = (frame.tier, frame.kind);
        self.unlink(id);
        self.frames[id.0 as usize] = None;
        self.tiers[tier.index()].used_pages -= 1;
        self.kind_pages[tier.index()][kind.index()] -= 1;
        self.free_slots.push(id.0);
        if tier == TierId::Fast {
            self.fast_epoch += 1;
        }
        Ok(())
    }

    /// Charges one access of `bytes` to the frame and moves it to the head of
    /// its tier's ACTIVE list.
    pub fn charge_access(&mut self, id: FrameId, bytes: u64, _is_write: bool, now: u64) -> Result<u64, MemError> {
        let tier = self.get(id)?.tier;
        let cost = self.config(tier).access_cost_ns(bytes);
        self.unlink(id);
        self.push_head(id, LruList::Active);
        let frame = self.slot_mut(id).expect("checked above");
        frame.last_access_ns = frame.last_access_ns.max(now);
        Ok(cost)
    }

    /// Copy cost of one page between the tiers plus the shootdown for mapped kinds.
    pub fn migration_cost_ns(&self, kind: FrameKind) -> u64 {
        let bw = self
            .config(TierId::Fast)
            .bandwidth_bytes_per_sec
            .min(self.config(TierId::Slow).bandwidth_bytes_per_sec);
        let copy = transfer_ns(PAGE_SIZE, bw);
        if kind.is_mapped() {
            copy + self.cost.tlb_shootdown_ns
        } else {
            copy
        }
    }

    pub fn migrate_frame(&mut self, id: FrameId, dest: TierId, _now: u64) -> Result<u64, MemError> {
        let frame = self.get(id)?;
        if frame.pinned {
            return Err(MemError::Pinned(id));
        }
        if frame.kind == FrameKind::Slab {
            return Err(MemError::NonMigratableKind(id));
        }
        if frame.tier == dest {
            return Ok(0);
        }
        if self.free_pages(dest) == 0 {
            return Err(MemError::DestFull(dest));
        }
        let src = frame.tier;
        let kind = frame.kind;
        self.unlink(id);
        self.tiers[src.index()].used_pages -= 1;
        self.tiers[dest.index()].used_pages += 1;
        self.kind_pages[src.index()][kind.index()] -= 1;
        self.kind_pages[dest.index()][kind.index()] += 1;
        let pin_threshold = self.pin_threshold;
        self.fast_epoch += 1;
        let frame = self.slot_mut(id).expect("checked above");
        frame.tier = dest;
        frame.migration_count = frame.migration_count.saturating_add(1);
        if dest == TierId::Fast && u32::from(frame.migration_count) >= pin_threshold {
            frame.pinned = true;
        }
        let list = if dest == TierId::Slow { LruList::Inactive } else { LruList::Active };
        self.push_head(id, list);
        Ok(self.migration_cost_ns(kind))
    }

    /// Up to `n` unpinned, non-slab frames of `tier` accepted by `migratable`,
    /// oldest first: the INACTIVE tail, then (if allowed) the ACTIVE tail.
    pub fn demotion_candidates<F>(&self, tier: TierId, n: usize, allow_active_lru: bool, mut migratable: F) -> Vec<FrameId>
    where
        F: FnMut(&PageFrame) -> bool,
    {
        let mut out = Vec::new();
        let lists: &[LruList] = if allow_active_lru {
            &[LruList::Inactive, LruList::Active]
        } else {
            &[LruList::Inactive]
        };
        for &which in lists {
            let mut cur = self.tiers[tier.index()].list(which).tail;
            while let Some(id) = cur {
                if out.len() >= n {
                    return out;
                }
                let frame = self.frame(id).expect("listed frames exist");
                if !frame.pinned && frame.kind != FrameKind::Slab && migratable(frame) {
                    out.push(id);
                }
                cur = frame.prev;
            }
        }
        out
    }

    /// Moves ACTIVE frames idle longer than `idle_threshold_ns` to the INACTIVE list.
    /// Returns the number of frames aged.
    pub fn age_active(&mut self, tier: TierId, now: u64, idle_threshold_ns: u64) -> u64 {
        let mut aged = 0;
        let mut cur = self.tiers[tier.index()].active.tail;
        while let Some(id) = cur {
            let frame = self.frame(id).expect("listed frames exist");
            let prev = frame.prev;
            if now.saturating_sub(frame.last_access_ns) > idle_threshold_ns {
                self.unlink(id);
                self.push_head(id, LruList::Inactive);
                aged += 1;
            }
            cur = prev;
        }
        if aged > 0 && tier == TierId::Fast {
            self.fast_epoch += 1;
        }
        aged
    }

    fn push_head(&mut self, id: FrameId, which: LruList) {
        let tier = self.frame(id).expect("frame exists").tier;
        let old_head = self.tiers[tier.index()].list(which).head;
        if let Some(h) = old_head {
            self.slot_mut(h).expect("head exists").prev = Some(id);
        }
        {
            let f = self.slot_mut(id).expect("frame exists");
            f.prev = None;
            f.next = old_head;
            f.lru_list = which;
        }
        let list = self.tiers[tier.index()].list_mut(which);
        list.head = Some(id);
        if list.tail.is_none() {
            list.tail = Some(id);
        }
        list.len += 1;
    }

    fn unlink(&mut self, id: FrameId) {
        let (tier, which, prev, next) = {
            let f = self.frame(id).expect("frame exists");
            (f.tier, f.lru_list, f.prev, f.next)
        };
        if which == LruList::None {
            return;
        }
        match prev {
            Some(p) => self.slot_mut(p).expect("prev exists").next = next,
            None => self.tiers[tier.index()].list_mut(which).head = next,
        }
        match next {
            Some(n) => self.slot_mut(n).expect("next exists").prev = prev,
            None => self.tiers[tier.index()].list_mut(which).tail = prev,
        }
        self.tiers[tier.index()].list_mut(which).len -= 1;
        let f = self.slot_mut(id).expect("frame exists");
        f.prev = None;
        f.next = None;
        f.lru_list = LruList::None;
    }

    /// Full structural audit: capacity bounds, list membership and tier agreement.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut counted = [[0u64; 4]; 2];
        let mut on_lists = [0u64; 2];
        for f in self.frames() {
            counted[f.tier.index()][f.kind.index()] += 1;
            on_lists[f.tier.index()] += u64::from(f.lru_list != LruList::None);
        }
        for tier in TierId::ALL {
            let t = &self.tiers[tier.index()];
            if t.used_pages > t.config.capacity_pages {
                return Err(format!("{tier} tier over capacity: {} > {}", t.used_pages, t.config.capacity_pages));
            }
            let count: u64 = counted[tier.index()].iter().sum();
            if count != t.used_pages {
                return Err(format!("{tier} tier used_pages {} but {count} frames", t.used_pages));
            }
            for kind in FrameKind::ALL {
                if counted[tier.index()][kind.index()] != self.kind_pages(tier, kind) {
                    return Err(format!("{tier} tier {} count drifted", kind.name()));
                }
            }
            let mut listed = 0;
            for which in [LruList::Active, LruList::Inactive] {
                let mut n = 0;
                let mut cur = t.list(which).head;
                while let Some(id) = cur {
                    let f = self.get(id).map_err(|e| e.to_string())?;
                    if f.tier != tier || f.lru_list != which {
                        return Err(format!("{id} listed on {tier} {which:?} but is {} {:?}", f.tier, f.lru_list));
                    }
                    if f.pinned && f.tier != TierId::Fast {
                        return Err(format!("{id} pinned outside fast memory"));
                    }
                    n += 1;
                    if n > t.used_pages {
                        return Err(format!("{tier} {which:?} list loops"));
                    }
                    cur = f.next;
                }
                if n != t.list(which).len {
                    return Err(format!("{tier} {which:?} list length mismatch"));
                }
                listed += n;
            }
            if listed != on_lists[tier.index()] {
                return Err(format!("{tier}: {} frames claim a list, {listed} linked", on_lists[tier.index()]));
            }
        }
        Ok(())
    }
}
