//! Placement and migration strategies.

use std::fmt;
use std::str::FromStr;

use crate::kloc::{KlocKey, KlocTable};
use crate::memory::{FrameId, FrameKind, MemError, PageFrame, TierId, TierSystem};
use crate::objects::{Grouping, ObjectKind, ObjectStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    AllSlow,
    AllFast,
    Naive,
    Nimble,
    MigrationOnly,
    KlocNomigrate,
    KlocMigrateFs,
    KlocMigrateFsNw,
    KlocMigrateFsNwPrefetch,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 9] = [
        PolicyKind::AllSlow,
        PolicyKind::AllFast,
        PolicyKind::Naive,
        PolicyKind::Nimble,
        PolicyKind::MigrationOnly,
        PolicyKind::KlocNomigrate,
        PolicyKind::KlocMigrateFs,
        PolicyKind::KlocMigrateFsNw,
        PolicyKind::KlocMigrateFsNwPrefetch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::AllSlow => "all-slow",
            PolicyKind::AllFast => "all-fast",
            PolicyKind::Naive => "naive",
            PolicyKind::Nimble => "nimble",
            PolicyKind::MigrationOnly => "migration-only",
            PolicyKind::KlocNomigrate => "kloc-nomigrate",
            PolicyKind::KlocMigrateFs => "kloc-migrate-fs",
            PolicyKind::KlocMigrateFsNw => "kloc-migrate-fs-nw",
            PolicyKind::KlocMigrateFsNwPrefetch => "kloc-migrate-fs-nw-prefetch",
        }
    }

    pub fn is_kloc(self) -> bool {
        matches!(
            self,
            PolicyKind::KlocNomigrate
                | PolicyKind::KlocMigrateFs
                | PolicyKind::KlocMigrateFsNw
                | PolicyKind::KlocMigrateFsNwPrefetch
        )
    }

    fn groups_sockets(self) -> bool {
        matches!(self, PolicyKind::KlocMigrateFsNw | PolicyKind::KlocMigrateFsNwPrefetch)
    }

    /// Whether objects of this context are tracked in a KLOC at all.
    pub fn groups(self, key: KlocKey) -> bool {
        self.is_kloc() && (key.is_file() || self.groups_sockets())
    }

    pub fn grouping(self, key: Option<KlocKey>) -> Grouping {
        match key {
            Some(k) if self.groups(k) => Grouping::Vmalloc,
            _ => Grouping::Slab,
        }
    }

    /// make_room is available.
    pub fn demotes_under_pressure(self) -> bool {
        matches!(
            self,
            PolicyKind::Nimble
                | PolicyKind::MigrationOnly
                | PolicyKind::KlocMigrateFs
                | PolicyKind::KlocMigrateFsNw
                | PolicyKind::KlocMigrateFsNwPrefetch
        )
    }

    pub fn scans(self) -> bool {
        matches!(self, PolicyKind::Nimble | PolicyKind::MigrationOnly)
    }

    /// Demotion from the active LRU list once the inactive list runs dry.
    pub fn allow_active_lru(self) -> bool {
        self.demotes_under_pressure()
    }

    pub fn demotes_on_inactive(self, key: KlocKey) -> bool {
        match self {
            PolicyKind::KlocMigrateFs => key.is_file(),
            PolicyKind::KlocMigrateFsNw | PolicyKind::KlocMigrateFsNwPrefetch => true,
            _ => false,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanConfig {
    pub interval_ns: u64,
    pub cold_threshold_ns: u64,
    pub cost_per_frame_ns: u64,
    /// Active frames idle this long age onto the inactive list.
    pub idle_threshold_ns: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { interval_ns: 30_000_000_000, cold_threshold_ns: 30_000_000_000, cost_per_frame_ns: 50, idle_threshold_ns: 50_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocTarget {
    Object(ObjectKind),
    AppPage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocRequest {
    pub target: AllocTarget,
    pub kloc_key: Option<KlocKey>,
    pub kloc_active: bool,
    pub is_prefetch: bool,
    pub cpu: u32,
    pub now: u64,
}

pub fn decide_tier(policy: PolicyKind, req: &AllocRequest) -> TierId {
    use PolicyKind::*;
    match policy {
        AllSlow => TierId::Slow,
        AllFast | Naive | Nimble | MigrationOnly => TierId::Fast,
        KlocNomigrate | KlocMigrateFs | KlocMigrateFsNw | KlocMigrateFsNwPrefetch => {
            if req.target == AllocTarget::AppPage {
                return TierId::Fast;
            }
            if req.is_prefetch {
                return prefetch_tier(policy);
            }
            match req.kloc_key {
                Some(k) if policy.groups(k) => {
                    if req.kloc_active {
                        TierId::Fast
                    } else {
                        TierId::Slow
                    }
                }
                Some(_) => TierId::Fast,
                None => TierId::Slow,
            }
        }
    }
}

/// Tier for readahead pages. KLOC variants without prefetch support leave
/// speculative pages in slow memory since nothing has touched them yet.
pub fn prefetch_tier(policy: PolicyKind) -> TierId {
    match policy {
        PolicyKind::AllSlow => TierId::Slow,
        PolicyKind::KlocNomigrate | PolicyKind::KlocMigrateFs | PolicyKind::KlocMigrateFsNw => TierId::Slow,
        _ => TierId::Fast,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MigrationOutcome {
    pub pages: u64,
    pub cost_ns: u64,
    /// Demoted frames that hosted at least one kernel-buffer object.
    pub kernel_buffer_frames: u64,
    /// Migrations that broke a legality rule. Always zero unless a bug slips in.
    pub violations: u64,
    pub frames_scanned: u64,
}

impl MigrationOutcome {
    pub fn absorb(&mut self, o: MigrationOutcome) {
        self.pages += o.pages;
        self.cost_ns += o.cost_ns;
        self.kernel_buffer_frames += o.kernel_buffer_frames;
        self.violations += o.violations;
        self.frames_scanned += o.frames_scanned;
    }
}

/// Shared view of the state every demotion path consults.
pub struct Ctx<'a> {
    pub tiers: &'a mut TierSystem,
    pub objects: &'a ObjectStore,
    pub klocs: &'a KlocTable,
}

fn shared_with_active(objects: &ObjectStore, klocs: &KlocTable, f: &PageFrame) -> bool {
    f.resident_objects
        .iter()
        .filter_map(|id| objects.get(*id).and_then(|o| o.kloc_id))
        .any(|k| klocs.is_active(k))
}

fn hosts_kernel_buffer(objects: &ObjectStore, f: &PageFrame) -> bool {
    f.resident_objects
        .iter()
        .filter_map(|id| objects.get(*id))
        .any(|o| ObjectKind::KERNEL_BUFFERS.contains(&o.kind))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyEngine {
    pub kind: PolicyKind,
    pub scan: ScanConfig,
    /// Divides migration cost for the parallel-copy baseline.
    pub parallel_divisor: u64,
}

impl PolicyEngine {
    pub fn new(kind: PolicyKind, scan: ScanConfig) -> Self {
        Self { kind, scan, parallel_divisor: 1 }
    }

    pub fn decide_tier(&self, req: &AllocRequest) -> TierId {
        decide_tier(self.kind, req)
    }

    fn migratable(&self, objects: &ObjectStore, klocs: &KlocTable, f: &PageFrame) -> bool {
        if f.pinned || f.kind == FrameKind::Slab || f.tier != TierId::Fast {
            return false;
        }
        if self.kind == PolicyKind::Nimble && !matches!(f.kind, FrameKind::App | FrameKind::Cache) {
            return false;
        }
        !shared_with_active(objects, klocs, f)
    }

    fn demote(&self, ctx: &mut Ctx<'_>, id: FrameId, now: u64, out: &mut MigrationOutcome) -> Result<bool, MemError> {
        let f = ctx.tiers.frame(id).ok_or(MemError::UnknownFrame(id))?;
        if f.pinned || f.kind == FrameKind::Slab || shared_with_active(ctx.objects, ctx.klocs, f) {
            out.violations += 1;
        }
        let buffer = hosts_kernel_buffer(ctx.objects, f);
        match ctx.tiers.migrate_frame(id, TierId::Slow, now) {
            Ok(cost) => {
                out.pages += 1;
                out.cost_ns += cost / self.parallel_divisor.max(1);
                out.kernel_buffer_frames += u64::from(buffer);
                Ok(true)
            }
            Err(MemError::DestFull(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Demotes up to `pages_needed` fast frames so an allocation can stay fast.
    pub fn make_room(&self, ctx: &mut Ctx<'_>, pages_needed: u64, now: u64) -> Result<MigrationOutcome, MemError> {
        let mut out = MigrationOutcome::default();
        if pages_needed == 0 || !self.kind.demotes_under_pressure() {
            return Ok(out);
        }
        let (objects, klocs) = (ctx.objects, ctx.klocs);
        let candidates = ctx.tiers.demotion_candidates(TierId::Fast, pages_needed as usize, self.kind.allow_active_lru(), |f| {
            self.migratable(objects, klocs, f)
        });
        for id in candidates {
            if !self.demote(ctx, id, now, &mut out)? {
                break;
            }
        }
        Ok(out)
    }

    /// Demotes the given frames of a context that just went inactive.
    pub fn on_kloc_inactive(
        &self,
        ctx: &mut Ctx<'_>,
        key: KlocKey,
        frames: &[FrameId],
        now: u64,
    ) -> Result<MigrationOutcome, MemError> {
        let mut out = MigrationOutcome::default();
        if !self.kind.demotes_on_inactive(key) {
            return Ok(out);
        }
        for &id in frames {
            let ok = ctx.tiers.frame(id).is_some_and(|f| self.migratable(ctx.objects, ctx.klocs, f));
            if ok && !self.demote(ctx, id, now, &mut out)? {
                break;
            }
        }
        Ok(out)
    }

    /// Ages the fast lists and demotes frames untouched for longer than the
    /// cold threshold. The caller charges `frames_scanned × cost_per_frame`.
    pub fn periodic_scan(&self, ctx: &mut Ctx<'_>, now: u64) -> Result<MigrationOutcome, MemError> {
        let mut out = MigrationOutcome::default();
        if !self.kind.scans() {
            return Ok(out);
        }
        ctx.tiers.age_active(TierId::Fast, now, self.scan.idle_threshold_ns);
        let mut frames = ctx.tiers.list_frames(TierId::Fast, crate::memory::LruList::Inactive);
        frames.extend(ctx.tiers.list_frames(TierId::Fast, crate::memory::LruList::Active));
        out.frames_scanned = frames.len() as u64;
        let (objects, klocs) = (ctx.objects, ctx.klocs);
        let cold: Vec<FrameId> = frames
            .into_iter()
            .filter(|id| {
                ctx.tiers.frame(*id).is_some_and(|f| {
                    now.saturating_sub(f.last_access_ns) > self.scan.cold_threshold_ns && self.migratable(objects, klocs, f)
                })
            })
            .collect();
        for id in cold {
            if !self.demote(ctx, id, now, &mut out)? {
                break;
            }
        }
        Ok(out)
    }

    pub fn scan_cost_ns(&self, o: &MigrationOutcome) -> u64 {
        o.frames_scanned * self.scan.cost_per_frame_ns
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::TierConfig;
    use crate::objects::ObjectSizes;

    fn req(target: AllocTarget, key: Option<KlocKey>, active: bool) -> AllocRequest {
        AllocRequest { target, kloc_key: key, kloc_active: active, is_prefetch: false, cpu: 0, now: 0 }
    }

    fn tiers(fast: u64) -> TierSystem {
        TierSystem::new(
            TierConfig { tier_id: TierId::Fast, capacity_pages: fast, access_latency_ns: 100, bandwidth_bytes_per_sec: 30_000_000_000 },
            TierConfig { tier_id: TierId::Slow, capacity_pages: 64, access_latency_ns: 300, bandwidth_bytes_per_sec: 6_000_000_000 },
        )
        .unwrap()
    }

    #[test]
    fn names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().to_uppercase().parse::<PolicyKind>(), Ok(p));
        }
        assert!("thermostat".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn tier_decisions() {
        let sock = Some(KlocKey::Socket(1));
        let skb = AllocTarget::Object(ObjectKind::Skbuff);
        assert_eq!(decide_tier(PolicyKind::AllSlow, &req(AllocTarget::AppPage, None, false)), TierId::Slow);
        assert_eq!(decide_tier(PolicyKind::AllSlow, &req(skb, sock, true)), TierId::Slow);
        assert_eq!(decide_tier(PolicyKind::KlocMigrateFs, &req(skb, sock, true)), TierId::Fast);
        assert_eq!(decide_tier(PolicyKind::KlocMigrateFs, &req(skb, sock, false)), TierId::Fast);
        assert_eq!(decide_tier(PolicyKind::KlocMigrateFsNw, &req(skb, sock, true)), TierId::Fast);
        assert_eq!(decide_tier(PolicyKind::KlocMigrateFsNw, &req(skb, sock, false)), TierId::Slow);
        let file = Some(KlocKey::FileInode(1));
        let page = AllocTarget::Object(ObjectKind::CachePage);
        assert_eq!(decide_tier(PolicyKind::KlocNomigrate, &req(page, file, false)), TierId::Slow);
        assert_eq!(decide_tier(PolicyKind::KlocNomigrate, &req(AllocTarget::AppPage, None, false)), TierId::Fast);
        let mut pf = req(page, file, true);
        pf.is_prefetch = true;
        assert_eq!(decide_tier(PolicyKind::KlocMigrateFsNwPrefetch, &pf), TierId::Fast);
        assert_eq!(decide_tier(PolicyKind::KlocMigrateFsNw, &pf), TierId::Slow);
        assert_eq!(decide_tier(PolicyKind::MigrationOnly, &pf), TierId::Fast);
        assert_eq!(prefetch_tier(PolicyKind::AllSlow), TierId::Slow);
    }

    #[test]
    fn make_room_takes_inactive_tail() {
        let mut t = tiers(8);
        let s = ObjectStore::new(ObjectSizes::default());
        let k = KlocTable::new();
        let ids: Vec<FrameId> = (0..5).map(|_| t.allocate_frame(FrameKind::Cache, TierId::Fast, 0).unwrap().frame_id).collect();
        for id in &ids {
            t.migrate_frame(*id, TierId::Slow, 0).unwrap();
            t.migrate_frame(*id, TierId::Fast, 0).unwrap();
        }
        t.age_active(TierId::Fast, 1_000, 10);
        let e = PolicyEngine::new(PolicyKind::MigrationOnly, ScanConfig::default());
        let mut ctx = Ctx { tiers: &mut t, objects: &s, klocs: &k };
        assert_eq!(e.make_room(&mut ctx, 0, 5).unwrap(), MigrationOutcome::default());
        let tail = t.list_frames(TierId::Fast, crate::memory::LruList::Inactive);
        let mut ctx = Ctx { tiers: &mut t, objects: &s, klocs: &k };
        let out = e.make_room(&mut ctx, 3, 5).unwrap();
        assert_eq!(out.pages, 3);
        assert_eq!(out.violations, 0);
        for id in tail.iter().rev().take(3) {
            assert_eq!(t.frame(*id).unwrap().tier, TierId::Slow);
        }
    }

    #[test]
    fn nomigrate_never_moves() {
        let mut t = tiers(4);
        let s = ObjectStore::new(ObjectSizes::default());
        let k = KlocTable::new();
        let id = t.allocate_frame(FrameKind::Cache, TierId::Fast, 0).unwrap().frame_id;
        let e = PolicyEngine::new(PolicyKind::KlocNomigrate, ScanConfig::default());
        let mut ctx = Ctx { tiers: &mut t, objects: &s, klocs: &k };
        assert_eq!(e.make_room(&mut ctx, 1, 0).unwrap().pages, 0);
        assert_eq!(e.on_kloc_inactive(&mut ctx, KlocKey::FileInode(1), &[id], 0).unwrap().pages, 0);
    }

    #[test]
    fn scan_demotes_only_cold_frames() {
        let mut t = tiers(8);
        let s = ObjectStore::new(ObjectSizes::default());
        let k = KlocTable::new();
        let old = t.allocate_frame(FrameKind::App, TierId::Fast, 0).unwrap().frame_id;
        let fresh = t.allocate_frame(FrameKind::App, TierId::Fast, 0).unwrap().frame_id;
        t.charge_access(fresh, 64, false, 90).unwrap();
        let scan = ScanConfig { interval_ns: 100, cold_threshold_ns: 50, cost_per_frame_ns: 50, idle_threshold_ns: 10 };
        let e = PolicyEngine::new(PolicyKind::MigrationOnly, scan);
        let mut ctx = Ctx { tiers: &mut t, objects: &s, klocs: &k };
        let out = e.periodic_scan(&mut ctx, 100).unwrap();
        assert_eq!((out.pages, out.frames_scanned, e.scan_cost_ns(&out)), (1, 2, 100));
        assert_eq!(t.frame(old).unwrap().tier, TierId::Slow);
        let mut ctx = Ctx { tiers: &mut t, objects: &s, klocs: &k };
        let out = e.periodic_scan(&mut ctx, 101).unwrap();
        assert_eq!(out.pages, 0);
        assert_eq!(e.scan_cost_ns(&out), 50);
    }

    #[test]
    fn nimble_skips_slab() {
        let mut t = tiers(8);
        let s = ObjectStore::new(ObjectSizes::default());
        let k = KlocTable::new();
        t.allocate_frame(FrameKind::Vmalloc, TierId::Fast, 0).unwrap();
        t.allocate_frame(FrameKind::Slab, TierId::Fast, 0).unwrap();
        let e = PolicyEngine::new(PolicyKind::Nimble, ScanConfig { cold_threshold_ns: 1, ..ScanConfig::default() });
        let mut ctx = Ctx { tiers: &mut t, objects: &s, klocs: &k };
        assert_eq!(e.periodic_scan(&mut ctx, 1_000).unwrap().pages, 0);
    }
}
