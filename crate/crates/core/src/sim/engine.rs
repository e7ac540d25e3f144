//! The discrete-event loop: schedules ops across cpus, expands them, and
//! charges every micro-event against the tier model.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::config::SimConfig;
use super::stats::Stats;
use crate::kloc::{KlocError, KlocKey, KlocTable};
use crate::memory::{transfer_ns, FrameId, FrameKind, MemError, MigrationCostModel, TierConfig, TierId, TierSystem, PAGE_SIZE};
use crate::objects::{Grouping, ObjError, ObjectId, ObjectKind, ObjectStore};
use crate::policy::{AllocRequest, AllocTarget, Ctx, MigrationOutcome, PolicyEngine, PolicyKind};
use crate::workload::{EventSink, Expander, MicroEvent, OpKind, TraceOp, WorkloadError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error("trace error: {0}")]
    Trace(#[from] WorkloadError),
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Obj(#[from] ObjError),
    #[error(transparent)]
    Kloc(#[from] KlocError),
    #[error("invariant violated after op {op}: {reason}")]
    Audit { op: u64, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Check every structural invariant after each op.
    pub audit: bool,
    /// Keep a per-frame cost log for offline placement search.
    pub record: bool,
}

/// One entry of the cost log. Frames are numbered in allocation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostEvent {
    Alloc(u32),
    Free(u32),
    Access { frame: u32, bytes: u64 },
    /// Cost that does not depend on placement (disk, NIC, cpu).
    Fixed(u64),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostLog {
    pub events: Vec<CostEvent>,
    pub frames: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub stats: Stats,
    pub log: Option<CostLog>,
}

#[derive(Debug, Default)]
struct Recording {
    log: CostLog,
    seq: BTreeMap<FrameId, u32>,
}

impl Recording {
    fn see(&mut self, fid: FrameId) -> u32 {
        if let Some(s) = self.seq.get(&fid) {
            return *s;
        }
        let s = self.log.frames;
        self.log.frames += 1;
        self.seq.insert(fid, s);
        self.log.events.push(CostEvent::Alloc(s));
        s
    }

    fn reap(&mut self, tiers: &TierSystem) {
        let dead: Vec<FrameId> = self.seq.keys().copied().filter(|f| tiers.frame(*f).is_none()).collect();
        for f in dead {
            let s = self.seq.remove(&f).expect("listed above");
            self.log.events.push(CostEvent::Free(s));
        }
    }
}

struct Engine<'c> {
    cfg: &'c SimConfig,
    policy: PolicyEngine,
    tiers: TierSystem,
    objects: ObjectStore,
    klocs: KlocTable,
    app: HashMap<(u64, u64), FrameId>,
    cpu: u32,
    now: u64,
    op_cost: u64,
    background_ns: u64,
    stats: Stats,
    rec: Option<Recording>,
    /// State stamp of the last make_room that freed nothing; an identical
    /// stamp means a rescan would find nothing either.
    fruitless: Option<(u64, u64, u64, bool)>,
}

impl<'c> Engine<'c> {
    fn new(cfg: &'c SimConfig, policy: PolicyKind, fast_pages: u64, slow_pages: u64, record: bool) -> Result<Self, SimError> {
        let fast = TierConfig {
            tier_id: TierId::Fast,
            capacity_pages: fast_pages,
            access_latency_ns: cfg.fast_latency_ns,
            bandwidth_bytes_per_sec: cfg.fast_bandwidth,
        };
        let slow = TierConfig {
            tier_id: TierId::Slow,
            capacity_pages: slow_pages,
            access_latency_ns: cfg.slow_latency_ns,
            bandwidth_bytes_per_sec: cfg.slow_bandwidth(),
        };
        let cost = MigrationCostModel { tlb_shootdown_ns: cfg.tlb_shootdown_ns };
        let tiers = TierSystem::with_cost(fast, slow, cost, cfg.pin_threshold)?;
        let mut pe = PolicyEngine::new(policy, cfg.scan);
        if policy == PolicyKind::Nimble {
            pe.parallel_divisor = cfg.nimble_parallel_divisor;
        }
        let stats = Stats {
            policy: Some(policy),
            fast_capacity_pages: fast_pages,
            slow_capacity_pages: slow_pages,
            ..Stats::default()
        };
        Ok(Self {
            cfg,
            policy: pe,
            tiers,
            objects: ObjectStore::new(cfg.sizes),
            klocs: KlocTable::new(),
            app: HashMap::new(),
            cpu: 0,
            now: 0,
            op_cost: 0,
            background_ns: 0,
            stats,
            rec: record.then(Recording::default),
            fruitless: None,
        })
    }

    fn t(&self) -> u64 {
        self.now + self.op_cost
    }

    fn ctx(&mut self) -> Ctx<'_> {
        Ctx { tiers: &mut self.tiers, objects: &self.objects, klocs: &self.klocs }
    }

    fn fixed(&mut self, ns: u64) {
        self.op_cost += ns;
        if let Some(r) = &mut self.rec {
            r.log.events.push(CostEvent::Fixed(ns));
        }
    }

    fn peaks(&mut self) {
        let s = &mut self.stats;
        s.peak_fast_pages = s.peak_fast_pages.max(self.tiers.used_pages(TierId::Fast));
        let slow = self.tiers.used_pages(TierId::Slow);
        s.peak_slow_pages = s.peak_slow_pages.max(slow);
        let slow_kernel = slow - self.tiers.kind_pages(TierId::Slow, FrameKind::App);
        s.peak_slow_kernel_pages = s.peak_slow_kernel_pages.max(slow_kernel);
    }

    fn background(&mut self, out: MigrationOutcome) {
        self.background_ns += out.cost_ns;
        self.stats.bg_migration.absorb(out);
        self.peaks();
    }

    /// Demotes in the foreground when a fast-bound allocation of `need`
    /// frames would not fit.
    fn ensure_room(&mut self, need: u64, preferred: TierId) -> Result<(), SimError> {
        if preferred != TierId::Fast || !self.policy.kind.demotes_under_pressure() {
            return Ok(());
        }
        let free = self.tiers.free_pages(TierId::Fast);
        if need > free {
            let stamp = (
                self.tiers.fast_epoch(),
                self.klocs.epoch(),
                self.objects.epoch(),
                self.tiers.free_pages(TierId::Slow) > 0,
            );
            if self.fruitless == Some(stamp) {
                return Ok(());
            }
            let t = self.t();
            let policy = self.policy;
            let out = policy.make_room(&mut self.ctx(), need - free, t)?;
            self.fruitless = (out.pages == 0).then_some(stamp);
            self.op_cost += out.cost_ns;
            self.stats.fg_migration.absorb(out);
        }
        Ok(())
    }

    fn deactivate(&mut self, key: KlocKey, frames: &[FrameId], now: u64) -> Result<u64, SimError> {
        let policy = self.policy;
        let out = policy.on_kloc_inactive(&mut self.ctx(), key, frames, now)?;
        let pages = out.pages;
        self.background(out);
        Ok(pages)
    }

    fn sweep_idle(&mut self, now: u64) -> Result<(), SimError> {
        for key in self.klocs.sweep_idle(now, self.cfg.idle_grace_ns) {
            self.stats.idle_deactivations += 1;
            if self.policy.kind.demotes_on_inactive(key) {
                let frames = self.klocs.exclusive_fast_frames(key, &self.objects, &self.tiers);
                self.deactivate(key, &frames, now)?;
            }
        }
        Ok(())
    }

    fn scan(&mut self, now: u64) -> Result<(), SimError> {
        let policy = self.policy;
        let out = policy.periodic_scan(&mut self.ctx(), now)?;
        let scan_ns = policy.scan_cost_ns(&out);
        self.stats.scans += 1;
        self.stats.scan_ns += scan_ns;
        self.background_ns += scan_ns;
        self.background(out);
        Ok(())
    }

    fn alloc(&mut self, kind: ObjectKind, data_pages: u64, kloc: KlocKey, prefetch: bool) -> Result<ObjectId, SimError> {
        let t = self.t();
        let owner = self.policy.kind.groups(kloc).then_some(kloc);
        let req = AllocRequest {
            target: AllocTarget::Object(kind),
            kloc_key: Some(kloc),
            kloc_active: self.klocs.is_active(kloc),
            is_prefetch: prefetch,
            cpu: self.cpu,
            now: t,
        };
        let preferred = self.policy.decide_tier(&req);
        let grouping = self.policy.kind.grouping(owner);
        // Objects a KLOC policy does not group fall back to naive placement.
        if owner.is_some() || !self.policy.kind.is_kloc() {
            let need = self.objects.pages_needed(&self.tiers, kind, data_pages, owner, grouping, TierId::Fast);
            self.ensure_room(need, preferred)?;
        }
        let t = self.t();
        let a = self.objects.alloc_object(&mut self.tiers, kind, data_pages, owner, preferred, t, grouping)?;
        if let Some(k) = owner {
            self.klocs.map_insert(k, a.object_id, kind)?;
        }
        let frame_kind = match (kind, grouping) {
            (ObjectKind::CachePage, _) => FrameKind::Cache,
            (_, Grouping::Slab) => FrameKind::Slab,
            (_, Grouping::Vmalloc) => FrameKind::Vmalloc,
        };
        self.stats.object_allocs[kind.index()][a.landed_tier.index()] += 1;
        self.stats.page_allocs[frame_kind.index()] += a.new_frames;
        if preferred == TierId::Fast && a.landed_tier == TierId::Slow {
            self.stats.fast_misses += 1;
        }
        if let Some(r) = &mut self.rec {
            for fid in &self.objects.get(a.object_id).expect("just allocated").frame_ids {
                r.see(*fid);
            }
        }
        self.peaks();
        Ok(a.object_id)
    }

    fn touch(&mut self, fid: FrameId, bytes: u64, write: bool) -> Result<(), SimError> {
        let t = self.t();
        let cost = self.tiers.charge_access(fid, bytes, write, t)?;
        let tier = self.tiers.frame(fid).expect("charged above").tier.index();
        self.stats.access_bytes[tier] += bytes;
        self.stats.access_ns[tier] += cost;
        self.op_cost += cost;
        if let Some(r) = &mut self.rec {
            let frame = r.see(fid);
            r.log.events.push(CostEvent::Access { frame, bytes });
        }
        Ok(())
    }

    fn access(&mut self, object: ObjectId, bytes: u64, write: bool) -> Result<(), SimError> {
        let frames = self.objects.live(object).ok_or(ObjError::UnknownObject(object))?.frame_ids.clone();
        let mut left = bytes;
        for fid in frames {
            if left == 0 {
                break;
            }
            let chunk = left.min(PAGE_SIZE);
            self.touch(fid, chunk, write)?;
            left -= chunk;
        }
        Ok(())
    }

    fn app_touch(&mut self, region: u64, page: u64, bytes: u64) -> Result<(), SimError> {
        let fid = match self.app.get(&(region, page)) {
            Some(f) => *f,
            None => {
                let req = AllocRequest {
                    target: AllocTarget::AppPage,
                    kloc_key: None,
                    kloc_active: false,
                    is_prefetch: false,
                    cpu: self.cpu,
                    now: self.t(),
                };
                let preferred = self.policy.decide_tier(&req);
                self.ensure_room(1, preferred)?;
                let out = self.tiers.allocate_frame(FrameKind::App, preferred, self.t())?;
                self.stats.app_page_allocs[out.landed_tier.index()] += 1;
                self.stats.page_allocs[FrameKind::App.index()] += 1;
                if preferred == TierId::Fast && out.landed_tier == TierId::Slow {
                    self.stats.fast_misses += 1;
                }
                self.app.insert((region, page), out.frame_id);
                self.peaks();
                out.frame_id
            }
        };
        self.touch(fid, bytes.min(PAGE_SIZE), true)
    }

    fn free(&mut self, object: ObjectId) -> Result<(), SimError> {
        let kloc = self.objects.get(object).ok_or(ObjError::UnknownObject(object))?.kloc_id;
        let t = self.t();
        self.objects.free_object(&mut self.tiers, object, t)?;
        if let Some(k) = kloc {
            match self.klocs.map_remove(k, object) {
                Ok(_) | Err(KlocError::UnknownKloc(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        if let Some(r) = &mut self.rec {
            r.reap(&self.tiers);
        }
        Ok(())
    }

    fn close(&mut self, key: KlocKey) -> Result<(), SimError> {
        let t = self.t();
        self.stats.closes += 1;
        let frames = self.klocs.on_close(key, t, &mut self.objects, &self.tiers)?;
        if !frames.is_empty() && self.policy.kind.demotes_on_inactive(key) {
            self.stats.closes_with_candidates += 1;
            if self.deactivate(key, &frames, t)? > 0 {
                self.stats.closes_with_demotion += 1;
            }
        }
        Ok(())
    }

    fn delete(&mut self, key: KlocKey) -> Result<(), SimError> {
        let t = self.t();
        if self.klocs.get(key).is_some() {
            self.klocs.on_delete(key, t, &mut self.objects, &mut self.tiers)?;
        }
        if let Some(r) = &mut self.rec {
            r.reap(&self.tiers);
        }
        Ok(())
    }

    fn audit(&self, op: u64) -> Result<(), SimError> {
        let wrap = |reason: String| SimError::Audit { op, reason };
        self.tiers.check_invariants().map_err(wrap)?;
        self.objects.check_invariants(&self.tiers).map_err(wrap)?;
        self.klocs.check_invariants(&self.objects).map_err(wrap)?;
        if self.policy.kind == PolicyKind::AllSlow && self.tiers.used_pages(TierId::Fast) > 0 {
            return Err(wrap("all-slow run placed a frame in fast memory".into()));
        }
        Ok(())
    }
}

impl EventSink for Engine<'_> {
    type Error = SimError;

    fn emit(&mut self, ev: MicroEvent) -> Result<Option<ObjectId>, SimError> {
        match ev {
            MicroEvent::Alloc { kind, data_pages, kloc, prefetch } => return self.alloc(kind, data_pages, kloc, prefetch).map(Some),
            MicroEvent::Access { object, bytes, write } => self.access(object, bytes, write)?,
            MicroEvent::AppTouch { region, page, bytes } => self.app_touch(region, page, bytes)?,
            MicroEvent::Disk { bytes, mode } => {
                let ns = self.cfg.disk.cost_ns(bytes, mode);
                self.stats.disk_ns += ns;
                self.fixed(ns);
            }
            MicroEvent::Nic { bytes } => {
                let ns = transfer_ns(bytes * 8, self.cfg.nic_bits_per_sec);
                self.stats.nic_ns += ns;
                self.fixed(ns);
            }
            MicroEvent::Cpu { ns } => {
                self.stats.cpu_ns += ns;
                self.fixed(ns);
            }
            MicroEvent::Free { object } => self.free(object)?,
            MicroEvent::Close { kloc } => self.close(kloc)?,
            MicroEvent::Delete { kloc } => self.delete(kloc)?,
        }
        Ok(None)
    }
}

fn simulate(
    trace: &[TraceOp],
    cfg: &SimConfig,
    policy: PolicyKind,
    fast_pages: u64,
    slow_pages: u64,
    opts: RunOptions,
) -> Result<RunReport, SimError> {
    let mut eng = Engine::new(cfg, policy, fast_pages, slow_pages, opts.record)?;
    let mut expander = Expander::new(cfg.expand_config());

    let mut queues: BTreeMap<u32, VecDeque<usize>> = BTreeMap::new();
    for (i, op) in trace.iter().enumerate() {
        queues.entry(op.cpu).or_default().push_back(i);
    }
    let mut clock: BTreeMap<u32, u64> = queues.keys().map(|c| (*c, 0)).collect();
    let mut heap = BinaryHeap::new();
    for (cpu, q) in &mut queues {
        if let Some(i) = q.pop_front() {
            heap.push(Reverse((trace[i].t_ns, *cpu, i)));
        }
    }

    let interval = cfg.scan.interval_ns;
    let scans = policy.scans() && interval > 0;
    let mut next_scan = interval;
    let mut done = 0u64;
    while let Some(Reverse((start, cpu, i))) = heap.pop() {
        while scans && next_scan <= start {
            eng.scan(next_scan)?;
            next_scan += interval;
        }
        eng.sweep_idle(start)?;

        let op = &trace[i];
        let c = clock.get_mut(&cpu).expect("every cpu has a clock");
        eng.stats.idle_ns += start - *c;
        eng.cpu = cpu;
        eng.now = start;
        eng.op_cost = 0;
        if op.op != OpKind::AppTouch {
            eng.klocs.on_op_begin(cpu, Expander::key_for(op), start);
        }
        expander.expand(op, &mut eng)?;
        let c = clock.get_mut(&cpu).expect("every cpu has a clock");
        *c = start + eng.op_cost;
        eng.stats.busy_ns += eng.op_cost;
        done += 1;
        if opts.audit {
            eng.audit(done)?;
        }
        if let Some(j) = queues.get_mut(&cpu).and_then(|q| q.pop_front()) {
            heap.push(Reverse((trace[j].t_ns.max(*c), cpu, j)));
        }
    }

    // One structural check per run even without per-op auditing.
    eng.audit(done)?;
    let mut stats = std::mem::take(&mut eng.stats);
    stats.ops = done;
    stats.background_ns = eng.background_ns;
    let end = clock.values().copied().max().unwrap_or(0);
    stats.sim_time_ns = end + (cfg.background_interference * eng.background_ns as f64).round() as u64;
    let ex = expander.stats();
    stats.read_hit_pages = ex.read_hit_pages;
    stats.read_miss_pages = ex.read_miss_pages;
    stats.prefetch_pages = ex.prefetch_pages;
    stats.prefetch_hits = ex.prefetch_hits;
    stats.buffer_lifetime = eng.objects.lifetime_stats(&ObjectKind::KERNEL_BUFFERS);
    stats.cache_lifetime = eng.objects.lifetime_stats(&[ObjectKind::CachePage]);
    stats.network_lifetime = eng.objects.lifetime_stats(&[ObjectKind::Skbuff, ObjectKind::NetQueue]);
    Ok(RunReport { stats, log: eng.rec.map(|r| r.log) })
}

/// Peak live frames when everything fits in one unbounded tier under
/// slab packing.
pub fn footprint_pages(trace: &[TraceOp], cfg: &SimConfig) -> Result<u64, SimError> {
    let huge = u64::MAX / 4;
    let r = simulate(trace, cfg, PolicyKind::AllFast, huge, 1, RunOptions::default())?;
    Ok(r.stats.peak_fast_pages.max(1))
}

fn needs_footprint(cfg: &SimConfig) -> bool {
    cfg.fast_capacity.is_relative() || cfg.slow_capacity.is_relative()
}

/// Runs `cfg.policy` over the trace. `footprint` skips the sizing pass when
/// the caller already knows it.
pub fn run_with(trace: &[TraceOp], cfg: &SimConfig, footprint: Option<u64>, opts: RunOptions) -> Result<RunReport, SimError> {
    cfg.validate().map_err(SimError::Config)?;
    let fp = match footprint {
        Some(f) => f,
        None if needs_footprint(cfg) => footprint_pages(trace, cfg)?,
        None => 0,
    };
    let mut fast = cfg.fast_capacity.pages(fp);
    let slow = cfg.slow_capacity.pages(fp);
    if cfg.policy == PolicyKind::AllFast {
        // The upper bound never spills: it gets both tiers' worth of fast frames.
        fast += slow;
    }
    let mut r = simulate(trace, cfg, cfg.policy, fast, slow, opts)?;
    r.stats.footprint_pages = fp;
    Ok(r)
}

pub fn run(trace: &[TraceOp], cfg: &SimConfig) -> Result<Stats, SimError> {
    Ok(run_with(trace, cfg, None, RunOptions::default())?.stats)
}

/// Runs each policy on the same trace and configuration.
pub fn compare(trace: &[TraceOp], cfg: &SimConfig, policies: &[PolicyKind]) -> Result<Vec<Stats>, SimError> {
    cfg.validate().map_err(SimError::Config)?;
    let fp = if needs_footprint(cfg) { Some(footprint_pages(trace, cfg)?) } else { None };
    policies
        .iter()
        .map(|p| {
            let c = SimConfig { policy: *p, ..cfg.clone() };
            Ok(run_with(trace, &c, fp, RunOptions::default())?.stats)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    SlowBandwidthRatio,
    FastCapacityRatio,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SlowBandwidthRatio => "SLOW_BANDWIDTH_RATIO",
            SweepAxis::FastCapacityRatio => "FAST_CAPACITY_RATIO",
        }
    }

    pub fn apply(self, cfg: &mut SimConfig, value: f64) {
        match self {
            SweepAxis::SlowBandwidthRatio => cfg.slow_bandwidth_ratio = value,
            SweepAxis::FastCapacityRatio => cfg.fast_capacity = super::config::Capacity::FootprintRatio(value),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "SLOW_BANDWIDTH_RATIO" => Ok(SweepAxis::SlowBandwidthRatio),
            "FAST_CAPACITY_RATIO" => Ok(SweepAxis::FastCapacityRatio),
            _ => Err(format!("unknown sweep axis `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub stats: Stats,
}

/// Runs every policy at every axis value. The footprint is measured once.
pub fn sweep(
    trace: &[TraceOp],
    cfg: &SimConfig,
    axis: SweepAxis,
    values: &[f64],
    policies: &[PolicyKind],
) -> Result<Vec<SweepPoint>, SimError> {
    let mut probe = cfg.clone();
    if let Some(v) = values.first() {
        axis.apply(&mut probe, *v);
    }
    let fp = if needs_footprint(&probe) { Some(footprint_pages(trace, cfg)?) } else { None };
    let mut out = Vec::new();
    for &v in values {
        let mut c = cfg.clone();
        axis.apply(&mut c, v);
        for p in policies {
            c.policy = *p;
            c.validate().map_err(SimError::Config)?;
            out.push(SweepPoint { value: v, stats: run_with(trace, &c, fp, RunOptions::default())?.stats });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::Capacity;
    use crate::workload::OpKind::*;

    fn cfg(policy: PolicyKind, fast_pages: u64, slow_pages: u64) -> SimConfig {
        SimConfig {
            policy,
            fast_capacity: Capacity::Bytes(fast_pages * PAGE_SIZE),
            slow_capacity: Capacity::Bytes(slow_pages * PAGE_SIZE),
            ..SimConfig::default()
        }
    }

    fn touch(t: u64, cpu: u32, page: u64) -> TraceOp {
        TraceOp::new(t, cpu, AppTouch, 0, page * PAGE_SIZE, PAGE_SIZE)
    }

    #[test]
    fn app_touch_costs() {
        let trace = [touch(0, 0, 0), touch(0, 0, 0)];
        let s = run(&trace, &cfg(PolicyKind::AllFast, 4, 4)).unwrap();
        assert_eq!(s.busy_ns, 2 * 237);
        assert_eq!(s.sim_time_ns, 2 * 237);
        assert_eq!(s.app_page_allocs, [1, 0]);
        let s = run(&trace, &cfg(PolicyKind::AllSlow, 4, 4)).unwrap();
        assert_eq!(s.busy_ns, 2 * 983);
        assert_eq!(s.access_bytes, [0, 2 * PAGE_SIZE]);
    }

    #[test]
    fn cpus_run_in_parallel() {
        let trace = [touch(0, 0, 0), touch(0, 1, 1), touch(1_000, 1, 2)];
        let s = run(&trace, &cfg(PolicyKind::AllFast, 8, 8)).unwrap();
        assert_eq!(s.busy_ns, 3 * 237);
        assert_eq!(s.idle_ns, 1_000 - 237);
        assert_eq!(s.sim_time_ns, 1_000 + 237);
    }

    #[test]
    fn make_room_is_charged_to_the_op() {
        let trace = [touch(0, 0, 0), touch(0, 0, 1)];
        let s = run(&trace, &cfg(PolicyKind::MigrationOnly, 1, 4)).unwrap();
        assert_eq!(s.fg_migration.pages, 1);
        assert_eq!(s.fg_migration.cost_ns, 683 + 4_000);
        assert_eq!(s.busy_ns, 237 + 4_683 + 237);
        assert_eq!(s.fast_misses, 0);

        let s = run(&trace, &cfg(PolicyKind::Naive, 1, 4)).unwrap();
        assert_eq!(s.migrated_pages(), 0);
        assert_eq!(s.fast_misses, 1);
        assert_eq!(s.busy_ns, 237 + 983);
    }

    #[test]
    fn all_fast_gets_both_tiers() {
        let trace: Vec<TraceOp> = (0..6).map(|p| touch(0, 0, p)).collect();
        let s = run(&trace, &cfg(PolicyKind::AllFast, 2, 4)).unwrap();
        assert_eq!(s.fast_capacity_pages, 6);
        assert_eq!(s.app_page_allocs, [6, 0]);
    }

    #[test]
    fn relative_capacity_uses_footprint() {
        let trace: Vec<TraceOp> = (0..16).map(|p| touch(0, 0, p)).collect();
        let c = SimConfig { policy: PolicyKind::Naive, ..SimConfig::default() };
        let s = run(&trace, &c).unwrap();
        assert_eq!(s.footprint_pages, 16);
        assert_eq!(s.fast_capacity_pages, 2);
        assert_eq!(s.slow_capacity_pages, 32);
    }

    #[test]
    fn file_run_is_deterministic_and_audited() {
        let trace = [
            TraceOp::new(0, 0, Create, 7, 0, 0),
            TraceOp::new(0, 0, Write, 7, 0, 3 * PAGE_SIZE),
            TraceOp::new(0, 0, Fsync, 7, 0, 0),
            TraceOp::new(0, 1, Open, 9, 0, 1 << 20),
            TraceOp::new(0, 1, Read, 9, 0, PAGE_SIZE),
            TraceOp::new(0, 0, Close, 7, 0, 0),
            TraceOp::new(0, 1, Close, 9, 0, 0),
            TraceOp::new(0, 0, Delete, 7, 0, 0),
        ];
        let c = cfg(PolicyKind::KlocMigrateFs, 4, 64);
        let opts = RunOptions { audit: true, record: false };
        let a = run_with(&trace, &c, None, opts).unwrap();
        let b = run_with(&trace, &c, None, opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stats.ops, trace.len() as u64);
        assert_eq!(a.stats.closes, 2);
        assert!(a.stats.disk_ns > 0);
        assert_eq!(a.stats.violations(), 0);
    }

    #[test]
    fn cost_log_numbers_frames_in_order() {
        let trace = [touch(0, 0, 0), touch(0, 0, 1), touch(0, 0, 0)];
        let r = run_with(&trace, &cfg(PolicyKind::AllFast, 4, 4), None, RunOptions { audit: false, record: true }).unwrap();
        let log = r.log.unwrap();
        assert_eq!(log.frames, 2);
        assert_eq!(
            log.events,
            vec![
                CostEvent::Alloc(0),
                CostEvent::Access { frame: 0, bytes: PAGE_SIZE },
                CostEvent::Alloc(1),
                CostEvent::Access { frame: 1, bytes: PAGE_SIZE },
                CostEvent::Access { frame: 0, bytes: PAGE_SIZE },
            ]
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let c = SimConfig { slow_bandwidth_ratio: 0.0, ..SimConfig::default() };
        assert!(matches!(run(&[touch(0, 0, 0)], &c), Err(SimError::Config(_))));
    }

    #[test]
    fn sweep_axis_names() {
        assert_eq!("slow_bandwidth_ratio".parse(), Ok(SweepAxis::SlowBandwidthRatio));
        assert_eq!("fast-capacity-ratio".parse(), Ok(SweepAxis::FastCapacityRatio));
        assert!("latency".parse::<SweepAxis>().is_err());
        let trace: Vec<TraceOp> = (0..8).map(|p| touch(0, 0, p)).collect();
        let pts = sweep(&trace, &SimConfig::default(), SweepAxis::SlowBandwidthRatio, &[0.1, 0.5], &[PolicyKind::AllSlow]).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts[0].stats.sim_time_ns > pts[1].stats.sim_time_ns);
    }
}
