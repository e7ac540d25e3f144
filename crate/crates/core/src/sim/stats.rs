//! Counters collected during a run.

use std::fmt::Write as _;

use crate::memory::{FrameKind, TierId};
use crate::objects::{LifetimeStats, ObjectKind};
use crate::policy::{MigrationOutcome, PolicyKind};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stats {
    pub policy: Option<PolicyKind>,
    pub ops: u64,
    pub footprint_pages: u64,
    pub fast_capacity_pages: u64,
    pub slow_capacity_pages: u64,
    /// Simulated wall time: latest cpu clock plus background interference.
    pub sim_time_ns: u64,
    /// Sum of per-op costs over all cpus.
    pub busy_ns: u64,
    /// Time cpus spent waiting for their next op's timestamp.
    pub idle_ns: u64,
    pub background_ns: u64,
    /// Object allocations by `[kind][tier]`.
    pub object_allocs: [[u64; 2]; 8],
    pub app_page_allocs: [u64; 2],
    /// Newly taken frames by frame kind.
    pub page_allocs: [u64; 4],
    /// Allocations that asked for fast memory and landed in slow.
    pub fast_misses: u64,
    pub access_bytes: [u64; 2],
    pub access_ns: [u64; 2],
    pub disk_ns: u64,
    pub nic_ns: u64,
    pub cpu_ns: u64,
    pub fg_migration: MigrationOutcome,
    pub bg_migration: MigrationOutcome,
    pub scans: u64,
    pub scan_ns: u64,
    pub closes: u64,
    /// Closes of a context with fast pages to give up that demoted at least one.
    pub closes_with_demotion: u64,
    pub closes_with_candidates: u64,
    pub idle_deactivations: u64,
    pub peak_fast_pages: u64,
    pub peak_slow_pages: u64,
    pub peak_slow_kernel_pages: u64,
    pub read_hit_pages: u64,
    pub read_miss_pages: u64,
    pub prefetch_pages: u64,
    pub prefetch_hits: u64,
    /// Freed radix nodes, journal records, block-I/O buffers and skbuffs.
    pub buffer_lifetime: LifetimeStats,
    pub cache_lifetime: LifetimeStats,
    pub network_lifetime: LifetimeStats,
}

impl Stats {
    pub fn throughput_ops_per_sec(&self) -> f64 {
        if self.sim_time_ns == 0 {
            return 0.0;
        }
        self.ops as f64 * 1e9 / self.sim_time_ns as f64
    }

    pub fn kernel_object_allocs(&self) -> u64 {
        self.object_allocs.iter().flatten().sum()
    }

    pub fn kernel_allocs_in(&self, tier: TierId) -> u64 {
        self.object_allocs.iter().map(|t| t[tier.index()]).sum()
    }

    pub fn allocs_of(&self, kind: ObjectKind) -> u64 {
        self.object_allocs[kind.index()].iter().sum()
    }

    /// Kernel share of all allocation events (objects plus app pages).
    pub fn kernel_alloc_fraction(&self) -> f64 {
        let k = self.kernel_object_allocs() as f64;
        let total = k + self.app_page_allocs.iter().sum::<u64>() as f64;
        if total == 0.0 {
            0.0
        } else {
            k / total
        }
    }

    /// Kernel share of newly taken frames.
    pub fn kernel_page_fraction(&self) -> f64 {
        let total: u64 = self.page_allocs.iter().sum();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.page_allocs[FrameKind::App.index()] as f64 / total as f64
    }

    pub fn migrated_pages(&self) -> u64 {
        self.fg_migration.pages + self.bg_migration.pages
    }

    pub fn migration_ns(&self) -> u64 {
        self.fg_migration.cost_ns + self.bg_migration.cost_ns
    }

    pub fn violations(&self) -> u64 {
        self.fg_migration.violations + self.bg_migration.violations
    }

    pub fn kernel_buffer_frames_demoted(&self) -> u64 {
        self.fg_migration.kernel_buffer_frames + self.bg_migration.kernel_buffer_frames
    }

    /// Every nanosecond charged, foreground and background.
    pub fn total_cost_ns(&self) -> u64 {
        self.busy_ns + self.background_ns
    }

    /// `metric,value` rows in a fixed order.
    pub fn rows(&self) -> Vec<(String, String)> {
        let mut r: Vec<(String, String)> = Vec::new();
        let mut put = |k: String, v: String| r.push((k, v));
        let opt = |v: Option<u64>| v.map_or(String::new(), |x| x.to_string());
        let optf = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.1}"));
        put("policy".into(), self.policy.map_or(String::new(), |p| p.name().to_string()));
        put("ops".into(), self.ops.to_string());
        put("sim_time_ns".into(), self.sim_time_ns.to_string());
        put("throughput_ops_per_sec".into(), format!("{:.3}", self.throughput_ops_per_sec()));
        put("footprint_pages".into(), self.footprint_pages.to_string());
        put("fast_capacity_pages".into(), self.fast_capacity_pages.to_string());
        put("slow_capacity_pages".into(), self.slow_capacity_pages.to_string());
        put("busy_ns".into(), self.busy_ns.to_string());
        put("idle_ns".into(), self.idle_ns.to_string());
        put("background_ns".into(), self.background_ns.to_string());
        for kind in ObjectKind::ALL {
            for tier in [TierId::Fast, TierId::Slow] {
                put(format!("allocs.{}.{}", kind.name(), tier.name()), self.object_allocs[kind.index()][tier.index()].to_string());
            }
        }
        for tier in [TierId::Fast, TierId::Slow] {
            put(format!("allocs.app_page.{}", tier.name()), self.app_page_allocs[tier.index()].to_string());
        }
        for kind in FrameKind::ALL {
            put(format!("page_allocs.{}", kind.name()), self.page_allocs[kind.index()].to_string());
        }
        put("kernel_alloc_fraction".into(), format!("{:.4}", self.kernel_alloc_fraction()));
        put("kernel_page_fraction".into(), format!("{:.4}", self.kernel_page_fraction()));
        put("fast_misses".into(), self.fast_misses.to_string());
        for tier in [TierId::Fast, TierId::Slow] {
            put(format!("access_bytes.{}", tier.name()), self.access_bytes[tier.index()].to_string());
            put(format!("access_ns.{}", tier.name()), self.access_ns[tier.index()].to_string());
        }
        put("disk_ns".into(), self.disk_ns.to_string());
        put("nic_ns".into(), self.nic_ns.to_string());
        put("cpu_ns".into(), self.cpu_ns.to_string());
        for (name, m) in [("fg", &self.fg_migration), ("bg", &self.bg_migration)] {
            put(format!("migration.{name}.pages"), m.pages.to_string());
            put(format!("migration.{name}.cost_ns"), m.cost_ns.to_string());
            put(format!("migration.{name}.kernel_buffer_frames"), m.kernel_buffer_frames.to_string());
            put(format!("migration.{name}.violations"), m.violations.to_string());
        }
        put("scans".into(), self.scans.to_string());
        put("scan_ns".into(), self.scan_ns.to_string());
        put("closes".into(), self.closes.to_string());
        put("closes_with_candidates".into(), self.closes_with_candidates.to_string());
        put("closes_with_demotion".into(), self.closes_with_demotion.to_string());
        put("idle_deactivations".into(), self.idle_deactivations.to_string());
        put("peak_fast_pages".into(), self.peak_fast_pages.to_string());
        put("peak_slow_pages".into(), self.peak_slow_pages.to_string());
        put("peak_slow_kernel_pages".into(), self.peak_slow_kernel_pages.to_string());
        put("read_hit_pages".into(), self.read_hit_pages.to_string());
        put("read_miss_pages".into(), self.read_miss_pages.to_string());
        put("prefetch_pages".into(), self.prefetch_pages.to_string());
        put("prefetch_hits".into(), self.prefetch_hits.to_string());
        for (name, l) in [("buffer", &self.buffer_lifetime), ("cache", &self.cache_lifetime), ("network", &self.network_lifetime)] {
            put(format!("lifetime.{name}.count"), l.count.to_string());
            put(format!("lifetime.{name}.mean_ns"), optf(l.mean_ns));
            put(format!("lifetime.{name}.p50_ns"), opt(l.p50_ns));
            put(format!("lifetime.{name}.p99_ns"), opt(l.p99_ns));
        }
        r
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.rows() {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}
