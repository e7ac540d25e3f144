//! Run configuration and its flat `key = value` file format.

use std::fmt::Write as _;

use crate::objects::{ObjectKind, ObjectSizes};
use crate::policy::{PolicyKind, ScanConfig};
use crate::prefetch::PrefetchConfig;
use crate::workload::{DiskModel, ExpandConfig};

/// A tier size, either absolute or relative to the trace's footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacity {
    Bytes(u64),
    FootprintRatio(f64),
}

impl Capacity {
    pub fn is_relative(&self) -> bool {
        matches!(self, Capacity::FootprintRatio(_))
    }

    /// Capacity in pages, never below one.
    pub fn pages(&self, footprint_pages: u64) -> u64 {
        let p = match *self {
            Capacity::Bytes(b) => b / crate::PAGE_SIZE,
            Capacity::FootprintRatio(r) => (footprint_pages as f64 * r).ceil() as u64,
        };
        p.max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub policy: PolicyKind,
    pub fast_capacity: Capacity,
    pub fast_bandwidth: u64,
    pub fast_latency_ns: u64,
    pub slow_capacity: Capacity,
    pub slow_bandwidth_ratio: f64,
    pub slow_latency_ns: u64,
    pub tlb_shootdown_ns: u64,
    pub pin_threshold: u32,
    pub scan: ScanConfig,
    /// Fraction of background work (scans, asynchronous demotion) added to
    /// the global clock.
    pub background_interference: f64,
    pub prefetch: PrefetchConfig,
    pub disk: DiskModel,
    pub nic_bits_per_sec: u64,
    pub tag_cost_ns: u64,
    pub radix_fanout: u64,
    pub nimble_parallel_divisor: u64,
    pub idle_grace_ns: u64,
    pub seed: u64,
    pub sizes: ObjectSizes,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::KlocMigrateFs,
            fast_capacity: Capacity::FootprintRatio(0.125),
            fast_bandwidth: 30_000_000_000,
            fast_latency_ns: 100,
            slow_capacity: Capacity::FootprintRatio(2.0),
            slow_bandwidth_ratio: 0.2,
            slow_latency_ns: 300,
            tlb_shootdown_ns: 4_000,
            pin_threshold: 3,
            scan: ScanConfig::default(),
            background_interference: 0.1,
            prefetch: PrefetchConfig::default(),
            disk: DiskModel::default(),
            nic_bits_per_sec: 10_000_000_000,
            tag_cost_ns: 200,
            radix_fanout: 64,
            nimble_parallel_divisor: 1,
            idle_grace_ns: 10_000_000,
            seed: 1,
            sizes: ObjectSizes::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config line {line}: {reason}")]
pub struct ConfigError {
    pub line: usize,
    pub reason: String,
}

fn size_key(kind: ObjectKind) -> String {
    format!("object.size.{}", kind.name())
}

impl SimConfig {
    pub fn slow_bandwidth(&self) -> u64 {
        ((self.fast_bandwidth as f64 * self.slow_bandwidth_ratio).round() as u64).max(1)
    }

    pub fn expand_config(&self) -> ExpandConfig {
        ExpandConfig { radix_fanout: self.radix_fanout, tag_cost_ns: self.tag_cost_ns, prefetch: self.prefetch, ..ExpandConfig::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ratio_ok = |r: f64| r.is_finite() && r > 0.0;
        if !ratio_ok(self.slow_bandwidth_ratio) || self.slow_bandwidth_ratio > 1.0 {
            return Err(format!("tier.slow.bandwidth_ratio must be in (0, 1], got {}", self.slow_bandwidth_ratio));
        }
        for (name, c) in [("tier.fast", self.fast_capacity), ("tier.slow", self.slow_capacity)] {
            match c {
                Capacity::Bytes(0) => return Err(format!("{name} capacity must be positive")),
                Capacity::FootprintRatio(r) if !ratio_ok(r) => return Err(format!("{name} capacity ratio must be positive")),
                _ => {}
            }
        }
        if self.fast_bandwidth == 0 {
            return Err("tier.fast.bandwidth_bytes_per_sec must be positive".into());
        }
        if self.fast_latency_ns > self.slow_latency_ns {
            return Err("fast latency must not exceed slow latency".into());
        }
        if self.policy.scans() && self.scan.interval_ns == 0 {
            return Err("scan.interval_ns must be positive for scan-based policies".into());
        }
        if !(self.background_interference.is_finite() && self.background_interference >= 0.0) {
            return Err("scan.background_interference must be >= 0".into());
        }
        if self.nic_bits_per_sec == 0 || self.radix_fanout == 0 || self.nimble_parallel_divisor == 0 {
            return Err("nic bandwidth, radix fanout and parallel divisor must be positive".into());
        }
        self.prefetch.validate()?;
        self.disk.validate()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let cap = |kv: &mut dyn FnMut(&str, String), prefix: &str, c: Capacity| match c {
            Capacity::Bytes(b) => kv(&format!("{prefix}.capacity_bytes"), b.to_string()),
            Capacity::FootprintRatio(r) => kv(&format!("{prefix}.capacity_ratio"), r.to_string()),
        };
        kv("policy", self.policy.name().to_string());
        cap(&mut kv, "tier.fast", self.fast_capacity);
        kv("tier.fast.bandwidth_bytes_per_sec", self.fast_bandwidth.to_string());
        kv("tier.fast.latency_ns", self.fast_latency_ns.to_string());
        cap(&mut kv, "tier.slow", self.slow_capacity);
        kv("tier.slow.bandwidth_ratio", self.slow_bandwidth_ratio.to_string());
        kv("tier.slow.latency_ns", self.slow_latency_ns.to_string());
        kv("migration.tlb_shootdown_ns", self.tlb_shootdown_ns.to_string());
        kv("pin_threshold", self.pin_threshold.to_string());
        kv("scan.interval_ns", self.scan.interval_ns.to_string());
        kv("scan.cold_threshold_ns", self.scan.cold_threshold_ns.to_string());
        kv("scan.cost_per_frame_ns", self.scan.cost_per_frame_ns.to_string());
        kv("scan.idle_threshold_ns", self.scan.idle_threshold_ns.to_string());
        kv("scan.background_interference", self.background_interference.to_string());
        kv("prefetch.initial_pages", self.prefetch.initial_pages.to_string());
        kv("prefetch.min_pages", self.prefetch.min_pages.to_string());
        kv("prefetch.max_pages", self.prefetch.max_pages.to_string());
        kv("prefetch.reset_on_random", self.prefetch.reset_on_random.to_string());
        kv("disk.seq_bw", self.disk.seq_bandwidth_bytes_per_sec.to_string());
        kv("disk.rand_bw", self.disk.rand_bandwidth_bytes_per_sec.to_string());
        kv("disk.latency_ns", self.disk.latency_ns.to_string());
        kv("nic.bandwidth_bps", self.nic_bits_per_sec.to_string());
        kv("net.tag_cost_ns", self.tag_cost_ns.to_string());
        kv("workload.radix_fanout", self.radix_fanout.to_string());
        kv("nimble.parallel_divisor", self.nimble_parallel_divisor.to_string());
        kv("idle_grace_ns", self.idle_grace_ns.to_string());
        kv("seed", self.seed.to_string());
        for kind in ObjectKind::ALL {
            kv(&size_key(kind), self.sizes.get(kind).to_string());
        }
        s
    }

    /// Parses a config file on top of the defaults. When only the scan
    /// interval is given, the cold threshold follows it.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = SimConfig::default();
        let mut cold_given = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |reason: String| ConfigError { line, reason };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{body}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let int = || value.replace('_', "").parse::<u64>().map_err(|e| err(format!("{key}: {e}")));
            let float = || {
                let v = match value.split_once('/') {
                    Some((a, b)) => {
                        let a: f64 = a.trim().parse().map_err(|e| err(format!("{key}: {e}")))?;
                        let b: f64 = b.trim().parse().map_err(|e| err(format!("{key}: {e}")))?;
                        a / b
                    }
                    None => value.parse::<f64>().map_err(|e| err(format!("{key}: {e}")))?,
                };
                Ok::<f64, ConfigError>(v)
            };
            match key {
                "policy" => c.policy = value.parse().map_err(err)?,
                "tier.fast.capacity_bytes" => c.fast_capacity = Capacity::Bytes(int()?),
                "tier.fast.capacity_ratio" => c.fast_capacity = Capacity::FootprintRatio(float()?),
                "tier.fast.bandwidth_bytes_per_sec" => c.fast_bandwidth = int()?,
                "tier.fast.latency_ns" => c.fast_latency_ns = int()?,
                "tier.slow.capacity_bytes" => c.slow_capacity = Capacity::Bytes(int()?),
                "tier.slow.capacity_ratio" => c.slow_capacity = Capacity::FootprintRatio(float()?),
                "tier.slow.bandwidth_ratio" => c.slow_bandwidth_ratio = float()?,
                "tier.slow.latency_ns" => c.slow_latency_ns = int()?,
                "migration.tlb_shootdown_ns" => c.tlb_shootdown_ns = int()?,
                "pin_threshold" => c.pin_threshold = u32::try_from(int()?).map_err(|e| err(e.to_string()))?,
                "scan.interval_ns" => c.scan.interval_ns = int()?,
                "scan.cold_threshold_ns" => {
                    c.scan.cold_threshold_ns = int()?;
                    cold_given = true;
                }
                "scan.cost_per_frame_ns" => c.scan.cost_per_frame_ns = int()?,
                "scan.idle_threshold_ns" => c.scan.idle_threshold_ns = int()?,
                "scan.background_interference" => c.background_interference = float()?,
                "prefetch.initial_pages" => c.prefetch.initial_pages = int()?,
                "prefetch.min_pages" => c.prefetch.min_pages = int()?,
                "prefetch.max_pages" => c.prefetch.max_pages = int()?,
                "prefetch.reset_on_random" => {
                    c.prefetch.reset_on_random = value.parse().map_err(|e| err(format!("{key}: {e}")))?
                }
                "disk.seq_bw" => c.disk.seq_bandwidth_bytes_per_sec = int()?,
                "disk.rand_bw" => c.disk.rand_bandwidth_bytes_per_sec = int()?,
                "disk.latency_ns" => c.disk.latency_ns = int()?,
                "nic.bandwidth_bps" => c.nic_bits_per_sec = int()?,
                "net.tag_cost_ns" => c.tag_cost_ns = int()?,
                "workload.radix_fanout" => c.radix_fanout = int()?,
                "nimble.parallel_divisor" => c.nimble_parallel_divisor = int()?,
                "idle_grace_ns" => c.idle_grace_ns = int()?,
                "seed" => c.seed = int()?,
                k => match ObjectKind::ALL.into_iter().find(|kind| size_key(*kind) == k) {
                    Some(kind) => c.sizes.set(kind, int()?).map_err(err)?,
                    None => return Err(err(format!("unknown key `{k}`"))),
                },
            }
        }
        if !cold_given {
            c.scan.cold_threshold_ns = c.scan.interval_ns;
        }
        c.validate().map_err(|reason| ConfigError { line: 0, reason })?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let mut c = SimConfig { policy: PolicyKind::Nimble, slow_bandwidth_ratio: 1.0 / 3.0, ..SimConfig::default() };
        c.fast_capacity = Capacity::Bytes(5 << 30);
        c.scan.cold_threshold_ns = 7;
        c.prefetch.reset_on_random = true;
        c.sizes.set(ObjectKind::Inode, 512).unwrap();
        assert_eq!(SimConfig::from_text(&c.to_text()).unwrap(), c);
        assert_eq!(SimConfig::from_text(&SimConfig::default().to_text()).unwrap(), SimConfig::default());
    }

    #[test]
    fn documented_keys_parse() {
        let c = SimConfig::from_text(
            "# desk run\ntier.fast.capacity_bytes = 1048576\ntier.slow.bandwidth_ratio = 1/8\npolicy = ALL-FAST\n\
             scan.interval_ns = 300_000_000\nprefetch.initial_pages = 16\ndisk.seq_bw = 1000000000\n\
             pin_threshold = 5\nidle_grace_ns = 0\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(c.fast_capacity, Capacity::Bytes(1 << 20));
        assert_eq!(c.slow_bandwidth_ratio, 0.125);
        assert_eq!(c.policy, PolicyKind::AllFast);
        assert_eq!(c.scan.cold_threshold_ns, 300_000_000);
        assert_eq!((c.prefetch.initial_pages, c.pin_threshold, c.idle_grace_ns, c.seed), (16, 5, 0, 9));
    }

    #[test]
    fn bad_input_rejected() {
        assert_eq!(SimConfig::from_text("bogus = 1").unwrap_err().line, 1);
        assert!(SimConfig::from_text("\npolicy = thermostat").unwrap_err().reason.contains("thermostat"));
        assert!(SimConfig::from_text("tier.slow.bandwidth_ratio = 2").is_err());
        assert!(SimConfig::from_text("tier.fast.capacity_bytes").is_err());
    }

    #[test]
    fn capacity_resolution() {
        assert_eq!(Capacity::FootprintRatio(0.125).pages(800), 100);
        assert_eq!(Capacity::Bytes(8192).pages(0), 2);
        assert_eq!(Capacity::FootprintRatio(0.001).pages(10), 1);
    }
}
