use crate::memory::transfer_ns;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiskMode {
    Seq,
    Rand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiskModel {
    pub seq_bandwidth_bytes_per_sec: u64,
    pub rand_bandwidth_bytes_per_sec: u64,
    pub latency_ns: u64,
}

impl Default for DiskModel {
    fn default() -> Self {
        Self { seq_bandwidth_bytes_per_sec: 1_200_000_000, rand_bandwidth_bytes_per_sec: 425_000_000, latency_ns: 0 }
    }
}

impl DiskModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.rand_bandwidth_bytes_per_sec == 0 || self.seq_bandwidth_bytes_per_sec < self.rand_bandwidth_bytes_per_sec {
            return Err("disk bandwidth must satisfy seq >= rand > 0".into());
        }
        Ok(())
    }

    pub fn cost_ns(&self, bytes: u64, mode: DiskMode) -> u64 {
        let bw = match mode {
            DiskMode::Seq => self.seq_bandwidth_bytes_per_sec,
            DiskMode::Rand => self.rand_bandwidth_bytes_per_sec,
        };
        self.latency_ns + transfer_ns(bytes, bw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_page() {
        assert_eq!(DiskModel::default().cost_ns(4096, DiskMode::Seq), 3414);
    }

    #[test]
    fn zero_bytes_is_latency() {
        let d = DiskModel { latency_ns: 20_000, ..DiskModel::default() };
        assert_eq!(d.cost_ns(0, DiskMode::Rand), 20_000);
    }

    #[test]
    fn rand_to_seq_ratio() {
        let d = DiskModel::default();
        let bytes = 425 * 1_200 * 1_000;
        let ratio = d.cost_ns(bytes, DiskMode::Rand) as f64 / d.cost_ns(bytes, DiskMode::Seq) as f64;
        assert!((ratio - 1_200.0 / 425.0).abs() < 1e-9);
    }
}
