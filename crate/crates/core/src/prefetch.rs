//! Per-file adaptive readahead.

use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefetchConfig {
    pub initial_pages: u64,
    pub min_pages: u64,
    pub max_pages: u64,
    /// Random reads reset the window to `initial_pages` instead of halving it.
    pub reset_on_random: bool,
}

impl Default for PrefetchConfig {
    fn default() -> Self {
        Self { initial_pages: 32, min_pages: 8, max_pages: 32_768, reset_on_random: false }
    }
}

impl PrefetchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_pages == 0 || self.min_pages > self.initial_pages || self.initial_pages > self.max_pages {
            return Err(format!(
                "readahead window needs 0 < min ({}) <= initial ({}) <= max ({})",
                self.min_pages, self.initial_pages, self.max_pages
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefetchPlan {
    pub fetch_start: u64,
    pub fetch_count: u64,
    pub window_after: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadaheadState {
    pub file_id: u64,
    pub window_pages: u64,
    pub next_expected_page: Option<u64>,
    pub prefetched_pending: BTreeSet<u64>,
    cfg: PrefetchConfig,
}

impl ReadaheadState {
    pub fn new(file_id: u64, cfg: PrefetchConfig) -> Self {
        Self { file_id, window_pages: cfg.initial_pages, next_expected_page: None, prefetched_pending: BTreeSet::new(), cfg }
    }

    /// Updates the window for a read of `len_pages` starting at `start_page`
    /// and returns the range to read ahead. `fetch_count` is zero while at
    /// least half a window of earlier prefetches is still unconsumed.
    pub fn on_read(&mut self, start_page: u64, len_pages: u64, _now: u64) -> PrefetchPlan {
        let len_pages = len_pages.max(1);
        match self.next_expected_page {
            None => {}
            Some(p) if p == start_page => {
                self.window_pages = (self.window_pages * 2).min(self.cfg.max_pages);
            }
            Some(_) => {
                self.window_pages = if self.cfg.reset_on_random {
                    self.cfg.initial_pages
                } else {
                    (self.window_pages / 2).max(self.cfg.min_pages)
                };
            }
        }
        let end = start_page + len_pages;
        self.next_expected_page = Some(end);
        let fetch_count = if (self.prefetched_pending.len() as u64) < self.window_pages / 2 { self.window_pages } else { 0 };
        PrefetchPlan { fetch_start: end, fetch_count, window_after: self.window_pages }
    }

    pub fn mark_fetched(&mut self, page: u64) {
        self.prefetched_pending.insert(page);
    }

    /// True when the page was brought in by an earlier prefetch.
    pub fn consume(&mut self, page: u64) -> bool {
        self.prefetched_pending.remove(&page)
    }

    /// Forgets pending pages at or beyond `from_page` (truncate or delete).
    pub fn drop_pending_from(&mut self, from_page: u64) {
        self.prefetched_pending.split_off(&from_page);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st() -> ReadaheadState {
        ReadaheadState::new(1, PrefetchConfig::default())
    }

    #[test]
    fn sequential_doubles() {
        let mut s = st();
        assert_eq!(s.on_read(0, 1, 0).window_after, 32);
        assert_eq!(s.on_read(1, 1, 0).window_after, 64);
    }

    #[test]
    fn sequential_reaches_cap() {
        let mut s = st();
        let mut w = 0;
        for i in 0..12 {
            w = s.on_read(i, 1, 0).window_after;
        }
        assert_eq!(w, 32_768);
        assert_eq!(s.on_read(12, 1, 0).window_after, 32_768);
    }

    #[test]
    fn random_halves_and_floors() {
        let mut s = st();
        s.on_read(0, 1, 0);
        s.on_read(1, 1, 0);
        assert_eq!(s.on_read(500, 1, 0).window_after, 32);
        for p in [9, 77, 3, 1000] {
            s.on_read(p, 1, 0);
        }
        assert_eq!(s.window_pages, 8);
        let mut r = ReadaheadState::new(2, PrefetchConfig { reset_on_random: true, ..PrefetchConfig::default() });
        r.on_read(0, 1, 0);
        r.on_read(1, 1, 0);
        assert_eq!(r.on_read(90, 1, 0).window_after, 32);
    }

    #[test]
    fn plan_starts_after_read_and_waits_for_consumption() {
        let mut s = st();
        let p = s.on_read(10, 4, 0);
        assert_eq!((p.fetch_start, p.fetch_count), (14, 32));
        for page in 14..46 {
            s.mark_fetched(page);
        }
        assert_eq!(s.on_read(14, 1, 0).fetch_count, 0);
    }

    #[test]
    fn consume_hits_once() {
        let mut s = st();
        s.mark_fetched(5);
        assert!(s.consume(5));
        assert!(!s.consume(5));
        assert!(!s.consume(6));
    }

    #[test]
    fn config_validation() {
        assert!(PrefetchConfig::default().validate().is_ok());
        assert!(PrefetchConfig { min_pages: 64, ..PrefetchConfig::default() }.validate().is_err());
    }
}
