use klocsim::*;
use proptest::prelude::*;

fn small_spec(pattern: Pattern, n_ops: u64, seed: u64) -> GeneratorSpec {
    let base = GeneratorSpec { n_ops, seed, ..GeneratorSpec::preset(pattern) };
    match pattern {
        Pattern::RocksdbLike => GeneratorSpec { n_files: u64::from(base.n_cpus), file_size_bytes: 256 << 10, ..base },
        _ => GeneratorSpec { file_size_bytes: base.file_size_bytes.min(1 << 20), ..base },
    }
}

fn pattern() -> impl Strategy<Value = Pattern> {
    prop::sample::select(Pattern::ALL.to_vec())
}

fn policy() -> impl Strategy<Value = PolicyKind> {
    prop::sample::select(PolicyKind::ALL.to_vec())
}

fn config(p: PolicyKind, fast_ratio: f64) -> SimConfig {
    SimConfig { policy: p, fast_capacity: Capacity::FootprintRatio(fast_ratio), ..SimConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn tiers_never_exceed_capacity(pat in pattern(), p in policy(), seed in 0u64..1_000, ratio in 0.02f64..0.5) {
        let trace = generate(&small_spec(pat, 200, seed));
        let s = run(&trace, &config(p, ratio)).unwrap();
        prop_assert!(s.peak_fast_pages <= s.fast_capacity_pages);
        prop_assert!(s.peak_slow_pages <= s.slow_capacity_pages);
    }

    #[test]
    fn runs_are_deterministic(pat in pattern(), p in policy(), seed in 0u64..1_000) {
        let trace = generate(&small_spec(pat, 150, seed));
        let cfg = config(p, 0.125);
        prop_assert_eq!(run(&trace, &cfg).unwrap(), run(&trace, &cfg).unwrap());
        prop_assert_eq!(generate(&small_spec(pat, 150, seed)), trace);
    }

    #[test]
    fn every_op_leaves_state_consistent(pat in pattern(), p in policy(), seed in 0u64..1_000, ratio in 0.02f64..0.5) {
        let trace = generate(&small_spec(pat, 120, seed));
        let r = run_with(&trace, &config(p, ratio), None, RunOptions { audit: true, record: false });
        prop_assert!(r.is_ok(), "{:?}", r.err());
    }

    #[test]
    fn migrations_are_legal(pat in pattern(), p in policy(), seed in 0u64..1_000, ratio in 0.02f64..0.5) {
        let trace = generate(&small_spec(pat, 200, seed));
        let s = run(&trace, &config(p, ratio)).unwrap();
        prop_assert_eq!(s.violations(), 0);
        if matches!(p, PolicyKind::KlocNomigrate | PolicyKind::AllFast | PolicyKind::AllSlow | PolicyKind::Naive) {
            prop_assert_eq!(s.migrated_pages(), 0);
        }
        if p == PolicyKind::AllSlow {
            prop_assert_eq!(s.peak_fast_pages, 0);
        }
    }

    #[test]
    fn single_cpu_time_is_busy_plus_idle(seed in 0u64..1_000, p in policy()) {
        let spec = GeneratorSpec { n_cpus: 1, ..small_spec(Pattern::RandWrite, 150, seed) };
        let trace = generate(&spec);
        let cfg = config(p, 0.125);
        let s = run(&trace, &cfg).unwrap();
        let bg = (cfg.background_interference * s.background_ns as f64).round() as u64;
        prop_assert_eq!(s.busy_ns + s.idle_ns + bg, s.sim_time_ns);
    }

    #[test]
    fn cpu_time_brackets_wall_time(pat in pattern(), seed in 0u64..1_000) {
        let spec = small_spec(pat, 150, seed);
        let trace = generate(&spec);
        let cfg = SimConfig::default();
        let s = run(&trace, &cfg).unwrap();
        let wall = s.sim_time_ns - (cfg.background_interference * s.background_ns as f64).round() as u64;
        prop_assert!(s.busy_ns + s.idle_ns >= wall);
        prop_assert!(s.busy_ns + s.idle_ns <= wall * u64::from(spec.n_cpus));
    }

    #[test]
    fn migration_counter_only_grows(moves in prop::collection::vec(any::<bool>(), 1..400), threshold in 1u32..8) {
        let tier = |id, pages| TierConfig { tier_id: id, capacity_pages: pages, access_latency_ns: 100, bandwidth_bytes_per_sec: 1 << 30 };
        let cost = MigrationCostModel { tlb_shootdown_ns: 4_000 };
        let mut t = TierSystem::with_cost(tier(TierId::Fast, 2), tier(TierId::Slow, 2), cost, threshold).unwrap();
        let id = t.allocate_frame(FrameKind::Cache, TierId::Fast, 0).unwrap().frame_id;
        let mut last = 0u8;
        for (i, to_fast) in moves.into_iter().enumerate() {
            let dest = if to_fast { TierId::Fast } else { TierId::Slow };
            let was_pinned = t.frame(id).unwrap().pinned;
            let r = t.migrate_frame(id, dest, i as u64);
            let f = t.frame(id).unwrap();
            if was_pinned {
                prop_assert!(r.is_err() || dest == TierId::Fast);
                prop_assert_eq!(f.tier, TierId::Fast);
            }
            prop_assert!(f.migration_count >= last);
            if f.pinned {
                prop_assert_eq!(f.tier, TierId::Fast);
                prop_assert!(u32::from(f.migration_count) >= threshold);
            }
            last = f.migration_count;
        }
    }

    #[test]
    fn readahead_window_stays_in_bounds(reads in prop::collection::vec((0u64..4_096, 1u64..64, any::<bool>()), 1..300)) {
        let cfg = PrefetchConfig::default();
        let mut ra = ReadaheadState::new(1, cfg);
        let mut next = 0;
        for (i, (start, len, seq)) in reads.into_iter().enumerate() {
            let at = if seq { next } else { start };
            let plan = ra.on_read(at, len, i as u64);
            prop_assert!(plan.window_after >= cfg.min_pages && plan.window_after <= cfg.max_pages);
            prop_assert_eq!(plan.window_after, ra.window_pages);
            prop_assert!(plan.fetch_count <= cfg.max_pages);
            next = at + len;
        }
    }

    #[test]
    fn config_text_round_trips(
        p in policy(),
        fast in prop_oneof![(1u64..1 << 40).prop_map(Capacity::Bytes), (0.001f64..4.0).prop_map(Capacity::FootprintRatio)],
        ratio in 0.01f64..=1.0,
        lat in 1u64..1_000,
        threshold in 1u32..100,
        interference in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let cfg = SimConfig {
            policy: p,
            fast_capacity: fast,
            slow_bandwidth_ratio: ratio,
            fast_latency_ns: lat,
            slow_latency_ns: lat * 3,
            pin_threshold: threshold,
            background_interference: interference,
            seed,
            ..SimConfig::default()
        };
        prop_assert_eq!(SimConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn trace_text_round_trips(pat in pattern(), seed in 0u64..1_000) {
        let trace = generate(&small_spec(pat, 100, seed));
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        prop_assert_eq!(parse_trace(buf.as_slice()).unwrap(), trace);
    }
}
