mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::*;
use dartsim::ccalgos::{CcState, DcqcnParams, DcqcnRpState, Scheme, TimelyParams, TimelyState};
use dartsim::harness::{audit, run_seed, ExperimentConfig};
use dartsim::hostnic::{AussTable, CongestionState};
use dartsim::simcore::{RngStream, Scheduler, SimTime, StreamId};
use dartsim::switchmodel::DftTable;
use dartsim::topology::{build_clos, HostId};
use dartsim::workload::{generate_schedule, Mix, WorkloadConfig};

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cfg(1000))]

    #[test]
    fn dcqcn_matches_reference(seed in any::<u64>()) {
        let (state, input) = random_dcqcn(&mut rng(seed));
        prop_assert_eq!(dcqcn_case(state, input), Ok(()));
    }

    #[test]
    fn timely_matches_reference(seed in any::<u64>()) {
        let (state, rtt) = random_timely(&mut rng(seed));
        prop_assert_eq!(timely_case(state, rtt), Ok(()));
    }
}

proptest! {
    #![proptest_config(cfg(10_000))]

    #[test]
    fn auss_matches_active_message_set(seed in any::<u64>(), len in 1usize..60) {
        let ops = random_auss_ops(&mut rng(seed), len);
        prop_assert_eq!(auss_case(&ops), Ok(()));
    }
}

proptest! {
    #![proptest_config(cfg(512))]

    #[test]
    fn fsm_one_state_per_observation(seed in any::<u64>(), len in 1usize..80) {
        let obs = random_observations(&mut rng(seed), len);
        prop_assert_eq!(fsm_case(&obs), Ok(()));
    }

    #[test]
    fn receiver_acks_follow_state(seed in any::<u64>()) {
        prop_assert_eq!(receiver_case(seed, 400), Ok(()));
    }

    #[test]
    fn dcqcn_cnp_strictly_decreases(rc in 20e6f64..=LINE, alpha in 1e-6f64..=1.0) {
        let p = DcqcnParams::with_line_rate(LINE);
        let mut s = DcqcnRpState::new(LINE);
        s.rc = rc;
        s.alpha = alpha;
        s.on_cnp(&p);
        prop_assert!(s.rc < rc);
        prop_assert!(s.rc <= s.rt);
        prop_assert!((0.0..=1.0).contains(&s.alpha));
    }

    #[test]
    fn dcqcn_increase_capped(seed in any::<u64>(), steps in 1usize..200) {
        let p = DcqcnParams::with_line_rate(LINE);
        let mut r = rng(seed);
        let (init, _) = random_dcqcn(&mut r);
        let mut s = DcqcnRpState {
            rc: init.rc,
            rt: init.rt,
            alpha: init.alpha,
            timer_events: init.t,
            byte_events: init.bc,
            bytes_pending: init.pending,
        };
        for i in 0..steps {
            if i % 2 == 0 {
                s.on_timer(&p);
            } else {
                s.on_bytes_sent(p.byte_counter, &p);
            }
            prop_assert!(s.rc <= LINE && s.rt <= LINE);
            prop_assert!((0.0..=1.0).contains(&s.alpha));
        }
    }

    #[test]
    fn timely_rate_stays_bounded(
        rtts in prop::collection::vec(1.0f64..5_000_000.0, 1..200),
        start in 10e6f64..=LINE,
    ) {
        let p = TimelyParams::with_line_rate(LINE);
        let mut s = TimelyState::new(LINE, 20_000.0);
        s.rate = start;
        for rtt in rtts {
            s.on_rtt(rtt, &p);
            prop_assert!(s.rate >= p.min_rate && s.rate <= p.line_rate);
        }
    }

    #[test]
    fn governor_is_min_of_share_and_fallback(n in 1u32..64, rc in 10e6f64..=LINE, share in 0.5f64..=1.0) {
        let mut cc = CcState::new(Scheme::Dart, LINE, 20_000.0);
        cc.dasr_share = share;
        cc.dasr_on_ack(n);
        cc.dcqcn.rc = rc;
        let cap = LINE / n as f64;
        prop_assert!(cc.pacer_rate() <= cap * (1.0 + 1e-12));
        prop_assert!(cc.pacer_rate() > 0.0);
        // no fallback pressure: exactly the apportioned share
        cc.dcqcn.rc = LINE;
        let expect = if n == 1 { LINE } else { share * cap };
        prop_assert!(rel_err(cc.pacer_rate(), expect) < 1e-15);
    }

    #[test]
    fn iofd_only_ignores_sender_count(n in 1u32..64) {
        let mut cc = CcState::new(Scheme::IofdOnly, LINE, 20_000.0);
        cc.dasr_on_ack(n);
        prop_assert_eq!(cc.dasr_n, 1);
        prop_assert_eq!(cc.pacer_rate(), LINE);
    }

    /// Starts and ends from one sender in any order leave `starts - ends`
    /// messages, and the entry exists iff that is positive.
    #[test]
    fn auss_single_sender_idempotent(k in 1u64..12, order in prop::collection::vec(any::<bool>(), 0..40)) {
        let mut a = AussTable::new(SimTime::from_secs(10));
        let mut started = Vec::new();
        let mut next = 0;
        let mut t = 0;
        for start in order {
            t += 1;
            if start && next < k {
                a.on_start(7, next, None, SimTime(t));
                // replayed start marker
                a.on_start(7, next, None, SimTime(t));
                started.push(next);
                next += 1;
            } else if let Some(m) = started.pop() {
                a.on_end(7, m, SimTime(t));
                a.on_end(7, m, SimTime(t));
            }
            let live = started.len() as u32;
            prop_assert_eq!(a.get(7).map_or(0, |e| e.inflight_msgs), live);
            prop_assert_eq!(a.n(), usize::from(live > 0));
        }
    }

    /// Receivers that apply look-ahead never count fewer senders than ones
    /// that wait for each start marker.
    #[test]
    fn lookahead_counts_no_later(seed in any::<u64>(), groups in 1usize..6) {
        use rand::Rng;
        let mut r = rng(seed);
        // (time, sender, msg, group, is_start)
        let mut trace = Vec::new();
        let mut msg = 0;
        let mut lists = BTreeMap::new();
        for g in 0..groups as u64 {
            let t0 = r.random_range(0..10_000u64);
            let k = r.random_range(1..8usize);
            let senders: Vec<HostId> = (0..k).map(|i| 1 + (g as usize * 3 + i) % 20).collect();
            for &s in &senders {
                let start = t0 + r.random_range(0..500u64);
                let end = start + r.random_range(0..2_000u64);
                trace.push((start, s, msg, Some(g), true));
                trace.push((end, s, msg, Some(g), false));
                msg += 1;
            }
            lists.insert(g, senders);
        }
        for _ in 0..r.random_range(0..5) {
            let s = r.random_range(1..21usize);
            let start = r.random_range(0..10_000u64);
            trace.push((start, s, msg, None, true));
            trace.push((start + r.random_range(0..5_000u64), s, msg, None, false));
            msg += 1;
        }
        // ends sort after starts at the same instant
        trace.sort_by_key(|&(t, _, m, _, st)| (t, !st, m));
        let timeout = SimTime(r.random_range(500..20_000u64));
        let mut la = AussTable::new(timeout);
        let mut plain = AussTable::new(timeout);
        for (t, s, m, g, is_start) in trace {
            let now = SimTime(t);
            la.sweep(now);
            plain.sweep(now);
            if is_start {
                if let Some(g) = g {
                    la.apply_lookahead(g, &lists[&g], now);
                }
                la.on_start(s, m, g, now);
                plain.on_start(s, m, g, now);
            } else {
                la.on_end(s, m, now);
                plain.on_end(s, m, now);
            }
            prop_assert!(la.n() >= plain.n(), "at {t}: {} < {}", la.n(), plain.n());
        }
    }

    #[test]
    fn dft_never_overwrites(ops in prop::collection::vec((0u64..24, any::<bool>()), 1..300)) {
        let mut d = DftTable::new(8);
        let mut model: BTreeMap<u64, usize> = BTreeMap::new();
        for (i, (flow, alloc)) in ops.into_iter().enumerate() {
            if alloc {
                let port = i % 5;
                let res = d.allocate(flow, port, 4);
                if model.contains_key(&flow) || model.len() == 8 {
                    prop_assert!(res.is_err());
                } else {
                    prop_assert!(res.is_ok());
                    model.insert(flow, port);
                }
            } else {
                prop_assert_eq!(d.release(flow), model.remove(&flow).is_some());
            }
            prop_assert!(d.len() <= d.capacity());
            prop_assert_eq!(d.len(), model.len());
            for (&f, &p) in &model {
                prop_assert_eq!(d.lookup(f).map(|e| e.out_port), Some(p));
            }
        }
    }

    #[test]
    fn scheduler_orders_and_loses_nothing(
        times in prop::collection::vec(0u64..1_000, 1..200),
        cancel in prop::collection::vec(any::<bool>(), 200),
    ) {
        let mut s = Scheduler::new();
        let mut live = Vec::new();
        for (i, &t) in times.iter().enumerate() {
            let h = s.schedule(SimTime(t), i);
            if cancel[i] {
                s.cancel(h);
            } else {
                live.push((t, i));
            }
        }
        live.sort();
        let mut fired = Vec::new();
        while let Some((t, i)) = s.pop() {
            fired.push((t.as_nanos(), i));
        }
        // (time, insertion index) order is exactly FIFO within an instant
        prop_assert_eq!(fired, live);
    }

    #[test]
    fn rng_streams_reproduce(seed in any::<u64>()) {
        let draw = |id| {
            let mut r = RngStream::new(seed, id);
            (0..16).map(|_| r.below(1 << 20)).collect::<Vec<_>>()
        };
        prop_assert_eq!(draw(StreamId::Workload), draw(StreamId::Workload));
        prop_assert_ne!(draw(StreamId::Workload), draw(StreamId::Deflection));
    }
}

#[test]
fn classification_covers_every_input() {
    let mut seen = Vec::new();
    for ecn in [false, true] {
        for full in [false, true] {
            let s = CongestionState::classify(ecn, full);
            assert_eq!(CongestionState::ALL.iter().filter(|&&x| x == s).count(), 1);
            seen.push(s);
        }
    }
    for s in CongestionState::ALL {
        assert!(seen.contains(&s), "{s:?} unreachable");
    }
}

#[test]
fn clos_paths_and_audit() {
    for (hosts, over) in [(32, 4), (64, 2), (128, 4)] {
        let topo = build_clos(hosts, over, 10_000_000_000, SimTime::from_micros(5)).unwrap();
        let a = topo.audit();
        assert!(a.escape_acyclic);
        assert!((topo.oversubscription() - over as f64).abs() < 1e-9);
        for src in (0..hosts).step_by(5) {
            for dst in (0..hosts).step_by(7) {
                if src != dst {
                    assert_eq!(topo.shortest_hops(src, dst), bfs_hops(&topo, src, dst), "{src}->{dst}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(cfg(24))]

    #[test]
    fn workload_meets_load_and_mix(seed in 1u64..10_000, load in 0.2f64..0.7, short in 0.1f64..0.9) {
        let topo = build_clos(128, 4, 10_000_000_000, SimTime::from_micros(5)).unwrap();
        let cfg = WorkloadConfig {
            load,
            mix: Mix::Custom(short),
            duration: SimTime::from_millis(20),
            seed,
            ..WorkloadConfig::default()
        };
        let s = generate_schedule(&cfg, &topo).unwrap();
        let again = generate_schedule(&cfg, &topo).unwrap();
        prop_assert_eq!(s.messages.len(), again.messages.len());
        let same = s.messages.iter().zip(&again.messages).all(|(a, b)| {
            (a.src, a.dst, a.size, a.start_time) == (b.src, b.dst, b.size, b.start_time)
        });
        prop_assert!(same);
        let (sb, lb) = s.offered_bytes(topo.link_rate_bps(), cfg.short_flow_max);
        let offered = (sb + lb) * 8.0 / cfg.duration.as_secs_f64() / cfg.capacity_bps(&topo);
        prop_assert!((offered / load - 1.0).abs() <= 0.05, "offered {offered} for load {load}");
        prop_assert!((sb / (sb + lb) - short).abs() <= 0.05, "short share {} for {short}", sb / (sb + lb));
        for m in &s.messages {
            prop_assert_ne!(m.src, m.dst);
        }
    }

    /// Small fabric, every scheme: no drops, order kept, token bound against
    /// an independent BFS, conservation, one sample per completed message.
    #[test]
    fn fabric_invariants_hold(seed in 1u64..1_000, scheme_ix in 0usize..7, load in 0.2f64..0.8) {
        let scheme = [
            Scheme::Dart,
            Scheme::Dcqcn,
            Scheme::Timely,
            Scheme::PriqDcqcn,
            Scheme::DartNoLookahead,
            Scheme::DasrOnly,
            Scheme::IofdOnly,
        ][scheme_ix];
        let cfg = ExperimentConfig {
            scheme,
            hosts: 32,
            load,
            incast_degree: 8,
            duration_ns: 1_000_000,
            drain_ns: 2_000_000,
            seeds: vec![seed],
            ..ExperimentConfig::default()
        };
        let run = run_seed(&cfg, seed).unwrap();
        prop_assert!(run.deadlock.is_none());
        prop_assert_eq!(audit(&run), vec![]);
        let s = &run.summary;
        prop_assert_eq!(s.messages_completed, run.samples.len());
        let topo = cfg.build_topology().unwrap();
        let mut ids = std::collections::HashSet::new();
        for f in &run.samples {
            prop_assert!(ids.insert(f.msg_id));
            prop_assert!(f.fct > SimTime::ZERO);
            let shortest = bfs_hops(&topo, f.src, f.dst);
            prop_assert!(f.hops >= shortest);
            prop_assert!(f.hops <= shortest + 2 * 4, "{} hops over shortest {shortest}", f.hops);
        }
        if !scheme.uses_iofd() {
            prop_assert_eq!(s.deflections, 0);
        }
    }
}
