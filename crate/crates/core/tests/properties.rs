use proptest::prelude::*;

use sematype::backend::{HeapConfig, SimHeap};
use sematype::replay::{check_uaf, gen_trace, replay, replay_objects, EventKind, GenConfig, ReplayConfig, UafProbe, UafVerdict};
use sematype::synth::{random_graph, SynthConfig};
use sematype::weights::security_profile;
use sematype::{
    aggregate_rid, analyze_graph, analyze_graph_unelided, encode, parse_graph, SemaType, SyntheticFrameModel,
    ThreadTracker,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graph_text_round_trips(seed in any::<u64>()) {
        let g = random_graph(seed, &SynthConfig::default());
        let again = parse_graph(&g.to_string()).unwrap();
        prop_assert_eq!(again.to_string(), g.to_string());
    }

    #[test]
    fn elision_keeps_path_count(seed in any::<u64>()) {
        let g = random_graph(seed, &SynthConfig::acyclic());
        let before = analyze_graph_unelided(&g).unwrap();
        let after = analyze_graph(&g).unwrap();
        prop_assert_eq!(before.nid_space(), after.nid_space());
        prop_assert!(after.dag().active_sccs().count() <= before.dag().active_sccs().count());
    }

    #[test]
    fn loop_free_acyclic_bounds_meet(seed in any::<u64>()) {
        let cfg = SynthConfig { loop_prob: 0.0, ..SynthConfig::acyclic() };
        let wd = analyze_graph(&random_graph(seed, &cfg)).unwrap();
        prop_assume!(wd.nid_space() <= 10_000);
        let p = security_profile(&wd, 14).unwrap();
        prop_assert_eq!(p.min_sematypes, p.max_sematypes);
        prop_assert_eq!(p.min_sematypes, wd.nid_space());
    }

    #[test]
    fn tracker_unwinds_to_initial_state(seed in any::<u64>()) {
        let wd = analyze_graph(&random_graph(seed, &SynthConfig::default())).unwrap();
        let fm = SyntheticFrameModel::default();
        let layout = Default::default();
        let mut t = ThreadTracker::new(0, &wd, &layout, &fm);
        let initial = t.clone();
        let events = gen_trace(&wd, &GenConfig { seed, n_events: 300, ..GenConfig::default() }).unwrap();
        for ev in &events {
            match &ev.kind {
                EventKind::Call(s) => t.on_call(s, &wd, &fm).unwrap(),
                EventKind::Ret => t.on_return().unwrap(),
                _ => {}
            }
        }
        prop_assert_eq!(t, initial);
    }

    #[test]
    fn replay_is_deterministic(seed in any::<u64>()) {
        let wd = analyze_graph(&random_graph(seed, &SynthConfig::default())).unwrap();
        let events = gen_trace(&wd, &GenConfig { seed, threads: 2, ..GenConfig::default() }).unwrap();
        let a = serde_json::to_string(&replay(&wd, &events).unwrap()).unwrap();
        let b = serde_json::to_string(&replay(&wd, &events).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn differing_tags_never_overlap(seed in any::<u64>()) {
        let wd = analyze_graph(&random_graph(seed, &SynthConfig::default())).unwrap();
        let cfg = GenConfig { seed, n_events: 300, threads: 2, free_prob: 0.4, ..GenConfig::default() };
        let events = gen_trace(&wd, &cfg).unwrap();
        let (_, objects) = replay_objects(&wd, &events, &ReplayConfig::default()).unwrap();
        let Some(dangling) = objects.iter().find(|o| o.freed_at.is_some()) else { return Ok(()) };
        let freed = dangling.freed_at.unwrap();
        let probe = UafProbe {
            dangling_object: dangling.object.clone(),
            attacker_objects: objects.iter().filter(|o| o.allocated_at > freed).map(|o| o.object.clone()).collect(),
        };
        let r = check_uaf(&wd, &events, &probe, &ReplayConfig::default()).unwrap();
        for a in &r.attackers {
            if a.tags_differ || !a.attacker.sematype.loop_bit {
                prop_assert_eq!(a.verdict, UafVerdict::Blocked);
            }
        }
    }

    #[test]
    fn rid_ignores_frames_beyond_seven(
        old in prop::collection::vec(any::<u64>(), 1..10),
        recent in prop::collection::vec(any::<u64>(), 7),
    ) {
        let mut a = old.clone();
        a.extend(&recent);
        prop_assert_eq!(aggregate_rid(&a, 0x3FFF), aggregate_rid(&recent, 0x3FFF));
    }

    #[test]
    fn live_blocks_are_disjoint(ops in prop::collection::vec((any::<bool>(), 0u64..4, 1u64..3000, 0u32..3, any::<prop::sample::Index>()), 1..300)) {
        let mut h = SimHeap::new(HeapConfig::default());
        let mut live: Vec<u64> = Vec::new();
        for (loop_bit, nid, size, tid, pick) in ops {
            if !live.is_empty() && size % 3 == 0 {
                let a = live.swap_remove(pick.index(live.len()));
                h.sim_free(tid, a).unwrap();
            } else {
                live.push(h.sim_malloc(tid, encode(&SemaType::new(loop_bit, nid, 0), size).unwrap()).unwrap());
            }
            prop_assert!(h.resident_bytes() <= h.virtual_bytes());
        }
        let mut spans: Vec<(u64, u64)> = h.live_blocks().map(|b| b.footprint).collect();
        spans.sort();
        prop_assert!(spans.windows(2).all(|w| w[0].1 <= w[1].0));
        for b in h.live_blocks() {
            prop_assert!(b.address >= b.footprint.0 + 16);
            prop_assert!(b.address + b.header.size <= b.footprint.1);
        }
    }
}
