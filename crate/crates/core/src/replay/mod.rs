//! Drives traces through tracker, encoding and the simulated heap.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::backend::{FreeOutcome, HeapConfig, HeapError, HeapStats, SimHeap, SizeClass};
use crate::encoding::{EncodeError, EncodingLayout};
use crate::tag::SemaType;
use crate::tracker::{SyntheticFrameModel, ThreadTracker, TrackerError};
use crate::weights::WeightedDag;

mod gen;
mod segregation;
mod trace;

pub use gen::{gen_trace, GenConfig, GenError};
pub use segregation::{reuse_violation, Occupant, SegregationChecker, Violation};
pub use trace::{format_trace, parse_trace, validate_trace, EventKind, TraceError, TraceErrorKind, TraceEvent};

use trace::{alloc_route, AllocRoute};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EventError {
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Heap(#[from] HeapError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("event {index} (line {line}): {source}")]
    Event { index: usize, line: usize, source: EventError },
    #[error("probe: {0}")]
    Probe(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayConfig {
    pub layout: EncodingLayout,
    pub frames: SyntheticFrameModel,
    pub heap: HeapConfig,
}

impl ReplayConfig {
    pub fn new(layout: EncodingLayout) -> Self {
        Self { layout, frames: SyntheticFrameModel::default(), heap: HeapConfig { layout, ..HeapConfig::default() } }
    }
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self::new(EncodingLayout::default())
    }
}

/// One allocated object as seen by the replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ObjectRecord {
    pub object: String,
    pub thread_id: u32,
    /// Call site into the allocator.
    pub site: String,
    pub sematype: SemaType,
    pub size: u64,
    pub address: u64,
    pub footprint: (u64, u64),
    pub class: Option<SizeClass>,
    pub allocated_at: usize,
    pub freed_at: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SiteCensus {
    pub allocs: u64,
    pub sematypes: u64,
}

/// Allocation sites against the SemaTypes they produced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Census {
    pub native_alloc_sites: u64,
    pub distinct_sematypes: u64,
    pub sites: BTreeMap<String, SiteCensus>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub events: usize,
    pub threads: Vec<u32>,
    pub heap: HeapStats,
    pub census: Census,
    pub nid_wraps: u64,
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
    pub diagnostics: Vec<String>,
}

struct Engine<'a> {
    wd: &'a WeightedDag,
    cfg: &'a ReplayConfig,
    trackers: BTreeMap<u32, ThreadTracker>,
    heap: SimHeap,
    checker: SegregationChecker,
    objects: Vec<ObjectRecord>,
    by_name: BTreeMap<String, usize>,
}

impl<'a> Engine<'a> {
    fn new(wd: &'a WeightedDag, cfg: &'a ReplayConfig) -> Self {
        let mut e = Self {
            wd,
            cfg,
            trackers: BTreeMap::new(),
            heap: SimHeap::new(HeapConfig { layout: cfg.layout, ..cfg.heap }),
            checker: SegregationChecker::new(),
            objects: Vec::new(),
            by_name: BTreeMap::new(),
        };
        e.spawn(0);
        e
    }

    fn spawn(&mut self, tid: u32) {
        let t = ThreadTracker::new(tid, self.wd, &self.cfg.layout, &self.cfg.frames);
        self.trackers.insert(tid, t);
    }

    fn step(&mut self, index: usize, ev: &TraceEvent) -> Result<(), EventError> {
        let (wd, frames) = (self.wd, &self.cfg.frames);
        if ev.kind == EventKind::Spawn {
            self.spawn(ev.tid);
            return Ok(());
        }
        let tracker = self.trackers.get_mut(&ev.tid).expect("validated thread");
        match &ev.kind {
            EventKind::Call(site) => tracker.on_call(site, wd, frames)?,
            EventKind::Ret => tracker.on_return()?,
            EventKind::Alloc { object, size } => {
                let route = alloc_route(wd.dag().graph(), tracker.current_function()).expect("validated alloc");
                let (site, tag) = match route {
                    AllocRoute::Explicit => {
                        let site = tracker.call_sites().last().expect("allocator is never the entry").to_string();
                        (site, tracker.on_alloc(wd)?)
                    }
                    AllocRoute::Implicit(site) => {
                        tracker.on_call(&site, wd, frames)?;
                        let tag = tracker.on_alloc(wd);
                        tracker.on_return()?;
                        (site, tag?)
                    }
                };
                let request = self.cfg.layout.encode(&tag.sematype, *size)?;
                let address = self.heap.sim_malloc(ev.tid, request)?;
                let block = self.heap.block(address).expect("fresh block");
                let occ = Occupant {
                    object: 0,
                    thread_id: ev.tid,
                    sematype: block.sematype,
                    class: block.class,
                    footprint: block.footprint,
                    allocated_at: index,
                    freed_at: None,
                };
                self.checker.on_alloc(occ);
                self.by_name.insert(object.clone(), self.objects.len());
                self.objects.push(ObjectRecord {
                    object: object.clone(),
                    thread_id: ev.tid,
                    site,
                    sematype: block.sematype,
                    size: *size,
                    address,
                    footprint: block.footprint,
                    class: block.class,
                    allocated_at: index,
                    freed_at: None,
                });
            }
            EventKind::Free(object) => {
                let idx = self.by_name[object];
                let _: FreeOutcome = self.heap.sim_free(ev.tid, self.objects[idx].address)?;
                self.objects[idx].freed_at = Some(index);
                self.checker.on_free(idx, index);
            }
            EventKind::Spawn => unreachable!(),
        }
        Ok(())
    }

    fn run(wd: &'a WeightedDag, events: &[TraceEvent], cfg: &'a ReplayConfig) -> Result<Self, ReplayError> {
        validate_trace(wd.dag().graph(), events)?;
        let mut e = Self::new(wd, cfg);
        for (index, ev) in events.iter().enumerate() {
            e.step(index, ev).map_err(|source| ReplayError::Event { index, line: ev.line, source })?;
        }
        Ok(e)
    }

    fn report(&self, events: usize) -> ReplayReport {
        let mut per_site: BTreeMap<&str, (u64, BTreeSet<SemaType>)> = BTreeMap::new();
        let mut all = BTreeSet::new();
        for o in &self.objects {
            let entry = per_site.entry(&o.site).or_default();
            entry.0 += 1;
            entry.1.insert(o.sematype);
            all.insert(o.sematype);
        }
        let census = Census {
            native_alloc_sites: per_site.len() as u64,
            distinct_sematypes: all.len() as u64,
            sites: per_site
                .into_iter()
                .map(|(s, (allocs, st))| (s.to_string(), SiteCensus { allocs, sematypes: st.len() as u64 }))
                .collect(),
        };

        let violations: Vec<Violation> = self
            .checker
            .violations()
            .iter()
            .map(|&(a, b, reason)| Violation {
                earlier: self.objects[a].object.clone(),
                later: self.objects[b].object.clone(),
                reason: reason.to_string(),
            })
            .collect();

        let mut diagnostics = Vec::new();
        if !self.wd.nid_fits(self.cfg.layout.nid_bits()) {
            diagnostics.push(format!(
                "nID space {} exceeds {} bits; nIDs wrap",
                self.wd.nid_space(),
                self.cfg.layout.nid_bits()
            ));
        }
        let nid_wraps: u64 = self.trackers.values().map(ThreadTracker::nid_wraps).sum();
        if nid_wraps > 0 {
            diagnostics.push(format!("{nid_wraps} allocations had their nID truncated"));
        }
        for &tid in self.trackers.keys() {
            let pending = self.heap.pending_deferred(tid);
            if pending > 0 {
                diagnostics.push(format!("thread {tid} has {pending} deferred frees not yet applied"));
            }
        }
        let live = self.objects.iter().filter(|o| o.freed_at.is_none()).count();
        if live > 0 {
            diagnostics.push(format!("{live} objects never freed"));
        }

        ReplayReport {
            events,
            threads: self.trackers.keys().copied().collect(),
            heap: self.heap.heap_stats(),
            census,
            nid_wraps,
            verdict: if violations.is_empty() { Verdict::Pass } else { Verdict::Fail },
            violations,
            diagnostics,
        }
    }
}

/// Replays `events` with the default layout and frame model.
pub fn replay(wd: &WeightedDag, events: &[TraceEvent]) -> Result<ReplayReport, ReplayError> {
    replay_with(wd, events, &ReplayConfig::default())
}

pub fn replay_with(wd: &WeightedDag, events: &[TraceEvent], cfg: &ReplayConfig) -> Result<ReplayReport, ReplayError> {
    Ok(Engine::run(wd, events, cfg)?.report(events.len()))
}

/// Report plus every allocated object, in allocation order.
pub fn replay_objects(
    wd: &WeightedDag,
    events: &[TraceEvent],
    cfg: &ReplayConfig,
) -> Result<(ReplayReport, Vec<ObjectRecord>), ReplayError> {
    let e = Engine::run(wd, events, cfg)?;
    Ok((e.report(events.len()), e.objects))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UafProbe {
    pub dangling_object: String,
    pub attacker_objects: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UafVerdict {
    Blocked,
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackerVerdict {
    pub attacker: ObjectRecord,
    /// Any of thread, nid, rid or size class differs from the dangling object.
    pub tags_differ: bool,
    pub verdict: UafVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UafReport {
    pub dangling: ObjectRecord,
    pub attackers: Vec<AttackerVerdict>,
}

/// Does any attacker object land on memory the dangling object occupied?
/// Footprints include the block header.
pub fn check_uaf(
    wd: &WeightedDag,
    events: &[TraceEvent],
    probe: &UafProbe,
    cfg: &ReplayConfig,
) -> Result<UafReport, ReplayError> {
    let e = Engine::run(wd, events, cfg)?;
    let find = |name: &str| {
        e.by_name
            .get(name)
            .map(|&i| e.objects[i].clone())
            .ok_or_else(|| ReplayError::Probe(format!("unknown object `{name}`")))
    };
    let dangling = find(&probe.dangling_object)?;
    let freed = dangling
        .freed_at
        .ok_or_else(|| ReplayError::Probe(format!("`{}` is never freed", dangling.object)))?;
    let mut attackers = Vec::new();
    for name in &probe.attacker_objects {
        let a = find(name)?;
        if a.allocated_at < freed {
            return Err(ReplayError::Probe(format!("`{name}` is allocated before `{}` is freed", dangling.object)));
        }
        let overlap = a.footprint.0 < dangling.footprint.1 && dangling.footprint.0 < a.footprint.1;
        let tags_differ = a.thread_id != dangling.thread_id
            || a.sematype.nid != dangling.sematype.nid
            || a.sematype.rid != dangling.sematype.rid
            || a.class != dangling.class;
        attackers.push(AttackerVerdict {
            attacker: a,
            tags_differ,
            verdict: if overlap { UafVerdict::Overlap } else { UafVerdict::Blocked },
        });
    }
    Ok(UafReport { dangling, attackers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::callgraph::parse_graph;
    use crate::pipeline::analyze_graph;

    /// Two request paths into the same allocator, both inside loops.
    fn two_paths() -> WeightedDag {
        analyze_graph(
            &parse_graph(
                "node main\nnode handler\nnode parse\nnode wrap alloc\n\
                 edge x main handler loop\nedge y main parse loop\n\
                 edge hx handler wrap\nedge py parse wrap\nentry main",
            )
            .unwrap(),
        )
        .unwrap()
    }

    fn events(wd: &WeightedDag, text: &str) -> Vec<TraceEvent> {
        parse_trace(text, wd.dag().graph()).unwrap()
    }

    #[test]
    fn distinct_traces_get_disjoint_memory() {
        let wd = two_paths();
        let text = "T0 call x\nT0 alloc a 32\nT0 alloc a2 32\nT0 free a2\nT0 ret\n\
                    T0 call y\nT0 alloc b 32\nT0 alloc b2 32\nT0 ret\n";
        let ev = events(&wd, text);
        let (r, objs) = replay_objects(&wd, &ev, &ReplayConfig::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_ne!(objs[0].sematype, objs[2].sematype);
        assert_ne!(objs[3].address, objs[1].address);
        assert_eq!(r.census.native_alloc_sites, 2);
        assert_eq!(r.census.distinct_sematypes, 2);
    }

    #[test]
    fn same_trace_reuses_within_sematype() {
        let wd = two_paths();
        let ev = events(&wd, "T0 call x\nT0 alloc a 32\nT0 alloc b 32\nT0 free b\nT0 alloc c 32\nT0 ret\n");
        let (r, objs) = replay_objects(&wd, &ev, &ReplayConfig::default()).unwrap();
        assert_eq!(objs[2].address, objs[1].address);
        assert_eq!(r.heap.reuses, 1);
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn threads_never_share_addresses() {
        let wd = two_paths();
        let text = "spawn 1\nT0 call x\nT1 call x\nT0 alloc a 8\nT0 alloc b 8\nT0 free b\n\
                    T1 alloc c 8\nT1 alloc d 8\nT0 ret\nT1 ret\n";
        let (r, objs) = replay_objects(&wd, &events(&wd, text), &ReplayConfig::default()).unwrap();
        let t0: BTreeSet<u64> = objs.iter().filter(|o| o.thread_id == 0).map(|o| o.address).collect();
        assert!(objs.iter().filter(|o| o.thread_id == 1).all(|o| !t0.contains(&o.address)));
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.threads, vec![0, 1]);
    }

    #[test]
    fn uaf_probe_verdicts() {
        let wd = two_paths();
        let text = "spawn 1\nT0 call x\nT0 alloc warm 64\nT0 alloc victim 64\nT0 free victim\n\
                    T0 alloc same 64\nT0 ret\nT0 call y\nT0 alloc other 64\nT0 ret\n\
                    T1 call x\nT1 alloc t1a 64\nT1 alloc t1b 64\nT1 ret\n";
        let ev = events(&wd, text);
        let probe = UafProbe {
            dangling_object: "victim".into(),
            attacker_objects: vec!["other".into(), "same".into(), "t1b".into()],
        };
        let r = check_uaf(&wd, &ev, &probe, &ReplayConfig::default()).unwrap();
        let v: Vec<_> = r.attackers.iter().map(|a| a.verdict).collect();
        assert_eq!(v, [UafVerdict::Blocked, UafVerdict::Overlap, UafVerdict::Blocked]);
        assert!(r.attackers.iter().all(|a| !a.tags_differ || a.verdict == UafVerdict::Blocked));

        let bad = UafProbe { dangling_object: "victim".into(), attacker_objects: vec!["warm".into()] };
        assert!(matches!(check_uaf(&wd, &ev, &bad, &ReplayConfig::default()), Err(ReplayError::Probe(_))));
        let unknown = UafProbe { dangling_object: "ghost".into(), attacker_objects: vec![] };
        assert!(matches!(check_uaf(&wd, &ev, &unknown, &ReplayConfig::default()), Err(ReplayError::Probe(_))));
    }

    #[test]
    fn reports_are_deterministic() {
        let wd = two_paths();
        let ev = events(&wd, "T0 call x\nT0 alloc a 32\nT0 ret\nT0 call y\nT0 alloc b 5000\nT0 free a\n");
        let a = serde_json::to_string(&replay(&wd, &ev).unwrap()).unwrap();
        let b = serde_json::to_string(&replay(&wd, &ev).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("objects never freed"));
    }

    #[test]
    fn invalid_trace_is_rejected_before_replay() {
        let wd = two_paths();
        let ev = vec![TraceEvent { tid: 0, kind: EventKind::Ret, line: 7 }];
        assert!(matches!(replay(&wd, &ev), Err(ReplayError::Trace(TraceError { line: 7, .. }))));
    }
}
