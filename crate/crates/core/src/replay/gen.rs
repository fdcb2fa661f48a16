//! Seeded random walks over a weighted graph, emitted as traces.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::trace::{alloc_route, AllocRoute, EventKind, TraceEvent};
use crate::callgraph::{CallSiteEdge, EdgeClass};
use crate::weights::WeightedDag;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    /// Walk steps before the final unwind.
    pub n_events: usize,
    /// Most live intra-SCC calls that re-enter a function already on the
    /// thread's stack (recursion rounds).
    pub recursion_bound: u32,
    /// Most times one frame takes the same in-loop call site.
    pub loop_bound: u32,
    pub threads: u32,
    /// Chance that a step frees a live object instead of walking.
    pub free_prob: f64,
    /// Chance that an object still live at the end gets freed.
    pub final_free_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_events: 200,
            recursion_bound: 3,
            loop_bound: 4,
            threads: 1,
            free_prob: 0.3,
            final_free_prob: 1.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("loop_bound must be at least 1")]
    LoopBound,
    #[error("at least one thread is required")]
    NoThreads,
    #[error("probability {0} is outside [0, 1]")]
    Probability(f64),
}

const SIZES: [u64; 14] = [1, 8, 16, 24, 32, 48, 64, 100, 128, 200, 256, 640, 1024, 4000];

struct Frame<'a> {
    function: &'a str,
    /// Times each call site was taken from this frame.
    taken: BTreeMap<&'a str, u32>,
    reentered: bool,
}

struct Walker<'a> {
    wd: &'a WeightedDag,
    cfg: &'a GenConfig,
    stacks: Vec<Vec<Frame<'a>>>,
    rounds: Vec<u32>,
}

enum Step<'a> {
    Call(&'a CallSiteEdge),
    Alloc,
    Ret,
}

impl<'a> Walker<'a> {
    fn frame(function: &'a str, reentered: bool) -> Frame<'a> {
        Frame { function, taken: BTreeMap::new(), reentered }
    }

    fn reenters(&self, tid: usize, e: &CallSiteEdge) -> bool {
        self.wd.dag().class_of(&e.site_id) == Some(EdgeClass::Inner)
            && self.stacks[tid].iter().any(|f| f.function == e.callee)
    }

    fn allowed(&self, tid: usize, e: &CallSiteEdge) -> bool {
        let f = self.stacks[tid].last().expect("entry frame");
        let used = f.taken.get(e.site_id.as_str()).copied().unwrap_or(0);
        let budget = if e.in_loop { self.cfg.loop_bound } else { 1 };
        if used >= budget {
            return false;
        }
        if self.wd.dag().class_of(&e.site_id).is_none() {
            return false;
        }
        !self.reenters(tid, e) || self.rounds[tid] < self.cfg.recursion_bound
    }

    fn options(&self, tid: usize) -> Vec<Step<'a>> {
        let g = self.wd.dag().graph();
        let stack = &self.stacks[tid];
        let f = stack.last().expect("entry frame").function;
        let mut opts = Vec::new();
        for e in g.out_edges(f) {
            if g.is_allocator(&e.callee) {
                continue;
            }
            if self.allowed(tid, e) {
                opts.push(Step::Call(e));
            }
        }
        if g.is_allocator(f) {
            opts.push(Step::Alloc);
        } else {
            match alloc_route(g, f) {
                Ok(AllocRoute::Implicit(site)) => {
                    let e = g.edge(&site).expect("route site exists");
                    if self.allowed(tid, e) {
                        opts.push(Step::Alloc);
                    }
                }
                // Several allocators: enter one explicitly.
                _ => {
                    for e in g.out_edges(f).filter(|e| g.is_allocator(&e.callee)) {
                        if self.allowed(tid, e) {
                            opts.push(Step::Call(e));
                        }
                    }
                }
            }
        }
        if stack.len() > 1 {
            opts.push(Step::Ret);
        }
        opts
    }

    fn push(&mut self, tid: usize, e: &'a CallSiteEdge) {
        let reentered = self.reenters(tid, e);
        let stack = &mut self.stacks[tid];
        *stack.last_mut().expect("entry frame").taken.entry(&e.site_id).or_default() += 1;
        stack.push(Self::frame(&e.callee, reentered));
        self.rounds[tid] += u32::from(reentered);
    }

    fn pop(&mut self, tid: usize) {
        let f = self.stacks[tid].pop().expect("non-entry frame");
        self.rounds[tid] -= u32::from(f.reentered);
    }
}

/// A valid trace for `wd`; equal configs give equal traces.
pub fn gen_trace(wd: &WeightedDag, cfg: &GenConfig) -> Result<Vec<TraceEvent>, GenError> {
    if cfg.loop_bound == 0 {
        return Err(GenError::LoopBound);
    }
    if cfg.threads == 0 {
        return Err(GenError::NoThreads);
    }
    for p in [cfg.free_prob, cfg.final_free_prob] {
        if !(0.0..=1.0).contains(&p) {
            return Err(GenError::Probability(p));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let g = wd.dag().graph();
    let n = cfg.threads as usize;
    let mut w = Walker {
        wd,
        cfg,
        stacks: (0..n).map(|_| vec![Walker::frame(g.entry(), false)]).collect(),
        rounds: vec![0; n],
    };
    let mut out: Vec<TraceEvent> = (1..cfg.threads).map(|t| TraceEvent::new(t, EventKind::Spawn)).collect();
    let mut live: Vec<String> = Vec::new();
    let mut next_obj = 0u64;
    let mut alloc = |tid: u32, rng: &mut ChaCha8Rng, live: &mut Vec<String>| {
        let object = format!("o{next_obj}");
        next_obj += 1;
        live.push(object.clone());
        let size = *SIZES.choose(rng).expect("non-empty");
        TraceEvent::new(tid, EventKind::Alloc { object, size })
    };

    for _ in 0..cfg.n_events {
        let tid = rng.gen_range(0..n);
        let t = tid as u32;
        if !live.is_empty() && rng.gen_bool(cfg.free_prob) {
            let victim = live.swap_remove(rng.gen_range(0..live.len()));
            out.push(TraceEvent::new(t, EventKind::Free(victim)));
            continue;
        }
        let opts = w.options(tid);
        if opts.is_empty() {
            // Entry frame exhausted: start a fresh top-level iteration.
            w.stacks[tid][0].taken.clear();
            continue;
        }
        match opts[rng.gen_range(0..opts.len())] {
            Step::Call(e) => {
                w.push(tid, e);
                out.push(TraceEvent::new(t, EventKind::Call(e.site_id.clone())));
            }
            Step::Ret => {
                w.pop(tid);
                out.push(TraceEvent::new(t, EventKind::Ret));
            }
            Step::Alloc => {
                let f = w.stacks[tid].last().expect("entry frame").function;
                if let Ok(AllocRoute::Implicit(site)) = alloc_route(g, f) {
                    let e = g.edge(&site).expect("route site exists");
                    *w.stacks[tid].last_mut().expect("entry frame").taken.entry(&e.site_id).or_default() += 1;
                }
                out.push(alloc(t, &mut rng, &mut live));
            }
        }
    }

    live.sort_by_key(|o| o[1..].parse::<u64>().unwrap_or(0));
    for object in live {
        if rng.gen_bool(cfg.final_free_prob) {
            out.push(TraceEvent::new(0, EventKind::Free(object)));
        }
    }
    for tid in 0..n {
        while w.stacks[tid].len() > 1 {
            w.pop(tid);
            out.push(TraceEvent::new(tid as u32, EventKind::Ret));
        }
    }
    Ok(out)
}
