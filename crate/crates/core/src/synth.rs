//! Generated call graphs for property tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::callgraph::{CallSiteEdge, FlowCallGraph, FunctionNode};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Non-allocator functions, entry included.
    pub max_functions: usize,
    pub max_out: usize,
    /// Chance that an extra edge points backwards (possibly to itself).
    pub cycle_prob: f64,
    pub loop_prob: f64,
    pub allocators: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { max_functions: 30, max_out: 4, cycle_prob: 0.15, loop_prob: 0.25, allocators: 2 }
    }
}

impl SynthConfig {
    pub fn acyclic() -> Self {
        Self { cycle_prob: 0.0, ..Self::default() }
    }
}

/// Random graph with entry `f0`. Every function is reachable from the
/// entry and the last one calls an allocator, so trimming never empties it.
pub fn random_graph(seed: u64, cfg: &SynthConfig) -> FlowCallGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=cfg.max_functions.max(2));
    let allocs = cfg.allocators.max(1);
    let fname = |i: usize| format!("f{i}");
    let aname = |i: usize| format!("alloc{i}");

    let mut out_degree = vec![0u32; n];
    let mut edges = Vec::new();
    let add = |edges: &mut Vec<CallSiteEdge>, out_degree: &mut Vec<u32>, from: usize, to: String, looped: bool| {
        let site = format!("s{}", edges.len());
        let mut e = CallSiteEdge::new(site, fname(from), to, out_degree[from]);
        out_degree[from] += 1;
        if looped {
            e = e.looped();
        }
        edges.push(e);
    };

    for i in 1..n {
        let from = rng.gen_range(0..i);
        let l = rng.gen_bool(cfg.loop_prob);
        add(&mut edges, &mut out_degree, from, fname(i), l);
    }
    let l = rng.gen_bool(cfg.loop_prob);
    add(&mut edges, &mut out_degree, n - 1, aname(0), l);
    for i in 0..n {
        let extra = rng.gen_range(0..cfg.max_out.max(1));
        for _ in 0..extra {
            if out_degree[i] as usize >= cfg.max_out {
                break;
            }
            let to = if rng.gen_bool(cfg.cycle_prob) {
                fname(rng.gen_range(0..=i))
            } else if i + 1 < n && rng.gen_bool(0.6) {
                fname(rng.gen_range(i + 1..n))
            } else {
                aname(rng.gen_range(0..allocs))
            };
            let l = rng.gen_bool(cfg.loop_prob);
            add(&mut edges, &mut out_degree, i, to, l);
        }
    }

    let nodes = (0..n).map(|i| FunctionNode::new(fname(i))).chain((0..allocs).map(|i| FunctionNode::allocator(aname(i))));
    FlowCallGraph::new(nodes, edges, "f0").expect("generated graph is well formed")
}

/// `f0 .. fk` with two call sites from each `fi` to `fi+1`, then
/// `fk -> malloc`: 2^k entry-to-allocator paths.
pub fn fork_chain(k: usize) -> FlowCallGraph {
    let mut edges = Vec::new();
    for i in 0..k {
        for j in 0..2u32 {
            edges.push(CallSiteEdge::new(format!("c{i}_{j}"), format!("f{i}"), format!("f{}", i + 1), j));
        }
    }
    edges.push(CallSiteEdge::new("m", format!("f{k}"), "malloc", 0));
    let nodes = (0..=k).map(|i| FunctionNode::new(format!("f{i}"))).chain([FunctionNode::allocator("malloc")]);
    FlowCallGraph::new(nodes, edges, "f0").expect("fork chain is well formed")
}
