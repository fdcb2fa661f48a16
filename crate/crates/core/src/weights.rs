//! Collision-free call-site weights over the condensed DAG.
//!
//! Functions are visited callee-first. Inside a function the outgoing links
//! are taken in call-site order: each link gets the running sum of the
//! weights of the links before it, and the sum grows by `max(1, callee
//! weight)`. Allocators have weight zero. The nID of an entry-to-allocator
//! path is the sum of its link weights; distinct paths get distinct nIDs
//! because every link's offset exceeds the largest sum reachable through any
//! earlier sibling.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::callgraph::{CondensedDag, EdgeClass, LinkId, SccId};

/// Enumeration refuses to produce more paths than this.
pub const PATH_GUARD: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WeightError {
    #[error("condensed graph has a cycle through `{0}`")]
    Cycle(String),
    #[error("weight of `{0}` overflows 64 bits")]
    Overflow(String),
    #[error("path is empty")]
    EmptyPath,
    #[error("path does not start at the entry")]
    NotFromEntry,
    #[error("link {0} does not continue the path")]
    Disconnected(LinkId),
    #[error("link id {0} out of range")]
    UnknownLink(LinkId),
    #[error("path does not end at an allocator")]
    NotTerminal,
    #[error("`{0}` is not an active allocator")]
    NotAnAllocator(String),
    #[error("more than {0} paths")]
    TooManyPaths(usize),
}

#[derive(Debug, Clone)]
pub struct WeightedDag {
    dag: CondensedDag,
    link_weight: Vec<u64>,
    node_weight: Vec<u64>,
    topo_order: Vec<SccId>,
    site_weight: BTreeMap<String, u64>,
}

impl WeightedDag {
    pub fn dag(&self) -> &CondensedDag {
        &self.dag
    }

    pub fn link_weight(&self, link: LinkId) -> u64 {
        self.link_weight[link]
    }

    /// Function weight: the number of distinct paths from this node to any
    /// allocator. Zero for allocators and for elided nodes.
    pub fn node_weight(&self, scc: SccId) -> u64 {
        self.node_weight[scc]
    }

    /// Active nodes, callers before callees; ties broken by label.
    pub fn topo_order(&self) -> &[SccId] {
        &self.topo_order
    }

    /// Weight carried by an original call site. Inner sites and sites into
    /// elided functions carry zero.
    pub fn site_weight(&self, site: &str) -> Option<u64> {
        self.site_weight.get(site).copied()
    }

    pub fn site_weights(&self) -> &BTreeMap<String, u64> {
        &self.site_weight
    }

    /// Number of nIDs the program needs, i.e. the entry's function weight.
    pub fn nid_space(&self) -> u64 {
        self.node_weight[self.dag.entry()]
    }

    /// Whether the tracked nIDs fit in `nid_bits`. When they do not, runtime
    /// values wrap and distinct paths may collide.
    pub fn nid_fits(&self, nid_bits: u32) -> bool {
        nid_bits >= 64 || self.nid_space() <= 1u64 << nid_bits
    }
}

pub fn assign_weights(d: CondensedDag) -> Result<WeightedDag, WeightError> {
    let topo_order = topological_order(&d)?;
    let mut link_weight = vec![0u64; d.links().len()];
    let mut node_weight = vec![0u64; d.sccs().len()];

    for &n in topo_order.iter().rev() {
        let mut w: u64 = 0;
        for &l in d.out_links(n) {
            link_weight[l] = w;
            let step = node_weight[d.link(l).to].max(1);
            w = w
                .checked_add(step)
                .ok_or_else(|| WeightError::Overflow(d.scc(n).label().to_string()))?;
        }
        node_weight[n] = w;
    }

    let mut site_weight = BTreeMap::new();
    for e in d.graph().edges() {
        let w = d.link_for_site(&e.site_id).map_or(0, |l| link_weight[l]);
        site_weight.insert(e.site_id.clone(), w);
    }

    Ok(WeightedDag { dag: d, link_weight, node_weight, topo_order, site_weight })
}

/// Kahn's algorithm over the active nodes, smallest label first.
fn topological_order(d: &CondensedDag) -> Result<Vec<SccId>, WeightError> {
    let mut indegree = vec![0usize; d.sccs().len()];
    for l in d.links() {
        indegree[l.to] += 1;
    }
    let mut ready: BTreeSet<(&str, SccId)> = d
        .active_sccs()
        .filter(|s| indegree[s.id] == 0)
        .map(|s| (s.label(), s.id))
        .collect();
    let mut order = Vec::new();
    while let Some(first) = ready.pop_first() {
        let n = first.1;
        order.push(n);
        for &l in d.out_links(n) {
            let to = d.link(l).to;
            indegree[to] -= 1;
            if indegree[to] == 0 {
                ready.insert((d.scc(to).label(), to));
            }
        }
    }
    let active = d.active_sccs().count();
    if order.len() != active {
        let stuck = d
            .active_sccs()
            .find(|s| indegree[s.id] > 0)
            .map(|s| s.label().to_string())
            .unwrap_or_default();
        return Err(WeightError::Cycle(stuck));
    }
    Ok(order)
}

/// Sum of link weights along an entry-to-allocator path.
pub fn path_nid(wd: &WeightedDag, path: &[LinkId]) -> Result<u64, WeightError> {
    let d = wd.dag();
    let first = *path.first().ok_or(WeightError::EmptyPath)?;
    if first >= d.links().len() {
        return Err(WeightError::UnknownLink(first));
    }
    if d.link(first).from != d.entry() {
        return Err(WeightError::NotFromEntry);
    }
    let mut at = d.entry();
    let mut sum: u64 = 0;
    for &l in path {
        if l >= d.links().len() {
            return Err(WeightError::UnknownLink(l));
        }
        let link = d.link(l);
        if link.from != at {
            return Err(WeightError::Disconnected(l));
        }
        sum += wd.link_weight(l);
        at = link.to;
    }
    if !d.scc(at).allocator {
        return Err(WeightError::NotTerminal);
    }
    Ok(sum)
}

/// All entry-to-`site` paths, in call-site order (depth-first, links taken
/// in the caller's order).
pub fn enumerate_paths(wd: &WeightedDag, site: &str) -> Result<Vec<Vec<LinkId>>, WeightError> {
    let d = wd.dag();
    let target = d
        .scc_of(site)
        .filter(|&s| d.is_active(s) && d.scc(s).allocator)
        .ok_or_else(|| WeightError::NotAnAllocator(site.to_string()))?;
    walks(wd, d.entry(), Some(target), PATH_GUARD)
}

/// All walks from `from` to any allocator.
pub fn enumerate_walks_from(wd: &WeightedDag, from: SccId) -> Result<Vec<Vec<LinkId>>, WeightError> {
    walks(wd, from, None, PATH_GUARD)
}

fn walks(wd: &WeightedDag, from: SccId, target: Option<SccId>, guard: usize) -> Result<Vec<Vec<LinkId>>, WeightError> {
    let d = wd.dag();
    let hits = |s: SccId| match target {
        Some(t) => s == t,
        None => d.scc(s).allocator,
    };
    let mut found = Vec::new();
    let mut path: Vec<LinkId> = Vec::new();
    // (node, index of next out link to try)
    let mut stack: Vec<(SccId, usize)> = vec![(from, 0)];
    if hits(from) {
        found.push(Vec::new());
    }
    while let Some((node, next)) = stack.last_mut() {
        let outs = d.out_links(*node);
        if *next < outs.len() {
            let l = outs[*next];
            *next += 1;
            let to = d.link(l).to;
            path.push(l);
            if hits(to) {
                if found.len() == guard {
                    return Err(WeightError::TooManyPaths(guard));
                }
                found.push(path.clone());
                path.pop();
            } else {
                stack.push((to, 0));
            }
        } else {
            stack.pop();
            path.pop();
        }
    }
    Ok(found)
}

/// Per-program SemaType bounds derived from path counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SecurityProfile {
    /// Allocation sites (active allocator nodes).
    pub n_sites: usize,
    pub paths_per_site: BTreeMap<String, u64>,
    /// Recursive SCC nodes on each path, per site, in enumeration order.
    pub scc_nodes_per_path: BTreeMap<String, Vec<u32>>,
    /// Sites with at least one reaching path through a loop link.
    pub k_loop_sites_any: usize,
    /// Sites whose every reaching path goes through a loop link.
    pub k_loop_sites_all: usize,
    /// Paths with a loop link or a recursive node.
    pub recurrent_paths: u64,
    pub one_time_paths: u64,
    pub rid_bits: u32,
    /// Sum of paths over all sites.
    pub min_sematypes: u64,
    /// Each path through a recursive node may split into `2^rid_bits`
    /// SemaTypes; every other path is exactly one.
    pub max_sematypes: u64,
    /// `2^rid_bits` times the path total, reached when every path recurses.
    pub sematype_ceiling: u64,
}

pub fn security_profile(wd: &WeightedDag, rid_bits: u32) -> Result<SecurityProfile, WeightError> {
    let d = wd.dag();
    let fan = 1u64.checked_shl(rid_bits).unwrap_or(u64::MAX);
    let mut p = SecurityProfile {
        n_sites: 0,
        paths_per_site: BTreeMap::new(),
        scc_nodes_per_path: BTreeMap::new(),
        k_loop_sites_any: 0,
        k_loop_sites_all: 0,
        recurrent_paths: 0,
        one_time_paths: 0,
        rid_bits,
        min_sematypes: 0,
        max_sematypes: 0,
        sematype_ceiling: 0,
    };
    let entry_recursive = d.scc(d.entry()).recursive;

    let sites: Vec<_> = d.allocator_sccs().map(|s| s.label().to_string()).collect();
    for site in sites {
        let paths = enumerate_paths(wd, &site)?;
        let mut counts = Vec::with_capacity(paths.len());
        let (mut any_loop, mut all_loop) = (false, !paths.is_empty());
        for path in &paths {
            let r = u32::from(entry_recursive)
                + path.iter().filter(|&&l| d.scc(d.link(l).to).recursive).count() as u32;
            let looped = path.iter().any(|&l| d.link(l).in_loop);
            any_loop |= looped;
            all_loop &= looped;
            if looped || r > 0 {
                p.recurrent_paths += 1;
            } else {
                p.one_time_paths += 1;
            }
            p.max_sematypes = p.max_sematypes.saturating_add(if r > 0 { fan } else { 1 });
            counts.push(r);
        }
        p.n_sites += 1;
        p.k_loop_sites_any += usize::from(any_loop);
        p.k_loop_sites_all += usize::from(all_loop);
        p.min_sematypes += paths.len() as u64;
        p.paths_per_site.insert(site.clone(), paths.len() as u64);
        p.scc_nodes_per_path.insert(site, counts);
    }
    p.sematype_ceiling = p.min_sematypes.saturating_mul(fan);
    Ok(p)
}

/// Class, weight and callee of a call site, as the runtime tracker needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiteInfo<'a> {
    pub edge: &'a crate::callgraph::CallSiteEdge,
    pub class: EdgeClass,
    pub weight: u64,
    pub callee_recursive: bool,
}

impl WeightedDag {
    pub fn site(&self, site: &str) -> Option<SiteInfo<'_>> {
        let d = &self.dag;
        let edge = d.graph().edge(site)?;
        let callee_scc = d.scc_of(&edge.callee)?;
        Some(SiteInfo {
            edge,
            class: d.class_of(site)?,
            weight: self.site_weight[site],
            callee_recursive: d.scc(callee_scc).recursive,
        })
    }
}
