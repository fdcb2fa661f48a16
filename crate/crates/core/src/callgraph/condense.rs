use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{kosaraju_sharir, FlowCallGraph};

pub type SccId = usize;
pub type LinkId = usize;

/// Role of an original call site relative to recursive SCCs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeClass {
    /// Neither endpoint is in a recursive SCC.
    Plain,
    /// Non-recursive caller into a recursive SCC.
    Inbound,
    /// Both endpoints in the same recursive SCC.
    Inner,
    /// Recursive SCC member calling out of its SCC (possibly into another
    /// recursive SCC).
    Outbound,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SccNode {
    pub id: SccId,
    /// Member function ids, sorted.
    pub members: Vec<String>,
    /// More than one member, or a single member calling itself.
    pub recursive: bool,
    pub allocator: bool,
}

impl SccNode {
    /// Smallest member id; used for deterministic ordering.
    pub fn label(&self) -> &str {
        &self.members[0]
    }
}

/// An edge of the condensed DAG.
///
/// `sites` are the original call sites whose weight is the link weight: one
/// site for a plain edge, or every site from a recursive SCC to the same
/// callee (they share one external trace). `prefix` holds call sites into
/// functions removed by [`elide_single_callers`]; those carry weight zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagLink {
    pub id: LinkId,
    pub from: SccId,
    pub to: SccId,
    pub callee: String,
    /// Lexicographic position among the caller's links.
    pub order: Vec<u32>,
    pub in_loop: bool,
    pub sites: Vec<String>,
    pub prefix: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CondensedDag {
    graph: FlowCallGraph,
    sccs: Vec<SccNode>,
    scc_of: BTreeMap<String, SccId>,
    classes: BTreeMap<String, EdgeClass>,
    inner: Vec<String>,
    links: Vec<DagLink>,
    out: Vec<Vec<LinkId>>,
    inc: Vec<Vec<LinkId>>,
    terminal: BTreeMap<String, LinkId>,
    elided: BTreeSet<SccId>,
    entry: SccId,
}

impl CondensedDag {
    pub fn graph(&self) -> &FlowCallGraph {
        &self.graph
    }

    pub fn sccs(&self) -> &[SccNode] {
        &self.sccs
    }

    pub fn scc(&self, id: SccId) -> &SccNode {
        &self.sccs[id]
    }

    pub fn scc_of(&self, function: &str) -> Option<SccId> {
        self.scc_of.get(function).copied()
    }

    pub fn entry(&self) -> SccId {
        self.entry
    }

    pub fn class_of(&self, site: &str) -> Option<EdgeClass> {
        self.classes.get(site).copied()
    }

    pub fn edge_classes(&self) -> &BTreeMap<String, EdgeClass> {
        &self.classes
    }

    /// Intra-SCC call sites.
    pub fn inner_edges(&self) -> &[String] {
        &self.inner
    }

    pub fn links(&self) -> &[DagLink] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &DagLink {
        &self.links[id]
    }

    /// Outgoing links of `scc` in call-site order.
    pub fn out_links(&self, scc: SccId) -> &[LinkId] {
        &self.out[scc]
    }

    pub fn in_links(&self, scc: SccId) -> &[LinkId] {
        &self.inc[scc]
    }

    /// Link whose weight the given call site carries, if any.
    pub fn link_for_site(&self, site: &str) -> Option<LinkId> {
        self.terminal.get(site).copied()
    }

    /// False for nodes merged away by [`elide_single_callers`].
    pub fn is_active(&self, scc: SccId) -> bool {
        !self.elided.contains(&scc)
    }

    pub fn active_sccs(&self) -> impl Iterator<Item = &SccNode> {
        self.sccs.iter().filter(|s| !self.elided.contains(&s.id))
    }

    pub fn elided(&self) -> &BTreeSet<SccId> {
        &self.elided
    }

    /// SCC nodes that are allocators and still active.
    pub fn allocator_sccs(&self) -> impl Iterator<Item = &SccNode> {
        self.active_sccs().filter(|s| s.allocator)
    }

    fn rebuild(&mut self) {
        let n = self.sccs.len();
        self.out = vec![Vec::new(); n];
        self.inc = vec![Vec::new(); n];
        self.terminal.clear();
        for l in &self.links {
            self.out[l.from].push(l.id);
            self.inc[l.to].push(l.id);
            for s in &l.sites {
                self.terminal.insert(s.clone(), l.id);
            }
        }
        let links = &self.links;
        for outs in &mut self.out {
            outs.sort_by(|&a, &b| {
                let (la, lb) = (&links[a], &links[b]);
                (&la.order, &la.callee, &la.sites).cmp(&(&lb.order, &lb.callee, &lb.sites))
            });
        }
    }
}

/// Collapses every SCC of `g` into a single node and classifies each call
/// site as plain, inbound, inner or outbound.
pub fn condense(g: &FlowCallGraph) -> CondensedDag {
    let (names, index) = g.indexed();
    let mut adj = vec![Vec::new(); names.len()];
    for e in g.edges() {
        adj[index[e.caller.as_str()]].push(index[e.callee.as_str()]);
    }
    let mut comps = kosaraju_sharir(&adj);
    comps.sort_by_key(|c| c[0]);

    let mut scc_of = BTreeMap::new();
    let mut sccs = Vec::with_capacity(comps.len());
    for (id, comp) in comps.iter().enumerate() {
        let members: Vec<String> = comp.iter().map(|&i| names[i].to_string()).collect();
        for m in &members {
            scc_of.insert(m.clone(), id);
        }
        let allocator = members.iter().any(|m| g.is_allocator(m));
        sccs.push(SccNode { id, members, recursive: comp.len() > 1, allocator });
    }
    for e in g.edges() {
        if e.caller == e.callee {
            sccs[scc_of[&e.caller]].recursive = true;
        }
    }

    let mut classes = BTreeMap::new();
    let mut inner = Vec::new();
    let mut links: Vec<DagLink> = Vec::new();
    let mut groups: BTreeMap<(SccId, &str), LinkId> = BTreeMap::new();
    for e in g.edges() {
        let (cs, ds) = (scc_of[&e.caller], scc_of[&e.callee]);
        let class = if cs == ds {
            EdgeClass::Inner
        } else if sccs[cs].recursive {
            EdgeClass::Outbound
        } else if sccs[ds].recursive {
            EdgeClass::Inbound
        } else {
            EdgeClass::Plain
        };
        classes.insert(e.site_id.clone(), class);
        if class == EdgeClass::Inner {
            inner.push(e.site_id.clone());
            continue;
        }
        let grouped = if sccs[cs].recursive {
            groups.get(&(cs, e.callee.as_str())).copied()
        } else {
            None
        };
        match grouped {
            Some(id) => {
                let l = &mut links[id];
                l.sites.push(e.site_id.clone());
                l.in_loop |= e.in_loop;
                l.order[0] = l.order[0].min(e.order);
            }
            None => {
                let id = links.len();
                if sccs[cs].recursive {
                    groups.insert((cs, e.callee.as_str()), id);
                }
                links.push(DagLink {
                    id,
                    from: cs,
                    to: ds,
                    callee: e.callee.clone(),
                    order: vec![e.order],
                    in_loop: e.in_loop,
                    sites: vec![e.site_id.clone()],
                    prefix: Vec::new(),
                });
            }
        }
    }

    let entry = scc_of[g.entry()];
    let mut dag = CondensedDag {
        graph: g.clone(),
        sccs,
        scc_of,
        classes,
        inner,
        links,
        out: Vec::new(),
        inc: Vec::new(),
        terminal: BTreeMap::new(),
        elided: BTreeSet::new(),
        entry,
    };
    dag.rebuild();
    dag
}

/// Merges every non-allocator, non-recursive node with exactly one incoming
/// link into its caller, as if the function were inlined.
///
/// Splicing replaces one link by one link per outgoing link of the merged
/// node, so in-degrees never change and a single pass reaches the fixpoint.
/// The set of entry-to-allocator walks maps one-to-one onto the original.
pub fn elide_single_callers(d: &CondensedDag) -> CondensedDag {
    let mut links: Vec<Option<DagLink>> = d.links.iter().cloned().map(Some).collect();
    let mut out: Vec<Vec<LinkId>> = d.out.clone();
    let mut inc: Vec<Vec<LinkId>> = d.inc.clone();
    let mut elided = d.elided.clone();

    for f in 0..d.sccs.len() {
        let node = &d.sccs[f];
        if f == d.entry || node.recursive || node.allocator || elided.contains(&f) || inc[f].len() != 1 {
            continue;
        }
        let incoming = inc[f][0];
        let head = links[incoming].take().expect("live incoming link");
        out[head.from].retain(|&l| l != incoming);

        for tail_id in std::mem::take(&mut out[f]) {
            let tail = links[tail_id].take().expect("live outgoing link");
            let id = links.len();
            let mut prefix = head.prefix.clone();
            prefix.extend(head.sites.iter().cloned());
            prefix.extend(tail.prefix.iter().cloned());
            let mut order = head.order.clone();
            order.extend(tail.order.iter().copied());
            let spliced = DagLink {
                id,
                from: head.from,
                to: tail.to,
                callee: tail.callee.clone(),
                order,
                in_loop: head.in_loop || tail.in_loop,
                sites: tail.sites.clone(),
                prefix,
            };
            out[head.from].push(id);
            for slot in inc[tail.to].iter_mut() {
                if *slot == tail_id {
                    *slot = id;
                }
            }
            links.push(Some(spliced));
        }
        inc[f].clear();
        elided.insert(f);
    }

    let mut compact = Vec::new();
    for mut l in links.into_iter().flatten() {
        l.id = compact.len();
        compact.push(l);
    }
    let mut next = d.clone();
    next.links = compact;
    next.elided = elided;
    next.rebuild();
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::callgraph::parse_graph;

    fn dag(text: &str) -> CondensedDag {
        condense(&parse_graph(text).unwrap())
    }

    #[test]
    fn acyclic_graph_has_only_singletons() {
        let d = dag("node main\nnode f\nnode malloc alloc\nedge s1 main f\nedge s2 f malloc\nedge s3 main malloc\nentry main");
        assert!(d.sccs().iter().all(|s| s.members.len() == 1 && !s.recursive));
        assert!(d.inner_edges().is_empty());
        assert!(d.edge_classes().values().all(|&c| c == EdgeClass::Plain));
        assert_eq!(d.links().len(), 3);
    }

    #[test]
    fn two_disjoint_two_cycles() {
        let d = dag(
            "node main\nnode a\nnode b\nnode c\nnode d\nnode malloc alloc\n\
             edge m1 main a\nedge m2 main c\nedge ab a b\nedge ba b a\nedge cd c d\nedge dc d c\n\
             edge am a malloc\nedge cm c malloc\nentry main",
        );
        let rec: Vec<_> = d.sccs().iter().filter(|s| s.recursive).map(|s| s.members.clone()).collect();
        assert_eq!(rec, vec![vec!["a".to_string(), "b".into()], vec!["c".into(), "d".into()]]);
        assert_eq!(d.class_of("m1"), Some(EdgeClass::Inbound));
        assert_eq!(d.class_of("ab"), Some(EdgeClass::Inner));
        assert_eq!(d.class_of("am"), Some(EdgeClass::Outbound));
    }

    #[test]
    fn self_edge_makes_singleton_recursive() {
        let d = dag("node main\nnode r\nnode malloc alloc\nedge s1 main r\nedge rr r r\nedge s2 r malloc\nentry main");
        let r = d.scc(d.scc_of("r").unwrap());
        assert!(r.recursive);
        assert_eq!(d.class_of("rr"), Some(EdgeClass::Inner));
    }

    #[test]
    fn outbound_sites_to_same_callee_share_a_link() {
        let d = dag(
            "node main\nnode c\nnode f\nnode malloc alloc\n\
             edge in main c\nedge cf c f order=1\nedge fc f c\nedge cm c malloc order=0\nedge fm f malloc order=1\nentry main",
        );
        let l = d.link_for_site("cm").unwrap();
        assert_eq!(d.link_for_site("fm"), Some(l));
        assert_eq!(d.link(l).sites, ["cm", "fm"]);
    }

    #[test]
    fn elision_inlines_single_caller() {
        let d = dag("node main\nnode f\nnode malloc alloc\nedge s1 main f\nedge s2 f malloc\nentry main");
        let e = elide_single_callers(&d);
        assert_eq!(e.links().len(), 1);
        let l = &e.links()[0];
        assert_eq!((l.from, l.to), (e.scc_of("main").unwrap(), e.scc_of("malloc").unwrap()));
        assert_eq!(l.prefix, ["s1"]);
        assert_eq!(l.sites, ["s2"]);
        assert!(!e.is_active(e.scc_of("f").unwrap()));
    }

    #[test]
    fn elision_keeps_multi_caller_nodes() {
        let d = dag(
            "node main\nnode x\nnode y\nnode z\nnode malloc alloc\n\
             edge a main x\nedge b main y\nedge c x z\nedge d y z\nedge e z malloc\nentry main",
        );
        let e = elide_single_callers(&d);
        assert!(e.is_active(e.scc_of("z").unwrap()));
        assert!(!e.is_active(e.scc_of("x").unwrap()));
        assert_eq!(e.in_links(e.scc_of("z").unwrap()).len(), 2);
    }

    #[test]
    fn splice_ors_loop_flags_and_nests_order() {
        let d = dag(
            "node main\nnode f\nnode malloc alloc\n\
             edge s0 main malloc order=0\nedge s1 main f loop order=1\nedge s2 f malloc order=0\nedge s3 f malloc order=1\nedge s4 main malloc order=2\nentry main",
        );
        let e = elide_single_callers(&d);
        let main = e.scc_of("main").unwrap();
        let order: Vec<_> = e.out_links(main).iter().map(|&l| e.link(l).sites[0].clone()).collect();
        assert_eq!(order, ["s0", "s2", "s3", "s4"]);
        assert!(e.link(e.link_for_site("s2").unwrap()).in_loop);
        assert!(!e.link(e.link_for_site("s4").unwrap()).in_loop);
    }
}
