use std::collections::{BTreeSet, VecDeque};

use super::{kosaraju_sharir, FlowCallGraph, GraphError};

/// Keeps exactly the functions and call sites that lie on some walk from the
/// entry to an allocator. Allocators are sinks: their own outgoing call
/// sites are dropped.
pub fn trim_to_allocators(g: &FlowCallGraph) -> Result<FlowCallGraph, GraphError> {
    let (names, index) = g.indexed();
    let n = names.len();
    let is_alloc: Vec<bool> = names.iter().map(|id| g.is_allocator(id)).collect();

    let mut fwd_adj = vec![Vec::new(); n];
    let mut rev_adj = vec![Vec::new(); n];
    for e in g.edges() {
        let (c, d) = (index[e.caller.as_str()], index[e.callee.as_str()]);
        if is_alloc[c] {
            continue;
        }
        fwd_adj[c].push(d);
        rev_adj[d].push(c);
    }

    let forward = reach(&fwd_adj, [index[g.entry()]]);
    let backward = reach(&rev_adj, (0..n).filter(|&i| is_alloc[i]));
    let keep: Vec<bool> = (0..n).map(|i| forward[i] && backward[i]).collect();

    if !(0..n).any(|i| keep[i] && is_alloc[i]) {
        return Err(GraphError::NoReachableAllocator(g.entry().to_string()));
    }

    let nodes = g.nodes().filter(|f| keep[index[f.id.as_str()]]).cloned();
    let edges = g
        .edges()
        .iter()
        .filter(|e| {
            let c = index[e.caller.as_str()];
            !is_alloc[c] && keep[c] && keep[index[e.callee.as_str()]]
        })
        .cloned();
    FlowCallGraph::new(nodes, edges, g.entry())
}

fn reach(adj: &[Vec<usize>], seeds: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for s in seeds {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    seen
}

/// Recurrence classification attached to a trimmed graph.
///
/// A *recurrent edge* is a call site inside a loop, or one whose callee
/// belongs to a recursive SCC. Everything not (eventually) called by or
/// (eventually) calling a recurrent edge is prunable for instrumentation;
/// it is flagged here, not removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecurrenceMarks {
    pub recursive_functions: BTreeSet<String>,
    pub recurrent_edges: BTreeSet<String>,
    pub relevant_edges: BTreeSet<String>,
    pub relevant_nodes: BTreeSet<String>,
    /// Allocator call sites reached by at least one walk that crosses a
    /// recurrent edge.
    pub recurrent_alloc_sites: BTreeSet<String>,
    pub prunable_edges: BTreeSet<String>,
    pub prunable_nodes: BTreeSet<String>,
}

impl RecurrenceMarks {
    /// True when the walk (a sequence of call-site ids from the entry)
    /// crosses a loop edge or touches a recursive function.
    pub fn walk_is_recurrent<'a>(&self, g: &FlowCallGraph, walk: impl IntoIterator<Item = &'a str>) -> bool {
        if self.recursive_functions.contains(g.entry()) {
            return true;
        }
        walk.into_iter().any(|s| self.recurrent_edges.contains(s))
    }
}

/// Computes [`RecurrenceMarks`] for a trimmed graph and attaches them.
pub fn mark_recurrent(g: &FlowCallGraph) -> FlowCallGraph {
    let (names, index) = g.indexed();
    let n = names.len();
    let mut adj = vec![Vec::new(); n];
    let mut rev = vec![Vec::new(); n];
    let mut self_loop = vec![false; n];
    for e in g.edges() {
        let (c, d) = (index[e.caller.as_str()], index[e.callee.as_str()]);
        adj[c].push(d);
        rev[d].push(c);
        self_loop[c] |= c == d;
    }

    let mut recursive = vec![false; n];
    for comp in kosaraju_sharir(&adj) {
        let rec = comp.len() > 1 || self_loop[comp[0]];
        for v in comp {
            recursive[v] = rec;
        }
    }

    let recurrent: Vec<bool> = g
        .edges()
        .iter()
        .map(|e| e.in_loop || recursive[index[e.callee.as_str()]])
        .collect();

    let entry = index[g.entry()];
    let mut after_seeds: Vec<usize> = Vec::new();
    let mut before_seeds: Vec<usize> = Vec::new();
    for (e, &r) in g.edges().iter().zip(&recurrent) {
        if r {
            after_seeds.push(index[e.callee.as_str()]);
            before_seeds.push(index[e.caller.as_str()]);
        }
    }
    if recursive[entry] {
        after_seeds.push(entry);
    }
    let after = reach(&adj, after_seeds);
    let before = reach(&rev, before_seeds);

    let mut marks = RecurrenceMarks::default();
    for (i, name) in names.iter().enumerate() {
        if recursive[i] {
            marks.recursive_functions.insert(name.to_string());
        }
        if after[i] || before[i] {
            marks.relevant_nodes.insert(name.to_string());
        } else {
            marks.prunable_nodes.insert(name.to_string());
        }
    }
    for (e, &r) in g.edges().iter().zip(&recurrent) {
        let (c, d) = (index[e.caller.as_str()], index[e.callee.as_str()]);
        if r {
            marks.recurrent_edges.insert(e.site_id.clone());
        }
        if r || after[c] || before[d] {
            marks.relevant_edges.insert(e.site_id.clone());
        } else {
            marks.prunable_edges.insert(e.site_id.clone());
        }
        if g.is_allocator(&e.callee) && (r || after[c]) {
            marks.recurrent_alloc_sites.insert(e.site_id.clone());
        }
    }

    let mut marked = g.clone();
    marked.set_marks(marks);
    marked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::callgraph::parse_graph;

    #[test]
    fn side_branch_is_removed() {
        let g = parse_graph(
            "node main\nnode log\nnode malloc alloc\n\
             edge s1 main log\nedge s2 main malloc\nentry main",
        )
        .unwrap();
        let t = trim_to_allocators(&g).unwrap();
        assert!(t.node("log").is_none());
        assert!(t.edge("s1").is_none());
        assert_eq!(t.edges().len(), 1);
    }

    #[test]
    fn unreachable_allocator_is_an_error() {
        let g = parse_graph("node main\nnode f\nnode malloc alloc\nedge s1 f malloc\nentry main").unwrap();
        assert_eq!(
            trim_to_allocators(&g).unwrap_err(),
            GraphError::NoReachableAllocator("main".into())
        );
    }

    #[test]
    fn allocator_outgoing_edges_dropped() {
        let g = parse_graph(
            "node main\nnode malloc alloc\nnode hook\nnode calloc alloc\n\
             edge s1 main malloc\nedge s2 malloc hook\nedge s3 hook calloc\nentry main",
        )
        .unwrap();
        let t = trim_to_allocators(&g).unwrap();
        assert!(t.edge("s2").is_none());
        assert!(t.node("hook").is_none());
        assert!(t.node("calloc").is_none());
    }

    #[test]
    fn loop_free_chain_has_no_recurrent_sites() {
        let g = parse_graph("node main\nnode f\nnode malloc alloc\nedge s1 main f\nedge s2 f malloc\nentry main").unwrap();
        let m = mark_recurrent(&trim_to_allocators(&g).unwrap());
        let marks = m.marks().unwrap();
        assert!(marks.recurrent_alloc_sites.is_empty());
        assert_eq!(marks.prunable_edges.len(), 2);
    }

    #[test]
    fn direct_loop_edge_is_recurrent() {
        let g = parse_graph("node main\nnode malloc alloc\nedge s1 main malloc loop\nentry main").unwrap();
        let m = mark_recurrent(&g);
        assert!(m.marks().unwrap().recurrent_alloc_sites.contains("s1"));
        assert!(m.marks().unwrap().prunable_edges.is_empty());
    }

    #[test]
    fn recursive_entry_marks_everything() {
        let g = parse_graph("node main\nnode malloc alloc\nedge r main main\nedge s1 main malloc\nentry main").unwrap();
        let m = mark_recurrent(&g);
        let marks = m.marks().unwrap();
        assert!(marks.recursive_functions.contains("main"));
        assert!(marks.recurrent_alloc_sites.contains("s1"));
        assert!(marks.walk_is_recurrent(&m, ["s1"]));
    }
}
