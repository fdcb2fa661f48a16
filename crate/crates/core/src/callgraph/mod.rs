//! Flow-sensitive call graphs and the passes that turn them into the
//! condensed DAG consumed by weight assignment.
//!
//! A [`FlowCallGraph`] has one edge per textual call site, so two calls from
//! `a` to `e` are two distinct edges. Indirect calls arrive already expanded
//! into one candidate edge per possible target (`from_indirect`).

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

mod condense;
mod parse;
mod scc;
mod trim;

pub use condense::{condense, elide_single_callers, CondensedDag, DagLink, EdgeClass, LinkId, SccId, SccNode};
pub use parse::parse_graph;
pub use scc::kosaraju_sharir;
pub use trim::{mark_recurrent, trim_to_allocators, RecurrenceMarks};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("call site `{site}` references undeclared function `{name}`")]
    DanglingEndpoint { site: String, name: String },
    #[error("function `{0}` declared twice")]
    DuplicateNode(String),
    #[error("call site `{0}` declared twice")]
    DuplicateSite(String),
    #[error("call sites `{first}` and `{second}` of `{caller}` share order {order}")]
    DuplicateOrder {
        caller: String,
        first: String,
        second: String,
        order: u32,
    },
    #[error("no entry function declared")]
    MissingEntry,
    #[error("entry `{0}` is not a declared function")]
    UnknownEntry(String),
    #[error("entry `{0}` is an allocator")]
    EntryIsAllocator(String),
    #[error("no allocator is reachable from entry `{0}`; nothing to track")]
    NoReachableAllocator(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionNode {
    pub id: String,
    /// `malloc`-like sink that requests memory from the backend directly.
    pub is_allocator: bool,
}

impl FunctionNode {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), is_allocator: false }
    }

    pub fn allocator(id: impl Into<String>) -> Self {
        Self { id: id.into(), is_allocator: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSiteEdge {
    pub site_id: String,
    pub caller: String,
    pub callee: String,
    /// The call sits inside a loop of the caller's CFG.
    pub in_loop: bool,
    /// One candidate target of an unresolved indirect call.
    pub from_indirect: bool,
    /// Sequential position of the site within its caller.
    pub order: u32,
}

impl CallSiteEdge {
    pub fn new(site_id: impl Into<String>, caller: impl Into<String>, callee: impl Into<String>, order: u32) -> Self {
        Self {
            site_id: site_id.into(),
            caller: caller.into(),
            callee: callee.into(),
            in_loop: false,
            from_indirect: false,
            order,
        }
    }

    pub fn looped(mut self) -> Self {
        self.in_loop = true;
        self
    }

    pub fn indirect(mut self) -> Self {
        self.from_indirect = true;
        self
    }
}

/// Validated call graph. Edges are kept sorted by `(caller, order)`.
#[derive(Debug, Clone)]
pub struct FlowCallGraph {
    nodes: BTreeMap<String, FunctionNode>,
    edges: Vec<CallSiteEdge>,
    entry: String,
    site_index: BTreeMap<String, usize>,
    out: BTreeMap<String, Vec<usize>>,
    marks: Option<RecurrenceMarks>,
}

impl FlowCallGraph {
    pub fn new(
        nodes: impl IntoIterator<Item = FunctionNode>,
        edges: impl IntoIterator<Item = CallSiteEdge>,
        entry: impl Into<String>,
    ) -> Result<Self, GraphError> {
        let entry = entry.into();
        let mut node_map = BTreeMap::new();
        for n in nodes {
            if node_map.contains_key(&n.id) {
                return Err(GraphError::DuplicateNode(n.id));
            }
            node_map.insert(n.id.clone(), n);
        }
        match node_map.get(&entry) {
            None => return Err(GraphError::UnknownEntry(entry)),
            Some(n) if n.is_allocator => return Err(GraphError::EntryIsAllocator(entry)),
            Some(_) => {}
        }

        let mut edges: Vec<CallSiteEdge> = edges.into_iter().collect();
        for e in &edges {
            for name in [&e.caller, &e.callee] {
                if !node_map.contains_key(name) {
                    return Err(GraphError::DanglingEndpoint {
                        site: e.site_id.clone(),
                        name: name.clone(),
                    });
                }
            }
        }
        edges.sort_by(|a, b| (&a.caller, a.order, &a.site_id).cmp(&(&b.caller, b.order, &b.site_id)));

        let mut site_index = BTreeMap::new();
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in edges.iter().enumerate() {
            if site_index.insert(e.site_id.clone(), i).is_some() {
                return Err(GraphError::DuplicateSite(e.site_id.clone()));
            }
            let list = out.entry(e.caller.clone()).or_default();
            if let Some(&prev) = list.last() {
                let p: &CallSiteEdge = &edges[prev];
                if p.order == e.order {
                    return Err(GraphError::DuplicateOrder {
                        caller: e.caller.clone(),
                        first: p.site_id.clone(),
                        second: e.site_id.clone(),
                        order: e.order,
                    });
                }
            }
            list.push(i);
        }

        Ok(Self { nodes: node_map, edges, entry, site_index, out, marks: None })
    }

    pub fn entry(&self) -> &str {
        &self.entry
    }

    pub fn nodes(&self) -> impl Iterator<Item = &FunctionNode> {
        self.nodes.values()
    }

    pub fn node(&self, id: &str) -> Option<&FunctionNode> {
        self.nodes.get(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &[CallSiteEdge] {
        &self.edges
    }

    pub fn edge(&self, site_id: &str) -> Option<&CallSiteEdge> {
        self.site_index.get(site_id).map(|&i| &self.edges[i])
    }

    pub fn is_allocator(&self, id: &str) -> bool {
        self.nodes.get(id).is_some_and(|n| n.is_allocator)
    }

    /// Call sites of `caller` in program order.
    pub fn out_edges<'a>(&'a self, caller: &str) -> impl Iterator<Item = &'a CallSiteEdge> + 'a {
        self.out
            .get(caller)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
            .iter()
            .map(move |&i| &self.edges[i])
    }

    pub fn allocators(&self) -> impl Iterator<Item = &FunctionNode> {
        self.nodes.values().filter(|n| n.is_allocator)
    }

    /// Present once [`mark_recurrent`] has run.
    pub fn marks(&self) -> Option<&RecurrenceMarks> {
        self.marks.as_ref()
    }

    pub(crate) fn set_marks(&mut self, marks: RecurrenceMarks) {
        self.marks = Some(marks);
    }

    /// Dense index of function ids, in id order.
    pub(crate) fn indexed(&self) -> (Vec<&str>, BTreeMap<&str, usize>) {
        let names: Vec<&str> = self.nodes.keys().map(String::as_str).collect();
        let index = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        (names, index)
    }
}

/// Writes the graph back in the line format [`parse_graph`] reads.
impl fmt::Display for FlowCallGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in self.nodes.values() {
            if n.is_allocator {
                writeln!(f, "node {} alloc", n.id)?;
            } else {
                writeln!(f, "node {}", n.id)?;
            }
        }
        for e in &self.edges {
            write!(f, "edge {} {} {}", e.site_id, e.caller, e.callee)?;
            if e.in_loop {
                f.write_str(" loop")?;
            }
            if e.from_indirect {
                f.write_str(" indirect")?;
            }
            writeln!(f, " order={}", e.order)?;
        }
        writeln!(f, "entry {}", self.entry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_order_per_caller() {
        let err = FlowCallGraph::new(
            [FunctionNode::new("main"), FunctionNode::allocator("malloc")],
            [CallSiteEdge::new("s1", "main", "malloc", 0), CallSiteEdge::new("s2", "main", "malloc", 0)],
            "main",
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::DuplicateOrder { order: 0, .. }));
    }

    #[test]
    fn rejects_allocator_entry() {
        let err = FlowCallGraph::new([FunctionNode::allocator("malloc")], [], "malloc").unwrap_err();
        assert_eq!(err, GraphError::EntryIsAllocator("malloc".into()));
    }

    #[test]
    fn out_edges_follow_order() {
        let g = FlowCallGraph::new(
            [FunctionNode::new("main"), FunctionNode::allocator("malloc")],
            [CallSiteEdge::new("late", "main", "malloc", 9), CallSiteEdge::new("early", "main", "malloc", 2)],
            "main",
        )
        .unwrap();
        let sites: Vec<_> = g.out_edges("main").map(|e| e.site_id.as_str()).collect();
        assert_eq!(sites, ["early", "late"]);
    }
}
