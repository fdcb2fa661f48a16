//! Line-oriented event traces.
//!
//! ```text
//! # comment
//! spawn 1
//! T0 call s1
//! T0 alloc obj1 48
//! T1 free obj1
//! T0 ret
//! ```
//!
//! Thread 0 exists from the start; other threads must be spawned before
//! their first event. Every thread starts in the graph entry.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::callgraph::FlowCallGraph;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Call(String),
    Ret,
    Alloc { object: String, size: u64 },
    Free(String),
    /// `tid` of the event is the new thread.
    Spawn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub tid: u32,
    pub kind: EventKind,
    /// 1-based source line, 0 for generated events.
    pub line: usize,
}

impl TraceEvent {
    pub fn new(tid: u32, kind: EventKind) -> Self {
        Self { tid, kind, line: 0 }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.tid;
        match &self.kind {
            EventKind::Call(s) => write!(f, "T{t} call {s}"),
            EventKind::Ret => write!(f, "T{t} ret"),
            EventKind::Alloc { object, size } => write!(f, "T{t} alloc {object} {size}"),
            EventKind::Free(o) => write!(f, "T{t} free {o}"),
            EventKind::Spawn => write!(f, "spawn {t}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct TraceError {
    pub line: usize,
    pub kind: TraceErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceErrorKind {
    #[error("malformed event: {0}")]
    Malformed(String),
    #[error("`ret` on thread {0} with nothing to return from")]
    UnbalancedRet(u32),
    #[error("unknown call site `{0}`")]
    UnknownSite(String),
    #[error("call site `{site}` belongs to `{caller}`, thread {tid} is in `{current}`")]
    WrongCaller { tid: u32, site: String, caller: String, current: String },
    #[error("thread {0} used before `spawn`")]
    UnknownThread(u32),
    #[error("thread {0} spawned twice")]
    DuplicateThread(u32),
    #[error("object `{0}` allocated twice")]
    DuplicateObject(String),
    #[error("free of unknown or already freed object `{0}`")]
    UnknownObject(String),
    #[error("zero-byte allocation of `{0}`")]
    ZeroSize(String),
    #[error("`{function}` has no call site into an allocator")]
    NoAllocatorEdge { function: String },
    #[error("`{function}` calls several allocators; use an explicit `call` before `alloc`")]
    AmbiguousAllocatorEdge { function: String },
}

fn err(line: usize, kind: TraceErrorKind) -> TraceError {
    TraceError { line, kind }
}

fn parse_line(no: usize, line: &str) -> Result<Option<TraceEvent>, TraceError> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let toks: Vec<&str> = line.split_whitespace().collect();
    let malformed = |m: &str| err(no, TraceErrorKind::Malformed(m.to_string()));
    let parse_tid = |s: &str| s.parse::<u32>().map_err(|_| malformed(&format!("bad thread id `{s}`")));

    if toks[0] == "spawn" {
        if toks.len() != 2 {
            return Err(malformed("expected `spawn <tid>`"));
        }
        return Ok(Some(TraceEvent { tid: parse_tid(toks[1])?, kind: EventKind::Spawn, line: no }));
    }
    let tid = toks[0]
        .strip_prefix('T')
        .ok_or_else(|| malformed(&format!("expected `T<tid>` or `spawn`, found `{}`", toks[0])))
        .and_then(parse_tid)?;
    let kind = match toks.get(1).copied() {
        Some("call") if toks.len() == 3 => EventKind::Call(toks[2].to_string()),
        Some("ret") if toks.len() == 2 => EventKind::Ret,
        Some("alloc") if toks.len() == 4 => {
            let size = toks[3].parse::<u64>().map_err(|_| malformed(&format!("bad size `{}`", toks[3])))?;
            EventKind::Alloc { object: toks[2].to_string(), size }
        }
        Some("free") if toks.len() == 3 => EventKind::Free(toks[2].to_string()),
        Some(op @ ("call" | "ret" | "alloc" | "free")) => return Err(malformed(&format!("wrong arity for `{op}`"))),
        Some(op) => return Err(malformed(&format!("unknown operation `{op}`"))),
        None => return Err(malformed("missing operation")),
    };
    Ok(Some(TraceEvent { tid, kind, line: no }))
}

/// How an `alloc` event reaches the allocator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum AllocRoute {
    /// The thread is already inside an allocator.
    Explicit,
    /// Call through this site, allocate, return.
    Implicit(String),
}

/// The single allocator call site of `function`, when unambiguous.
pub(crate) fn alloc_route(g: &FlowCallGraph, function: &str) -> Result<AllocRoute, TraceErrorKind> {
    if g.is_allocator(function) {
        return Ok(AllocRoute::Explicit);
    }
    let mut sites = g.out_edges(function).filter(|e| g.is_allocator(&e.callee));
    match (sites.next(), sites.next()) {
        (Some(e), None) => Ok(AllocRoute::Implicit(e.site_id.clone())),
        (None, _) => Err(TraceErrorKind::NoAllocatorEdge { function: function.to_string() }),
        _ => Err(TraceErrorKind::AmbiguousAllocatorEdge { function: function.to_string() }),
    }
}

/// Checks a whole event list against `g`, simulating each thread's call
/// stack independently.
pub fn validate_trace(g: &FlowCallGraph, events: &[TraceEvent]) -> Result<(), TraceError> {
    let mut stacks: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    stacks.insert(0, vec![g.entry()]);
    let mut ever: BTreeSet<&str> = BTreeSet::new();
    let mut live: BTreeSet<&str> = BTreeSet::new();
    for ev in events {
        let line = ev.line;
        if ev.kind == EventKind::Spawn {
            if stacks.insert(ev.tid, vec![g.entry()]).is_some() {
                return Err(err(line, TraceErrorKind::DuplicateThread(ev.tid)));
            }
            continue;
        }
        let stack = stacks.get_mut(&ev.tid).ok_or(err(line, TraceErrorKind::UnknownThread(ev.tid)))?;
        let current = *stack.last().expect("entry frame");
        match &ev.kind {
            EventKind::Call(site) => {
                let e = g.edge(site).ok_or_else(|| err(line, TraceErrorKind::UnknownSite(site.clone())))?;
                if e.caller != current {
                    return Err(err(
                        line,
                        TraceErrorKind::WrongCaller {
                            tid: ev.tid,
                            site: site.clone(),
                            caller: e.caller.clone(),
                            current: current.to_string(),
                        },
                    ));
                }
                stack.push(&e.callee);
            }
            EventKind::Ret => {
                if stack.len() == 1 {
                    return Err(err(line, TraceErrorKind::UnbalancedRet(ev.tid)));
                }
                stack.pop();
            }
            EventKind::Alloc { object, size } => {
                alloc_route(g, current).map_err(|k| err(line, k))?;
                if *size == 0 {
                    return Err(err(line, TraceErrorKind::ZeroSize(object.clone())));
                }
                if !ever.insert(object) {
                    return Err(err(line, TraceErrorKind::DuplicateObject(object.clone())));
                }
                live.insert(object);
            }
            EventKind::Free(object) => {
                if !live.remove(object.as_str()) {
                    return Err(err(line, TraceErrorKind::UnknownObject(object.clone())));
                }
            }
            EventKind::Spawn => unreachable!(),
        }
    }
    Ok(())
}

/// Parses and validates a trace against `g`.
pub fn parse_trace(text: &str, g: &FlowCallGraph) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if let Some(ev) = parse_line(i + 1, raw)? {
            events.push(ev);
        }
    }
    validate_trace(g, &events)?;
    Ok(events)
}

pub fn format_trace(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        writeln!(out, "{ev}").expect("writing to a String");
    }
    out
}
