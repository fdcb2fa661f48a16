//! Independent check that address reuse only happens within one
//! `(thread, nid, rid, size class)` of recurrent regular objects, and only
//! after the previous occupant was freed.
//!
//! The checker sees nothing of the heap's pools: it only gets object
//! footprints, tags and event sequence numbers.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::backend::SizeClass;
use crate::tag::SemaType;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occupant {
    pub object: usize,
    pub thread_id: u32,
    pub sematype: SemaType,
    /// `None` for huge objects.
    pub class: Option<SizeClass>,
    pub footprint: (u64, u64),
    pub allocated_at: usize,
    pub freed_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub earlier: String,
    pub later: String,
    pub reason: String,
}

/// Why `later` may not overlap `earlier`, if it may not.
pub fn reuse_violation(earlier: &Occupant, later: &Occupant) -> Option<&'static str> {
    if earlier.class.is_none() || later.class.is_none() {
        return Some("huge object range overlapped");
    }
    if !earlier.sematype.loop_bit || !later.sematype.loop_bit {
        return Some("one-time object range overlapped");
    }
    if earlier.thread_id != later.thread_id {
        return Some("different threads");
    }
    if (earlier.sematype.nid, earlier.sematype.rid) != (later.sematype.nid, later.sematype.rid) {
        return Some("different SemaTypes");
    }
    if earlier.class != later.class {
        return Some("different size classes");
    }
    match earlier.freed_at {
        Some(f) if f < later.allocated_at => {}
        _ => return Some("earlier object still live"),
    }
    if earlier.footprint != later.footprint {
        return Some("partially overlapping footprints");
    }
    None
}

/// Disjoint address cells, each remembering its latest occupant.
#[derive(Debug, Clone, Default)]
pub struct SegregationChecker {
    cells: BTreeMap<u64, usize>,
    occupants: Vec<Occupant>,
    violations: Vec<(usize, usize, &'static str)>,
}

impl SegregationChecker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new object; returns false if it broke the invariant.
    pub fn on_alloc(&mut self, mut occ: Occupant) -> bool {
        let (s, e) = occ.footprint;
        let idx = self.occupants.len();
        occ.object = idx;
        let mut overlapped = Vec::new();
        for (&start, &prev) in self.cells.range(..e).rev() {
            if self.occupants[prev].footprint.1 <= s {
                break;
            }
            overlapped.push(start);
        }
        let before = self.violations.len();
        for start in &overlapped {
            let prev = self.cells.remove(start).expect("cell just seen");
            if let Some(reason) = reuse_violation(&self.occupants[prev], &occ) {
                self.violations.push((prev, idx, reason));
            }
        }
        self.cells.insert(s, idx);
        self.occupants.push(occ);
        self.violations.len() == before
    }

    pub fn on_free(&mut self, object: usize, seq: usize) {
        self.occupants[object].freed_at = Some(seq);
    }

    pub fn occupant(&self, object: usize) -> &Occupant {
        &self.occupants[object]
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// `(earlier, later, reason)` object indices.
    pub fn violations(&self) -> &[(usize, usize, &'static str)] {
        &self.violations
    }
}
