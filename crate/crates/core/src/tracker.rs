//! Per-thread runtime state of an instrumented program.
//!
//! The tracker realizes what the inserted instructions would do at each call
//! site: keep the running nID (`nid_acc`), the recurrence depth `l`, the
//! stack `s` of frame addresses pushed inside an SCC activation, and the
//! aggregate `h` computed when control leaves the SCC.

use thiserror::Error;

use crate::callgraph::EdgeClass;
use crate::encoding::EncodingLayout;
use crate::tag::{SemaType, SemaTypeTag};
use crate::weights::WeightedDag;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrackerError {
    #[error("unknown call site `{0}`")]
    UnknownSite(String),
    #[error("call site `{site}` belongs to `{caller}`, but thread {thread} is in `{current}`")]
    WrongCaller {
        thread: u32,
        site: String,
        caller: String,
        current: String,
    },
    #[error("return with an empty call stack on thread {0}")]
    EmptyStack(u32),
    #[error("allocation on thread {thread} outside an allocator (in `{current}`)")]
    NotInAllocator { thread: u32, current: String },
}

/// Aggregates frame addresses oldest to newest: two bits (bits 6 and 7) per
/// frame, shifted in from the right, then masked. With a 14-bit mask only
/// the newest seven frames influence the result.
pub fn aggregate_rid(frames: &[u64], rid_mask: u64) -> u64 {
    let mut h: u64 = 0;
    for &p in frames {
        h = (h << 2).wrapping_add((p >> 6) & 0x3);
    }
    h & rid_mask
}

/// Stand-in for real stack pointers: a fixed base, and per-function frame
/// sizes drawn from {64, 128, 192, 256} by hashing the function id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticFrameModel {
    base: u64,
}

impl Default for SyntheticFrameModel {
    fn default() -> Self {
        Self { base: 0x7ffd_0000_0000 }
    }
}

impl SyntheticFrameModel {
    /// `base` is rounded down to 8 bytes.
    pub fn new(base: u64) -> Self {
        Self { base: base & !7 }
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn frame_size(&self, function: &str) -> u64 {
        // FNV-1a; stable across platforms and releases.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in function.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        64 * ((h ^ (h >> 32)) % 4 + 1)
    }

    /// Stack pointer with `live` frames on the stack (outermost first).
    pub fn frame_address<'a>(&self, live: impl IntoIterator<Item = &'a str>) -> u64 {
        live.into_iter()
            .fold(self.base, |sp, f| sp.wrapping_sub(self.frame_size(f)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct CallRecord {
    site: String,
    weight: u64,
    /// Loop edge or SCC entry; either raises `l` by one.
    raised_depth: bool,
    pushed_frame: bool,
    /// `(s, h)` before the call, for calls that replace them.
    saved: Option<(Vec<u64>, Option<u64>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadTracker {
    thread_id: u32,
    nid_acc: u64,
    depth_l: u32,
    scc_stack: Vec<u64>,
    carried_rid: Option<u64>,
    functions: Vec<String>,
    call_stack: Vec<CallRecord>,
    nid_mask: u64,
    rid_mask: u64,
    nid_wraps: u64,
}

impl ThreadTracker {
    /// A thread starting in the program entry. An entry inside a recursive
    /// SCC counts as an SCC activation from the start.
    pub fn new(thread_id: u32, wd: &WeightedDag, layout: &EncodingLayout, frames: &SyntheticFrameModel) -> Self {
        let d = wd.dag();
        let entry = d.graph().entry().to_string();
        let entry_recursive = d.scc(d.entry()).recursive;
        Self {
            thread_id,
            nid_acc: 0,
            depth_l: u32::from(entry_recursive),
            scc_stack: if entry_recursive { vec![frames.frame_address([])] } else { Vec::new() },
            carried_rid: None,
            functions: vec![entry],
            call_stack: Vec::new(),
            nid_mask: layout.nid_mask(),
            rid_mask: layout.rid_mask(),
            nid_wraps: 0,
        }
    }

    pub fn thread_id(&self) -> u32 {
        self.thread_id
    }

    pub fn nid_acc(&self) -> u64 {
        self.nid_acc
    }

    pub fn depth(&self) -> u32 {
        self.depth_l
    }

    pub fn scc_stack(&self) -> &[u64] {
        &self.scc_stack
    }

    pub fn current_function(&self) -> &str {
        self.functions.last().expect("entry frame is never popped")
    }

    /// Live function frames, outermost first.
    pub fn functions(&self) -> &[String] {
        &self.functions
    }

    /// Call sites currently on the stack, outermost first.
    pub fn call_sites(&self) -> impl Iterator<Item = &str> {
        self.call_stack.iter().map(|r| r.site.as_str())
    }

    pub fn call_depth(&self) -> usize {
        self.call_stack.len()
    }

    /// Allocations whose nID did not fit the configured width.
    pub fn nid_wraps(&self) -> u64 {
        self.nid_wraps
    }

    pub fn on_call(&mut self, site: &str, wd: &WeightedDag, frames: &SyntheticFrameModel) -> Result<(), TrackerError> {
        let info = wd.site(site).ok_or_else(|| TrackerError::UnknownSite(site.to_string()))?;
        if info.edge.caller != self.current_function() {
            return Err(TrackerError::WrongCaller {
                thread: self.thread_id,
                site: site.to_string(),
                caller: info.edge.caller.clone(),
                current: self.current_function().to_string(),
            });
        }
        let sp = frames.frame_address(self.functions.iter().map(String::as_str));
        let mut rec = CallRecord {
            site: site.to_string(),
            weight: info.weight,
            raised_depth: false,
            pushed_frame: false,
            saved: None,
        };

        self.nid_acc = self.nid_acc.wrapping_add(info.weight);
        match info.class {
            EdgeClass::Plain => {}
            EdgeClass::Inner => {
                self.scc_stack.push(sp);
                rec.pushed_frame = true;
            }
            EdgeClass::Outbound => {
                let h = aggregate_rid(&self.scc_stack, self.rid_mask);
                rec.saved = Some((std::mem::take(&mut self.scc_stack), self.carried_rid));
                self.carried_rid = Some(h);
                if info.callee_recursive {
                    self.enter_scc(&mut rec, sp);
                }
            }
            EdgeClass::Inbound => {
                rec.saved = Some((std::mem::take(&mut self.scc_stack), self.carried_rid));
                self.enter_scc(&mut rec, sp);
            }
        }
        if info.edge.in_loop || rec.raised_depth {
            rec.raised_depth = true;
            self.depth_l += 1;
        }
        self.functions.push(info.edge.callee.clone());
        self.call_stack.push(rec);
        Ok(())
    }

    fn enter_scc(&mut self, rec: &mut CallRecord, sp: u64) {
        rec.raised_depth = true;
        self.carried_rid = None;
        self.scc_stack.clear();
        self.scc_stack.push(sp);
    }

    pub fn on_return(&mut self) -> Result<(), TrackerError> {
        let rec = self.call_stack.pop().ok_or(TrackerError::EmptyStack(self.thread_id))?;
        self.functions.pop();
        self.nid_acc = self.nid_acc.wrapping_sub(rec.weight);
        if rec.raised_depth {
            self.depth_l -= 1;
        }
        if rec.pushed_frame {
            self.scc_stack.pop();
        }
        if let Some((stack, carried)) = rec.saved {
            self.scc_stack = stack;
            self.carried_rid = carried;
        }
        Ok(())
    }

    /// SemaType of an allocation made by the allocator the thread is
    /// currently in.
    pub fn on_alloc(&mut self, wd: &WeightedDag) -> Result<SemaTypeTag, TrackerError> {
        let current = self.current_function();
        if !wd.dag().graph().is_allocator(current) {
            return Err(TrackerError::NotInAllocator {
                thread: self.thread_id,
                current: current.to_string(),
            });
        }
        if self.nid_acc > self.nid_mask {
            self.nid_wraps += 1;
        }
        let rid = if !self.scc_stack.is_empty() {
            aggregate_rid(&self.scc_stack, self.rid_mask)
        } else {
            self.carried_rid.unwrap_or(0)
        };
        Ok(SemaTypeTag {
            sematype: SemaType {
                loop_bit: self.depth_l != 0,
                nid: self.nid_acc & self.nid_mask,
                rid,
            },
            thread_id: self.thread_id,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::callgraph::{condense, parse_graph};
    use crate::weights::assign_weights;

    const MASK14: u64 = 0x3FFF;

    fn weighted(text: &str) -> WeightedDag {
        assign_weights(condense(&parse_graph(text).unwrap())).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_rid(&[], MASK14), 0);
        assert_eq!(aggregate_rid(&[0x7ffd_0000_0040, 0x7ffd_0000_0080], MASK14), 6);
    }

    #[test]
    fn aggregate_window_is_seven_frames() {
        let tail = [0x40u64, 0x80, 0xc0, 0x00, 0x40, 0xc0, 0x80];
        let mut a = vec![0x00];
        a.extend(tail);
        let mut b = vec![0xc0];
        b.extend(tail);
        assert_eq!(aggregate_rid(&a, MASK14), aggregate_rid(&b, MASK14));
        let mut c = a.clone();
        c[1] = 0x80;
        assert_ne!(aggregate_rid(&a, MASK14), aggregate_rid(&c, MASK14));
    }

    #[test]
    fn frames_are_aligned_and_deterministic() {
        let m = SyntheticFrameModel::new(0x7ffd_0000_0003);
        assert_eq!(m.frame_address([]), 0x7ffd_0000_0000);
        let a = m.frame_address(["main", "f", "g"]);
        assert_eq!(a, m.frame_address(["main", "f", "g"]));
        assert_eq!(a % 8, 0);
        let sizes: std::collections::BTreeSet<u64> =
            (0..64).map(|i| m.frame_size(&format!("fn{i}"))).collect();
        assert_eq!(sizes, [64, 128, 192, 256].into_iter().collect());
        // Sizes that differ by 64 shift bits 6-7 of the next frame address.
        let bits = |f: &str| (m.frame_address([f]) >> 6) & 3;
        let distinct: std::collections::BTreeSet<u64> = (0..64).map(|i| bits(&format!("fn{i}"))).collect();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn plain_edge_adds_weight_and_balances() {
        let wd = weighted(
            "node main\nnode f\nnode malloc alloc\n\
             edge s0 main malloc order=0\nedge s1 main f order=1\nedge s2 f malloc\nedge s3 f malloc order=5\nentry main",
        );
        let fm = SyntheticFrameModel::default();
        let mut t = ThreadTracker::new(0, &wd, &EncodingLayout::default(), &fm);
        let before = t.clone();
        t.on_call("s1", &wd, &fm).unwrap();
        assert_eq!(t.nid_acc(), wd.site_weight("s1").unwrap());
        assert_eq!(t.nid_acc(), 1);
        t.on_call("s3", &wd, &fm).unwrap();
        let tag = t.on_alloc(&wd).unwrap();
        assert_eq!(tag.sematype, SemaType::new(false, 2, 0));
        t.on_return().unwrap();
        t.on_return().unwrap();
        assert_eq!(t, before);
        assert_eq!(t.on_return(), Err(TrackerError::EmptyStack(0)));
    }

    #[test]
    fn wrong_caller_and_unknown_site() {
        let wd = weighted("node main\nnode f\nnode malloc alloc\nedge s1 main f\nedge s2 f malloc\nentry main");
        let fm = SyntheticFrameModel::default();
        let mut t = ThreadTracker::new(3, &wd, &EncodingLayout::default(), &fm);
        assert!(matches!(t.on_call("s2", &wd, &fm), Err(TrackerError::WrongCaller { .. })));
        assert!(matches!(t.on_call("nope", &wd, &fm), Err(TrackerError::UnknownSite(_))));
        assert!(matches!(t.on_alloc(&wd), Err(TrackerError::NotInAllocator { .. })));
    }

    #[test]
    fn loop_free_chain_tag_is_zero() {
        let wd = weighted("node main\nnode f\nnode malloc alloc\nedge s1 main f\nedge s2 f malloc\nentry main");
        let fm = SyntheticFrameModel::default();
        let mut t = ThreadTracker::new(0, &wd, &EncodingLayout::default(), &fm);
        t.on_call("s1", &wd, &fm).unwrap();
        t.on_call("s2", &wd, &fm).unwrap();
        assert_eq!(t.on_alloc(&wd).unwrap().sematype, SemaType::ONE_TIME);
    }

    #[test]
    fn nested_activations_do_not_leak() {
        // main -> a (SCC1: a<->b) -> x -> c (SCC2: c<->d) -> malloc
        let wd = weighted(
            "node main\nnode a\nnode b\nnode x\nnode c\nnode d\nnode malloc alloc\n\
             edge m main a\nedge ab a b\nedge ba b a\nedge bx b x\nedge xc x c\n\
             edge cd c d\nedge dc d c\nedge dm d malloc\nedge am a malloc\nentry main",
        );
        let fm = SyntheticFrameModel::default();
        let mut t = ThreadTracker::new(0, &wd, &EncodingLayout::default(), &fm);
        for s in ["m", "ab", "ba", "ab"] {
            t.on_call(s, &wd, &fm).unwrap();
        }
        assert_eq!(t.scc_stack().len(), 4);
        let outer = t.scc_stack().to_vec();
        t.on_call("bx", &wd, &fm).unwrap();
        assert!(t.scc_stack().is_empty());
        t.on_call("xc", &wd, &fm).unwrap();
        assert_eq!(t.scc_stack().len(), 1);
        assert_eq!(t.depth(), 2);
        t.on_call("cd", &wd, &fm).unwrap();
        t.on_call("dm", &wd, &fm).unwrap();
        let inner_tag = t.on_alloc(&wd).unwrap();
        assert!(inner_tag.sematype.loop_bit);
        for _ in 0..3 {
            t.on_return().unwrap();
        }
        assert!(t.scc_stack().is_empty());
        t.on_return().unwrap();
        assert_eq!(t.scc_stack(), outer.as_slice());
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn inbound_return_restores_state() {
        let wd = weighted(
            "node main\nnode c\nnode f\nnode malloc alloc\n\
             edge in main c\nedge cf c f\nedge fc f c\nedge fm f malloc\nentry main",
        );
        let fm = SyntheticFrameModel::default();
        let mut t = ThreadTracker::new(0, &wd, &EncodingLayout::default(), &fm);
        t.on_call("in", &wd, &fm).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(t.scc_stack().len(), 1);
        t.on_return().unwrap();
        assert_eq!(t.depth(), 0);
        assert!(t.scc_stack().is_empty());
    }

    #[test]
    fn narrow_nid_wraps_and_counts() {
        let mut text = String::from("node malloc alloc\nentry f0\n");
        for i in 0..=3 {
            text += &format!("node f{i}\n");
        }
        for i in 0..3 {
            text += &format!("edge a{i} f{i} f{} order=0\nedge b{i} f{i} f{} order=1\n", i + 1, i + 1);
        }
        text += "edge m f3 malloc\n";
        let wd = weighted(&text);
        let layout = EncodingLayout::new(2, 28, 32).unwrap();
        let fm = SyntheticFrameModel::default();
        let mut t = ThreadTracker::new(0, &wd, &layout, &fm);
        for s in ["b0", "b1", "b2", "m"] {
            t.on_call(s, &wd, &fm).unwrap();
        }
        assert_eq!(t.nid_acc(), 7);
        assert_eq!(t.on_alloc(&wd).unwrap().sematype.nid, 3);
        assert_eq!(t.nid_wraps(), 1);
    }
}
