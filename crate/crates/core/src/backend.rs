//! Simulated SemaType-segregating BIBOP allocator.
//!
//! Nothing is really mapped: the heap hands out addresses from a modeled
//! virtual address space and keeps the bookkeeping a real backend would.
//! Each thread owns
//!
//! * a global pool for one-time requests (loop bit clear),
//! * a lazy pool serving the first request of each recurrent SemaType,
//! * one individual pool per recurrent `(nid, rid, size class)` seen twice.
//!
//! Only individual pools reuse addresses. A block freed from the global or
//! lazy pool gives its pages back (resident bytes drop) but its address
//! range is retired for good; those bytes are reported as leak.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::encoding::{EncodedRequest, EncodingLayout, RequestClass};
use crate::tag::SemaType;

/// Metadata kept immediately below every returned address.
pub const HEADER_BYTES: u64 = 16;
pub const MIN_CLASS_BYTES: u64 = 16;
pub const PAGE_BYTES: u64 = 4096;

const SHARED_CHUNK_BYTES: u64 = 64 * 1024;
const SHARED_CHUNK_CAP: u64 = 64 * 1024 * 1024;
const INDIVIDUAL_INITIAL_SLOTS: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeapError {
    #[error("address space exhausted: {requested} more bytes past the {ceiling:#x} ceiling")]
    OutOfMemory { requested: u64, ceiling: u64 },
    #[error("double free of {0:#x}")]
    DoubleFree(u64),
    #[error("free of {0:#x}, which was never allocated")]
    InvalidFree(u64),
    #[error("thread id {0} does not fit the 2-byte header field")]
    ThreadIdTooLarge(u32),
    #[error("alignment {0} is not a power of two")]
    BadAlignment(u64),
    #[error("zero-byte request")]
    ZeroSize,
}

/// Power-of-two size class; requests 65..=128 share class 128.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct SizeClass(u64);

impl SizeClass {
    pub fn for_request(size: u64) -> SizeClass {
        SizeClass(size.max(MIN_CLASS_BYTES).next_power_of_two())
    }

    /// Smallest class whose slot can hold `size` bytes starting at an
    /// `align`-aligned address.
    pub fn for_aligned(size: u64, align: u64) -> SizeClass {
        let padding = align.max(MIN_CLASS_BYTES) - MIN_CLASS_BYTES;
        Self::for_request(size + padding)
    }

    pub fn bytes(self) -> u64 {
        self.0
    }

    /// Pool range consumed per block: header plus class.
    pub fn slot_bytes(self) -> u64 {
        self.0 + HEADER_BYTES
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Global,
    Lazy,
    Individual,
}

pub type PoolId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Huge,
    Regular,
}

/// The 16 modeled bytes stored below each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub kind: BlockKind,
    pub thread_id: u16,
    /// Owning pool of regular blocks.
    pub pool: Option<PoolId>,
    /// Distance from the slot's data start to the returned address.
    pub align_offset: u32,
    /// Requested size; the header of a huge block needs nothing else.
    pub size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockState {
    Live,
    /// Freed by another thread, waiting for the owner.
    Deferred,
}

/// Everything known about a live (or deferred) block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockInfo {
    pub address: u64,
    pub header: BlockHeader,
    /// Address range the block occupies in its pool, header included.
    pub footprint: (u64, u64),
    pub class: Option<SizeClass>,
    pub sematype: SemaType,
    pub pool_kind: Option<PoolKind>,
    pub deferred: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeOutcome {
    Unmapped,
    /// Queued for the owning thread.
    Deferred { owner: u32 },
    /// Pages released, address range retired.
    Retired,
    /// Pushed on the individual pool's free list.
    Recycled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeapConfig {
    pub layout: EncodingLayout,
    /// First address handed out.
    pub base: u64,
    /// Exclusive upper bound of the modeled address space.
    pub ceiling: u64,
}

impl Default for HeapConfig {
    fn default() -> Self {
        Self { layout: EncodingLayout::default(), base: 0x1000_0000, ceiling: 1 << 47 }
    }
}

#[derive(Debug, Clone, Default)]
struct BumpArea {
    ranges: Vec<(u64, u64)>,
    cursor: u64,
    end: u64,
    next_len: u64,
}

#[derive(Debug, Clone)]
pub struct Pool {
    pub id: PoolId,
    pub kind: PoolKind,
    pub owner: u32,
    /// `(nid, rid, class)` of an individual pool.
    pub key: Option<(u64, u64, SizeClass)>,
    areas: BTreeMap<SizeClass, BumpArea>,
    free_list: Vec<u64>,
    pub allocations: u64,
    pub growths: u64,
}

impl Pool {
    /// Every address range mapped for this pool.
    pub fn ranges(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.areas.values().flat_map(|a| a.ranges.iter().copied())
    }

    pub fn free_list_len(&self) -> usize {
        self.free_list.len()
    }
}

#[derive(Debug, Clone)]
struct ThreadHeap {
    global: PoolId,
    lazy: PoolId,
    individual: BTreeMap<(u64, u64, SizeClass), PoolId>,
    seen: BTreeSet<(u64, u64, SizeClass)>,
    deferred: Vec<u64>,
}

#[derive(Debug, Clone)]
struct Block {
    header: BlockHeader,
    slot: (u64, u64),
    class: Option<SizeClass>,
    sematype: SemaType,
    state: BlockState,
}

#[derive(Debug, Clone, Default)]
struct Counters {
    allocs: u64,
    frees: u64,
    reuses: u64,
    recurrent_allocs: u64,
    huge_allocs: u64,
    deferred_frees: u64,
    leak_bytes: u64,
    class_bytes_allocated: u64,
    virtual_bytes: u64,
    resident_bytes: u64,
    peak_virtual: u64,
    peak_resident: u64,
    pool_growths: u64,
}

/// Table-style summary of a heap.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HeapStats {
    pub allocs: u64,
    pub frees: u64,
    pub reuses: u64,
    pub recurrent_allocs: u64,
    pub one_time_allocs: u64,
    pub huge_allocs: u64,
    pub recurrent_pools: u64,
    pub recurrent_pct: f64,
    pub avg_allocs_per_recurrent_pool: f64,
    pub leak_bytes: u64,
    pub leak_pct: f64,
    pub peak_virtual: u64,
    pub peak_resident: u64,
    pub distinct_sematypes: u64,
    pub deferred_frees: u64,
    pub pool_growths: u64,
}

#[derive(Debug, Clone)]
pub struct SimHeap {
    config: HeapConfig,
    cursor: u64,
    threads: BTreeMap<u32, ThreadHeap>,
    pools: Vec<Pool>,
    blocks: BTreeMap<u64, Block>,
    ever_allocated: BTreeSet<u64>,
    sematypes: BTreeSet<(u32, SemaType)>,
    counters: Counters,
}

fn round_up(v: u64, to: u64) -> u64 {
    v.div_ceil(to) * to
}

impl SimHeap {
    pub fn new(config: HeapConfig) -> Self {
        Self {
            cursor: round_up(config.base, PAGE_BYTES),
            config,
            threads: BTreeMap::new(),
            pools: Vec::new(),
            blocks: BTreeMap::new(),
            ever_allocated: BTreeSet::new(),
            sematypes: BTreeSet::new(),
            counters: Counters::default(),
        }
    }

    pub fn config(&self) -> &HeapConfig {
        &self.config
    }

    pub fn pools(&self) -> &[Pool] {
        &self.pools
    }

    pub fn block(&self, address: u64) -> Option<BlockInfo> {
        self.blocks.get(&address).map(|b| BlockInfo {
            address,
            header: b.header,
            footprint: b.slot,
            class: b.class,
            sematype: b.sematype,
            pool_kind: b.header.pool.map(|p| self.pools[p].kind),
            deferred: b.state == BlockState::Deferred,
        })
    }

    pub fn live_blocks(&self) -> impl Iterator<Item = BlockInfo> + '_ {
        self.blocks.keys().filter_map(|&a| self.block(a))
    }

    /// Frees queued for `tid` by other threads and not yet applied.
    pub fn pending_deferred(&self, tid: u32) -> usize {
        self.threads.get(&tid).map_or(0, |t| t.deferred.len())
    }

    pub fn virtual_bytes(&self) -> u64 {
        self.counters.virtual_bytes
    }

    pub fn resident_bytes(&self) -> u64 {
        self.counters.resident_bytes
    }

    fn map(&mut self, len: u64) -> Result<u64, HeapError> {
        let start = self.cursor;
        // One unmapped guard page between mappings.
        let next = start
            .checked_add(len)
            .and_then(|e| e.checked_add(PAGE_BYTES))
            .filter(|&e| e <= self.config.ceiling)
            .ok_or(HeapError::OutOfMemory { requested: len, ceiling: self.config.ceiling })?;
        self.cursor = next;
        self.counters.virtual_bytes += len;
        self.counters.peak_virtual = self.counters.peak_virtual.max(self.counters.virtual_bytes);
        Ok(start)
    }

    fn touch(&mut self, bytes: u64) {
        self.counters.resident_bytes += bytes;
        self.counters.peak_resident = self.counters.peak_resident.max(self.counters.resident_bytes);
    }

    fn new_pool(&mut self, kind: PoolKind, owner: u32, key: Option<(u64, u64, SizeClass)>) -> PoolId {
        let id = self.pools.len();
        self.pools.push(Pool {
            id,
            kind,
            owner,
            key,
            areas: BTreeMap::new(),
            free_list: Vec::new(),
            allocations: 0,
            growths: 0,
        });
        id
    }

    fn thread(&mut self, tid: u32) -> Result<&mut ThreadHeap, HeapError> {
        if tid > u32::from(u16::MAX) {
            return Err(HeapError::ThreadIdTooLarge(tid));
        }
        if !self.threads.contains_key(&tid) {
            let global = self.new_pool(PoolKind::Global, tid, None);
            let lazy = self.new_pool(PoolKind::Lazy, tid, None);
            self.threads.insert(
                tid,
                ThreadHeap {
                    global,
                    lazy,
                    individual: BTreeMap::new(),
                    seen: BTreeSet::new(),
                    deferred: Vec::new(),
                },
            );
        }
        Ok(self.threads.get_mut(&tid).expect("just inserted"))
    }

    fn drain_deferred(&mut self, tid: u32) -> Result<(), HeapError> {
        let pending = std::mem::take(&mut self.thread(tid)?.deferred);
        for addr in pending {
            self.release(addr);
        }
        Ok(())
    }

    /// Bump-allocates one slot of `class` in `pool`, mapping a fresh
    /// disjoint range when the current one is full.
    fn bump(&mut self, pool: PoolId, class: SizeClass) -> Result<u64, HeapError> {
        let slot = class.slot_bytes();
        let kind = self.pools[pool].kind;
        let area = self.pools[pool].areas.entry(class).or_default();
        if area.cursor + slot <= area.end && !area.ranges.is_empty() {
            let at = area.cursor;
            area.cursor += slot;
            return Ok(at);
        }
        let len = if area.next_len == 0 {
            match kind {
                PoolKind::Individual => round_up(slot * INDIVIDUAL_INITIAL_SLOTS, PAGE_BYTES),
                _ => round_up(slot.max(SHARED_CHUNK_BYTES), PAGE_BYTES),
            }
        } else {
            area.next_len
        };
        let grows = !area.ranges.is_empty();
        let start = self.map(len)?;
        let cap = SHARED_CHUNK_CAP.max(round_up(slot, PAGE_BYTES));
        let p = &mut self.pools[pool];
        if grows {
            p.growths += 1;
            self.counters.pool_growths += 1;
        }
        let area = p.areas.get_mut(&class).expect("area exists");
        area.ranges.push((start, start + len));
        area.cursor = start + slot;
        area.end = start + len;
        area.next_len = if kind == PoolKind::Individual { len * 2 } else { (len * 2).min(cap).max(len) };
        Ok(start)
    }

    pub fn sim_malloc(&mut self, tid: u32, request: EncodedRequest) -> Result<u64, HeapError> {
        self.sim_malloc_aligned(tid, request, MIN_CLASS_BYTES)
    }

    /// `memalign`-style allocation. The returned address is `align`-aligned
    /// and the offset from the slot's data start is kept in the header.
    pub fn sim_malloc_aligned(&mut self, tid: u32, request: EncodedRequest, align: u64) -> Result<u64, HeapError> {
        if !align.is_power_of_two() {
            return Err(HeapError::BadAlignment(align));
        }
        self.drain_deferred(tid)?;
        let decoded = self.config.layout.decode(request);
        if decoded.size == 0 {
            return Err(HeapError::ZeroSize);
        }
        let header_tid = tid as u16;

        if decoded.class == RequestClass::Huge {
            let len = round_up(decoded.size + HEADER_BYTES + align.max(MIN_CLASS_BYTES) - MIN_CLASS_BYTES, PAGE_BYTES);
            let start = self.map(len)?;
            self.touch(len);
            let data = start + HEADER_BYTES;
            let addr = round_up(data, align.max(MIN_CLASS_BYTES));
            self.counters.allocs += 1;
            self.counters.huge_allocs += 1;
            self.ever_allocated.insert(addr);
            self.blocks.insert(
                addr,
                Block {
                    header: BlockHeader {
                        kind: BlockKind::Huge,
                        thread_id: header_tid,
                        pool: None,
                        align_offset: (addr - data) as u32,
                        size: decoded.size,
                    },
                    slot: (start, start + len),
                    class: None,
                    sematype: SemaType::ONE_TIME,
                    state: BlockState::Live,
                },
            );
            return Ok(addr);
        }

        let class = SizeClass::for_aligned(decoded.size, align);
        let st = decoded.sematype;
        let pool = {
            let th = self.thread(tid)?;
            if !st.loop_bit {
                th.global
            } else {
                let key = (st.nid, st.rid, class);
                match th.individual.get(&key) {
                    Some(&p) => p,
                    None if th.seen.contains(&key) => {
                        let p = self.new_pool(PoolKind::Individual, tid, Some(key));
                        self.threads.get_mut(&tid).expect("thread exists").individual.insert(key, p);
                        p
                    }
                    None => {
                        th.seen.insert(key);
                        th.lazy
                    }
                }
            }
        };

        let slot_start = match self.pools[pool].free_list.pop() {
            Some(s) => {
                self.counters.reuses += 1;
                s
            }
            None => {
                let s = self.bump(pool, class)?;
                self.touch(class.slot_bytes());
                s
            }
        };
        let data = slot_start + HEADER_BYTES;
        let addr = round_up(data, align.max(MIN_CLASS_BYTES));

        self.pools[pool].allocations += 1;
        self.counters.allocs += 1;
        self.counters.class_bytes_allocated += class.bytes();
        if st.loop_bit {
            self.counters.recurrent_allocs += 1;
        }
        self.sematypes.insert((tid, st));
        self.ever_allocated.insert(addr);
        self.blocks.insert(
            addr,
            Block {
                header: BlockHeader {
                    kind: BlockKind::Regular,
                    thread_id: header_tid,
                    pool: Some(pool),
                    align_offset: (addr - data) as u32,
                    size: decoded.size,
                },
                slot: (slot_start, slot_start + class.slot_bytes()),
                class: Some(class),
                sematype: st,
                state: BlockState::Live,
            },
        );
        Ok(addr)
    }

    pub fn sim_free(&mut self, tid: u32, address: u64) -> Result<FreeOutcome, HeapError> {
        self.drain_deferred(tid)?;
        let Some(block) = self.blocks.get_mut(&address) else {
            return Err(if self.ever_allocated.contains(&address) {
                HeapError::DoubleFree(address)
            } else {
                HeapError::InvalidFree(address)
            });
        };
        if block.state == BlockState::Deferred {
            return Err(HeapError::DoubleFree(address));
        }
        self.counters.frees += 1;
        let owner = u32::from(block.header.thread_id);
        if block.header.kind == BlockKind::Regular && owner != tid {
            block.state = BlockState::Deferred;
            self.counters.deferred_frees += 1;
            self.thread(owner)?.deferred.push(address);
            return Ok(FreeOutcome::Deferred { owner });
        }
        Ok(self.release(address))
    }

    fn release(&mut self, address: u64) -> FreeOutcome {
        let block = self.blocks.remove(&address).expect("released block is tracked");
        let slot_len = block.slot.1 - block.slot.0;
        match block.header.pool {
            None => {
                self.counters.virtual_bytes -= slot_len;
                self.counters.resident_bytes -= slot_len;
                FreeOutcome::Unmapped
            }
            Some(p) if self.pools[p].kind == PoolKind::Individual => {
                self.pools[p].free_list.push(block.slot.0);
                FreeOutcome::Recycled
            }
            Some(_) => {
                self.counters.resident_bytes -= slot_len;
                self.counters.leak_bytes += block.class.expect("regular block has a class").bytes();
                FreeOutcome::Retired
            }
        }
    }

    pub fn heap_stats(&self) -> HeapStats {
        let c = &self.counters;
        let recurrent_pools = self.pools.iter().filter(|p| p.kind == PoolKind::Individual).count() as u64;
        let pct = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 * 100.0 / den as f64 };
        HeapStats {
            allocs: c.allocs,
            frees: c.frees,
            reuses: c.reuses,
            recurrent_allocs: c.recurrent_allocs,
            one_time_allocs: c.allocs - c.recurrent_allocs - c.huge_allocs,
            huge_allocs: c.huge_allocs,
            recurrent_pools,
            recurrent_pct: pct(c.recurrent_allocs, c.allocs),
            avg_allocs_per_recurrent_pool: if recurrent_pools == 0 {
                0.0
            } else {
                c.recurrent_allocs as f64 / recurrent_pools as f64
            },
            leak_bytes: c.leak_bytes,
            leak_pct: pct(c.leak_bytes, c.class_bytes_allocated),
            peak_virtual: c.peak_virtual,
            peak_resident: c.peak_resident,
            distinct_sematypes: self.sematypes.len() as u64,
            deferred_frees: c.deferred_frees,
            pool_growths: c.pool_growths,
        }
    }
}

pub fn heap_stats(h: &SimHeap) -> HeapStats {
    h.heap_stats()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::encode;

    fn req(loop_bit: bool, nid: u64, rid: u64, size: u64) -> EncodedRequest {
        encode(&SemaType::new(loop_bit, nid, rid), size).unwrap()
    }

    fn heap() -> SimHeap {
        SimHeap::new(HeapConfig::default())
    }

    #[test]
    fn size_classes() {
        assert_eq!(SizeClass::for_request(1).bytes(), 16);
        assert_eq!(SizeClass::for_request(65), SizeClass::for_request(128));
        assert_eq!(SizeClass::for_request(129).bytes(), 256);
        assert_eq!(SizeClass::for_aligned(100, 64).bytes(), 256);
        assert_eq!(SizeClass::for_aligned(100, 8).bytes(), 128);
    }

    #[test]
    fn lazy_then_individual() {
        let mut h = heap();
        let a = h.sim_malloc(0, req(true, 5, 1, 40)).unwrap();
        let b = h.sim_malloc(0, req(true, 5, 1, 40)).unwrap();
        assert_eq!(h.block(a).unwrap().pool_kind, Some(PoolKind::Lazy));
        assert_eq!(h.block(b).unwrap().pool_kind, Some(PoolKind::Individual));
        assert_eq!(h.heap_stats().recurrent_pools, 1);
    }

    #[test]
    fn one_time_never_reused() {
        let mut h = heap();
        let a = h.sim_malloc(0, req(false, 0, 0, 32)).unwrap();
        assert_eq!(h.sim_free(0, a).unwrap(), FreeOutcome::Retired);
        let b = h.sim_malloc(0, req(false, 0, 0, 32)).unwrap();
        assert_ne!(a, b);
        assert_eq!(h.heap_stats().leak_bytes, 32);
    }

    #[test]
    fn individual_free_list_head_is_reused() {
        let mut h = heap();
        h.sim_malloc(0, req(true, 2, 0, 100)).unwrap();
        let a = h.sim_malloc(0, req(true, 2, 0, 100)).unwrap();
        let _b = h.sim_malloc(0, req(true, 2, 0, 100)).unwrap();
        assert_eq!(h.sim_free(0, a).unwrap(), FreeOutcome::Recycled);
        // Same class, different size: still the same pool.
        let c = h.sim_malloc(0, req(true, 2, 0, 70)).unwrap();
        assert_eq!(c, a);
        assert_eq!(h.heap_stats().reuses, 1);
        // Different rid never lands there.
        h.sim_free(0, c).unwrap();
        let d = h.sim_malloc(0, req(true, 2, 1, 100)).unwrap();
        assert_ne!(d, a);
    }

    #[test]
    fn header_sits_below_address() {
        let mut h = heap();
        let a = h.sim_malloc(7, req(false, 0, 0, 24)).unwrap();
        let info = h.block(a).unwrap();
        assert_eq!(info.footprint.0, a - HEADER_BYTES);
        assert_eq!(info.header.thread_id, 7);
        assert_eq!(info.header.kind, BlockKind::Regular);
        assert_eq!(a % 16, 0);
    }

    #[test]
    fn aligned_allocation_records_offset() {
        let mut h = heap();
        let a = h.sim_malloc_aligned(0, req(false, 0, 0, 100), 256).unwrap();
        assert_eq!(a % 256, 0);
        let info = h.block(a).unwrap();
        assert_eq!(u64::from(info.header.align_offset), a - (info.footprint.0 + HEADER_BYTES));
        assert!(a + 100 <= info.footprint.1);
        assert!(a - HEADER_BYTES >= info.footprint.0);
        assert_eq!(h.sim_malloc_aligned(0, req(false, 0, 0, 1), 3), Err(HeapError::BadAlignment(3)));
    }

    #[test]
    fn huge_blocks_are_mapped_and_unmapped() {
        let mut h = heap();
        let size = 1u64 << 33;
        let a = h.sim_malloc(0, req(true, 1, 1, size)).unwrap();
        let info = h.block(a).unwrap();
        assert_eq!(info.header.kind, BlockKind::Huge);
        assert_eq!(info.header.size, size);
        assert!(h.virtual_bytes() >= size);
        assert_eq!(h.sim_free(1, a).unwrap(), FreeOutcome::Unmapped);
        assert_eq!(h.virtual_bytes(), 0);
        assert_eq!(h.heap_stats().huge_allocs, 1);
    }

    #[test]
    fn double_and_invalid_free() {
        let mut h = heap();
        let a = h.sim_malloc(0, req(false, 0, 0, 8)).unwrap();
        h.sim_free(0, a).unwrap();
        assert_eq!(h.sim_free(0, a), Err(HeapError::DoubleFree(a)));
        assert_eq!(h.sim_free(0, 0xdead0), Err(HeapError::InvalidFree(0xdead0)));
    }

    #[test]
    fn cross_thread_free_is_deferred_until_owner_acts() {
        let mut h = heap();
        h.sim_malloc(1, req(true, 3, 0, 64)).unwrap();
        let a = h.sim_malloc(1, req(true, 3, 0, 64)).unwrap();
        assert_eq!(h.sim_free(2, a).unwrap(), FreeOutcome::Deferred { owner: 1 });
        assert_eq!(h.sim_free(2, a), Err(HeapError::DoubleFree(a)));
        assert_eq!(h.pending_deferred(1), 1);
        // Thread 2 allocating the same SemaType gets its own pools.
        h.sim_malloc(2, req(true, 3, 0, 64)).unwrap();
        let other = h.sim_malloc(2, req(true, 3, 0, 64)).unwrap();
        assert_ne!(other, a);
        // The owner's next operation applies the free first.
        let b = h.sim_malloc(1, req(true, 3, 0, 64)).unwrap();
        assert_eq!(b, a);
        assert_eq!(h.pending_deferred(1), 0);
    }

    #[test]
    fn exhaustion_is_reported() {
        let mut h = SimHeap::new(HeapConfig { ceiling: 0x1000_0000 + 128 * 1024, ..HeapConfig::default() });
        let mut last = Ok(0);
        for _ in 0..10_000 {
            last = h.sim_malloc(0, req(false, 0, 0, 1000));
            if last.is_err() {
                break;
            }
        }
        assert!(matches!(last, Err(HeapError::OutOfMemory { .. })));
    }

    #[test]
    fn empty_heap_stats_are_zero() {
        assert_eq!(heap().heap_stats(), HeapStats::default());
    }

    #[test]
    fn ten_recurrent_same_sematype() {
        let mut h = heap();
        for _ in 0..10 {
            h.sim_malloc(0, req(true, 9, 4, 48)).unwrap();
        }
        let s = h.heap_stats();
        assert_eq!(s.recurrent_pct, 100.0);
        assert_eq!(s.recurrent_pools, 1);
        assert_eq!(s.avg_allocs_per_recurrent_pool, 10.0);
        assert_eq!(s.distinct_sematypes, 1);
    }

    #[test]
    fn individual_pool_grows_into_fresh_range() {
        let mut h = heap();
        let mut seen = BTreeSet::new();
        for _ in 0..2000 {
            assert!(seen.insert(h.sim_malloc(0, req(true, 1, 1, 512)).unwrap()));
        }
        let pool = h.pools().iter().find(|p| p.kind == PoolKind::Individual).unwrap();
        assert!(pool.growths > 0);
        let mut ranges: Vec<_> = h.pools().iter().flat_map(|p| p.ranges()).collect();
        ranges.sort();
        assert!(ranges.windows(2).all(|w| w[0].1 <= w[1].0));
    }

    #[test]
    fn resident_never_exceeds_virtual() {
        let mut h = heap();
        let mut live = Vec::new();
        for i in 0..500u64 {
            let r = req(i % 3 == 0, i % 5, 0, 1 + (i * 37) % 900);
            live.push(h.sim_malloc((i % 2) as u32, r).unwrap());
            if i % 4 == 0 {
                let a = live.swap_remove((i as usize * 7) % live.len());
                h.sim_free((i % 2) as u32, a).unwrap();
            }
            assert!(h.resident_bytes() <= h.virtual_bytes());
        }
        let s = h.heap_stats();
        assert!(s.peak_virtual >= s.peak_resident);
    }
}
