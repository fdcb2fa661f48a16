use serde::Serialize;

/// The encodable part of a SemaType: loop bit, non-recurrence id and
/// recurrence id.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SemaType {
    /// Set when the recurrence depth was non-zero at allocation time.
    #[serde(rename = "loop")]
    pub loop_bit: bool,
    pub nid: u64,
    pub rid: u64,
}

impl SemaType {
    pub const ONE_TIME: SemaType = SemaType { loop_bit: false, nid: 0, rid: 0 };

    pub fn new(loop_bit: bool, nid: u64, rid: u64) -> Self {
        Self { loop_bit, nid, rid }
    }
}

/// A SemaType observed on a particular thread. The thread id never travels
/// in the encoded size word; the backend learns it from the calling thread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SemaTypeTag {
    #[serde(flatten)]
    pub sematype: SemaType,
    pub thread_id: u32,
}
