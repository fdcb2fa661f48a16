//! Packing of a SemaType and a request size into the 64-bit `size` argument
//! of the allocation call.
//!
//! Regular requests (size below `2^size_bits`), most significant bit first:
//!
//! ```text
//!  63   62   61 .. 46   45 .. 32   31 .. 0      (default widths)
//! | H=0 | L |   nID    |   rID    |  size  |
//! ```
//!
//! Huge requests set `H` and keep the whole size in bits 62..0. A plain
//! legacy size below `2^size_bits` decodes as a one-time request with an
//! all-zero SemaType, so uninstrumented callers keep working.

use serde::Serialize;
use thiserror::Error;

use crate::tag::SemaType;

const HUGE_BIT: u64 = 1 << 63;
const LOOP_BIT: u64 = 1 << 62;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("field widths nid={nid_bits} rid={rid_bits} size={size_bits} must each be >= 1 and sum to 62")]
    BadLayout { nid_bits: u32, rid_bits: u32, size_bits: u32 },
    #[error("zero-byte request")]
    ZeroSize,
    #[error("request of {0} bytes does not fit in 63 bits")]
    TooLarge(u64),
    #[error("{field} value {value} exceeds {bits} bits")]
    FieldOverflow { field: &'static str, value: u64, bits: u32 },
}

/// Bit widths of the tunable fields. `H` and `L` take one bit each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EncodingLayout {
    nid_bits: u32,
    rid_bits: u32,
    size_bits: u32,
}

impl Default for EncodingLayout {
    fn default() -> Self {
        Self { nid_bits: 16, rid_bits: 14, size_bits: 32 }
    }
}

impl EncodingLayout {
    pub fn new(nid_bits: u32, rid_bits: u32, size_bits: u32) -> Result<Self, EncodeError> {
        let ok = nid_bits >= 1 && rid_bits >= 1 && size_bits >= 1 && nid_bits + rid_bits + size_bits == 62;
        if !ok {
            return Err(EncodeError::BadLayout { nid_bits, rid_bits, size_bits });
        }
        Ok(Self { nid_bits, rid_bits, size_bits })
    }

    pub fn nid_bits(&self) -> u32 {
        self.nid_bits
    }

    pub fn rid_bits(&self) -> u32 {
        self.rid_bits
    }

    pub fn size_bits(&self) -> u32 {
        self.size_bits
    }

    pub fn nid_mask(&self) -> u64 {
        (1u64 << self.nid_bits) - 1
    }

    pub fn rid_mask(&self) -> u64 {
        (1u64 << self.rid_bits) - 1
    }

    /// Smallest size that must travel as a huge request.
    pub fn huge_threshold(&self) -> u64 {
        1u64 << self.size_bits
    }

    fn rid_shift(&self) -> u32 {
        self.size_bits
    }

    fn nid_shift(&self) -> u32 {
        self.size_bits + self.rid_bits
    }

    pub fn encode(&self, sematype: &SemaType, size: u64) -> Result<EncodedRequest, EncodeError> {
        if size == 0 {
            return Err(EncodeError::ZeroSize);
        }
        if size & HUGE_BIT != 0 {
            return Err(EncodeError::TooLarge(size));
        }
        if size >= self.huge_threshold() {
            return Ok(EncodedRequest(HUGE_BIT | size));
        }
        if sematype.nid > self.nid_mask() {
            return Err(EncodeError::FieldOverflow { field: "nid", value: sematype.nid, bits: self.nid_bits });
        }
        if sematype.rid > self.rid_mask() {
            return Err(EncodeError::FieldOverflow { field: "rid", value: sematype.rid, bits: self.rid_bits });
        }
        let mut word = size;
        word |= sematype.rid << self.rid_shift();
        word |= sematype.nid << self.nid_shift();
        if sematype.loop_bit {
            word |= LOOP_BIT;
        }
        Ok(EncodedRequest(word))
    }

    /// Total: every 64-bit word decodes to something.
    pub fn decode(&self, request: EncodedRequest) -> DecodedRequest {
        let word = request.0;
        if word & HUGE_BIT != 0 {
            return DecodedRequest {
                class: RequestClass::Huge,
                sematype: SemaType::ONE_TIME,
                size: word & !HUGE_BIT,
            };
        }
        DecodedRequest {
            class: RequestClass::Regular,
            sematype: SemaType {
                loop_bit: word & LOOP_BIT != 0,
                nid: (word >> self.nid_shift()) & self.nid_mask(),
                rid: (word >> self.rid_shift()) & self.rid_mask(),
            },
            size: word & (self.huge_threshold() - 1),
        }
    }
}

/// The encoded `size` argument as the backend receives it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncodedRequest(pub u64);

impl EncodedRequest {
    pub fn word(self) -> u64 {
        self.0
    }

    pub fn is_huge(self) -> bool {
        self.0 & HUGE_BIT != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestClass {
    Huge,
    Regular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodedRequest {
    pub class: RequestClass,
    pub sematype: SemaType,
    pub size: u64,
}

/// [`EncodingLayout::encode`] with the default 16/14/32 layout.
pub fn encode(sematype: &SemaType, size: u64) -> Result<EncodedRequest, EncodeError> {
    EncodingLayout::default().encode(sematype, size)
}

/// [`EncodingLayout::decode`] with the default 16/14/32 layout.
pub fn decode(request: EncodedRequest) -> DecodedRequest {
    EncodingLayout::default().decode(request)
}
