//! SemaType analysis, tagging and segregated allocation.
//!
//! Pipeline: build a [`FlowCallGraph`], trim it to allocator-relevant
//! nodes, condense it into an acyclic [`CondensedDag`], weigh call sites
//! with [`assign_weights`], then let a [`ThreadTracker`] per thread compute
//! SemaTypes at run time. Tags are packed into the request word by
//! [`EncodingLayout`] and served by the simulated [`SimHeap`].

pub mod backend;
pub mod callgraph;
pub mod encoding;
pub mod pipeline;
pub mod replay;
pub mod synth;
pub mod tag;
pub mod tracker;
pub mod weights;

pub use backend::{heap_stats, BlockInfo, FreeOutcome, HeapConfig, HeapError, HeapStats, PoolKind, SimHeap, SizeClass};
pub use callgraph::{
    condense, elide_single_callers, mark_recurrent, parse_graph, trim_to_allocators, CallSiteEdge, CondensedDag,
    EdgeClass, FlowCallGraph, FunctionNode, GraphError,
};
pub use encoding::{decode, encode, DecodedRequest, EncodeError, EncodedRequest, EncodingLayout, RequestClass};
pub use tag::{SemaType, SemaTypeTag};
pub use tracker::{aggregate_rid, SyntheticFrameModel, ThreadTracker, TrackerError};
pub use weights::{assign_weights, path_nid, security_profile, SecurityProfile, WeightError, WeightedDag};
pub use pipeline::{analyze_graph, analyze_graph_unelided, AnalysisError};
pub use replay::{
    check_uaf, format_trace, gen_trace, parse_trace, replay, replay_with, GenConfig, ReplayConfig, ReplayError,
    ReplayReport, TraceEvent, UafProbe, UafVerdict, Verdict,
};
