//! The full static pass chain in one call.

use thiserror::Error;

use crate::callgraph::{condense, elide_single_callers, mark_recurrent, trim_to_allocators, FlowCallGraph, GraphError};
use crate::weights::{assign_weights, WeightError, WeightedDag};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// trim → mark → condense → elide → weigh.
pub fn analyze_graph(g: &FlowCallGraph) -> Result<WeightedDag, AnalysisError> {
    let marked = mark_recurrent(&trim_to_allocators(g)?);
    Ok(assign_weights(elide_single_callers(&condense(&marked)))?)
}

/// Same as [`analyze_graph`] without single-caller elision.
pub fn analyze_graph_unelided(g: &FlowCallGraph) -> Result<WeightedDag, AnalysisError> {
    let marked = mark_recurrent(&trim_to_allocators(g)?);
    Ok(assign_weights(condense(&marked))?)
}
