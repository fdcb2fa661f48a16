//! JSON document emitted by `sematype analyze`.

use std::collections::BTreeMap;

use serde::Serialize;

use sematype::callgraph::{EdgeClass, LinkId};
use sematype::weights::{enumerate_paths, path_nid, security_profile, SecurityProfile};
use sematype::{EncodingLayout, FlowCallGraph, WeightedDag};

#[derive(Debug, Serialize)]
pub struct LayoutReport {
    pub nid_bits: u32,
    pub rid_bits: u32,
    pub size_bits: u32,
    pub huge_threshold: u64,
}

#[derive(Debug, Serialize)]
pub struct PathReport {
    pub allocator: String,
    pub nid: u64,
    /// Call sites along the path; `{a|b}` when several sites share a link.
    pub calls: Vec<String>,
    pub through_recursion: bool,
}

#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub layout: LayoutReport,
    pub entry: String,
    pub functions: usize,
    pub call_sites: usize,
    pub trimmed_functions: usize,
    pub trimmed_call_sites: usize,
    pub recursive_sccs: Vec<Vec<String>>,
    pub elided_functions: Vec<String>,
    pub prunable_call_sites: Vec<String>,
    pub recurrent_alloc_sites: Vec<String>,
    pub edge_classes: BTreeMap<String, EdgeClass>,
    pub node_weights: BTreeMap<String, u64>,
    pub site_weights: BTreeMap<String, u64>,
    pub nid_space: u64,
    pub capacity_warning: Option<String>,
    pub profile: Option<SecurityProfile>,
    pub paths: Vec<PathReport>,
    pub paths_total: Option<u64>,
    pub paths_truncated: bool,
    pub diagnostics: Vec<String>,
}

fn render_link(wd: &WeightedDag, l: LinkId) -> Vec<String> {
    let link = wd.dag().link(l);
    let mut calls = link.prefix.clone();
    calls.push(if link.sites.len() == 1 { link.sites[0].clone() } else { format!("{{{}}}", link.sites.join("|")) });
    calls
}

pub fn analysis_report(
    original: &FlowCallGraph,
    wd: &WeightedDag,
    layout: &EncodingLayout,
    max_paths: usize,
) -> AnalysisReport {
    let d = wd.dag();
    let g = d.graph();
    let marks = g.marks();
    let mut diagnostics = Vec::new();

    let capacity_warning = (!wd.nid_fits(layout.nid_bits())).then(|| {
        format!(
            "{} distinct nIDs needed but {} bits hold {}; nIDs will wrap and may collide",
            wd.nid_space(),
            layout.nid_bits(),
            layout.nid_mask() as u128 + 1
        )
    });

    let profile = match security_profile(wd, layout.rid_bits()) {
        Ok(p) => Some(p),
        Err(e) => {
            diagnostics.push(format!("security profile skipped: {e}"));
            None
        }
    };

    let mut paths = Vec::new();
    let mut total = Some(0u64);
    for a in d.allocator_sccs() {
        match enumerate_paths(wd, a.label()) {
            Ok(found) => {
                total = total.map(|t| t + found.len() as u64);
                for p in found {
                    if paths.len() == max_paths {
                        break;
                    }
                    paths.push(PathReport {
                        allocator: a.label().to_string(),
                        nid: path_nid(wd, &p).expect("enumerated path is valid"),
                        calls: p.iter().flat_map(|&l| render_link(wd, l)).collect(),
                        through_recursion: p.iter().any(|&l| d.scc(d.link(l).to).recursive),
                    });
                }
            }
            Err(e) => {
                total = None;
                diagnostics.push(format!("paths to `{}` not listed: {e}", a.label()));
            }
        }
    }
    let paths_truncated = total.is_none_or(|t| t > paths.len() as u64);

    AnalysisReport {
        layout: LayoutReport {
            nid_bits: layout.nid_bits(),
            rid_bits: layout.rid_bits(),
            size_bits: layout.size_bits(),
            huge_threshold: layout.huge_threshold(),
        },
        entry: g.entry().to_string(),
        functions: original.node_count(),
        call_sites: original.edges().len(),
        trimmed_functions: g.node_count(),
        trimmed_call_sites: g.edges().len(),
        recursive_sccs: d.sccs().iter().filter(|s| s.recursive).map(|s| s.members.clone()).collect(),
        elided_functions: d.elided().iter().map(|&s| d.scc(s).label().to_string()).collect(),
        prunable_call_sites: marks.map(|m| m.prunable_edges.iter().cloned().collect()).unwrap_or_default(),
        recurrent_alloc_sites: marks.map(|m| m.recurrent_alloc_sites.iter().cloned().collect()).unwrap_or_default(),
        edge_classes: d.edge_classes().clone(),
        node_weights: d.active_sccs().map(|s| (s.label().to_string(), wd.node_weight(s.id))).collect(),
        site_weights: wd.site_weights().clone(),
        nid_space: wd.nid_space(),
        capacity_warning,
        profile,
        paths,
        paths_total: total,
        paths_truncated,
        diagnostics,
    }
}
