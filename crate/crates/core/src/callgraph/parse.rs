use std::collections::BTreeMap;

use super::{CallSiteEdge, FlowCallGraph, FunctionNode, GraphError};

/// Parses the line-oriented graph format:
///
/// ```text
/// node <id> [alloc]
/// edge <site_id> <caller> <callee> [loop] [indirect] [order=<n>]
/// entry <id>
/// # comment
/// ```
///
/// A missing `order=` takes the next position after the caller's previous
/// site in file order.
pub fn parse_graph(text: &str) -> Result<FlowCallGraph, GraphError> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut entry: Option<String> = None;
    let mut next_order: BTreeMap<String, u32> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        let Some(keyword) = tokens.next() else { continue };
        let syntax = |msg: String| GraphError::Syntax { line, msg };

        match keyword {
            "node" => {
                let id = tokens.next().ok_or_else(|| syntax("`node` needs an id".into()))?;
                let mut node = FunctionNode::new(id);
                for flag in tokens {
                    match flag {
                        "alloc" => node.is_allocator = true,
                        other => return Err(syntax(format!("unknown node flag `{other}`"))),
                    }
                }
                nodes.push(node);
            }
            "edge" => {
                let mut field = |what: &str| {
                    tokens
                        .next()
                        .ok_or_else(|| syntax(format!("`edge` is missing its {what}")))
                };
                let site = field("site id")?;
                let caller = field("caller")?;
                let callee = field("callee")?;
                let mut edge = CallSiteEdge::new(site, caller, callee, 0);
                let mut order = None;
                for flag in tokens {
                    match flag {
                        "loop" => edge.in_loop = true,
                        "indirect" => edge.from_indirect = true,
                        f if f.starts_with("order=") => {
                            let n = f["order=".len()..]
                                .parse::<u32>()
                                .map_err(|_| syntax(format!("bad order value in `{f}`")))?;
                            order = Some(n);
                        }
                        other => return Err(syntax(format!("unknown edge flag `{other}`"))),
                    }
                }
                let slot = next_order.entry(edge.caller.clone()).or_insert(0);
                edge.order = order.unwrap_or(*slot);
                *slot = (*slot).max(edge.order.saturating_add(1));
                edges.push(edge);
            }
            "entry" => {
                let id = tokens.next().ok_or_else(|| syntax("`entry` needs an id".into()))?;
                if let Some(extra) = tokens.next() {
                    return Err(syntax(format!("unexpected token `{extra}`")));
                }
                if entry.is_some() {
                    return Err(syntax("entry declared twice".into()));
                }
                entry = Some(id.to_string());
            }
            other => return Err(syntax(format!("unknown directive `{other}`"))),
        }
    }

    let entry = entry.ok_or(GraphError::MissingEntry)?;
    FlowCallGraph::new(nodes, edges, entry)
}
