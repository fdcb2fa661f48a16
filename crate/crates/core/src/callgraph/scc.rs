//! Kosaraju-Sharir strongly connected components.

/// Partitions the vertices of `adj` into strongly connected components.
///
/// Components come out in topological order of the condensation (a
/// component precedes every component it has an edge into). Each component
/// lists its vertices in ascending order. Both DFS passes are iterative so
/// deep call chains do not exhaust the native stack.
pub fn kosaraju_sharir(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut finish = Vec::with_capacity(n);

    // Pass 1: post-order on the forward graph.
    for root in 0..n {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut stack = vec![(root, 0usize)];
        while let Some((v, next)) = stack.last_mut() {
            if let Some(&u) = adj[*v].get(*next) {
                *next += 1;
                if !visited[u] {
                    visited[u] = true;
                    stack.push((u, 0));
                }
            } else {
                finish.push(*v);
                stack.pop();
            }
        }
    }

    let mut rev = vec![Vec::new(); n];
    for (v, outs) in adj.iter().enumerate() {
        for &u in outs {
            rev[u].push(v);
        }
    }

    // Pass 2: collect on the transpose in decreasing finish time.
    visited.fill(false);
    let mut comps = Vec::new();
    for &root in finish.iter().rev() {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut comp = vec![root];
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &u in &rev[v] {
                if !visited[u] {
                    visited[u] = true;
                    comp.push(u);
                    stack.push(u);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}
