//! Power transfer distribution factors.
//!
//! Orientation: a positive flow on a branch runs from its `from` bus to its
//! `to` bus. Entry `(k, n)` is the flow on branch `k` caused by injecting 1 MW
//! at bus `n` and withdrawing it at the slack bus.

use std::collections::VecDeque;

use nalgebra::DMatrix;

/// Buses (local indices) not reachable from `root` over `branches`.
pub(crate) fn unreachable(n_bus: usize, branches: &[(usize, usize, f64)], root: usize) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n_bus];
    for &(f, t, _) in branches {
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut seen = vec![false; n_bus];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(b) = queue.pop_front() {
        for &nb in &adj[b] {
            if !seen[nb] {
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    (0..n_bus).filter(|&b| !seen[b]).collect()
}

/// PTDF of a single connected network with local bus indices `0..n_bus`.
///
/// Branches are `(from, to, reactance)`. On failure returns the local indices
/// of the buses that cannot reach the slack.
pub(crate) fn ptdf_block(
    n_bus: usize,
    branches: &[(usize, usize, f64)],
    slack: usize,
) -> std::result::Result<DMatrix<f64>, Vec<usize>> {
    let isolated = unreachable(n_bus, branches, slack);
    if !isolated.is_empty() {
        return Err(isolated);
    }
    let mut out = DMatrix::zeros(branches.len(), n_bus);
    if n_bus <= 1 {
        return Ok(out);
    }
    // reduced position of every non-slack bus
    let reduced: Vec<Option<usize>> = (0..n_bus)
        .scan(0usize, |next, b| {
            Some(if b == slack {
                None
            } else {
                *next += 1;
                Some(*next - 1)
            })
        })
        .collect();
    let m = n_bus - 1;
    let mut bred = DMatrix::<f64>::zeros(m, m);
    for &(f, t, x) in branches {
        let y = 1.0 / x;
        if let Some(i) = reduced[f] {
            bred[(i, i)] += y;
        }
        if let Some(j) = reduced[t] {
            bred[(j, j)] += y;
        }
        if let (Some(i), Some(j)) = (reduced[f], reduced[t]) {
            bred[(i, j)] -= y;
            bred[(j, i)] -= y;
        }
    }
    let inv = bred
        .cholesky()
        .map(|c| c.inverse())
        .expect("reduced susceptance matrix of a connected network is positive definite");
    let angle = |bus: usize, inj: usize| match (reduced[bus], reduced[inj]) {
        (Some(i), Some(j)) => inv[(i, j)],
        _ => 0.0,
    };
    for (k, &(f, t, x)) in branches.iter().enumerate() {
        for n in 0..n_bus {
            out[(k, n)] = (angle(f, n) - angle(t, n)) / x;
        }
    }
    Ok(out)
}
