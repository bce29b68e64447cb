//! Network simplex on the bipartite transportation graph.
//!
//! Exact primal solver returning an optimal plan together with dual
//! potentials read off the final spanning tree. Zero-mass points are
//! filtered before solving and their dual coordinates are extended
//! afterwards so that dual feasibility holds on the full space.

use crate::error::{Error, Result};
use crate::measures::{CostMatrix, SquareMat};

pub(crate) struct TransportResult {
    pub value: f64,
    pub plan: SquareMat,
    pub dual_u: Vec<f64>,
    pub dual_v: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct BasicArc {
    src: usize,
    snk: usize,
    flow: f64,
}

/// Solves `min <c, plan>` over plans with row sums `a` and column sums `b`.
/// Masses must already be balanced up to float noise; the target side is
/// rescaled internally to match exactly.
pub(crate) fn solve(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<TransportResult> {
    let n_full = cost.n_points();
    debug_assert_eq!(a.len(), n_full);
    debug_assert_eq!(b.len(), n_full);

    let srcs: Vec<usize> = (0..n_full).filter(|&i| a[i] > 0.0).collect();
    let snks: Vec<usize> = (0..n_full).filter(|&j| b[j] > 0.0).collect();
    let total_a: f64 = srcs.iter().map(|&i| a[i]).sum();
    let total_b: f64 = snks.iter().map(|&j| b[j]).sum();

    // Degenerate zero-mass problem: nothing to move.
    if srcs.is_empty() || snks.is_empty() {
        return Ok(TransportResult {
            value: 0.0,
            plan: SquareMat::zeros(n_full),
            dual_u: vec![0.0; n_full],
            dual_v: vec![0.0; n_full],
        });
    }

    let m = srcs.len();
    let n = snks.len();
    let scale = total_a / total_b;
    let supply: Vec<f64> = srcs.iter().map(|&i| a[i]).collect();
    let demand: Vec<f64> = snks.iter().map(|&j| b[j] * scale).collect();

    // Dense cost block restricted to the active points.
    let mut cb = vec![0.0; m * n];
    let mut cost_scale: f64 = 0.0;
    for (ii, &i) in srcs.iter().enumerate() {
        for (jj, &j) in snks.iter().enumerate() {
            let c = cost.at(i, j);
            cb[ii * n + jj] = c;
            cost_scale = cost_scale.max(c.abs());
        }
    }
    let opt_tol = 1e-11 * (1.0 + cost_scale);

    // Northwest-corner start: a spanning tree with m + n - 1 basic arcs.
    let mut basics: Vec<BasicArc> = Vec::with_capacity(m + n - 1);
    {
        let mut rs = supply.clone();
        let mut rd = demand.clone();
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            let theta = rs[i].min(rd[j]);
            basics.push(BasicArc {
                src: i,
                snk: j,
                flow: theta,
            });
            rs[i] -= theta;
            rd[j] -= theta;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 {
                i += 1;
            } else if i == m - 1 {
                j += 1;
            } else if rs[i] <= rd[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    // Node ids: sources 0..m, sinks m..m+n.
    let nodes = m + n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (idx, arc) in basics.iter().enumerate() {
        adj[arc.src].push(idx);
        adj[m + arc.snk].push(idx);
    }

    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let compute_duals = |basics: &[BasicArc],
                         adj: &[Vec<usize>],
                         u: &mut [f64],
                         v: &mut [f64]| {
        let mut seen = vec![false; m + n];
        let mut stack = vec![0usize];
        seen[0] = true;
        u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &ai in &adj[node] {
                let arc = basics[ai];
                let (s, t) = (arc.src, m + arc.snk);
                let other = if node == s { t } else { s };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                if other >= m {
                    v[other - m] = cb[arc.src * n + arc.snk] - u[arc.src];
                } else {
                    u[other] = cb[arc.src * n + arc.snk] - v[arc.snk];
                }
                stack.push(other);
            }
        }
    };
    compute_duals(&basics, &adj, &mut u, &mut v);

    let bland_threshold = 40 * (m + n) * (m + n) + 2_000;
    let hard_cap = 10 * bland_threshold + 100_000;
    let mut parent: Vec<Option<usize>> = vec![None; nodes];

    for iter in 0..hard_cap {
        let bland = iter >= bland_threshold;

        // Entering arc by reduced cost.
        let mut entering: Option<(usize, usize)> = None;
        let mut best = -opt_tol;
        'scan: for i in 0..m {
            let ui = u[i];
            for j in 0..n {
                let rc = cb[i * n + j] - ui - v[j];
                if rc < best {
                    entering = Some((i, j));
                    if bland {
                        break 'scan;
                    }
                    best = rc;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            // Optimal.
            let mut plan = SquareMat::zeros(n_full);
            let mut value = 0.0;
            for arc in &basics {
                let flow = arc.flow.max(0.0);
                *plan.at_mut(srcs[arc.src], snks[arc.snk]) += flow;
                value += flow * cb[arc.src * n + arc.snk];
            }
            let mut dual_u = vec![f64::NAN; n_full];
            let mut dual_v = vec![f64::NAN; n_full];
            for (ii, &i) in srcs.iter().enumerate() {
                dual_u[i] = u[ii];
            }
            for (jj, &j) in snks.iter().enumerate() {
                dual_v[j] = v[jj];
            }
            // Extend duals to the filtered points: sinks first against the
            // active sources, then sources against all sinks, so every pair
            // stays feasible.
            for j in 0..n_full {
                if dual_v[j].is_nan() {
                    dual_v[j] = srcs
                        .iter()
                        .map(|&i| cost.at(i, j) - dual_u[i])
                        .fold(f64::INFINITY, f64::min);
                }
            }
            for i in 0..n_full {
                if dual_u[i].is_nan() {
                    dual_u[i] = (0..n_full)
                        .map(|j| cost.at(i, j) - dual_v[j])
                        .fold(f64::INFINITY, f64::min);
                }
            }
            return Ok(TransportResult {
                value,
                plan,
                dual_u,
                dual_v,
            });
        };

        // Path from entering source to entering sink through the tree.
        let (start, goal) = (ei, m + ej);
        for p in parent.iter_mut() {
            *p = None;
        }
        let mut seen = vec![false; nodes];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(node) = stack.pop() {
            if node == goal {
                break;
            }
            for &ai in &adj[node] {
                let arc = basics[ai];
                let (s, t) = (arc.src, m + arc.snk);
                let other = if node == s { t } else { s };
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some(ai);
                    stack.push(other);
                }
            }
        }
        if !seen[goal] {
            return Err(Error::solver("transport basis lost connectivity", f64::NAN));
        }

        // Walk back from the sink, collecting the alternating cycle. Arcs at
        // even distance from the entering source lose flow.
        let mut path_arcs: Vec<usize> = Vec::new();
        let mut node = goal;
        while node != start {
            let ai = parent[node].expect("path arc");
            path_arcs.push(ai);
            let arc = basics[ai];
            node = if node == arc.src { m + arc.snk } else { arc.src };
        }
        path_arcs.reverse();

        let mut theta = f64::INFINITY;
        let mut leaving: Option<usize> = None;
        for (pos, &ai) in path_arcs.iter().enumerate() {
            if pos % 2 == 0 {
                let f = basics[ai].flow;
                if f < theta - 1e-15 || (leaving.is_none() && f <= theta) {
                    theta = f;
                    leaving = Some(ai);
                }
            }
        }
        let Some(leave_idx) = leaving else {
            return Err(Error::solver("transport pivot found no leaving arc", f64::NAN));
        };
        let theta = theta.max(0.0);

        for (pos, &ai) in path_arcs.iter().enumerate() {
            if pos % 2 == 0 {
                basics[ai].flow = (basics[ai].flow - theta).max(0.0);
            } else {
                basics[ai].flow += theta;
            }
        }

        // Swap the leaving arc out of the adjacency lists.
        let old = basics[leave_idx];
        adj[old.src].retain(|&x| x != leave_idx);
        adj[m + old.snk].retain(|&x| x != leave_idx);
        basics[leave_idx] = BasicArc {
            src: ei,
            snk: ej,
            flow: theta,
        };
        adj[ei].push(leave_idx);
        adj[m + ej].push(leave_idx);

        compute_duals(&basics, &adj, &mut u, &mut v);
    }

    Err(Error::solver(
        "transport simplex iteration cap exceeded",
        f64::NAN,
    ))
}
