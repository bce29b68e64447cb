//! Independent dense-LP route used to cross-check the specialized solvers.
//!
//! This is a deliberately plain two-phase tableau simplex with Bland's rule:
//! slow but transparent, and sharing no code with the network simplex or the
//! revised simplex that back the production paths. `cmd oracle` in the CLI
//! and the acceptance suite both route through here.

use crate::barycenter;
use crate::error::{Error, Result};
use crate::measures::{CostMatrix, NonNegMeasure, ProbMeasure, SignedMeasure};
use crate::ot;
use rand::Rng;

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;

/// Equality-form linear program `min c.x  s.t.  A x = b`, `x >= 0` except
/// for the variables flagged free (split internally).
#[derive(Debug, Clone)]
pub struct DenseLp {
    pub cost: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub free: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub value: f64,
    pub x: Vec<f64>,
}

impl DenseLp {
    pub fn new(cost: Vec<f64>, rows: Vec<Vec<f64>>, rhs: Vec<f64>) -> Self {
        let free = vec![false; cost.len()];
        DenseLp {
            cost,
            rows,
            rhs,
            free,
        }
    }
}

/// Two-phase tableau simplex with Bland's rule.
pub fn solve_dense(lp: &DenseLp) -> Result<DenseSolution> {
    let n_orig = lp.cost.len();
    for (r, row) in lp.rows.iter().enumerate() {
        if row.len() != n_orig {
            return Err(Error::dim(format!(
                "LP row {r} has {} coefficients, expected {n_orig}",
                row.len()
            )));
        }
    }

    // Split free variables into positive and negative parts.
    let split: Vec<usize> = (0..n_orig).filter(|&j| lp.free[j]).collect();
    let n = n_orig + split.len();
    let m = lp.rows.len();

    let mut cost = Vec::with_capacity(n);
    cost.extend_from_slice(&lp.cost);
    cost.extend(split.iter().map(|&j| -lp.cost[j]));

    // Tableau: structural columns, artificial columns, rhs.
    let width = n + m + 1;
    let mut t: Vec<Vec<f64>> = Vec::with_capacity(m);
    for (r, row) in lp.rows.iter().enumerate() {
        let mut tr = vec![0.0; width];
        let sign = if lp.rhs[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n_orig {
            tr[j] = sign * row[j];
        }
        for (s, &j) in split.iter().enumerate() {
            tr[n_orig + s] = -sign * row[j];
        }
        tr[n + r] = 1.0;
        tr[width - 1] = sign * lp.rhs[r];
        t.push(tr);
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let mut active: Vec<bool> = vec![true; m];

    let pivot = |t: &mut Vec<Vec<f64>>, active: &[bool], r: usize, j: usize| {
        let p = t[r][j];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        for i in 0..t.len() {
            if i != r && active[i] && t[i][j].abs() > 0.0 {
                let f = t[i][j];
                for k in 0..t[i].len() {
                    t[i][k] -= f * t[r][k];
                }
            }
        }
    };

    // Runs Bland's rule for a cost vector over a column range; returns false
    // on unboundedness.
    let run_phase = |t: &mut Vec<Vec<f64>>,
                         basis: &mut Vec<usize>,
                         active: &[bool],
                         phase_cost: &[f64],
                         allowed: usize|
     -> Result<()> {
        let max_iter = 50_000 + 2_000 * (m + n);
        for _ in 0..max_iter {
            // Reduced costs d_j = c_j - c_B . T[., j].
            let mut entering = None;
            for j in 0..allowed {
                if basis.iter().zip(active).any(|(&b, &a)| a && b == j) {
                    continue;
                }
                let mut d = phase_cost[j];
                for (r, &b) in basis.iter().enumerate() {
                    if active[r] {
                        d -= phase_cost[b] * t[r][j];
                    }
                }
                if d < -COST_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return Ok(());
            };
            // Ratio test; Bland tie-break on the basic variable index.
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                if !active[r] || t[r][j] <= PIVOT_TOL {
                    continue;
                }
                let ratio = t[r][width - 1] / t[r][j];
                match leave {
                    None => leave = Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - 1e-12
                            || (ratio < lratio + 1e-12 && basis[r] < basis[lr])
                        {
                            leave = Some((r, ratio));
                        }
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::solver("LP unbounded", f64::INFINITY));
            };
            pivot(t, active, r, j);
            basis[r] = j;
        }
        Err(Error::solver("simplex iteration cap exceeded", f64::NAN))
    };

    // Phase 1: drive out the artificials.
    let mut phase1_cost = vec![0.0; n + m];
    for c in phase1_cost.iter_mut().skip(n) {
        *c = 1.0;
    }
    run_phase(&mut t, &mut basis, &active, &phase1_cost, n + m)?;
    let infeas: f64 = (0..m)
        .filter(|&r| active[r] && basis[r] >= n)
        .map(|r| t[r][width - 1])
        .sum();
    if infeas > 1e-7 {
        return Err(Error::solver("LP infeasible", infeas));
    }
    // Pivot remaining artificials out, or deactivate redundant rows.
    for r in 0..m {
        if basis[r] < n {
            continue;
        }
        let col = (0..n).find(|&j| t[r][j].abs() > PIVOT_TOL);
        match col {
            Some(j) => {
                pivot(&mut t, &active, r, j);
                basis[r] = j;
            }
            None => active[r] = false,
        }
    }

    // Phase 2 on the real objective, artificials barred from entering.
    let mut phase2_cost = vec![0.0; n + m];
    phase2_cost[..n].copy_from_slice(&cost);
    run_phase(&mut t, &mut basis, &active, &phase2_cost, n)?;

    let mut x_full = vec![0.0; n];
    for r in 0..m {
        if active[r] && basis[r] < n {
            x_full[basis[r]] = t[r][width - 1];
        }
    }
    let mut x = x_full[..n_orig].to_vec();
    for (s, &j) in split.iter().enumerate() {
        x[j] -= x_full[n_orig + s];
    }
    let value = lp.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(DenseSolution { value, x })
}

/// Transport program in equality form: variables are the plan entries, the
/// constraints are the row-sum and column-sum marginals.
pub fn ot_lp(source: &[f64], target: &[f64], c: &CostMatrix) -> DenseLp {
    let n = c.n_points();
    let mut cost = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            cost.push(c.at(i, j));
        }
    }
    let mut rows = Vec::with_capacity(2 * n);
    let mut rhs = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut row = vec![0.0; n * n];
        for j in 0..n {
            row[i * n + j] = 1.0;
        }
        rows.push(row);
        rhs.push(source[i]);
    }
    for j in 0..n {
        let mut row = vec![0.0; n * n];
        for i in 0..n {
            row[i * n + j] = 1.0;
        }
        rows.push(row);
        rhs.push(target[j]);
    }
    DenseLp::new(cost, rows, rhs)
}

/// Transport value via the dense simplex.
pub fn ot_value_dense(source: &NonNegMeasure, target: &NonNegMeasure, c: &CostMatrix) -> Result<f64> {
    Ok(solve_dense(&ot_lp(source.weights(), target.weights(), c))?.value)
}

/// Barycenter program in the chained column-sum form: `K` plan blocks,
/// row sums pinned to the input measures, consecutive column sums tied.
pub fn bary_lp(mus: &[ProbMeasure], w: &[f64], c: &CostMatrix) -> DenseLp {
    let n = c.n_points();
    let k = mus.len();
    let nn = n * n;
    let mut cost = Vec::with_capacity(k * nn);
    for wk in w.iter().take(k) {
        for i in 0..n {
            for j in 0..n {
                cost.push(wk * c.at(i, j));
            }
        }
    }
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (block, mu) in mus.iter().enumerate() {
        for i in 0..n {
            let mut row = vec![0.0; k * nn];
            for j in 0..n {
                row[block * nn + i * n + j] = 1.0;
            }
            rows.push(row);
            rhs.push(mu.weights()[i]);
        }
    }
    for block in 0..k - 1 {
        for j in 0..n {
            let mut row = vec![0.0; k * nn];
            for i in 0..n {
                row[block * nn + i * n + j] = 1.0;
                row[(block + 1) * nn + i * n + j] = -1.0;
            }
            rows.push(row);
            rhs.push(0.0);
        }
    }
    DenseLp::new(cost, rows, rhs)
}

/// Barycenter value via the dense simplex.
pub fn bary_value_dense(mus: &[ProbMeasure], w: &[f64], c: &CostMatrix) -> Result<f64> {
    Ok(solve_dense(&bary_lp(mus, w, c))?.value)
}

/// One-sided finite-difference quotient of the signed transport distance,
/// the independent oracle for the dual-face functional.
pub fn face_finite_difference(
    tau: &SignedMeasure,
    h: &SignedMeasure,
    c: &CostMatrix,
    step: f64,
) -> Result<f64> {
    let base = ot::signed_ot(tau, &SignedMeasure::zero(tau.len()), c)?;
    let bumped: Vec<f64> = tau
        .weights()
        .iter()
        .zip(h.weights())
        .map(|(t, d)| t + step * d)
        .collect();
    let bumped = SignedMeasure::new(bumped)?;
    let shifted = ot::signed_ot(&bumped, &SignedMeasure::zero(tau.len()), c)?;
    Ok((shifted - base) / step)
}

/// Outcome of one oracle sweep.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

fn random_masses<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn random_cost<R: Rng>(rng: &mut R, n: usize) -> CostMatrix {
    // Random points on a segment keep the matrix metric.
    let pts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            rows[i][j] = (pts[i] - pts[j]).abs();
            if i != j && rows[i][j] < 1e-3 {
                rows[i][j] = 1e-3;
            }
        }
    }
    // Symmetrize the clamped entries.
    for i in 0..n {
        for j in 0..i {
            let v = rows[i][j].max(rows[j][i]);
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    CostMatrix::from_rows(rows).expect("valid cost")
}

fn random_signed<R: Rng>(rng: &mut R, n: usize) -> SignedMeasure {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    SignedMeasure::new(raw.iter().map(|x| x - mean).collect()).expect("centered")
}

/// Compares the network-simplex transport solver against the dense LP on
/// random balanced instances.
pub fn check_transport<R: Rng>(rng: &mut R, instances: usize, tol: f64) -> Result<OracleReport> {
    let mut report = OracleReport {
        checked: 0,
        max_rel_err: 0.0,
        failures: Vec::new(),
    };
    for trial in 0..instances {
        let n = rng.random_range(2..=8);
        let c = random_cost(rng, n);
        let a = random_masses(rng, n);
        let mut b = random_masses(rng, n);
        let sa: f64 = a.iter().sum();
        let sb: f64 = b.iter().sum();
        for x in &mut b {
            *x *= sa / sb;
        }
        let source = NonNegMeasure::new(a)?;
        let target = NonNegMeasure::new(b)?;
        let sol = ot::solve_ot(&source, &target, &c)?;
        let dense = ot_value_dense(&source, &target, &c)?;
        let err = rel_err(sol.value, dense);
        report.max_rel_err = report.max_rel_err.max(err);
        if err > tol {
            report
                .failures
                .push(format!("transport trial {trial}: {} vs {dense}", sol.value));
        }
        let gap = sol.duality_gap(&source, &target, &c);
        if gap > tol * (1.0 + sol.value.abs()) {
            report
                .failures
                .push(format!("transport trial {trial}: duality gap {gap:.3e}"));
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Compares the barycenter solver against the dense LP on random instances.
pub fn check_barycenter<R: Rng>(rng: &mut R, instances: usize, tol: f64) -> Result<OracleReport> {
    let mut report = OracleReport {
        checked: 0,
        max_rel_err: 0.0,
        failures: Vec::new(),
    };
    for trial in 0..instances {
        let n = rng.random_range(2..=5);
        let k = rng.random_range(2..=4);
        let c = random_cost(rng, n);
        let mus: Vec<ProbMeasure> = (0..k)
            .map(|_| {
                let raw = random_masses(rng, n);
                let total: f64 = raw.iter().sum();
                ProbMeasure::new(raw.iter().map(|x| x / total).collect()).expect("simplex")
            })
            .collect();
        let mut w = random_masses(rng, k);
        let sw: f64 = w.iter().sum();
        for x in &mut w {
            *x /= sw;
        }
        let sol = barycenter::solve_barycenter(&mus, &w, &c)?;
        let dense = bary_value_dense(&mus, &w, &c)?;
        let err = rel_err(sol.value, dense);
        report.max_rel_err = report.max_rel_err.max(err);
        if err > tol {
            report
                .failures
                .push(format!("barycenter trial {trial}: {} vs {dense}", sol.value));
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Compares the dual-face functional against one-sided finite differences.
pub fn check_dual_face<R: Rng>(rng: &mut R, instances: usize, tol: f64) -> Result<OracleReport> {
    let mut report = OracleReport {
        checked: 0,
        max_rel_err: 0.0,
        failures: Vec::new(),
    };
    for trial in 0..instances {
        let n = rng.random_range(2..=5);
        let c = random_cost(rng, n);
        let tau = random_signed(rng, n);
        let h = random_signed(rng, n);
        let exact = ot::dual_face_maximize(&tau, &h, &c)?;
        let mut best = f64::INFINITY;
        for step in [1e-4, 1e-5] {
            let fd = face_finite_difference(&tau, &h, &c, step)?;
            best = if (fd - exact).abs() < best.abs() {
                fd - exact
            } else {
                best
            };
        }
        let err = best.abs();
        report.max_rel_err = report.max_rel_err.max(err);
        if err > tol {
            report.failures.push(format!(
                "dual face trial {trial}: derivative {exact}, finite difference off by {err:.3e}"
            ));
        }
        report.checked += 1;
    }
    Ok(report)
}
