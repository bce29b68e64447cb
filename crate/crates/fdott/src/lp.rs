//! Revised simplex with sparse columns and an explicit dense basis inverse.
//!
//! Backs the generic linear programs of this crate: the chained barycenter
//! program, the dual-face maximization, and the dual-bundle limit
//! functional. Columns carry at most a handful of nonzeros, so pricing and
//! column transforms are cheap; the basis inverse is maintained densely and
//! refactorized periodically.
//!
//! For samplers that solve the same program thousands of times with only
//! the right-hand side changing, [`WarmLp`] keeps the final basis and
//! re-solves with the dual simplex (the old basis stays dual feasible when
//! only `b` moves), falling back to a cold solve on any sign of trouble.

use crate::error::{Error, Result};

const FEAS_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-8;
const REFACTOR_EVERY: usize = 400;

#[derive(Debug, Clone)]
pub(crate) struct Column {
    pub cost: f64,
    pub entries: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub(crate) struct SparseLp {
    pub m: usize,
    pub cols: Vec<Column>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LpOutcome {
    pub value: f64,
    pub x: Vec<f64>,
    /// One dual multiplier per row.
    pub y: Vec<f64>,
}

struct Core {
    m: usize,
    n: usize,
    cols: Vec<Column>,
    rhs_sign: Vec<f64>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    pivots_since_refactor: usize,
}

impl Core {
    fn new(lp: &SparseLp) -> Self {
        let m = lp.m;
        // Artificial column r is +/- e_r so the initial basic point is |b|.
        let rhs_sign: Vec<f64> = lp.rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
        Core {
            m,
            n: lp.cols.len(),
            cols: lp.cols.clone(),
            rhs_sign,
            basis: (lp.cols.len()..lp.cols.len() + m).collect(),
            binv: {
                let mut eye = vec![0.0; m * m];
                for r in 0..m {
                    eye[r * m + r] = if lp.rhs[r] < 0.0 { -1.0 } else { 1.0 };
                }
                eye
            },
            xb: lp.rhs.iter().map(|b| b.abs()).collect(),
            pivots_since_refactor: 0,
        }
    }

    #[inline]
    fn col_entries(&self, j: usize) -> &[(usize, f64)] {
        &self.cols[j].entries
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.n
    }

    /// w = B^-1 A_j.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut w = vec![0.0; m];
        if self.is_artificial(j) {
            let r = j - self.n;
            let s = self.rhs_sign[r];
            for i in 0..m {
                w[i] = s * self.binv[i * m + r];
            }
        } else {
            for &(row, coef) in self.col_entries(j) {
                for i in 0..m {
                    w[i] += coef * self.binv[i * m + row];
                }
            }
        }
        w
    }

    /// y = c_B^T B^-1 for the given per-column cost function.
    fn duals(&self, cost_of: &dyn Fn(usize) -> f64) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &bj) in self.basis.iter().enumerate() {
            let c = cost_of(bj);
            if c != 0.0 {
                for r in 0..m {
                    y[r] += c * self.binv[i * m + r];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64], cost_of: &dyn Fn(usize) -> f64) -> f64 {
        let mut d = cost_of(j);
        if self.is_artificial(j) {
            d -= self.rhs_sign[j - self.n] * y[j - self.n];
        } else {
            for &(row, coef) in self.col_entries(j) {
                d -= coef * y[row];
            }
        }
        d
    }

    fn pivot(&mut self, leave_row: usize, enter: usize, w: &[f64]) {
        let m = self.m;
        let piv = w[leave_row];
        let inv_piv = 1.0 / piv;
        // Row update of the inverse: standard product-form elimination.
        for c in 0..m {
            self.binv[leave_row * m + c] *= inv_piv;
        }
        for r in 0..m {
            if r != leave_row {
                let f = w[r];
                if f != 0.0 {
                    for c in 0..m {
                        self.binv[r * m + c] -= f * self.binv[leave_row * m + c];
                    }
                }
            }
        }
        let theta = self.xb[leave_row].max(0.0) * inv_piv;
        for r in 0..m {
            if r != leave_row {
                self.xb[r] -= theta * w[r];
            }
        }
        self.xb[leave_row] = theta;
        self.basis[leave_row] = enter;
        self.pivots_since_refactor += 1;
    }

    /// Rebuilds the inverse from scratch by Gauss-Jordan with partial
    /// pivoting, then refreshes the basic point.
    fn refactor(&mut self, rhs: &[f64]) -> Result<()> {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        for (i, &j) in self.basis.iter().enumerate() {
            if self.is_artificial(j) {
                let r = j - self.n;
                b[r * m + i] = self.rhs_sign[r];
            } else {
                for &(row, coef) in self.col_entries(j) {
                    b[row * m + i] = coef;
                }
            }
        }
        let mut inv = vec![0.0; m * m];
        for r in 0..m {
            inv[r * m + r] = 1.0;
        }
        for col in 0..m {
            let mut best = col;
            for r in col + 1..m {
                if b[r * m + col].abs() > b[best * m + col].abs() {
                    best = r;
                }
            }
            if b[best * m + col].abs() < 1e-12 {
                return Err(Error::solver("singular basis during refactorization", f64::NAN));
            }
            if best != col {
                for c in 0..m {
                    b.swap(col * m + c, best * m + c);
                    inv.swap(col * m + c, best * m + c);
                }
            }
            let piv = b[col * m + col];
            for c in 0..m {
                b[col * m + c] /= piv;
                inv[col * m + c] /= piv;
            }
            for r in 0..m {
                if r != col {
                    let f = b[r * m + col];
                    if f != 0.0 {
                        for c in 0..m {
                            b[r * m + c] -= f * b[col * m + c];
                            inv[r * m + c] -= f * inv[col * m + c];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        self.set_rhs(rhs);
        self.pivots_since_refactor = 0;
        Ok(())
    }

    fn set_rhs(&mut self, rhs: &[f64]) {
        let m = self.m;
        for r in 0..m {
            let mut v = 0.0;
            for c in 0..m {
                v += self.binv[r * m + c] * rhs[c];
            }
            self.xb[r] = v;
        }
    }

    /// Primal simplex over the allowed columns. `cost_of` defines the phase
    /// objective; artificial columns never enter.
    fn primal(&mut self, rhs: &[f64], cost_of: &dyn Fn(usize) -> f64) -> Result<()> {
        let max_iter = 20_000 + 60 * (self.m + self.n);
        let bland_after = max_iter / 2;
        let mut in_basis = vec![false; self.n + self.m];
        for &b in &self.basis {
            in_basis[b] = true;
        }
        for iter in 0..max_iter {
            if self.pivots_since_refactor >= REFACTOR_EVERY {
                self.refactor(rhs)?;
            }
            let bland = iter >= bland_after;
            let y = self.duals(cost_of);
            let mut enter: Option<(usize, f64)> = None;
            for j in 0..self.n {
                if in_basis[j] {
                    continue;
                }
                let d = self.reduced_cost(j, &y, cost_of);
                if d < -COST_TOL {
                    match enter {
                        None => enter = Some((j, d)),
                        Some((_, bd)) if d < bd => enter = Some((j, d)),
                        _ => {}
                    }
                    if bland {
                        break;
                    }
                }
            }
            let Some((j, _)) = enter else {
                return Ok(());
            };
            let w = self.ftran(j);
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                if w[r] > PIVOT_TOL {
                    let ratio = self.xb[r].max(0.0) / w[r];
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12
                                || ((ratio - lratio).abs() <= 1e-12
                                    && self.basis[r] < self.basis[lr])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::solver("LP unbounded", f64::INFINITY));
            };
            in_basis[self.basis[r]] = false;
            in_basis[j] = true;
            self.pivot(r, j, &w);
        }
        Err(Error::solver("revised simplex iteration cap exceeded", f64::NAN))
    }
}

fn extract(core: &Core, lp: &SparseLp) -> LpOutcome {
    let cost_of = |j: usize| if j < core.n { lp.cols[j].cost } else { 0.0 };
    let y = core.duals(&cost_of);
    let mut x = vec![0.0; core.n];
    for (r, &j) in core.basis.iter().enumerate() {
        if j < core.n {
            x[j] = core.xb[r].max(0.0);
        }
    }
    let value = lp.cols.iter().zip(&x).map(|(c, v)| c.cost * v).sum();
    LpOutcome { value, x, y }
}

fn cold_solve_core(lp: &SparseLp) -> Result<Core> {
    let mut core = Core::new(lp);
    // Phase 1: minimize the artificial mass.
    let n = core.n;
    core.primal(&lp.rhs, &|j| if j >= n { 1.0 } else { 0.0 })?;
    let infeas: f64 = core
        .basis
        .iter()
        .zip(&core.xb)
        .filter(|(&j, _)| j >= n)
        .map(|(_, &v)| v.max(0.0))
        .sum();
    if infeas > 1e-7 {
        return Err(Error::solver("LP infeasible", infeas));
    }
    // Force remaining artificials out where possible; rows that resist are
    // redundant and their artificials stay pinned at zero.
    for r in 0..core.m {
        if core.basis[r] < n {
            continue;
        }
        let m = core.m;
        let mut entered = None;
        for j in 0..n {
            if core.basis.contains(&j) {
                continue;
            }
            let mut alpha = 0.0;
            for &(row, coef) in core.col_entries(j) {
                alpha += coef * core.binv[r * m + row];
            }
            if alpha.abs() > PIVOT_TOL {
                entered = Some(j);
                break;
            }
        }
        if let Some(j) = entered {
            let w = core.ftran(j);
            core.pivot(r, j, &w);
        }
    }
    // Phase 2.
    let cols = lp.cols.clone();
    core.primal(&lp.rhs, &move |j| if j < cols.len() { cols[j].cost } else { 0.0 })?;
    Ok(core)
}

/// One-shot solve.
pub(crate) fn solve(lp: &SparseLp) -> Result<LpOutcome> {
    let core = cold_solve_core(lp)?;
    Ok(extract(&core, lp))
}

/// Factorized program for repeated solves that differ only in the
/// right-hand side.
pub(crate) struct WarmLp {
    lp: SparseLp,
    core: Option<Core>,
}

impl WarmLp {
    pub fn new(lp: SparseLp) -> Self {
        WarmLp { lp, core: None }
    }

    pub fn resolve(&mut self, rhs: &[f64]) -> Result<LpOutcome> {
        if rhs.len() != self.lp.m {
            return Err(Error::dim(format!(
                "rhs has {} rows, expected {}",
                rhs.len(),
                self.lp.m
            )));
        }
        self.lp.rhs = rhs.to_vec();
        if let Some(core) = self.core.as_mut() {
            core.set_rhs(rhs);
            match Self::dual_simplex(core, &self.lp) {
                Ok(()) => return Ok(extract(core, &self.lp)),
                Err(_) => {
                    // Warm path failed; drop the basis and resolve cold.
                    self.core = None;
                }
            }
        }
        let core = cold_solve_core(&self.lp)?;
        let out = extract(&core, &self.lp);
        self.core = Some(core);
        Ok(out)
    }

    /// Dual simplex from the stored (dual-feasible) basis. Costs are
    /// unchanged between resolves, so reduced costs stay nonnegative and
    /// only primal feasibility has to be restored. Reduced costs are
    /// maintained incrementally from the pivot row and refreshed on
    /// refactorization.
    fn dual_simplex(core: &mut Core, lp: &SparseLp) -> Result<()> {
        let n = core.n;
        let m = core.m;
        let cols = &lp.cols;
        let cost_of = move |j: usize| if j < cols.len() { cols[j].cost } else { 0.0 };
        let mut in_basis = vec![false; n + m];
        for &b in &core.basis {
            in_basis[b] = true;
        }
        let mut d: Vec<f64> = {
            let y = core.duals(&cost_of);
            (0..n)
                .map(|j| core.reduced_cost(j, &y, &cost_of).max(0.0))
                .collect()
        };
        let mut alpha = vec![0.0f64; n];
        let max_iter = 6 * m + 400;
        for _ in 0..max_iter {
            if core.pivots_since_refactor >= REFACTOR_EVERY {
                core.refactor(&lp.rhs)?;
                let y = core.duals(&cost_of);
                for j in 0..n {
                    d[j] = core.reduced_cost(j, &y, &cost_of).max(0.0);
                }
            }
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                if core.xb[r] < -FEAS_TOL {
                    match leave {
                        None => leave = Some((r, core.xb[r])),
                        Some((_, lv)) if core.xb[r] < lv => leave = Some((r, core.xb[r])),
                        _ => {}
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Ok(());
            };
            // Pivot row over the structural columns; entering by the dual
            // ratio test.
            let brow = &core.binv[r * m..(r + 1) * m];
            let mut enter: Option<(usize, f64)> = None;
            for (j, column) in lp.cols.iter().enumerate() {
                if in_basis[j] {
                    alpha[j] = 0.0;
                    continue;
                }
                let mut a = 0.0;
                for &(row, coef) in &column.entries {
                    a += coef * brow[row];
                }
                alpha[j] = a;
                if a < -PIVOT_TOL {
                    let ratio = d[j] / -a;
                    match enter {
                        None => enter = Some((j, ratio)),
                        Some((_, best)) if ratio < best => enter = Some((j, ratio)),
                        _ => {}
                    }
                }
            }
            let Some((q, _)) = enter else {
                return Err(Error::solver("dual simplex found no entering column", f64::NAN));
            };
            let w = core.ftran(q);
            if w[r].abs() < PIVOT_TOL * 0.1 {
                return Err(Error::solver("dual simplex pivot too small", w[r]));
            }
            // Dual pivot: the leaving basic is negative, so theta =
            // xb[r]/w[r] (negative over negative) lands on a nonnegative
            // point.
            let theta = core.xb[r] / w[r];
            if !(0.0..=1e12).contains(&theta.abs()) {
                return Err(Error::solver("dual simplex step out of range", theta));
            }
            // Reduced-cost update from the pivot row.
            let leaving = core.basis[r];
            let step = d[q] / w[r];
            for j in 0..n {
                if !in_basis[j] && alpha[j] != 0.0 {
                    d[j] = (d[j] - step * alpha[j]).max(0.0);
                }
            }
            if leaving < n {
                d[leaving] = (-step).max(0.0);
            }
            d[q] = 0.0;

            let inv_piv = 1.0 / w[r];
            for c in 0..m {
                core.binv[r * m + c] *= inv_piv;
            }
            for row in 0..m {
                if row != r {
                    let f = w[row];
                    if f != 0.0 {
                        for c in 0..m {
                            core.binv[row * m + c] -= f * core.binv[r * m + c];
                        }
                    }
                }
            }
            for row in 0..m {
                if row != r {
                    core.xb[row] -= theta * w[row];
                }
            }
            core.xb[r] = theta;
            in_basis[leaving] = false;
            in_basis[q] = true;
            core.basis[r] = q;
            core.pivots_since_refactor += 1;
        }
        Err(Error::solver("dual simplex iteration cap exceeded", f64::NAN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn col(cost: f64, entries: &[(usize, f64)]) -> Column {
        Column {
            cost,
            entries: entries.to_vec(),
        }
    }

    #[test]
    fn solves_small_lp_with_duals() {
        // min -x - 2y  s.t.  x + y + s = 4, x + 3y + t = 6.
        let lp = SparseLp {
            m: 2,
            cols: vec![
                col(-1.0, &[(0, 1.0), (1, 1.0)]),
                col(-2.0, &[(0, 1.0), (1, 3.0)]),
                col(0.0, &[(0, 1.0)]),
                col(0.0, &[(1, 1.0)]),
            ],
            rhs: vec![4.0, 6.0],
        };
        let out = solve(&lp).unwrap();
        assert!((out.value - -5.0).abs() < 1e-9);
        // Dual values for the two rows: y = (-1/2, -1/2).
        assert!((out.y[0] - -0.5).abs() < 1e-9);
        assert!((out.y[1] - -0.5).abs() < 1e-9);
    }

    #[test]
    fn agrees_with_dense_oracle_on_random_transport() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let n = rng.random_range(2..=6);
            let pts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
            for x in &mut b {
                *x *= sa / sb;
            }
            // Equality-form transport, one redundant row kept on purpose.
            let mut cols = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    cols.push(col(
                        (pts[i] - pts[j]).abs(),
                        &[(i, 1.0), (n + j, 1.0)],
                    ));
                }
            }
            let mut rhs = a.clone();
            rhs.extend_from_slice(&b);
            let lp = SparseLp { m: 2 * n, cols, rhs };
            let out = solve(&lp).unwrap();

            let mut dense_rows = vec![vec![0.0; lp.cols.len()]; 2 * n];
            for (j, column) in lp.cols.iter().enumerate() {
                for &(r, v) in &column.entries {
                    dense_rows[r][j] = v;
                }
            }
            let dense = crate::oracle::solve_dense(&crate::oracle::DenseLp::new(
                lp.cols.iter().map(|c| c.cost).collect(),
                dense_rows,
                lp.rhs.clone(),
            ))
            .unwrap();
            assert!(
                (out.value - dense.value).abs() <= 1e-9 * (1.0 + dense.value.abs()),
                "revised {} vs dense {}",
                out.value,
                dense.value
            );
        }
    }

    #[test]
    fn warm_resolves_match_cold_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 5;
        let pts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let mut cols = Vec::new();
        for i in 0..n {
            for j in 0..n {
                cols.push(col((pts[i] - pts[j]).abs(), &[(i, 1.0), (n + j, 1.0)]));
            }
        }
        let lp = SparseLp {
            m: 2 * n,
            cols,
            rhs: vec![0.0; 2 * n],
        };
        let mut warm = WarmLp::new(lp.clone());
        for _ in 0..40 {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
            for x in &mut b {
                *x *= sa / sb;
            }
            let mut rhs = a;
            rhs.extend_from_slice(&b);
            let warm_out = warm.resolve(&rhs).unwrap();
            let mut cold_lp = lp.clone();
            cold_lp.rhs = rhs;
            let cold_out = solve(&cold_lp).unwrap();
            assert!(
                (warm_out.value - cold_out.value).abs() <= 1e-8 * (1.0 + cold_out.value.abs()),
                "warm {} cold {}",
                warm_out.value,
                cold_out.value
            );
        }
    }
}
