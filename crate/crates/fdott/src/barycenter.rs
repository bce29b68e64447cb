//! Fixed-support OT barycenter program and its dual-bundle limit
//! functional.
//!
//! The program is the chained column-sum form: `K` plan blocks with row
//! sums pinned to the inputs and consecutive column sums tied together, so
//! the dual variables match the bundle polytope index-for-index
//! (`u^k ⊕ (v^k - v^{k-1}) <= w_k c`, `v^0 = v^K = 0`). One column-sum
//! constraint per chain link is dropped to keep the rows independent.

use crate::error::{Error, Result};
use crate::lp::{Column, SparseLp, WarmLp};
use crate::measures::{CostMatrix, ProbMeasure, SignedMeasure, SquareMat};
use crate::{lp, ot};

/// Primal-dual certificate of one barycenter solve.
#[derive(Debug, Clone)]
pub struct BarycenterSolution {
    pub value: f64,
    pub center: ProbMeasure,
    pub plans: Vec<SquareMat>,
    pub duals_u: Vec<Vec<f64>>,
    pub duals_v: Vec<Vec<f64>>,
}

impl BarycenterSolution {
    /// Largest violation among marginal chaining, dual feasibility, and
    /// strong duality (scaled).
    pub fn max_residual(&self, mus: &[ProbMeasure], w: &[f64], c: &CostMatrix) -> f64 {
        let n = c.n_points();
        let k = mus.len();
        let mut res: f64 = 0.0;
        for (block, mu) in mus.iter().enumerate() {
            let rows = self.plans[block].row_sums();
            for i in 0..n {
                res = res.max((rows[i] - mu.weights()[i]).abs());
            }
        }
        let center_cols = self.plans[0].col_sums();
        for plan in &self.plans {
            let cols = plan.col_sums();
            for j in 0..n {
                res = res.max((cols[j] - center_cols[j]).abs());
                res = res.max((cols[j] - self.center.weights()[j]).abs());
            }
        }
        let zero = vec![0.0; n];
        for block in 0..k {
            let v_prev: &[f64] = if block == 0 {
                &zero
            } else {
                &self.duals_v[block - 1]
            };
            let v_cur: &[f64] = if block + 1 == k {
                &zero
            } else {
                &self.duals_v[block]
            };
            for i in 0..n {
                for j in 0..n {
                    let lhs = self.duals_u[block][i] + v_cur[j] - v_prev[j];
                    res = res.max(lhs - w[block] * c.at(i, j));
                }
            }
        }
        let dual_value: f64 = mus
            .iter()
            .zip(&self.duals_u)
            .map(|(mu, u)| mu.weights().iter().zip(u).map(|(m, ui)| m * ui).sum::<f64>())
            .sum();
        res.max((dual_value - self.value).abs() / (1.0 + self.value.abs()))
    }
}

fn validate_weights(w: &[f64], k: usize) -> Result<Vec<f64>> {
    if w.len() != k {
        return Err(Error::dim(format!("{} weights for {} measures", w.len(), k)));
    }
    if w.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::invalid("barycenter weights must be positive"));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
    }
    Ok(w.iter().map(|x| x / total).collect())
}

/// Row layout shared by the barycenter program and the bundle functionals:
/// `K*N` row-sum rows followed by `(K-1)*(N-1)` chain rows (the last
/// coordinate of each link is dropped as redundant).
fn chain_row(k_groups: usize, n: usize, link: usize, j: usize) -> Option<usize> {
    let _ = k_groups;
    (j + 1 < n).then(|| link * (n - 1) + j)
}

fn plan_column_entries(k_groups: usize, n: usize, block: usize, i: usize, j: usize) -> Vec<(usize, f64)> {
    let chain_base = k_groups * n;
    let mut entries = vec![(block * n + i, 1.0)];
    if block + 1 < k_groups {
        if let Some(r) = chain_row(k_groups, n, block, j) {
            entries.push((chain_base + r, 1.0));
        }
    }
    if block > 0 {
        if let Some(r) = chain_row(k_groups, n, block - 1, j) {
            entries.push((chain_base + r, -1.0));
        }
    }
    entries
}

fn bary_sparse_lp(n: usize, k: usize, w: &[f64], c: &CostMatrix, rhs: Vec<f64>) -> SparseLp {
    let mut cols = Vec::with_capacity(k * n * n);
    for block in 0..k {
        for i in 0..n {
            for j in 0..n {
                cols.push(Column {
                    cost: w[block] * c.at(i, j),
                    entries: plan_column_entries(k, n, block, i, j),
                });
            }
        }
    }
    SparseLp {
        m: k * n + (k - 1) * (n - 1),
        cols,
        rhs,
    }
}

/// Minimizes `sum_k w_k OT(mu^k, center)` over centers; the optimal value,
/// plans, and dual bundle are all returned.
pub fn solve_barycenter(
    mus: &[ProbMeasure],
    w: &[f64],
    c: &CostMatrix,
) -> Result<BarycenterSolution> {
    let k = mus.len();
    if k < 2 {
        return Err(Error::invalid("barycenter needs at least two measures"));
    }
    c.require_identifiable()?;
    let n = c.n_points();
    for (idx, mu) in mus.iter().enumerate() {
        if mu.len() != n {
            return Err(Error::dim(format!(
                "measure {idx} has {} points, cost has {n}",
                mu.len()
            )));
        }
    }
    let w = validate_weights(w, k)?;

    let mut rhs = Vec::with_capacity(k * n + (k - 1) * (n - 1));
    for mu in mus {
        rhs.extend_from_slice(mu.weights());
    }
    rhs.resize(k * n + (k - 1) * (n - 1), 0.0);
    let out = lp::solve(&bary_sparse_lp(n, k, &w, c, rhs))?;

    let mut plans = Vec::with_capacity(k);
    for block in 0..k {
        let mut plan = SquareMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                *plan.at_mut(i, j) = out.x[block * n * n + i * n + j].max(0.0);
            }
        }
        plans.push(plan);
    }
    let duals_u: Vec<Vec<f64>> = (0..k).map(|b| out.y[b * n..(b + 1) * n].to_vec()).collect();
    let chain_base = k * n;
    let duals_v: Vec<Vec<f64>> = (0..k - 1)
        .map(|link| {
            let mut v = vec![0.0; n];
            for j in 0..n - 1 {
                v[j] = out.y[chain_base + link * (n - 1) + j];
            }
            v
        })
        .collect();
    let center = ProbMeasure::new(plans[0].col_sums())?;
    Ok(BarycenterSolution {
        value: out.value,
        center,
        plans,
        duals_u,
        duals_v,
    })
}

/// Reusable solver for the simplified (null) bundle functional
/// `max { sum_k <u^k, h^k> : sum_k u^k = 0, u^k ⊕ (v^k - v^{k-1}) <= w_k c }`,
/// evaluated via its dual: a chained transport program whose row sums are
/// `h^k` shifted by a shared free vector.
pub(crate) struct PsiNullSolver {
    warm: WarmLp,
    n: usize,
    k: usize,
}

impl PsiNullSolver {
    pub fn new(k: usize, w: &[f64], c: &CostMatrix) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("bundle functional needs at least two groups"));
        }
        c.require_identifiable()?;
        let w = validate_weights(w, k)?;
        let n = c.n_points();
        let mut lp = bary_sparse_lp(n, k, &w, c, vec![0.0; k * n + (k - 1) * (n - 1)]);
        // Shared shift: z_i enters every block's row i; free, so split.
        for i in 0..n {
            let entries: Vec<(usize, f64)> = (0..k).map(|block| (block * n + i, 1.0)).collect();
            lp.cols.push(Column {
                cost: 0.0,
                entries: entries.clone(),
            });
            lp.cols.push(Column {
                cost: 0.0,
                entries: entries.into_iter().map(|(r, v)| (r, -v)).collect(),
            });
        }
        Ok(PsiNullSolver {
            warm: WarmLp::new(lp),
            n,
            k,
        })
    }

    /// Value of the functional for one direction bundle (rows of length N
    /// summing to zero).
    pub fn value(&mut self, h: &[Vec<f64>]) -> Result<f64> {
        if h.len() != self.k {
            return Err(Error::dim(format!(
                "{} direction rows for {} groups",
                h.len(),
                self.k
            )));
        }
        let mut rhs = Vec::with_capacity(self.k * self.n + (self.k - 1) * (self.n - 1));
        for row in h {
            if row.len() != self.n {
                return Err(Error::dim(format!(
                    "direction row has {} points, expected {}",
                    row.len(),
                    self.n
                )));
            }
            rhs.extend_from_slice(row);
        }
        rhs.resize(self.k * self.n + (self.k - 1) * (self.n - 1), 0.0);
        Ok(self.warm.resolve(&rhs)?.value)
    }
}

/// Reusable solver for the bundle functional at a fixed base `mus` under
/// the alternative: the bundle is pinned to the dual-optimal face by
/// complementary slackness against the solved plans. The dual program is
/// the same chained transport with the direction rows as marginals and the
/// support arcs free in sign.
pub(crate) struct PsiFaceSolver {
    warm: WarmLp,
    n: usize,
    k: usize,
}

impl PsiFaceSolver {
    pub fn new(mus: &[ProbMeasure], w: &[f64], c: &CostMatrix) -> Result<Self> {
        let k = mus.len();
        let n = c.n_points();
        let base = solve_barycenter(mus, w, c)?;
        let w = validate_weights(w, k)?;
        let supp_tol = 1e-11;
        let mut cols = Vec::new();
        for block in 0..k {
            for i in 0..n {
                for j in 0..n {
                    let entries = plan_column_entries(k, n, block, i, j);
                    let cost = w[block] * c.at(i, j);
                    cols.push(Column {
                        cost,
                        entries: entries.clone(),
                    });
                    if base.plans[block].at(i, j) > supp_tol {
                        cols.push(Column {
                            cost: -cost,
                            entries: entries.into_iter().map(|(r, v)| (r, -v)).collect(),
                        });
                    }
                }
            }
        }
        Ok(PsiFaceSolver {
            warm: WarmLp::new(SparseLp {
                m: k * n + (k - 1) * (n - 1),
                cols,
                rhs: vec![0.0; k * n + (k - 1) * (n - 1)],
            }),
            n,
            k,
        })
    }

    pub fn value(&mut self, h: &[Vec<f64>]) -> Result<f64> {
        if h.len() != self.k {
            return Err(Error::dim(format!(
                "{} direction rows for {} groups",
                h.len(),
                self.k
            )));
        }
        let mut rhs = Vec::with_capacity(self.k * self.n + (self.k - 1) * (self.n - 1));
        for row in h {
            rhs.extend_from_slice(row);
        }
        rhs.resize(self.k * self.n + (self.k - 1) * (self.n - 1), 0.0);
        Ok(self.warm.resolve(&rhs)?.value)
    }
}

/// Maximizes `sum_k <u^k, h^k>` over the dual bundle of the barycenter
/// program at `mus`.
///
/// Under `assume_null` the measures must all be equal with full support and
/// the bundle simplifies to a polytope independent of the common measure;
/// otherwise the bundle is pinned to the optimal face by complementary
/// slackness against the solved plans.
pub fn psi_limit_functional(
    h: &[SignedMeasure],
    mus: &[ProbMeasure],
    w: &[f64],
    c: &CostMatrix,
    assume_null: bool,
) -> Result<f64> {
    let k = mus.len();
    if h.len() != k {
        return Err(Error::dim(format!(
            "{} direction rows for {} measures",
            h.len(),
            k
        )));
    }
    let n = c.n_points();
    for row in h {
        if row.len() != n {
            return Err(Error::dim("direction row length mismatch"));
        }
    }
    let rows: Vec<Vec<f64>> = h.iter().map(|r| r.weights().to_vec()).collect();
    if assume_null {
        for (idx, mu) in mus.iter().enumerate().skip(1) {
            let diff = mu
                .weights()
                .iter()
                .zip(mus[0].weights())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if diff > 1e-8 {
                return Err(Error::invalid(format!(
                    "assume_null requires equal measures; group {idx} differs by {diff:.3e}"
                )));
            }
        }
        if let Some(i) = mus[0].weights().iter().position(|&x| x <= 0.0) {
            return Err(Error::SupportMismatch(i));
        }
        let mut solver = PsiNullSolver::new(k, w, c)?;
        solver.value(&rows)
    } else {
        PsiFaceSolver::new(mus, w, c)?.value(&rows)
    }
}

/// Mean pairwise transport distance over ordered pairs,
/// `(1/K^2) sum_{i,j} OT(mu^i, mu^j)`; the barycenter value at uniform
/// weights sits between half of this and all of it.
pub fn mean_pairwise_ot(mus: &[ProbMeasure], c: &CostMatrix) -> Result<f64> {
    let k = mus.len();
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let d = SignedMeasure::difference(&mus[i], &mus[j])?;
            total += ot::signed_ot_to_zero(&d, c)?;
        }
    }
    Ok(2.0 * total / (k * k) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::grid_euclidean_cost;
    use crate::oracle;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_prob<R: Rng>(rng: &mut R, n: usize) -> ProbMeasure {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        ProbMeasure::new(raw.iter().map(|x| x / total).collect()).unwrap()
    }

    fn random_signed_row<R: Rng>(rng: &mut R, n: usize) -> SignedMeasure {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        SignedMeasure::new(raw.iter().map(|x| x - mean).collect()).unwrap()
    }

    #[test]
    fn equal_measures_have_zero_barycenter_value() {
        let c = grid_euclidean_cost(2, 2).unwrap();
        let mu = ProbMeasure::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let sol = solve_barycenter(&[mu.clone(), mu.clone(), mu.clone()], &[1.0 / 3.0; 3], &c)
            .unwrap();
        assert!(sol.value.abs() < 1e-10);
        for (a, b) in sol.center.weights().iter().zip(mu.weights()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn two_measures_with_uniform_weights_give_half_the_distance() {
        let c = grid_euclidean_cost(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..15 {
            let a = random_prob(&mut rng, 4);
            let b = random_prob(&mut rng, 4);
            let sol = solve_barycenter(&[a.clone(), b.clone()], &[0.5, 0.5], &c).unwrap();
            let d = SignedMeasure::difference(&a, &b).unwrap();
            let dist = ot::signed_ot_to_zero(&d, &c).unwrap();
            assert!(
                (sol.value - dist / 2.0).abs() <= 1e-9,
                "{} vs {}",
                sol.value,
                dist / 2.0
            );
        }
    }

    #[test]
    fn random_instances_match_dense_oracle_and_certify() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..25 {
            let n = rng.random_range(2..=5);
            let k = rng.random_range(2..=4);
            let c = grid_euclidean_cost(n, 1).unwrap();
            let mus: Vec<ProbMeasure> = (0..k).map(|_| random_prob(&mut rng, n)).collect();
            let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = w.iter().sum();
            for x in &mut w {
                *x /= total;
            }
            let sol = solve_barycenter(&mus, &w, &c).unwrap();
            let dense = oracle::bary_value_dense(&mus, &w, &c).unwrap();
            assert!(
                (sol.value - dense).abs() <= 1e-9 * (1.0 + dense.abs()),
                "{} vs {dense}",
                sol.value
            );
            assert!(sol.max_residual(&mus, &w, &c) <= 1e-8);
        }
    }

    #[test]
    fn value_is_invariant_under_group_relabeling() {
        let c = grid_euclidean_cost(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mus: Vec<ProbMeasure> = (0..3).map(|_| random_prob(&mut rng, 4)).collect();
        let w = [0.5, 0.3, 0.2];
        let sol = solve_barycenter(&mus, &w, &c).unwrap();
        let permuted = vec![mus[2].clone(), mus[0].clone(), mus[1].clone()];
        let wp = [0.2, 0.5, 0.3];
        let sol_p = solve_barycenter(&permuted, &wp, &c).unwrap();
        assert!((sol.value - sol_p.value).abs() <= 1e-9);
    }

    #[test]
    fn sandwich_between_half_and_full_pairwise_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..20 {
            let n = rng.random_range(2..=6);
            let k = rng.random_range(2..=5);
            let c = grid_euclidean_cost(n, 1).unwrap();
            let mus: Vec<ProbMeasure> = (0..k).map(|_| random_prob(&mut rng, n)).collect();
            let w = vec![1.0 / k as f64; k];
            let b = solve_barycenter(&mus, &w, &c).unwrap().value;
            let dbar = mean_pairwise_ot(&mus, &c).unwrap();
            assert!(dbar / 2.0 <= b + 1e-9, "lower bound broken: {b} < {}", dbar / 2.0);
            assert!(b <= dbar + 1e-9, "upper bound broken: {b} > {dbar}");
        }
    }

    #[test]
    fn null_functional_matches_scaled_signed_distance_for_two_groups() {
        // At two groups with equal weights the bundle maximization reduces
        // to half the signed distance of the row difference.
        let c = grid_euclidean_cost(2, 2).unwrap();
        let mu = ProbMeasure::uniform(4);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..15 {
            let h1 = random_signed_row(&mut rng, 4);
            let h2 = random_signed_row(&mut rng, 4);
            let value = psi_limit_functional(
                &[h1.clone(), h2.clone()],
                &[mu.clone(), mu.clone()],
                &[0.5, 0.5],
                &c,
                true,
            )
            .unwrap();
            let diff = SignedMeasure::new(
                h1.weights()
                    .iter()
                    .zip(h2.weights())
                    .map(|(a, b)| a - b)
                    .collect(),
            )
            .unwrap();
            let expected = ot::signed_ot_to_zero(&diff, &c).unwrap() / 2.0;
            assert!((value - expected).abs() <= 1e-9, "{value} vs {expected}");
        }
    }

    #[test]
    fn null_functional_is_homogeneous_and_zero_at_zero() {
        let c = grid_euclidean_cost(2, 2).unwrap();
        let mu = ProbMeasure::uniform(4);
        let mus = vec![mu.clone(), mu.clone(), mu.clone()];
        let w = vec![1.0 / 3.0; 3];
        let zero = vec![SignedMeasure::zero(4); 3];
        assert_eq!(
            psi_limit_functional(&zero, &mus, &w, &c, true).unwrap(),
            0.0
        );
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let h: Vec<SignedMeasure> = (0..3).map(|_| random_signed_row(&mut rng, 4)).collect();
        let one = psi_limit_functional(&h, &mus, &w, &c, true).unwrap();
        let doubled: Vec<SignedMeasure> = h.iter().map(|r| r.scaled(2.0)).collect();
        let two = psi_limit_functional(&doubled, &mus, &w, &c, true).unwrap();
        assert!((two - 2.0 * one).abs() <= 1e-9 * (1.0 + one.abs()));
        assert!(one >= -1e-12);
    }

    #[test]
    fn null_functional_requires_full_support() {
        let c = grid_euclidean_cost(2, 1).unwrap();
        let mu = ProbMeasure::new(vec![1.0, 0.0]).unwrap();
        let h = vec![SignedMeasure::zero(2); 2];
        let r = psi_limit_functional(&h, &[mu.clone(), mu], &[0.5, 0.5], &c, true);
        assert!(matches!(r, Err(Error::SupportMismatch(1))));
    }

    #[test]
    fn alternative_functional_agrees_with_null_at_equal_measures() {
        // With all measures equal, complementary slackness against the
        // diagonal plans yields the same face as the simplified polytope on
        // directions supported everywhere.
        let c = grid_euclidean_cost(2, 2).unwrap();
        let mu = ProbMeasure::uniform(4);
        let mus = vec![mu.clone(), mu.clone()];
        let w = vec![0.5, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..10 {
            let h: Vec<SignedMeasure> = (0..2).map(|_| random_signed_row(&mut rng, 4)).collect();
            let null = psi_limit_functional(&h, &mus, &w, &c, true).unwrap();
            let alt = psi_limit_functional(&h, &mus, &w, &c, false).unwrap();
            assert!((null - alt).abs() <= 1e-8, "{null} vs {alt}");
        }
    }

    #[test]
    fn warm_solver_matches_one_shot_functional() {
        let c = grid_euclidean_cost(2, 2).unwrap();
        let mu = ProbMeasure::uniform(4);
        let mus = vec![mu.clone(), mu.clone(), mu.clone()];
        let w = vec![1.0 / 3.0; 3];
        let mut solver = PsiNullSolver::new(3, &w, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..25 {
            let h: Vec<SignedMeasure> = (0..3).map(|_| random_signed_row(&mut rng, 4)).collect();
            let rows: Vec<Vec<f64>> = h.iter().map(|r| r.weights().to_vec()).collect();
            let warm = solver.value(&rows).unwrap();
            let one_shot = psi_limit_functional(&h, &mus, &w, &c, true).unwrap();
            assert!(
                (warm - one_shot).abs() <= 1e-8 * (1.0 + one_shot.abs()),
                "{warm} vs {one_shot}"
            );
        }
    }
}
