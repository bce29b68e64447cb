//! Ground costs, measures, and covariance primitives.
//!
//! Points of the ground space are abstract indices `0..N`; any geometry
//! enters only through the cost matrix. Mass-balance checks use
//! `TOL_MASS = 1e-9`; constructors repair inputs within `1e-6` of the target
//! mass (float noise from upstream arithmetic) and reject anything further
//! off (user error).

use crate::error::{Error, Result};

/// Mass-balance tolerance for all measure invariants.
pub const TOL_MASS: f64 = 1e-9;

/// Inputs within this distance of the target mass are renormalized.
const RENORM_TOL: f64 = 1e-6;

/// Dense square matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMat {
    n: usize,
    data: Vec<f64>,
}

impl SquareMat {
    pub fn zeros(n: usize) -> Self {
        SquareMat {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in &rows {
            if row.len() != n {
                return Err(Error::dim(format!(
                    "matrix row has {} entries, expected {}",
                    row.len(),
                    n
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(SquareMat { n, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Row sums.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Column sums.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                out[j] += self.at(i, j);
            }
        }
        out
    }
}

/// Ground costs between the `N` points of the space, with cached
/// identifiability and metric flags.
///
/// `is_identifiable` means `c >= 0` with `c[i][j] = 0` exactly when `i = j`;
/// this is what the transport functionals need to separate distinct
/// measures. `is_metric` additionally requires symmetry and the triangle
/// inequality, which is what reduces the pairwise signed-transport distance
/// to the plain transport distance between probability measures.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    costs: SquareMat,
    is_metric: bool,
    is_identifiable: bool,
}

impl CostMatrix {
    /// Validates entries and classifies the matrix. O(N^3) for the triangle
    /// scan, run once here and cached.
    pub fn new(costs: SquareMat) -> Result<Self> {
        let n = costs.n();
        if n == 0 {
            return Err(Error::invalid("cost matrix must have at least one point"));
        }
        let mut scale: f64 = 0.0;
        for (k, &c) in costs.data().iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::invalid(format!(
                    "cost[{}][{}] is not finite",
                    k / n,
                    k % n
                )));
            }
            if c < 0.0 {
                return Err(Error::invalid(format!(
                    "cost[{}][{}] = {} is negative",
                    k / n,
                    k % n,
                    c
                )));
            }
            scale = scale.max(c);
        }
        let zero_tol = 1e-12 * (1.0 + scale);
        let mut identifiable = true;
        for i in 0..n {
            if costs.at(i, i) > zero_tol {
                identifiable = false;
            }
            for j in 0..n {
                if i != j && costs.at(i, j) <= zero_tol {
                    identifiable = false;
                }
            }
        }
        let mut metric = identifiable;
        if metric {
            let tri_tol = 1e-9 * (1.0 + scale);
            'outer: for i in 0..n {
                for j in 0..n {
                    if (costs.at(i, j) - costs.at(j, i)).abs() > tri_tol {
                        metric = false;
                        break 'outer;
                    }
                    for r in 0..n {
                        if costs.at(i, j) > costs.at(i, r) + costs.at(r, j) + tri_tol {
                            metric = false;
                            break 'outer;
                        }
                    }
                }
            }
        }
        Ok(CostMatrix {
            costs,
            is_metric: metric,
            is_identifiable: identifiable,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(SquareMat::from_rows(rows)?)
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.costs.n()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.costs.at(i, j)
    }

    pub fn is_metric(&self) -> bool {
        self.is_metric
    }

    pub fn is_identifiable(&self) -> bool {
        self.is_identifiable
    }

    pub fn matrix(&self) -> &SquareMat {
        &self.costs
    }

    pub(crate) fn require_identifiable(&self) -> Result<()> {
        if self.is_identifiable {
            return Ok(());
        }
        let n = self.n_points();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.at(i, j) <= 0.0 {
                    return Err(Error::NotIdentifiable { i, j });
                }
            }
        }
        // Diagonal violation; report it on the first offending index.
        let i = (0..n)
            .find(|&i| self.at(i, i) > 0.0)
            .unwrap_or(0);
        Err(Error::NotIdentifiable { i, j: i })
    }

    /// Restriction of the cost to a subset of points, preserving order.
    pub fn restrict(&self, keep: &[usize]) -> Result<CostMatrix> {
        let mut sub = SquareMat::zeros(keep.len());
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                *sub.at_mut(a, b) = self.at(i, j);
            }
        }
        CostMatrix::new(sub)
    }
}

/// Regular grid `{1,..,side}^dims` enumerated row-major (last coordinate
/// fastest), with pairwise Euclidean distances as costs.
pub fn grid_euclidean_cost(side: usize, dims: usize) -> Result<CostMatrix> {
    if side < 1 || dims < 1 {
        return Err(Error::invalid("grid needs side >= 1 and dims >= 1"));
    }
    let n = side
        .checked_pow(dims as u32)
        .filter(|&n| n <= 4096)
        .ok_or_else(|| Error::invalid(format!("grid {side}^{dims} has too many points")))?;
    let coords: Vec<Vec<usize>> = (0..n)
        .map(|mut idx| {
            let mut c = vec![0usize; dims];
            for d in (0..dims).rev() {
                c[d] = idx % side;
                idx /= side;
            }
            c
        })
        .collect();
    let mut costs = SquareMat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let d2: f64 = coords[i]
                .iter()
                .zip(&coords[j])
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum();
            *costs.at_mut(i, j) = d2.sqrt();
        }
    }
    CostMatrix::new(costs)
}

fn check_finite(weights: &[f64]) -> Result<()> {
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::invalid(format!("weight {i} is not finite")));
    }
    if weights.is_empty() {
        return Err(Error::invalid("measure must have at least one point"));
    }
    Ok(())
}

/// Element of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMeasure {
    weights: Vec<f64>,
}

impl ProbMeasure {
    /// Accepts weights with total mass within `1e-6` of one (renormalizing)
    /// and rejects anything further off. Negative entries beyond float noise
    /// are rejected; tiny negatives are clamped to zero.
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        check_finite(&weights)?;
        for (i, w) in weights.iter_mut().enumerate() {
            if *w < 0.0 {
                if *w < -TOL_MASS {
                    return Err(Error::invalid(format!("weight {i} = {w} is negative")));
                }
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > RENORM_TOL {
            return Err(Error::invalid(format!(
                "weights sum to {total}, not a probability vector"
            )));
        }
        if (total - 1.0).abs() > TOL_MASS {
            for w in &mut weights {
                *w /= total;
            }
        }
        Ok(ProbMeasure { weights })
    }

    /// Point mass at `point`.
    pub fn dirac(n: usize, point: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[point] = 1.0;
        ProbMeasure { weights }
    }

    /// Uniform distribution on `n` points.
    pub fn uniform(n: usize) -> Self {
        ProbMeasure {
            weights: vec![1.0 / n as f64; n],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Indices carrying positive mass.
    pub fn support(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn has_full_support(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }

    /// Restriction to a subset of points (caller renormalizes via `new` if
    /// mass was dropped).
    pub fn restrict(&self, keep: &[usize]) -> Vec<f64> {
        keep.iter().map(|&i| self.weights[i]).collect()
    }
}

/// Nonnegative measure with arbitrary total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct NonNegMeasure {
    weights: Vec<f64>,
    total_mass: f64,
}

impl NonNegMeasure {
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        check_finite(&weights)?;
        for (i, w) in weights.iter_mut().enumerate() {
            if *w < 0.0 {
                if *w < -TOL_MASS {
                    return Err(Error::invalid(format!("weight {i} = {w} is negative")));
                }
                *w = 0.0;
            }
        }
        let total_mass = weights.iter().sum();
        Ok(NonNegMeasure {
            weights,
            total_mass,
        })
    }

    pub fn from_prob(p: &ProbMeasure) -> Self {
        NonNegMeasure {
            weights: p.weights().to_vec(),
            total_mass: p.weights().iter().sum(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }
}

/// Signed measure on the zero-sum hyperplane.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedMeasure {
    weights: Vec<f64>,
}

impl SignedMeasure {
    /// Accepts weights summing to zero within `TOL_MASS`; sums within `1e-6`
    /// are recentered (the analog of renormalization), larger imbalances are
    /// rejected.
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        check_finite(&weights)?;
        let total: f64 = weights.iter().sum();
        if total.abs() > RENORM_TOL {
            return Err(Error::invalid(format!(
                "signed measure has net mass {total}"
            )));
        }
        if total.abs() > TOL_MASS {
            let shift = total / weights.len() as f64;
            for w in &mut weights {
                *w -= shift;
            }
        }
        Ok(SignedMeasure { weights })
    }

    pub fn zero(n: usize) -> Self {
        SignedMeasure {
            weights: vec![0.0; n],
        }
    }

    /// Difference of two probability measures.
    pub fn difference(p: &ProbMeasure, q: &ProbMeasure) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::dim(format!(
                "measures have {} and {} points",
                p.len(),
                q.len()
            )));
        }
        SignedMeasure::new(
            p.weights()
                .iter()
                .zip(q.weights())
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Jordan decomposition `w = plus - minus`, exact componentwise.
    pub fn jordan(&self) -> (NonNegMeasure, NonNegMeasure) {
        let plus: Vec<f64> = self.weights.iter().map(|&w| w.max(0.0)).collect();
        let minus: Vec<f64> = self.weights.iter().map(|&w| (-w).max(0.0)).collect();
        let tp = plus.iter().sum();
        let tm = minus.iter().sum();
        (
            NonNegMeasure {
                weights: plus,
                total_mass: tp,
            },
            NonNegMeasure {
                weights: minus,
                total_mass: tm,
            },
        )
    }

    pub fn scaled(&self, factor: f64) -> SignedMeasure {
        SignedMeasure {
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }
}

/// Category counts of `K` independent samples on a common ground space.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSamples {
    counts: Vec<Vec<u64>>,
    sizes: Vec<u64>,
}

impl GroupSamples {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("need at least one group"));
        }
        let n = counts[0].len();
        if n == 0 {
            return Err(Error::invalid("ground space must have at least one point"));
        }
        let mut sizes = Vec::with_capacity(counts.len());
        for (k, row) in counts.iter().enumerate() {
            if row.len() != n {
                return Err(Error::dim(format!(
                    "group {} has {} categories, expected {}",
                    k,
                    row.len(),
                    n
                )));
            }
            let size: u64 = row.iter().sum();
            if size == 0 {
                return Err(Error::EmptySample(k));
            }
            sizes.push(size);
        }
        Ok(GroupSamples { counts, sizes })
    }

    #[inline]
    pub fn n_groups(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.counts[0].len()
    }

    pub fn counts(&self, group: usize) -> &[u64] {
        &self.counts[group]
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    /// Category counts pooled over all groups.
    pub fn pooled_counts(&self) -> Vec<u64> {
        let mut pooled = vec![0u64; self.n_points()];
        for row in &self.counts {
            for (p, &c) in pooled.iter_mut().zip(row) {
                *p += c;
            }
        }
        pooled
    }

    /// Empirical measures of all groups.
    pub fn empirical_all(&self) -> Result<Vec<ProbMeasure>> {
        (0..self.n_groups())
            .map(|k| empirical_measure(self, k))
            .collect()
    }
}

/// Empirical probability vector of one group: counts divided by the group
/// size.
pub fn empirical_measure(samples: &GroupSamples, group: usize) -> Result<ProbMeasure> {
    if group >= samples.n_groups() {
        return Err(Error::invalid(format!(
            "group {} out of range (K = {})",
            group,
            samples.n_groups()
        )));
    }
    let n_k = samples.sizes()[group];
    if n_k == 0 {
        return Err(Error::EmptySample(group));
    }
    let weights = samples
        .counts(group)
        .iter()
        .map(|&c| c as f64 / n_k as f64)
        .collect();
    ProbMeasure::new(weights)
}

/// Multinomial covariance: diagonal `mu_i (1 - mu_i)`, off-diagonal
/// `-mu_i mu_j`. Symmetric, positive semidefinite, zero row sums.
pub fn multinomial_sigma(mu: &ProbMeasure) -> SquareMat {
    let n = mu.len();
    let w = mu.weights();
    let mut sigma = SquareMat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            *sigma.at_mut(i, j) = if i == j {
                w[i] * (1.0 - w[i])
            } else {
                -w[i] * w[j]
            };
        }
    }
    sigma
}

/// Square-root factor `A = diag(sqrt(mu)) (I - sqrt(mu) sqrt(mu)^T)` with
/// `A A^T` equal to the multinomial covariance of `mu`.
pub fn gaussian_factor(mu: &ProbMeasure) -> SquareMat {
    let n = mu.len();
    let s: Vec<f64> = mu.weights().iter().map(|&w| w.sqrt()).collect();
    let mut a = SquareMat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let base = if i == j { s[i] } else { 0.0 };
            *a.at_mut(i, j) = base - mu.weights()[i] * s[j];
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn prob(weights: &[f64]) -> ProbMeasure {
        ProbMeasure::new(weights.to_vec()).unwrap()
    }

    #[test]
    fn empirical_measures_normalize_counts() {
        let samples = GroupSamples::new(vec![vec![3, 1], vec![5, 0]]).unwrap();
        assert_eq!(
            empirical_measure(&samples, 0).unwrap().weights(),
            &[0.75, 0.25]
        );
        assert_eq!(empirical_measure(&samples, 1).unwrap().weights(), &[1.0, 0.0]);

        let samples = GroupSamples::new(vec![vec![1, 1, 2]]).unwrap();
        assert_eq!(
            empirical_measure(&samples, 0).unwrap().weights(),
            &[0.25, 0.25, 0.5]
        );
    }

    #[test]
    fn empty_group_is_rejected() {
        match GroupSamples::new(vec![vec![2, 1], vec![0, 0]]) {
            Err(Error::EmptySample(1)) => {}
            other => panic!("expected EmptySample, got {other:?}"),
        }
    }

    #[test]
    fn sigma_point_mass_is_zero() {
        let sigma = multinomial_sigma(&prob(&[1.0, 0.0]));
        assert!(sigma.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sigma_fair_coin() {
        let sigma = multinomial_sigma(&prob(&[0.5, 0.5]));
        assert_eq!(sigma.at(0, 0), 0.25);
        assert_eq!(sigma.at(0, 1), -0.25);
        assert_eq!(sigma.at(1, 0), -0.25);
        assert_eq!(sigma.at(1, 1), 0.25);
    }

    #[test]
    fn sigma_random_is_psd_with_zero_row_sums() {
        // Eigen-decomposition oracle for the PSD claim.
        let mu = prob(&[0.1, 0.2, 0.3, 0.4]);
        let sigma = multinomial_sigma(&mu);
        for s in sigma.row_sums() {
            assert!(s.abs() < 1e-12);
        }
        let m = nalgebra::DMatrix::from_fn(4, 4, |i, j| sigma.at(i, j));
        let eig = m.symmetric_eigen();
        for &ev in eig.eigenvalues.iter() {
            assert!(ev >= -1e-12, "eigenvalue {ev} negative");
        }
    }

    #[test]
    fn factor_reproduces_sigma() {
        for mu in [
            prob(&[1.0, 0.0, 0.0]),
            prob(&[0.5, 0.5]),
            prob(&[0.05, 0.4, 0.05, 0.2, 0.1, 0.2]),
        ] {
            let a = gaussian_factor(&mu);
            let sigma = multinomial_sigma(&mu);
            let n = mu.len();
            for i in 0..n {
                for j in 0..n {
                    let prod: f64 = (0..n).map(|k| a.at(i, k) * a.at(j, k)).sum();
                    assert!(
                        (prod - sigma.at(i, j)).abs() <= 1e-12,
                        "A A^T mismatch at ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn grid_costs_two_points() {
        let c = grid_euclidean_cost(2, 1).unwrap();
        assert_eq!(c.n_points(), 2);
        assert_eq!(c.at(0, 0), 0.0);
        assert_eq!(c.at(0, 1), 1.0);
        assert_eq!(c.at(1, 0), 1.0);
        assert!(c.is_metric());
    }

    #[test]
    fn grid_costs_diagonal_distance() {
        let c = grid_euclidean_cost(2, 2).unwrap();
        // Points are enumerated row-major: (1,1), (1,2), (2,1), (2,2).
        assert!((c.at(0, 3) - 2f64.sqrt()).abs() < 1e-15);
        assert!(c.is_metric());
    }

    #[test]
    fn grid_three_by_three_is_metric() {
        // CostMatrix::new already scans all triples; this pins the flag.
        assert!(grid_euclidean_cost(3, 2).unwrap().is_metric());
    }

    #[test]
    fn non_metric_costs_are_classified() {
        // Identifiable but violating the triangle inequality.
        let c = CostMatrix::from_rows(vec![
            vec![0.0, 10.0, 1.0],
            vec![10.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ])
        .unwrap();
        assert!(c.is_identifiable());
        assert!(!c.is_metric());

        // Not identifiable: zero cost off the diagonal.
        let c = CostMatrix::from_rows(vec![vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(!c.is_identifiable());
        assert!(c.require_identifiable().is_err());
    }

    #[test]
    fn prob_measure_renormalizes_small_drift() {
        let p = ProbMeasure::new(vec![0.5 + 3e-7, 0.5]).unwrap();
        assert!((p.weights().iter().sum::<f64>() - 1.0).abs() <= TOL_MASS);
        assert!(ProbMeasure::new(vec![0.7, 0.7]).is_err());
        assert!(ProbMeasure::new(vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn signed_measure_requires_zero_sum() {
        assert!(SignedMeasure::new(vec![0.5, -0.5]).is_ok());
        assert!(SignedMeasure::new(vec![0.5, -0.2]).is_err());
    }

    proptest! {
        #[test]
        fn jordan_decomposition_properties(raw in proptest::collection::vec(-1.0f64..1.0, 2..12)) {
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let centered: Vec<f64> = raw.iter().map(|x| x - mean).collect();
            let w = SignedMeasure::new(centered).unwrap();
            let (plus, minus) = w.jordan();
            for i in 0..w.len() {
                prop_assert!(plus.weights()[i] >= 0.0);
                prop_assert!(minus.weights()[i] >= 0.0);
                prop_assert_eq!(plus.weights()[i] * minus.weights()[i], 0.0);
                prop_assert_eq!(plus.weights()[i] - minus.weights()[i], w.weights()[i]);
            }
            prop_assert!((plus.total_mass() - minus.total_mass()).abs() <= 1e-9);
        }

        #[test]
        fn sigma_properties_hold_for_random_measures(raw in proptest::collection::vec(0.01f64..1.0, 2..8)) {
            let total: f64 = raw.iter().sum();
            let mu = ProbMeasure::new(raw.iter().map(|x| x / total).collect()).unwrap();
            let sigma = multinomial_sigma(&mu);
            let n = mu.len();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(sigma.at(i, j), sigma.at(j, i));
                }
            }
            for s in sigma.row_sums() {
                prop_assert!(s.abs() < 1e-12);
            }
            // PSD via the Gaussian factor: x^T Sigma x = |A^T x|^2 >= 0 is
            // checked against a handful of random directions implicitly by
            // the factor test; here check diagonal dominance of the quadratic
            // form along coordinate directions.
            for i in 0..n {
                prop_assert!(sigma.at(i, i) >= 0.0);
            }
        }
    }
}
