//! Exact optimal transport on finite spaces, its extension to signed
//! measures, and the directional-derivative functional over the
//! dual-optimal face.
//!
//! The signed extension transports between `mu+ + nu-` and `nu+ + mu-`,
//! allowing cancellation between the positive and negative parts; with a
//! metric cost it is a metric on the zero-sum hyperplane, and for
//! probability measures `p`, `q` it reduces to the plain transport
//! distance: `OT±(p - q, 0) = OT(p, q)`.

use crate::error::{Error, Result};
use crate::lp::{Column, SparseLp};
use crate::measures::{CostMatrix, NonNegMeasure, SignedMeasure, SquareMat, TOL_MASS};
use crate::{lp, transport};

/// Sign tolerance for the indicator maps: contrasts are float arithmetic on
/// empirical weights, so strict zero tests would misclassify.
pub const TOL_SIGN: f64 = 1e-10;

/// Primal-dual certificate of one transport problem.
#[derive(Debug, Clone)]
pub struct OTSolution {
    pub value: f64,
    pub plan: SquareMat,
    pub dual_u: Vec<f64>,
    pub dual_v: Vec<f64>,
}

impl OTSolution {
    /// Largest violation among the optimality certificates: marginal
    /// residuals, dual feasibility `u + v <= c`, and the primal/dual value
    /// agreement (scaled).
    pub fn max_residual(
        &self,
        source: &NonNegMeasure,
        target: &NonNegMeasure,
        c: &CostMatrix,
    ) -> f64 {
        let n = c.n_points();
        let rows = self.plan.row_sums();
        let cols = self.plan.col_sums();
        let mut res: f64 = 0.0;
        for i in 0..n {
            res = res.max((rows[i] - source.weights()[i]).abs());
            res = res.max((cols[i] - target.weights()[i]).abs());
        }
        for i in 0..n {
            for j in 0..n {
                res = res.max(self.dual_u[i] + self.dual_v[j] - c.at(i, j));
            }
        }
        res.max(self.duality_gap(source, target, c))
    }

    /// Scaled gap between the primal cost, the dual value, and the reported
    /// optimum.
    pub fn duality_gap(
        &self,
        source: &NonNegMeasure,
        target: &NonNegMeasure,
        c: &CostMatrix,
    ) -> f64 {
        let n = c.n_points();
        let mut primal = 0.0;
        for i in 0..n {
            for j in 0..n {
                primal += c.at(i, j) * self.plan.at(i, j);
            }
        }
        let dual: f64 = (0..n)
            .map(|i| self.dual_u[i] * source.weights()[i])
            .sum::<f64>()
            + (0..n)
                .map(|j| self.dual_v[j] * target.weights()[j])
                .sum::<f64>();
        let scale = 1.0 + self.value.abs();
        ((primal - self.value).abs() / scale).max((dual - self.value).abs() / scale)
    }
}

/// Exact transport between nonnegative measures of equal mass.
pub fn solve_ot(
    source: &NonNegMeasure,
    target: &NonNegMeasure,
    c: &CostMatrix,
) -> Result<OTSolution> {
    let n = c.n_points();
    if source.len() != n || target.len() != n {
        return Err(Error::dim(format!(
            "measures on {} and {} points, cost on {}",
            source.len(),
            target.len(),
            n
        )));
    }
    c.require_identifiable()?;
    let (ea, eb) = (source.total_mass(), target.total_mass());
    if (ea - eb).abs() > TOL_MASS.max(1e-9 * ea.abs().max(eb.abs())) {
        return Err(Error::Unbalanced {
            source_mass: ea,
            target_mass: eb,
        });
    }
    let r = transport::solve(source.weights(), target.weights(), c)?;
    Ok(OTSolution {
        value: r.value,
        plan: r.plan,
        dual_u: r.dual_u,
        dual_v: r.dual_v,
    })
}

/// Extended transport between signed measures:
/// `OT±(mu, nu) = OT(mu+ + nu-, nu+ + mu-)`.
pub fn signed_ot(mu: &SignedMeasure, nu: &SignedMeasure, c: &CostMatrix) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::dim(format!(
            "signed measures on {} and {} points",
            mu.len(),
            nu.len()
        )));
    }
    let (mu_p, mu_m) = mu.jordan();
    let (nu_p, nu_m) = nu.jordan();
    let source: Vec<f64> = mu_p
        .weights()
        .iter()
        .zip(nu_m.weights())
        .map(|(a, b)| a + b)
        .collect();
    let target: Vec<f64> = nu_p
        .weights()
        .iter()
        .zip(mu_m.weights())
        .map(|(a, b)| a + b)
        .collect();
    let sol = solve_ot(
        &NonNegMeasure::new(source)?,
        &NonNegMeasure::new(target)?,
        c,
    )?;
    Ok(sol.value)
}

/// Distance of a signed measure to zero, `OT±(mu, 0)`.
pub fn signed_ot_to_zero(mu: &SignedMeasure, c: &CostMatrix) -> Result<f64> {
    signed_ot(mu, &SignedMeasure::zero(mu.len()), c)
}

/// The componentwise direction pair fed to the dual-face maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct DualDirection {
    pub u_part: Vec<f64>,
    pub v_part: Vec<f64>,
}

/// Indicator maps of the derivative of the Jordan decomposition at `tau`
/// in direction `h`:
/// `u_i = h_i [1(tau_i > 0) + 1(tau_i = 0, h_i > 0)]` and
/// `v_i = -h_i [1(tau_i < 0) + 1(tau_i = 0, h_i < 0)]`,
/// with sign tests at [`TOL_SIGN`].
pub fn uv_maps(tau: &SignedMeasure, h: &SignedMeasure) -> Result<DualDirection> {
    if tau.len() != h.len() {
        return Err(Error::dim(format!(
            "direction on {} points, base on {}",
            h.len(),
            tau.len()
        )));
    }
    let mut u_part = vec![0.0; h.len()];
    let mut v_part = vec![0.0; h.len()];
    for i in 0..h.len() {
        let t = tau.weights()[i];
        let d = h.weights()[i];
        let t_pos = t > TOL_SIGN;
        let t_neg = t < -TOL_SIGN;
        let t_zero = !t_pos && !t_neg;
        if t_pos || (t_zero && d > TOL_SIGN) {
            u_part[i] = d;
        }
        if t_neg || (t_zero && d < -TOL_SIGN) {
            v_part[i] = -d;
        }
    }
    Ok(DualDirection { u_part, v_part })
}

/// Reusable maximizer of `<u, U_tau(h)> + <v, V_tau(h)>` over the
/// dual-optimal face of `OT(tau+, tau-)` for a fixed base `tau`.
///
/// The face is described by complementary slackness against one optimal
/// plan: dual feasibility `u + v <= c` with equality on the plan's support.
/// A dual-feasible pair complementary to a primal-optimal plan is itself
/// optimal, so this set equals the dual-optimal face for any choice of
/// optimal plan. Maximization runs through the LP dual, a transport-like
/// program whose support arcs are unrestricted in sign; the base problem is
/// solved once and directions reuse the factorized basis.
pub(crate) struct FaceSolver {
    tau: SignedMeasure,
    warm: lp::WarmLp,
    n: usize,
}

impl FaceSolver {
    pub fn new(tau: &SignedMeasure, c: &CostMatrix) -> Result<Self> {
        c.require_identifiable()?;
        let n = c.n_points();
        if tau.len() != n {
            return Err(Error::dim(format!(
                "signed measure on {} points, cost on {}",
                tau.len(),
                n
            )));
        }
        let (tau_p, tau_m) = tau.jordan();
        let base = solve_ot(
            &NonNegMeasure::new(tau_p.weights().to_vec())?,
            &NonNegMeasure::new(tau_m.weights().to_vec())?,
            c,
        )?;
        let supp_tol = 1e-11 * (1.0 + tau_p.total_mass());

        // min <c, X> with row sums U, column sums V (one column row dropped
        // as redundant), X free on the support arcs, nonnegative elsewhere.
        let mut cols = Vec::with_capacity(n * n);
        let mut push_col = |i: usize, j: usize, sign: f64| {
            let mut entries = vec![(i, sign)];
            if j + 1 < n {
                entries.push((n + j, sign));
            }
            cols.push(Column {
                cost: sign * c.at(i, j),
                entries,
            });
        };
        for i in 0..n {
            for j in 0..n {
                push_col(i, j, 1.0);
                if base.plan.at(i, j) > supp_tol {
                    push_col(i, j, -1.0);
                }
            }
        }
        Ok(FaceSolver {
            tau: tau.clone(),
            warm: lp::WarmLp::new(SparseLp {
                m: 2 * n - 1,
                cols,
                rhs: vec![0.0; 2 * n - 1],
            }),
            n,
        })
    }

    pub fn value(&mut self, h: &SignedMeasure) -> Result<f64> {
        let direction = uv_maps(&self.tau, h)?;
        let mut rhs = direction.u_part;
        rhs.extend_from_slice(&direction.v_part[..self.n - 1]);
        Ok(self.warm.resolve(&rhs)?.value)
    }
}

/// One-shot maximization over the dual-optimal face of `OT(tau+, tau-)`.
pub fn dual_face_maximize(tau: &SignedMeasure, h: &SignedMeasure, c: &CostMatrix) -> Result<f64> {
    FaceSolver::new(tau, c)?.value(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{grid_euclidean_cost, ProbMeasure};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_point_cost() -> CostMatrix {
        CostMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn nonneg(w: &[f64]) -> NonNegMeasure {
        NonNegMeasure::new(w.to_vec()).unwrap()
    }

    fn signed(w: &[f64]) -> SignedMeasure {
        SignedMeasure::new(w.to_vec()).unwrap()
    }

    #[test]
    fn identical_measures_cost_nothing() {
        let c = grid_euclidean_cost(4, 1).unwrap();
        let w = nonneg(&[0.4, 0.1, 0.3, 0.2]);
        let sol = solve_ot(&w, &w, &c).unwrap();
        assert_eq!(sol.value, 0.0);
        for i in 0..4 {
            assert!((sol.plan.at(i, i) - w.weights()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_mass_moves_unit_distance() {
        let sol = solve_ot(&nonneg(&[1.0, 0.0]), &nonneg(&[0.0, 1.0]), &two_point_cost()).unwrap();
        assert!((sol.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn line_instance_matches_lp_oracle() {
        let c = grid_euclidean_cost(3, 1).unwrap();
        let source = nonneg(&[0.5, 0.5, 0.0]);
        let target = nonneg(&[0.0, 0.5, 0.5]);
        let sol = solve_ot(&source, &target, &c).unwrap();
        assert!((sol.value - 1.0).abs() < 1e-12);
        let dense = crate::oracle::ot_value_dense(&source, &target, &c).unwrap();
        assert!((sol.value - dense).abs() < 1e-9);
        assert!(sol.max_residual(&source, &target, &c) < 1e-9);
    }

    #[test]
    fn unbalanced_masses_are_rejected() {
        let r = solve_ot(&nonneg(&[1.0, 0.0]), &nonneg(&[0.5, 0.1]), &two_point_cost());
        assert!(matches!(r, Err(Error::Unbalanced { .. })));
    }

    #[test]
    fn non_identifiable_cost_is_rejected() {
        let c = CostMatrix::from_rows(vec![vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let r = solve_ot(&nonneg(&[1.0, 0.0]), &nonneg(&[0.0, 1.0]), &c);
        assert!(matches!(r, Err(Error::NotIdentifiable { .. })));
    }

    #[test]
    fn signed_distance_examples() {
        let c = two_point_cost();
        let mu = signed(&[0.5, -0.5]);
        assert_eq!(signed_ot(&mu, &mu, &c).unwrap(), 0.0);
        let zero = SignedMeasure::zero(2);
        assert!((signed_ot(&mu, &zero, &c).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn signed_reduces_to_plain_ot_for_probability_pairs() {
        let c = grid_euclidean_cost(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let raw: Vec<f64> = (0..9).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let p = ProbMeasure::new(raw.iter().map(|x| x / total).collect()).unwrap();
            let raw: Vec<f64> = (0..9).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let q = ProbMeasure::new(raw.iter().map(|x| x / total).collect()).unwrap();
            let plain = solve_ot(
                &NonNegMeasure::from_prob(&p),
                &NonNegMeasure::from_prob(&q),
                &c,
            )
            .unwrap()
            .value;
            let diff = SignedMeasure::difference(&p, &q).unwrap();
            let ext = signed_ot_to_zero(&diff, &c).unwrap();
            assert!((plain - ext).abs() <= 1e-9, "{plain} vs {ext}");
        }
    }

    #[test]
    fn signed_ot_is_symmetric_and_triangular_for_metric_costs() {
        let c = grid_euclidean_cost(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..25 {
            let draw = |rng: &mut ChaCha8Rng| {
                let raw: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mean = raw.iter().sum::<f64>() / 4.0;
                signed(&raw.iter().map(|x| x - mean).collect::<Vec<_>>())
            };
            let (a, b, d) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let ab = signed_ot(&a, &b, &c).unwrap();
            let ba = signed_ot(&b, &a, &c).unwrap();
            assert!((ab - ba).abs() <= 1e-12);
            let ad = signed_ot(&a, &d, &c).unwrap();
            let db = signed_ot(&d, &b, &c).unwrap();
            assert!(ab <= ad + db + 1e-9);
        }
    }

    #[test]
    fn uv_maps_truth_table() {
        // Only the tau = 0 branches fire.
        let tau = SignedMeasure::zero(3);
        let h = signed(&[0.2, 0.3, -0.5]);
        let d = uv_maps(&tau, &h).unwrap();
        assert_eq!(d.u_part, vec![0.2, 0.3, 0.0]);
        assert_eq!(d.v_part, vec![0.0, 0.0, 0.5]);

        // tau > 0 wherever h != 0: first indicator only.
        let tau = signed(&[0.5, 0.5, -1.0]);
        let h = signed(&[0.2, -0.2, 0.0]);
        let d = uv_maps(&tau, &h).unwrap();
        assert_eq!(d.u_part, vec![0.2, -0.2, 0.0]);
        assert_eq!(d.v_part, vec![0.0, 0.0, 0.0]);

        // Mixed case from the indicator formula.
        let tau = signed(&[1.0, -1.0, 0.0]);
        let h = signed(&[0.2, 0.3, -0.5]);
        let d = uv_maps(&tau, &h).unwrap();
        assert_eq!(d.u_part, vec![0.2, 0.0, 0.0]);
        assert_eq!(d.v_part, vec![0.0, -0.3, 0.5]);
    }

    #[test]
    fn uv_maps_against_scripted_oracle() {
        // Exhaustive sign-pattern oracle on three points.
        let c = [-1.0, 0.0, 1.0];
        for &t0 in &c {
            for &t1 in &c {
                let t2 = -(t0 + t1);
                for &h0 in &c {
                    for &h1 in &c {
                        let h2 = -(h0 + h1);
                        let tau = signed(&[t0, t1, t2]);
                        let h = signed(&[h0, h1, h2]);
                        let d = uv_maps(&tau, &h).unwrap();
                        for (i, (&tv, &hv)) in
                            tau.weights().iter().zip(h.weights()).enumerate()
                        {
                            let u_ind = (tv > 0.0) as i32 as f64
                                + ((tv == 0.0) && (hv > 0.0)) as i32 as f64;
                            let v_ind = (tv < 0.0) as i32 as f64
                                + ((tv == 0.0) && (hv < 0.0)) as i32 as f64;
                            assert_eq!(d.u_part[i], hv * u_ind);
                            assert_eq!(d.v_part[i], -hv * v_ind);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dual_face_at_zero_base_equals_signed_distance() {
        let c = grid_euclidean_cost(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = raw.iter().sum::<f64>() / 4.0;
            let h = signed(&raw.iter().map(|x| x - mean).collect::<Vec<_>>());
            let tau = SignedMeasure::zero(4);
            let face = dual_face_maximize(&tau, &h, &c).unwrap();
            let dist = signed_ot_to_zero(&h, &c).unwrap();
            assert!((face - dist).abs() <= 1e-9, "{face} vs {dist}");
        }
    }

    #[test]
    fn dual_face_zero_direction_and_homogeneity() {
        let c = grid_euclidean_cost(2, 2).unwrap();
        let tau = signed(&[0.4, -0.1, -0.2, -0.1]);
        let zero = SignedMeasure::zero(4);
        assert_eq!(dual_face_maximize(&tau, &zero, &c).unwrap(), 0.0);

        let h = signed(&[-0.3, 0.1, 0.1, 0.1]);
        let one = dual_face_maximize(&tau, &h, &c).unwrap();
        let two = dual_face_maximize(&tau, &h.scaled(2.0), &c).unwrap();
        assert!((two - 2.0 * one).abs() <= 1e-12 * (1.0 + one.abs()));
    }

    #[test]
    fn dual_face_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let report = crate::oracle::check_dual_face(&mut rng, 25, 1e-3).unwrap();
        assert!(report.passed(), "{:?}", report.failures);
    }
}
