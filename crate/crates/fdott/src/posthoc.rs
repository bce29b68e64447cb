//! Simultaneous max-tests over the contrast rows, plain and weighted.
//!
//! After a global rejection, each sub-hypothesis `[L mu]_m = 0` is tested
//! against the shared critical value `t_{1-alpha}`, the empirical quantile
//! of `max_m OT±([L G]_m, 0)` under the plug-in limit. Taking the maximum
//! controls the family-wise error at `alpha` under the global null. The
//! weighted variant rescales pairwise rows by
//! `w_ij ∝ 1/sqrt(delta_i + delta_j)`, which equalizes the variance
//! prefactors across unequal sample sizes. The weighting is derived under
//! equal group distributions; with heterogeneous supports it is applied as
//! defined, without further adjustment.

use crate::design::{self, ContrastMatrix};
use crate::error::{Error, Result};
use crate::inference::{empirical_quantile, sample_gaussian};
use crate::measures::{CostMatrix, GroupSamples, SignedMeasure};
use crate::ot;
use crate::rng::{stream_rng, StreamKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Per-row outcome of the simultaneous test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocReport {
    /// Per-row statistics (already weighted in the weighted variant).
    pub row_statistics: Vec<f64>,
    /// Shared critical value, the `(1-alpha)`-quantile of the max draws.
    pub critical_value: f64,
    /// `decisions[m]` iff `row_statistics[m] >= critical_value`.
    pub decisions: Vec<bool>,
    /// Single-step adjusted p-values `#{max draw >= T_m}/J`, consistent
    /// with the decision rule.
    pub p_values: Vec<f64>,
    /// Row weights: the variance-equalizing weights when `weighted`, unit
    /// weights otherwise.
    pub weights: Vec<f64>,
    pub weighted: bool,
    pub alpha: f64,
    pub seed: u64,
    pub j_draws: usize,
}

/// Variance-equalizing weights for pairwise rows:
/// `w_ij = (1/sqrt(delta_i + delta_j)) / sum_{r<s} 1/sqrt(delta_r + delta_s)`.
pub fn hsd_weights(pairs: &[(usize, usize)], sizes: &[u64]) -> Result<Vec<f64>> {
    let deltas = design::delta_hat(sizes)?;
    let raw: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| 1.0 / (deltas[i] + deltas[j]).sqrt())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|x| x / total).collect())
}

/// Simultaneous max-test over the rows of `l` at level `alpha` with `j`
/// plug-in draws of the max statistic.
pub fn tukey_hsd(
    data: &GroupSamples,
    l: &ContrastMatrix,
    c: &CostMatrix,
    alpha: f64,
    j_draws: usize,
    weighted: bool,
    seed: u64,
) -> Result<PosthocReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    if j_draws == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    if data.n_groups() != l.k_groups() {
        return Err(Error::dim(format!(
            "{} groups for {} contrast columns",
            data.n_groups(),
            l.k_groups()
        )));
    }
    c.require_identifiable()?;
    let m_rows = l.m_rows();
    let weights = if weighted {
        let pairs = l.pairwise_rows().ok_or_else(|| {
            Error::UnsupportedScheme(
                "weighted max-test needs pairwise contrast rows (weights are defined per pair)"
                    .into(),
            )
        })?;
        hsd_weights(&pairs, data.sizes())?
    } else {
        vec![1.0; m_rows]
    };

    let mu_hats = data.empirical_all()?;
    let sizes = data.sizes();
    let rho = design::rho(sizes)?;
    let deltas = design::delta_hat(sizes)?;
    let refs: Vec<&[f64]> = mu_hats.iter().map(|m| m.weights()).collect();
    let rows = l.apply(&refs)?;
    let mut row_statistics = Vec::with_capacity(m_rows);
    for (row, w) in rows.into_iter().zip(&weights) {
        let dist = ot::signed_ot_to_zero(&SignedMeasure::new(row)?, c)?;
        row_statistics.push(rho.sqrt() * w * dist);
    }

    // Shared draws of the weighted row maxima.
    let max_draws: Vec<f64> = (0..j_draws as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(seed, StreamKind::Draw, j);
            let g = sample_gaussian(&mu_hats, &deltas, &mut rng)?;
            let refs: Vec<&[f64]> = g.iter().map(|v| v.as_slice()).collect();
            let rows = l.apply(&refs)?;
            let mut max_val = 0.0f64;
            for (row, w) in rows.into_iter().zip(&weights) {
                let dist = ot::signed_ot_to_zero(&SignedMeasure::new(row)?, c)?;
                max_val = max_val.max(w * dist);
            }
            Ok(max_val)
        })
        .collect::<Result<_>>()?;

    let critical_value = empirical_quantile(&max_draws, alpha);
    let decisions: Vec<bool> = row_statistics.iter().map(|&t| t >= critical_value).collect();
    let p_values: Vec<f64> = row_statistics
        .iter()
        .map(|&t| max_draws.iter().filter(|&&z| z >= t).count() as f64 / j_draws as f64)
        .collect();
    Ok(PosthocReport {
        row_statistics,
        critical_value,
        decisions,
        p_values,
        weights,
        weighted,
        alpha,
        seed,
        j_draws,
    })
}
