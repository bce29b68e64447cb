//! Test statistics, limit-law samplers, resampling schemes, p-values, and
//! test decisions.
//!
//! The factorial statistic sums, over contrast rows, the signed transport
//! distance of the contrasted empirical measures to zero, scaled by
//! `sqrt(rho_n) / s`. Under the null its law converges to the same
//! functional applied to multinomial Gaussian limits, which the samplers
//! here draw from via plug-in (optionally with pooling), an m-out-of-n or
//! derivative bootstrap, or group relabeling (one-way layouts only).
//!
//! Every draw is computed on its own random stream derived from the seed
//! and the draw index, so resulting sample sets are identical for any
//! worker count.

use crate::barycenter::{self, PsiNullSolver};
use crate::design::{self, ContrastMatrix};
use crate::error::{Error, Result};
use crate::measures::{
    gaussian_factor, CostMatrix, GroupSamples, ProbMeasure, SignedMeasure, SquareMat,
};
use crate::ot::{self, FaceSolver};
use crate::rng::{stream_rng, StreamKind};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Resampling scheme used to approximate the null limit law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "plugin")]
    Plugin,
    #[serde(rename = "plugin-pooled")]
    PluginPooled,
    #[serde(rename = "boot-m")]
    BootMOfN,
    #[serde(rename = "boot-deriv")]
    BootDerivative,
    #[serde(rename = "perm")]
    Permutation,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Plugin => "plugin",
            Method::PluginPooled => "plugin-pooled",
            Method::BootMOfN => "boot-m",
            Method::BootDerivative => "boot-deriv",
            Method::Permutation => "perm",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "plugin" => Ok(Method::Plugin),
            "plugin-pooled" => Ok(Method::PluginPooled),
            "boot-m" => Ok(Method::BootMOfN),
            "boot-deriv" => Ok(Method::BootDerivative),
            "perm" => Ok(Method::Permutation),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Provenance of a set of limit-law draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitMethod {
    Plugin,
    PluginPooled,
    BootMOfN,
    BootDerivative,
    Permutation,
    AlternativeFace,
    LocalShift,
}

impl From<Method> for LimitMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Plugin => LimitMethod::Plugin,
            Method::PluginPooled => LimitMethod::PluginPooled,
            Method::BootMOfN => LimitMethod::BootMOfN,
            Method::BootDerivative => LimitMethod::BootDerivative,
            Method::Permutation => LimitMethod::Permutation,
        }
    }
}

/// Sampler knobs; `gamma` is the m-out-of-n bootstrap exponent
/// (`l_k = round(n_k^gamma)`).
#[derive(Debug, Clone, Copy)]
pub struct SamplerOptions {
    pub gamma: f64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions { gamma: 0.5 }
    }
}

/// Bookkeeping attached to a draw set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub j_draws: usize,
    /// Resample sizes for bootstrap and permutation schemes.
    pub resample_sizes: Option<Vec<u64>>,
    pub gamma: Option<f64>,
}

/// Monte Carlo draws from a (null, alternative, or locally shifted) limit
/// law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSampleSet {
    pub draws: Vec<f64>,
    pub method: LimitMethod,
    pub seed: u64,
    pub meta: SampleMeta,
}

/// Statistic of the factorial transport test:
/// `(sqrt(rho_n)/s) * sum_m OT±([L mu_hat]_m, 0)`.
pub fn fdott_statistic(
    mu_hats: &[ProbMeasure],
    l: &ContrastMatrix,
    c: &CostMatrix,
    sizes: &[u64],
) -> Result<f64> {
    if mu_hats.len() != l.k_groups() {
        return Err(Error::dim(format!(
            "{} measures for {} contrast columns",
            mu_hats.len(),
            l.k_groups()
        )));
    }
    if sizes.len() != mu_hats.len() {
        return Err(Error::dim("one sample size per group required"));
    }
    c.require_identifiable()?;
    let rho = design::rho(sizes)?;
    let refs: Vec<&[f64]> = mu_hats.iter().map(|m| m.weights()).collect();
    let rows = l.apply(&refs)?;
    let mut total = 0.0;
    for row in rows {
        total += ot::signed_ot_to_zero(&SignedMeasure::new(row)?, c)?;
    }
    Ok(rho.sqrt() / l.scaling_s() * total)
}

/// Statistic of the barycenter test: `sqrt(rho_n) * B(mu_hat)` (one-way
/// layouts only).
pub fn bary_statistic(
    mu_hats: &[ProbMeasure],
    w: &[f64],
    c: &CostMatrix,
    sizes: &[u64],
) -> Result<f64> {
    let rho = design::rho(sizes)?;
    let sol = barycenter::solve_barycenter(mu_hats, w, c)?;
    Ok(rho.sqrt() * sol.value)
}

/// Multinomial Gaussian limits: `G^k = sqrt(delta_k) A(mu^k) Z_k` with
/// independent standard normal `Z_k`. Each row sums to zero.
pub fn sample_gaussian<R: Rng>(
    mus: &[ProbMeasure],
    deltas: &[f64],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if mus.len() != deltas.len() {
        return Err(Error::dim("one delta per measure required"));
    }
    if deltas.iter().any(|&d| d < 0.0) {
        return Err(Error::invalid("deltas must be nonnegative"));
    }
    let sampler = GaussianSampler::new(mus, deltas);
    Ok(sampler.draw(rng))
}

/// Precomputed Gaussian factors, scaled by `sqrt(delta_k)`.
struct GaussianSampler {
    factors: Vec<SquareMat>,
    n: usize,
}

impl GaussianSampler {
    fn new(mus: &[ProbMeasure], deltas: &[f64]) -> Self {
        let n = mus[0].len();
        let factors = mus
            .iter()
            .zip(deltas)
            .map(|(mu, &d)| {
                let mut a = gaussian_factor(mu);
                let s = d.sqrt();
                for i in 0..n {
                    for j in 0..n {
                        *a.at_mut(i, j) *= s;
                    }
                }
                a
            })
            .collect();
        GaussianSampler { factors, n }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        self.factors
            .iter()
            .map(|a| {
                let z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
                (0..self.n)
                    .map(|i| a.row(i).iter().zip(&z).map(|(aij, zj)| aij * zj).sum())
                    .collect()
            })
            .collect()
    }
}

fn contrast_sum(l: &ContrastMatrix, vectors: &[Vec<f64>], c: &CostMatrix) -> Result<f64> {
    let refs: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
    let rows = l.apply(&refs)?;
    let mut total = 0.0;
    for row in rows {
        total += ot::signed_ot_to_zero(&SignedMeasure::new(row)?, c)?;
    }
    Ok(total)
}

fn multinomial_counts<R: Rng>(rng: &mut R, weights: &[f64], n: u64) -> Result<Vec<u64>> {
    let dist = WeightedIndex::new(weights)
        .map_err(|e| Error::invalid(format!("invalid resampling weights: {e}")))?;
    let mut counts = vec![0u64; weights.len()];
    for _ in 0..n {
        counts[dist.sample(rng)] += 1;
    }
    Ok(counts)
}

fn pooled_labels(data: &GroupSamples) -> Vec<u32> {
    let mut labels = Vec::with_capacity(data.sizes().iter().sum::<u64>() as usize);
    for k in 0..data.n_groups() {
        for (cat, &count) in data.counts(k).iter().enumerate() {
            for _ in 0..count {
                labels.push(cat as u32);
            }
        }
    }
    labels
}

fn parallel_draws<F>(j_draws: usize, draw: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    (0..j_draws as u64)
        .into_par_iter()
        .map(draw)
        .collect::<Result<Vec<f64>>>()
}

/// Draws with per-chunk mutable solver state. Chunks are fixed index
/// ranges, so warm-started solver paths never depend on the worker count.
fn parallel_draws_chunked<S, I, F>(j_draws: usize, init: I, draw: F) -> Result<Vec<f64>>
where
    S: Send,
    I: Fn() -> Result<S> + Sync + Send,
    F: Fn(&mut S, u64) -> Result<f64> + Sync + Send,
{
    const CHUNK: usize = 64;
    let n_chunks = j_draws.div_ceil(CHUNK);
    let chunks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut state = init()?;
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(j_draws);
            (lo as u64..hi as u64)
                .map(|j| draw(&mut state, j))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Draws from the null limit law of the factorial statistic using the
/// requested scheme.
pub fn sample_null_limit(
    data: &GroupSamples,
    l: &ContrastMatrix,
    c: &CostMatrix,
    method: Method,
    j_draws: usize,
    opts: &SamplerOptions,
    seed: u64,
) -> Result<LimitSampleSet> {
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
    let mu_hats = data.empirical_all()?;
    let sizes = data.sizes().to_vec();
    let deltas = design::delta_hat(&sizes)?;
    let s = l.scaling_s();
    let rho = design::rho(&sizes)?;
    let mut meta = SampleMeta {
        j_draws,
        resample_sizes: None,
        gamma: None,
    };

    let draws = match method {
        Method::Plugin | Method::PluginPooled => {
            let gaussian_mus: Vec<ProbMeasure> = if method == Method::PluginPooled {
                let pooled = pooled_measure(data)?;
                vec![pooled; data.n_groups()]
            } else {
                mu_hats.clone()
            };
            let sampler = GaussianSampler::new(&gaussian_mus, &deltas);
            parallel_draws(j_draws, |j| {
                let mut rng = stream_rng(seed, StreamKind::Draw, j);
                let g = sampler.draw(&mut rng);
                Ok(contrast_sum(l, &g, c)? / s)
            })?
        }
        Method::BootMOfN => {
            let ell: Vec<u64> = sizes
                .iter()
                .map(|&nk| ((nk as f64).powf(opts.gamma).round() as u64).max(1))
                .collect();
            let rho_ell = design::rho(&ell)?;
            meta.resample_sizes = Some(ell.clone());
            meta.gamma = Some(opts.gamma);
            let mu_hats = mu_hats.clone();
            parallel_draws(j_draws, |j| {
                let mut rng = stream_rng(seed, StreamKind::Draw, j);
                let resampled: Vec<Vec<f64>> = mu_hats
                    .iter()
                    .zip(&ell)
                    .map(|(mu, &lk)| {
                        let counts = multinomial_counts(&mut rng, mu.weights(), lk)?;
                        Ok(counts.iter().map(|&x| x as f64 / lk as f64).collect())
                    })
                    .collect::<Result<_>>()?;
                Ok(rho_ell.sqrt() / s * contrast_sum(l, &resampled, c)?)
            })?
        }
        Method::BootDerivative => {
            meta.resample_sizes = Some(sizes.clone());
            let mu_hats = mu_hats.clone();
            let sizes = sizes.clone();
            parallel_draws(j_draws, |j| {
                let mut rng = stream_rng(seed, StreamKind::Draw, j);
                let direction: Vec<Vec<f64>> = mu_hats
                    .iter()
                    .zip(&sizes)
                    .map(|(mu, &nk)| {
                        let counts = multinomial_counts(&mut rng, mu.weights(), nk)?;
                        Ok(counts
                            .iter()
                            .zip(mu.weights())
                            .map(|(&x, &m)| rho.sqrt() * (x as f64 / nk as f64 - m))
                            .collect())
                    })
                    .collect::<Result<_>>()?;
                Ok(contrast_sum(l, &direction, c)? / s)
            })?
        }
        Method::Permutation => {
            if !l.is_one_way() {
                return Err(Error::UnsupportedScheme(
                    "permutation requires exchangeability under the null (one-way layout)".into(),
                ));
            }
            meta.resample_sizes = Some(sizes.clone());
            let labels = pooled_labels(data);
            let n_points = data.n_points();
            let sizes = sizes.clone();
            parallel_draws(j_draws, |j| {
                let mut rng = stream_rng(seed, StreamKind::Draw, j);
                let mut shuffled = labels.clone();
                shuffled.shuffle(&mut rng);
                let mut measures = Vec::with_capacity(sizes.len());
                let mut offset = 0usize;
                for &nk in &sizes {
                    let mut counts = vec![0.0f64; n_points];
                    for &cat in &shuffled[offset..offset + nk as usize] {
                        counts[cat as usize] += 1.0;
                    }
                    offset += nk as usize;
                    for x in &mut counts {
                        *x /= nk as f64;
                    }
                    measures.push(counts);
                }
                Ok(rho.sqrt() / s * contrast_sum(l, &measures, c)?)
            })?
        }
    };
    Ok(LimitSampleSet {
        draws,
        method: method.into(),
        seed,
        meta,
    })
}

fn pooled_measure(data: &GroupSamples) -> Result<ProbMeasure> {
    let total: u64 = data.sizes().iter().sum();
    ProbMeasure::new(
        data.pooled_counts()
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect(),
    )
}

/// Draws from the null limit law of the barycenter statistic. The limiting
/// bundle polytope assumes full support, so plug-in sampling restricts the
/// ground space to the joint support of the estimates.
pub fn sample_null_limit_bary(
    data: &GroupSamples,
    w: &[f64],
    c: &CostMatrix,
    method: Method,
    j_draws: usize,
    opts: &SamplerOptions,
    seed: u64,
) -> Result<LimitSampleSet> {
    if j_draws == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    c.require_identifiable()?;
    let k = data.n_groups();
    if w.len() != k {
        return Err(Error::dim(format!("{} weights for {k} groups", w.len())));
    }
    let mu_hats = data.empirical_all()?;
    let sizes = data.sizes().to_vec();
    let deltas = design::delta_hat(&sizes)?;
    let rho = design::rho(&sizes)?;
    let mut meta = SampleMeta {
        j_draws,
        resample_sizes: None,
        gamma: None,
    };

    let draws = match method {
        Method::Plugin | Method::PluginPooled => {
            // Joint support of the plug-in estimates (identical to the
            // pooled support).
            let pooled = pooled_measure(data)?;
            let keep = pooled.support();
            let c_r = c.restrict(&keep)?;
            let gaussian_mus: Vec<ProbMeasure> = if method == Method::PluginPooled {
                vec![ProbMeasure::new(pooled.restrict(&keep))?; k]
            } else {
                mu_hats
                    .iter()
                    .map(|m| ProbMeasure::new(m.restrict(&keep)))
                    .collect::<Result<_>>()?
            };
            let sampler = GaussianSampler::new(&gaussian_mus, &deltas);
            let w = w.to_vec();
            parallel_draws_chunked(
                j_draws,
                || PsiNullSolver::new(k, &w, &c_r),
                |solver, j| {
                    let mut rng = stream_rng(seed, StreamKind::Draw, j);
                    let g = sampler.draw(&mut rng);
                    solver.value(&g)
                },
            )?
        }
        Method::BootMOfN => {
            let ell: Vec<u64> = sizes
                .iter()
                .map(|&nk| ((nk as f64).powf(opts.gamma).round() as u64).max(1))
                .collect();
            let rho_ell = design::rho(&ell)?;
            meta.resample_sizes = Some(ell.clone());
            meta.gamma = Some(opts.gamma);
            let mu_hats = mu_hats.clone();
            let w = w.to_vec();
            parallel_draws(j_draws, |j| {
                let mut rng = stream_rng(seed, StreamKind::Draw, j);
                let resampled: Vec<ProbMeasure> = mu_hats
                    .iter()
                    .zip(&ell)
                    .map(|(mu, &lk)| {
                        let counts = multinomial_counts(&mut rng, mu.weights(), lk)?;
                        ProbMeasure::new(counts.iter().map(|&x| x as f64 / lk as f64).collect())
                    })
                    .collect::<Result<_>>()?;
                Ok(rho_ell.sqrt() * barycenter::solve_barycenter(&resampled, &w, c)?.value)
            })?
        }
        Method::BootDerivative => {
            meta.resample_sizes = Some(sizes.clone());
            let mu_hats_c = mu_hats.clone();
            let sizes_c = sizes.clone();
            let w = w.to_vec();
            let mus_for_face = mu_hats.clone();
            parallel_draws_chunked(
                j_draws,
                || barycenter::PsiFaceSolver::new(&mus_for_face, &w, c),
                |solver, j| {
                    let mut rng = stream_rng(seed, StreamKind::Draw, j);
                    let direction: Vec<Vec<f64>> = mu_hats_c
                        .iter()
                        .zip(&sizes_c)
                        .map(|(mu, &nk)| {
                            let counts = multinomial_counts(&mut rng, mu.weights(), nk)?;
                            Ok(counts
                                .iter()
                                .zip(mu.weights())
                                .map(|(&x, &m)| rho.sqrt() * (x as f64 / nk as f64 - m))
                                .collect())
                        })
                        .collect::<Result<_>>()?;
                    solver.value(&direction)
                },
            )?
        }
        Method::Permutation => {
            meta.resample_sizes = Some(sizes.clone());
            let labels = pooled_labels(data);
            let n_points = data.n_points();
            let sizes = sizes.clone();
            let w = w.to_vec();
            parallel_draws(j_draws, |j| {
                let mut rng = stream_rng(seed, StreamKind::Draw, j);
                let mut shuffled = labels.clone();
                shuffled.shuffle(&mut rng);
                let mut measures = Vec::with_capacity(sizes.len());
                let mut offset = 0usize;
                for &nk in &sizes {
                    let mut counts = vec![0.0f64; n_points];
                    for &cat in &shuffled[offset..offset + nk as usize] {
                        counts[cat as usize] += 1.0;
                    }
                    offset += nk as usize;
                    for x in &mut counts {
                        *x /= nk as f64;
                    }
                    measures.push(ProbMeasure::new(counts)?);
                }
                Ok(rho.sqrt() * barycenter::solve_barycenter(&measures, &w, c)?.value)
            })?
        }
    };
    Ok(LimitSampleSet {
        draws,
        method: method.into(),
        seed,
        meta,
    })
}

/// Approximate p-value of a statistic against a draw set. Asymptotic
/// schemes use `#{Z_j >= T}/J`; permutation uses the `(count+1)/(J+1)`
/// correction that keeps the level bounded by alpha.
pub fn p_value(statistic: f64, draws: &LimitSampleSet) -> f64 {
    let count = draws.draws.iter().filter(|&&z| z >= statistic).count();
    let j = draws.draws.len();
    match draws.method {
        LimitMethod::Permutation => (count + 1) as f64 / (j + 1) as f64,
        _ => count as f64 / j as f64,
    }
}

/// Empirical `(1-alpha)`-quantile with the "higher" convention: the
/// `ceil((1-alpha) J)`-th order statistic.
pub fn empirical_quantile(draws: &[f64], alpha: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    let j = sorted.len();
    let idx = (((1.0 - alpha) * j as f64).ceil() as usize).clamp(1, j);
    sorted[idx - 1]
}

/// Hypothesis under test: either contrasts on the group measures or
/// barycenter-based equality of all groups.
#[derive(Debug, Clone)]
pub enum TestDesign {
    Fdott(ContrastMatrix),
    Barycenter(Vec<f64>),
}

impl TestDesign {
    pub fn label(&self) -> String {
        match self {
            TestDesign::Fdott(l) => l.label().to_string(),
            TestDesign::Barycenter(w) => format!("barycenter(K={})", w.len()),
        }
    }
}

/// Knobs of one test run.
#[derive(Debug, Clone, Copy)]
pub struct TestConfig {
    pub method: Method,
    pub alpha: f64,
    pub j_draws: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            method: Method::Plugin,
            alpha: 0.05,
            j_draws: 1000,
            gamma: 0.5,
            seed: 0,
        }
    }
}

/// Outcome of one test: statistic, calibration quantile, p-value, and
/// decision, with the sampling metadata needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub p_value: f64,
    pub quantile: f64,
    pub alpha: f64,
    pub reject: bool,
    pub method: Method,
    pub design: String,
    pub seed: u64,
    pub j_draws: usize,
}

/// Runs the full test: statistic, limit draws, quantile, p-value, decision
/// (`reject` iff the statistic reaches the empirical `(1-alpha)`-quantile).
pub fn run_test(
    data: &GroupSamples,
    design: &TestDesign,
    c: &CostMatrix,
    cfg: &TestConfig,
) -> Result<TestReport> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    let mu_hats = data.empirical_all()?;
    let sizes = data.sizes().to_vec();
    let opts = SamplerOptions { gamma: cfg.gamma };
    let (statistic, draws) = match design {
        TestDesign::Fdott(l) => {
            let statistic = fdott_statistic(&mu_hats, l, c, &sizes)?;
            let draws = sample_null_limit(data, l, c, cfg.method, cfg.j_draws, &opts, cfg.seed)?;
            (statistic, draws)
        }
        TestDesign::Barycenter(w) => {
            let statistic = bary_statistic(&mu_hats, w, c, &sizes)?;
            let draws =
                sample_null_limit_bary(data, w, c, cfg.method, cfg.j_draws, &opts, cfg.seed)?;
            (statistic, draws)
        }
    };
    let quantile = empirical_quantile(&draws.draws, cfg.alpha);
    let p = p_value(statistic, &draws);
    // Fully degenerate data (statistic and all draws exactly zero) pins the
    // quantile at zero; a zero statistic carries no evidence against the
    // null, so that corner does not reject.
    let reject = statistic >= quantile && !(statistic == 0.0 && quantile == 0.0);
    Ok(TestReport {
        statistic,
        p_value: p,
        quantile,
        alpha: cfg.alpha,
        reject,
        method: cfg.method,
        design: design.label(),
        seed: cfg.seed,
        j_draws: cfg.j_draws,
    })
}

/// Draws from the limit law of the centered statistic under a fixed
/// alternative: each contrast row contributes the maximum of the Gaussian
/// direction functional over its dual-optimal face.
pub fn sample_alternative_limit(
    mus: &[ProbMeasure],
    l: &ContrastMatrix,
    c: &CostMatrix,
    deltas: &[f64],
    j_draws: usize,
    seed: u64,
) -> Result<LimitSampleSet> {
    if j_draws == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    c.require_identifiable()?;
    if mus.len() != l.k_groups() {
        return Err(Error::dim(format!(
            "{} measures for {} contrast columns",
            mus.len(),
            l.k_groups()
        )));
    }
    let refs: Vec<&[f64]> = mus.iter().map(|m| m.weights()).collect();
    let taus: Vec<SignedMeasure> = l
        .apply(&refs)?
        .into_iter()
        .map(SignedMeasure::new)
        .collect::<Result<_>>()?;
    let sampler = GaussianSampler::new(mus, deltas);
    let s = l.scaling_s();
    let draws = parallel_draws_chunked(
        j_draws,
        || {
            taus.iter()
                .map(|tau| FaceSolver::new(tau, c))
                .collect::<Result<Vec<_>>>()
        },
        |faces, j| {
            let mut rng = stream_rng(seed, StreamKind::Draw, j);
            let g = sampler.draw(&mut rng);
            let refs: Vec<&[f64]> = g.iter().map(|v| v.as_slice()).collect();
            let rows = l.apply(&refs)?;
            let mut total = 0.0;
            for (face, row) in faces.iter_mut().zip(rows) {
                total += face.value(&SignedMeasure::new(row)?)?;
            }
            Ok(total / s)
        },
    )?;
    Ok(LimitSampleSet {
        draws,
        method: LimitMethod::AlternativeFace,
        seed,
        meta: SampleMeta {
            j_draws,
            resample_sizes: None,
            gamma: None,
        },
    })
}

/// Local alternative: base measures satisfying the null, perturbations, and
/// the sample sizes that set the drift rate.
#[derive(Debug, Clone)]
pub struct LocalAlternative {
    pub base: Vec<ProbMeasure>,
    pub perturbations: Vec<ProbMeasure>,
    pub sizes: Vec<u64>,
}

impl LocalAlternative {
    pub fn new(
        base: Vec<ProbMeasure>,
        perturbations: Vec<ProbMeasure>,
        sizes: Vec<u64>,
    ) -> Result<Self> {
        if base.len() != perturbations.len() || base.len() != sizes.len() {
            return Err(Error::dim(
                "base, perturbations, and sizes must have one entry per group",
            ));
        }
        if sizes.iter().any(|&n| n == 0) {
            return Err(Error::invalid("sample sizes must be positive"));
        }
        let n = base[0].len();
        for m in base.iter().chain(&perturbations) {
            if m.len() != n {
                return Err(Error::dim("all measures must share the ground space"));
            }
        }
        Ok(LocalAlternative {
            base,
            perturbations,
            sizes,
        })
    }

    /// The drifted measure `(1/sqrt(n_k)) nu^k + (1 - 1/sqrt(n_k)) mu^k`,
    /// a convex combination and hence always a valid measure.
    pub fn drifted(&self, group: usize) -> Result<ProbMeasure> {
        let t = 1.0 / (self.sizes[group] as f64).sqrt();
        ProbMeasure::new(
            self.perturbations[group]
                .weights()
                .iter()
                .zip(self.base[group].weights())
                .map(|(nu, mu)| t * nu + (1.0 - t) * mu)
                .collect(),
        )
    }

    /// Scaled shift rows `eta_k = sqrt(delta_k) (nu^k - mu^k)`.
    pub fn eta(&self) -> Result<Vec<Vec<f64>>> {
        let deltas = design::delta_hat(&self.sizes)?;
        Ok(self
            .base
            .iter()
            .zip(&self.perturbations)
            .zip(&deltas)
            .map(|((mu, nu), &d)| {
                nu.weights()
                    .iter()
                    .zip(mu.weights())
                    .map(|(n, m)| d.sqrt() * (n - m))
                    .collect()
            })
            .collect())
    }
}

/// Which test's local limit to sample.
#[derive(Debug, Clone)]
pub enum LocalDesign<'a> {
    Fdott(&'a ContrastMatrix),
    Barycenter(&'a [f64]),
}

/// Draws from the limit law under the local alternative: the null-form
/// functional applied to the Gaussian limit shifted by `eta`.
pub fn sample_local_limit(
    la: &LocalAlternative,
    design: &LocalDesign,
    c: &CostMatrix,
    j_draws: usize,
    seed: u64,
) -> Result<LimitSampleSet> {
    if j_draws == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    c.require_identifiable()?;
    let deltas = design::delta_hat(&la.sizes)?;
    let eta = la.eta()?;
    let sampler = GaussianSampler::new(&la.base, &deltas);
    let draws = match design {
        LocalDesign::Fdott(l) => {
            if la.base.len() != l.k_groups() {
                return Err(Error::dim(format!(
                    "{} groups for {} contrast columns",
                    la.base.len(),
                    l.k_groups()
                )));
            }
            let refs: Vec<&[f64]> = la.base.iter().map(|m| m.weights()).collect();
            for row in l.apply(&refs)? {
                let dev = row.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                if dev > 1e-8 {
                    return Err(Error::invalid(format!(
                        "base measures violate the null: contrast deviation {dev:.3e}"
                    )));
                }
            }
            let s = l.scaling_s();
            parallel_draws(j_draws, |j| {
                let mut rng = stream_rng(seed, StreamKind::Draw, j);
                let mut g = sampler.draw(&mut rng);
                for (row, shift) in g.iter_mut().zip(&eta) {
                    for (x, e) in row.iter_mut().zip(shift) {
                        *x += e;
                    }
                }
                Ok(contrast_sum(l, &g, c)? / s)
            })?
        }
        LocalDesign::Barycenter(w) => {
            for (idx, mu) in la.base.iter().enumerate().skip(1) {
                let diff = mu
                    .weights()
                    .iter()
                    .zip(la.base[0].weights())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                if diff > 1e-8 {
                    return Err(Error::invalid(format!(
                        "barycenter local limit requires equal base measures; group {idx} differs by {diff:.3e}"
                    )));
                }
            }
            if let Some(i) = la.base[0].weights().iter().position(|&x| x <= 0.0) {
                return Err(Error::SupportMismatch(i));
            }
            let k = la.base.len();
            let w = w.to_vec();
            parallel_draws_chunked(
                j_draws,
                || PsiNullSolver::new(k, &w, c),
                |solver, j| {
                    let mut rng = stream_rng(seed, StreamKind::Draw, j);
                    let mut g = sampler.draw(&mut rng);
                    for (row, shift) in g.iter_mut().zip(&eta) {
                        for (x, e) in row.iter_mut().zip(shift) {
                            *x += e;
                        }
                    }
                    solver.value(&g)
                },
            )?
        }
    };
    Ok(LimitSampleSet {
        draws,
        method: LimitMethod::LocalShift,
        seed,
        meta: SampleMeta {
            j_draws,
            resample_sizes: None,
            gamma: None,
        },
    })
}

/// Local power estimate: the shifted and unshifted limits are sampled on
/// shared Gaussian streams and the power is the fraction of shifted draws
/// reaching the unshifted `(1-alpha)`-quantile.
#[derive(Debug, Clone)]
pub struct LocalPower {
    pub power: f64,
    pub quantile: f64,
    pub null_draws: LimitSampleSet,
    pub shifted_draws: LimitSampleSet,
}

pub fn local_power(
    la: &LocalAlternative,
    design: &LocalDesign,
    c: &CostMatrix,
    alpha: f64,
    j_draws: usize,
    seed: u64,
) -> Result<LocalPower> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    let shifted = sample_local_limit(la, design, c, j_draws, seed)?;
    let null_la = LocalAlternative::new(la.base.clone(), la.base.clone(), la.sizes.clone())?;
    let null = sample_local_limit(&null_la, design, c, j_draws, seed)?;
    let quantile = empirical_quantile(&null.draws, alpha);
    let power =
        shifted.draws.iter().filter(|&&z| z >= quantile).count() as f64 / j_draws as f64;
    Ok(LocalPower {
        power,
        quantile,
        null_draws: null,
        shifted_draws: shifted,
    })
}
