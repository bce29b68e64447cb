//! Measure generators and seeded experiment runners.
//!
//! Experiments are grids of replications: per replication, truth measures
//! are produced by the configured generator, category counts are sampled,
//! and every configured method is run on the same data. Aggregated rows
//! report the mean p-value and the rejection fraction. All randomness flows
//! through per-replication streams, so a run is reproducible bit for bit
//! from `(config, seed)`.

use crate::design::{factorial_contrasts, one_way_contrasts, DesignSpec, Effect};
use crate::error::{Error, Result};
use crate::inference::{
    fdott_statistic, run_test, sample_alternative_limit, sample_null_limit,
    LimitSampleSet, Method, SamplerOptions, TestConfig, TestDesign,
};
use crate::measures::{grid_euclidean_cost, CostMatrix, GroupSamples, ProbMeasure};
use crate::rng::{stream_rng, sub_seed, StreamKind};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Truncated Poisson pmf on the grid points `0..side^2 - 1`, renormalized.
/// `lambda = 0` gives the point mass at zero.
pub fn poisson_grid_measure(lambda: f64, side: usize) -> Result<ProbMeasure> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda = {lambda} must be >= 0")));
    }
    if side < 1 {
        return Err(Error::invalid("grid side must be >= 1"));
    }
    let n = side * side;
    let mut weights = Vec::with_capacity(n);
    let mut p = (-lambda).exp();
    for i in 0..n {
        weights.push(p);
        p *= lambda / (i + 1) as f64;
    }
    let total: f64 = weights.iter().sum();
    ProbMeasure::new(weights.iter().map(|w| w / total).collect())
}

/// Random-measure laws used by the generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimplexLaw {
    /// Normalized unit exponentials: the uniform distribution on the
    /// simplex.
    Dirichlet1,
    /// Normalized i.i.d. uniforms on (0, 1).
    NormalizedUniform,
}

/// One random probability vector on `n` points.
pub fn uniform_simplex_measure<R: Rng>(n: usize, rng: &mut R, law: SimplexLaw) -> ProbMeasure {
    let raw: Vec<f64> = match law {
        SimplexLaw::Dirichlet1 => (0..n)
            .map(|_| -rng.random_range(f64::MIN_POSITIVE..1.0f64).ln())
            .collect(),
        SimplexLaw::NormalizedUniform => (0..n)
            .map(|_| rng.random_range(f64::MIN_POSITIVE..1.0f64))
            .collect(),
    };
    let total: f64 = raw.iter().sum();
    ProbMeasure::new(raw.iter().map(|x| x / total).collect()).expect("positive draws")
}

/// Projects a grid of cell measures onto the two-way interaction null:
/// every cell is replaced by `mu^{i.} + mu^{.j} - mu^{..}`; cells that pick
/// up negative entries are redrawn (normalized uniforms) and the projection
/// repeats until it lands inside the simplex.
pub fn two_way_null_project<R: Rng>(
    initial: &[Vec<ProbMeasure>],
    rng: &mut R,
) -> Result<Vec<Vec<ProbMeasure>>> {
    const MAX_ROUNDS: usize = 10_000;
    let k1 = initial.len();
    if k1 == 0 || initial[0].is_empty() {
        return Err(Error::invalid("need a nonempty grid of measures"));
    }
    let k2 = initial[0].len();
    let n = initial[0][0].len();
    let mut cells: Vec<Vec<Vec<f64>>> = initial
        .iter()
        .map(|row| row.iter().map(|m| m.weights().to_vec()).collect())
        .collect();

    for _ in 0..MAX_ROUNDS {
        // Row, column, and grand means.
        let mut grand = vec![0.0; n];
        let mut row_means = vec![vec![0.0; n]; k1];
        let mut col_means = vec![vec![0.0; n]; k2];
        for (i, row) in cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                for p in 0..n {
                    row_means[i][p] += cell[p] / k2 as f64;
                    col_means[j][p] += cell[p] / k1 as f64;
                    grand[p] += cell[p] / (k1 * k2) as f64;
                }
            }
        }
        let mut any_negative = false;
        let mut projected = vec![vec![vec![0.0; n]; k2]; k1];
        for i in 0..k1 {
            for j in 0..k2 {
                for p in 0..n {
                    let v = row_means[i][p] + col_means[j][p] - grand[p];
                    projected[i][j][p] = v;
                    if v < 0.0 {
                        any_negative = true;
                    }
                }
            }
        }
        if !any_negative {
            return projected
                .into_iter()
                .map(|row| row.into_iter().map(ProbMeasure::new).collect())
                .collect();
        }
        // Keep valid projections, redraw the offending cells.
        for i in 0..k1 {
            for j in 0..k2 {
                if projected[i][j].iter().any(|&v| v < 0.0) {
                    cells[i][j] = uniform_simplex_measure(n, rng, SimplexLaw::NormalizedUniform)
                        .weights()
                        .to_vec();
                } else {
                    cells[i][j] = std::mem::take(&mut projected[i][j]);
                }
            }
        }
    }
    Err(Error::ProjectionDiverged(MAX_ROUNDS))
}

/// Truth generators of the simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthGenerator {
    /// One truncated Poisson measure per group with the given rates.
    Poisson(Vec<f64>),
    /// Independent random measures, one per group.
    UniformSimplex(SimplexLaw),
    /// Independent random measures where all but one group share the first
    /// group's measure (single deviating group).
    UniformSimplexOneOff(SimplexLaw),
    /// Normalized-uniform cells projected onto the two-way interaction
    /// null.
    TwoWayNull,
    /// The two-way null construction with one cell replaced by a fresh
    /// uniform-simplex draw afterwards.
    TwoWayNullOneOff,
}

impl TruthGenerator {
    fn generate<R: Rng>(
        &self,
        factor_sizes: &[usize],
        n_points: usize,
        rng: &mut R,
    ) -> Result<Vec<ProbMeasure>> {
        let k: usize = factor_sizes.iter().product();
        match self {
            TruthGenerator::Poisson(lambdas) => {
                if lambdas.len() != k {
                    return Err(Error::dim(format!(
                        "{} rates for {k} groups",
                        lambdas.len()
                    )));
                }
                let side = (n_points as f64).sqrt().round() as usize;
                lambdas
                    .iter()
                    .map(|&l| poisson_grid_measure(l, side))
                    .collect()
            }
            TruthGenerator::UniformSimplex(law) => {
                Ok((0..k).map(|_| uniform_simplex_measure(n_points, rng, *law)).collect())
            }
            TruthGenerator::UniformSimplexOneOff(law) => {
                let shared = uniform_simplex_measure(n_points, rng, *law);
                let odd = uniform_simplex_measure(n_points, rng, *law);
                let mut out = vec![shared; k];
                out[0] = odd;
                Ok(out)
            }
            TruthGenerator::TwoWayNull | TruthGenerator::TwoWayNullOneOff => {
                if factor_sizes.len() != 2 {
                    return Err(Error::invalid(
                        "two-way null truth needs exactly two factors",
                    ));
                }
                let (k1, k2) = (factor_sizes[0], factor_sizes[1]);
                let initial: Vec<Vec<ProbMeasure>> = (0..k1)
                    .map(|_| {
                        (0..k2)
                            .map(|_| {
                                uniform_simplex_measure(
                                    n_points,
                                    rng,
                                    SimplexLaw::NormalizedUniform,
                                )
                            })
                            .collect()
                    })
                    .collect();
                let grid = two_way_null_project(&initial, rng)?;
                let mut flat: Vec<ProbMeasure> = grid.into_iter().flatten().collect();
                if matches!(self, TruthGenerator::TwoWayNullOneOff) {
                    let cell = rng.random_range(0..k);
                    flat[cell] = uniform_simplex_measure(n_points, rng, SimplexLaw::Dirichlet1);
                }
                Ok(flat)
            }
        }
    }
}

/// Which statistic a method entry runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFlavor {
    Fdott,
    Barycenter,
}

/// One tested procedure: the statistic flavor, the calibration scheme, and
/// the bootstrap exponent where applicable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub flavor: TestFlavor,
    pub scheme: Method,
    pub gamma: f64,
}

impl MethodSpec {
    pub fn fdott(scheme: Method) -> Self {
        MethodSpec {
            flavor: TestFlavor::Fdott,
            scheme,
            gamma: 0.5,
        }
    }

    pub fn label(&self) -> String {
        let flavor = match self.flavor {
            TestFlavor::Fdott => "fdott",
            TestFlavor::Barycenter => "barycenter",
        };
        if self.scheme == Method::BootMOfN {
            format!("{flavor},{}({})", self.scheme.name(), self.gamma)
        } else {
            format!("{flavor},{}", self.scheme.name())
        }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub factor_sizes: Vec<usize>,
    pub effect: Effect,
    pub grid_side: usize,
    pub sizes: Vec<u64>,
    pub truth: TruthGenerator,
    pub methods: Vec<MethodSpec>,
    pub alpha: f64,
    pub j_draws: usize,
    pub replications: usize,
    pub seed: u64,
}

/// Aggregated outcome of one method in one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub method: String,
    pub sizes: Vec<u64>,
    pub mean_p: f64,
    pub reject_frac: f64,
    pub replications: usize,
    pub j_draws: usize,
    pub seed: u64,
}

fn sample_counts<R: Rng>(truth: &[ProbMeasure], sizes: &[u64], rng: &mut R) -> Result<GroupSamples> {
    let mut counts = Vec::with_capacity(truth.len());
    for (mu, &nk) in truth.iter().zip(sizes) {
        let dist = WeightedIndex::new(mu.weights())
            .map_err(|e| Error::invalid(format!("invalid truth weights: {e}")))?;
        let mut row = vec![0u64; mu.len()];
        for _ in 0..nk {
            row[dist.sample(rng)] += 1;
        }
        counts.push(row);
    }
    GroupSamples::new(counts)
}

fn build_design(cfg_factor_sizes: &[usize], effect: &Effect, flavor: TestFlavor) -> Result<TestDesign> {
    let k: usize = cfg_factor_sizes.iter().product();
    match flavor {
        TestFlavor::Fdott => {
            let l = match effect {
                Effect::OneWay => one_way_contrasts(k)?,
                other => factorial_contrasts(&DesignSpec {
                    factor_sizes: cfg_factor_sizes.to_vec(),
                    effect: other.clone(),
                })?,
            };
            Ok(TestDesign::Fdott(l))
        }
        TestFlavor::Barycenter => {
            if !matches!(effect, Effect::OneWay) {
                return Err(Error::UnsupportedScheme(
                    "the barycenter test handles one-way layouts only".into(),
                ));
            }
            Ok(TestDesign::Barycenter(vec![1.0 / k as f64; k]))
        }
    }
}

/// Runs the experiment: per replication, fresh truth (for random
/// generators), fresh data, and every configured method on the same data.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    if cfg.replications == 0 || cfg.j_draws == 0 {
        return Err(Error::invalid("replications and draws must be positive"));
    }
    let k: usize = cfg.factor_sizes.iter().product();
    if cfg.sizes.len() != k {
        return Err(Error::dim(format!(
            "{} sizes for {k} groups",
            cfg.sizes.len()
        )));
    }
    let cost = grid_euclidean_cost(cfg.grid_side, 2)?;
    let designs: Vec<TestDesign> = cfg
        .methods
        .iter()
        .map(|m| build_design(&cfg.factor_sizes, &cfg.effect, m.flavor))
        .collect::<Result<_>>()?;

    let outcomes: Vec<Vec<(f64, bool)>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| {
            let mut truth_rng = stream_rng(cfg.seed, StreamKind::Truth, rep);
            let truth = cfg
                .truth
                .generate(&cfg.factor_sizes, cost.n_points(), &mut truth_rng)?;
            let mut data_rng = stream_rng(cfg.seed, StreamKind::Data, rep);
            let data = sample_counts(&truth, &cfg.sizes, &mut data_rng)?;
            cfg.methods
                .iter()
                .zip(&designs)
                .enumerate()
                .map(|(idx, (m, design))| {
                    let test_cfg = TestConfig {
                        method: m.scheme,
                        alpha: cfg.alpha,
                        j_draws: cfg.j_draws,
                        gamma: m.gamma,
                        seed: sub_seed(cfg.seed, StreamKind::Replication, rep * 64 + idx as u64),
                    };
                    let report = run_test(&data, design, &cost, &test_cfg)?;
                    Ok((report.p_value, report.reject))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    Ok(cfg
        .methods
        .iter()
        .enumerate()
        .map(|(idx, m)| {
            let mut mean_p = 0.0;
            let mut rejects = 0usize;
            for rep in &outcomes {
                mean_p += rep[idx].0;
                rejects += rep[idx].1 as usize;
            }
            ExperimentRow {
                method: m.label(),
                sizes: cfg.sizes.clone(),
                mean_p: mean_p / cfg.replications as f64,
                reject_frac: rejects as f64 / cfg.replications as f64,
                replications: cfg.replications,
                j_draws: cfg.j_draws,
                seed: cfg.seed,
            }
        })
        .collect())
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("finite"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("finite"));
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let t = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        let fa = i as f64 / xs.len() as f64;
        let fb = j as f64 / ys.len() as f64;
        d = d.max((fa - fb).abs());
    }
    d
}

/// Configuration of a finite-sample-versus-limit comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub factor_sizes: Vec<usize>,
    pub effect: Effect,
    pub grid_side: usize,
    pub sizes: Vec<u64>,
    pub truth: TruthGenerator,
    pub j_draws: usize,
    pub seed: u64,
}

/// Raw draws of the centered finite-sample statistic and of its limit law,
/// plus their KS distance. Density plots are the consumer's business.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceSamples {
    pub finite: Vec<f64>,
    pub limit: Vec<f64>,
    pub ks_distance: f64,
    /// True when the truth satisfies the null (limit drawn from the
    /// null-form law rather than the dual-face law).
    pub under_null: bool,
}

/// Draws `j_draws` values of `T(mu_hat) - T(mu)` at the configured sizes,
/// and `j_draws` values from the corresponding limit.
pub fn convergence_samples(cfg: &ConvergenceConfig) -> Result<ConvergenceSamples> {
    if cfg.j_draws == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    let k: usize = cfg.factor_sizes.iter().product();
    if cfg.sizes.len() != k {
        return Err(Error::dim(format!(
            "{} sizes for {k} groups",
            cfg.sizes.len()
        )));
    }
    let cost = grid_euclidean_cost(cfg.grid_side, 2)?;
    let mut truth_rng = stream_rng(cfg.seed, StreamKind::Truth, 0);
    let truth = cfg
        .truth
        .generate(&cfg.factor_sizes, cost.n_points(), &mut truth_rng)?;
    let l = match &cfg.effect {
        Effect::OneWay => one_way_contrasts(k)?,
        other => factorial_contrasts(&DesignSpec {
            factor_sizes: cfg.factor_sizes.clone(),
            effect: other.clone(),
        })?,
    };
    let statistic_at_truth = fdott_statistic(&truth, &l, &cost, &cfg.sizes)?;
    let refs: Vec<&[f64]> = truth.iter().map(|m| m.weights()).collect();
    let under_null = l
        .apply(&refs)?
        .iter()
        .all(|row| row.iter().all(|x| x.abs() <= 1e-10));

    let finite: Vec<f64> = (0..cfg.j_draws as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(cfg.seed, StreamKind::Data, rep);
            let data = sample_counts(&truth, &cfg.sizes, &mut rng)?;
            let mu_hats = data.empirical_all()?;
            Ok(fdott_statistic(&mu_hats, &l, &cost, &cfg.sizes)? - statistic_at_truth)
        })
        .collect::<Result<_>>()?;

    let limit_seed = sub_seed(cfg.seed, StreamKind::Replication, 1);
    let limit: LimitSampleSet = if under_null {
        // Plug-in sampler evaluated at the truth: scale counts into an
        // exact representation of the truth via the Gaussian factors.
        let deltas = crate::design::delta_hat(&cfg.sizes)?;
        let gaussian_draws: Vec<f64> = (0..cfg.j_draws as u64)
            .into_par_iter()
            .map(|j| {
                let mut rng = stream_rng(limit_seed, StreamKind::Draw, j);
                let g = crate::inference::sample_gaussian(&truth, &deltas, &mut rng)?;
                let refs: Vec<&[f64]> = g.iter().map(|v| v.as_slice()).collect();
                let rows = l.apply(&refs)?;
                let mut total = 0.0;
                for row in rows {
                    total += crate::ot::signed_ot_to_zero(
                        &crate::measures::SignedMeasure::new(row)?,
                        &cost,
                    )?;
                }
                Ok(total / l.scaling_s())
            })
            .collect::<Result<_>>()?;
        LimitSampleSet {
            draws: gaussian_draws,
            method: crate::inference::LimitMethod::Plugin,
            seed: limit_seed,
            meta: crate::inference::SampleMeta {
                j_draws: cfg.j_draws,
                resample_sizes: None,
                gamma: None,
            },
        }
    } else {
        let deltas = crate::design::delta_hat(&cfg.sizes)?;
        sample_alternative_limit(&truth, &l, &cost, &deltas, cfg.j_draws, limit_seed)?
    };

    let ks = ks_distance(&finite, &limit.draws);
    Ok(ConvergenceSamples {
        finite,
        limit: limit.draws,
        ks_distance: ks,
        under_null,
    })
}

/// Convenience: the plug-in null sampler at given data, re-exported here so
/// experiment drivers can emit raw draw files.
pub fn null_draws_for(
    data: &GroupSamples,
    k: usize,
    c: &CostMatrix,
    j_draws: usize,
    seed: u64,
) -> Result<LimitSampleSet> {
    let l = one_way_contrasts(k)?;
    sample_null_limit(
        data,
        &l,
        c,
        Method::Plugin,
        j_draws,
        &SamplerOptions::default(),
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_measures() {
        let m = poisson_grid_measure(0.0, 3).unwrap();
        assert_eq!(m.weights()[0], 1.0);
        assert!(m.weights()[1..].iter().all(|&x| x == 0.0));

        let m = poisson_grid_measure(13.0, 5).unwrap();
        let argmax = m
            .weights()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(argmax == 12 || argmax == 13, "mode at {argmax}");

        for lambda in [1.0, 13.0, 30.0] {
            let m = poisson_grid_measure(lambda, 5).unwrap();
            assert!((m.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn simplex_laws_are_valid_and_centered() {
        let mut rng = stream_rng(3, StreamKind::Truth, 0);
        for law in [SimplexLaw::Dirichlet1, SimplexLaw::NormalizedUniform] {
            let m = uniform_simplex_measure(1, &mut rng, law);
            assert_eq!(m.weights(), &[1.0]);
        }
        // Monte Carlo moment oracle: the uniform law on the simplex has
        // coordinate mean 1/3 for n = 3.
        let reps = 60_000;
        let mut acc = [0.0f64; 3];
        for _ in 0..reps {
            let m = uniform_simplex_measure(3, &mut rng, SimplexLaw::Dirichlet1);
            for (a, w) in acc.iter_mut().zip(m.weights()) {
                *a += w;
                assert!(*w >= 0.0);
            }
        }
        // Coordinate variance is 1/18; three standard errors of the mean.
        let se = (1.0 / 18.0_f64 / reps as f64).sqrt();
        for a in acc {
            let mean = a / reps as f64;
            assert!((mean - 1.0 / 3.0).abs() <= 3.0 * se, "mean {mean}");
        }
    }

    #[test]
    fn null_projection_fixed_points() {
        let mut rng = stream_rng(5, StreamKind::Truth, 0);
        // Identical cells are a fixed point.
        let mu = ProbMeasure::new(vec![0.5, 0.3, 0.2]).unwrap();
        let grid = vec![vec![mu.clone(), mu.clone()], vec![mu.clone(), mu.clone()]];
        let out = two_way_null_project(&grid, &mut rng).unwrap();
        for row in &out {
            for cell in row {
                for (a, b) in cell.weights().iter().zip(mu.weights()) {
                    assert!((a - b).abs() < 1e-15);
                }
            }
        }
        // Additive truth: mu^{ij} = p_i + q_j stays untouched.
        let p = [vec![0.30, 0.15, 0.05], vec![0.05, 0.15, 0.30]];
        let q = [vec![0.10, 0.15, 0.25], vec![0.25, 0.15, 0.10]];
        let grid: Vec<Vec<ProbMeasure>> = p
            .iter()
            .map(|pi| {
                q.iter()
                    .map(|qj| {
                        ProbMeasure::new(pi.iter().zip(qj).map(|(a, b)| a + b).collect()).unwrap()
                    })
                    .collect()
            })
            .collect();
        let out = two_way_null_project(&grid, &mut rng).unwrap();
        for (row_in, row_out) in grid.iter().zip(&out) {
            for (a, b) in row_in.iter().zip(row_out) {
                for (x, y) in a.weights().iter().zip(b.weights()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn null_projection_kills_the_interaction() {
        let mut rng = stream_rng(11, StreamKind::Truth, 0);
        for trial in 0..20 {
            let initial: Vec<Vec<ProbMeasure>> = (0..2)
                .map(|_| {
                    (0..3)
                        .map(|_| {
                            uniform_simplex_measure(4, &mut rng, SimplexLaw::NormalizedUniform)
                        })
                        .collect()
                })
                .collect();
            let out = two_way_null_project(&initial, &mut rng).unwrap();
            let flat: Vec<ProbMeasure> = out.into_iter().flatten().collect();
            let spec = DesignSpec {
                factor_sizes: vec![2, 3],
                effect: Effect::Interaction(vec![0, 1]),
            };
            let l = factorial_contrasts(&spec).unwrap();
            let refs: Vec<&[f64]> = flat.iter().map(|m| m.weights()).collect();
            for row in l.apply(&refs).unwrap() {
                for x in row {
                    assert!(x.abs() <= 1e-10, "trial {trial}: interaction {x}");
                }
            }
        }
    }

    #[test]
    fn degenerate_truth_never_rejects() {
        let cfg = ExperimentConfig {
            factor_sizes: vec![3],
            effect: Effect::OneWay,
            grid_side: 2,
            sizes: vec![20, 20, 20],
            truth: TruthGenerator::Poisson(vec![0.0, 0.0, 0.0]),
            methods: vec![
                MethodSpec::fdott(Method::Plugin),
                MethodSpec::fdott(Method::Permutation),
            ],
            alpha: 0.05,
            j_draws: 40,
            replications: 5,
            seed: 7,
        };
        for row in run_experiment(&cfg).unwrap() {
            assert_eq!(row.reject_frac, 0.0, "{}", row.method);
        }
    }

    #[test]
    fn experiments_are_reproducible() {
        let cfg = ExperimentConfig {
            factor_sizes: vec![2],
            effect: Effect::OneWay,
            grid_side: 2,
            sizes: vec![30, 30],
            truth: TruthGenerator::UniformSimplex(SimplexLaw::Dirichlet1),
            methods: vec![MethodSpec::fdott(Method::Plugin)],
            alpha: 0.05,
            j_draws: 50,
            replications: 8,
            seed: 99,
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ks_distance_cases() {
        assert_eq!(ks_distance(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        // Disjoint supports: distance one.
        assert_eq!(ks_distance(&[0.0, 1.0], &[5.0, 6.0]), 1.0);
        // Hand-computed mixed case.
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.5, 3.5];
        let d = ks_distance(&a, &b);
        assert!((d - 0.5).abs() < 1e-12, "{d}");
    }

    #[test]
    fn convergence_samples_degenerate_truth() {
        let cfg = ConvergenceConfig {
            factor_sizes: vec![2],
            effect: Effect::OneWay,
            grid_side: 2,
            sizes: vec![10, 10],
            truth: TruthGenerator::Poisson(vec![0.0, 0.0]),
            j_draws: 25,
            seed: 4,
        };
        let out = convergence_samples(&cfg).unwrap();
        assert!(out.under_null);
        assert!(out.finite.iter().all(|&x| x == 0.0));
        assert!(out.limit.iter().all(|&x| x == 0.0));
        assert_eq!(out.ks_distance, 0.0);
    }

    #[test]
    fn convergence_improves_with_sample_size() {
        // Matched seeds, one-way null: the KS distance to the limit law
        // shrinks as n grows.
        let mk = |n: u64| ConvergenceConfig {
            factor_sizes: vec![3],
            effect: Effect::OneWay,
            grid_side: 2,
            sizes: vec![n; 3],
            truth: TruthGenerator::Poisson(vec![2.0, 2.0, 2.0]),
            j_draws: 400,
            seed: 12,
        };
        let small = convergence_samples(&mk(20)).unwrap();
        let large = convergence_samples(&mk(2000)).unwrap();
        assert!(small.under_null && large.under_null);
        assert!(
            large.ks_distance < small.ks_distance,
            "{} !< {}",
            large.ks_distance,
            small.ks_distance
        );
    }

    #[test]
    fn alternative_limit_is_biased_low_at_small_n() {
        // Off the null the dual-face limit approximates the centered
        // statistic with a downward bias at small n (each summand is convex
        // in the estimate and dominates its directional derivative), and
        // the bias decays as n grows.
        let mk = |n: u64| ConvergenceConfig {
            factor_sizes: vec![5],
            effect: Effect::OneWay,
            grid_side: 3,
            sizes: vec![n; 5],
            truth: TruthGenerator::UniformSimplex(SimplexLaw::Dirichlet1),
            j_draws: 300,
            seed: 21,
        };
        let med = |xs: &[f64]| {
            let mut v = xs.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        let small = convergence_samples(&mk(50)).unwrap();
        assert!(!small.under_null);
        let offset_small = med(&small.limit) - med(&small.finite);
        assert!(offset_small < 0.0, "limit not biased low: {offset_small}");
        let large = convergence_samples(&mk(5000)).unwrap();
        let offset_large = med(&large.limit) - med(&large.finite);
        assert!(
            offset_large.abs() < offset_small.abs(),
            "bias did not shrink: {offset_small} -> {offset_large}"
        );
    }
}
