//! Batch front end: data ingestion, design specification, test execution,
//! post-hoc analysis, simulations, and solver cross-checks.
//!
//! Exit codes: 0 success, 2 input error, 3 solver failure, 4 oracle
//! mismatch.

mod io;

use clap::{Args, Parser, Subcommand};
use fdott::design::Effect;
use fdott::inference::{
    local_power, run_test, LocalAlternative, LocalDesign, Method, TestConfig, TestDesign,
};
use fdott::measures::{CostMatrix, ProbMeasure};
use fdott::posthoc::tukey_hsd;
use fdott::sim::{
    convergence_samples, poisson_grid_measure, run_experiment, ConvergenceConfig,
    ExperimentConfig, MethodSpec, SimplexLaw, TestFlavor, TruthGenerator,
};
use io::{input_error, CliError};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "fdott",
    version,
    about = "Optimal-transport tests for linear hypotheses between discrete distributions"
)]
struct Cli {
    /// Cap the worker threads (0 = one per core). Results do not depend on
    /// this setting.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CostArgs {
    /// Euclidean grid ground space: side L, optionally `L,d` for d
    /// dimensions (default d = 2).
    #[arg(long)]
    grid: Option<String>,

    /// CSV file with an N x N cost matrix (no header).
    #[arg(long)]
    cost: Option<PathBuf>,
}

impl CostArgs {
    fn load(&self) -> Result<CostMatrix, CliError> {
        io::load_cost(self.grid.as_deref(), self.cost.as_deref())
    }
}

#[derive(Args)]
struct DesignArgs {
    /// Factor level counts, e.g. `6` (one-way) or `2,3` (two-way). Groups
    /// are cells in lexicographic order over the factor levels.
    #[arg(long, default_value = "2")]
    factors: String,

    /// Effect under test: `one-way`, `main:A`, `interaction:A,B`,
    /// `simple:A|B`, or `@matrix.csv` for a raw contrast matrix.
    #[arg(long, default_value = "one-way")]
    effect: String,

    /// Override the statistic's scaling factor s.
    #[arg(long)]
    scaling: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Test a linear hypothesis on group measures read from a CSV file.
    Test {
        /// Long-form data: `group,category,count` or one `group,category`
        /// row per observation.
        #[arg(long)]
        data: PathBuf,

        #[command(flatten)]
        cost: CostArgs,

        #[command(flatten)]
        design: DesignArgs,

        /// Use the barycenter statistic instead of contrasts (one-way
        /// layouts only).
        #[arg(long)]
        bary: bool,

        #[arg(long, default_value = "plugin")]
        method: String,

        #[arg(long, default_value_t = 0.05)]
        alpha: f64,

        /// Monte Carlo draws from the limit law.
        #[arg(long, default_value_t = 1000)]
        draws: usize,

        /// m-out-of-n bootstrap exponent.
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        #[arg(long)]
        out: Option<PathBuf>,

        #[arg(long, default_value = "json")]
        format: String,
    },

    /// Simultaneous max-test over the contrast rows (plain or weighted).
    Posthoc {
        #[arg(long)]
        data: PathBuf,

        #[command(flatten)]
        cost: CostArgs,

        #[command(flatten)]
        design: DesignArgs,

        /// Equalize variance prefactors across unequal sample sizes
        /// (pairwise rows only).
        #[arg(long)]
        weighted: bool,

        #[arg(long, default_value_t = 0.05)]
        alpha: f64,

        #[arg(long, default_value_t = 1000)]
        draws: usize,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        #[arg(long)]
        out: Option<PathBuf>,

        #[arg(long, default_value = "json")]
        format: String,
    },

    /// Monte Carlo experiment grids (rejection tables) or
    /// finite-sample-versus-limit draw sets.
    Simulate {
        /// `table` for rejection-rate rows, `convergence` for draw sets.
        #[arg(long, default_value = "table")]
        kind: String,

        #[command(flatten)]
        design: DesignArgs,

        /// Grid side L of the L x L ground space.
        #[arg(long, default_value_t = 5)]
        grid: usize,

        /// Truth generator: `poisson:l1,l2,...`, `uniform`,
        /// `uniform-oneoff`, `two-way-null`, `two-way-null-oneoff`.
        #[arg(long)]
        truth: String,

        /// Per-group sample sizes, e.g. `500,500,500`.
        #[arg(long)]
        sizes: String,

        /// Comma-separated method list for tables, entries
        /// `flavor:scheme[:gamma]` with flavor `fdott` or `bary`, e.g.
        /// `fdott:plugin,fdott:boot-m:0.8,bary:plugin`.
        #[arg(long, default_value = "fdott:plugin")]
        methods: String,

        #[arg(long, default_value_t = 0.05)]
        alpha: f64,

        #[arg(long, default_value_t = 1000)]
        draws: usize,

        /// Replications per method (tables only).
        #[arg(long, default_value_t = 250)]
        reps: usize,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        /// Output CSV (tables: aggregated rows; convergence: raw draws).
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Asymptotic local power of the tests along a perturbation direction.
    LocalPower {
        #[command(flatten)]
        cost: CostArgs,

        /// Base measures satisfying the null: `poisson:l1,...` or
        /// `@file.csv` (one weight row per group).
        #[arg(long)]
        null: String,

        /// Perturbation measures in the same format.
        #[arg(long)]
        perturb: String,

        #[arg(long)]
        sizes: String,

        /// `fdott`, `barycenter`, or `both`.
        #[arg(long, default_value = "both")]
        flavor: String,

        #[arg(long, default_value_t = 0.05)]
        alpha: f64,

        #[arg(long, default_value_t = 10000)]
        draws: usize,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Cross-check the exact solvers against the independent dense-LP
    /// route; exits nonzero on any mismatch.
    Oracle {
        /// Random instances per check.
        #[arg(long, default_value_t = 50)]
        instances: usize,

        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Serialize)]
struct VersionedReport<T: Serialize> {
    version: &'static str,
    #[serde(flatten)]
    report: T,
}

fn to_json<T: Serialize>(report: T) -> Result<String, CliError> {
    serde_json::to_string_pretty(&VersionedReport {
        version: VERSION,
        report,
    })
    .map_err(|e| input_error(format!("serialization failed: {e}")))
}

fn parse_truth(spec: &str) -> Result<TruthGenerator, CliError> {
    if let Some(rates) = spec.strip_prefix("poisson:") {
        let lambdas: Vec<f64> = rates
            .split(',')
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| input_error(format!("bad rate '{x}'")))
            })
            .collect::<Result<_, _>>()?;
        return Ok(TruthGenerator::Poisson(lambdas));
    }
    match spec {
        "uniform" => Ok(TruthGenerator::UniformSimplex(SimplexLaw::Dirichlet1)),
        "uniform-oneoff" => Ok(TruthGenerator::UniformSimplexOneOff(SimplexLaw::Dirichlet1)),
        "two-way-null" => Ok(TruthGenerator::TwoWayNull),
        "two-way-null-oneoff" => Ok(TruthGenerator::TwoWayNullOneOff),
        other => Err(input_error(format!("unknown truth generator '{other}'"))),
    }
}

fn parse_method_specs(spec: &str) -> Result<Vec<MethodSpec>, CliError> {
    spec.split(',')
        .map(|entry| {
            let parts: Vec<&str> = entry.trim().split(':').collect();
            let (flavor, scheme, gamma) = match parts.as_slice() {
                [f, s] => (*f, *s, 0.5),
                [f, s, g] => (
                    *f,
                    *s,
                    g.parse::<f64>()
                        .map_err(|_| input_error(format!("bad gamma in '{entry}'")))?,
                ),
                _ => return Err(input_error(format!("bad method entry '{entry}'"))),
            };
            let flavor = match flavor {
                "fdott" => TestFlavor::Fdott,
                "bary" | "barycenter" => TestFlavor::Barycenter,
                other => return Err(input_error(format!("unknown flavor '{other}'"))),
            };
            Ok(MethodSpec {
                flavor,
                scheme: Method::parse(scheme)?,
                gamma,
            })
        })
        .collect()
}

fn parse_measures(spec: &str, n_points: usize) -> Result<Vec<ProbMeasure>, CliError> {
    if let Some(rates) = spec.strip_prefix("poisson:") {
        let side = (n_points as f64).sqrt().round() as usize;
        if side * side != n_points {
            return Err(input_error(
                "poisson measures need a square grid ground space",
            ));
        }
        return rates
            .split(',')
            .map(|x| {
                let lambda: f64 = x
                    .trim()
                    .parse()
                    .map_err(|_| input_error(format!("bad rate '{x}'")))?;
                Ok(poisson_grid_measure(lambda, side)?)
            })
            .collect();
    }
    if let Some(path) = spec.strip_prefix('@') {
        let raw = std::fs::read_to_string(path)?;
        return raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let weights: Vec<f64> = line
                    .split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|_| input_error(format!("bad weight '{x}'")))
                    })
                    .collect::<Result<_, _>>()?;
                if weights.len() != n_points {
                    return Err(input_error(format!(
                        "measure row has {} weights, ground space has {n_points}",
                        weights.len()
                    )));
                }
                Ok(ProbMeasure::new(weights)?)
            })
            .collect();
    }
    Err(input_error(format!(
        "unknown measure spec '{spec}' (use poisson:... or @file.csv)"
    )))
}

#[derive(Serialize)]
struct PosthocRow {
    row: usize,
    statistic: f64,
    weight: f64,
    p_value: f64,
    reject: bool,
}

#[derive(Serialize)]
struct PosthocOut {
    design: String,
    weighted: bool,
    alpha: f64,
    critical_value: f64,
    seed: u64,
    j_draws: usize,
    rows: Vec<PosthocRow>,
}

#[derive(Serialize)]
struct LocalPowerOut {
    flavor: String,
    power: f64,
    quantile: f64,
    alpha: f64,
    j_draws: usize,
    seed: u64,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Test {
            data,
            cost,
            design,
            bary,
            method,
            alpha,
            draws,
            gamma,
            seed,
            out,
            format,
        } => {
            let c = cost.load()?;
            let factor_sizes = io::parse_factor_sizes(&design.factors)?;
            let k: usize = factor_sizes.iter().product();
            let samples = io::load_group_data(&data, k, c.n_points())?;
            let test_design = if bary {
                if !design.effect.eq_ignore_ascii_case("one-way") {
                    return Err(input_error(
                        "the barycenter statistic tests one-way equality only",
                    ));
                }
                TestDesign::Barycenter(vec![1.0 / k as f64; k])
            } else {
                TestDesign::Fdott(io::build_contrasts(
                    &factor_sizes,
                    &design.effect,
                    design.scaling,
                )?)
            };
            let cfg = TestConfig {
                method: Method::parse(&method)?,
                alpha,
                j_draws: draws,
                gamma,
                seed,
            };
            let report = run_test(&samples, &test_design, &c, &cfg)?;
            let text = match format.as_str() {
                "json" => to_json(&report)?,
                "csv" => {
                    let mut wtr = csv::Writer::from_writer(Vec::new());
                    wtr.serialize(&report).map_err(CliError::from)?;
                    String::from_utf8(wtr.into_inner().map_err(|e| input_error(e.to_string()))?)
                        .map_err(|e| input_error(e.to_string()))?
                }
                other => return Err(input_error(format!("unknown format '{other}'"))),
            };
            io::emit(out.as_deref(), &text)
        }

        Command::Posthoc {
            data,
            cost,
            design,
            weighted,
            alpha,
            draws,
            seed,
            out,
            format,
        } => {
            let c = cost.load()?;
            let factor_sizes = io::parse_factor_sizes(&design.factors)?;
            let k: usize = factor_sizes.iter().product();
            let samples = io::load_group_data(&data, k, c.n_points())?;
            let l = io::build_contrasts(&factor_sizes, &design.effect, design.scaling)?;
            let label = l.label().to_string();
            let report = tukey_hsd(&samples, &l, &c, alpha, draws, weighted, seed)?;
            let rows: Vec<PosthocRow> = (0..report.row_statistics.len())
                .map(|m| PosthocRow {
                    row: m,
                    statistic: report.row_statistics[m],
                    weight: report.weights[m],
                    p_value: report.p_values[m],
                    reject: report.decisions[m],
                })
                .collect();
            let outp = PosthocOut {
                design: label,
                weighted,
                alpha,
                critical_value: report.critical_value,
                seed,
                j_draws: draws,
                rows,
            };
            let text = match format.as_str() {
                "json" => to_json(&outp)?,
                "csv" => {
                    let mut wtr = csv::Writer::from_writer(Vec::new());
                    for row in &outp.rows {
                        #[derive(Serialize)]
                        struct Flat<'a> {
                            row: usize,
                            statistic: f64,
                            weight: f64,
                            p_value: f64,
                            reject: bool,
                            critical_value: f64,
                            alpha: f64,
                            seed: u64,
                            j_draws: usize,
                            version: &'a str,
                        }
                        wtr.serialize(Flat {
                            row: row.row,
                            statistic: row.statistic,
                            weight: row.weight,
                            p_value: row.p_value,
                            reject: row.reject,
                            critical_value: outp.critical_value,
                            alpha: outp.alpha,
                            seed: outp.seed,
                            j_draws: outp.j_draws,
                            version: VERSION,
                        })
                        .map_err(CliError::from)?;
                    }
                    String::from_utf8(wtr.into_inner().map_err(|e| input_error(e.to_string()))?)
                        .map_err(|e| input_error(e.to_string()))?
                }
                other => return Err(input_error(format!("unknown format '{other}'"))),
            };
            io::emit(out.as_deref(), &text)
        }

        Command::Simulate {
            kind,
            design,
            grid,
            truth,
            sizes,
            methods,
            alpha,
            draws,
            reps,
            seed,
            out,
        } => {
            let factor_sizes = io::parse_factor_sizes(&design.factors)?;
            let effect = if design.effect.eq_ignore_ascii_case("one-way") {
                Effect::OneWay
            } else {
                fdott::design::parse_effect(&design.effect)?
            };
            let sizes = io::parse_sizes(&sizes)?;
            let truth = parse_truth(&truth)?;
            match kind.as_str() {
                "table" => {
                    let cfg = ExperimentConfig {
                        factor_sizes,
                        effect,
                        grid_side: grid,
                        sizes,
                        truth,
                        methods: parse_method_specs(&methods)?,
                        alpha,
                        j_draws: draws,
                        replications: reps,
                        seed,
                    };
                    let rows = run_experiment(&cfg)?;
                    let mut wtr = csv::Writer::from_writer(Vec::new());
                    #[derive(Serialize)]
                    struct Flat<'a> {
                        method: &'a str,
                        sizes: String,
                        mean_p: f64,
                        reject_frac: f64,
                        replications: usize,
                        j_draws: usize,
                        seed: u64,
                        version: &'a str,
                    }
                    for row in &rows {
                        wtr.serialize(Flat {
                            method: &row.method,
                            sizes: row
                                .sizes
                                .iter()
                                .map(|s| s.to_string())
                                .collect::<Vec<_>>()
                                .join("|"),
                            mean_p: row.mean_p,
                            reject_frac: row.reject_frac,
                            replications: row.replications,
                            j_draws: row.j_draws,
                            seed: row.seed,
                            version: VERSION,
                        })
                        .map_err(CliError::from)?;
                    }
                    let text =
                        String::from_utf8(wtr.into_inner().map_err(|e| input_error(e.to_string()))?)
                            .map_err(|e| input_error(e.to_string()))?;
                    io::emit(out.as_deref(), &text)
                }
                "convergence" => {
                    let cfg = ConvergenceConfig {
                        factor_sizes,
                        effect,
                        grid_side: grid,
                        sizes,
                        truth,
                        j_draws: draws,
                        seed,
                    };
                    let samples = convergence_samples(&cfg)?;
                    let mut wtr = csv::Writer::from_writer(Vec::new());
                    wtr.write_record(["set", "value"]).map_err(CliError::from)?;
                    for v in &samples.finite {
                        wtr.write_record(["finite", &format!("{v}")])
                            .map_err(CliError::from)?;
                    }
                    for v in &samples.limit {
                        wtr.write_record(["limit", &format!("{v}")])
                            .map_err(CliError::from)?;
                    }
                    let text =
                        String::from_utf8(wtr.into_inner().map_err(|e| input_error(e.to_string()))?)
                            .map_err(|e| input_error(e.to_string()))?;
                    #[derive(Serialize)]
                    struct Summary {
                        ks_distance: f64,
                        under_null: bool,
                        j_draws: usize,
                        seed: u64,
                    }
                    let summary = to_json(Summary {
                        ks_distance: samples.ks_distance,
                        under_null: samples.under_null,
                        j_draws: draws,
                        seed,
                    })?;
                    match out.as_deref() {
                        Some(path) => {
                            io::emit(Some(path), &text)?;
                            println!("{summary}");
                            Ok(())
                        }
                        None => {
                            println!("{text}");
                            eprintln!("{summary}");
                            Ok(())
                        }
                    }
                }
                other => Err(input_error(format!("unknown simulate kind '{other}'"))),
            }
        }

        Command::LocalPower {
            cost,
            null,
            perturb,
            sizes,
            flavor,
            alpha,
            draws,
            seed,
            out,
        } => {
            let c = cost.load()?;
            let base = parse_measures(&null, c.n_points())?;
            let nus = parse_measures(&perturb, c.n_points())?;
            let sizes = io::parse_sizes(&sizes)?;
            let la = LocalAlternative::new(base, nus, sizes)?;
            let k = la.base.len();
            let mut results = Vec::new();
            let flavors: Vec<&str> = match flavor.as_str() {
                "both" => vec!["fdott", "barycenter"],
                "fdott" => vec!["fdott"],
                "barycenter" | "bary" => vec!["barycenter"],
                other => return Err(input_error(format!("unknown flavor '{other}'"))),
            };
            for f in flavors {
                let lp = match f {
                    "fdott" => {
                        let l = fdott::design::one_way_contrasts(k)?;
                        local_power(&la, &LocalDesign::Fdott(&l), &c, alpha, draws, seed)?
                    }
                    _ => {
                        let w = vec![1.0 / k as f64; k];
                        local_power(&la, &LocalDesign::Barycenter(&w), &c, alpha, draws, seed)?
                    }
                };
                results.push(LocalPowerOut {
                    flavor: f.to_string(),
                    power: lp.power,
                    quantile: lp.quantile,
                    alpha,
                    j_draws: draws,
                    seed,
                });
            }
            #[derive(Serialize)]
            struct AllOut {
                results: Vec<LocalPowerOut>,
            }
            let text = to_json(AllOut { results })?;
            io::emit(out.as_deref(), &text)
        }

        Command::Oracle { instances, seed } => {
            let mut rng = fdott::rng::stream_rng(seed, fdott::rng::StreamKind::Draw, 0);
            let mut all_ok = true;
            let transport = fdott::oracle::check_transport(&mut rng, instances, 1e-9)?;
            println!(
                "transport vs dense LP: {} instances, max rel err {:.3e} -> {}",
                transport.checked,
                transport.max_rel_err,
                if transport.passed() { "ok" } else { "MISMATCH" }
            );
            all_ok &= transport.passed();
            let bary = fdott::oracle::check_barycenter(&mut rng, instances, 1e-9)?;
            println!(
                "barycenter vs dense LP: {} instances, max rel err {:.3e} -> {}",
                bary.checked,
                bary.max_rel_err,
                if bary.passed() { "ok" } else { "MISMATCH" }
            );
            all_ok &= bary.passed();
            let face = fdott::oracle::check_dual_face(&mut rng, instances, 1e-3)?;
            println!(
                "dual face vs finite differences: {} instances, max err {:.3e} -> {}",
                face.checked,
                face.max_rel_err,
                if face.passed() { "ok" } else { "MISMATCH" }
            );
            all_ok &= face.passed();
            if all_ok {
                Ok(())
            } else {
                for failure in transport
                    .failures
                    .iter()
                    .chain(&bary.failures)
                    .chain(&face.failures)
                {
                    eprintln!("oracle mismatch: {failure}");
                }
                Err(CliError {
                    code: 4,
                    message: "oracle cross-check failed".into(),
                })
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    let result = if threads > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(input_error(format!("could not build thread pool: {e}"))),
        }
    } else {
        run(cli)
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
