//! Input parsing and report serialization for the command-line tool.

use fdott::design::{parse_effect, ContrastMatrix, DesignSpec, Effect};
use fdott::measures::{grid_euclidean_cost, CostMatrix, GroupSamples};
use std::fmt;
use std::fs;
use std::path::Path;

/// Command-line failure with the process exit code it maps to:
/// 2 input error, 3 solver failure, 4 oracle mismatch.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<fdott::Error> for CliError {
    fn from(e: fdott::Error) -> Self {
        let code = match e {
            fdott::Error::SolverFailure { .. } => 3,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 2,
            message: format!("io error: {e}"),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError {
            code: 2,
            message: format!("csv error: {e}"),
        }
    }
}

pub fn input_error(message: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: message.into(),
    }
}

/// Loads group data from long-form CSV. Two layouts are accepted, selected
/// by the header: `group,category,count` with aggregated counts, or
/// `group,category` with one row per observation. Groups index the design
/// cells in lexicographic order; categories index the `n_points` ground
/// points.
pub fn load_group_data(
    path: &Path,
    n_groups: usize,
    n_points: usize,
) -> Result<GroupSamples, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let with_counts = match headers.as_slice() {
        [g, c, n] if g == "group" && c == "category" && n == "count" => true,
        [g, c] if g == "group" && c == "category" => false,
        other => {
            return Err(input_error(format!(
                "{}: expected header 'group,category,count' or 'group,category', found {:?}",
                path.display(),
                other
            )))
        }
    };
    let mut counts = vec![vec![0u64; n_points]; n_groups];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = line + 2;
        let parse_idx = |field: usize, name: &str, bound: usize| -> Result<usize, CliError> {
            let raw = record.get(field).ok_or_else(|| {
                input_error(format!("{}:{row}: missing {name}", path.display()))
            })?;
            let value: usize = raw.parse().map_err(|_| {
                input_error(format!("{}:{row}: bad {name} '{raw}'", path.display()))
            })?;
            if value >= bound {
                return Err(input_error(format!(
                    "{}:{row}: {name} {value} out of range (expected < {bound})",
                    path.display()
                )));
            }
            Ok(value)
        };
        let group = parse_idx(0, "group", n_groups)?;
        let category = parse_idx(1, "category", n_points)?;
        let count: u64 = if with_counts {
            let raw = record
                .get(2)
                .ok_or_else(|| input_error(format!("{}:{row}: missing count", path.display())))?;
            raw.parse().map_err(|_| {
                input_error(format!("{}:{row}: bad count '{raw}'", path.display()))
            })?
        } else {
            1
        };
        counts[group][category] += count;
    }
    Ok(GroupSamples::new(counts)?)
}

/// Grid spec `L` or `L,d` (Euclidean costs), or a CSV matrix file.
pub fn load_cost(grid: Option<&str>, cost_file: Option<&Path>) -> Result<CostMatrix, CliError> {
    match (grid, cost_file) {
        (Some(spec), None) => {
            let mut parts = spec.split(',');
            let side: usize = parts
                .next()
                .unwrap()
                .trim()
                .parse()
                .map_err(|_| input_error(format!("bad grid side in '{spec}'")))?;
            let dims: usize = match parts.next() {
                Some(d) => d
                    .trim()
                    .parse()
                    .map_err(|_| input_error(format!("bad grid dims in '{spec}'")))?,
                None => 2,
            };
            if parts.next().is_some() {
                return Err(input_error(format!("grid spec '{spec}' has extra fields")));
            }
            Ok(grid_euclidean_cost(side, dims)?)
        }
        (None, Some(path)) => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .trim(csv::Trim::All)
                .from_path(path)?;
            let mut rows = Vec::new();
            for (line, record) in reader.records().enumerate() {
                let record = record?;
                let row: Vec<f64> = record
                    .iter()
                    .map(|x| {
                        x.parse::<f64>().map_err(|_| {
                            input_error(format!(
                                "{}:{}: bad cost entry '{x}'",
                                path.display(),
                                line + 1
                            ))
                        })
                    })
                    .collect::<Result<_, _>>()?;
                rows.push(row);
            }
            Ok(CostMatrix::from_rows(rows)?)
        }
        (Some(_), Some(_)) => Err(input_error("give either --grid or --cost, not both")),
        (None, None) => Err(input_error("a cost is required: --grid L[,d] or --cost FILE")),
    }
}

/// Builds the contrast matrix from factor sizes and an effect descriptor;
/// `@file.csv` loads a raw matrix instead.
pub fn build_contrasts(
    factor_sizes: &[usize],
    effect: &str,
    scaling: Option<f64>,
) -> Result<ContrastMatrix, CliError> {
    let k: usize = factor_sizes.iter().product();
    let l = if let Some(path) = effect.strip_prefix('@') {
        let raw = fs::read_to_string(Path::new(path))?;
        let mut entries = Vec::new();
        for (line, text) in raw.lines().enumerate() {
            if text.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = text
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| input_error(format!("{path}:{}: bad entry '{x}'", line + 1)))
                })
                .collect::<Result<_, _>>()?;
            entries.push(row);
        }
        if entries.first().map(|r| r.len()) != Some(k) {
            return Err(input_error(format!(
                "{path}: contrast matrix must have {k} columns to match the design"
            )));
        }
        ContrastMatrix::new(entries, k as f64, format!("custom(@{path})"))?
    } else {
        let parsed = parse_effect(effect)?;
        match parsed {
            Effect::OneWay => {
                if factor_sizes.len() != 1 {
                    return Err(input_error(
                        "one-way effect expects a single factor; list the total group count",
                    ));
                }
                fdott::design::one_way_contrasts(k)?
            }
            other => fdott::design::factorial_contrasts(&DesignSpec {
                factor_sizes: factor_sizes.to_vec(),
                effect: other,
            })?,
        }
    };
    Ok(match scaling {
        Some(s) => l.with_scaling(s)?,
        None => l,
    })
}

pub fn parse_factor_sizes(spec: &str) -> Result<Vec<usize>, CliError> {
    spec.split(',')
        .map(|x| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| input_error(format!("bad factor size '{x}'")))
        })
        .collect()
}

pub fn parse_sizes(spec: &str) -> Result<Vec<u64>, CliError> {
    spec.split(',')
        .map(|x| {
            x.trim()
                .parse::<u64>()
                .map_err(|_| input_error(format!("bad sample size '{x}'")))
        })
        .collect()
}

/// Writes `text` to the path or stdout.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            fs::write(path, text)?;
            Ok(())
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
