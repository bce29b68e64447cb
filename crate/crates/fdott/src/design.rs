//! Contrast matrices for factorial layouts and sample-size coefficients.
//!
//! Groups are enumerated lexicographically over factor levels (first factor
//! slowest), so the columns of a contrast matrix align with data columns
//! deterministically. Effects are built from Kronecker products of
//! centering matrices `I - 11'/K_f` (factors in the effect), identity
//! blocks (conditioning factors of simple effects), and averaging rows
//! `1'/K_f` (everything else); in the two-way layout this reproduces the
//! interaction, main-effect, and simple-effect contrasts exactly.

use crate::error::{Error, Result};

/// Contrast matrix `L` with zero row sums plus the statistic's scaling
/// factor `s`.
#[derive(Debug, Clone)]
pub struct ContrastMatrix {
    entries: Vec<Vec<f64>>,
    scaling_s: f64,
    label: String,
}

impl ContrastMatrix {
    pub fn new(entries: Vec<Vec<f64>>, scaling_s: f64, label: impl Into<String>) -> Result<Self> {
        if entries.is_empty() || entries[0].is_empty() {
            return Err(Error::invalid("contrast matrix must be nonempty"));
        }
        let k = entries[0].len();
        for (m, row) in entries.iter().enumerate() {
            if row.len() != k {
                return Err(Error::dim(format!(
                    "contrast row {m} has {} columns, expected {k}",
                    row.len()
                )));
            }
            let scale = row.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let sum: f64 = row.iter().sum();
            if sum.abs() > 1e-12 * (1.0 + scale) {
                return Err(Error::invalid(format!(
                    "contrast row {m} sums to {sum}, not zero"
                )));
            }
        }
        if !(scaling_s > 0.0) {
            return Err(Error::invalid("scaling factor must be positive"));
        }
        Ok(ContrastMatrix {
            entries,
            scaling_s,
            label: label.into(),
        })
    }

    #[inline]
    pub fn m_rows(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn k_groups(&self) -> usize {
        self.entries[0].len()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.entries[m]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn scaling_s(&self) -> f64 {
        self.scaling_s
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Same contrasts with an overridden scaling factor.
    pub fn with_scaling(mut self, s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::invalid("scaling factor must be positive"));
        }
        self.scaling_s = s;
        Ok(self)
    }

    /// If every row is a `+1/-1` pair, returns the pair indices per row.
    /// Permutation sampling and the weighted max-test require this shape.
    pub fn pairwise_rows(&self) -> Option<Vec<(usize, usize)>> {
        let mut pairs = Vec::with_capacity(self.m_rows());
        for row in &self.entries {
            let mut plus = None;
            let mut minus = None;
            for (k, &x) in row.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                if (x - 1.0).abs() < 1e-12 && plus.is_none() {
                    plus = Some(k);
                } else if (x + 1.0).abs() < 1e-12 && minus.is_none() {
                    minus = Some(k);
                } else {
                    return None;
                }
            }
            pairs.push((plus?, minus?));
        }
        Some(pairs)
    }

    /// True when the rows are exactly the one-way pairwise comparisons of
    /// all groups, i.e. the null `L mu = 0` is the equality of all groups.
    pub fn is_one_way(&self) -> bool {
        let k = self.k_groups();
        match self.pairwise_rows() {
            None => false,
            Some(pairs) => {
                let mut expected = Vec::new();
                for i in 0..k {
                    for j in i + 1..k {
                        expected.push((i, j));
                    }
                }
                pairs == expected
            }
        }
    }

    /// Applies the contrast to a stack of vectors (one per group), yielding
    /// one combined vector per row.
    pub fn apply(&self, vectors: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if vectors.len() != self.k_groups() {
            return Err(Error::dim(format!(
                "{} group vectors for {} columns",
                vectors.len(),
                self.k_groups()
            )));
        }
        let n = vectors[0].len();
        let mut out = Vec::with_capacity(self.m_rows());
        for row in &self.entries {
            let mut combined = vec![0.0; n];
            for (coef, vec) in row.iter().zip(vectors) {
                if *coef != 0.0 {
                    for (c, v) in combined.iter_mut().zip(*vec) {
                        *c += coef * v;
                    }
                }
            }
            out.push(combined);
        }
        Ok(out)
    }
}

/// All pairwise comparisons of `K` groups: rows `(i, j)`, `i < j`, with `+1`
/// at `i` and `-1` at `j`; the default scaling is `K^2`.
pub fn one_way_contrasts(k: usize) -> Result<ContrastMatrix> {
    if k < 2 {
        return Err(Error::invalid("one-way layout needs at least two groups"));
    }
    let mut entries = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let mut row = vec![0.0; k];
            row[i] = 1.0;
            row[j] = -1.0;
            entries.push(row);
        }
    }
    ContrastMatrix::new(entries, (k * k) as f64, format!("one-way({k})"))
}

/// Named effect in a factorial layout. Factors are indexed from zero.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Effect {
    /// Pairwise equality of all groups (single list of cells).
    OneWay,
    /// Interaction among a set of factors (a singleton set is a main
    /// effect).
    Interaction(Vec<usize>),
    /// Main effect of one factor.
    Main(usize),
    /// Simple effect of `factor` at each level of `given`.
    Simple { factor: usize, given: usize },
}

/// Factorial layout plus the effect under test.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub factor_sizes: Vec<usize>,
    pub effect: Effect,
}

impl DesignSpec {
    pub fn n_groups(&self) -> usize {
        self.factor_sizes.iter().product()
    }
}

enum FactorBlock {
    Centering(usize),
    Identity(usize),
    Averaging(usize),
}

impl FactorBlock {
    fn rows(&self) -> usize {
        match *self {
            FactorBlock::Centering(k) | FactorBlock::Identity(k) => k,
            FactorBlock::Averaging(_) => 1,
        }
    }

    fn cols(&self) -> usize {
        match *self {
            FactorBlock::Centering(k) | FactorBlock::Identity(k) | FactorBlock::Averaging(k) => k,
        }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        match *self {
            FactorBlock::Centering(k) => {
                (if r == c { 1.0 } else { 0.0 }) - 1.0 / k as f64
            }
            FactorBlock::Identity(_) => {
                if r == c {
                    1.0
                } else {
                    0.0
                }
            }
            FactorBlock::Averaging(k) => 1.0 / k as f64,
        }
    }
}

/// Contrasts for a named factorial effect; the default scaling is the
/// number of cells (user-overridable).
pub fn factorial_contrasts(spec: &DesignSpec) -> Result<ContrastMatrix> {
    let d = spec.factor_sizes.len();
    if d == 0 || spec.factor_sizes.iter().any(|&k| k == 0) {
        return Err(Error::invalid("factor sizes must be positive"));
    }
    let check_factor = |f: usize| -> Result<()> {
        if f >= d {
            return Err(Error::invalid(format!(
                "effect names factor {f}, but the design has {d} factors"
            )));
        }
        Ok(())
    };
    let blocks: Vec<FactorBlock> = match &spec.effect {
        Effect::OneWay => {
            return one_way_contrasts(spec.n_groups());
        }
        Effect::Main(f) => {
            check_factor(*f)?;
            (0..d)
                .map(|g| {
                    if g == *f {
                        FactorBlock::Centering(spec.factor_sizes[g])
                    } else {
                        FactorBlock::Averaging(spec.factor_sizes[g])
                    }
                })
                .collect()
        }
        Effect::Interaction(set) => {
            if set.is_empty() {
                return Err(Error::invalid("interaction effect needs factors"));
            }
            let mut seen = vec![false; d];
            for &f in set {
                check_factor(f)?;
                if seen[f] {
                    return Err(Error::invalid(format!("factor {f} repeated in effect")));
                }
                seen[f] = true;
            }
            (0..d)
                .map(|g| {
                    if seen[g] {
                        FactorBlock::Centering(spec.factor_sizes[g])
                    } else {
                        FactorBlock::Averaging(spec.factor_sizes[g])
                    }
                })
                .collect()
        }
        Effect::Simple { factor, given } => {
            check_factor(*factor)?;
            check_factor(*given)?;
            if factor == given {
                return Err(Error::invalid("simple effect needs two distinct factors"));
            }
            (0..d)
                .map(|g| {
                    if g == *factor {
                        FactorBlock::Centering(spec.factor_sizes[g])
                    } else if g == *given {
                        FactorBlock::Identity(spec.factor_sizes[g])
                    } else {
                        FactorBlock::Averaging(spec.factor_sizes[g])
                    }
                })
                .collect()
        }
    };

    // Kronecker product of the per-factor blocks, rows and columns both in
    // lexicographic order over factor levels.
    let m_rows: usize = blocks.iter().map(FactorBlock::rows).product();
    let k_cols: usize = blocks.iter().map(FactorBlock::cols).product();
    let mut entries = vec![vec![0.0; k_cols]; m_rows];
    for (r, row) in entries.iter_mut().enumerate() {
        let mut ridx = Vec::with_capacity(d);
        let mut rr = r;
        for b in blocks.iter().rev() {
            ridx.push(rr % b.rows());
            rr /= b.rows();
        }
        ridx.reverse();
        for (cidx, val) in row.iter_mut().enumerate() {
            let mut cc = cidx;
            let mut cpos = Vec::with_capacity(d);
            for b in blocks.iter().rev() {
                cpos.push(cc % b.cols());
                cc /= b.cols();
            }
            cpos.reverse();
            *val = blocks
                .iter()
                .zip(ridx.iter().zip(&cpos))
                .map(|(b, (&br, &bc))| b.at(br, bc))
                .product();
        }
    }
    let label = match &spec.effect {
        Effect::OneWay => unreachable!(),
        Effect::Main(f) => format!("main({f})"),
        Effect::Interaction(set) => format!(
            "interaction({})",
            set.iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ),
        Effect::Simple { factor, given } => format!("simple({factor}|{given})"),
    };
    ContrastMatrix::new(entries, spec.n_groups() as f64, label)
}

/// Effect descriptor strings: `one-way`, `main:A`, `interaction:A,B`,
/// `simple:A|B`. Factors are letters (`A` is the first factor) or zero-based
/// indices.
pub fn parse_effect(desc: &str) -> Result<Effect> {
    fn factor_token(tok: &str) -> Result<usize> {
        let tok = tok.trim();
        if tok.len() == 1 {
            let ch = tok.chars().next().unwrap().to_ascii_uppercase();
            if ch.is_ascii_uppercase() {
                return Ok((ch as u8 - b'A') as usize);
            }
        }
        tok.parse::<usize>()
            .map_err(|_| Error::invalid(format!("unknown factor name '{tok}'")))
    }
    let desc = desc.trim();
    if desc.eq_ignore_ascii_case("one-way") || desc.eq_ignore_ascii_case("oneway") {
        return Ok(Effect::OneWay);
    }
    let (kind, args) = desc
        .split_once(':')
        .ok_or_else(|| Error::invalid(format!("unknown effect '{desc}'")))?;
    match kind.trim().to_ascii_lowercase().as_str() {
        "main" => Ok(Effect::Main(factor_token(args)?)),
        "interaction" => {
            let factors = args
                .split(',')
                .map(factor_token)
                .collect::<Result<Vec<_>>>()?;
            Ok(Effect::Interaction(factors))
        }
        "simple" => {
            let (f, g) = args
                .split_once('|')
                .ok_or_else(|| Error::invalid("simple effect syntax is simple:A|B"))?;
            Ok(Effect::Simple {
                factor: factor_token(f)?,
                given: factor_token(g)?,
            })
        }
        other => Err(Error::invalid(format!("unknown effect '{other}'"))),
    }
}

/// Sample-size coefficient `rho_n = (prod n_k) / (sum_k prod_{j != k} n_j)`,
/// evaluated in the numerically stable harmonic form `1 / sum_k (1/n_k)`.
pub fn rho(n: &[u64]) -> Result<f64> {
    if n.is_empty() || n.iter().any(|&nk| nk == 0) {
        return Err(Error::invalid("sample sizes must be positive"));
    }
    Ok(1.0 / n.iter().map(|&nk| 1.0 / nk as f64).sum::<f64>())
}

/// Plug-in estimates of the per-group size shares `delta_k = rho_n / n_k`;
/// the entries sum to one.
pub fn delta_hat(n: &[u64]) -> Result<Vec<f64>> {
    let r = rho(n)?;
    Ok(n.iter().map(|&nk| r / nk as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_way_layouts() {
        let l = one_way_contrasts(2).unwrap();
        assert_eq!(l.rows(), &[vec![1.0, -1.0]]);
        assert_eq!(l.scaling_s(), 4.0);

        let l = one_way_contrasts(3).unwrap();
        assert_eq!(
            l.rows(),
            &[
                vec![1.0, -1.0, 0.0],
                vec![1.0, 0.0, -1.0],
                vec![0.0, 1.0, -1.0]
            ]
        );
        assert_eq!(l.scaling_s(), 9.0);
        assert!(l.is_one_way());
        for row in l.rows() {
            assert_eq!(row.iter().sum::<f64>(), 0.0);
        }
        assert!(one_way_contrasts(1).is_err());
    }

    #[test]
    fn two_by_two_interaction_rows() {
        let spec = DesignSpec {
            factor_sizes: vec![2, 2],
            effect: Effect::Interaction(vec![0, 1]),
        };
        let l = factorial_contrasts(&spec).unwrap();
        assert_eq!(l.m_rows(), 4);
        assert_eq!(l.scaling_s(), 4.0);
        // Cells in order (1,1), (1,2), (2,1), (2,2): every row is
        // +-(1/4)(+1,-1,-1,+1).
        let base = [0.25, -0.25, -0.25, 0.25];
        for (r, row) in l.rows().iter().enumerate() {
            let sign = if r == 0 || r == 3 { 1.0 } else { -1.0 };
            for (a, b) in row.iter().zip(base) {
                assert!((a - sign * b).abs() < 1e-15, "row {r}: {row:?}");
            }
        }
    }

    #[test]
    fn two_by_two_main_effect_rows() {
        let spec = DesignSpec {
            factor_sizes: vec![2, 2],
            effect: Effect::Main(0),
        };
        let l = factorial_contrasts(&spec).unwrap();
        assert_eq!(l.m_rows(), 2);
        let expected = [0.25, 0.25, -0.25, -0.25];
        for (a, b) in l.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn simple_effect_rows() {
        let spec = DesignSpec {
            factor_sizes: vec![2, 2],
            effect: Effect::Simple { factor: 0, given: 1 },
        };
        let l = factorial_contrasts(&spec).unwrap();
        // Row for (i=1, j=1) realizes mu^{11} - mu^{.1}.
        let expected = [0.5, 0.0, -0.5, 0.0];
        for (a, b) in l.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn interaction_matches_direct_expansion() {
        // Symbolic-expansion oracle: the (2,2) interaction contrast applied
        // to any four measures equals the direct mean-subtraction formula.
        let spec = DesignSpec {
            factor_sizes: vec![2, 2],
            effect: Effect::Interaction(vec![0, 1]),
        };
        let l = factorial_contrasts(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 3;
        let mus: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                let t: f64 = raw.iter().sum();
                raw.iter().map(|x| x / t).collect()
            })
            .collect();
        let refs: Vec<&[f64]> = mus.iter().map(|m| m.as_slice()).collect();
        let rows = l.apply(&refs).unwrap();
        // Cell (i,j) at index 2i + j.
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..n {
                    let cell = mus[2 * i + j][p];
                    let row_mean = (mus[2 * i][p] + mus[2 * i + 1][p]) / 2.0;
                    let col_mean = (mus[j][p] + mus[2 + j][p]) / 2.0;
                    let grand = (mus[0][p] + mus[1][p] + mus[2][p] + mus[3][p]) / 4.0;
                    let direct = cell - row_mean - col_mean + grand;
                    assert!(
                        (rows[2 * i + j][p] - direct).abs() <= 1e-12,
                        "cell ({i},{j}) point {p}"
                    );
                }
            }
        }
    }

    #[test]
    fn contrasts_annihilate_replicated_measures() {
        let specs = [
            DesignSpec {
                factor_sizes: vec![2, 3],
                effect: Effect::Interaction(vec![0, 1]),
            },
            DesignSpec {
                factor_sizes: vec![2, 3],
                effect: Effect::Main(1),
            },
            DesignSpec {
                factor_sizes: vec![2, 2, 2],
                effect: Effect::Interaction(vec![0, 2]),
            },
        ];
        for spec in specs {
            let l = factorial_contrasts(&spec).unwrap();
            let k = spec.n_groups();
            let mu = vec![0.3, 0.7];
            let refs: Vec<&[f64]> = (0..k).map(|_| mu.as_slice()).collect();
            for row in l.apply(&refs).unwrap() {
                for x in row {
                    assert!(x.abs() < 1e-12);
                }
            }
            for row in l.rows() {
                assert!(row.iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn effect_descriptors_parse() {
        assert_eq!(parse_effect("one-way").unwrap(), Effect::OneWay);
        assert_eq!(parse_effect("main:A").unwrap(), Effect::Main(0));
        assert_eq!(
            parse_effect("interaction:A,B").unwrap(),
            Effect::Interaction(vec![0, 1])
        );
        assert_eq!(
            parse_effect("simple:B|A").unwrap(),
            Effect::Simple { factor: 1, given: 0 }
        );
        assert_eq!(parse_effect("main:2").unwrap(), Effect::Main(2));
        assert!(parse_effect("quadratic:A").is_err());
    }

    #[test]
    fn rho_closed_forms() {
        // K = 2 reduces to n1 n2 / (n1 + n2).
        assert_eq!(rho(&[2, 2]).unwrap(), 1.0);
        let r = rho(&[10, 40]).unwrap();
        assert!((r - 8.0).abs() < 1e-12);
        // Equal sizes give m / K.
        let r = rho(&[12, 12, 12]).unwrap();
        assert!((r - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rho_matches_product_form() {
        // Cross-check the harmonic evaluation against the product form.
        let n = [20u64, 50, 70, 30];
        let prod: f64 = n.iter().map(|&x| x as f64).product();
        let denom: f64 = (0..n.len())
            .map(|k| {
                n.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != k)
                    .map(|(_, &x)| x as f64)
                    .product::<f64>()
            })
            .sum();
        let direct = prod / denom;
        let r = rho(&n).unwrap();
        assert!((r - direct).abs() < 1e-12);
        assert!((r - 8.502_024_291_497_976).abs() < 1e-12);
    }

    #[test]
    fn delta_shares_sum_to_one() {
        let d = delta_hat(&[3, 3, 3]).unwrap();
        for x in &d {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let d = delta_hat(&[1, 1_000_000_000]).unwrap();
        assert!(d[0] > 0.999_999_998);
        let d = delta_hat(&[20, 50, 70, 30]).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for x in &d {
            assert!(*x > 0.0 && *x <= 1.0);
        }
    }
}
