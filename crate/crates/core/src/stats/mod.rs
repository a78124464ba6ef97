//! Hypothesis tests and effect sizes used by the analysis plans: Welch and
//! pooled t-tests, one- and two-way ANOVA (Type II sums of squares on
//! effect-coded OLS), OLS regression, chi-squared independence, Cohen's d.
//!
//! Zero-variance data never produces a NaN p-value; it routes to
//! [`InsufficientVariance`], and only when the governing variance estimate
//! is exactly zero.

pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use special::{
    chi2_p_upper, f_p_upper, ln_gamma, reg_incomplete_beta, reg_incomplete_gamma_lower,
    reg_incomplete_gamma_upper, t_p_two_sided, DomainError,
};

#[derive(Debug, Error, PartialEq)]
pub enum StatError {
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("empty cell: {0}")]
    EmptyCell(String),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("degenerate table: {0}")]
    DegenerateTable(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Df {
    One(f64),
    Two(f64, f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum EffectSizeKind {
    CohenD,
    EtaSquaredPartial,
    CramersV,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EffectSize {
    pub kind: EffectSizeKind,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CellSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TestResult {
    pub test_kind: String,
    pub statistic: f64,
    pub df: Df,
    pub p: f64,
    /// Sign of the planned contrast estimate: -1, 0, or +1.
    pub direction_sign: i8,
    pub effect_size: Option<EffectSize>,
    pub cell_summaries: Vec<CellSummary>,
}

/// Marker result for data whose governing variance estimate is exactly
/// zero: a p-value would be meaningless.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InsufficientVariance {
    pub zero_variance_cells: Vec<String>,
    /// Sign of the between-cell mean difference (first minus second cell).
    pub mean_difference_sign: i8,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum TestOutcome {
    Computed(TestResult),
    InsufficientVariance(InsufficientVariance),
}

impl TestOutcome {
    pub fn as_computed(&self) -> Option<&TestResult> {
        match self {
            TestOutcome::Computed(r) => Some(r),
            TestOutcome::InsufficientVariance(_) => None,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn summaries(groups: &[(&str, &[f64])]) -> Vec<CellSummary> {
    groups
        .iter()
        .map(|(label, xs)| CellSummary {
            label: label.to_string(),
            n: xs.len(),
            mean: mean(xs),
            sd: if xs.len() > 1 { variance(xs).sqrt() } else { 0.0 },
        })
        .collect()
}

/// Welch's unequal-variance t-test (two-sided). The contrast is
/// mean(a) - mean(b).
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestOutcome, StatError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatError::TooFewSamples(format!(
            "welch needs >= 2 per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a), variance(b));
    if va == 0.0 && vb == 0.0 {
        return Ok(TestOutcome::InsufficientVariance(InsufficientVariance {
            zero_variance_cells: vec!["a".into(), "b".into()],
            mean_difference_sign: sign_of(ma - mb),
        }));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let p = t_p_two_sided(t, df);
    let d = cohen_d(a, b)?;
    Ok(TestOutcome::Computed(TestResult {
        test_kind: "welch_t".into(),
        statistic: t,
        df: Df::One(df),
        p,
        direction_sign: sign_of(ma - mb),
        effect_size: Some(d),
        cell_summaries: summaries(&[("a", a), ("b", b)]),
    }))
}

/// Pooled-variance Student t-test (two-sided). Contrast mean(a) - mean(b).
pub fn student_t_test(a: &[f64], b: &[f64]) -> Result<TestOutcome, StatError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatError::TooFewSamples(format!(
            "student needs >= 2 per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a), variance(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
    if pooled == 0.0 {
        return Ok(TestOutcome::InsufficientVariance(InsufficientVariance {
            zero_variance_cells: vec!["a".into(), "b".into()],
            mean_difference_sign: sign_of(ma - mb),
        }));
    }
    let t = (ma - mb) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let p = t_p_two_sided(t, df);
    let d = cohen_d(a, b)?;
    Ok(TestOutcome::Computed(TestResult {
        test_kind: "student_t".into(),
        statistic: t,
        df: Df::One(df),
        p,
        direction_sign: sign_of(ma - mb),
        effect_size: Some(d),
        cell_summaries: summaries(&[("a", a), ("b", b)]),
    }))
}

/// One-way fixed-effects ANOVA.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<TestOutcome, StatError> {
    if groups.len() < 2 {
        return Err(StatError::TooFewSamples("anova needs >= 2 groups".into()));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(StatError::TooFewSamples(format!(
                "group {i} has {} observation(s), need >= 2",
                g.len()
            )));
        }
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let ss_between: f64 = groups
        .iter()
        .map(|g| g.len() as f64 * (mean(g) - grand).powi(2))
        .sum();
    let ss_within: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        })
        .sum();
    let df1 = (groups.len() - 1) as f64;
    let df2 = (n - groups.len()) as f64;
    if ss_within == 0.0 {
        let first_two_sign = sign_of(mean(&groups[0]) - mean(&groups[1]));
        return Ok(TestOutcome::InsufficientVariance(InsufficientVariance {
            zero_variance_cells: (0..groups.len()).map(|i| format!("group {i}")).collect(),
            mean_difference_sign: first_two_sign,
        }));
    }
    let f = (ss_between / df1) / (ss_within / df2);
    let p = f_p_upper(f, df1, df2);
    let eta2 = ss_between / (ss_between + ss_within);
    let labeled: Vec<(String, &[f64])> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| (format!("group {i}"), g.as_slice()))
        .collect();
    let refs: Vec<(&str, &[f64])> = labeled.iter().map(|(l, g)| (l.as_str(), *g)).collect();
    Ok(TestOutcome::Computed(TestResult {
        test_kind: "anova1".into(),
        statistic: f,
        df: Df::Two(df1, df2),
        p,
        direction_sign: sign_of(mean(&groups[0]) - mean(&groups[1])),
        effect_size: Some(EffectSize {
            kind: EffectSizeKind::EtaSquaredPartial,
            value: eta2,
        }),
        cell_summaries: summaries(&refs),
    }))
}

/// Pooled Cohen's d for the contrast mean(a) - mean(b).
pub fn cohen_d(a: &[f64], b: &[f64]) -> Result<EffectSize, StatError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatError::TooFewSamples("cohen_d needs >= 2 per group".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0)).sqrt();
    let value = if pooled == 0.0 {
        0.0
    } else {
        (mean(a) - mean(b)) / pooled
    };
    Ok(EffectSize {
        kind: EffectSizeKind::CohenD,
        value,
    })
}

// ---------------------------------------------------------------------------
// OLS via Householder QR
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Coefficient {
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<Coefficient>,
    pub residual_ss: f64,
    pub df_residual: f64,
    pub r_squared: f64,
}

/// Ordinary least squares by Householder QR. `design` is row-major with
/// one inner vector per observation.
pub fn ols_fit(design: &[Vec<f64>], y: &[f64]) -> Result<OlsFit, StatError> {
    let n = design.len();
    if n == 0 || n != y.len() {
        return Err(StatError::TooFewSamples("design/response size mismatch".into()));
    }
    let k = design[0].len();
    if design.iter().any(|row| row.len() != k) {
        return Err(StatError::TooFewSamples("ragged design matrix".into()));
    }
    if n <= k {
        return Err(StatError::TooFewSamples(format!(
            "need more rows ({n}) than columns ({k})"
        )));
    }

    // QR factorization in place: R ends up in the upper triangle, Q is
    // applied to the response as we go.
    let mut a: Vec<Vec<f64>> = design.to_vec();
    let mut qty: Vec<f64> = y.to_vec();
    let col_norm_max = (0..k)
        .map(|j| a.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let rank_tol = col_norm_max * 1e-12 * (n as f64).sqrt();

    for j in 0..k {
        let mut norm = 0.0;
        for row in a.iter().skip(j) {
            norm += row[j] * row[j];
        }
        let norm = norm.sqrt();
        if norm <= rank_tol {
            return Err(StatError::RankDeficient);
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..n).map(|i| a[i][j]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in j..k {
                let dot: f64 = (j..n).map(|i| v[i - j] * a[i][col]).sum();
                let scale = 2.0 * dot / vnorm2;
                for i in j..n {
                    a[i][col] -= scale * v[i - j];
                }
            }
            let dot: f64 = (j..n).map(|i| v[i - j] * qty[i]).sum();
            let scale = 2.0 * dot / vnorm2;
            for i in j..n {
                qty[i] -= scale * v[i - j];
            }
        }
        a[j][j] = alpha;
        for i in j + 1..n {
            a[i][j] = 0.0;
        }
    }

    // back substitution for beta
    let mut beta = vec![0.0; k];
    for j in (0..k).rev() {
        let mut acc = qty[j];
        for l in j + 1..k {
            acc -= a[j][l] * beta[l];
        }
        if a[j][j].abs() <= rank_tol {
            return Err(StatError::RankDeficient);
        }
        beta[j] = acc / a[j][j];
    }

    let residual_ss: f64 = qty[k..].iter().map(|r| r * r).sum();
    let df_residual = (n - k) as f64;
    let sigma2 = residual_ss / df_residual;

    // (X'X)^-1 = R^-1 R^-T; invert R by back substitution on unit vectors
    let mut r_inv = vec![vec![0.0; k]; k];
    for col in 0..k {
        for j in (0..=col).rev() {
            let mut acc = if j == col { 1.0 } else { 0.0 };
            for l in j + 1..=col {
                acc -= a[j][l] * r_inv[l][col];
            }
            r_inv[j][col] = acc / a[j][j];
        }
    }
    let coefficients = (0..k)
        .map(|j| {
            let xtx_inv_jj: f64 = (j..k).map(|l| r_inv[j][l] * r_inv[j][l]).sum();
            let se = (sigma2 * xtx_inv_jj).sqrt();
            let t = if se == 0.0 { 0.0 } else { beta[j] / se };
            Coefficient {
                estimate: beta[j],
                se,
                t,
                p: if se == 0.0 { 1.0 } else { t_p_two_sided(t, df_residual) },
            }
        })
        .collect();

    let y_mean = mean(y);
    let tss: f64 = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();
    let r_squared = if tss == 0.0 {
        0.0
    } else {
        1.0 - residual_ss / tss
    };
    Ok(OlsFit {
        coefficients,
        residual_ss,
        df_residual,
        r_squared,
    })
}

fn rss_of(design: &[Vec<f64>], y: &[f64]) -> Result<f64, StatError> {
    Ok(ols_fit(design, y)?.residual_ss)
}

/// Per-term result of a two-way ANOVA.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TwoWayAnova {
    pub factor_a: TestResult,
    pub factor_b: TestResult,
    pub interaction: TestResult,
}

/// Two-way fixed-effects ANOVA on effect-coded OLS with Type II sums of
/// squares (equals the balanced decomposition when cells are balanced).
///
/// `rows` holds (level of A, level of B, response) per observation.
pub fn two_way_anova(rows: &[(String, String, f64)]) -> Result<TwoWayAnova, StatError> {
    let levels_a = distinct(rows.iter().map(|r| r.0.as_str()));
    let levels_b = distinct(rows.iter().map(|r| r.1.as_str()));
    if levels_a.len() < 2 || levels_b.len() < 2 {
        return Err(StatError::TooFewSamples(
            "two-way anova needs >= 2 levels per factor".into(),
        ));
    }
    for la in &levels_a {
        for lb in &levels_b {
            if !rows.iter().any(|r| r.0 == *la && r.1 == *lb) {
                return Err(StatError::EmptyCell(format!("cell ({la}, {lb}) is empty")));
            }
        }
    }

    let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let a_cols = effect_code(&levels_a, rows.iter().map(|r| r.0.as_str()));
    let b_cols = effect_code(&levels_b, rows.iter().map(|r| r.1.as_str()));
    let n = rows.len();

    let build = |with_a: bool, with_b: bool, with_ab: bool| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut row = vec![1.0];
                if with_a {
                    row.extend(a_cols.iter().map(|c| c[i]));
                }
                if with_b {
                    row.extend(b_cols.iter().map(|c| c[i]));
                }
                if with_ab {
                    for ca in &a_cols {
                        for cb in &b_cols {
                            row.push(ca[i] * cb[i]);
                        }
                    }
                }
                row
            })
            .collect()
    };

    let full = build(true, true, true);
    let p_full = full[0].len();
    let rss_full = rss_of(&full, &y)?;
    let rss_ab = rss_of(&build(true, true, false), &y)?;
    let rss_a_only = rss_of(&build(true, false, false), &y)?;
    let rss_b_only = rss_of(&build(false, true, false), &y)?;

    let df_err = (n - p_full) as f64;
    if df_err <= 0.0 {
        return Err(StatError::TooFewSamples("no residual degrees of freedom".into()));
    }
    let df_a = (levels_a.len() - 1) as f64;
    let df_b = (levels_b.len() - 1) as f64;
    let df_ab = df_a * df_b;
    let mse = rss_full / df_err;
    if mse == 0.0 {
        return Err(StatError::DegenerateTable(
            "zero residual variance in two-way anova".into(),
        ));
    }

    let ss_a = (rss_b_only - rss_ab).max(0.0);
    let ss_b = (rss_a_only - rss_ab).max(0.0);
    let ss_ab = (rss_ab - rss_full).max(0.0);

    let term = |name: &str, ss: f64, df_term: f64, marginals: Vec<CellSummary>, sign: i8| {
        let f = (ss / df_term) / mse;
        TestResult {
            test_kind: format!("anova2:{name}"),
            statistic: f,
            df: Df::Two(df_term, df_err),
            p: f_p_upper(f, df_term, df_err),
            direction_sign: sign,
            effect_size: Some(EffectSize {
                kind: EffectSizeKind::EtaSquaredPartial,
                value: ss / (ss + rss_full),
            }),
            cell_summaries: marginals,
        }
    };

    let marginal = |which: usize, levels: &[String]| -> Vec<CellSummary> {
        levels
            .iter()
            .map(|l| {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| if which == 0 { r.0 == *l } else { r.1 == *l })
                    .map(|r| r.2)
                    .collect();
                CellSummary {
                    label: l.clone(),
                    n: vals.len(),
                    mean: mean(&vals),
                    sd: if vals.len() > 1 { variance(&vals).sqrt() } else { 0.0 },
                }
            })
            .collect()
    };

    let ma = marginal(0, &levels_a);
    let mb = marginal(1, &levels_b);
    let sign_a = sign_of(ma[0].mean - ma[1].mean);
    let sign_b = sign_of(mb[0].mean - mb[1].mean);
    // interaction sign: difference of simple effects across the first two
    // levels of B
    let cell_mean = |la: &str, lb: &str| {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.0 == la && r.1 == lb)
            .map(|r| r.2)
            .collect();
        mean(&vals)
    };
    let sign_ab = sign_of(
        (cell_mean(&levels_a[0], &levels_b[0]) - cell_mean(&levels_a[1], &levels_b[0]))
            - (cell_mean(&levels_a[0], &levels_b[1]) - cell_mean(&levels_a[1], &levels_b[1])),
    );

    Ok(TwoWayAnova {
        factor_a: term("a", ss_a, df_a, ma, sign_a),
        factor_b: term("b", ss_b, df_b, mb, sign_b),
        interaction: term("axb", ss_ab, df_ab, vec![], sign_ab),
    })
}

fn distinct<'a>(it: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = Vec::new();
    for v in it {
        if !seen.iter().any(|s: &String| s == v) {
            seen.push(v.to_string());
        }
    }
    seen.sort();
    seen
}

/// Sum-to-zero effect coding: levels[0..len-1] each get a column that is 1
/// for that level, -1 for the last level, 0 otherwise.
fn effect_code<'a>(levels: &[String], values: impl Iterator<Item = &'a str>) -> Vec<Vec<f64>> {
    let values: Vec<&str> = values.collect();
    (0..levels.len() - 1)
        .map(|j| {
            values
                .iter()
                .map(|v| {
                    if *v == levels[j] {
                        1.0
                    } else if *v == levels[levels.len() - 1] {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Pearson chi-squared test of independence on an r x c count table, with
/// Cramér's V.
pub fn chi_square_independence(table: &[Vec<u64>]) -> Result<TestResult, StatError> {
    let r = table.len();
    if r < 2 || table[0].len() < 2 {
        return Err(StatError::DegenerateTable("need at least a 2x2 table".into()));
    }
    let c = table[0].len();
    if table.iter().any(|row| row.len() != c) {
        return Err(StatError::DegenerateTable("ragged table".into()));
    }
    let row_totals: Vec<f64> = table.iter().map(|row| row.iter().sum::<u64>() as f64).collect();
    let col_totals: Vec<f64> = (0..c)
        .map(|j| table.iter().map(|row| row[j]).sum::<u64>() as f64)
        .collect();
    if row_totals.iter().any(|t| *t == 0.0) || col_totals.iter().any(|t| *t == 0.0) {
        return Err(StatError::DegenerateTable(
            "every row and column total must be positive".into(),
        ));
    }
    let n: f64 = row_totals.iter().sum();
    let mut x2 = 0.0;
    for i in 0..r {
        for j in 0..c {
            let expected = row_totals[i] * col_totals[j] / n;
            let diff = table[i][j] as f64 - expected;
            x2 += diff * diff / expected;
        }
    }
    let df = ((r - 1) * (c - 1)) as f64;
    let p = chi2_p_upper(x2, df);
    let v = (x2 / (n * (r.min(c) as f64 - 1.0))).sqrt();
    // direction: sign of the association in the leading 2x2 block
    let sign = sign_of(
        table[0][0] as f64 * table[1][1] as f64 - table[0][1] as f64 * table[1][0] as f64,
    );
    Ok(TestResult {
        test_kind: "chi2".into(),
        statistic: x2,
        df: Df::One(df),
        p,
        direction_sign: sign,
        effect_size: Some(EffectSize {
            kind: EffectSizeKind::CramersV,
            value: v,
        }),
        cell_summaries: vec![],
    })
}
