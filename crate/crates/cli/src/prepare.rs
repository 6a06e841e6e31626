//! Fusion, binning and encoding of the raw survey and operations files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use hybridchoice::binning::{bin_by_clusters, elbow_select, kmeans_1d, ClusterResult};
use hybridchoice::dataset::{
    encode_dummies, transit_encoding_rules, Dataset, Domain, EncodingRule, EncodingRules, VarKind,
};
use hybridchoice::specfile::sections;
use hybridchoice::stats::{chi_square_gof, mean_sd, welch_t, ChiSquareResult, TTestResult};

use crate::error::{CliError, CliResult};

/// A numeric operations column turned into labelled levels.
#[derive(Clone, Debug, PartialEq)]
pub struct BinRule {
    pub source: String,
    pub target: String,
    pub labels: Vec<String>,
}

impl BinRule {
    fn new(source: &str, target: &str, labels: &[&str]) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn default_bins() -> Vec<BinRule> {
    vec![
        BinRule::new(
            "assigned_trips",
            "assigned_level",
            &["Low", "Medium", "High"],
        ),
        BinRule::new(
            "unassigned_trips",
            "unassigned_level",
            &["Low", "Medium", "High", "Very High"],
        ),
        BinRule::new(
            "waiting_time",
            "waiting_level",
            &["Low", "Medium", "High", "Very High"],
        ),
    ]
}

#[derive(Clone, Debug)]
pub struct Rules {
    pub encoding: EncodingRules,
    pub bins: Vec<BinRule>,
}

impl Default for Rules {
    fn default() -> Self {
        Self {
            encoding: transit_encoding_rules(),
            bins: default_bins(),
        }
    }
}

fn split_list(text: &str) -> Vec<String> {
    text.split('|')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_bound(text: &str, line: usize) -> CliResult<f64> {
    let t = text.trim();
    match t {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => t
            .parse()
            .map_err(|_| CliError::Input(format!("rules line {line}: bad number `{t}`"))),
    }
}

fn parse_range(text: &str, line: usize) -> CliResult<(f64, f64)> {
    let (lo, hi) = text
        .split_once("..")
        .ok_or_else(|| CliError::Input(format!("rules line {line}: expected `lo .. hi`")))?;
    Ok((parse_bound(lo, line)?, parse_bound(hi, line)?))
}

/// Reads `[encode.<source>]` and `[bin.<source>]` sections. Either kind,
/// when present, replaces the built-in set of that kind.
///
/// ```text
/// [encode.age]
/// categories = Young | Adults | Middle-aged | Old
/// Young = Young
///
/// [encode.household_size]
/// range = 1 .. inf
/// Hhld_H = 4 .. inf
///
/// [bin.waiting_time]
/// target = waiting_level
/// labels = Low | Medium | High | Very High
/// ```
pub fn parse_rules(text: &str) -> CliResult<Rules> {
    let mut encoding = Vec::new();
    let mut bins = Vec::new();
    for section in sections(text)? {
        if let Some(source) = section.name.strip_prefix("encode.") {
            let mut rule: Option<EncodingRule> = None;
            for (line, content) in &section.lines {
                let (key, value) = content.split_once('=').ok_or_else(|| {
                    CliError::Input(format!("rules line {line}: expected `key = value`"))
                })?;
                let (key, value) = (key.trim(), value.trim());
                match (key, rule.take()) {
                    ("categories", None) => {
                        let cats = split_list(value);
                        let refs: Vec<&str> = cats.iter().map(String::as_str).collect();
                        rule = Some(EncodingRule::categorical(source, &refs));
                    }
                    ("range", None) => {
                        let (lo, hi) = parse_range(value, *line)?;
                        rule = Some(EncodingRule::numeric(source, lo, hi));
                    }
                    (_, None) => {
                        return Err(CliError::Input(format!(
                            "rules line {line}: declare `categories` or `range` first"
                        )))
                    }
                    (target, Some(r)) => {
                        let r = match r.domain {
                            Domain::Categories(_) => {
                                let vals = split_list(value);
                                let refs: Vec<&str> = vals.iter().map(String::as_str).collect();
                                r.one_of(target, &refs)
                            }
                            Domain::Range { .. } => {
                                let (lo, hi) = parse_range(value, *line)?;
                                r.range(target, lo, hi)
                            }
                        };
                        rule = Some(r);
                    }
                }
            }
            let rule = rule.ok_or_else(|| {
                CliError::Input(format!("rules line {}: empty encode section", section.line))
            })?;
            encoding.push(rule);
        } else if let Some(source) = section.name.strip_prefix("bin.") {
            let mut target = None;
            let mut labels = Vec::new();
            for (line, content) in &section.lines {
                match content.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                    Some(("target", v)) => target = Some(v.to_string()),
                    Some(("labels", v)) => labels = split_list(v),
                    _ => {
                        return Err(CliError::Input(format!(
                            "rules line {line}: expected `target = ..` or `labels = ..`"
                        )))
                    }
                }
            }
            if labels.is_empty() {
                return Err(CliError::Input(format!(
                    "rules line {}: bin section needs labels",
                    section.line
                )));
            }
            bins.push(BinRule {
                source: source.into(),
                target: target.unwrap_or_else(|| format!("{source}_level")),
                labels,
            });
        } else {
            return Err(CliError::Input(format!(
                "rules line {}: unknown section `{}`",
                section.line, section.name
            )));
        }
    }
    let mut rules = Rules::default();
    if !encoding.is_empty() {
        rules.encoding = EncodingRules { rules: encoding };
    }
    if !bins.is_empty() {
        rules.bins = bins;
    }
    Ok(rules)
}

fn present(column: Vec<Option<f64>>) -> Vec<f64> {
    column.into_iter().flatten().collect()
}

#[derive(Clone, Debug)]
pub struct BinOutcome {
    pub rule: BinRule,
    pub clusters: ClusterResult,
    /// Count suggested by the elbow rule, for comparison with the label count.
    pub elbow_k: usize,
}

#[derive(Clone, Debug)]
pub struct Prepared {
    /// Modelling file: numeric columns only.
    pub data: Dataset,
    pub bins: Vec<BinOutcome>,
}

/// Fuse, bin on the full operations sample, encode, and keep the numeric
/// columns.
pub fn prepare(
    survey: &Dataset,
    operations: &Dataset,
    rules: &Rules,
    seed: u64,
) -> CliResult<Prepared> {
    let mut fused = hybridchoice::dataset::fuse(survey, operations)?;
    let mut bins = Vec::new();
    for rule in &rules.bins {
        let full = present(operations.numeric_column(&rule.source));
        if full.len() != operations.len() {
            return Err(CliError::Input(format!(
                "operations column `{}` is missing or not numeric",
                rule.source
            )));
        }
        let clusters = kmeans_1d(&full, rule.labels.len(), seed)?;
        let elbow_k = elbow_select(&full, 8, seed)?.k;
        let values = present(fused.numeric_column(&rule.source));
        let labels = bin_by_clusters(&values, &clusters, &rule.labels)?;
        fused = fused.with_category_column(&rule.target, labels)?;
        bins.push(BinOutcome {
            rule: rule.clone(),
            clusters,
            elbow_k,
        });
    }
    let encoded = encode_dummies(&fused, &rules.encoding)?;
    let dictionary: BTreeMap<String, VarKind> = encoded
        .dictionary()
        .iter()
        .filter(|(_, k)| k.is_numeric())
        .map(|(n, k)| (n.clone(), *k))
        .collect();
    let observations = encoded
        .observations()
        .iter()
        .map(|o| {
            let mut o = o.clone();
            o.attributes.clear();
            o
        })
        .collect();
    let data = Dataset::new(observations, dictionary, encoded.alternatives().to_vec())?;
    Ok(Prepared { data, bins })
}

#[derive(Clone, Debug)]
pub struct Validation {
    /// (column, full moments, reduced moments, test)
    pub t_tests: Vec<(String, (f64, f64, usize), (f64, f64, usize), TTestResult)>,
    /// (column, categories, observed counts, expected counts, test)
    pub chi_square: Vec<(String, Vec<String>, Vec<f64>, Vec<f64>, ChiSquareResult)>,
}

/// Welch t-tests of the binned operational attributes (full operations
/// sample against the fused sample) and goodness-of-fit chi-squares of the
/// categorical survey columns (fused counts against full-survey shares).
pub fn validate_sample(
    survey: &Dataset,
    operations: &Dataset,
    fused: &Dataset,
    rules: &Rules,
) -> CliResult<Validation> {
    let mut t_tests = Vec::new();
    for rule in &rules.bins {
        let full = present(operations.numeric_column(&rule.source));
        let reduced = present(fused.numeric_column(&rule.source));
        let (m1, s1) = mean_sd(&full);
        let (m2, s2) = mean_sd(&reduced);
        let test = welch_t(m1, s1, full.len(), m2, s2, reduced.len()).or_else(|e| {
            // identical degenerate samples: no difference to test
            if m1 == m2 && s1 == 0.0 && s2 == 0.0 {
                Ok(TTestResult {
                    t: 0.0,
                    df: (full.len() + reduced.len()).saturating_sub(2) as f64,
                    p_two_sided: 1.0,
                    significant_95: false,
                })
            } else {
                Err(e)
            }
        })?;
        t_tests.push((
            rule.source.clone(),
            (m1, s1, full.len()),
            (m2, s2, reduced.len()),
            test,
        ));
    }

    let rows: HashMap<&str, &hybridchoice::dataset::Observation> = survey
        .observations()
        .iter()
        .map(|o| (o.id.as_str(), o))
        .collect();
    let mut chi_square = Vec::new();
    for (name, kind) in survey.dictionary() {
        if *kind != VarKind::Categorical {
            continue;
        }
        let full = survey.category_column(name);
        let categories: Vec<String> = full
            .iter()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if categories.len() < 2 {
            continue;
        }
        let reduced: Vec<String> = fused
            .observations()
            .iter()
            .filter_map(|o| rows.get(o.id.as_str())?.attributes.get(name).cloned())
            .collect();
        let n_full = full.iter().flatten().count() as f64;
        let n_red = reduced.len() as f64;
        let observed: Vec<f64> = categories
            .iter()
            .map(|c| reduced.iter().filter(|v| *v == c).count() as f64)
            .collect();
        let expected: Vec<f64> = categories
            .iter()
            .map(|c| full.iter().flatten().filter(|v| *v == c).count() as f64 / n_full * n_red)
            .collect();
        let test = chi_square_gof(&observed, &expected)?;
        chi_square.push((name.clone(), categories, observed, expected, test));
    }
    Ok(Validation {
        t_tests,
        chi_square,
    })
}

pub fn render_validation(v: &Validation) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Welch t-tests: full operations sample vs fused sample");
    let _ = writeln!(
        out,
        "{:<20}{:>10}{:>10}{:>7}{:>10}{:>10}{:>7}{:>9}{:>9}",
        "Attribute", "Mean", "SD", "N", "Mean", "SD", "N", "t", "p"
    );
    for (name, (m1, s1, n1), (m2, s2, n2), t) in &v.t_tests {
        let _ = writeln!(
            out,
            "{:<20}{:>10.2}{:>10.2}{:>7}{:>10.2}{:>10.2}{:>7}{:>9.3}{:>9.3}",
            name, m1, s1, n1, m2, s2, n2, t.t, t.p_two_sided
        );
    }
    out.push('\n');
    let _ = writeln!(out, "Chi-square tests: fused sample vs full survey shares");
    for (name, cats, observed, expected, test) in &v.chi_square {
        let _ = writeln!(
            out,
            "{name}: chi2 = {:.3}, df = {}, p = {:.3}",
            test.statistic, test.df, test.p
        );
        for ((c, o), e) in cats.iter().zip(observed).zip(expected) {
            let _ = writeln!(out, "  {c:<24}{o:>8.0}{e:>10.2}");
        }
    }
    out
}
