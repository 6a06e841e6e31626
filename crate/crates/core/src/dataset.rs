//! Per-respondent records, CSV ingestion, key-based fusion of survey and
//! operational records, and dummy-variable encoding.
//!
//! Identifier columns are hashed on ingestion when the schema asks for it, so
//! raw keys (e-mail addresses) never leave the loader.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Kind of a column in the variable dictionary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VarKind {
    /// 0/1 dummy.
    Binary,
    Continuous,
    /// Five-point response; missing cells are allowed.
    Likert,
    /// Raw text category, consumed by [`encode_dummies`] or binning.
    Categorical,
}

impl VarKind {
    pub fn is_numeric(self) -> bool {
        !matches!(self, VarKind::Categorical)
    }
}

impl fmt::Display for VarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VarKind::Binary => "binary",
            VarKind::Continuous => "continuous",
            VarKind::Likert => "likert",
            VarKind::Categorical => "categorical",
        };
        f.write_str(s)
    }
}

impl FromStr for VarKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary" => Ok(VarKind::Binary),
            "continuous" => Ok(VarKind::Continuous),
            "likert" => Ok(VarKind::Likert),
            "categorical" => Ok(VarKind::Categorical),
            other => Err(Error::Schema(format!("unknown variable kind `{other}`"))),
        }
    }
}

/// One choice alternative: its 1-based code and label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alternative {
    pub index: u32,
    pub label: String,
}

impl Alternative {
    pub fn new(index: u32, label: impl Into<String>) -> Self {
        Self {
            index,
            label: label.into(),
        }
    }
}

/// FRT = 1, ODT = 2, Indifferent = 3.
pub fn default_alternatives() -> Vec<Alternative> {
    vec![
        Alternative::new(1, "FRT"),
        Alternative::new(2, "ODT"),
        Alternative::new(3, "Indifferent"),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// Opaque key (hashed when loaded from a raw key column).
    pub id: String,
    pub choice: Option<u32>,
    pub covariates: BTreeMap<String, f64>,
    /// Likert responses; absent entries are missing answers.
    pub indicators: BTreeMap<String, f64>,
    /// Raw categorical cells.
    pub attributes: BTreeMap<String, String>,
    pub weight: f64,
}

impl Observation {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            choice: None,
            covariates: BTreeMap::new(),
            indicators: BTreeMap::new(),
            attributes: BTreeMap::new(),
            weight: 1.0,
        }
    }

    pub fn with_choice(mut self, choice: u32) -> Self {
        self.choice = Some(choice);
        self
    }

    pub fn with_covariate(mut self, name: impl Into<String>, value: f64) -> Self {
        self.covariates.insert(name.into(), value);
        self
    }

    pub fn with_indicator(mut self, name: impl Into<String>, value: f64) -> Self {
        self.indicators.insert(name.into(), value);
        self
    }

    pub fn with_attribute(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(name.into(), value.into());
        self
    }

    /// Numeric value of a covariate or indicator.
    pub fn value(&self, name: &str) -> Option<f64> {
        self.covariates
            .get(name)
            .or_else(|| self.indicators.get(name))
            .copied()
    }
}

/// Immutable collection of observations with their dictionary and
/// alternative set.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    dictionary: BTreeMap<String, VarKind>,
    alternatives: Vec<Alternative>,
}

impl Dataset {
    pub fn new(
        observations: Vec<Observation>,
        dictionary: BTreeMap<String, VarKind>,
        alternatives: Vec<Alternative>,
    ) -> Result<Self> {
        if alternatives.len() < 2 {
            return Err(Error::Schema(format!(
                "at least two alternatives are required, found {}",
                alternatives.len()
            )));
        }
        let codes: BTreeSet<u32> = alternatives.iter().map(|a| a.index).collect();
        if codes.len() != alternatives.len() {
            return Err(Error::Schema("alternative codes must be unique".into()));
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (row, obs) in observations.iter().enumerate() {
            if let Some(first) = seen.insert(obs.id.as_str(), row + 1) {
                return Err(Error::DuplicateId {
                    id: obs.id.clone(),
                    first,
                    second: row + 1,
                });
            }
            if let Some(c) = obs.choice {
                if !codes.contains(&c) {
                    return Err(Error::Parse {
                        row: row + 1,
                        column: "choice".into(),
                        value: c.to_string(),
                    });
                }
            }
            for (name, &v) in &obs.indicators {
                if !(1.0..=5.0).contains(&v) {
                    return Err(Error::Parse {
                        row: row + 1,
                        column: name.clone(),
                        value: v.to_string(),
                    });
                }
            }
            if !(obs.weight.is_finite() && obs.weight > 0.0) {
                return Err(Error::Parse {
                    row: row + 1,
                    column: "weight".into(),
                    value: obs.weight.to_string(),
                });
            }
        }
        Ok(Self {
            observations,
            dictionary,
            alternatives,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn dictionary(&self) -> &BTreeMap<String, VarKind> {
        &self.dictionary
    }

    pub fn alternatives(&self) -> &[Alternative] {
        &self.alternatives
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Position of an alternative code in [`Dataset::alternatives`].
    pub fn alternative_position(&self, code: u32) -> Option<usize> {
        self.alternatives.iter().position(|a| a.index == code)
    }

    /// Chosen-alternative counts in alternative order.
    pub fn choice_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.alternatives.len()];
        for obs in &self.observations {
            if let Some(pos) = obs.choice.and_then(|c| self.alternative_position(c)) {
                counts[pos] += 1;
            }
        }
        counts
    }

    /// Numeric column (covariate or indicator) with missing cells as `None`.
    pub fn numeric_column(&self, name: &str) -> Vec<Option<f64>> {
        self.observations.iter().map(|o| o.value(name)).collect()
    }

    pub fn category_column(&self, name: &str) -> Vec<Option<String>> {
        self.observations
            .iter()
            .map(|o| o.attributes.get(name).cloned())
            .collect()
    }

    /// Copy with observations ordered by id, for order-insensitive comparison.
    pub fn sorted_by_id(&self) -> Dataset {
        let mut observations = self.observations.clone();
        observations.sort_by(|a, b| a.id.cmp(&b.id));
        Dataset {
            observations,
            dictionary: self.dictionary.clone(),
            alternatives: self.alternatives.clone(),
        }
    }

    /// Each observation repeated `times` times (ids suffixed `#k`).
    pub fn replicated(&self, times: usize) -> Dataset {
        let mut observations = Vec::with_capacity(self.len() * times);
        for obs in &self.observations {
            for k in 0..times {
                let mut o = obs.clone();
                if k > 0 {
                    o.id = format!("{}#{k}", obs.id);
                }
                observations.push(o);
            }
        }
        Dataset {
            observations,
            dictionary: self.dictionary.clone(),
            alternatives: self.alternatives.clone(),
        }
    }

    /// Adds a numeric column computed per observation.
    pub fn with_covariate_column(
        &self,
        name: &str,
        kind: VarKind,
        values: impl IntoIterator<Item = f64>,
    ) -> Result<Dataset> {
        let values: Vec<f64> = values.into_iter().collect();
        if values.len() != self.len() {
            return Err(Error::Arity {
                what: format!("column `{name}`"),
                expected: self.len(),
                found: values.len(),
            });
        }
        let mut out = self.clone();
        for (obs, v) in out.observations.iter_mut().zip(values) {
            obs.covariates.insert(name.to_string(), v);
        }
        out.dictionary.insert(name.to_string(), kind);
        Ok(out)
    }

    /// Adds a categorical column computed per observation.
    pub fn with_category_column(
        &self,
        name: &str,
        values: impl IntoIterator<Item = String>,
    ) -> Result<Dataset> {
        let values: Vec<String> = values.into_iter().collect();
        if values.len() != self.len() {
            return Err(Error::Arity {
                what: format!("column `{name}`"),
                expected: self.len(),
                found: values.len(),
            });
        }
        let mut out = self.clone();
        for (obs, v) in out.observations.iter_mut().zip(values) {
            obs.attributes.insert(name.to_string(), v);
        }
        out.dictionary
            .insert(name.to_string(), VarKind::Categorical);
        Ok(out)
    }
}

/// Column layout expected by [`load_csv`].
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub id_column: String,
    /// Replace the key by its SHA-256 digest on ingestion.
    pub hash_id: bool,
    pub choice_column: Option<String>,
    pub weight_column: Option<String>,
    pub variables: Vec<(String, VarKind)>,
    pub alternatives: Vec<Alternative>,
}

impl Schema {
    pub fn new(id_column: impl Into<String>) -> Self {
        Self {
            id_column: id_column.into(),
            hash_id: false,
            choice_column: None,
            weight_column: None,
            variables: Vec::new(),
            alternatives: default_alternatives(),
        }
    }

    pub fn hashed(mut self) -> Self {
        self.hash_id = true;
        self
    }

    pub fn with_choice(mut self, column: impl Into<String>) -> Self {
        self.choice_column = Some(column.into());
        self
    }

    pub fn with_weight(mut self, column: impl Into<String>) -> Self {
        self.weight_column = Some(column.into());
        self
    }

    pub fn with_variable(mut self, name: impl Into<String>, kind: VarKind) -> Self {
        self.variables.push((name.into(), kind));
        self
    }

    pub fn with_alternatives(mut self, alternatives: Vec<Alternative>) -> Self {
        self.alternatives = alternatives;
        self
    }

    /// Schema for a processed file: every column other than id, choice and
    /// weight is continuous, except the named Likert indicators.
    pub fn infer(header: &[String], id_column: &str, likert: &[String]) -> Self {
        let mut schema = Schema::new(id_column);
        for col in header {
            match col.as_str() {
                c if c == id_column => {}
                "choice" => schema.choice_column = Some("choice".into()),
                "weight" => schema.weight_column = Some("weight".into()),
                c => {
                    let kind = if likert.iter().any(|l| l == c) {
                        VarKind::Likert
                    } else {
                        VarKind::Continuous
                    };
                    schema.variables.push((c.to_string(), kind));
                }
            }
        }
        schema
    }
}

/// Opaque identifier derived from a raw key: hex SHA-256 of the trimmed,
/// lower-cased key, truncated to 128 bits.
pub fn hash_key(raw: &str) -> String {
    let digest = Sha256::digest(raw.trim().to_lowercase().as_bytes());
    hex::encode(&digest[..16])
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    read_csv(File::open(path)?, schema)
}

/// Header names of a CSV file.
pub fn read_header(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?);
    Ok(reader.headers()?.iter().map(str::to_string).collect())
}

pub fn read_csv<R: Read>(input: R, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };

    let id_col = position(&schema.id_column)?;
    let choice_col = schema.choice_column.as_deref().map(position).transpose()?;
    let weight_col = schema.weight_column.as_deref().map(position).transpose()?;
    let var_cols = schema
        .variables
        .iter()
        .map(|(name, kind)| Ok((name.as_str(), *kind, position(name)?)))
        .collect::<Result<Vec<_>>>()?;

    let parse_num = |row: usize, column: &str, cell: &str| -> Result<f64> {
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                row,
                column: column.to_string(),
                value: cell.to_string(),
            })
    };

    let mut observations = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cell = |c: usize| record.get(c).unwrap_or("");
        let raw_id = cell(id_col);
        if raw_id.is_empty() {
            return Err(Error::Parse {
                row,
                column: schema.id_column.clone(),
                value: String::new(),
            });
        }
        let id = if schema.hash_id {
            hash_key(raw_id)
        } else {
            raw_id.to_string()
        };
        if let Some(first) = seen.insert(id.clone(), row) {
            return Err(Error::DuplicateId {
                id,
                first,
                second: row,
            });
        }
        let mut obs = Observation::new(id);
        if let Some(c) = choice_col {
            let text = cell(c);
            let code = text.parse::<u32>().map_err(|_| Error::Parse {
                row,
                column: header[c].clone(),
                value: text.to_string(),
            })?;
            if !schema.alternatives.iter().any(|a| a.index == code) {
                return Err(Error::Parse {
                    row,
                    column: header[c].clone(),
                    value: text.to_string(),
                });
            }
            obs.choice = Some(code);
        }
        if let Some(c) = weight_col {
            obs.weight = parse_num(row, &header[c], cell(c))?;
        }
        for &(name, kind, c) in &var_cols {
            let text = cell(c);
            match kind {
                VarKind::Binary => {
                    let v = parse_num(row, name, text)?;
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Parse {
                            row,
                            column: name.to_string(),
                            value: text.to_string(),
                        });
                    }
                    obs.covariates.insert(name.to_string(), v);
                }
                VarKind::Continuous => {
                    obs.covariates
                        .insert(name.to_string(), parse_num(row, name, text)?);
                }
                VarKind::Likert => {
                    if !text.is_empty() {
                        let v = parse_num(row, name, text)?;
                        if !(1.0..=5.0).contains(&v) {
                            return Err(Error::Parse {
                                row,
                                column: name.to_string(),
                                value: text.to_string(),
                            });
                        }
                        obs.indicators.insert(name.to_string(), v);
                    }
                }
                VarKind::Categorical => {
                    if !text.is_empty() {
                        obs.attributes.insert(name.to_string(), text.to_string());
                    }
                }
            }
        }
        observations.push(obs);
    }

    let dictionary = schema.variables.iter().cloned().collect();
    Dataset::new(observations, dictionary, schema.alternatives.clone())
}

/// Writes `data` in the format [`read_csv`] ingests: `id`, `choice` (when
/// any observation has one), dictionary columns in name order, and `weight`
/// when any weight differs from 1.
pub fn write_csv<W: Write>(data: &Dataset, output: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    let has_choice = data.observations.iter().any(|o| o.choice.is_some());
    let has_weight = data.observations.iter().any(|o| o.weight != 1.0);

    let mut header = vec!["id".to_string()];
    if has_choice {
        header.push("choice".into());
    }
    header.extend(data.dictionary.keys().cloned());
    if has_weight {
        header.push("weight".into());
    }
    writer.write_record(&header)?;

    for obs in &data.observations {
        let mut row = vec![obs.id.clone()];
        if has_choice {
            row.push(obs.choice.map(|c| c.to_string()).unwrap_or_default());
        }
        for (name, kind) in &data.dictionary {
            let cell = match kind {
                VarKind::Categorical => obs.attributes.get(name).cloned().unwrap_or_default(),
                _ => obs.value(name).map(|v| v.to_string()).unwrap_or_default(),
            };
            row.push(cell);
        }
        if has_weight {
            row.push(obs.weight.to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Schema that reads back a file produced by [`write_csv`] for `data`.
pub fn schema_for(data: &Dataset) -> Schema {
    let mut schema = Schema::new("id").with_alternatives(data.alternatives.clone());
    if data.observations.iter().any(|o| o.choice.is_some()) {
        schema.choice_column = Some("choice".into());
    }
    if data.observations.iter().any(|o| o.weight != 1.0) {
        schema.weight_column = Some("weight".into());
    }
    schema.variables = data
        .dictionary
        .iter()
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    schema
}

/// Inner join of two datasets on their (already opaque) ids.
///
/// Observations keep the survey order. Columns present in both inputs must
/// agree for every shared id; otherwise a fusion conflict lists the ids.
pub fn fuse(survey: &Dataset, operations: &Dataset) -> Result<Dataset> {
    let mut dictionary = survey.dictionary.clone();
    for (name, kind) in &operations.dictionary {
        match dictionary.get(name) {
            Some(existing) if existing != kind => {
                return Err(Error::Schema(format!(
                    "column `{name}` is {existing} in one input and {kind} in the other"
                )))
            }
            _ => {
                dictionary.insert(name.clone(), *kind);
            }
        }
    }

    let by_id: HashMap<&str, &Observation> = operations
        .observations
        .iter()
        .map(|o| (o.id.as_str(), o))
        .collect();

    let mut conflicts: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut observations = Vec::new();
    for left in &survey.observations {
        let Some(right) = by_id.get(left.id.as_str()) else {
            continue;
        };
        let mut merged = left.clone();
        merge_map(
            &mut merged.covariates,
            &right.covariates,
            &left.id,
            &mut conflicts,
        );
        merge_map(
            &mut merged.indicators,
            &right.indicators,
            &left.id,
            &mut conflicts,
        );
        merge_map(
            &mut merged.attributes,
            &right.attributes,
            &left.id,
            &mut conflicts,
        );
        match (left.choice, right.choice) {
            (Some(a), Some(b)) if a != b => conflicts
                .entry("choice".into())
                .or_default()
                .push(left.id.clone()),
            (None, Some(b)) => merged.choice = Some(b),
            _ => {}
        }
        observations.push(merged);
    }

    if let Some((column, ids)) = conflicts.into_iter().next() {
        return Err(Error::FusionConflict { column, ids });
    }
    Dataset::new(observations, dictionary, survey.alternatives.clone())
}

fn merge_map<V: Clone + PartialEq>(
    into: &mut BTreeMap<String, V>,
    from: &BTreeMap<String, V>,
    id: &str,
    conflicts: &mut BTreeMap<String, Vec<String>>,
) {
    for (k, v) in from {
        match into.get(k) {
            Some(existing) if existing != v => {
                conflicts.entry(k.clone()).or_default().push(id.to_string())
            }
            Some(_) => {}
            None => {
                into.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Admissible values of an encoding source column.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Categories(BTreeSet<String>),
    /// Closed numeric interval; bounds may be infinite.
    Range {
        lo: f64,
        hi: f64,
    },
}

/// Condition under which a target dummy is 1.
#[derive(Clone, Debug, PartialEq)]
pub enum Predicate {
    OneOf(BTreeSet<String>),
    Range { lo: f64, hi: f64 },
}

/// One categorical source column and its group of mutually exclusive
/// target dummies. Values matching no target form the reference level.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingRule {
    pub source: String,
    pub domain: Domain,
    pub targets: Vec<(String, Predicate)>,
}

impl EncodingRule {
    pub fn categorical(source: &str, categories: &[&str]) -> Self {
        Self {
            source: source.to_string(),
            domain: Domain::Categories(categories.iter().map(|s| s.to_string()).collect()),
            targets: Vec::new(),
        }
    }

    pub fn numeric(source: &str, lo: f64, hi: f64) -> Self {
        Self {
            source: source.to_string(),
            domain: Domain::Range { lo, hi },
            targets: Vec::new(),
        }
    }

    pub fn one_of(mut self, target: &str, values: &[&str]) -> Self {
        self.targets.push((
            target.to_string(),
            Predicate::OneOf(values.iter().map(|s| s.to_string()).collect()),
        ));
        self
    }

    pub fn range(mut self, target: &str, lo: f64, hi: f64) -> Self {
        self.targets
            .push((target.to_string(), Predicate::Range { lo, hi }));
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodingRules {
    pub rules: Vec<EncodingRule>,
}

enum SourceValue<'a> {
    Text(&'a str),
    Number(f64),
}

/// Applies every rule, adding one binary covariate per target.
pub fn encode_dummies(raw: &Dataset, rules: &EncodingRules) -> Result<Dataset> {
    let mut out = raw.clone();
    for rule in &rules.rules {
        for (target, _) in &rule.targets {
            match out.dictionary.get(target) {
                Some(VarKind::Binary) | None => {}
                Some(kind) => {
                    return Err(Error::Encoding {
                        column: target.clone(),
                        message: format!("target already exists as a {kind} column"),
                    })
                }
            }
        }
        for obs in out.observations.iter_mut() {
            let value = source_value(obs, rule)?;
            let mut hits = 0;
            let mut updates = Vec::with_capacity(rule.targets.len());
            for (target, predicate) in &rule.targets {
                let on = match (predicate, &value) {
                    (Predicate::OneOf(set), SourceValue::Text(t)) => set.contains(*t),
                    (Predicate::OneOf(set), SourceValue::Number(v)) => {
                        set.iter().any(|s| s.parse::<f64>().ok() == Some(*v))
                    }
                    (Predicate::Range { lo, hi }, SourceValue::Number(v)) => *lo <= *v && *v <= *hi,
                    (Predicate::Range { lo, hi }, SourceValue::Text(t)) => t
                        .parse::<f64>()
                        .map(|v| *lo <= v && v <= *hi)
                        .unwrap_or(false),
                };
                hits += on as usize;
                updates.push((target.clone(), if on { 1.0 } else { 0.0 }));
            }
            if hits > 1 {
                return Err(Error::Encoding {
                    column: rule.source.clone(),
                    message: format!("value for id {} matches {hits} exclusive targets", obs.id),
                });
            }
            obs.covariates.extend(updates);
        }
        for (target, _) in &rule.targets {
            out.dictionary.insert(target.clone(), VarKind::Binary);
        }
    }
    Ok(out)
}

fn source_value<'a>(obs: &'a Observation, rule: &EncodingRule) -> Result<SourceValue<'a>> {
    let missing = || Error::Encoding {
        column: rule.source.clone(),
        message: format!("missing value for id {}", obs.id),
    };
    match &rule.domain {
        Domain::Categories(set) => {
            let text = obs.attributes.get(&rule.source).map(String::as_str);
            let value = match text {
                Some(t) => SourceValue::Text(t),
                None => SourceValue::Number(obs.value(&rule.source).ok_or_else(missing)?),
            };
            let admissible = match &value {
                SourceValue::Text(t) => set.contains(*t),
                SourceValue::Number(v) => set.iter().any(|s| s.parse::<f64>().ok() == Some(*v)),
            };
            if !admissible {
                let shown = match value {
                    SourceValue::Text(t) => t.to_string(),
                    SourceValue::Number(v) => v.to_string(),
                };
                return Err(Error::Encoding {
                    column: rule.source.clone(),
                    message: format!("value `{shown}` outside the declared categories"),
                });
            }
            Ok(value)
        }
        Domain::Range { lo, hi } => {
            let v = match obs.value(&rule.source) {
                Some(v) => v,
                None => {
                    let text = obs.attributes.get(&rule.source).ok_or_else(missing)?;
                    text.parse::<f64>().map_err(|_| Error::Encoding {
                        column: rule.source.clone(),
                        message: format!("non-numeric value `{text}`"),
                    })?
                }
            };
            if !(*lo <= v && v <= *hi) {
                return Err(Error::Encoding {
                    column: rule.source.clone(),
                    message: format!("value {v} outside [{lo}, {hi}]"),
                });
            }
            Ok(SourceValue::Number(v))
        }
    }
}

/// Encoding of the raw survey and binned operational columns into the
/// modelling dummies (Male, Young, LowIncome, ..., Waiting_H).
pub fn transit_encoding_rules() -> EncodingRules {
    let inf = f64::INFINITY;
    EncodingRules {
        rules: vec![
            EncodingRule::categorical("age", &["Young", "Adults", "Middle-aged", "Old"])
                .one_of("Young", &["Young"])
                .one_of("MiddleAge", &["Middle-aged"]),
            EncodingRule::categorical("gender", &["Male", "Female", "Other"])
                .one_of("Male", &["Male"]),
            EncodingRule::categorical(
                "marital",
                &["Single", "Married", "Widowed", "Divorced", "Other"],
            )
            .one_of("Single", &["Single"]),
            EncodingRule::categorical(
                "education",
                &[
                    "No Formal Education",
                    "Primary School",
                    "Secondary School",
                    "Diploma",
                    "Undergraduate",
                    "Graduate",
                ],
            )
            .one_of("Sec_school", &["Secondary School"])
            .one_of("HigherEdu", &["Undergraduate", "Graduate"]),
            EncodingRule::categorical(
                "income",
                &[
                    "Under 10",
                    "10 to 19.999",
                    "20 to 29.999",
                    "30 to 39.999",
                    "40 to 49.999",
                    "50 to 59.999",
                    "60 and over",
                ],
            )
            .one_of("LowIncome", &["Under 10", "10 to 19.999"])
            .one_of("HighIncome", &["50 to 59.999", "60 and over"]),
            EncodingRule::numeric("household_size", 1.0, inf)
                .range("Hhld_L", 1.0, 3.0)
                .range("Hhld_H", 4.0, inf),
            EncodingRule::numeric("cars", 0.0, inf).range("Car", 1.0, inf),
            EncodingRule::categorical(
                "purpose",
                &["Work-Based", "Nonwork-Based", "Mixed Purposes"],
            )
            .one_of("WorkTrip", &["Work-Based"])
            .one_of("NonworkTrip", &["Nonwork-Based"])
            .one_of("MixedTrip", &["Mixed Purposes"]),
            EncodingRule::categorical(
                "prior_mode",
                &[
                    "Active Mode",
                    "Car",
                    "FRT",
                    "Mobility Bus Service",
                    "Not Applicable",
                ],
            )
            .one_of("ActiveMode", &["Active Mode"])
            .one_of("FixedService", &["FRT"]),
            EncodingRule::categorical(
                "in_vehicle",
                &["Less than FRT", "Equal to FRT", "More than FRT"],
            )
            .one_of("InVeh_less", &["Less than FRT"])
            .one_of("InVeh_more", &["More than FRT"]),
            EncodingRule::categorical("assigned_level", &["Low", "Medium", "High"])
                .one_of("Assigned_L", &["Low"])
                .one_of("Assigned_H", &["High"]),
            EncodingRule::categorical("unassigned_level", &["Low", "Medium", "High", "Very High"])
                .one_of("Unassigned_L", &["Low"])
                .one_of("Unassigned_H", &["High", "Very High"]),
            EncodingRule::categorical("waiting_level", &["Low", "Medium", "High", "Very High"])
                .one_of("Waiting_L", &["Low"])
                .one_of("Waiting_H", &["High", "Very High"]),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new("email")
            .hashed()
            .with_choice("choice")
            .with_variable("Male", VarKind::Binary)
            .with_variable("WAIT_IMPO", VarKind::Likert)
    }

    #[test]
    fn reads_rows_and_hashes_keys() {
        let csv = "email,choice,Male,WAIT_IMPO\na@x.org,1,1,3\nb@x.org,2,0,\n";
        let data = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.alternatives().len(), 3);
        let first = &data.observations()[0];
        assert_eq!(first.id, hash_key("a@x.org"));
        assert_ne!(first.id, "a@x.org");
        assert_eq!(first.indicators["WAIT_IMPO"], 3.0);
        assert!(data.observations()[1].indicators.is_empty());
    }

    #[test]
    fn header_only_gives_empty_dataset() {
        let data = read_csv("email,choice,Male,WAIT_IMPO\n".as_bytes(), &schema()).unwrap();
        assert!(data.is_empty());
        assert_eq!(data.alternatives().len(), 3);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let err = read_csv("email,Male,WAIT_IMPO\n".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn { ref column } if column == "choice"));
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let csv = "email,choice,Male,WAIT_IMPO\na,1,1,3\nb,2,yes,3\n";
        let err = read_csv(csv.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, ref column, .. } if column == "Male"));
    }

    #[test]
    fn duplicate_id_names_both_rows() {
        let mut csv = String::from("email,choice,Male,WAIT_IMPO\n");
        for i in 1..=10 {
            let key = if i == 9 {
                "k3".to_string()
            } else {
                format!("k{i}")
            };
            csv.push_str(&format!("{key},1,0,2\n"));
        }
        let err = read_csv(csv.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(
            err,
            Error::DuplicateId {
                first: 3,
                second: 9,
                ..
            }
        ));
    }

    #[test]
    fn likert_out_of_range_rejected() {
        let csv = "email,choice,Male,WAIT_IMPO\na,1,1,7\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema()),
            Err(Error::Parse { .. })
        ));
    }

    fn keyed(ids: &[&str], column: &str, value: f64) -> Dataset {
        let obs = ids
            .iter()
            .map(|id| Observation::new(*id).with_covariate(column, value))
            .collect();
        let dict = [(column.to_string(), VarKind::Continuous)].into();
        Dataset::new(obs, dict, default_alternatives()).unwrap()
    }

    #[test]
    fn fuse_is_inner_join_with_union_of_columns() {
        let survey = keyed(&["a", "b"], "x", 1.0);
        let ops = keyed(&["b", "c"], "y", 2.0);
        let fused = fuse(&survey, &ops).unwrap();
        assert_eq!(fused.len(), 1);
        let b = &fused.observations()[0];
        assert_eq!(b.id, "b");
        assert_eq!(b.covariates["x"], 1.0);
        assert_eq!(b.covariates["y"], 2.0);
        assert_eq!(fused.dictionary().len(), 2);
    }

    #[test]
    fn fuse_disjoint_is_empty() {
        let fused = fuse(&keyed(&["a"], "x", 1.0), &keyed(&["z"], "y", 1.0)).unwrap();
        assert!(fused.is_empty());
    }

    #[test]
    fn fuse_conflict_lists_ids() {
        let err = fuse(&keyed(&["a", "b"], "x", 1.0), &keyed(&["a", "b"], "x", 2.0)).unwrap_err();
        match err {
            Error::FusionConflict { column, ids } => {
                assert_eq!(column, "x");
                assert_eq!(ids, vec!["a".to_string(), "b".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
        // identical values on a shared column are fine
        assert_eq!(
            fuse(&keyed(&["a"], "x", 1.0), &keyed(&["a"], "x", 1.0))
                .unwrap()
                .len(),
            1
        );
    }

    fn raw_row(id: &str, attrs: &[(&str, &str)], nums: &[(&str, f64)]) -> Observation {
        let mut o = Observation::new(id);
        for (k, v) in attrs {
            o.attributes.insert(k.to_string(), v.to_string());
        }
        for (k, v) in nums {
            o.covariates.insert(k.to_string(), *v);
        }
        o
    }

    fn raw_dataset(rows: Vec<Observation>) -> Dataset {
        let dict = [
            ("income".to_string(), VarKind::Categorical),
            ("in_vehicle".to_string(), VarKind::Categorical),
            ("household_size".to_string(), VarKind::Continuous),
        ]
        .into();
        Dataset::new(rows, dict, default_alternatives()).unwrap()
    }

    fn rules() -> EncodingRules {
        let all = transit_encoding_rules();
        EncodingRules {
            rules: all
                .rules
                .into_iter()
                .filter(|r| ["income", "in_vehicle", "household_size"].contains(&r.source.as_str()))
                .collect(),
        }
    }

    #[test]
    fn encodes_table_categories() {
        let raw = raw_dataset(vec![raw_row(
            "a",
            &[("income", "Under 10"), ("in_vehicle", "Equal to FRT")],
            &[("household_size", 5.0)],
        )]);
        let enc = encode_dummies(&raw, &rules()).unwrap();
        let o = &enc.observations()[0];
        assert_eq!(o.covariates["LowIncome"], 1.0);
        assert_eq!(o.covariates["HighIncome"], 0.0);
        assert_eq!(o.covariates["InVeh_less"], 0.0);
        assert_eq!(o.covariates["InVeh_more"], 0.0);
        assert_eq!(o.covariates["Hhld_H"], 1.0);
        assert_eq!(o.covariates["Hhld_L"], 0.0);
        assert_eq!(enc.dictionary()["Hhld_H"], VarKind::Binary);
    }

    #[test]
    fn encoding_rejects_undeclared_category() {
        let raw = raw_dataset(vec![raw_row(
            "a",
            &[("income", "lots"), ("in_vehicle", "Equal to FRT")],
            &[("household_size", 2.0)],
        )]);
        assert!(matches!(
            encode_dummies(&raw, &rules()),
            Err(Error::Encoding { ref column, .. }) if column == "income"
        ));
    }

    #[test]
    fn encoding_is_idempotent() {
        let raw = raw_dataset(vec![
            raw_row(
                "a",
                &[("income", "60 and over"), ("in_vehicle", "More than FRT")],
                &[("household_size", 1.0)],
            ),
            raw_row(
                "b",
                &[("income", "30 to 39.999"), ("in_vehicle", "Less than FRT")],
                &[("household_size", 4.0)],
            ),
        ]);
        let once = encode_dummies(&raw, &rules()).unwrap();
        let twice = encode_dummies(&once, &rules()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn overlapping_targets_are_rejected() {
        let rule = EncodingRules {
            rules: vec![EncodingRule::numeric("household_size", 1.0, 10.0)
                .range("A", 1.0, 4.0)
                .range("B", 3.0, 10.0)],
        };
        let raw = raw_dataset(vec![raw_row("a", &[], &[("household_size", 3.0)])]);
        assert!(matches!(
            encode_dummies(&raw, &rule),
            Err(Error::Encoding { .. })
        ));
    }

    #[test]
    fn write_then_read_round_trips() {
        let obs = vec![
            Observation::new("a")
                .with_choice(2)
                .with_covariate("Male", 1.0)
                .with_indicator("WAIT_IMPO", 4.0),
            Observation::new("b")
                .with_choice(3)
                .with_covariate("Male", 0.0),
        ];
        let dict = [
            ("Male".to_string(), VarKind::Binary),
            ("WAIT_IMPO".to_string(), VarKind::Likert),
        ]
        .into();
        let data = Dataset::new(obs, dict, default_alternatives()).unwrap();
        let mut buf = Vec::new();
        write_csv(&data, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &schema_for(&data)).unwrap();
        assert_eq!(back, data);
    }
}
