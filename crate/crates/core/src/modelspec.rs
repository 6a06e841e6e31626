//! Declarative model specifications: alternatives, utility terms with shared
//! parameters, latent classes, latent variables with structural and
//! measurement equations, and the parameter table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::dataset::{default_alternatives, Alternative, Dataset};
use crate::error::{Error, Result};

/// Variable name that always evaluates to one.
pub const CONSTANT: &str = "CONSTANT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Free,
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    pub status: Status,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Parameter {
    pub fn is_free(&self) -> bool {
        self.status == Status::Free
    }
}

/// Ordered, uniquely named parameter table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterVector {
    entries: Vec<Parameter>,
}

impl ParameterVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64, status: Status) -> Result<()> {
        let name = name.into();
        if self.position(&name).is_some() {
            return Err(Error::spec(format!("duplicate parameter `{name}`")));
        }
        self.entries.push(Parameter {
            name,
            value,
            status,
            lower: None,
            upper: None,
        });
        Ok(())
    }

    pub fn free(mut self, name: &str, value: f64) -> Self {
        self.push(name, value, Status::Free)
            .expect("unique parameter name");
        self
    }

    pub fn fixed(mut self, name: &str, value: f64) -> Self {
        self.push(name, value, Status::Fixed)
            .expect("unique parameter name");
        self
    }

    pub fn entries(&self) -> &[Parameter] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|p| p.value)
    }

    pub fn set_value(&mut self, name: &str, value: f64) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| Error::spec(format!("unknown parameter `{name}`")))?;
        p.value = value;
        Ok(())
    }

    pub fn set_status(&mut self, name: &str, status: Status) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| Error::spec(format!("unknown parameter `{name}`")))?;
        p.status = status;
        Ok(())
    }

    pub fn set_bounds(&mut self, name: &str, lower: Option<f64>, upper: Option<f64>) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| Error::spec(format!("unknown parameter `{name}`")))?;
        p.lower = lower;
        p.upper = upper;
        Ok(())
    }

    pub fn n_free(&self) -> usize {
        self.entries.iter().filter(|p| p.is_free()).count()
    }

    /// Positions of the free entries, in table order.
    pub fn free_positions(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].is_free())
            .collect()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|p| p.is_free())
            .map(|p| p.name.clone())
            .collect()
    }

    pub fn free_values(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|p| p.is_free())
            .map(|p| p.value)
            .collect()
    }

    /// Copy with the free entries replaced, in table order.
    pub fn with_free_values(&self, values: &[f64]) -> Result<Self> {
        let n = self.n_free();
        if values.len() != n {
            return Err(Error::Arity {
                what: "free parameters".into(),
                expected: n,
                found: values.len(),
            });
        }
        let mut out = self.clone();
        let mut it = values.iter();
        for p in out.entries.iter_mut().filter(|p| p.is_free()) {
            p.value = *it.next().expect("length checked");
        }
        Ok(out)
    }

    /// Copies values of same-named entries from `other`.
    pub fn overlay(&mut self, other: &ParameterVector) {
        for p in &mut self.entries {
            if let Some(v) = other.value(&p.name) {
                p.value = v;
            }
        }
    }

    /// Clamps every value into its bounds.
    pub fn project(&mut self) {
        for p in &mut self.entries {
            if let Some(lo) = p.lower {
                p.value = p.value.max(lo);
            }
            if let Some(hi) = p.upper {
                p.value = p.value.min(hi);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Mnl,
    Lc,
    Iclv,
    LcIclv,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Mnl, Family::Lc, Family::Iclv, Family::LcIclv];

    pub fn has_classes(self) -> bool {
        matches!(self, Family::Lc | Family::LcIclv)
    }

    pub fn has_latents(self) -> bool {
        matches!(self, Family::Iclv | Family::LcIclv)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Mnl => "MNL",
            Family::Lc => "LC",
            Family::Iclv => "ICLV",
            Family::LcIclv => "LC_ICLV",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "MNL" => Ok(Family::Mnl),
            "LC" => Ok(Family::Lc),
            "ICLV" => Ok(Family::Iclv),
            "LC_ICLV" | "LCICLV" => Ok(Family::LcIclv),
            other => Err(Error::spec(format!("unknown model family `{other}`"))),
        }
    }
}

/// `parameter × variable`; the variable is a covariate, a latent variable,
/// or [`CONSTANT`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtilityTerm {
    pub parameter: String,
    pub variable: String,
}

impl UtilityTerm {
    pub fn new(parameter: impl Into<String>, variable: impl Into<String>) -> Self {
        Self {
            parameter: parameter.into(),
            variable: variable.into(),
        }
    }
}

/// `indicator = intercept + loading × LV + scale × ε`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeasurementEq {
    pub indicator: String,
    pub intercept: String,
    pub loading: String,
    pub scale: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentVariableSpec {
    pub name: String,
    pub structural: Vec<UtilityTerm>,
    /// Scale of the standard-normal structural disturbance.
    pub scale: String,
    pub measurements: Vec<MeasurementEq>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSpec {
    pub label: String,
    /// Empty for the reference class.
    pub membership: Vec<UtilityTerm>,
    /// One term list per alternative, aligned with `ModelSpec::alternatives`.
    pub utilities: Vec<Vec<UtilityTerm>>,
}

/// MNL and ICLV carry exactly one class whose membership is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub alternatives: Vec<Alternative>,
    pub classes: Vec<ClassSpec>,
    pub latents: Vec<LatentVariableSpec>,
    pub draws: usize,
    pub seed: u64,
    pub params: ParameterVector,
}

impl ModelSpec {
    pub fn n_free(&self) -> usize {
        self.params.n_free()
    }

    pub fn alternative_index(&self, label: &str) -> Option<usize> {
        self.alternatives.iter().position(|a| a.label == label)
    }

    /// Every indicator named by a measurement equation.
    pub fn indicators(&self) -> Vec<String> {
        self.latents
            .iter()
            .flat_map(|l| l.measurements.iter().map(|m| m.indicator.clone()))
            .collect()
    }

    /// Covariates referenced anywhere in the spec.
    pub fn covariates(&self) -> BTreeSet<String> {
        let latent: BTreeSet<&str> = self.latents.iter().map(|l| l.name.as_str()).collect();
        let mut out = BTreeSet::new();
        let mut add = |t: &UtilityTerm| {
            if t.variable != CONSTANT && !latent.contains(t.variable.as_str()) {
                out.insert(t.variable.clone());
            }
        };
        for c in &self.classes {
            c.membership.iter().for_each(&mut add);
            c.utilities.iter().flatten().for_each(&mut add);
        }
        for l in &self.latents {
            l.structural.iter().for_each(&mut add);
        }
        out
    }

    /// Every parameter name referenced by a term or equation.
    pub fn referenced_parameters(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for c in &self.classes {
            for t in c.membership.iter().chain(c.utilities.iter().flatten()) {
                out.insert(t.parameter.clone());
            }
        }
        for l in &self.latents {
            out.insert(l.scale.clone());
            for t in &l.structural {
                out.insert(t.parameter.clone());
            }
            for m in &l.measurements {
                out.insert(m.intercept.clone());
                out.insert(m.loading.clone());
                out.insert(m.scale.clone());
            }
        }
        out
    }

    /// Structural checks that need no data; returns the findings.
    pub fn check(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        self.check_into(&mut report);
        report
    }

    fn check_into(&self, report: &mut ValidationReport) {
        let family = self.family;
        if self.alternatives.len() < 2 {
            report.push(Finding::Family(
                "at least two alternatives are required".into(),
            ));
        }
        let mut labels = BTreeSet::new();
        for a in &self.alternatives {
            if !labels.insert(a.label.as_str()) {
                report.push(Finding::Duplicate(format!("alternative `{}`", a.label)));
            }
        }
        if self.draws == 0 {
            report.push(Finding::Family("draws must be positive".into()));
        }

        match (family.has_classes(), self.classes.len()) {
            (true, n) if n < 2 => report.push(Finding::Family(format!(
                "{family} needs at least two classes, found {n}"
            ))),
            (false, n) if n != 1 => report.push(Finding::Family(format!(
                "{family} takes a single utility set, found {n} classes"
            ))),
            _ => {}
        }
        match (family.has_latents(), self.latents.len()) {
            (true, 0) => report.push(Finding::Family(format!(
                "{family} needs at least one latent variable"
            ))),
            (false, n) if n > 0 => report.push(Finding::Family(format!(
                "{family} takes no latent variables, found {n}"
            ))),
            _ => {}
        }
        let references = self
            .classes
            .iter()
            .filter(|c| c.membership.is_empty())
            .count();
        if !self.classes.is_empty() && references != 1 {
            report.push(Finding::Family(format!(
                "exactly one reference class (no membership terms) is required, found {references}"
            )));
        }
        let mut class_labels = BTreeSet::new();
        for c in &self.classes {
            if !class_labels.insert(c.label.as_str()) {
                report.push(Finding::Duplicate(format!("class `{}`", c.label)));
            }
            if c.utilities.len() != self.alternatives.len() {
                report.push(Finding::Family(format!(
                    "class `{}` has {} utility lists for {} alternatives",
                    c.label,
                    c.utilities.len(),
                    self.alternatives.len()
                )));
            }
        }

        let latent_names: BTreeSet<&str> = self.latents.iter().map(|l| l.name.as_str()).collect();
        if latent_names.len() != self.latents.len() {
            report.push(Finding::Duplicate("latent variable".into()));
        }
        for l in &self.latents {
            for t in &l.structural {
                if latent_names.contains(t.variable.as_str()) {
                    report.push(Finding::Family(format!(
                        "structural equation of `{}` references latent `{}`",
                        l.name, t.variable
                    )));
                }
            }
            let anchors = l.measurements.iter().filter(|m| self.is_anchor(m)).count();
            if anchors != 1 {
                report.push(Finding::MissingAnchor {
                    latent: l.name.clone(),
                    found: anchors,
                });
            }
            for m in &l.measurements {
                if let Some(p) = self.params.get(&m.scale) {
                    if p.value == 0.0 {
                        report.push(Finding::Family(format!(
                            "measurement scale `{}` is zero",
                            m.scale
                        )));
                    }
                }
            }
        }
        for c in &self.classes {
            for t in &c.membership {
                if latent_names.contains(t.variable.as_str()) {
                    report.push(Finding::Family(format!(
                        "membership of class `{}` references latent `{}`",
                        c.label, t.variable
                    )));
                }
            }
        }

        for name in self.referenced_parameters() {
            if self.params.get(&name).is_none() {
                report.push(Finding::UnknownParameter(name));
            }
        }
    }

    /// Intercept fixed at 0, loading fixed at 1, scale fixed at 1.
    pub fn is_anchor(&self, m: &MeasurementEq) -> bool {
        let fixed_at = |name: &str, v: f64| {
            self.params
                .get(name)
                .is_some_and(|p| p.status == Status::Fixed && p.value == v)
        };
        fixed_at(&m.intercept, 0.0) && fixed_at(&m.loading, 1.0) && fixed_at(&m.scale, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Finding {
    UnknownParameter(String),
    UnknownVariable { context: String, name: String },
    UnknownIndicator(String),
    UnknownAlternative(String),
    MissingAnchor { latent: String, found: usize },
    Duplicate(String),
    Family(String),
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::UnknownParameter(p) => write!(f, "unknown parameter `{p}`"),
            Finding::UnknownVariable { context, name } => {
                write!(f, "unknown variable `{name}` in {context}")
            }
            Finding::UnknownIndicator(i) => write!(f, "unknown indicator `{i}`"),
            Finding::UnknownAlternative(a) => write!(f, "alternative `{a}` not in the data"),
            Finding::MissingAnchor { latent, found } => write!(
                f,
                "latent `{latent}` needs exactly one normalization anchor, found {found}"
            ),
            Finding::Duplicate(what) => write!(f, "duplicate {what}"),
            Finding::Family(msg) => f.write_str(msg),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, f: Finding) {
        if !self.findings.contains(&f) {
            self.findings.push(f);
        }
    }

    /// `Ok(())` for an empty report, otherwise a specification error listing
    /// every finding.
    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        let lines: Vec<String> = self.findings.iter().map(|f| f.to_string()).collect();
        Err(Error::spec(lines.join("; ")))
    }
}

/// Cross-checks a spec against a dataset's dictionary and alternatives.
pub fn validate(spec: &ModelSpec, data: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    spec.check_into(&mut report);

    let dict = data.dictionary();
    let latent: BTreeSet<&str> = spec.latents.iter().map(|l| l.name.as_str()).collect();
    let numeric = |name: &str| dict.get(name).is_some_and(|k| k.is_numeric());

    for a in &spec.alternatives {
        let known = data
            .alternatives()
            .iter()
            .any(|d| d.index == a.index && d.label == a.label);
        if !known {
            report.push(Finding::UnknownAlternative(a.label.clone()));
        }
    }

    let mut check = |context: String, t: &UtilityTerm, allow_latent: bool| {
        let ok = t.variable == CONSTANT
            || numeric(&t.variable)
            || (allow_latent && latent.contains(t.variable.as_str()));
        if !ok {
            report.push(Finding::UnknownVariable {
                context,
                name: t.variable.clone(),
            });
        }
    };
    for c in &spec.classes {
        for t in &c.membership {
            check(format!("membership of class `{}`", c.label), t, false);
        }
        for (a, terms) in c.utilities.iter().enumerate() {
            let alt = spec
                .alternatives
                .get(a)
                .map(|x| x.label.clone())
                .unwrap_or_default();
            for t in terms {
                check(format!("utility of `{alt}`"), t, true);
            }
        }
    }
    for l in &spec.latents {
        for t in &l.structural {
            check(format!("structural equation of `{}`", l.name), t, false);
        }
    }
    for l in &spec.latents {
        for m in &l.measurements {
            if !numeric(&m.indicator) {
                report.push(Finding::UnknownIndicator(m.indicator.clone()));
            }
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Presets

fn term(p: &str, v: &str) -> UtilityTerm {
    UtilityTerm::new(p, v)
}

const TS: &str = "TIME_SEN";
const OSS: &str = "ON_SERV_SAT";

/// Utilities in alternative order FRT, ODT, Indifferent.
fn base_utilities(latents: bool) -> Vec<Vec<UtilityTerm>> {
    let frt = vec![
        term("B_ASSIGNED", "Assigned_H"),
        term("B_PURPOSE", "WorkTrip"),
        term("B_MODE", "FixedService"),
        term("B_INVEH", "InVeh_more"),
        term("B_WAITING", "Waiting_H"),
    ];
    let mut odt = vec![
        term("ASC_ODT", CONSTANT),
        term("B_HHLD", "Hhld_H"),
        term("B_AGE", "MiddleAge"),
        term("B_ASSIGNED", "Assigned_L"),
        term("B_PURPOSE", "NonworkTrip"),
        term("B_MODE", "ActiveMode"),
        term("B_INVEH", "InVeh_less"),
        term("B_WAITING", "Waiting_L"),
    ];
    if latents {
        odt.push(term("B_TS", TS));
        odt.push(term("B_OSS", OSS));
    }
    let indiff = vec![
        term("ASC_INDIFF", CONSTANT),
        term("B_EDU", "HigherEdu"),
        term("B_GENDER", "Male"),
    ];
    vec![frt, odt, indiff]
}

fn captive_class(latents: bool) -> ClassSpec {
    let mut frt = vec![
        term("B_PURPOSE_C1", "NonworkTrip"),
        term("B_INVEH_C1", "InVeh_more"),
        term("B_WAITING_C1", "Waiting_H"),
    ];
    if !latents {
        frt.push(term("B_UNASSIGNED_C1", "Unassigned_H"));
    }
    frt.push(term("B_MODE_C1", "FixedService"));
    let mut odt = vec![
        term("ASC_ODT_C1", CONSTANT),
        term("B_PURPOSE_C1", "MixedTrip"),
        term("B_INVEH_C1", "InVeh_less"),
        term("B_WAITING_C1", "Waiting_L"),
        term("B_UNASSIGNED_C1", "Unassigned_L"),
        term("B_MODE_C1", "ActiveMode"),
    ];
    if latents {
        odt.push(term("B_TS_C1", TS));
        odt.push(term("B_OSS_C1", OSS));
    }
    let indiff = vec![
        term("ASC_INDIFF_C1", CONSTANT),
        term("B_EDU_C1", "HigherEdu"),
        term("B_GENDER_C1", "Male"),
    ];
    ClassSpec {
        label: "Captive".into(),
        membership: vec![
            term("G_CAP", CONSTANT),
            term("G_INCOME", "LowIncome"),
            term("G_MODE", "FixedService"),
        ],
        utilities: vec![frt, odt, indiff],
    }
}

fn noncaptive_class(latents: bool) -> ClassSpec {
    let frt = vec![
        term("B_PURPOSE_C2", "WorkTrip"),
        term("B_INVEH_C2", "InVeh_more"),
        term("B_WAITING_C2", "Waiting_H"),
        term("B_ASSIGNED_C2", "Assigned_H"),
    ];
    let mut odt = vec![
        term("ASC_ODT_C2", CONSTANT),
        term("B_PURPOSE_C2", "NonworkTrip"),
        term("B_INVEH_C2", "InVeh_less"),
        term("B_WAITING_C2", "Waiting_L"),
        term("B_ASSIGNED_C2", "Assigned_L"),
    ];
    if latents {
        odt.push(term("B_TS_C2", TS));
        odt.push(term("B_OSS_C2", OSS));
    }
    let indiff = vec![
        term("ASC_INDIFF_C2", CONSTANT),
        term("B_EDU_C2", "HigherEdu"),
        term("B_GENDER_C2", "Male"),
    ];
    ClassSpec {
        label: "Noncaptive".into(),
        membership: Vec::new(),
        utilities: vec![frt, odt, indiff],
    }
}

fn measurement(indicator: &str) -> MeasurementEq {
    MeasurementEq {
        indicator: indicator.into(),
        intercept: format!("ALPHA_{indicator}"),
        loading: format!("BETA_{indicator}"),
        scale: format!("SIGMA_{indicator}"),
    }
}

/// Indicators per latent variable; the first one is the anchor.
pub const TS_INDICATORS: [&str; 4] = ["WAIT_IMPO", "RELIA_IMPO", "TIME_BUS", "FLEXIBILITY"];
pub const OSS_INDICATORS: [&str; 3] = ["APP_INTER", "WEB_INTER", "AVAIL_SERV"];

fn latent_block() -> Vec<LatentVariableSpec> {
    vec![
        LatentVariableSpec {
            name: TS.into(),
            structural: vec![
                term("A_TS_CONS", CONSTANT),
                term("A_TS_AGE", "Young"),
                term("A_TS_INCOME", "HighIncome"),
                term("A_TS_CAR", "Car"),
                term("A_TS_HHLD", "Hhld_L"),
                term("A_TS_GENDER", "Male"),
                term("A_TS_MARITAL", "Single"),
            ],
            scale: "SIGMA_TS".into(),
            measurements: TS_INDICATORS.iter().map(|i| measurement(i)).collect(),
        },
        LatentVariableSpec {
            name: OSS.into(),
            structural: vec![
                term("A_OSS_CONS", CONSTANT),
                term("A_OSS_AGE", "MiddleAge"),
                term("A_OSS_INCOME", "LowIncome"),
                term("A_OSS_EDU", "Sec_school"),
            ],
            scale: "SIGMA_OSS".into(),
            measurements: OSS_INDICATORS.iter().map(|i| measurement(i)).collect(),
        },
    ]
}

/// Parameter table in order of first reference; anchors fixed at (0, 1, 1),
/// scales start at 1, measurement loadings at 1, everything else at 0.
fn parameter_table(spec: &ModelSpec, fixed_zero: &[&str]) -> ParameterVector {
    let mut params = ParameterVector::new();
    let mut add = |name: &str, value: f64, status: Status| {
        if params.get(name).is_none() {
            params.push(name, value, status).expect("checked");
        }
    };
    for c in &spec.classes {
        for t in c.utilities.iter().flatten() {
            let status = if fixed_zero.contains(&t.parameter.as_str()) {
                Status::Fixed
            } else {
                Status::Free
            };
            add(&t.parameter, 0.0, status);
        }
    }
    for c in &spec.classes {
        for t in &c.membership {
            add(&t.parameter, 0.0, Status::Free);
        }
    }
    for l in &spec.latents {
        for t in &l.structural {
            add(&t.parameter, 0.0, Status::Free);
        }
        add(&l.scale, 1.0, Status::Free);
    }
    for l in &spec.latents {
        for (k, m) in l.measurements.iter().enumerate() {
            let status = if k == 0 { Status::Fixed } else { Status::Free };
            add(&m.intercept, 0.0, status);
            add(&m.loading, 1.0, status);
            add(&m.scale, 1.0, status);
        }
    }
    params
}

/// The four reference specifications with start values (see
/// [`reference_truth`] for the reference estimates).
pub fn paper_presets() -> [ModelSpec; 4] {
    Family::ALL.map(preset)
}

pub fn preset(family: Family) -> ModelSpec {
    let latents = family.has_latents();
    let classes = if family.has_classes() {
        vec![captive_class(latents), noncaptive_class(latents)]
    } else {
        vec![ClassSpec {
            label: "All".into(),
            membership: Vec::new(),
            utilities: base_utilities(latents),
        }]
    };
    let mut spec = ModelSpec {
        family,
        alternatives: default_alternatives(),
        classes,
        latents: if latents { latent_block() } else { Vec::new() },
        draws: 1000,
        seed: 1,
        params: ParameterVector::new(),
    };
    let fixed: &[&str] = if family == Family::LcIclv {
        &["ASC_ODT_C2", "ASC_INDIFF_C2"]
    } else {
        &[]
    };
    spec.params = parameter_table(&spec, fixed);
    spec
}

/// Reference estimates for every free parameter of a preset.
pub fn reference_truth(family: Family) -> ParameterVector {
    let values: &[(&str, f64)] = match family {
        Family::Mnl => &[
            ("ASC_INDIFF", -1.89),
            ("ASC_ODT", -2.61),
            ("B_ASSIGNED", 0.972),
            ("B_PURPOSE", 1.09),
            ("B_MODE", 1.03),
            ("B_INVEH", 1.35),
            ("B_WAITING", 1.07),
            ("B_HHLD", 2.11),
            ("B_AGE", 1.91),
            ("B_EDU", 1.55),
            ("B_GENDER", 2.17),
        ],
        Family::Lc => &[
            ("ASC_ODT_C1", -11.6),
            ("ASC_INDIFF_C1", -2.43),
            ("B_PURPOSE_C1", 0.893),
            ("B_INVEH_C1", 1.44),
            ("B_WAITING_C1", 0.386),
            ("B_UNASSIGNED_C1", 10.3),
            ("B_MODE_C1", 1.45),
            ("B_EDU_C1", 2.28),
            ("B_GENDER_C1", 1.01),
            ("ASC_ODT_C2", 1.7),
            ("ASC_INDIFF_C2", -9.1),
            ("B_PURPOSE_C2", 10.9),
            ("B_INVEH_C2", 6.56),
            ("B_WAITING_C2", 3.0),
            ("B_ASSIGNED_C2", 2.33),
            ("B_EDU_C2", 13.3),
            ("B_GENDER_C2", 17.7),
            ("G_CAP", -10.6),
            ("G_INCOME", 24.1),
            ("G_MODE", 21.6),
        ],
        Family::Iclv => &[
            ("ASC_INDIFF", -1.89),
            ("ASC_ODT", -3.66),
            ("B_ASSIGNED", 0.927),
            ("B_PURPOSE", 1.12),
            ("B_MODE", 1.17),
            ("B_INVEH", 1.45),
            ("B_WAITING", 1.14),
            ("B_HHLD", 2.46),
            ("B_AGE", 1.92),
            ("B_EDU", 1.49),
            ("B_GENDER", 2.38),
            ("B_TS", 0.668),
            ("B_OSS", 0.385),
            ("A_TS_CONS", 0.334),
            ("A_TS_AGE", 1.080),
            ("A_TS_INCOME", 0.687),
            ("A_TS_CAR", -0.620),
            ("A_TS_HHLD", 0.724),
            ("A_TS_GENDER", 1.110),
            ("A_TS_MARITAL", -1.040),
            ("SIGMA_TS", -0.113),
            ("A_OSS_CONS", -0.858),
            ("A_OSS_AGE", 1.290),
            ("A_OSS_INCOME", 1.360),
            ("A_OSS_EDU", 0.640),
            ("SIGMA_OSS", 1.300),
            ("ALPHA_RELIA_IMPO", 1.100),
            ("BETA_RELIA_IMPO", 0.874),
            ("SIGMA_RELIA_IMPO", 1.530),
            ("ALPHA_TIME_BUS", -0.140),
            ("BETA_TIME_BUS", 0.674),
            ("SIGMA_TIME_BUS", 1.230),
            ("ALPHA_FLEXIBILITY", 1.080),
            ("BETA_FLEXIBILITY", 0.051),
            ("SIGMA_FLEXIBILITY", 1.31),
            ("ALPHA_WEB_INTER", 0.097),
            ("BETA_WEB_INTER", 0.843),
            ("SIGMA_WEB_INTER", 0.215),
            ("ALPHA_AVAIL_SERV", 0.351),
            ("BETA_AVAIL_SERV", 0.599),
            ("SIGMA_AVAIL_SERV", 0.732),
        ],
        Family::LcIclv => &[
            ("ASC_ODT_C1", -11.6),
            ("ASC_INDIFF_C1", -2.54),
            ("B_PURPOSE_C1", 0.860),
            ("B_INVEH_C1", 1.600),
            ("B_WAITING_C1", 0.377),
            ("B_UNASSIGNED_C1", 10.4),
            ("B_MODE_C1", 1.37),
            ("B_EDU_C1", 2.31),
            ("B_GENDER_C1", 0.943),
            ("B_TS_C1", -0.138),
            ("B_OSS_C1", 0.053),
            ("B_PURPOSE_C2", 50.0),
            ("B_INVEH_C2", 27.7),
            ("B_WAITING_C2", 6.01),
            ("B_ASSIGNED_C2", 10.9),
            ("B_EDU_C2", 10.6),
            ("B_GENDER_C2", 36.1),
            ("B_TS_C2", 9.44),
            ("B_OSS_C2", 5.63),
            ("G_CAP", -10.7),
            ("G_INCOME", 24.1),
            ("G_MODE", 21.6),
            ("A_TS_CONS", 0.266),
            ("A_TS_AGE", 1.150),
            ("A_TS_INCOME", 0.617),
            ("A_TS_CAR", -0.485),
            ("A_TS_HHLD", 0.684),
            ("A_TS_GENDER", 1.130),
            ("A_TS_MARITAL", -0.979),
            ("SIGMA_TS", -0.224),
            ("A_OSS_CONS", -0.470),
            ("A_OSS_AGE", 0.991),
            ("A_OSS_INCOME", 0.600),
            ("A_OSS_EDU", 0.605),
            ("SIGMA_OSS", 1.14),
            ("ALPHA_RELIA_IMPO", 1.200),
            ("BETA_RELIA_IMPO", 0.785),
            ("SIGMA_RELIA_IMPO", 1.520),
            ("ALPHA_TIME_BUS", -0.058),
            ("BETA_TIME_BUS", 0.607),
            ("SIGMA_TIME_BUS", 1.230),
            ("ALPHA_FLEXIBILITY", 1.030),
            ("BETA_FLEXIBILITY", 0.099),
            ("SIGMA_FLEXIBILITY", 1.31),
            ("ALPHA_WEB_INTER", 0.121),
            ("BETA_WEB_INTER", 0.833),
            ("SIGMA_WEB_INTER", 0.387),
            ("ALPHA_AVAIL_SERV", 0.388),
            ("BETA_AVAIL_SERV", 0.584),
            ("SIGMA_AVAIL_SERV", 0.766),
        ],
    };
    let mut params = preset(family).params;
    for (name, v) in values {
        params.set_value(name, *v).expect("preset parameter");
    }
    params
}

/// Variables the presets read, grouped into mutually exclusive dummy sets.
pub fn preset_variable_groups() -> BTreeMap<&'static str, Vec<&'static str>> {
    BTreeMap::from([
        ("age", vec!["Young", "MiddleAge"]),
        ("gender", vec!["Male"]),
        ("marital", vec!["Single"]),
        ("education", vec!["Sec_school", "HigherEdu"]),
        ("income", vec!["LowIncome", "HighIncome"]),
        ("household", vec!["Hhld_L", "Hhld_H"]),
        ("car", vec!["Car"]),
        ("in_vehicle", vec!["InVeh_less", "InVeh_more"]),
        ("purpose", vec!["WorkTrip", "NonworkTrip", "MixedTrip"]),
        ("mode", vec!["ActiveMode", "FixedService"]),
        ("assigned", vec!["Assigned_L", "Assigned_H"]),
        ("unassigned", vec!["Unassigned_L", "Unassigned_H"]),
        ("waiting", vec!["Waiting_L", "Waiting_H"]),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Observation, VarKind};

    fn preset_dataset() -> Dataset {
        let mut dict = BTreeMap::new();
        for v in preset_variable_groups().values().flatten() {
            dict.insert(v.to_string(), VarKind::Binary);
        }
        for i in TS_INDICATORS.iter().chain(OSS_INDICATORS.iter()) {
            dict.insert(i.to_string(), VarKind::Likert);
        }
        let obs = vec![Observation::new("a").with_choice(1)];
        Dataset::new(obs, dict, default_alternatives()).unwrap()
    }

    #[test]
    fn preset_parameter_counts() {
        let counts: Vec<usize> = paper_presets().iter().map(|s| s.n_free()).collect();
        assert_eq!(counts, vec![11, 20, 41, 50]);
    }

    #[test]
    fn iclv_count_splits_into_choice_structural_measurement() {
        let spec = preset(Family::Iclv);
        let fixed = spec
            .params
            .entries()
            .iter()
            .filter(|p| !p.is_free())
            .count();
        assert_eq!(fixed, 6);
        assert_eq!(spec.params.len() - fixed, 41);
        let structural: usize = spec.latents.iter().map(|l| l.structural.len() + 1).sum();
        assert_eq!(structural, 13);
    }

    #[test]
    fn presets_validate_against_preset_dictionary() {
        let data = preset_dataset();
        for spec in paper_presets() {
            let report = validate(&spec, &data);
            assert!(report.is_empty(), "{}: {:?}", spec.family, report.findings);
        }
    }

    #[test]
    fn unknown_variable_is_one_finding() {
        let mut spec = preset(Family::Mnl);
        spec.classes[0].utilities[1][1].variable = "Hhld_X".into();
        let report = validate(&spec, &preset_dataset());
        assert_eq!(
            report.findings,
            vec![Finding::UnknownVariable {
                context: "utility of `ODT`".into(),
                name: "Hhld_X".into()
            }]
        );
    }

    #[test]
    fn missing_anchor_is_one_finding() {
        let mut spec = preset(Family::Iclv);
        spec.params
            .set_status("ALPHA_WAIT_IMPO", Status::Free)
            .unwrap();
        let report = validate(&spec, &preset_dataset());
        assert_eq!(
            report.findings,
            vec![Finding::MissingAnchor {
                latent: "TIME_SEN".into(),
                found: 0
            }]
        );
    }

    #[test]
    fn family_violations() {
        let mut spec = preset(Family::Lc);
        spec.classes.truncate(1);
        assert!(!spec.check().is_empty());
        let mut spec = preset(Family::Mnl);
        spec.latents = latent_block();
        assert!(!spec.check().is_empty());
        let mut spec = preset(Family::Iclv);
        spec.latents.clear();
        assert!(spec
            .check()
            .findings
            .iter()
            .any(|f| matches!(f, Finding::Family(_))));
    }

    #[test]
    fn unknown_parameter_reported() {
        let mut spec = preset(Family::Mnl);
        spec.classes[0].utilities[2][0].parameter = "ASC_NOPE".into();
        assert!(spec
            .check()
            .findings
            .contains(&Finding::UnknownParameter("ASC_NOPE".into())));
    }

    #[test]
    fn free_subvector_round_trip() {
        let params = reference_truth(Family::Iclv);
        let free = params.free_values();
        assert_eq!(free.len(), 41);
        let back = params.with_free_values(&free).unwrap();
        assert_eq!(back, params);
        let shifted: Vec<f64> = free.iter().map(|v| v + 1.0).collect();
        let moved = params.with_free_values(&shifted).unwrap();
        assert_eq!(moved.value("ALPHA_WAIT_IMPO"), Some(0.0));
        assert_eq!(moved.value("BETA_WAIT_IMPO"), Some(1.0));
        assert!(params.with_free_values(&free[1..]).is_err());
    }

    #[test]
    fn duplicate_parameter_rejected() {
        let mut p = ParameterVector::new();
        p.push("A", 0.0, Status::Free).unwrap();
        assert!(p.push("A", 1.0, Status::Fixed).is_err());
    }

    #[test]
    fn truth_values_cover_every_free_parameter() {
        for family in Family::ALL {
            let start = preset(family).params;
            let truth = reference_truth(family);
            let changed = start
                .entries()
                .iter()
                .zip(truth.entries())
                .filter(|(a, b)| a.is_free() && a.value != b.value)
                .count();
            // every free start differs from its reference estimate
            assert_eq!(changed, start.n_free(), "{family}");
        }
    }

    #[test]
    fn family_parses_display() {
        for f in Family::ALL {
            assert_eq!(f.to_string().parse::<Family>().unwrap(), f);
        }
    }
}
