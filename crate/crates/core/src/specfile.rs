//! Plain-text spec-file format.
//!
//! ```text
//! [estimation]
//! family = ICLV
//! draws = 1000
//! seed = 7
//!
//! [alternatives]
//! 1 = FRT
//! 2 = ODT
//!
//! [parameters]
//! ASC_ODT = 0
//! ALPHA_WAIT_IMPO = 0 fixed
//! G_CAP = 0 lower=-50 upper=50
//!
//! [utility.ODT]
//! ASC_ODT * CONSTANT
//!
//! [class.Captive.membership]
//! [class.Captive.utility.ODT]
//! [latent.TIME_SEN.structural]
//! scale = SIGMA_TS
//! [latent.TIME_SEN.measurement.WAIT_IMPO]
//! intercept = ALPHA_WAIT_IMPO
//! loading = BETA_WAIT_IMPO
//! scale = SIGMA_WAIT_IMPO
//! ```
//!
//! Classes are ordered by first appearance. `#` starts a comment. Sections
//! the model loader does not know are returned untouched so other tools can
//! share the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dataset::Alternative;
use crate::error::{Error, Result};
use crate::modelspec::{
    ClassSpec, Family, LatentVariableSpec, MeasurementEq, ModelSpec, ParameterVector, Status,
    UtilityTerm,
};

/// A section header and its non-empty lines, each with its 1-based line
/// number.
#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub lines: Vec<(usize, String)>,
}

pub fn sections(text: &str) -> Result<Vec<Section>> {
    let mut out: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::SpecFile {
                line: line_no,
                message: "unterminated section header".into(),
            })?;
            out.push(Section {
                name: name.trim().to_string(),
                line: line_no,
                lines: Vec::new(),
            });
        } else {
            let section = out.last_mut().ok_or_else(|| Error::SpecFile {
                line: line_no,
                message: "content before the first section".into(),
            })?;
            section.lines.push((line_no, line.to_string()));
        }
    }
    Ok(out)
}

fn key_value(line_no: usize, line: &str) -> Result<(String, String)> {
    let (k, v) = line.split_once('=').ok_or_else(|| Error::SpecFile {
        line: line_no,
        message: format!("expected `key = value`, found `{line}`"),
    })?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn number<T: std::str::FromStr>(line_no: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::SpecFile {
        line: line_no,
        message: format!("cannot read number `{s}`"),
    })
}

fn utility_term(line_no: usize, line: &str) -> Result<UtilityTerm> {
    let (p, v) = line.split_once('*').ok_or_else(|| Error::SpecFile {
        line: line_no,
        message: format!("expected `parameter * variable`, found `{line}`"),
    })?;
    let (p, v) = (p.trim(), v.trim());
    if p.is_empty()
        || v.is_empty()
        || p.contains(char::is_whitespace)
        || v.contains(char::is_whitespace)
    {
        return Err(Error::SpecFile {
            line: line_no,
            message: format!("malformed term `{line}`"),
        });
    }
    Ok(UtilityTerm::new(p, v))
}

fn parameter_line(params: &mut ParameterVector, line_no: usize, line: &str) -> Result<()> {
    let (name, rest) = key_value(line_no, line)?;
    let mut tokens = rest.split_whitespace();
    let value: f64 = number(line_no, tokens.next().unwrap_or(""))?;
    let mut status = Status::Free;
    let (mut lower, mut upper) = (None, None);
    for tok in tokens {
        if tok == "fixed" {
            status = Status::Fixed;
        } else if let Some(v) = tok.strip_prefix("lower=") {
            lower = Some(number(line_no, v)?);
        } else if let Some(v) = tok.strip_prefix("upper=") {
            upper = Some(number(line_no, v)?);
        } else {
            return Err(Error::SpecFile {
                line: line_no,
                message: format!("unknown parameter attribute `{tok}`"),
            });
        }
    }
    params
        .push(name.clone(), value, status)
        .map_err(|e| Error::SpecFile {
            line: line_no,
            message: e.to_string(),
        })?;
    params.set_bounds(&name, lower, upper)?;
    Ok(())
}

#[derive(Default)]
struct PendingLatent {
    structural: Vec<UtilityTerm>,
    scale: Option<String>,
    measurements: Vec<MeasurementEq>,
}

#[derive(Default)]
struct PendingClass {
    membership: Vec<UtilityTerm>,
    utilities: BTreeMap<String, Vec<UtilityTerm>>,
}

/// Parses a model spec; also returns the sections it did not consume.
pub fn parse_model(text: &str) -> Result<(ModelSpec, Vec<Section>)> {
    let mut family = None;
    let mut draws = 1000usize;
    let mut seed = 1u64;
    let mut alternatives = Vec::new();
    let mut params = ParameterVector::new();
    let mut base: BTreeMap<String, Vec<UtilityTerm>> = BTreeMap::new();
    let mut classes: Vec<(String, PendingClass)> = Vec::new();
    let mut latents: Vec<(String, PendingLatent)> = Vec::new();
    let mut rest = Vec::new();

    fn class_entry<'a>(
        classes: &'a mut Vec<(String, PendingClass)>,
        label: &str,
    ) -> &'a mut PendingClass {
        if let Some(i) = classes.iter().position(|c| c.0 == label) {
            return &mut classes[i].1;
        }
        classes.push((label.to_string(), PendingClass::default()));
        &mut classes.last_mut().expect("just pushed").1
    }
    fn latent_entry<'a>(
        latents: &'a mut Vec<(String, PendingLatent)>,
        name: &str,
    ) -> &'a mut PendingLatent {
        if let Some(i) = latents.iter().position(|c| c.0 == name) {
            return &mut latents[i].1;
        }
        latents.push((name.to_string(), PendingLatent::default()));
        &mut latents.last_mut().expect("just pushed").1
    }

    for section in sections(text)? {
        let parts: Vec<&str> = section.name.split('.').collect();
        let bad = |message: String| Error::SpecFile {
            line: section.line,
            message,
        };
        match parts.as_slice() {
            ["estimation"] => {
                for (n, l) in &section.lines {
                    let (k, v) = key_value(*n, l)?;
                    match k.as_str() {
                        "family" => family = Some(v.parse::<Family>()?),
                        "draws" => draws = number(*n, &v)?,
                        "seed" => seed = number(*n, &v)?,
                        other => {
                            return Err(Error::SpecFile {
                                line: *n,
                                message: format!("unknown estimation key `{other}`"),
                            })
                        }
                    }
                }
            }
            ["alternatives"] => {
                for (n, l) in &section.lines {
                    let (k, v) = key_value(*n, l)?;
                    alternatives.push(Alternative::new(number(*n, &k)?, v));
                }
            }
            ["parameters"] => {
                for (n, l) in &section.lines {
                    parameter_line(&mut params, *n, l)?;
                }
            }
            ["utility", alt] => {
                let terms = base.entry(alt.to_string()).or_default();
                for (n, l) in &section.lines {
                    terms.push(utility_term(*n, l)?);
                }
            }
            ["class", label, "membership"] => {
                let class = class_entry(&mut classes, label);
                for (n, l) in &section.lines {
                    class.membership.push(utility_term(*n, l)?);
                }
            }
            ["class", label, "utility", alt] => {
                let class = class_entry(&mut classes, label);
                let terms = class.utilities.entry(alt.to_string()).or_default();
                for (n, l) in &section.lines {
                    terms.push(utility_term(*n, l)?);
                }
            }
            ["latent", name, "structural"] => {
                let latent = latent_entry(&mut latents, name);
                for (n, l) in &section.lines {
                    if l.contains('*') {
                        latent.structural.push(utility_term(*n, l)?);
                    } else {
                        let (k, v) = key_value(*n, l)?;
                        if k != "scale" {
                            return Err(Error::SpecFile {
                                line: *n,
                                message: format!("unknown structural key `{k}`"),
                            });
                        }
                        latent.scale = Some(v);
                    }
                }
            }
            ["latent", name, "measurement", indicator] => {
                let mut fields: BTreeMap<String, String> = BTreeMap::new();
                for (n, l) in &section.lines {
                    let (k, v) = key_value(*n, l)?;
                    if !matches!(k.as_str(), "intercept" | "loading" | "scale") {
                        return Err(Error::SpecFile {
                            line: *n,
                            message: format!("unknown measurement key `{k}`"),
                        });
                    }
                    fields.insert(k, v);
                }
                let mut take = |k: &str| {
                    fields
                        .remove(k)
                        .ok_or_else(|| bad(format!("measurement of `{indicator}` lacks `{k}`")))
                };
                let eq = MeasurementEq {
                    indicator: indicator.to_string(),
                    intercept: take("intercept")?,
                    loading: take("loading")?,
                    scale: take("scale")?,
                };
                latent_entry(&mut latents, name).measurements.push(eq);
            }
            _ => rest.push(section.clone()),
        }
    }

    let family = family.ok_or_else(|| Error::SpecFile {
        line: 0,
        message: "missing `family` in [estimation]".into(),
    })?;
    let resolve =
        |map: BTreeMap<String, Vec<UtilityTerm>>, owner: &str| -> Result<Vec<Vec<UtilityTerm>>> {
            for key in map.keys() {
                if !alternatives.iter().any(|a| &a.label == key) {
                    return Err(Error::SpecFile {
                        line: 0,
                        message: format!("{owner} references unknown alternative `{key}`"),
                    });
                }
            }
            Ok(alternatives
                .iter()
                .map(|a| map.get(&a.label).cloned().unwrap_or_default())
                .collect())
        };

    let classes = if family.has_classes() || !classes.is_empty() {
        if !base.is_empty() {
            return Err(Error::SpecFile {
                line: 0,
                message: "[utility.*] sections cannot be mixed with class sections".into(),
            });
        }
        classes
            .into_iter()
            .map(|(label, c)| {
                Ok(ClassSpec {
                    utilities: resolve(c.utilities, &format!("class `{label}`"))?,
                    label,
                    membership: c.membership,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![ClassSpec {
            label: "All".into(),
            membership: Vec::new(),
            utilities: resolve(base, "utility")?,
        }]
    };
    let latents = latents
        .into_iter()
        .map(|(name, l)| {
            Ok(LatentVariableSpec {
                scale: l.scale.ok_or_else(|| Error::SpecFile {
                    line: 0,
                    message: format!("latent `{name}` lacks a structural `scale`"),
                })?,
                name,
                structural: l.structural,
                measurements: l.measurements,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let spec = ModelSpec {
        family,
        alternatives,
        classes,
        latents,
        draws,
        seed,
        params,
    };
    spec.check().into_result()?;
    Ok((spec, rest))
}

/// Serializes a spec; `parse_model` of the result reproduces it.
pub fn write_model(spec: &ModelSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[estimation]");
    let _ = writeln!(s, "family = {}", spec.family);
    let _ = writeln!(s, "draws = {}", spec.draws);
    let _ = writeln!(s, "seed = {}", spec.seed);
    let _ = writeln!(s, "\n[alternatives]");
    for a in &spec.alternatives {
        let _ = writeln!(s, "{} = {}", a.index, a.label);
    }
    s.push_str(&write_parameters(&spec.params));
    let terms = |s: &mut String, header: String, terms: &[UtilityTerm]| {
        let _ = writeln!(s, "\n[{header}]");
        for t in terms {
            let _ = writeln!(s, "{} * {}", t.parameter, t.variable);
        }
    };
    if spec.family.has_classes() {
        for c in &spec.classes {
            terms(
                &mut s,
                format!("class.{}.membership", c.label),
                &c.membership,
            );
            for (a, u) in spec.alternatives.iter().zip(&c.utilities) {
                terms(&mut s, format!("class.{}.utility.{}", c.label, a.label), u);
            }
        }
    } else if let Some(c) = spec.classes.first() {
        for (a, u) in spec.alternatives.iter().zip(&c.utilities) {
            terms(&mut s, format!("utility.{}", a.label), u);
        }
    }
    for l in &spec.latents {
        terms(
            &mut s,
            format!("latent.{}.structural", l.name),
            &l.structural,
        );
        let _ = writeln!(s, "scale = {}", l.scale);
        for m in &l.measurements {
            let _ = writeln!(s, "\n[latent.{}.measurement.{}]", l.name, m.indicator);
            let _ = writeln!(s, "intercept = {}", m.intercept);
            let _ = writeln!(s, "loading = {}", m.loading);
            let _ = writeln!(s, "scale = {}", m.scale);
        }
    }
    s
}

/// `[parameters]` section on its own (used for truth files).
pub fn write_parameters(params: &ParameterVector) -> String {
    let mut s = String::from("\n[parameters]\n");
    for p in params.entries() {
        let _ = write!(s, "{} = {:?}", p.name, p.value);
        if !p.is_free() {
            s.push_str(" fixed");
        }
        if let Some(lo) = p.lower {
            let _ = write!(s, " lower={lo:?}");
        }
        if let Some(hi) = p.upper {
            let _ = write!(s, " upper={hi:?}");
        }
        s.push('\n');
    }
    s
}

/// Reads only the `[parameters]` section of a file.
pub fn parse_parameters(text: &str) -> Result<ParameterVector> {
    let mut params = ParameterVector::new();
    let mut seen = false;
    for section in sections(text)? {
        if section.name == "parameters" {
            seen = true;
            for (n, l) in &section.lines {
                parameter_line(&mut params, *n, l)?;
            }
        }
    }
    if !seen {
        return Err(Error::SpecFile {
            line: 0,
            message: "no [parameters] section".into(),
        });
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelspec::{paper_presets, preset, reference_truth};
    use proptest::prelude::*;

    #[test]
    fn presets_round_trip() {
        for spec in paper_presets() {
            let text = write_model(&spec);
            let (back, rest) = parse_model(&text).unwrap();
            assert_eq!(back, spec, "{}", spec.family);
            assert!(rest.is_empty());
        }
    }

    #[test]
    fn unknown_sections_are_passed_through() {
        let mut text = write_model(&preset(Family::Mnl));
        text.push_str("\n[binning.waiting]\nk_max = 6\n");
        let (_, rest) = parse_model(&text).unwrap();
        assert_eq!(rest.len(), 1);
        assert_eq!(rest[0].name, "binning.waiting");
        assert_eq!(rest[0].lines[0].1, "k_max = 6");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "[estimation]\nfamily = MNL\n[parameters]\nA = abc\n";
        match parse_model(text) {
            Err(Error::SpecFile { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_spec_is_rejected_at_load() {
        let text = "[estimation]\nfamily = MNL\n[alternatives]\n1 = A\n2 = B\n\
                    [parameters]\n[utility.B]\nASC * CONSTANT\n";
        assert!(matches!(parse_model(text), Err(Error::Specification(_))));
    }

    #[test]
    fn parameters_only_file() {
        let truth = reference_truth(Family::Lc);
        let back = parse_parameters(&write_parameters(&truth)).unwrap();
        assert_eq!(back, truth);
    }

    proptest! {
        #[test]
        fn values_bounds_and_settings_round_trip(
            values in proptest::collection::vec(-1e6f64..1e6, 41),
            draws in 1usize..5000,
            seed in any::<u64>(),
            bound in proptest::option::of(-5.0f64..5.0),
        ) {
            let mut spec = preset(Family::Iclv);
            spec.params = spec.params.with_free_values(&values).unwrap();
            spec.params.set_bounds("B_TS", bound, bound.map(|b| b + 1.0)).unwrap();
            spec.draws = draws;
            spec.seed = seed;
            let (back, _) = parse_model(&write_model(&spec)).unwrap();
            prop_assert_eq!(back, spec);
        }
    }
}
