use std::fmt::Write as _;

use hybridchoice::estimator::{EstimationResult, PipelineOutcome, Significance};
use hybridchoice::modelspec::ModelSpec;

/// Three significant figures.
pub fn sig3(x: f64) -> String {
    if !x.is_finite() {
        return "NA".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = |v: f64| 2 - v.abs().log10().floor() as i32;
    let d = digits(x);
    let scale = 10f64.powi(d);
    let rounded = (x * scale).round() / scale;
    let d = digits(rounded);
    if d > 0 {
        format!("{:.*}", d as usize, rounded)
    } else {
        format!("{rounded:.0}")
    }
}

fn marker(s: Significance) -> &'static str {
    match s {
        Significance::P95 => "",
        Significance::P90 => "*",
        Significance::None => "**",
    }
}

/// Summary of an estimate run shared by both report formats.
pub struct RunInfo<'a> {
    pub spec: &'a ModelSpec,
    pub spec_sha256: String,
    pub data_sha256: String,
    pub seed: u64,
    pub n_draws: usize,
    pub outcome: &'a PipelineOutcome,
}

pub fn human(info: &RunInfo, result: &EstimationResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} estimation results", result.family);
    let draws = if info.spec.family.has_latents() {
        info.n_draws.to_string()
    } else {
        "none".into()
    };
    let _ = writeln!(
        out,
        "Observations: {}   Draws: {}   Seed: {}",
        result.n_obs, draws, info.seed
    );
    if result.converged {
        let _ = writeln!(out, "Converged after {} iterations", result.iterations);
    } else {
        let _ = writeln!(
            out,
            "NOT CONVERGED after {} iterations (gradient max-norm {:.3e})",
            result.iterations, result.gradient_norm
        );
    }
    out.push('\n');

    let width = result
        .params
        .entries()
        .iter()
        .map(|p| p.name.len())
        .max()
        .unwrap_or(9)
        .max("Parameter".len());
    let _ = writeln!(
        out,
        "{:<width$}  {:>10}  {:>12}",
        "Parameter", "Estimate", "Rob. t-test"
    );
    let _ = writeln!(out, "{}", "-".repeat(width + 26));
    for (i, name) in result.free_names.iter().enumerate() {
        let t = result.robust_t[i];
        let _ = writeln!(
            out,
            "{:<width$}  {:>10}  {:>10}{:<2}",
            name,
            sig3(result.params.value(name).unwrap_or(f64::NAN)),
            sig3(t),
            marker(result.significance[i]),
        );
    }
    let fixed: Vec<_> = result
        .params
        .entries()
        .iter()
        .filter(|p| !p.is_free())
        .collect();
    if !fixed.is_empty() {
        out.push('\n');
        let _ = writeln!(out, "Fixed parameters");
        for p in fixed {
            let _ = writeln!(out, "{:<width$}  {:>10}", p.name, sig3(p.value));
        }
    }

    out.push('\n');
    let _ = writeln!(out, "Performance indicators");
    let _ = writeln!(
        out,
        "{:<24}{:>10}",
        "Initial log-likelihood",
        format!("{:.2}", result.ll_initial)
    );
    let _ = writeln!(
        out,
        "{:<24}{:>10}",
        "Final log-likelihood",
        format!("{:.2}", result.ll_final)
    );
    let _ = writeln!(
        out,
        "{:<24}{:>10}",
        "Rho-square-bar",
        format!("{:.3}", result.rho_square_bar)
    );
    let _ = writeln!(out, "{:<24}{:>10}", "No. of parameters", result.n_free);

    if !info.outcome.provenance.is_empty() {
        out.push('\n');
        let _ = writeln!(out, "Estimation stages");
        for stage in &info.outcome.provenance {
            let from: Vec<String> = stage.seeded_from.iter().map(|f| f.to_string()).collect();
            let _ = writeln!(
                out,
                "  {:<8} {:<14} seeded from [{}], {} values{}",
                stage.family.to_string(),
                if stage.converged {
                    "converged"
                } else {
                    "not converged"
                },
                from.join(", "),
                stage.seeded_parameters,
                stage
                    .note
                    .as_ref()
                    .map(|n| format!(" ({n})"))
                    .unwrap_or_default(),
            );
        }
    }
    if !result.warnings.is_empty() {
        out.push('\n');
        let _ = writeln!(out, "Warnings");
        for w in &result.warnings {
            let _ = writeln!(out, "  {w}");
        }
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "* Not statistically significant at 95% confidence level"
    );
    let _ = writeln!(
        out,
        "** Not statistically significant at 90% confidence level"
    );
    out
}

/// `name<TAB>value` lines at full precision, grouped in bracketed blocks.
pub fn machine(info: &RunInfo, result: &EstimationResult) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}\t{v}");
    };
    kv("command", "estimate".into());
    kv("version", env!("CARGO_PKG_VERSION").into());
    kv("family", result.family.to_string());
    kv("spec_sha256", info.spec_sha256.clone());
    kv("data_sha256", info.data_sha256.clone());
    kv("seed", info.seed.to_string());
    kv("n_draws", info.n_draws.to_string());
    kv("n_obs", result.n_obs.to_string());
    kv("n_free", result.n_free.to_string());
    kv("converged", result.converged.to_string());
    kv("iterations", result.iterations.to_string());
    kv("gradient_norm", format!("{:?}", result.gradient_norm));
    kv("ll_initial", format!("{:?}", result.ll_initial));
    kv("ll_final", format!("{:?}", result.ll_final));
    kv("rho_square_bar", format!("{:?}", result.rho_square_bar));
    kv(
        "canonical_classes",
        match info.outcome.canonical_classes {
            Some(b) => b.to_string(),
            None => "na".into(),
        },
    );
    for (k, stage) in info.outcome.provenance.iter().enumerate() {
        kv(
            &format!("stage.{}", k + 1),
            format!(
                "{}\t{}",
                stage.family,
                if stage.converged {
                    "converged"
                } else {
                    "not_converged"
                }
            ),
        );
    }

    let _ = writeln!(out, "[estimate]");
    for name in &result.free_names {
        let _ = writeln!(
            out,
            "{name}\t{:?}",
            result.params.value(name).unwrap_or(f64::NAN)
        );
    }
    let _ = writeln!(out, "[robust_se]");
    for (name, se) in result.free_names.iter().zip(&result.robust_se) {
        let _ = writeln!(out, "{name}\t{se:?}");
    }
    let _ = writeln!(out, "[robust_t]");
    for (name, t) in result.free_names.iter().zip(&result.robust_t) {
        let _ = writeln!(out, "{name}\t{t:?}");
    }
    let _ = writeln!(out, "[fixed]");
    for p in result.params.entries().iter().filter(|p| !p.is_free()) {
        let _ = writeln!(out, "{}\t{:?}", p.name, p.value);
    }
    if !result.warnings.is_empty() {
        let _ = writeln!(out, "[warnings]");
        for w in &result.warnings {
            let _ = writeln!(out, "{w}");
        }
    }
    out
}
