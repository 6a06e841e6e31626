//! Command-line front end for the `hybridchoice` library.

pub mod error;
pub mod manifest;
pub mod prepare;
pub mod report;
pub mod tables;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hybridchoice::dataset::{write_csv, Dataset, VarKind};
use hybridchoice::estimator::{warm_start_pipeline, Options};
use hybridchoice::factors::{correlation_matrix, extract_factors, Retention};
use hybridchoice::modelspec::{
    preset, reference_truth, validate, Family, ModelSpec, OSS_INDICATORS, TS_INDICATORS,
};
use hybridchoice::specfile::{parse_model, parse_parameters, write_model, write_parameters};
use hybridchoice::synth::{generate, GeneratorConfig, IndicatorScale};

pub use error::{CliError, CliResult};
use manifest::{sha256_hex, with_suffix, Recorder};

#[derive(Debug, Parser)]
#[command(
    name = "hybridchoice",
    version,
    about = "Hybrid choice model estimation"
)]
struct Cli {
    /// Worker threads for likelihood evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fuse survey and operations files, bin and encode them.
    Prepare(PrepareArgs),
    /// Exploratory factor analysis of indicator columns.
    Factors(FactorsArgs),
    /// Estimate a model from a spec file.
    Estimate(EstimateArgs),
    /// Generate a synthetic dataset from a spec and true parameters.
    Simulate(SimulateArgs),
    /// Write one of the built-in model specs and its reference parameters.
    Preset(PresetArgs),
}

#[derive(Debug, Args)]
struct PrepareArgs {
    #[arg(long)]
    survey: PathBuf,
    #[arg(long)]
    operations: PathBuf,
    /// Key column shared by both files; hashed on load.
    #[arg(long, default_value = "email")]
    id: String,
    /// Encoding and binning rules replacing the built-in ones.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Compare the fused sample with the full inputs.
    #[arg(long)]
    validate: bool,
    /// Seed for the k-means initialisation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct FactorsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "id")]
    id: String,
    /// Comma-separated indicator columns (default: the preset indicators
    /// present in the file).
    #[arg(long, value_delimiter = ',')]
    indicators: Option<Vec<String>>,
    /// Number of factors to keep (default: eigenvalues above one).
    #[arg(long)]
    factors: Option<usize>,
    /// Loading table as TSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "id")]
    id: String,
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    #[arg(long)]
    seed: u64,
    /// Output prefix: writes PREFIX.txt, PREFIX.tsv and PREFIX.manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Estimate the spec alone, without simpler models seeding it.
    #[arg(long)]
    cold: bool,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Parameter file with the true values (default: the spec's values).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Keep indicators continuous instead of rounding to a 1-5 scale.
    #[arg(long)]
    continuous: bool,
}

#[derive(Debug, Args)]
struct PresetArgs {
    #[arg(long)]
    family: Family,
    #[arg(long)]
    out: PathBuf,
    /// Also write the reference parameter values here.
    #[arg(long)]
    truth: Option<PathBuf>,
}

/// Runs the tool and returns the process exit code: 0 success, 2 input or
/// specification error, 3 non-convergence.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n.max(1));
    }
    let outcome = match pool.build() {
        Ok(pool) => pool.install(|| run(cli.command)),
        Err(e) => Err(CliError::Input(format!("cannot start worker pool: {e}"))),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Factors(a) => cmd_factors(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Preset(a) => cmd_preset(a),
    }
}

fn text(bytes: Vec<u8>, path: &Path) -> CliResult<String> {
    String::from_utf8(bytes)
        .map_err(|_| CliError::Input(format!("{} is not valid UTF-8", path.display())))
}

fn csv_bytes(data: &Dataset) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    write_csv(data, &mut out)?;
    Ok(out)
}

fn cmd_prepare(a: PrepareArgs) -> CliResult<()> {
    let mut rec = Recorder::new("prepare");
    rec.seed = Some(a.seed);
    let rules = match &a.rules {
        Some(p) => {
            let bytes = rec.read(p)?;
            prepare::parse_rules(&text(bytes, p)?)?
        }
        None => prepare::Rules::default(),
    };
    let survey_bytes = rec.read(&a.survey)?;
    let ops_bytes = rec.read(&a.operations)?;
    let survey_table = tables::raw_table(&survey_bytes)?;
    let ops_table = tables::raw_table(&ops_bytes)?;
    let survey = tables::load(
        &survey_bytes,
        &tables::infer_schema(&survey_table, &a.id, true, &[])?,
    )?;
    let operations = tables::load(
        &ops_bytes,
        &tables::infer_schema(&ops_table, &a.id, true, &[])?,
    )?;

    let prepared = prepare::prepare(&survey, &operations, &rules, a.seed)?;
    rec.write(&a.out, &csv_bytes(&prepared.data)?)?;

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "Fused {} of {} survey and {} operations records",
        prepared.data.len(),
        survey.len(),
        operations.len()
    );
    for b in &prepared.bins {
        let _ = writeln!(
            summary,
            "{} -> {}: k = {} (elbow suggests {}), centroids {}, upper bounds {}",
            b.rule.source,
            b.rule.target,
            b.clusters.k,
            b.elbow_k,
            join(&b.clusters.centroids),
            join(&b.clusters.boundaries),
        );
    }
    print!("{summary}");

    if a.validate {
        let fused = hybridchoice::dataset::fuse(&survey, &operations)?;
        let v = prepare::validate_sample(&survey, &operations, &fused, &rules)?;
        let table = prepare::render_validation(&v);
        print!("\n{table}");
        rec.write(&with_suffix(&a.out, ".validation.txt"), table.as_bytes())?;
    }
    rec.finish(&a.out)?;
    Ok(())
}

fn join(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn cmd_factors(a: FactorsArgs) -> CliResult<()> {
    let mut rec = Recorder::new("factors");
    let bytes = rec.read(&a.data)?;
    let table = tables::raw_table(&bytes)?;
    let indicators: Vec<String> = match a.indicators {
        Some(list) => list.into_iter().filter(|s| !s.trim().is_empty()).collect(),
        None => TS_INDICATORS
            .iter()
            .chain(OSS_INDICATORS.iter())
            .filter(|i| table.header.iter().any(|h| h == *i))
            .map(|i| i.to_string())
            .collect(),
    };
    if indicators.is_empty() {
        return Err(CliError::Input("no indicator columns to analyse".into()));
    }
    for i in &indicators {
        if !table.header.contains(i) {
            return Err(hybridchoice::Error::MissingColumn { column: i.clone() }.into());
        }
    }
    let schema = tables::infer_schema(&table, &a.id, false, &indicators)?;
    let data = tables::load(&bytes, &schema)?;
    let columns: Vec<(String, Vec<Option<f64>>)> = indicators
        .iter()
        .map(|i| (i.clone(), data.numeric_column(i)))
        .collect();
    let corr = correlation_matrix(&columns)?;
    let retain = match a.factors {
        Some(n) => Retention::Count(n),
        None if indicators.len() == 1 => Retention::Count(1),
        None => Retention::Kaiser,
    };
    let solution = extract_factors(&corr, retain)?;

    let kind = |name: &str| match data.dictionary().get(name) {
        Some(VarKind::Likert) => "Likert",
        _ => "Continuous",
    };
    let width = indicators.iter().map(String::len).max().unwrap_or(9).max(9);
    let mut human = String::new();
    let _ = write!(human, "{:<width$}  {:<10}", "Indicator", "Type");
    for f in 0..solution.n_factors {
        let _ = write!(human, "  {:>9}", format!("Factor {}", f + 1));
    }
    human.push('\n');
    let mut tsv = String::from("indicator\ttype");
    for f in 0..solution.n_factors {
        let _ = write!(tsv, "\tfactor{}", f + 1);
    }
    tsv.push('\n');
    for (r, name) in solution.names.iter().enumerate() {
        let _ = write!(human, "{:<width$}  {:<10}", name, kind(name));
        let _ = write!(tsv, "{name}\t{}", kind(name));
        for f in 0..solution.n_factors {
            let v = solution.loadings[(r, f)];
            let _ = write!(human, "  {v:>9.3}");
            let _ = write!(tsv, "\t{v:?}");
        }
        human.push('\n');
        tsv.push('\n');
    }
    let eig: Vec<String> = solution
        .eigenvalues
        .iter()
        .map(|e| format!("{e:.3}"))
        .collect();
    let _ = writeln!(human, "\nEigenvalues: {}", eig.join(", "));
    print!("{human}");
    if let Some(out) = &a.out {
        rec.write(out, tsv.as_bytes())?;
        rec.finish(out)?;
    }
    Ok(())
}

/// Simpler models estimated first to seed `spec`, in order. Presets that
/// do not fit the data are skipped.
fn pipeline_stages(spec: &ModelSpec, data: &Dataset, cold: bool) -> Vec<ModelSpec> {
    let before: &[Family] = match spec.family {
        _ if cold => &[],
        Family::Mnl => &[],
        Family::Lc | Family::Iclv => &[Family::Mnl],
        Family::LcIclv => &[Family::Mnl, Family::Lc, Family::Iclv],
    };
    let mut stages: Vec<ModelSpec> = before
        .iter()
        .map(|&f| {
            let mut s = preset(f);
            s.draws = spec.draws;
            s.seed = spec.seed;
            s
        })
        .filter(|s| s.alternatives == spec.alternatives && validate(s, data).is_empty())
        .collect();
    stages.push(spec.clone());
    stages
}

fn cmd_estimate(a: EstimateArgs) -> CliResult<()> {
    let mut rec = Recorder::new("estimate");
    let spec_bytes = rec.read(&a.spec)?;
    let spec_sha256 = sha256_hex(&spec_bytes);
    let (mut spec, _) = parse_model(&text(spec_bytes, &a.spec)?)?;
    spec.draws = a.draws;
    spec.seed = a.seed;
    rec.seed = Some(a.seed);
    rec.n_draws = Some(a.draws);

    let data_bytes = rec.read(&a.data)?;
    let data_sha256 = sha256_hex(&data_bytes);
    let table = tables::raw_table(&data_bytes)?;
    let schema = tables::infer_schema(&table, &a.id, false, &spec.indicators())?
        .with_alternatives(spec.alternatives.clone());
    let data = tables::load(&data_bytes, &schema)?;
    validate(&spec, &data).into_result()?;

    let options = Options {
        max_iter: a.max_iter,
        ..Options::default()
    };
    let stages = pipeline_stages(&spec, &data, a.cold);
    let outcome = warm_start_pipeline(&data, &stages, a.seed, options);
    let last = outcome.provenance.last().expect("at least one stage");
    let Some(result) = outcome.results.last().and_then(Option::as_ref) else {
        let note = last.note.clone().unwrap_or_default();
        rec.finish(&a.out)?;
        return Err(CliError::NotConverged(format!(
            "final stage failed: {note}"
        )));
    };

    let info = report::RunInfo {
        spec: &spec,
        spec_sha256,
        data_sha256,
        seed: a.seed,
        n_draws: a.draws,
        outcome: &outcome,
    };
    let human = report::human(&info, result);
    let machine = report::machine(&info, result);
    rec.write(&with_suffix(&a.out, ".txt"), human.as_bytes())?;
    rec.write(&with_suffix(&a.out, ".tsv"), machine.as_bytes())?;
    rec.finish(&a.out)?;
    print!("{human}");
    if !result.converged {
        return Err(CliError::NotConverged(format!(
            "{} stopped after {} iterations with gradient max-norm {:.3e}; the report is flagged",
            result.family, result.iterations, result.gradient_norm
        )));
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let mut rec = Recorder::new("simulate");
    rec.seed = Some(a.seed);
    let spec_bytes = rec.read(&a.spec)?;
    let (spec, _) = parse_model(&text(spec_bytes, &a.spec)?)?;
    let truth = match &a.truth {
        Some(p) => {
            let bytes = rec.read(p)?;
            let mut values = spec.params.clone();
            values.overlay(&parse_parameters(&text(bytes, p)?)?);
            values
        }
        None => spec.params.clone(),
    };
    let mut config = GeneratorConfig::new(spec, truth, a.n, a.seed);
    if a.continuous {
        config.indicators = IndicatorScale::Continuous;
    }
    config.validate()?;
    let synthetic = generate(&config)?;
    rec.write(&a.out, &csv_bytes(&synthetic.data)?)?;
    rec.finish(&a.out)?;

    let counts = synthetic.data.choice_counts();
    let labels: Vec<String> = synthetic
        .data
        .alternatives()
        .iter()
        .zip(&counts)
        .map(|(alt, n)| format!("{} {}", alt.label, n))
        .collect();
    println!("Generated {} observations: {}", a.n, labels.join(", "));
    if synthetic.indicator_draws > 0 && !a.continuous {
        println!(
            "Indicator draws clamped to the scale: {:.2}%",
            100.0 * synthetic.clamp_rate()
        );
    }
    Ok(())
}

fn cmd_preset(a: PresetArgs) -> CliResult<()> {
    let mut rec = Recorder::new("preset");
    rec.write(&a.out, write_model(&preset(a.family)).as_bytes())?;
    if let Some(t) = &a.truth {
        rec.write(t, write_parameters(&reference_truth(a.family)).as_bytes())?;
    }
    rec.finish(&a.out)?;
    Ok(())
}
