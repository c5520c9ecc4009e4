use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use dpsu_core::experiments::{
    emit_report, render_report, run_grid, worker_limit, CorpusSource, ExperimentSpec, ReportFormat,
};
use dpsu_core::ingestion::{
    corpus_stats, k_anonymity_baseline, load_corpus, synth_zipf_corpus, write_tsv_file, CorpusFormat, SynthParams,
};
use dpsu_core::sensitivity::run_audit;
use dpsu_core::{calibrate, run_dpsu, Database, Mechanism, MechanismConfig, PolicyKind, PrivacyParams};

#[derive(Parser)]
#[command(name = "dpsu", version, about = "Differentially private set union")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Release a private set of items from a corpus.
    Run(RunArgs),
    /// Print noise scale, threshold and cutoff as JSON.
    Calibrate(CalibrateArgs),
    /// Corpus statistics (set sizes, item frequencies, Zipf fit).
    Stats(StatsArgs),
    /// Write a synthetic Zipf corpus as TSV.
    Synth(SynthArgs),
    /// Random contraction trials for an update policy.
    Audit(AuditArgs),
    /// Run an experiment grid described by a JSON spec.
    Grid(GridArgs),
    /// Compare a released set with the k-anonymity baseline.
    Kanon(KanonArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus file (.jsonl or .tsv).
    #[arg(long)]
    input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<CorpusFormat>,
    /// n-gram size for raw-text records.
    #[arg(long, default_value_t = 1)]
    ngram: usize,
}

impl CorpusArgs {
    fn load(&self) -> Result<Database> {
        let format = self.format.unwrap_or_else(|| CorpusFormat::from_path(&self.input));
        Ok(load_corpus(&self.input, format, self.ngram)?)
    }
}

#[derive(Args)]
struct PrivacyArgs {
    #[arg(long)]
    mechanism: Mechanism,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    delta0: usize,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    privacy: PrivacyArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    passes: u32,
    /// Allow non-private settings (passes > 1). The report is marked non-private.
    #[arg(long)]
    experimental: bool,
    /// Report path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the released items, one per line.
    #[arg(long)]
    items_out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    privacy: PrivacyArgs,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Set-size thresholds on top of the defaults (1, 10, 50, 100, 300).
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    users: usize,
    #[arg(long)]
    vocab: usize,
    #[arg(long, default_value_t = 1.0)]
    exponent: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lognormal set-size parameters; defaults fit the reference set-size fractions.
    #[arg(long, requires = "size_sigma")]
    size_mu: Option<f64>,
    #[arg(long, requires = "size_mu")]
    size_sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    policy: PolicyKind,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Output path; format follows the extension (.json, .md, .csv).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the extension-based format.
    #[arg(long)]
    format: Option<ReportFormat>,
}

#[derive(Args)]
struct KanonArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Released items, one per line.
    #[arg(long)]
    released: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25")]
    k: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn to_json(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let db = args.corpus.load()?;
    let p = &args.privacy;
    let params = PrivacyParams::new(p.epsilon, p.delta)?;
    let config = MechanismConfig::new(p.mechanism, p.delta0, p.alpha, args.seed)
        .with_passes(args.passes)
        .with_experimental(args.experimental);
    let report = run_dpsu(&db, &config, &params)?;
    if let Some(path) = &args.items_out {
        let mut text = String::new();
        for item in &report.released {
            text.push_str(item);
            text.push('\n');
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    write_out(args.output.as_deref(), &to_json(&report)?)
}

#[derive(Serialize)]
struct CalibrationOutput {
    mechanism: Mechanism,
    epsilon: f64,
    delta: f64,
    delta0: usize,
    alpha: f64,
    scale: f64,
    rho: f64,
    gamma: f64,
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let p = &args.privacy;
    let params = PrivacyParams::new(p.epsilon, p.delta)?;
    let c = calibrate(p.mechanism, &params, p.delta0, p.alpha)?;
    let out = CalibrationOutput {
        mechanism: p.mechanism,
        epsilon: p.epsilon,
        delta: p.delta,
        delta0: p.delta0,
        alpha: p.alpha,
        scale: c.scale,
        rho: c.rho,
        gamma: c.gamma,
    };
    write_out(None, &to_json(&out)?)
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let db = args.corpus.load()?;
    write_out(args.out.as_deref(), &to_json(&corpus_stats(&db, &args.thresholds))?)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut params = SynthParams::new(args.users, args.vocab, args.exponent, args.seed);
    if let (Some(mu), Some(sigma)) = (args.size_mu, args.size_sigma) {
        params = params.with_set_sizes(mu, sigma);
    }
    let db = synth_zipf_corpus(&params)?;
    write_tsv_file(&db, &args.out)?;
    eprintln!("wrote {} users to {}", db.len(), args.out.display());
    Ok(())
}

fn cmd_audit(args: AuditArgs) -> Result<bool> {
    let verdict = run_audit(args.policy, args.trials, args.seed)?;
    write_out(args.out.as_deref(), &to_json(&verdict)?)?;
    Ok(verdict.failed == 0)
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    let text = fs::read_to_string(&args.spec).with_context(|| format!("reading {}", args.spec.display()))?;
    let mut spec: ExperimentSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.spec.display()))?;
    // corpus paths are relative to the grid file
    if let CorpusSource::File { path, .. } = &mut spec.corpus {
        if path.is_relative() {
            if let Some(dir) = args.spec.parent() {
                *path = dir.join(&*path);
            }
        }
    }
    let result = run_grid(&spec)?;
    for cell in result.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!(
            "cell {} eps={} delta0={} alpha={} passes={} failed: {}",
            cell.cell.mechanism,
            cell.cell.epsilon,
            cell.cell.delta0,
            cell.cell.alpha,
            cell.cell.passes,
            cell.error.as_deref().unwrap_or_default()
        );
    }
    match &args.out {
        Some(path) => {
            let format = args.format.unwrap_or_else(|| ReportFormat::from_path(path));
            emit_report(&result, format, path)?;
        }
        None => write_out(None, &render_report(&result, args.format.unwrap_or(ReportFormat::Json))?)?,
    }
    Ok(())
}

fn cmd_kanon(args: KanonArgs) -> Result<()> {
    let db = args.corpus.load()?;
    let text = fs::read_to_string(&args.released)
        .with_context(|| format!("reading {}", args.released.display()))?;
    let released: BTreeSet<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if args.k.is_empty() {
        bail!("--k needs at least one value");
    }
    let rows: Vec<_> = args.k.iter().map(|&k| k_anonymity_baseline(&db, k, &released)).collect();
    let value = json!({ "released_size": released.len(), "baselines": rows });
    write_out(args.out.as_deref(), &to_json(&value)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = worker_limit() {
        // later calls fail harmlessly if the pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Calibrate(a) => cmd_calibrate(a).map(|_| true),
        Command::Stats(a) => cmd_stats(a).map(|_| true),
        Command::Synth(a) => cmd_synth(a).map(|_| true),
        Command::Audit(a) => cmd_audit(a),
        Command::Grid(a) => cmd_grid(a).map(|_| true),
        Command::Kanon(a) => cmd_kanon(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
