mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tdreg::fit::{Family, ModelKind};
use tdreg::ingest::ValueColumns;
use tdreg::synth::PlantedEffect;

use config::PipelineConfig;
use error::CliError;
use output::{Provenance, Staging};

#[derive(Debug, Parser)]
#[command(name = "tdreg", version, about = "Scalar-on-time-by-distribution regression for minute-level activity data")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override any configuration key, e.g. `--set fit.k_t=8`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true, value_enum)]
    family: Option<FamilyArg>,
    /// Minute-level activity CSV.
    #[arg(long, global = true)]
    minutes: Option<PathBuf>,
    /// Subject table CSV (id, outcome, covariates).
    #[arg(long, global = true)]
    subjects: Option<PathBuf>,
    #[arg(long, global = true)]
    col_subject: Option<String>,
    #[arg(long, global = true)]
    col_day: Option<String>,
    #[arg(long, global = true)]
    col_minute: Option<String>,
    #[arg(long, global = true)]
    col_value: Option<String>,
    /// Three comma-separated axis columns combined into vector magnitude.
    #[arg(long, global = true, value_name = "ML,AP,VT", conflicts_with = "col_value")]
    col_triaxial: Option<String>,
    #[arg(long, global = true)]
    col_missing: Option<String>,
    /// Covariate columns in the subject table, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FamilyArg {
    Logit,
    Identity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    M1,
    M2,
    M3,
    M4,
    #[value(name = "sotdr-l", alias = "sotdr_l")]
    SotdrL,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate activity input and write it in canonical form.
    Ingest,
    /// Build subject-level features: means, curves, quantiles, surfaces, L-moments.
    Features,
    /// Fit the requested models and write coefficient tables.
    Fit(ModelOpts),
    /// Repeated cross-validation of predictive performance.
    Cv(CvOpts),
    /// Subject-level biomarker scores from models M1 to M4.
    Biomarkers,
    /// Write estimated coefficient curves and surfaces on their grids.
    ExportSurfaces(ModelOpts),
    /// Generate a synthetic cohort with a planted effect.
    Synth(SynthOpts),
}

#[derive(Debug, Args)]
struct ModelOpts {
    #[arg(long, value_enum, value_delimiter = ',')]
    model: Vec<ModelArg>,
}

#[derive(Debug, Args)]
struct CvOpts {
    #[command(flatten)]
    models: ModelOpts,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Compute one AUC from pooled out-of-fold predictions per repeat.
    #[arg(long)]
    pooled: bool,
}

#[derive(Debug, Args)]
struct SynthOpts {
    #[arg(long)]
    n_subjects: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    /// none, scalar, temporal, distributional, td_surface or lmoment:R.
    #[arg(long)]
    effect: Option<String>,
    #[arg(long)]
    effect_size: Option<f64>,
}

fn parse_effect(s: &str) -> Result<PlantedEffect, CliError> {
    let effect = match s.replace('-', "_").as_str() {
        "none" => PlantedEffect::None,
        "scalar" => PlantedEffect::Scalar,
        "temporal" => PlantedEffect::Temporal,
        "distributional" => PlantedEffect::Distributional,
        "td_surface" | "td" => PlantedEffect::TdSurface,
        other => {
            let order = other
                .strip_prefix("lmoment:")
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| CliError::Config(format!("unknown effect `{s}`")))?;
            PlantedEffect::LmomentOrder { order }
        }
    };
    Ok(effect)
}

fn model_list(args: &[ModelArg]) -> Option<Vec<ModelKind>> {
    if args.is_empty() {
        return None;
    }
    if args.iter().any(|m| matches!(m, ModelArg::All)) {
        return Some(ModelKind::ALL.to_vec());
    }
    let mut out = Vec::new();
    for m in args {
        let k = match m {
            ModelArg::M1 => ModelKind::M1,
            ModelArg::M2 => ModelKind::M2,
            ModelArg::M3 => ModelKind::M3,
            ModelArg::M4 => ModelKind::M4,
            ModelArg::SotdrL => ModelKind::SotdrL,
            ModelArg::All => unreachable!(),
        };
        if !out.contains(&k) {
            out.push(k);
        }
    }
    Some(out)
}

/// File, then `--set` overrides, then dedicated flags.
fn build_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let g = &cli.global;
    let base = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut cfg = base.with_overrides(&g.overrides)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output_dir = o.clone();
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    if let Some(f) = g.family {
        cfg.family = match f {
            FamilyArg::Logit => Family::Logit,
            FamilyArg::Identity => Family::Identity,
        };
    }
    if let Some(p) = &g.minutes {
        cfg.input.minutes = p.clone();
    }
    if let Some(p) = &g.subjects {
        cfg.input.subjects = p.clone();
    }
    let schema = &mut cfg.input.schema;
    for (flag, slot) in [
        (&g.col_subject, &mut schema.subject),
        (&g.col_day, &mut schema.day),
        (&g.col_minute, &mut schema.minute),
    ] {
        if let Some(v) = flag {
            *slot = v.clone();
        }
    }
    if let Some(v) = &g.col_value {
        schema.values = ValueColumns::Single { value: v.clone() };
    }
    if let Some(v) = &g.col_triaxial {
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        let [ml, ap, vt] = parts[..] else {
            return Err(CliError::Config(format!("--col-triaxial needs three columns, got `{v}`")));
        };
        schema.values = ValueColumns::Triaxial {
            ml: ml.into(),
            ap: ap.into(),
            vt: vt.into(),
        };
    }
    if let Some(v) = &g.col_missing {
        schema.missing = (!v.is_empty() && v != "none").then(|| v.clone());
    }
    if let Some(c) = &g.covariates {
        cfg.input.covariates = c.iter().filter(|s| !s.is_empty()).cloned().collect();
    }
    match &cli.command {
        Command::Fit(m) | Command::ExportSurfaces(m) => {
            if let Some(ms) = model_list(&m.model) {
                cfg.models = ms;
            }
        }
        Command::Cv(c) => {
            if let Some(ms) = model_list(&c.models.model) {
                cfg.models = ms;
            }
            if let Some(f) = c.folds {
                cfg.cv.folds = f;
            }
            if let Some(r) = c.repeats {
                cfg.cv.repeats = r;
            }
            if c.pooled {
                cfg.cv.pooled = true;
            }
        }
        Command::Synth(s) => {
            if let Some(n) = s.n_subjects {
                cfg.synth.n_subjects = n;
            }
            if let Some(d) = s.days {
                cfg.synth.n_days = d;
            }
            if let Some(e) = &s.effect {
                cfg.synth.effect = parse_effect(e)?;
            }
            if let Some(v) = s.effect_size {
                cfg.synth.effect_size = v;
            }
        }
        _ => {}
    }
    cfg.resolve()
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = build_config(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let provenance = Provenance::new(cfg.hash()?, cfg.seed);
    let mut stage = Staging::new(&cfg.output_dir, provenance)?;
    match &cli.command {
        Command::Ingest => commands::ingest(&cfg, &mut stage)?,
        Command::Features => commands::features(&cfg, &mut stage)?,
        Command::Fit(_) => commands::fit(&cfg, &mut stage)?,
        Command::Cv(_) => commands::cv(&cfg, &mut stage)?,
        Command::Biomarkers => commands::biomarkers(&cfg, &mut stage)?,
        Command::ExportSurfaces(_) => commands::export_surfaces(&cfg, &mut stage)?,
        Command::Synth(_) => commands::synth(&cfg, &mut stage)?,
    }
    for p in stage.commit()? {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
