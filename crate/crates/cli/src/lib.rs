//! Command-line pipeline: generate or ingest records, calibrate, predict,
//! evaluate, select levels under size budgets, verify and report.

pub mod commands;
pub mod config;
pub mod report;
pub mod verify;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};
use coco_core::{Aggregation, Method};

pub use commands::{RunManifest, SeedEntry};
pub use config::{BudgetsConfig, LevelsConfig, RunConfig};
pub use verify::{VerifyFailed, VerifySummary};

#[derive(Debug, Parser)]
#[command(name = "coco", version, about = "Consistent conformal prediction over labels and concepts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Avg,
    Product,
}

#[derive(Clone, Debug, clap::Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// raw | to | tab | co | cde | rpb | coco | coco-star
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub budget_labels: Option<f64>,
    #[arg(long)]
    pub budget_concepts: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Reject records whose (c*, y*) lies outside the knowledge support.
    #[arg(long)]
    pub strict: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic records, or validate and copy the input file.
    Gen(CommonArgs),
    /// Fit calibration thresholds on the calibration split.
    Calibrate(CommonArgs),
    /// Build prediction sets for the test split.
    Predict(CommonArgs),
    /// Score predictions against ground truth.
    Evaluate(CommonArgs),
    /// Bootstrap level selection under set-size budgets.
    Budget(CommonArgs),
    /// gen, calibrate, predict and evaluate in one go.
    Run(CommonArgs),
    /// Randomized oracle checks; exits with status 4 on any failure.
    Verify(CommonArgs),
    /// Aggregate manifests into a mean ± std table.
    Report {
        /// Manifest files or output directories containing manifest.json.
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Directory for report.txt and report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Marks errors in loading or validating the configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Loads the config and applies command-line overrides.
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    apply_overrides(args).map_err(|e| ConfigError(format!("{e:#}")).into())
}

fn apply_overrides(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(m) = args.method {
        cfg.method = m;
    }
    match (args.alpha, args.beta) {
        (None, None) => {}
        (a, b) => {
            let base = cfg.levels.clone().unwrap_or(LevelsConfig { alpha: 0.1, beta: 0.1 });
            cfg.levels = Some(LevelsConfig { alpha: a.unwrap_or(base.alpha), beta: b.unwrap_or(base.beta) });
            cfg.budgets = None;
        }
    }
    match (args.budget_labels, args.budget_concepts) {
        (None, None) => {}
        (Some(l), Some(c)) => {
            if args.alpha.is_some() || args.beta.is_some() {
                bail!("levels: --alpha/--beta conflict with --budget-labels/--budget-concepts");
            }
            let mut b = cfg.budgets.clone().unwrap_or_else(|| BudgetsConfig::new(l, c));
            b.labels = l;
            b.concepts = c;
            cfg.budgets = Some(b);
            cfg.levels = None;
        }
        _ => bail!("budgets: pass both --budget-labels and --budget-concepts"),
    }
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::Avg => Aggregation::Avg,
            ModeArg::Product => Aggregation::Product,
        };
    }
    cfg.strict |= args.strict;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => commands::cmd_gen(&resolve_config(&a)?),
        Command::Calibrate(a) => commands::cmd_calibrate(&resolve_config(&a)?),
        Command::Predict(a) => commands::cmd_predict(&resolve_config(&a)?),
        Command::Evaluate(a) => print_json(&commands::cmd_evaluate(&resolve_config(&a)?)?),
        Command::Run(a) => print_json(&commands::cmd_run(&resolve_config(&a)?)?),
        Command::Budget(a) => {
            let reports = commands::cmd_budget(&resolve_config(&a)?)?;
            for r in &reports {
                println!(
                    "mean alpha {:.4}  mean beta {:.4}  infeasible {}  label coverage {:.4}  concept coverage {:.4}",
                    r.selection.mean_alpha,
                    r.selection.mean_beta,
                    r.selection.infeasible_iterations,
                    r.mean_label_coverage,
                    r.mean_concept_coverage
                );
            }
            Ok(())
        }
        Command::Verify(a) => {
            let cfg = resolve_config(&a)?;
            let summary = verify::run_verify(&cfg)?;
            commands::write_json(&cfg.out_dir.join("verify.json"), &summary)?;
            for c in &summary.checks {
                let status = if c.passed() { "PASS" } else { "FAIL" };
                println!("{status} {:<32} seed {:<4} {}/{} failures  {}", c.name, c.seed, c.failures, c.instances, c.detail);
            }
            let failed = summary.checks.iter().filter(|c| !c.passed()).count();
            if failed > 0 {
                return Err(VerifyFailed(failed).into());
            }
            Ok(())
        }
        Command::Report { manifests, out } => {
            let loaded = manifests
                .iter()
                .map(|p| {
                    let p = if p.is_dir() { p.join("manifest.json") } else { p.clone() };
                    RunManifest::load(&p)
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = report::summarize(&loaded)?;
            let table = report::render_table(&rows);
            print!("{table}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("report.txt"), &table)?;
                report::write_csv(&rows, &dir.join("report.csv"))?;
            }
            Ok(())
        }
    }
}

/// Process exit status for an error: 1 usage/config, 2 data, 3 cap, 4 verification.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<VerifyFailed>().is_some() {
        return 4;
    }
    if err.downcast_ref::<ConfigError>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<coco_core::Error>() {
            return match e {
                coco_core::Error::CapExceeded { .. } => 3,
                e if e.is_data_error() => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}
