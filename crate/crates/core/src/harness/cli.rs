//! Command-line entry point. Exit codes: 0 success, 1 configuration or usage
//! error, 2 runtime or divergence error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, sweep_gamma, PredictionScores};
use crate::harness::dataset::ZslDataset;
use crate::harness::experiments::{ablate, dataset_for, gradcheck_model, sweep_lambda_cons, sweep_prompt_length};
use crate::harness::model::ModelParams;
use crate::harness::train::train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Relative-error threshold the `gradcheck` subcommand enforces.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "aenet", about = "Attribute-enhanced prompt network for zero-shot learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic benchmark and write it to <out>/data.
    GenData(Common),
    /// Train a model; writes <out>/params and <out>/train_log.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory from gen-data; regenerated from the seed when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate trained parameters or a stored score matrix.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Parameter directory; defaults to <out>/params.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Score matrix (.aent with a .json sidecar) to evaluate instead of a model.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Train and evaluate the four ablation variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference check of the full objective.
    Gradcheck(Common),
    /// Sweep the calibrated-stacking factor over the configured grid.
    SweepGamma {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Retrain over the configured prompt lengths.
    #[command(name = "sweep-T")]
    SweepT {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Retrain over the configured consistency-loss weights.
    SweepLambda {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &RunConfig, dir: Option<&Path>) -> Result<ZslDataset> {
    match dir {
        Some(d) => ZslDataset::load(d),
        None => dataset_for(cfg),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn model_scores(cfg: &RunConfig, data: Option<&Path>, params: Option<&Path>) -> Result<PredictionScores> {
    let data = load_data(cfg, data)?;
    let mut model = ModelParams::init(cfg);
    let dir = params.map_or_else(|| cfg.output_dir.join("params"), Path::to_path_buf);
    model.store.load_into(&dir)?;
    model.score_test_set(&data)
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData(common) => {
            let cfg = resolve(&common)?;
            let data = dataset_for(&cfg)?;
            data.save(&cfg.output_dir.join("data"))?;
            eprintln!(
                "wrote {} samples ({} classes) to {}",
                data.samples().len(),
                data.classes(),
                cfg.output_dir.join("data").display()
            );
        }
        Command::Train { common, data } => {
            let cfg = resolve(&common)?;
            let dataset = load_data(&cfg, data.as_deref())?;
            let (model, log) = train(&cfg, &dataset)?;
            ensure_dir(&cfg.output_dir)?;
            model.store.save(&cfg.output_dir.join("params"))?;
            write_json(&cfg.output_dir.join("train_log.json"), &log)?;
            write_json(&cfg.output_dir.join("config.json"), &cfg)?;
            if let Some(last) = log.steps.last() {
                eprintln!("trained {} steps, final loss {:.6}", log.steps.len(), last.total);
            }
        }
        Command::Eval {
            common,
            data,
            params,
            scores,
        } => {
            let cfg = resolve(&common)?;
            let matrix = match scores {
                Some(path) => PredictionScores::load(&path)?,
                None => {
                    let m = model_scores(&cfg, data.as_deref(), params.as_deref())?;
                    m.save(&cfg.output_dir, "scores")?;
                    m
                }
            };
            let report = evaluate(&matrix, &cfg.eval.gamma_grid, cfg.eval.gamma)?;
            ensure_dir(&cfg.output_dir)?;
            write_json(&cfg.output_dir.join("eval_report.json"), &report)?;
            report.sweep.write_csv(&cfg.output_dir.join("gamma_sweep.csv"))?;
            eprintln!(
                "acc={:.4} S={:.4} U={:.4} H={:.4} gamma={}",
                report.acc_zsl, report.seen, report.unseen, report.harmonic, report.gamma
            );
        }
        Command::Ablate { common, data } => {
            let cfg = resolve(&common)?;
            let dataset = load_data(&cfg, data.as_deref())?;
            let table = ablate(&cfg, &dataset, true)?;
            ensure_dir(&cfg.output_dir)?;
            write_json(&cfg.output_dir.join("ablation.json"), &table)?;
            table.write_csv(&cfg.output_dir.join("ablation.csv"))?;
        }
        Command::Gradcheck(common) => {
            let cfg = resolve(&common)?;
            let at_init = gradcheck_model(&cfg, false, 4, 1e-5)?;
            let perturbed = gradcheck_model(&cfg, true, 4, 1e-5)?;
            ensure_dir(&cfg.output_dir)?;
            #[derive(Serialize)]
            struct Out<'a> {
                tolerance: f64,
                max_rel_error: f64,
                at_init: &'a crate::numerics::GradReport,
                perturbed_residual: &'a crate::numerics::GradReport,
            }
            let worst = at_init.max_rel_error().max(perturbed.max_rel_error());
            write_json(
                &cfg.output_dir.join("gradcheck.json"),
                &Out {
                    tolerance: GRADCHECK_TOLERANCE,
                    max_rel_error: worst,
                    at_init: &at_init,
                    perturbed_residual: &perturbed,
                },
            )?;
            eprintln!("gradcheck max relative error {worst:.3e}");
            if worst >= GRADCHECK_TOLERANCE {
                for p in at_init.flagged(GRADCHECK_TOLERANCE).into_iter().chain(perturbed.flagged(GRADCHECK_TOLERANCE)) {
                    eprintln!("  flagged {}: rel {:.3e}", p.name, p.max_rel_error);
                }
                return Ok(EXIT_RUNTIME);
            }
        }
        Command::SweepGamma {
            common,
            data,
            params,
            scores,
        } => {
            let cfg = resolve(&common)?;
            let matrix = match scores {
                Some(path) => PredictionScores::load(&path)?,
                None => model_scores(&cfg, data.as_deref(), params.as_deref())?,
            };
            let sweep = sweep_gamma(&matrix, &cfg.eval.gamma_grid)?;
            ensure_dir(&cfg.output_dir)?;
            sweep.write_csv(&cfg.output_dir.join("gamma_sweep.csv"))?;
            let best = sweep.best_point();
            eprintln!("best gamma {} (H={:.4})", best.gamma, best.harmonic);
        }
        Command::SweepT { common, data } => {
            let cfg = resolve(&common)?;
            let dataset = load_data(&cfg, data.as_deref())?;
            let table = sweep_prompt_length(&cfg, &dataset, true)?;
            ensure_dir(&cfg.output_dir)?;
            table.write_csv(&cfg.output_dir.join("sweep_T.csv"))?;
        }
        Command::SweepLambda { common, data } => {
            let cfg = resolve(&common)?;
            let dataset = load_data(&cfg, data.as_deref())?;
            let table = sweep_lambda_cons(&cfg, &dataset, true)?;
            ensure_dir(&cfg.output_dir)?;
            table.write_csv(&cfg.output_dir.join("sweep_lambda.csv"))?;
        }
    }
    Ok(EXIT_OK)
}
