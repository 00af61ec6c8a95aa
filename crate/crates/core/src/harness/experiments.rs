//! End-to-end runs: single training runs, ablations, sweeps and the model
//! gradient check.

use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::config::{Ablation, RunConfig};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::harness::dataset::{generate_dataset, ZslDataset};
use crate::harness::model::ModelParams;
use crate::harness::train::{batch_loss, evaluate_model, train, TrainLog};
use crate::numerics::{gradcheck, GradReport, Graph, Rng, Tensor, Var};
use crate::objective::Prototypes;
use crate::params::Binding;

pub fn dataset_for(cfg: &RunConfig) -> Result<ZslDataset> {
    generate_dataset(cfg, &mut Rng::substream(cfg.seed, "data"))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: ModelParams,
    pub log: TrainLog,
    pub report: EvalReport,
}

pub fn run(cfg: &RunConfig, data: &ZslDataset) -> Result<RunOutcome> {
    let (model, log) = train(cfg, data)?;
    let report = evaluate_model(cfg, &model, data)?;
    Ok(RunOutcome { model, log, report })
}

/// Runs `f` over `items`, in parallel when asked, returning results in input order.
fn map_grid<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if !parallel || items.len() < 2 {
        return items.iter().map(&f).collect();
    }
    thread::scope(|s| {
        let handles: Vec<_> = items.iter().map(|it| s.spawn(|| f(it))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("grid worker panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub label: String,
    pub acc_zsl: f64,
    pub seen: f64,
    pub unseen: f64,
    pub harmonic: f64,
    pub gamma: f64,
    pub final_loss: f64,
}

impl ResultRow {
    fn new(label: String, out: &RunOutcome) -> Self {
        ResultRow {
            label,
            acc_zsl: out.report.acc_zsl,
            seen: out.report.seen,
            unseen: out.report.unseen,
            harmonic: out.report.harmonic,
            gamma: out.report.gamma,
            final_loss: out.log.mean_total_tail(50),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    /// Name of the varied quantity; the CSV header of the first column.
    pub key: String,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn row(&self, label: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([self.key.as_str(), "acc_zsl", "seen", "unseen", "harmonic", "gamma", "final_loss"])?;
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.acc_zsl.to_string(),
                r.seen.to_string(),
                r.unseen.to_string(),
                r.harmonic.to_string(),
                r.gamma.to_string(),
                r.final_loss.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// The four ablation variants, in table order.
pub fn ablation_variants() -> [Ablation; 4] {
    let none = Ablation::default();
    [
        none,
        Ablation { no_prompt: true, ..none },
        Ablation { no_residual: true, ..none },
        Ablation { no_caa: true, ..none },
    ]
}

/// Trains every ablation variant on the same data and initial parameters.
pub fn ablate(cfg: &RunConfig, data: &ZslDataset, parallel: bool) -> Result<ResultTable> {
    let variants = ablation_variants();
    let results = map_grid(&variants, parallel, |&ablation| {
        let mut c = cfg.clone();
        c.ablation = ablation;
        run(&c, data).map(|out| ResultRow::new(ablation.label(), &out))
    });
    Ok(ResultTable {
        key: "variant".into(),
        rows: results.into_iter().collect::<Result<_>>()?,
    })
}

/// Retrains over the configured prompt lengths.
pub fn sweep_prompt_length(cfg: &RunConfig, data: &ZslDataset, parallel: bool) -> Result<ResultTable> {
    let grid = cfg.sweep.prompt_lengths.clone();
    let results = map_grid(&grid, parallel, |&t| {
        let mut c = cfg.clone();
        c.dims.prompt_length = t;
        run(&c, data).map(|out| ResultRow::new(t.to_string(), &out))
    });
    Ok(ResultTable {
        key: "prompt_length".into(),
        rows: results.into_iter().collect::<Result<_>>()?,
    })
}

/// Retrains over the configured consistency-loss weights.
pub fn sweep_lambda_cons(cfg: &RunConfig, data: &ZslDataset, parallel: bool) -> Result<ResultTable> {
    let grid = cfg.sweep.lambda_cons.clone();
    let results = map_grid(&grid, parallel, |&l| {
        let mut c = cfg.clone();
        c.loss.lambda_cons = l;
        run(&c, data).map(|out| ResultRow::new(l.to_string(), &out))
    });
    Ok(ResultTable {
        key: "lambda_cons".into(),
        rows: results.into_iter().collect::<Result<_>>()?,
    })
}

/// Finite-difference check of the full batch objective with respect to every
/// model parameter. With `perturb_residual` the zero-initialized ZLinear is
/// replaced by small random weights so gradients also reach the attention
/// and sharing-token parameters upstream of Z.
pub fn gradcheck_model(cfg: &RunConfig, perturb_residual: bool, batch_size: usize, step: f64) -> Result<GradReport> {
    let data = dataset_for(cfg)?;
    let mut model = ModelParams::init(cfg);
    if perturb_residual {
        let mut rng = Rng::substream(cfg.seed, "gradcheck");
        for id in [model.vrru.z_weight, model.vrru.z_bias] {
            let t = model.store.get_mut(id);
            t.data_mut().iter_mut().for_each(|v| *v = 0.3 * rng.gaussian());
        }
    }
    let prototypes = Prototypes::new(data.prototypes().clone())?;
    let batch: Vec<usize> = data.train_indices().into_iter().take(batch_size).collect();
    let params: Vec<(String, Tensor)> = model
        .store
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.tensor.clone()))
        .collect();
    let objective = |g: &mut Graph, vars: &[Var]| {
        let b = Binding::from_vars(vars.to_vec());
        Ok(batch_loss(&model, g, &b, &data, &prototypes, &batch, cfg)?.total)
    };
    gradcheck(objective, &params, step)
}
