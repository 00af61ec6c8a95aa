//! Run configuration. JSON with fully spelled keys; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    /// Token width of the encoder (D).
    pub model_width: usize,
    /// Width of the concept-harmonized tokens (d).
    pub caa_width: usize,
    /// Number of prompt tokens (T).
    pub prompt_length: usize,
    /// Visual tokens per sample (N_v).
    pub visual_tokens: usize,
    /// Attribute descriptor tokens (N_s).
    pub attribute_tokens: usize,
    /// Size of the modal-sharing token bank (N_r).
    pub sharing_tokens: usize,
    /// Attribute space dimension (K).
    pub attributes: usize,
    /// Raw patch width (d_raw).
    pub raw_patch_width: usize,
    /// Hidden width of the attribute MLP (D_h).
    pub mlp_hidden: usize,
    /// Transformer blocks in the encoder (L_enc).
    pub encoder_layers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            model_width: 16,
            caa_width: 16,
            prompt_length: 5,
            visual_tokens: 8,
            attribute_tokens: 12,
            sharing_tokens: 4,
            attributes: 12,
            raw_patch_width: 8,
            mlp_hidden: 32,
            encoder_layers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub seen_classes: usize,
    /// Samples generated per seen class (train + test).
    pub samples_per_class: usize,
    /// Test samples per class; unseen classes get only these.
    pub test_per_class: usize,
    pub noise_std: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            classes: 20,
            seen_classes: 15,
            samples_per_class: 50,
            test_per_class: 10,
            noise_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_cons: f64,
    pub lambda_deb: f64,
    /// Softmax temperature over cosine scores in the classification loss.
    pub temperature: f64,
    /// Use ‖·‖² instead of ‖·‖ for the consistency loss.
    pub squared_consistency: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_cons: 1.0,
            lambda_deb: 1.0,
            temperature: 1.0,
            squared_consistency: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 2000,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    /// Learned positional embeddings on patch tokens.
    pub positional_encoding: bool,
    /// Scale concept-attention logits by 1/√d.
    pub caa_logit_scaling: bool,
    pub mapping_bias: bool,
    /// Keep the attribute-token table fixed at its initial values.
    pub freeze_attributes: bool,
    /// Update encoder weights during training; the prompt is always trained.
    pub train_encoder: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            positional_encoding: false,
            caa_logit_scaling: false,
            mapping_bias: false,
            freeze_attributes: false,
            train_encoder: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_prompt: bool,
    pub no_residual: bool,
    pub no_caa: bool,
}

impl Ablation {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_prompt {
            parts.push("no_prompt");
        }
        if self.no_residual {
            parts.push("no_residual");
        }
        if self.no_caa {
            parts.push("no_caa");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub gamma_grid: Vec<f64>,
    /// Fixed calibration factor; when absent the grid point with the best H is used.
    pub gamma: Option<f64>,
    /// Evaluate on the test split every this many steps (0 = only at the end).
    pub eval_every: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            gamma_grid: default_gamma_grid(),
            gamma: None,
            eval_every: 0,
        }
    }
}

/// 21 evenly spaced points on [0, 1].
pub fn default_gamma_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub prompt_lengths: Vec<usize>,
    pub lambda_cons: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            prompt_lengths: vec![1, 3, 5, 7, 9],
            lambda_cons: vec![0.0, 0.5, 1.0, 1.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dims: ModelDims,
    pub data: DataConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub model: ModelOptions,
    pub ablation: Ablation,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            dims: ModelDims::default(),
            data: DataConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            model: ModelOptions::default(),
            ablation: Ablation::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Small configuration used by the gradient suite.
    pub fn tiny() -> Self {
        let mut cfg = RunConfig::default();
        cfg.dims = ModelDims {
            model_width: 8,
            caa_width: 8,
            prompt_length: 2,
            visual_tokens: 4,
            attribute_tokens: 6,
            sharing_tokens: 3,
            attributes: 6,
            raw_patch_width: 4,
            mlp_hidden: 16,
            encoder_layers: 2,
        };
        cfg.data = DataConfig {
            classes: 8,
            seen_classes: 6,
            samples_per_class: 6,
            test_per_class: 2,
            noise_std: 0.5,
        };
        cfg.optimizer.batch_size = 4;
        cfg.optimizer.steps = 20;
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let dims = [
            ("model_width", d.model_width),
            ("caa_width", d.caa_width),
            ("prompt_length", d.prompt_length),
            ("visual_tokens", d.visual_tokens),
            ("attribute_tokens", d.attribute_tokens),
            ("sharing_tokens", d.sharing_tokens),
            ("attributes", d.attributes),
            ("raw_patch_width", d.raw_patch_width),
            ("mlp_hidden", d.mlp_hidden),
            ("encoder_layers", d.encoder_layers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("dims.{name} must be at least 1")));
            }
        }
        let data = &self.data;
        if data.seen_classes == 0 || data.seen_classes >= data.classes {
            return Err(Error::Config(format!(
                "need 1 <= seen_classes < classes, got {} of {}",
                data.seen_classes, data.classes
            )));
        }
        if data.test_per_class == 0 || data.test_per_class >= data.samples_per_class {
            return Err(Error::Config(format!(
                "need 1 <= test_per_class < samples_per_class, got {} of {}",
                data.test_per_class, data.samples_per_class
            )));
        }
        if !(data.noise_std >= 0.0 && data.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be finite and nonnegative".into()));
        }
        let l = &self.loss;
        if !(l.lambda_cons >= 0.0 && l.lambda_deb >= 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if !(l.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0)
            || !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
            || !(o.epsilon > 0.0)
        {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        if o.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.eval.gamma_grid.is_empty() || self.eval.gamma_grid.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("gamma_grid must be nonempty and finite".into()));
        }
        if self.sweep.prompt_lengths.contains(&0) {
            return Err(Error::Config("prompt lengths must be at least 1".into()));
        }
        if self.sweep.lambda_cons.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("swept lambda_cons values must be nonnegative".into()));
        }
        Ok(())
    }
}
