//! Full model assembly: encoder → CAA → VRRU → feature → mapping → scores.

use crate::caa::{self, CaaParams, HarmonizedPair, SharingToken};
use crate::config::{Ablation, ModelDims, ModelOptions, RunConfig};
use crate::encoder::{self, EncoderParams, PromptParams};
use crate::error::Result;
use crate::eval::PredictionScores;
use crate::harness::dataset::{class_name, ZslDataset};
use crate::numerics::{Graph, Rng, Tensor, Var};
use crate::objective::{self, MappingParams, Prototypes};
use crate::params::{Binding, ParamStore};
use crate::vrru::{self, VrruParams};

/// Every trainable tensor of the model plus the handles each component uses.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub options: ModelOptions,
    pub ablation: Ablation,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub prompt: PromptParams,
    pub bank: SharingToken,
    pub caa: CaaParams,
    pub vrru: VrruParams,
    pub mapping: MappingParams,
}

/// Per-graph values shared by every sample of a batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchContext {
    pub unit_columns: Var,
    /// S̃, or its pooled replacement under the no-CAA ablation.
    pub s_tilde: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct SampleForward {
    /// 1×C cosine scores against every class.
    pub scores: Var,
    /// Residual Z; `None` when the residual branch is disabled.
    pub z: Option<Var>,
    pub f_x: Var,
    pub e_bar: Var,
    pub p_bar: Option<Var>,
}

impl ModelParams {
    /// Initializes all components from the `init` substream of `cfg.seed`.
    /// Every component is created regardless of ablation flags, so variants
    /// built from the same config share identical values for common tensors.
    pub fn init(cfg: &RunConfig) -> Self {
        let mut rng = Rng::substream(cfg.seed, "init");
        let dims = cfg.dims.clone();
        let options = cfg.model.clone();
        let mut store = ParamStore::new();
        let encoder = EncoderParams::init(&mut store, &dims, options.positional_encoding, &mut rng);
        let prompt = PromptParams::init(&mut store, &dims, &mut rng);
        let bank = SharingToken::init(&mut store, &dims, &mut rng);
        let caa = CaaParams::init(&mut store, &dims, options.caa_logit_scaling, &mut rng);
        let vrru = VrruParams::init(&mut store, &dims, cfg.loss.squared_consistency, &mut rng);
        let mapping = MappingParams::init(&mut store, &dims, options.mapping_bias, &mut rng);
        if !options.train_encoder {
            for id in encoder.backbone_ids() {
                store.set_trainable(id, false);
            }
        }
        if options.freeze_attributes {
            store.set_trainable(encoder.attribute_table, false);
        }
        ModelParams {
            dims,
            options,
            ablation: cfg.ablation,
            store,
            encoder,
            prompt,
            bank,
            caa,
            vrru,
            mapping,
        }
    }

    pub fn uses_residual(&self) -> bool {
        !self.ablation.no_prompt && !self.ablation.no_residual
    }

    pub fn prepare(&self, g: &mut Graph, b: &Binding, prototypes: &Prototypes) -> Result<BatchContext> {
        let unit_columns = g.constant(prototypes.unit_columns().clone());
        let s_tilde = if self.uses_residual() {
            let s = encoder::embed_attributes(b, &self.encoder);
            Some(if self.ablation.no_caa {
                caa::pooled_projection(g, b, s, self.caa.query_text)?
            } else {
                caa::caa_text(g, b, s, &self.bank, &self.caa)?.token
            })
        } else {
            None
        };
        Ok(BatchContext { unit_columns, s_tilde })
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, ctx: &BatchContext, raw: Var) -> Result<SampleForward> {
        let prompt = (!self.ablation.no_prompt).then_some(&self.prompt);
        let enc = encoder::encode(g, b, raw, prompt, &self.encoder)?;
        let (f_x, z) = match (enc.p_bar, ctx.s_tilde) {
            (None, _) => (enc.e_bar, None),
            (Some(p_bar), None) => (vrru::assemble_feature(g, p_bar, enc.e_bar)?, None),
            (Some(p_bar), Some(s_tilde)) => {
                let e_tilde = if self.ablation.no_caa {
                    caa::pooled_projection(g, b, enc.e_bar, self.caa.query_vision)?
                } else {
                    caa::caa_vision(g, b, enc.e_bar, &self.bank, &self.caa)?.token
                };
                let z = vrru::predict_residual(g, b, HarmonizedPair { s_tilde, e_tilde }, &self.vrru)?;
                let p_tilde = vrru::enhance_prompt(g, p_bar, z)?;
                (vrru::assemble_feature(g, p_tilde, enc.e_bar)?, Some(z))
            }
        };
        let semantic = objective::map_to_semantic(g, b, f_x, &self.mapping)?;
        let scores = objective::cosine_scores(g, semantic, ctx.unit_columns)?;
        Ok(SampleForward {
            scores,
            z,
            f_x,
            e_bar: enc.e_bar,
            p_bar: enc.p_bar,
        })
    }

    /// Cosine scores of one raw sample against every class, without gradients.
    pub fn score_sample(&self, raw: &Tensor, prototypes: &Prototypes) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.store.bind(&mut g, false);
        let ctx = self.prepare(&mut g, &b, prototypes)?;
        let x = g.constant(raw.clone());
        let out = self.forward(&mut g, &b, &ctx, x)?;
        Ok(g.value(out.scores).clone())
    }

    /// Score matrix for every test sample of `data`.
    pub fn score_test_set(&self, data: &ZslDataset) -> Result<PredictionScores> {
        const CHUNK: usize = 64;
        let prototypes = Prototypes::new(data.prototypes().clone())?;
        let idx = data.test_indices();
        let c = data.classes();
        let mut rows = Vec::with_capacity(idx.len() * c);
        let mut labels = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(CHUNK) {
            let mut g = Graph::new();
            let b = self.store.bind(&mut g, false);
            let ctx = self.prepare(&mut g, &b, &prototypes)?;
            for &i in chunk {
                let sample = &data.samples()[i];
                let x = g.constant(sample.patches.clone());
                let out = self.forward(&mut g, &b, &ctx, x)?;
                rows.extend_from_slice(g.value(out.scores).data());
                labels.push(sample.label);
            }
        }
        PredictionScores::new(
            Tensor::new(&[idx.len(), c], rows)?,
            (0..c).map(class_name).collect(),
            data.seen_mask().to_vec(),
            labels,
        )
    }
}
