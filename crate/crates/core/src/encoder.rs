//! Toy prompt-conditioned transformer encoder and the attribute-token table.
//!
//! Patches are embedded, the prompt tokens are prepended once at the input
//! (shallow prompting) and the joint sequence runs through pre-norm
//! single-head blocks. Outputs are split back into the prompt embedding P̄ and
//! the visual tokens Ē.

use crate::config::ModelDims;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Rng, Tensor, Var};
use crate::params::{Binding, ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub ff_in: ParamId,
    pub ff_out: ParamId,
}

impl BlockParams {
    pub fn ids(&self) -> [ParamId; 10] {
        [
            self.ln1_gain,
            self.ln1_bias,
            self.query,
            self.key,
            self.value,
            self.output,
            self.ln2_gain,
            self.ln2_bias,
            self.ff_in,
            self.ff_out,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub width: usize,
    pub raw_width: usize,
    pub visual_tokens: usize,
    pub patch_embed: ParamId,
    pub positions: Option<ParamId>,
    pub blocks: Vec<BlockParams>,
    /// One row per attribute descriptor (N_s×D).
    pub attribute_table: ParamId,
}

#[derive(Debug, Clone)]
pub struct PromptParams {
    pub prompt: ParamId,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EncodedSample {
    pub e_bar: Var,
    /// `None` when encoding without a prompt.
    pub p_bar: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockOutput {
    pub tokens: Var,
    /// Row-stochastic n×n attention matrix.
    pub attention: Var,
}

impl EncoderParams {
    pub fn init(store: &mut ParamStore, dims: &ModelDims, positional: bool, rng: &mut Rng) -> Self {
        let d = dims.model_width;
        let sd = 1.0 / (d as f64).sqrt();
        let patch_embed = store.add_gaussian(
            "encoder.patch_embed",
            "encoder",
            &[dims.raw_patch_width, d],
            1.0 / (dims.raw_patch_width as f64).sqrt(),
            rng,
        );
        let positions = positional
            .then(|| store.add_gaussian("encoder.positions", "encoder", &[dims.visual_tokens, d], 0.02, rng));
        let blocks = (0..dims.encoder_layers)
            .map(|l| {
                let name = |s: &str| format!("encoder.block{l}.{s}");
                BlockParams {
                    ln1_gain: store.add(name("ln1.gain"), "encoder", Tensor::filled(&[1, d], 1.0)),
                    ln1_bias: store.add(name("ln1.bias"), "encoder", Tensor::zeros(&[1, d])),
                    query: store.add_gaussian(name("attn.query"), "encoder", &[d, d], sd, rng),
                    key: store.add_gaussian(name("attn.key"), "encoder", &[d, d], sd, rng),
                    value: store.add_gaussian(name("attn.value"), "encoder", &[d, d], sd, rng),
                    output: store.add_gaussian(name("attn.output"), "encoder", &[d, d], sd, rng),
                    ln2_gain: store.add(name("ln2.gain"), "encoder", Tensor::filled(&[1, d], 1.0)),
                    ln2_bias: store.add(name("ln2.bias"), "encoder", Tensor::zeros(&[1, d])),
                    ff_in: store.add_gaussian(name("ffn.in"), "encoder", &[d, 4 * d], sd, rng),
                    ff_out: store.add_gaussian(name("ffn.out"), "encoder", &[4 * d, d], 0.5 * sd, rng),
                }
            })
            .collect();
        let attribute_table =
            store.add_gaussian("attributes.table", "attribute", &[dims.attribute_tokens, d], 1.0, rng);
        EncoderParams {
            width: d,
            raw_width: dims.raw_patch_width,
            visual_tokens: dims.visual_tokens,
            patch_embed,
            positions,
            blocks,
            attribute_table,
        }
    }

    /// Every parameter owned by the encoder except the attribute table.
    pub fn backbone_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.patch_embed];
        ids.extend(self.positions);
        for b in &self.blocks {
            ids.extend(b.ids());
        }
        ids
    }
}

impl PromptParams {
    pub fn init(store: &mut ParamStore, dims: &ModelDims, rng: &mut Rng) -> Self {
        let prompt = store.add_gaussian("prompt", "prompt", &[dims.prompt_length, dims.model_width], 1.0, rng);
        PromptParams {
            prompt,
            len: dims.prompt_length,
        }
    }
}

/// The sharing attribute tokens S (N_s×D).
pub fn embed_attributes(b: &Binding, params: &EncoderParams) -> Var {
    b[params.attribute_table]
}

pub fn encode(
    g: &mut Graph,
    b: &Binding,
    raw_patches: Var,
    prompt: Option<&PromptParams>,
    params: &EncoderParams,
) -> Result<EncodedSample> {
    let shape = g.value(raw_patches).shape().to_vec();
    if shape != [params.visual_tokens, params.raw_width] {
        return Err(Error::ShapeMismatch {
            op: "encode",
            left: shape,
            right: vec![params.visual_tokens, params.raw_width],
        });
    }
    let mut patches = g.matmul(raw_patches, b[params.patch_embed])?;
    if let Some(pos) = params.positions {
        patches = g.add(patches, b[pos])?;
    }
    let (mut tokens, t) = match prompt {
        Some(p) => (g.concat(&[b[p.prompt], patches], 0)?, p.len),
        None => (patches, 0),
    };
    for block in &params.blocks {
        tokens = self_attention_block(g, b, tokens, block)?.tokens;
    }
    let p_bar = if t > 0 {
        Some(g.slice_rows(tokens, 0, t)?)
    } else {
        None
    };
    let e_bar = g.slice_rows(tokens, t, params.visual_tokens)?;
    Ok(EncodedSample { e_bar, p_bar })
}

/// Pre-norm single-head attention and GELU feed-forward, each with a residual.
pub fn self_attention_block(g: &mut Graph, b: &Binding, tokens: Var, p: &BlockParams) -> Result<BlockOutput> {
    let width = g.value(tokens).cols();
    let h = g.layer_norm(tokens, b[p.ln1_gain], b[p.ln1_bias], LAYER_NORM_EPS)?;
    let q = g.matmul(h, b[p.query])?;
    let k = g.matmul(h, b[p.key])?;
    let v = g.matmul(h, b[p.value])?;
    let kt = g.transpose(k)?;
    let logits = g.matmul(q, kt)?;
    let logits = g.scale(logits, 1.0 / (width as f64).sqrt())?;
    let attention = g.softmax(logits)?;
    let mixed = g.matmul(attention, v)?;
    let attn_out = g.matmul(mixed, b[p.output])?;
    let x = g.add(tokens, attn_out)?;

    let h = g.layer_norm(x, b[p.ln2_gain], b[p.ln2_bias], LAYER_NORM_EPS)?;
    let hidden = g.matmul(h, b[p.ff_in])?;
    let hidden = g.gelu(hidden)?;
    let ff_out = g.matmul(hidden, b[p.ff_out])?;
    let tokens = g.add(x, ff_out)?;
    Ok(BlockOutput { tokens, attention })
}
