//! Concept-aware attention.
//!
//! A modality's tokens query a learnable bank of modal-sharing tokens R.
//! Token-level relevance is max-pooled over the query axis, normalized with a
//! softmax over the bank, and used to mix the bank's value rows into one
//! compact token. Keys and values of R are shared by the text and vision
//! branches; only the query projection differs.

use crate::config::ModelDims;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Rng, Var};
use crate::params::{Binding, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct SharingToken {
    pub bank: ParamId,
    pub size: usize,
}

#[derive(Debug, Clone)]
pub struct CaaParams {
    pub query_text: ParamId,
    pub query_vision: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub width: usize,
    /// Divide relevance logits by √d before the softmax.
    pub logit_scaling: bool,
}

/// Output of one branch: the harmonized 1×d token and its 1×N_r mixing weights.
#[derive(Debug, Clone, Copy)]
pub struct CaaOutput {
    pub token: Var,
    pub weights: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct HarmonizedPair {
    pub s_tilde: Var,
    pub e_tilde: Var,
}

impl SharingToken {
    pub fn init(store: &mut ParamStore, dims: &ModelDims, rng: &mut Rng) -> Self {
        let bank = store.add_gaussian(
            "caa.sharing_tokens",
            "caa",
            &[dims.sharing_tokens, dims.model_width],
            1.0,
            rng,
        );
        SharingToken {
            bank,
            size: dims.sharing_tokens,
        }
    }
}

impl CaaParams {
    pub fn init(store: &mut ParamStore, dims: &ModelDims, logit_scaling: bool, rng: &mut Rng) -> Self {
        let (d_model, d) = (dims.model_width, dims.caa_width);
        let sd = 1.0 / (d_model as f64).sqrt();
        let mut proj = |name: &str| store.add_gaussian(format!("caa.{name}"), "caa", &[d_model, d], sd, rng);
        CaaParams {
            query_text: proj("query_text"),
            query_vision: proj("query_vision"),
            key: proj("key"),
            value: proj("value"),
            width: d,
            logit_scaling,
        }
    }
}

/// S̃ from the attribute tokens S (N_s×D).
pub fn caa_text(g: &mut Graph, b: &Binding, s: Var, r: &SharingToken, p: &CaaParams) -> Result<CaaOutput> {
    concept_attention(g, b, s, p.query_text, r, p)
}

/// Ẽ from the visual tokens Ē (N_v×D).
pub fn caa_vision(g: &mut Graph, b: &Binding, e_bar: Var, r: &SharingToken, p: &CaaParams) -> Result<CaaOutput> {
    concept_attention(g, b, e_bar, p.query_vision, r, p)
}

fn concept_attention(
    g: &mut Graph,
    b: &Binding,
    tokens: Var,
    query: ParamId,
    r: &SharingToken,
    p: &CaaParams,
) -> Result<CaaOutput> {
    let width = g.value(tokens).cols();
    let proj_rows = g.value(b[query]).shape()[0];
    if width != proj_rows {
        return Err(Error::ShapeMismatch {
            op: "concept attention",
            left: g.value(tokens).shape().to_vec(),
            right: g.value(b[query]).shape().to_vec(),
        });
    }
    let q = g.matmul(tokens, b[query])?;
    let keys = g.matmul(b[r.bank], b[p.key])?;
    let values = g.matmul(b[r.bank], b[p.value])?;
    let keys_t = g.transpose(keys)?;
    let relevance = g.matmul(q, keys_t)?; // N_q × N_r
    let mut pooled = g.gmp_rows(relevance)?; // 1 × N_r
    if p.logit_scaling {
        pooled = g.scale(pooled, 1.0 / (p.width as f64).sqrt())?;
    }
    let weights = g.softmax(pooled)?;
    let token = g.matmul(weights, values)?;
    Ok(CaaOutput { token, weights })
}

/// Replacement for CAA in the no-CAA ablation: mean-pool the raw tokens and
/// project them with the branch's query matrix.
pub fn pooled_projection(g: &mut Graph, b: &Binding, tokens: Var, query: ParamId) -> Result<Var> {
    let pooled = g.mean_axis(tokens, 0)?;
    g.matmul(pooled, b[query])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::numerics::Tensor;

    fn setup(n_r: usize, seed: u64) -> (ParamStore, SharingToken, CaaParams, ModelDims) {
        let mut dims = RunConfig::tiny().dims;
        dims.sharing_tokens = n_r;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let r = SharingToken::init(&mut store, &dims, &mut rng);
        let p = CaaParams::init(&mut store, &dims, false, &mut rng);
        (store, r, p, dims)
    }

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
        Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.gaussian()).collect()).unwrap()
    }

    #[test]
    fn single_token_bank_returns_value_row() {
        let (store, r, p, dims) = setup(1, 11);
        let value_row = store.get(r.bank).matmul(store.get(p.value)).unwrap();
        let mut rng = Rng::new(12);
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let s = g.constant(random(dims.attribute_tokens, dims.model_width, &mut rng));
        let e = g.constant(random(dims.visual_tokens, dims.model_width, &mut rng));
        let st = caa_text(&mut g, &b, s, &r, &p).unwrap();
        let et = caa_vision(&mut g, &b, e, &r, &p).unwrap();
        assert_eq!(g.value(st.weights).data(), &[1.0]);
        assert_eq!(g.value(st.token), &value_row);
        assert_eq!(g.value(et.token), &value_row);
    }

    #[test]
    fn duplicated_visual_rows_leave_output_unchanged() {
        let (store, r, p, dims) = setup(4, 13);
        let mut rng = Rng::new(14);
        let e = random(dims.visual_tokens, dims.model_width, &mut rng);
        let doubled = Tensor::new(
            &[2 * dims.visual_tokens, dims.model_width],
            [e.data(), e.data()].concat(),
        )
        .unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let ev = g.constant(e);
        let dv = g.constant(doubled);
        let a = caa_vision(&mut g, &b, ev, &r, &p).unwrap();
        let c = caa_vision(&mut g, &b, dv, &r, &p).unwrap();
        assert_eq!(g.value(a.token), g.value(c.token));
    }

    #[test]
    fn width_mismatch_is_reported() {
        let (store, r, p, dims) = setup(2, 15);
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let s = g.constant(Tensor::zeros(&[3, dims.model_width + 1]));
        assert!(caa_text(&mut g, &b, s, &r, &p).is_err());
    }

    #[test]
    fn logit_scaling_softens_weights() {
        let (mut store, r, mut p, dims) = setup(4, 16);
        let mut rng = Rng::new(17);
        let s = random(dims.attribute_tokens, dims.model_width, &mut rng);
        let entropy = |store: &ParamStore, p: &CaaParams| {
            let mut g = Graph::new();
            let b = store.bind(&mut g, false);
            let sv = g.constant(s.clone());
            let out = caa_text(&mut g, &b, sv, &r, p).unwrap();
            g.value(out.weights).data().iter().map(|w| -w * w.ln()).sum::<f64>()
        };
        // make the pooled logits clearly non-uniform
        store.get_mut(r.bank).data_mut().iter_mut().for_each(|v| *v *= 3.0);
        let plain = entropy(&store, &p);
        p.logit_scaling = true;
        let scaled = entropy(&store, &p);
        assert!(scaled > plain);
    }
}
