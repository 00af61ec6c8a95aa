//! Visual residual refinement.
//!
//! A zero-initialized linear layer predicts a residual Z from the harmonized
//! pair [S̃, Ẽ]. Z is pulled towards an MLP projection of the class attribute
//! prototype and added to every prompt token.

use crate::config::ModelDims;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Rng, Tensor, Var};
use crate::params::{Binding, ParamId, ParamStore};
use crate::caa::HarmonizedPair;

#[derive(Debug, Clone)]
pub struct VrruParams {
    /// ZLinear weight, (2d)×D, zero at construction.
    pub z_weight: ParamId,
    /// ZLinear bias, 1×D, zero at construction.
    pub z_bias: ParamId,
    pub mlp_in: ParamId,
    pub mlp_in_bias: ParamId,
    pub mlp_out: ParamId,
    pub mlp_out_bias: ParamId,
    pub squared: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct EnhancedFeature {
    pub z: Var,
    pub p_tilde: Var,
    pub f_x: Var,
}

impl VrruParams {
    pub fn init(store: &mut ParamStore, dims: &ModelDims, squared: bool, rng: &mut Rng) -> Self {
        let (d, k, h) = (dims.model_width, dims.attributes, dims.mlp_hidden);
        VrruParams {
            z_weight: store.add("vrru.zlinear.weight", "vrru", Tensor::zeros(&[2 * dims.caa_width, d])),
            z_bias: store.add("vrru.zlinear.bias", "vrru", Tensor::zeros(&[1, d])),
            mlp_in: store.add_gaussian("vrru.mlp.in", "vrru", &[k, h], 1.0 / (k as f64).sqrt(), rng),
            mlp_in_bias: store.add("vrru.mlp.in_bias", "vrru", Tensor::zeros(&[1, h])),
            mlp_out: store.add_gaussian("vrru.mlp.out", "vrru", &[h, d], 1.0 / (h as f64).sqrt(), rng),
            mlp_out_bias: store.add("vrru.mlp.out_bias", "vrru", Tensor::zeros(&[1, d])),
            squared,
        }
    }
}

/// Z = ZLinear([S̃, Ẽ]), a 1×D row.
pub fn predict_residual(g: &mut Graph, b: &Binding, pair: HarmonizedPair, p: &VrruParams) -> Result<Var> {
    let joint = g.concat(&[pair.s_tilde, pair.e_tilde], 1)?;
    let in_rows = g.value(b[p.z_weight]).shape()[0];
    if g.value(joint).cols() != in_rows {
        return Err(Error::ShapeMismatch {
            op: "predict_residual",
            left: g.value(joint).shape().to_vec(),
            right: g.value(b[p.z_weight]).shape().to_vec(),
        });
    }
    let z = g.matmul(joint, b[p.z_weight])?;
    g.add_row(z, b[p.z_bias])
}

/// MLP projection of an attribute prototype (1×K) into residual space (1×D).
pub fn project_attributes(g: &mut Graph, b: &Binding, a_y: Var, p: &VrruParams) -> Result<Var> {
    let h = g.matmul(a_y, b[p.mlp_in])?;
    let h = g.add_row(h, b[p.mlp_in_bias])?;
    let h = g.gelu(h)?;
    let out = g.matmul(h, b[p.mlp_out])?;
    g.add_row(out, b[p.mlp_out_bias])
}

/// ‖Z − MLP(a_y)‖, or its square when configured.
pub fn consistency_loss(g: &mut Graph, b: &Binding, z: Var, a_y: Var, p: &VrruParams) -> Result<Var> {
    let target = project_attributes(g, b, a_y, p)?;
    let diff = g.sub(z, target)?;
    if p.squared {
        let sq = g.mul(diff, diff)?;
        g.sum(sq)
    } else {
        g.norm(diff)
    }
}

/// Adds Z to every row of P̄.
pub fn enhance_prompt(g: &mut Graph, p_bar: Var, z: Var) -> Result<Var> {
    g.add_row(p_bar, z)
}

/// f(x) = [P̃; Ē], prompt rows first.
pub fn assemble_feature(g: &mut Graph, p_tilde: Var, e_bar: Var) -> Result<Var> {
    g.concat(&[p_tilde, e_bar], 0)
}
