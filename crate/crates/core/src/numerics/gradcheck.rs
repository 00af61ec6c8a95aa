//! Central-difference gradient checking against [`Graph::backward`].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;

/// Relative error as `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub step: f64,
    pub params: Vec<ParamCheck>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    /// Parameters whose worst element exceeds `tolerance`.
    pub fn flagged(&self, tolerance: f64) -> Vec<&ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error >= tolerance).collect()
    }
}

/// Checks the analytic gradient of the scalar built by `f` with respect to
/// each tensor in `params`. `f` receives a fresh graph and one parameter
/// node per input tensor, in order.
pub fn gradcheck<F>(f: F, params: &[(String, Tensor)], step: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::Config(format!("gradcheck step must be positive, got {step}")));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v)).collect();
    drop(g);

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut current: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut report = GradReport {
        step,
        params: Vec::with_capacity(params.len()),
    };
    for (pi, (name, _)) in params.iter().enumerate() {
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            max_abs_grad: 0.0,
        };
        for k in 0..current[pi].len() {
            let orig = current[pi].data()[k];
            current[pi].data_mut()[k] = orig + step;
            let plus = eval(&current)?;
            current[pi].data_mut()[k] = orig - step;
            let minus = eval(&current)?;
            current[pi].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi].data()[k];
            let rel = relative_error(a, numeric);
            check.max_abs_grad = check.max_abs_grad.max(a.abs());
            if rel > check.max_rel_error || k == 0 {
                check.max_rel_error = rel;
                check.worst_index = k;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
