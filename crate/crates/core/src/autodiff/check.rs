use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{Bindings, Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    /// Largest relative error per differentiable leaf.
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares reverse-mode gradients of a scalar output with central differences
/// `(f(x+ε) − f(x−ε)) / 2ε` on every coordinate of every differentiable named leaf.
///
/// Leaf values are restored before returning.
pub fn grad_check(graph: &mut Graph, output: NodeId, bindings: &Bindings, epsilon: f64, tolerance: f64) -> Result<GradReport> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let base = graph.evaluate(output, bindings)?;
    if base.len() != 1 {
        return Err(Error::NotScalar(base.shape().to_vec()));
    }
    let analytic = graph.backward_scalar(output)?;

    let mut per_param = BTreeMap::new();
    for (name, grad) in &analytic {
        let id = graph.leaf_id(name).expect("gradient names come from leaves");
        let original = graph.get(id).clone();
        if !original.is_finite() {
            return Err(Error::invalid(format!("leaf `{name}` is not finite")));
        }
        let mut worst: f64 = 0.0;
        for k in 0..original.len() {
            let probe = |delta: f64, graph: &mut Graph| -> Result<f64> {
                let mut v: Tensor = original.clone();
                v.data_mut()[k] += delta;
                graph.set_leaf_value(id, v);
                graph.recompute(output)?;
                Ok(graph.get(output).item())
            };
            let plus = probe(epsilon, graph)?;
            let minus = probe(-epsilon, graph)?;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(grad.data()[k], numeric));
        }
        graph.set_leaf_value(id, original);
        per_param.insert(name.clone(), worst);
    }
    graph.recompute(output)?;

    let max_rel_error = per_param.values().copied().fold(0.0, f64::max);
    Ok(GradReport {
        per_param,
        max_rel_error,
        epsilon,
        tolerance,
        pass: max_rel_error <= tolerance,
    })
}
