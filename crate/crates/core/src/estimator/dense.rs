//! Helpers for storing dense layer stacks in a named parameter map.
//!
//! Layer `prefix` owns `"{prefix}/weights"` and `"{prefix}/biases"`.

use crate::error::{Error, Result};
use crate::numerics::{
    backward_stack, fully_connected_forward, glorot_init, stack_fully_connected, Activation, BackwardOutput,
    DenseLayerParams, LayerCache, NamedTensors, RngState, Tensor,
};

pub fn weights_name(prefix: &str) -> String {
    format!("{prefix}/weights")
}

pub fn biases_name(prefix: &str) -> String {
    format!("{prefix}/biases")
}

fn lookup<'a>(params: &'a NamedTensors, name: &str) -> Result<&'a Tensor> {
    params
        .get(name)
        .ok_or_else(|| Error::shape("model", format!("missing parameter {name:?}")))
}

/// Glorot-initialised layers with widths `dims[i] → dims[i+1]`, one per prefix.
pub fn init_dense_stack(prefixes: &[String], dims: &[usize], rng: &mut RngState) -> Result<NamedTensors> {
    if dims.len() != prefixes.len() + 1 {
        return Err(Error::Internal(format!(
            "{} layer names for {} widths",
            prefixes.len(),
            dims.len()
        )));
    }
    if let Some(d) = dims.iter().position(|&d| d == 0) {
        return Err(Error::validation(format!("layer width {d} is zero")));
    }
    let mut out = NamedTensors::new();
    for (prefix, w) in prefixes.iter().zip(dims.windows(2)) {
        let layer = glorot_init(w[0], w[1], rng);
        out.insert(weights_name(prefix), layer.weights);
        out.insert(biases_name(prefix), layer.bias);
    }
    Ok(out)
}

/// Zero-initialised single layer.
pub fn init_zero_layer(prefix: &str, in_dim: usize, out_dim: usize) -> NamedTensors {
    NamedTensors::from([
        (weights_name(prefix), Tensor::zeros(in_dim, out_dim)),
        (biases_name(prefix), Tensor::zeros(1, out_dim)),
    ])
}

pub fn dense_layer(params: &NamedTensors, prefix: &str) -> Result<DenseLayerParams> {
    DenseLayerParams::new(
        lookup(params, &weights_name(prefix))?.clone(),
        lookup(params, &biases_name(prefix))?.clone(),
    )
}

pub fn dense_stack(params: &NamedTensors, prefixes: &[String]) -> Result<Vec<DenseLayerParams>> {
    prefixes.iter().map(|p| dense_layer(params, p)).collect()
}

/// Names the per-layer gradients of a backward pass after the layer prefixes.
pub fn dense_stack_grads(prefixes: &[String], backward: BackwardOutput) -> Result<NamedTensors> {
    if prefixes.len() != backward.layers.len() {
        return Err(Error::Internal(format!(
            "{} layer names for {} gradient sets",
            prefixes.len(),
            backward.layers.len()
        )));
    }
    let mut out = NamedTensors::new();
    for (prefix, g) in prefixes.iter().zip(backward.layers) {
        out.insert(weights_name(prefix), g.weights);
        out.insert(biases_name(prefix), g.bias);
    }
    Ok(out)
}

/// Relu hidden layers (with optional dropout) under `{scope}/hiddenlayer_{i}`
/// followed by a linear output layer `{scope}/logits`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseNet {
    scope: String,
    hidden_units: Vec<usize>,
    n_outputs: usize,
}

/// A forward pass kept for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseNetPass {
    pub logits: Tensor,
    caches: Vec<LayerCache>,
    layers: Vec<DenseLayerParams>,
}

impl DenseNet {
    pub fn new(scope: impl Into<String>, hidden_units: &[usize], n_outputs: usize) -> Result<Self> {
        if let Some(i) = hidden_units.iter().position(|&u| u == 0) {
            return Err(Error::validation(format!("hidden layer {i} has zero units")));
        }
        if n_outputs == 0 {
            return Err(Error::validation("output layer needs at least one unit"));
        }
        Ok(DenseNet {
            scope: scope.into(),
            hidden_units: hidden_units.to_vec(),
            n_outputs,
        })
    }

    pub fn hidden_units(&self) -> &[usize] {
        &self.hidden_units
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// Layer prefixes, hidden layers first and the output layer last.
    pub fn prefixes(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..self.hidden_units.len())
            .map(|i| format!("{}/hiddenlayer_{i}", self.scope))
            .collect();
        out.push(format!("{}/logits", self.scope));
        out
    }

    fn dims(&self, n_inputs: usize) -> Vec<usize> {
        let mut dims = vec![n_inputs];
        dims.extend_from_slice(&self.hidden_units);
        dims.push(self.n_outputs);
        dims
    }

    pub fn init_glorot(&self, n_inputs: usize, rng: &mut RngState) -> Result<NamedTensors> {
        init_dense_stack(&self.prefixes(), &self.dims(n_inputs), rng)
    }

    pub fn init_zeros(&self, n_inputs: usize) -> Result<NamedTensors> {
        if n_inputs == 0 {
            return Err(Error::validation("layer width 0 is zero"));
        }
        let dims = self.dims(n_inputs);
        let mut out = NamedTensors::new();
        for (prefix, w) in self.prefixes().iter().zip(dims.windows(2)) {
            out.extend(init_zero_layer(prefix, w[0], w[1]));
        }
        Ok(out)
    }

    pub fn forward(
        &self,
        params: &NamedTensors,
        x: &Tensor,
        keep_prob: f64,
        rng: &mut RngState,
        training: bool,
    ) -> Result<DenseNetPass> {
        let mut layers = dense_stack(params, &self.prefixes())?;
        let output = layers.pop().ok_or_else(|| Error::Internal("network without layers".into()))?;
        let (h, mut caches) = stack_fully_connected(x, &layers, keep_prob, rng, training)?;
        let (logits, cache) = fully_connected_forward(&h, &output, Activation::None)?;
        caches.push(cache);
        layers.push(output);
        Ok(DenseNetPass { logits, caches, layers })
    }

    /// Parameter gradients given the gradient of the loss with respect to the logits.
    pub fn gradients(&self, pass: &DenseNetPass, dlogits: &Tensor) -> Result<NamedTensors> {
        let backward = backward_stack(&pass.caches, &pass.layers, dlogits)?;
        dense_stack_grads(&self.prefixes(), backward)
    }
}
