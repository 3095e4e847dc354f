//! Dense layers, dropout and reverse-mode gradients for stacked networks.
//!
//! A layer computes `y = activation(x·W + b)`, optionally followed by inverted
//! dropout. Forward passes return a [`LayerCache`] per layer; feeding those caches
//! back into [`backward_stack`] yields exact gradients, reusing the dropout masks
//! that were sampled on the way forward.

use crate::error::{Error, Result};
use crate::numerics::{matmul, RngState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => crate::numerics::relu(x),
            Activation::None => x.clone(),
        }
    }
}

/// Weights (`in_dim × out_dim`) and bias (`1 × out_dim`) of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayerParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if bias.rows() != 1 || weights.cols() != bias.cols() {
            return Err(Error::shape(
                "dense_layer",
                format!("bias {} does not fit weights {}", bias.shape(), weights.shape()),
            ));
        }
        Ok(DenseLayerParams { weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// What the backward pass needs from one forward layer.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Tensor,
    pub pre_activation: Tensor,
    pub activation: Activation,
    /// Multiplier applied after activation: `0` or `1/keep_prob` per element.
    pub dropout_mask: Option<Tensor>,
}

/// Gradients for one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct BackwardOutput {
    /// One entry per layer, in forward order.
    pub layers: Vec<DenseGrads>,
    pub dinput: Tensor,
}

pub fn fully_connected_forward(
    x: &Tensor,
    params: &DenseLayerParams,
    activation: Activation,
) -> Result<(Tensor, LayerCache)> {
    if x.cols() != params.in_dim() {
        return Err(Error::shape(
            "fully_connected",
            format!(
                "input {} does not match weights {}",
                x.shape(),
                params.weights.shape()
            ),
        ));
    }
    let pre = matmul(x, &params.weights)?.add_row_broadcast(&params.bias)?;
    let y = activation.apply(&pre);
    Ok((
        y,
        LayerCache {
            input: x.clone(),
            pre_activation: pre,
            activation,
            dropout_mask: None,
        },
    ))
}

fn check_keep_prob(keep_prob: f64) -> Result<()> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::validation(format!(
            "keep_prob must lie in (0, 1], got {keep_prob}"
        )));
    }
    Ok(())
}

/// Inverted dropout. Returns the output and the multiplier mask that produced it.
pub fn dropout(
    x: &Tensor,
    keep_prob: f64,
    rng: &mut RngState,
    training: bool,
) -> Result<(Tensor, Tensor)> {
    check_keep_prob(keep_prob)?;
    if !training || keep_prob == 1.0 {
        return Ok((x.clone(), Tensor::ones(x.rows(), x.cols())));
    }
    let scale = 1.0 / keep_prob;
    let mut mask = Tensor::zeros(x.rows(), x.cols());
    for m in mask.data_mut() {
        if rng.next_f64() < keep_prob {
            *m = scale;
        }
    }
    let out = x.mul(&mask)?;
    Ok((out, mask))
}

/// Relu dense layers, each followed by dropout, applied in order.
pub fn stack_fully_connected(
    x: &Tensor,
    layers: &[DenseLayerParams],
    keep_prob: f64,
    rng: &mut RngState,
    training: bool,
) -> Result<(Tensor, Vec<LayerCache>)> {
    check_keep_prob(keep_prob)?;
    let mut width = x.cols();
    for (i, layer) in layers.iter().enumerate() {
        if layer.in_dim() != width {
            return Err(Error::shape(
                "stack_fully_connected",
                format!(
                    "layer {i} expects {} inputs but receives {width}",
                    layer.in_dim()
                ),
            ));
        }
        width = layer.out_dim();
    }

    let mut h = x.clone();
    let mut caches = Vec::with_capacity(layers.len());
    for layer in layers {
        let (y, mut cache) = fully_connected_forward(&h, layer, Activation::Relu)?;
        h = if training && keep_prob < 1.0 {
            let (dropped, mask) = dropout(&y, keep_prob, rng, training)?;
            cache.dropout_mask = Some(mask);
            dropped
        } else {
            y
        };
        caches.push(cache);
    }
    Ok((h, caches))
}

/// Reverse-mode gradients through the layers recorded in `caches`.
///
/// `params[i]` must be the parameters that produced `caches[i]`, and `dout` is
/// the gradient of the loss with respect to the final layer's output.
pub fn backward_stack(
    caches: &[LayerCache],
    params: &[DenseLayerParams],
    dout: &Tensor,
) -> Result<BackwardOutput> {
    if caches.len() != params.len() {
        return Err(Error::Internal(format!(
            "{} layer caches for {} parameter sets",
            caches.len(),
            params.len()
        )));
    }
    let mut grads = Vec::with_capacity(params.len());
    let mut upstream = dout.clone();
    for (cache, p) in caches.iter().zip(params).rev() {
        if upstream.shape() != cache.pre_activation.shape() {
            return Err(Error::Internal(format!(
                "upstream gradient {} does not match layer output {}",
                upstream.shape(),
                cache.pre_activation.shape()
            )));
        }
        if let Some(mask) = &cache.dropout_mask {
            upstream = upstream.mul(mask)?;
        }
        let dpre = match cache.activation {
            Activation::Relu => {
                upstream.zip_map(&cache.pre_activation, "relu_grad", |g, z| {
                    if z > 0.0 {
                        g
                    } else {
                        0.0
                    }
                })?
            }
            Activation::None => upstream,
        };
        let dw = matmul(&cache.input.transpose(), &dpre)?;
        let db = dpre.sum_rows();
        upstream = matmul(&dpre, &p.weights.transpose())?;
        grads.push(DenseGrads {
            weights: dw,
            bias: db,
        });
    }
    grads.reverse();
    Ok(BackwardOutput {
        layers: grads,
        dinput: upstream,
    })
}

/// Glorot-uniform weights in `±√(6/(in+out))`, zero bias.
///
/// # Panics
/// If either dimension is zero.
pub fn glorot_init(in_dim: usize, out_dim: usize, rng: &mut RngState) -> DenseLayerParams {
    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let mut weights = Tensor::zeros(in_dim, out_dim);
    for w in weights.data_mut() {
        *w = rng.uniform(-limit, limit);
    }
    DenseLayerParams {
        weights,
        bias: Tensor::zeros(1, out_dim),
    }
}
