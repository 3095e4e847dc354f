use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Parameters, gradients or optimizer slots keyed by name.
pub type NamedTensors = BTreeMap<String, Tensor>;

pub const DEFAULT_ADAGRAD_INITIAL_ACCUMULATOR: f64 = 0.1;
pub const DEFAULT_ADAGRAD_EPSILON: f64 = 1e-8;

/// Suffix appended to a parameter name for its Adagrad accumulator slot.
pub const ADAGRAD_SLOT_SUFFIX: &str = "/Adagrad";

/// Per-parameter squared-gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub accumulators: NamedTensors,
    pub initial_accumulator: f64,
    pub epsilon: f64,
}

impl Default for AdagradState {
    fn default() -> Self {
        AdagradState {
            accumulators: NamedTensors::new(),
            initial_accumulator: DEFAULT_ADAGRAD_INITIAL_ACCUMULATOR,
            epsilon: DEFAULT_ADAGRAD_EPSILON,
        }
    }
}

fn check_lr(learning_rate: f64) -> Result<()> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::validation(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    Ok(())
}

fn param_for<'a>(params: &'a mut NamedTensors, name: &str, grad: &Tensor) -> Result<&'a mut Tensor> {
    let p = params
        .get_mut(name)
        .ok_or_else(|| Error::shape("optimizer", format!("gradient for unknown parameter {name:?}")))?;
    if p.shape() != grad.shape() {
        return Err(Error::shape(
            "optimizer",
            format!(
                "gradient {} does not match parameter {name:?} {}",
                grad.shape(),
                p.shape()
            ),
        ));
    }
    Ok(p)
}

/// `acc += g²; p -= lr·g/(√acc + ε)`, element-wise.
///
/// Shapes are checked for every gradient before anything is modified.
pub fn adagrad_update(
    params: &mut NamedTensors,
    grads: &NamedTensors,
    state: &mut AdagradState,
    learning_rate: f64,
) -> Result<()> {
    check_lr(learning_rate)?;
    for (name, g) in grads {
        param_for(params, name, g)?;
        if let Some(acc) = state.accumulators.get(name) {
            acc.expect_same_shape(g, "adagrad_update")?;
        }
    }
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let acc = state
            .accumulators
            .entry(name.clone())
            .or_insert_with(|| Tensor::filled(g.rows(), g.cols(), state.initial_accumulator));
        for ((w, a), &gv) in p.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
            *a += gv * gv;
            *w -= learning_rate * gv / (a.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// `p -= lr·g`, element-wise.
pub fn sgd_update(params: &mut NamedTensors, grads: &NamedTensors, learning_rate: f64) -> Result<()> {
    check_lr(learning_rate)?;
    for (name, g) in grads {
        param_for(params, name, g)?;
    }
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        for (w, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= learning_rate * gv;
        }
    }
    Ok(())
}

/// Which optimizer a train step should use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerSpec {
    Sgd { learning_rate: f64 },
    Adagrad {
        learning_rate: f64,
        initial_accumulator: f64,
        epsilon: f64,
    },
}

impl OptimizerSpec {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerSpec::Sgd { learning_rate }
    }

    pub fn adagrad(learning_rate: f64) -> Self {
        OptimizerSpec::Adagrad {
            learning_rate,
            initial_accumulator: DEFAULT_ADAGRAD_INITIAL_ACCUMULATOR,
            epsilon: DEFAULT_ADAGRAD_EPSILON,
        }
    }

    pub fn build(&self) -> Optimizer {
        let state = match *self {
            OptimizerSpec::Sgd { .. } => None,
            OptimizerSpec::Adagrad {
                initial_accumulator,
                epsilon,
                ..
            } => Some(AdagradState {
                accumulators: NamedTensors::new(),
                initial_accumulator,
                epsilon,
            }),
        };
        Optimizer { spec: *self, adagrad: state }
    }
}

/// An optimizer together with its slot state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    spec: OptimizerSpec,
    adagrad: Option<AdagradState>,
}

impl Optimizer {
    pub fn spec(&self) -> OptimizerSpec {
        self.spec
    }

    pub fn apply(&mut self, params: &mut NamedTensors, grads: &NamedTensors) -> Result<()> {
        match (self.spec, self.adagrad.as_mut()) {
            (OptimizerSpec::Sgd { learning_rate }, _) => sgd_update(params, grads, learning_rate),
            (OptimizerSpec::Adagrad { learning_rate, .. }, Some(state)) => {
                adagrad_update(params, grads, state, learning_rate)
            }
            (OptimizerSpec::Adagrad { .. }, None) => {
                Err(Error::Internal("adagrad optimizer without state".into()))
            }
        }
    }

    /// Slot tensors for checkpointing, named `<param>/Adagrad`.
    pub fn slots(&self) -> NamedTensors {
        match &self.adagrad {
            Some(state) => state
                .accumulators
                .iter()
                .map(|(k, v)| (format!("{k}{ADAGRAD_SLOT_SUFFIX}"), v.clone()))
                .collect(),
            None => NamedTensors::new(),
        }
    }

    /// Restores slot tensors previously produced by [`Optimizer::slots`].
    pub fn restore_slots(&mut self, slots: &NamedTensors) {
        if let Some(state) = self.adagrad.as_mut() {
            state.accumulators = slots
                .iter()
                .filter_map(|(k, v)| {
                    k.strip_suffix(ADAGRAD_SLOT_SUFFIX)
                        .map(|p| (p.to_string(), v.clone()))
                })
                .collect();
        }
    }

    pub fn adagrad_state(&self) -> Option<&AdagradState> {
        self.adagrad.as_ref()
    }
}
