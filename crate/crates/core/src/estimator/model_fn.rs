use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Targets;
use crate::error::{Error, Result};
use crate::numerics::{argmax_rows, NamedTensors, OptimizerSpec, RngState, Tensor};

pub const CLASS_KEY: &str = "class";
pub const PROB_KEY: &str = "prob";
pub const SCORE_KEY: &str = "score";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Classifier { n_classes: usize },
    Regressor,
}

/// The parameter update a model function asks for: gradients plus the optimizer to apply them with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOp {
    pub gradients: NamedTensors,
    pub optimizer: OptimizerSpec,
}

/// Binds gradients of the loss to an optimizer.
pub fn optimize_loss(gradients: NamedTensors, optimizer: OptimizerSpec) -> TrainOp {
    TrainOp { gradients, optimizer }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFnOutput {
    pub predictions: BTreeMap<String, Tensor>,
    /// Present whenever targets were supplied.
    pub loss: Option<f64>,
    /// Present in [`Mode::Train`].
    pub train_op: Option<TrainOp>,
}

/// What gets recorded about a model in an export manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescription {
    pub model_kind: String,
    pub n_classes: Option<usize>,
    pub hidden_units: Option<Vec<usize>>,
}

/// A model: parameter initialisation plus the mapping
/// `(features, targets, mode, params) → predictions, loss, train op`.
pub trait ModelFn: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn init_params(&self, n_features: usize, rng: &mut RngState) -> Result<NamedTensors>;

    fn call(
        &self,
        features: &Tensor,
        targets: Option<&Targets>,
        mode: Mode,
        params: &NamedTensors,
        rng: &mut RngState,
    ) -> Result<ModelFnOutput>;

    fn description(&self) -> ModelDescription {
        ModelDescription {
            model_kind: "custom".into(),
            n_classes: match self.kind() {
                ModelKind::Classifier { n_classes } => Some(n_classes),
                ModelKind::Regressor => None,
            },
            hidden_units: None,
        }
    }
}

type InitFn = dyn Fn(usize, &mut RngState) -> Result<NamedTensors> + Send + Sync;
type BodyFn =
    dyn Fn(&Tensor, Option<&Targets>, Mode, &NamedTensors, &mut RngState) -> Result<ModelFnOutput> + Send + Sync;

/// A [`ModelFn`] assembled from two closures.
pub struct FnModel {
    kind: ModelKind,
    init: Box<InitFn>,
    body: Box<BodyFn>,
}

impl FnModel {
    pub fn new<I, B>(kind: ModelKind, init: I, body: B) -> Self
    where
        I: Fn(usize, &mut RngState) -> Result<NamedTensors> + Send + Sync + 'static,
        B: Fn(&Tensor, Option<&Targets>, Mode, &NamedTensors, &mut RngState) -> Result<ModelFnOutput>
            + Send
            + Sync
            + 'static,
    {
        FnModel {
            kind,
            init: Box::new(init),
            body: Box::new(body),
        }
    }
}

impl ModelFn for FnModel {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn init_params(&self, n_features: usize, rng: &mut RngState) -> Result<NamedTensors> {
        (self.init)(n_features, rng)
    }

    fn call(
        &self,
        features: &Tensor,
        targets: Option<&Targets>,
        mode: Mode,
        params: &NamedTensors,
        rng: &mut RngState,
    ) -> Result<ModelFnOutput> {
        (self.body)(features, targets, mode, params, rng)
    }
}

/// Checks `prob` rows sum to one and `class == argmax(prob)`.
pub fn check_classifier_predictions(predictions: &BTreeMap<String, Tensor>) -> Result<()> {
    let (Some(class), Some(prob)) = (predictions.get(CLASS_KEY), predictions.get(PROB_KEY)) else {
        return Err(Error::Internal("classifier predictions need \"class\" and \"prob\"".into()));
    };
    if class.rows() != prob.rows() || class.cols() != 1 {
        return Err(Error::Internal(format!(
            "\"class\" {} does not pair with \"prob\" {}",
            class.shape(),
            prob.shape()
        )));
    }
    for (i, (row, c)) in prob.row_iter().zip(argmax_rows(prob)).enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Internal(format!("\"prob\" row {i} sums to {s}")));
        }
        if class.get(i, 0) != c as f64 {
            return Err(Error::Internal(format!("\"class\" row {i} is not argmax of \"prob\"")));
        }
    }
    Ok(())
}

/// `class` column tensor from class indices.
pub fn class_tensor(classes: &[usize]) -> Result<Tensor> {
    Tensor::column_vector(classes.iter().map(|&c| c as f64).collect())
}
