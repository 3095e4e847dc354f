//! Pre-built model functions and the estimators that wrap them.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::data::{schema_width, FeatureColumn, Targets};
use crate::error::{Error, Result};
use crate::estimator::dense::DenseNet;
use crate::estimator::model_fn::{
    class_tensor, optimize_loss, Mode, ModelDescription, ModelFn, ModelFnOutput, ModelKind, CLASS_KEY, PROB_KEY,
    SCORE_KEY,
};
use crate::estimator::Estimator;
use crate::numerics::{
    argmax_rows, mean_squared_error, one_hot, sigmoid, sigmoid_cross_entropy, softmax_cross_entropy, softmax_rows,
    NamedTensors, OptimizerSpec, RngState, Tensor,
};
use crate::run_config::RunConfig;

pub const CANNED_LEARNING_RATE: f64 = 0.1;

/// How the output layer is turned into predictions and a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// `n_classes` logits, softmax cross-entropy.
    Softmax { n_classes: usize },
    /// One logit, sigmoid cross-entropy, two classes.
    Sigmoid,
    /// One output, mean squared error.
    Regression,
}

impl Head {
    fn n_outputs(self) -> usize {
        match self {
            Head::Softmax { n_classes } => n_classes,
            Head::Sigmoid | Head::Regression => 1,
        }
    }

    fn kind(self) -> ModelKind {
        match self {
            Head::Softmax { n_classes } => ModelKind::Classifier { n_classes },
            Head::Sigmoid => ModelKind::Classifier { n_classes: 2 },
            Head::Regression => ModelKind::Regressor,
        }
    }

    /// Predictions, plus loss and its gradient with respect to the outputs when targets are given.
    pub fn apply(
        self,
        outputs: &Tensor,
        targets: Option<&Targets>,
    ) -> Result<(BTreeMap<String, Tensor>, Option<(f64, Tensor)>)> {
        let mut predictions = BTreeMap::new();
        let loss = match self {
            Head::Softmax { n_classes } => {
                let prob = softmax_rows(outputs);
                predictions.insert(CLASS_KEY.to_string(), class_tensor(&argmax_rows(&prob))?);
                predictions.insert(PROB_KEY.to_string(), prob);
                targets
                    .map(|t| softmax_cross_entropy(outputs, &one_hot(t.classes()?, n_classes, 1.0, 0.0)?))
                    .transpose()?
            }
            Head::Sigmoid => {
                let p1 = sigmoid(outputs);
                let mut prob = Tensor::zeros(outputs.rows(), 2);
                for i in 0..outputs.rows() {
                    let p = p1.get(i, 0);
                    prob.set(i, 0, 1.0 - p);
                    prob.set(i, 1, p);
                }
                predictions.insert(CLASS_KEY.to_string(), class_tensor(&argmax_rows(&prob))?);
                predictions.insert(PROB_KEY.to_string(), prob);
                match targets {
                    Some(t) => {
                        let labels = t.classes()?;
                        if let Some(i) = labels.iter().position(|&c| c > 1) {
                            return Err(Error::validation(format!(
                                "label {} at row {i} is not a binary class",
                                labels[i]
                            )));
                        }
                        Some(sigmoid_cross_entropy(outputs, &t.to_column()?)?)
                    }
                    None => None,
                }
            }
            Head::Regression => {
                predictions.insert(SCORE_KEY.to_string(), outputs.clone());
                targets
                    .map(|t| mean_squared_error(outputs, &t.to_column()?))
                    .transpose()?
            }
        };
        Ok((predictions, loss))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Glorot,
    Zeros,
}

/// A dense network with a [`Head`], as used by every canned estimator.
#[derive(Debug, Clone)]
pub struct CannedModel {
    name: &'static str,
    net: DenseNet,
    head: Head,
    init: Init,
    optimizer: OptimizerSpec,
}

impl CannedModel {
    pub fn dnn_classifier(hidden_units: &[usize], n_classes: usize) -> Result<Self> {
        check_n_classes(n_classes)?;
        if hidden_units.is_empty() {
            return Err(Error::validation("hidden_units must not be empty"));
        }
        Ok(CannedModel {
            name: "dnn_classifier",
            net: DenseNet::new("dnn", hidden_units, n_classes)?,
            head: Head::Softmax { n_classes },
            init: Init::Glorot,
            optimizer: OptimizerSpec::adagrad(CANNED_LEARNING_RATE),
        })
    }

    pub fn linear_regressor() -> Result<Self> {
        Self::linear("linear_regressor", "linear", Head::Regression)
    }

    pub fn linear_classifier(n_classes: usize) -> Result<Self> {
        check_n_classes(n_classes)?;
        Self::linear("linear_classifier", "linear", Head::Softmax { n_classes })
    }

    pub fn logistic_regressor() -> Result<Self> {
        Self::linear("logistic_regressor", "logistic", Head::Sigmoid)
    }

    fn linear(name: &'static str, scope: &str, head: Head) -> Result<Self> {
        Ok(CannedModel {
            name,
            net: DenseNet::new(scope, &[], head.n_outputs())?,
            head,
            init: Init::Zeros,
            optimizer: OptimizerSpec::sgd(CANNED_LEARNING_RATE),
        })
    }

    /// Rebuilds a canned model from an export description.
    pub fn from_description(desc: &ModelDescription) -> Result<Self> {
        let n_classes = || {
            desc.n_classes
                .ok_or_else(|| Error::validation(format!("{} needs n_classes", desc.model_kind)))
        };
        match desc.model_kind.as_str() {
            "dnn_classifier" => Self::dnn_classifier(desc.hidden_units.as_deref().unwrap_or_default(), n_classes()?),
            "linear_regressor" => Self::linear_regressor(),
            "linear_classifier" => Self::linear_classifier(n_classes()?),
            "logistic_regressor" => Self::logistic_regressor(),
            other => Err(Error::validation(format!("unknown canned model kind {other:?}"))),
        }
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn head(&self) -> Head {
        self.head
    }
}

fn check_n_classes(n_classes: usize) -> Result<()> {
    if n_classes < 2 {
        return Err(Error::validation(format!("n_classes must be at least 2, got {n_classes}")));
    }
    Ok(())
}

impl ModelFn for CannedModel {
    fn kind(&self) -> ModelKind {
        self.head.kind()
    }

    fn init_params(&self, n_features: usize, rng: &mut RngState) -> Result<NamedTensors> {
        match self.init {
            Init::Glorot => self.net.init_glorot(n_features, rng),
            Init::Zeros => self.net.init_zeros(n_features),
        }
    }

    fn call(
        &self,
        features: &Tensor,
        targets: Option<&Targets>,
        mode: Mode,
        params: &NamedTensors,
        rng: &mut RngState,
    ) -> Result<ModelFnOutput> {
        let pass = self.net.forward(params, features, 1.0, rng, mode == Mode::Train)?;
        let (predictions, loss) = self.head.apply(&pass.logits, targets)?;
        let train_op = match (mode, &loss) {
            (Mode::Train, Some((_, dlogits))) => Some(optimize_loss(self.net.gradients(&pass, dlogits)?, self.optimizer)),
            (Mode::Train, None) => return Err(Error::validation("training needs targets")),
            _ => None,
        };
        Ok(ModelFnOutput {
            predictions,
            loss: loss.map(|(l, _)| l),
            train_op,
        })
    }

    fn description(&self) -> ModelDescription {
        ModelDescription {
            model_kind: self.name.to_string(),
            n_classes: match self.head.kind() {
                ModelKind::Classifier { n_classes } => Some(n_classes),
                ModelKind::Regressor => None,
            },
            hidden_units: (!self.net.hidden_units().is_empty()).then(|| self.net.hidden_units().to_vec()),
        }
    }
}

fn canned(model: CannedModel, columns: &[FeatureColumn], config: RunConfig) -> Result<Estimator> {
    let n_features = schema_width(columns)?;
    Estimator::initialized(Arc::new(model), n_features, config)
}

/// Relu DNN classifier trained with Adagrad (lr 0.1).
pub fn dnn_classifier(
    feature_columns: &[FeatureColumn],
    hidden_units: &[usize],
    n_classes: usize,
    config: RunConfig,
) -> Result<Estimator> {
    canned(CannedModel::dnn_classifier(hidden_units, n_classes)?, feature_columns, config)
}

/// Least-squares linear model trained with SGD (lr 0.1).
pub fn linear_regressor(feature_columns: &[FeatureColumn], config: RunConfig) -> Result<Estimator> {
    canned(CannedModel::linear_regressor()?, feature_columns, config)
}

/// Softmax linear classifier trained with SGD (lr 0.1).
pub fn linear_classifier(feature_columns: &[FeatureColumn], n_classes: usize, config: RunConfig) -> Result<Estimator> {
    canned(CannedModel::linear_classifier(n_classes)?, feature_columns, config)
}

/// Binary sigmoid classifier trained with SGD (lr 0.1).
pub fn logistic_regressor(feature_columns: &[FeatureColumn], config: RunConfig) -> Result<Estimator> {
    canned(CannedModel::logistic_regressor()?, feature_columns, config)
}
