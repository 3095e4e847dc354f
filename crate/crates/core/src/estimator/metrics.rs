use std::fmt;
use std::str::FromStr;

use crate::data::Targets;
use crate::error::{Error, Result};
use crate::estimator::model_fn::ModelKind;
use crate::numerics::Tensor;

/// Probabilities are clamped to this floor before taking logs.
pub const LOG_LOSS_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Accuracy,
    Mse,
    LogLoss,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Mse => "mse",
            Metric::LogLoss => "log_loss",
        }
    }

    pub fn applies_to(self, kind: ModelKind) -> bool {
        matches!(
            (self, kind),
            (Metric::Accuracy | Metric::LogLoss, ModelKind::Classifier { .. }) | (Metric::Mse, ModelKind::Regressor)
        )
    }

    pub fn defaults_for(kind: ModelKind) -> Vec<Metric> {
        match kind {
            ModelKind::Classifier { .. } => vec![Metric::Accuracy, Metric::LogLoss],
            ModelKind::Regressor => vec![Metric::Mse],
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "mse" => Ok(Metric::Mse),
            "log_loss" => Ok(Metric::LogLoss),
            other => Err(Error::validation(format!("unknown metric {other:?}"))),
        }
    }
}

fn check_len(n: usize, targets: &Targets) -> Result<()> {
    if n != targets.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{n} predictions but {} targets", targets.len()),
        ));
    }
    Ok(())
}

/// Fraction of rows whose predicted class equals the label.
pub fn accuracy(classes: &[usize], targets: &Targets) -> Result<f64> {
    check_len(classes.len(), targets)?;
    let labels = targets.classes()?;
    let hits = classes.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean squared error between `n×1` scores and targets.
pub fn mse(scores: &Tensor, targets: &Targets) -> Result<f64> {
    check_len(scores.rows(), targets)?;
    let t = targets.to_column()?;
    let d = scores.sub(&t)?;
    Ok(d.data().iter().map(|v| v * v).sum::<f64>() / d.len() as f64)
}

/// Mean negative log probability of the true class.
pub fn log_loss(prob: &Tensor, targets: &Targets) -> Result<f64> {
    check_len(prob.rows(), targets)?;
    let labels = targets.classes()?;
    let mut total = 0.0;
    for (i, &c) in labels.iter().enumerate() {
        if c >= prob.cols() {
            return Err(Error::validation(format!(
                "label {c} at row {i} is outside {} classes",
                prob.cols()
            )));
        }
        total -= prob.get(i, c).max(LOG_LOSS_EPS).ln();
    }
    Ok(total / labels.len() as f64)
}
