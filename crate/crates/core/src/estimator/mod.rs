//! Estimators: a model function plus parameters, trained with `fit` and
//! queried with `predict` and `evaluate`.

mod canned;
mod checkpoint;
mod dense;
mod metrics;
mod model_fn;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

pub use canned::{
    dnn_classifier, linear_classifier, linear_regressor, logistic_regressor, CannedModel, Head, CANNED_LEARNING_RATE,
};
pub use checkpoint::{
    checkpoint_file_name, latest_checkpoint, list_checkpoints, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_PREFIX,
    CHECKPOINT_VERSION,
};
pub use dense::{
    biases_name, dense_layer, dense_stack, dense_stack_grads, init_dense_stack, init_zero_layer, weights_name, DenseNet,
    DenseNetPass,
};
pub use metrics::{accuracy, log_loss, mse, Metric, LOG_LOSS_EPS};
pub use model_fn::{
    check_classifier_predictions, class_tensor, optimize_loss, FnModel, Mode, ModelDescription, ModelFn,
    ModelFnOutput, ModelKind, TrainOp, CLASS_KEY, PROB_KEY, SCORE_KEY,
};

use crate::data::{Batch, BatchIterator, Dataset, DequeueError, FeedingQueue, Targets};
use crate::error::{Error, Result};
use crate::hooks::{HookDispatcher, HookEvent, RunContext, SessionRunHook, SessionState};
use crate::numerics::{NamedTensors, Optimizer, RngState, Tensor, ADAGRAD_SLOT_SUFFIX};
use crate::run_config::RunConfig;

const DROPOUT_SALT: u64 = 0x5eed_d80f;

/// Random stream for the train step that starts at `global_step`.
pub fn step_rng(seed: u64, global_step: u64) -> RngState {
    RngState::with_stream(seed ^ DROPOUT_SALT, global_step)
}

/// Runs the model function in training mode and checks the result is usable.
///
/// `global_step` is the step the parameters belong to; errors name step `global_step + 1`.
pub fn train_step_output(
    model_fn: &dyn ModelFn,
    batch: &Batch,
    params: &NamedTensors,
    seed: u64,
    global_step: u64,
) -> Result<(f64, TrainOp)> {
    let step = global_step + 1;
    let mut rng = step_rng(seed, global_step);
    let out = model_fn.call(&batch.features, Some(&batch.targets), Mode::Train, params, &mut rng)?;
    let loss = out
        .loss
        .ok_or_else(|| Error::Internal("model function returned no loss in train mode".into()))?;
    if !loss.is_finite() {
        return Err(Error::Training {
            step,
            message: format!("loss is {loss}"),
        });
    }
    let op = out
        .train_op
        .ok_or_else(|| Error::Internal("model function returned no train op in train mode".into()))?;
    if let Some((name, _)) = op.gradients.iter().find(|(_, g)| !g.all_finite()) {
        return Err(Error::Training {
            step,
            message: format!("gradient of {name:?} is not finite"),
        });
    }
    Ok((loss, op))
}

/// Where `fit` takes its batches from.
pub enum TrainInput<'a> {
    /// Cycles through the dataset. `batch_size: None` means full batch.
    Dataset {
        data: &'a Dataset,
        batch_size: Option<usize>,
        shuffle: bool,
    },
    /// Dequeues batches; a closed, drained queue ends training early.
    Queue {
        queue: &'a FeedingQueue<Batch>,
        timeout: Duration,
    },
}

impl<'a> TrainInput<'a> {
    pub fn batched(data: &'a Dataset, batch_size: usize, shuffle: bool) -> Self {
        TrainInput::Dataset {
            data,
            batch_size: Some(batch_size),
            shuffle,
        }
    }

    pub fn queue(queue: &'a FeedingQueue<Batch>, timeout: Duration) -> Self {
        TrainInput::Queue { queue, timeout }
    }
}

impl<'a> From<&'a Dataset> for TrainInput<'a> {
    fn from(data: &'a Dataset) -> Self {
        TrainInput::Dataset {
            data,
            batch_size: None,
            shuffle: false,
        }
    }
}

enum BatchSource<'a> {
    Iter(BatchIterator),
    Queue(&'a FeedingQueue<Batch>, Duration),
}

impl BatchSource<'_> {
    fn next(&mut self, global_step: u64) -> Result<Option<Batch>> {
        match self {
            BatchSource::Iter(it) => Ok(Some(it.batch_at(global_step))),
            BatchSource::Queue(q, timeout) => match q.dequeue(*timeout) {
                Ok(b) => Ok(Some(b)),
                Err(DequeueError::Closed) => Ok(None),
                Err(DequeueError::Timeout) => Err(Error::Training {
                    step: global_step + 1,
                    message: format!("no batch arrived within {timeout:?}"),
                }),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Loss of every executed step, in order.
    pub losses: Vec<f64>,
    pub steps_run: u64,
    pub global_step: u64,
    /// A hook requested a stop or the input ran dry before `steps` were run.
    pub stopped_early: bool,
}

impl FitReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// One row of a prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionRecord {
    Class { class: usize, prob: Vec<f64> },
    Score(f64),
}

/// Whole-batch predictions keyed by output name.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    kind: ModelKind,
    values: BTreeMap<String, Tensor>,
}

impl Predictions {
    fn new(kind: ModelKind, values: BTreeMap<String, Tensor>, rows: usize) -> Result<Self> {
        match kind {
            ModelKind::Classifier { n_classes } => {
                check_classifier_predictions(&values)?;
                let prob = &values[PROB_KEY];
                if prob.cols() != n_classes {
                    return Err(Error::Internal(format!(
                        "\"prob\" has {} columns for {n_classes} classes",
                        prob.cols()
                    )));
                }
            }
            ModelKind::Regressor => match values.get(SCORE_KEY) {
                Some(s) if s.cols() == 1 => {}
                Some(s) => return Err(Error::Internal(format!("\"score\" has shape {}", s.shape()))),
                None => return Err(Error::Internal("regressor predictions need \"score\"".into())),
            },
        }
        let key = match kind {
            ModelKind::Classifier { .. } => CLASS_KEY,
            ModelKind::Regressor => SCORE_KEY,
        };
        if values[key].rows() != rows {
            return Err(Error::Internal(format!(
                "{} prediction rows for {rows} input rows",
                values[key].rows()
            )));
        }
        Ok(Predictions { kind, values })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name)
    }

    pub fn values(&self) -> &BTreeMap<String, Tensor> {
        &self.values
    }

    pub fn len(&self) -> usize {
        match self.kind {
            ModelKind::Classifier { .. } => self.values[CLASS_KEY].rows(),
            ModelKind::Regressor => self.values[SCORE_KEY].rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<Vec<usize>> {
        self.values
            .get(CLASS_KEY)
            .map(|t| t.data().iter().map(|&c| c as usize).collect())
    }

    pub fn probabilities(&self) -> Option<&Tensor> {
        self.values.get(PROB_KEY)
    }

    pub fn scores(&self) -> Option<&Tensor> {
        self.values.get(SCORE_KEY)
    }

    pub fn record(&self, row: usize) -> PredictionRecord {
        match self.kind {
            ModelKind::Classifier { .. } => PredictionRecord::Class {
                class: self.values[CLASS_KEY].get(row, 0) as usize,
                prob: self.values[PROB_KEY].row(row).to_vec(),
            },
            ModelKind::Regressor => PredictionRecord::Score(self.values[SCORE_KEY].get(row, 0)),
        }
    }

    pub fn records(&self) -> Vec<PredictionRecord> {
        (0..self.len()).map(|i| self.record(i)).collect()
    }

    /// Same keys and bitwise-identical tensors.
    pub fn bit_eq(&self, other: &Predictions) -> bool {
        self.kind == other.kind
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|((ka, a), (kb, b))| ka == kb && a.bit_eq(b))
    }
}

/// Lazy per-row predictions; see [`Estimator::predict_iter`].
pub struct PredictionIter<'a> {
    estimator: &'a Estimator,
    features: &'a Tensor,
    next_row: usize,
}

impl Iterator for PredictionIter<'_> {
    type Item = Result<PredictionRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_row >= self.features.rows() {
            return None;
        }
        let i = self.next_row;
        self.next_row += 1;
        let row = match Tensor::row_vector(self.features.row(i).to_vec()) {
            Ok(r) => r,
            Err(e) => return Some(Err(e)),
        };
        Some(self.estimator.predict(&row).map(|p| p.record(0)))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.features.rows() - self.next_row;
        (n, Some(n))
    }
}

/// A model function with its parameters, optimizer state and global step.
pub struct Estimator {
    model_fn: Arc<dyn ModelFn>,
    params: Option<NamedTensors>,
    optimizer: Option<Optimizer>,
    pending_slots: NamedTensors,
    global_step: u64,
    config: RunConfig,
    n_features: Option<usize>,
}

impl std::fmt::Debug for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Estimator")
            .field("model", &self.model_fn.description())
            .field("global_step", &self.global_step)
            .field("n_features", &self.n_features)
            .field("initialized", &self.params.is_some())
            .finish()
    }
}

impl Estimator {
    /// Generic estimator; parameters are created on the first `fit`.
    pub fn new(model_fn: impl ModelFn + 'static, config: RunConfig) -> Self {
        Self::from_arc(Arc::new(model_fn), config)
    }

    pub fn from_arc(model_fn: Arc<dyn ModelFn>, config: RunConfig) -> Self {
        Estimator {
            model_fn,
            params: None,
            optimizer: None,
            pending_slots: NamedTensors::new(),
            global_step: 0,
            config,
            n_features: None,
        }
    }

    /// Estimator whose parameters are initialised now for `n_features` inputs.
    pub fn initialized(model_fn: Arc<dyn ModelFn>, n_features: usize, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut e = Self::from_arc(model_fn, config);
        e.ensure_params(n_features)?;
        Ok(e)
    }

    pub fn model_fn(&self) -> Arc<dyn ModelFn> {
        Arc::clone(&self.model_fn)
    }

    pub fn kind(&self) -> ModelKind {
        self.model_fn.kind()
    }

    pub fn description(&self) -> ModelDescription {
        self.model_fn.description()
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn n_features(&self) -> Option<usize> {
        self.n_features
    }

    pub fn params(&self) -> Option<&NamedTensors> {
        self.params.as_ref()
    }

    pub fn is_fitted(&self) -> bool {
        self.params.is_some()
    }

    /// Optimizer slot tensors, named `<param>/<slot>`.
    pub fn optimizer_slots(&self) -> NamedTensors {
        match &self.optimizer {
            Some(o) => o.slots(),
            None => self.pending_slots.clone(),
        }
    }

    fn ensure_params(&mut self, n_features: usize) -> Result<()> {
        if let Some(expected) = self.n_features {
            if expected != n_features {
                return Err(Error::validation(format!(
                    "model expects {expected} feature columns, input has {n_features}"
                )));
            }
        }
        if self.params.is_none() {
            let mut rng = RngState::new(self.config.random_seed);
            self.params = Some(self.model_fn.init_params(n_features, &mut rng)?);
            self.n_features = Some(n_features);
        }
        Ok(())
    }

    /// Validates `data` against the model and creates parameters if needed.
    pub(crate) fn prepare_for(&mut self, data: &Dataset) -> Result<()> {
        self.check_width(data.n_features())?;
        self.check_targets(data.targets())?;
        self.ensure_params(data.n_features())
    }

    fn check_width(&self, cols: usize) -> Result<()> {
        match self.n_features {
            Some(n) if n != cols => Err(Error::validation(format!(
                "model expects {n} feature columns, input has {cols}"
            ))),
            _ => Ok(()),
        }
    }

    fn check_targets(&self, targets: &Targets) -> Result<()> {
        if let ModelKind::Classifier { n_classes } = self.kind() {
            let labels = targets.classes()?;
            if let Some(i) = labels.iter().position(|&c| c >= n_classes) {
                return Err(Error::validation(format!(
                    "label {} at row {i} is outside {n_classes} classes",
                    labels[i]
                )));
            }
        }
        Ok(())
    }

    fn require_params(&self) -> Result<&NamedTensors> {
        self.params
            .as_ref()
            .ok_or_else(|| Error::State("estimator has no parameters; fit or restore it first".into()))
    }

    /// Trains for `steps` steps or until a hook requests a stop.
    pub fn fit<'a>(
        &mut self,
        input: impl Into<TrainInput<'a>>,
        steps: u64,
        hooks: &mut [Box<dyn SessionRunHook>],
    ) -> Result<FitReport> {
        if steps == 0 {
            return Err(Error::validation("steps must be at least 1"));
        }
        let mut source = match input.into() {
            TrainInput::Dataset {
                data,
                batch_size,
                shuffle,
            } => {
                if data.is_empty() {
                    return Err(Error::validation("training dataset has no rows"));
                }
                self.prepare_for(data)?;
                let bs = batch_size.unwrap_or(data.len());
                BatchSource::Iter(BatchIterator::new(data.clone(), bs, shuffle, self.config.random_seed)?)
            }
            TrainInput::Queue { queue, timeout } => BatchSource::Queue(queue, timeout),
        };

        let mut dispatcher = HookDispatcher::new();
        let mut ctx = RunContext::new(self.global_step);
        dispatcher.dispatch(hooks, &HookEvent::session_start(self.global_step), &mut ctx, &*self)?;
        let mut losses = Vec::new();
        while (losses.len() as u64) < steps && !ctx.stop_requested() {
            let Some(batch) = source.next(self.global_step)? else {
                break;
            };
            self.check_width(batch.features.cols())?;
            self.check_targets(&batch.targets)?;
            self.ensure_params(batch.features.cols())?;
            dispatcher.dispatch(hooks, &HookEvent::before_run(self.global_step), &mut ctx, &*self)?;
            let loss = self.train_step(&batch)?;
            losses.push(loss);
            dispatcher.dispatch(hooks, &HookEvent::after_run(self.global_step, loss), &mut ctx, &*self)?;
        }
        dispatcher.dispatch(hooks, &HookEvent::session_end(self.global_step), &mut ctx, &*self)?;

        if let Some(dir) = self.config.model_dir.clone() {
            self.save_checkpoint_in(dir)?;
        }
        let steps_run = losses.len() as u64;
        Ok(FitReport {
            losses,
            steps_run,
            global_step: self.global_step,
            stopped_early: steps_run < steps,
        })
    }

    fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let params = self.params.as_mut().ok_or_else(|| Error::Internal("train step without parameters".into()))?;
        let (loss, op) = train_step_output(&*self.model_fn, batch, params, self.config.random_seed, self.global_step)?;
        let pending = &self.pending_slots;
        let optimizer = self.optimizer.get_or_insert_with(|| {
            let mut o = op.optimizer.build();
            o.restore_slots(pending);
            o
        });
        if optimizer.spec() != op.optimizer {
            return Err(Error::State(format!(
                "model function switched optimizer from {:?} to {:?}",
                optimizer.spec(),
                op.optimizer
            )));
        }
        optimizer.apply(params, &op.gradients)?;
        self.global_step += 1;
        Ok(loss)
    }

    /// Inference-mode predictions for every row of `features`.
    pub fn predict(&self, features: &Tensor) -> Result<Predictions> {
        let params = self.require_params()?;
        self.check_width(features.cols())?;
        let mut rng = RngState::new(self.config.random_seed);
        let out = self.model_fn.call(features, None, Mode::Infer, params, &mut rng)?;
        Predictions::new(self.kind(), out.predictions, features.rows())
    }

    /// One prediction per row, computed lazily as the iterator advances.
    pub fn predict_iter<'a>(&'a self, features: &'a Tensor) -> Result<PredictionIter<'a>> {
        self.require_params()?;
        self.check_width(features.cols())?;
        Ok(PredictionIter {
            estimator: self,
            features,
            next_row: 0,
        })
    }

    /// Metrics computed from inference-mode predictions.
    pub fn evaluate(&self, features: &Tensor, targets: &Targets, metrics: &[Metric]) -> Result<BTreeMap<String, f64>> {
        let kind = self.kind();
        if let Some(m) = metrics.iter().find(|m| !m.applies_to(kind)) {
            return Err(Error::validation(format!("metric {m} does not apply to a {kind:?} model")));
        }
        if features.rows() != targets.len() {
            return Err(Error::shape(
                "evaluate",
                format!("{} feature rows but {} targets", features.rows(), targets.len()),
            ));
        }
        self.check_targets(targets)?;
        let p = self.predict(features)?;
        let mut out = BTreeMap::new();
        for &m in metrics {
            let v = match m {
                Metric::Accuracy => accuracy(&p.classes().unwrap_or_default(), targets)?,
                Metric::LogLoss => log_loss(&p.values[PROB_KEY], targets)?,
                Metric::Mse => mse(&p.values[SCORE_KEY], targets)?,
            };
            out.insert(m.name().to_string(), v);
        }
        Ok(out)
    }

    pub fn evaluate_dataset(&self, data: &Dataset, metrics: &[Metric]) -> Result<BTreeMap<String, f64>> {
        if data.is_empty() {
            return Err(Error::validation("evaluation dataset has no rows"));
        }
        self.evaluate(&data.features()?, data.targets(), metrics)
    }

    /// Parameters, optimizer slots and global step.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = self.params.clone().unwrap_or_default();
        tensors.extend(self.optimizer_slots());
        Checkpoint {
            global_step: self.global_step,
            tensors,
        }
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.require_params()?;
        self.checkpoint().save(path)
    }

    /// Writes `ckpt-<global_step>` into `dir` and returns its path.
    pub fn save_checkpoint_in(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(checkpoint_file_name(self.global_step));
        self.save_checkpoint(&path)?;
        Ok(path)
    }

    pub fn restore_checkpoint(&mut self, path: impl AsRef<Path>) -> Result<u64> {
        let ckpt = Checkpoint::load(path)?;
        let step = ckpt.global_step;
        self.restore(ckpt)?;
        Ok(step)
    }

    /// Restores the newest checkpoint in the configured model directory, if any.
    pub fn restore_latest(&mut self) -> Result<Option<u64>> {
        let Some(dir) = self.config.model_dir.clone() else {
            return Ok(None);
        };
        match latest_checkpoint(dir)? {
            Some(path) => self.restore_checkpoint(path).map(Some),
            None => Ok(None),
        }
    }

    /// Replaces parameters, slots and global step with those of `ckpt`.
    ///
    /// When the estimator already has parameters, the checkpoint must hold
    /// exactly the same names and shapes.
    pub fn restore(&mut self, ckpt: Checkpoint) -> Result<()> {
        let (slots, params): (NamedTensors, NamedTensors) = ckpt
            .tensors
            .into_iter()
            .partition(|(k, _)| k.ends_with(ADAGRAD_SLOT_SUFFIX));
        if params.is_empty() {
            return Err(Error::validation("checkpoint holds no parameters"));
        }
        if let Some(current) = &self.params {
            let mut problems = Vec::new();
            for (name, t) in current {
                match params.get(name) {
                    None => problems.push(format!("{name} (missing)")),
                    Some(c) if c.shape() != t.shape() => {
                        problems.push(format!("{name} (expected {}, found {})", t.shape(), c.shape()))
                    }
                    Some(_) => {}
                }
            }
            for name in params.keys().filter(|k| !current.contains_key(*k)) {
                problems.push(format!("{name} (unexpected)"));
            }
            if !problems.is_empty() {
                return Err(Error::shape(
                    "restore",
                    format!("mismatched tensors: {}", problems.join(", ")),
                ));
            }
        }
        self.params = Some(params);
        self.pending_slots = slots;
        self.optimizer = None;
        self.global_step = ckpt.global_step;
        Ok(())
    }

    /// Installs parameters produced elsewhere (e.g. by a parameter server).
    pub fn install(&mut self, params: NamedTensors, slots: NamedTensors, global_step: u64) -> Result<()> {
        let mut tensors = params;
        tensors.extend(slots);
        self.restore(Checkpoint { global_step, tensors })
    }
}

impl SessionState for Estimator {
    fn global_step(&self) -> u64 {
        self.global_step
    }

    fn snapshot(&self) -> Checkpoint {
        self.checkpoint()
    }
}
