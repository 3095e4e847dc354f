//! Train/evaluate orchestration with evaluation delay and throttling, plus export.
//!
//! Training runs in segments of `min_eval_frequency` steps. After each segment
//! an evaluation is due; it runs only if at least `eval_delay` has passed since
//! the experiment started and at least `eval_throttle` has passed since the
//! previous evaluation (or since the start, before the first one). Evaluations
//! that are due but not allowed are recorded as skipped. The evaluation after
//! the last segment always runs.

mod clock;
mod export;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

pub use clock::{Clock, ClockTickHook, MockClock, SystemClock};
pub use export::{
    export_model, load_export, load_export_with, read_manifest, ExportManifest, ExportStrategy,
    EXPORT_FORMAT_VERSION, MANIFEST_FILE,
};

use crate::data::Dataset;
use crate::distributed::{run_distributed_training, DistributedOptions, DistributedReport};
use crate::error::{Error, Result};
use crate::estimator::{Estimator, Metric, TrainInput};
use crate::hooks::{CheckpointSaverHook, SessionRunHook};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub global_step: u64,
    pub metrics: BTreeMap<String, f64>,
    /// Clock reading when the evaluation finished.
    pub timestamp: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub global_step: u64,
    pub steps_run: u64,
    pub losses: Vec<f64>,
    /// Set when training went through the parameter-server path.
    pub distributed: Option<DistributedReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainAndEvalReport {
    pub evaluations: Vec<EvalRecord>,
    /// Global steps at which a due evaluation was skipped.
    pub skipped: Vec<u64>,
    pub train: TrainReport,
    pub export: Option<ExportManifest>,
}

/// An estimator bound to training and evaluation data.
pub struct Experiment {
    estimator: Estimator,
    train_input: Dataset,
    eval_input: Dataset,
    train_steps: u64,
    min_eval_frequency: u64,
    eval_delay: Duration,
    eval_throttle: Duration,
    export_strategy: Option<ExportStrategy>,
    metrics: Vec<Metric>,
    batch_size: Option<usize>,
    distributed: DistributedOptions,
    clock: Arc<dyn Clock>,
    hooks: Vec<Box<dyn SessionRunHook>>,
    last_timestamp: Option<Duration>,
}

impl Experiment {
    pub fn new(estimator: Estimator, train_input: Dataset, eval_input: Dataset, train_steps: u64) -> Result<Self> {
        if train_steps == 0 {
            return Err(Error::validation("train_steps must be at least 1"));
        }
        let mut hooks: Vec<Box<dyn SessionRunHook>> = Vec::new();
        let config = estimator.config();
        if let (Some(n), Some(dir)) = (config.save_checkpoints_steps, &config.model_dir) {
            hooks.push(Box::new(CheckpointSaverHook::new(n, dir.clone())?));
        }
        let metrics = Metric::defaults_for(estimator.kind());
        Ok(Experiment {
            estimator,
            train_input,
            eval_input,
            train_steps,
            min_eval_frequency: train_steps,
            eval_delay: Duration::ZERO,
            eval_throttle: Duration::ZERO,
            export_strategy: None,
            metrics,
            batch_size: None,
            distributed: DistributedOptions::default(),
            clock: Arc::new(SystemClock::new()),
            hooks,
            last_timestamp: None,
        })
    }

    pub fn with_min_eval_frequency(mut self, steps: u64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::validation("min_eval_frequency must be at least 1"));
        }
        self.min_eval_frequency = steps;
        Ok(self)
    }

    pub fn with_eval_delay(mut self, delay: Duration) -> Self {
        self.eval_delay = delay;
        self
    }

    pub fn with_eval_throttle(mut self, throttle: Duration) -> Self {
        self.eval_throttle = throttle;
        self
    }

    pub fn with_export_strategy(mut self, strategy: ExportStrategy) -> Self {
        self.export_strategy = Some(strategy);
        self
    }

    pub fn with_metrics(mut self, metrics: Vec<Metric>) -> Result<Self> {
        let kind = self.estimator.kind();
        if let Some(m) = metrics.iter().find(|m| !m.applies_to(kind)) {
            return Err(Error::validation(format!("metric {m} does not apply to a {kind:?} model")));
        }
        self.metrics = metrics;
        Ok(self)
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = Some(batch_size);
        self
    }

    pub fn with_distributed_options(mut self, options: DistributedOptions) -> Self {
        self.distributed = options;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_hook(mut self, hook: Box<dyn SessionRunHook>) -> Self {
        self.hooks.push(hook);
        self
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    pub fn into_estimator(self) -> Estimator {
        self.estimator
    }

    pub fn eval_input(&self) -> &Dataset {
        &self.eval_input
    }

    pub fn metrics(&self) -> &[Metric] {
        &self.metrics
    }

    fn train_segment(&mut self, steps: u64) -> Result<TrainReport> {
        let cluster = self.estimator.config().cluster.clone();
        match cluster.filter(|c| c.is_distributed()) {
            Some(cluster) => {
                let shards = self.train_input.shard(cluster.workers().len())?;
                let mut options = self.distributed;
                options.batch_size = self.batch_size;
                let report =
                    run_distributed_training(&cluster, &mut self.estimator, &shards, steps, options, &mut self.hooks)?;
                Ok(TrainReport {
                    global_step: report.final_global_step,
                    steps_run: report.applied_updates,
                    losses: report.losses.clone(),
                    distributed: Some(report),
                })
            }
            None => {
                let input = TrainInput::Dataset {
                    data: &self.train_input,
                    batch_size: self.batch_size,
                    shuffle: false,
                };
                let fit = self.estimator.fit(input, steps, &mut self.hooks)?;
                Ok(TrainReport {
                    global_step: fit.global_step,
                    steps_run: fit.steps_run,
                    losses: fit.losses,
                    distributed: None,
                })
            }
        }
    }

    /// Runs all `train_steps` steps locally or on the configured cluster.
    pub fn train(&mut self) -> Result<TrainReport> {
        self.train_segment(self.train_steps)
    }

    /// One evaluation over the evaluation input.
    pub fn evaluate(&mut self) -> Result<EvalRecord> {
        if !self.estimator.is_fitted() {
            return Err(Error::State("nothing to evaluate: the estimator has no parameters".into()));
        }
        if self.eval_input.is_empty() {
            return Err(Error::validation("evaluation input has no rows"));
        }
        let metrics = self.estimator.evaluate_dataset(&self.eval_input, &self.metrics)?;
        let mut timestamp = self.clock.now();
        if let Some(last) = self.last_timestamp {
            if timestamp <= last {
                timestamp = last + Duration::from_nanos(1);
            }
        }
        self.last_timestamp = Some(timestamp);
        Ok(EvalRecord {
            global_step: self.estimator.global_step(),
            metrics,
            timestamp,
        })
    }

    /// Alternates training segments with scheduled evaluations, then exports
    /// if an export strategy is set.
    pub fn train_and_evaluate(&mut self) -> Result<TrainAndEvalReport> {
        let start = self.clock.now();
        let mut last_eval: Option<Duration> = None;
        let mut evaluations = Vec::new();
        let mut skipped = Vec::new();
        let mut train = TrainReport {
            global_step: self.estimator.global_step(),
            steps_run: 0,
            losses: Vec::new(),
            distributed: None,
        };
        let mut remaining = self.train_steps;
        while remaining > 0 {
            let seg = remaining.min(self.min_eval_frequency);
            let r = self.train_segment(seg)?;
            remaining -= seg;
            let stopped = r.steps_run < seg;
            train.global_step = r.global_step;
            train.steps_run += r.steps_run;
            train.losses.extend(r.losses);
            train.distributed = r.distributed.or(train.distributed.take());
            let is_final = remaining == 0 || stopped;
            let now = self.clock.now();
            let since_last = now.saturating_sub(last_eval.unwrap_or(start));
            let allowed = now.saturating_sub(start) >= self.eval_delay && since_last >= self.eval_throttle;
            if is_final || allowed {
                evaluations.push(self.evaluate()?);
                last_eval = Some(now);
            } else {
                skipped.push(self.estimator.global_step());
            }
            if stopped {
                break;
            }
        }
        let export = match &self.export_strategy {
            Some(s) => {
                if s.format_version != EXPORT_FORMAT_VERSION {
                    return Err(Error::Version {
                        found: s.format_version,
                        expected: EXPORT_FORMAT_VERSION,
                    });
                }
                Some(export_model(&self.estimator, &s.export_dir, &self.metrics)?)
            }
            None => None,
        };
        Ok(TrainAndEvalReport {
            evaluations,
            skipped,
            train,
            export,
        })
    }

    /// Exports to `dir` regardless of the configured strategy.
    pub fn export(&self, dir: impl AsRef<std::path::Path>) -> Result<ExportManifest> {
        export_model(&self.estimator, dir, &self.metrics)
    }
}
