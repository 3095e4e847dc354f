use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use tfln::data::{bundled_iris, columns_for_width, parse_feature_csv, parse_labeled_csv, train_test_split, Dataset, LabelKind};
use tfln::distributed::DistributedOptions;
use tfln::estimator::{
    dnn_classifier, latest_checkpoint, linear_classifier, linear_regressor, logistic_regressor, Checkpoint, Estimator,
    Metric, ModelKind, PredictionRecord,
};
use tfln::experiment::{export_model, load_export, ExportManifest, Experiment};
use tfln::fmt::sig6;
use tfln::hooks::LoggingHook;
use tfln::run_config::{RunConfig, CONFIG_ENV};
use tfln::Error;

use crate::{Command, Common, DataArgs, Failure, InspectArgs, ModelArg, PredictArgs, TrainArgs};

const DEFAULT_STEPS: u64 = 200;
const IRIS_TEST_FRACTION: f64 = 0.2;
const IRIS_SPLIT_SEED: u64 = 42;
const LOG_EVERY: u64 = 100;

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::Export(c) => export(c),
        Command::DemoIris(c) => demo_iris(c),
        Command::InspectCkpt(a) => inspect(a),
    }
}

/// Flags beat the configuration file, which beats `TFLN_CONFIG`, which beats defaults.
fn resolve_config(common: &Common, required: bool) -> Result<RunConfig, Failure> {
    let path = RunConfig::resolve_path(common.config.as_deref());
    if required && path.is_none() {
        return Err(Failure::Usage(format!("this command needs --config or {CONFIG_ENV}")));
    }
    let mut config = RunConfig::load(path.as_deref())?;
    if let Some(seed) = common.seed {
        config.random_seed = seed;
    }
    if let Some(dir) = &common.model_dir {
        config.model_dir = Some(dir.clone());
    }
    if common.steps == Some(0) {
        return Err(Error::Validation("--steps must be at least 1".into()).into());
    }
    if common.batch_size == Some(0) {
        return Err(Error::Validation("--batch-size must be at least 1".into()).into());
    }
    config.validate()?;
    Ok(config)
}

fn model_dir(config: &RunConfig) -> Result<PathBuf, Failure> {
    config
        .model_dir
        .clone()
        .ok_or_else(|| Failure::Usage("no model directory: pass --model-dir or set model_dir in the configuration".into()))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|source| {
        Failure::Run(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn load_labelled(path: &Path, label: LabelKind) -> Result<Dataset, Failure> {
    Ok(parse_labeled_csv(&read_text(path)?, label)?)
}

fn iris_split(seed: u64) -> Result<(Dataset, Dataset), Failure> {
    Ok(train_test_split(&bundled_iris(), IRIS_TEST_FRACTION, seed)?)
}

/// Writes `text` to `--output` if given, else to standard output.
fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|source| Error::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            fs::write(path, text).map_err(|source| {
                Failure::Run(Error::Io {
                    path: path.to_path_buf(),
                    source,
                })
            })
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn metric_lines(metrics: &BTreeMap<String, f64>) -> String {
    metrics.iter().fold(String::new(), |mut s, (k, v)| {
        let _ = writeln!(s, "{k}={}", sig6(*v));
        s
    })
}

fn logging_hook() -> Result<Box<LoggingHook>, Failure> {
    Ok(Box::new(LoggingHook::to_stderr(LOG_EVERY)?))
}

fn label_kind(kind: ModelKind) -> LabelKind {
    match kind {
        ModelKind::Classifier { n_classes } => LabelKind::Class { n_classes },
        ModelKind::Regressor => LabelKind::Value,
    }
}

fn build_estimator(args: &TrainArgs, n_features: usize, config: RunConfig) -> Result<Estimator, Failure> {
    let columns = columns_for_width(n_features)?;
    let est = match args.model {
        ModelArg::Dnn => dnn_classifier(&columns, &args.hidden_units, args.n_classes, config)?,
        ModelArg::Linear => linear_classifier(&columns, args.n_classes, config)?,
        ModelArg::Logistic => logistic_regressor(&columns, config)?,
        ModelArg::LinearRegressor => linear_regressor(&columns, config)?,
    };
    Ok(est)
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let config = resolve_config(&args.common, true)?;
    let label = match args.model {
        ModelArg::LinearRegressor => LabelKind::Value,
        ModelArg::Logistic => LabelKind::Class { n_classes: 2 },
        ModelArg::Dnn | ModelArg::Linear => LabelKind::Class {
            n_classes: args.n_classes,
        },
    };
    let (train_data, eval_data) = match (&args.data, &args.eval_data) {
        (None, None) => iris_split(IRIS_SPLIT_SEED)?,
        (None, Some(_)) => return Err(Failure::Usage("--eval-data needs --data".into())),
        (Some(d), None) => {
            let ds = load_labelled(d, label)?;
            (ds.clone(), ds)
        }
        (Some(d), Some(e)) => (load_labelled(d, label)?, load_labelled(e, label)?),
    };
    let mut est = build_estimator(&args, train_data.n_features(), config.clone())?;
    if let Some(step) = est.restore_latest()? {
        eprintln!("resuming from global step {step}");
    }
    let steps = args.common.steps.unwrap_or(DEFAULT_STEPS);
    let mut options = DistributedOptions {
        transport: args.transport.into(),
        ..DistributedOptions::default()
    };
    if let Some(m) = args.common.mode {
        options.mode = m.into();
    }
    let mut exp = Experiment::new(est, train_data, eval_data, steps)?
        .with_distributed_options(options)
        .with_hook(logging_hook()?);
    if let Some(bs) = args.common.batch_size {
        exp = exp.with_batch_size(bs);
    }
    let report = exp.train_and_evaluate()?;
    let last = report
        .evaluations
        .last()
        .ok_or_else(|| Error::Internal("training finished without an evaluation".into()))?;
    if let Some(dir) = &config.model_dir {
        export_model(exp.estimator(), dir, exp.metrics())?;
    }
    let mut text = metric_lines(&last.metrics);
    let _ = writeln!(text, "global_step={}", last.global_step);
    emit(args.common.output.as_deref(), &text)
}

fn load_model(common: &Common) -> Result<(Estimator, ExportManifest), Failure> {
    let config = resolve_config(common, false)?;
    Ok(load_export(model_dir(&config)?)?)
}

fn evaluate(args: DataArgs) -> Result<(), Failure> {
    let (est, manifest) = load_model(&args.common)?;
    let data = match &args.data {
        Some(path) => load_labelled(path, label_kind(est.kind()))?,
        None => iris_split(IRIS_SPLIT_SEED)?.1,
    };
    let metrics = manifest_metrics(&manifest, est.kind())?;
    let values = est.evaluate_dataset(&data, &metrics)?;
    emit(args.common.output.as_deref(), &metric_lines(&values))
}

fn manifest_metrics(manifest: &ExportManifest, kind: ModelKind) -> Result<Vec<Metric>, Failure> {
    if manifest.metrics.is_empty() {
        return Ok(Metric::defaults_for(kind));
    }
    Ok(manifest
        .metrics
        .iter()
        .map(|m| m.parse::<Metric>())
        .collect::<Result<Vec<_>, _>>()?)
}

fn predict(args: PredictArgs) -> Result<(), Failure> {
    let (est, manifest) = load_model(&args.common)?;
    let features = parse_feature_csv(&read_text(&args.input)?, manifest.n_features)?;
    let predictions = est.predict(&features)?;
    let mut text = String::new();
    for (i, record) in predictions.records().into_iter().enumerate() {
        match record {
            PredictionRecord::Class { class, prob } => {
                let _ = write!(text, "{i},{class}");
                for p in prob {
                    let _ = write!(text, ",{p}");
                }
                text.push('\n');
            }
            PredictionRecord::Score(s) => {
                let _ = writeln!(text, "{i},{s}");
            }
        }
    }
    emit(args.common.output.as_deref(), &text)
}

fn export(common: Common) -> Result<(), Failure> {
    let Some(out) = common.output.clone() else {
        return Err(Failure::Usage("export needs --output DIR".into()));
    };
    let (est, manifest) = load_model(&common)?;
    let metrics = manifest_metrics(&manifest, est.kind())?;
    let written = export_model(&est, &out, &metrics)?;
    println!("exported {} to {}", written.checkpoint, out.display());
    Ok(())
}

fn demo_iris(common: Common) -> Result<(), Failure> {
    let config = resolve_config(&common, false)?;
    let (train_data, test_data) = iris_split(config.random_seed)?;
    let est = dnn_classifier(&columns_for_width(train_data.n_features())?, &[10, 20, 10], 3, config)?;
    let steps = common.steps.unwrap_or(DEFAULT_STEPS);
    let mut options = DistributedOptions::default();
    if let Some(m) = common.mode {
        options.mode = m.into();
    }
    let mut exp = Experiment::new(est, train_data, test_data.clone(), steps)?
        .with_distributed_options(options)
        .with_hook(logging_hook()?);
    if let Some(bs) = common.batch_size {
        exp = exp.with_batch_size(bs);
    }
    exp.train()?;
    let est = exp.estimator();
    let metrics = est.evaluate_dataset(&test_data, &Metric::defaults_for(est.kind()))?;
    emit(common.output.as_deref(), &metric_lines(&metrics))
}

fn inspect(args: InspectArgs) -> Result<(), Failure> {
    let path = if args.path.is_dir() {
        latest_checkpoint(&args.path)?
            .ok_or_else(|| Error::Validation(format!("no checkpoints in {}", args.path.display())))?
    } else {
        args.path
    };
    let ckpt = Checkpoint::load(&path)?;
    let mut text = format!("global_step={}\n", ckpt.global_step);
    for (name, t) in &ckpt.tensors {
        let _ = writeln!(text, "{name} {}x{}", t.rows(), t.cols());
    }
    print!("{text}");
    Ok(())
}
