mod common;

use std::fs;

use common::{custom_iris_model, iris_split, max_param_diff, toy_classes};
use tfln::data::{columns_for_width, Dataset, Targets};
use tfln::estimator::{
    check_classifier_predictions, dnn_classifier, linear_regressor, logistic_regressor, Checkpoint, Estimator, Metric,
    PredictionRecord, TrainInput,
};
use tfln::hooks::{CheckpointSaverHook, EventRecorder, HookEventKind, SessionRunHook, StopAtStepHook};
use tfln::numerics::{argmax_rows, Tensor};
use tfln::run_config::RunConfig;
use tfln::Error;

fn no_hooks() -> Vec<Box<dyn SessionRunHook>> {
    Vec::new()
}

fn iris_estimator(seed: u64) -> Estimator {
    let (train, _) = iris_split();
    dnn_classifier(&columns_for_width(train.n_features()).unwrap(), &[10, 20, 10], 3, RunConfig::default().with_seed(seed))
        .unwrap()
}

#[test]
fn dnn_classifier_on_iris_learns() {
    let (train, test) = iris_split();
    assert_eq!((train.len(), test.len()), (120, 30));
    let mut est = iris_estimator(42);
    let report = est.fit(&train, 200, &mut no_hooks()).unwrap();
    assert_eq!(report.steps_run, 200);
    assert_eq!(est.global_step(), 200);
    assert!(report.final_loss().unwrap() < report.initial_loss().unwrap());
    let m = est.evaluate_dataset(&test, &[Metric::Accuracy]).unwrap();
    assert!(m["accuracy"] >= 0.90, "accuracy {}", m["accuracy"]);
}

#[test]
fn generic_estimator_with_custom_model_function() {
    let (train, test) = iris_split();
    let mut est = Estimator::new(custom_iris_model(), RunConfig::default());
    assert!(!est.is_fitted());
    let report = est.fit(&train, 1000, &mut no_hooks()).unwrap();
    assert!(report.final_loss().unwrap() < report.initial_loss().unwrap());
    let p = est.predict(&test.features().unwrap()).unwrap();
    assert_eq!(p.len(), 30);
    check_classifier_predictions(p.values()).unwrap();
    let prob = p.probabilities().unwrap();
    for row in prob.row_iter() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(p.classes().unwrap(), argmax_rows(prob));
}

#[test]
fn resumed_fit_equals_one_long_fit() {
    let (train, _) = iris_split();
    let mut long = Estimator::new(custom_iris_model(), RunConfig::default());
    long.fit(TrainInput::batched(&train, 32, true), 40, &mut no_hooks()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Estimator::new(custom_iris_model(), RunConfig::default());
    first.fit(TrainInput::batched(&train, 32, true), 25, &mut no_hooks()).unwrap();
    let path = first.save_checkpoint_in(dir.path()).unwrap();
    let mut resumed = Estimator::new(custom_iris_model(), RunConfig::default());
    assert_eq!(resumed.restore_checkpoint(&path).unwrap(), 25);
    resumed.fit(TrainInput::batched(&train, 32, true), 15, &mut no_hooks()).unwrap();

    assert_eq!(resumed.global_step(), 40);
    assert_eq!(max_param_diff(long.params().unwrap(), resumed.params().unwrap()), 0.0);
    assert_eq!(long.optimizer_slots(), resumed.optimizer_slots());
}

#[test]
fn same_seed_gives_identical_parameters() {
    let (train, _) = iris_split();
    let run = |seed| {
        let mut e = Estimator::new(custom_iris_model(), RunConfig::default().with_seed(seed));
        e.fit(&train, 30, &mut no_hooks()).unwrap();
        e.checkpoint().encode().unwrap()
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn predict_is_pure_and_iterable_matches_batch() {
    let (train, test) = iris_split();
    let mut est = iris_estimator(42);
    est.fit(&train, 20, &mut no_hooks()).unwrap();
    let x = test.features().unwrap();
    let before = est.checkpoint();
    let a = est.predict(&x).unwrap();
    let b = est.predict(&x).unwrap();
    assert!(a.bit_eq(&b));
    assert_eq!(est.checkpoint(), before);
    let iterated: Vec<PredictionRecord> = est.predict_iter(&x).unwrap().map(Result::unwrap).collect();
    assert_eq!(iterated.len(), 30);
    for (i, r) in iterated.iter().enumerate() {
        let PredictionRecord::Class { class, prob } = r else { panic!("expected a class record") };
        let PredictionRecord::Class { class: c2, prob: p2 } = a.record(i) else { panic!() };
        assert_eq!(*class, c2);
        for (u, v) in prob.iter().zip(&p2) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn predict_errors() {
    let est = Estimator::new(custom_iris_model(), RunConfig::default());
    assert!(matches!(est.predict(&Tensor::zeros(2, 4)), Err(Error::State(_))));
    let (train, _) = iris_split();
    let mut est = iris_estimator(1);
    est.fit(&train, 1, &mut no_hooks()).unwrap();
    assert!(matches!(est.predict(&Tensor::zeros(2, 5)), Err(Error::Validation(_))));
}

#[test]
fn fit_argument_errors() {
    let (train, _) = iris_split();
    let mut est = iris_estimator(1);
    assert!(matches!(est.fit(&train, 0, &mut no_hooks()), Err(Error::Validation(_))));
    let bad = Dataset::from_tensor(Tensor::zeros(2, 4), Targets::Classes(vec![0, 3])).unwrap();
    assert!(matches!(est.fit(&bad, 1, &mut no_hooks()), Err(Error::Validation(_))));
    let empty = train.subset(&[]);
    assert!(matches!(est.fit(&empty, 1, &mut no_hooks()), Err(Error::Validation(_))));
}

#[test]
fn evaluate_metrics() {
    let (train, test) = iris_split();
    let mut est = iris_estimator(42);
    est.fit(&train, 50, &mut no_hooks()).unwrap();
    let m = est.evaluate_dataset(&test, &[Metric::Accuracy, Metric::LogLoss]).unwrap();
    let p = est.predict(&test.features().unwrap()).unwrap();
    let labels = test.targets().classes().unwrap();
    let correct = p.classes().unwrap().iter().zip(labels).filter(|(a, b)| a == b).count();
    assert_eq!(m["accuracy"], correct as f64 / 30.0);
    let prob = p.probabilities().unwrap();
    let ll = -labels.iter().enumerate().map(|(i, &c)| prob.get(i, c).max(1e-15).ln()).sum::<f64>() / 30.0;
    assert!((m["log_loss"] - ll).abs() < 1e-12);
    assert!(matches!(est.evaluate_dataset(&test, &[Metric::Mse]), Err(Error::Validation(_))));
}

#[test]
fn linear_regressor_first_step_matches_hand_computed_sgd() {
    let x = Tensor::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]]).unwrap();
    let y = [1.0, -2.0, 4.0];
    let data = Dataset::from_tensor(x, Targets::Values(y.to_vec())).unwrap();
    let mut est = linear_regressor(&columns_for_width(2).unwrap(), RunConfig::default()).unwrap();
    let report = est.fit(&data, 1, &mut no_hooks()).unwrap();
    // From zero weights the prediction is 0, loss = mean(y^2) and dL/dpred = -2y/n.
    let loss0 = y.iter().map(|v| v * v).sum::<f64>() / 3.0;
    assert!((report.losses[0] - loss0).abs() < 1e-15);
    let d: Vec<f64> = y.iter().map(|v| -2.0 * v / 3.0).collect();
    let w0 = -0.1 * (1.0 * d[0] + 3.0 * d[1] + 0.5 * d[2]);
    let w1 = -0.1 * (2.0 * d[0] - 1.0 * d[1]);
    let b = -0.1 * d.iter().sum::<f64>();
    let p = est.params().unwrap();
    let w = &p["linear/logits/weights"];
    assert!((w.get(0, 0) - w0).abs() < 1e-15);
    assert!((w.get(1, 0) - w1).abs() < 1e-15);
    assert!((p["linear/logits/biases"].get(0, 0) - b).abs() < 1e-15);
}

#[test]
fn linear_regressor_recovers_a_line() {
    let rows: Vec<[f64; 1]> = (0..20).map(|i| [i as f64 / 10.0 - 1.0]).collect();
    let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] - 0.5).collect();
    let data = Dataset::from_tensor(Tensor::from_rows(&rows).unwrap(), Targets::Values(y)).unwrap();
    let mut est = linear_regressor(&columns_for_width(1).unwrap(), RunConfig::default()).unwrap();
    est.fit(&data, 500, &mut no_hooks()).unwrap();
    let p = est.params().unwrap();
    assert!((p["linear/logits/weights"].get(0, 0) - 3.0).abs() < 1e-3);
    assert!((p["linear/logits/biases"].get(0, 0) + 0.5).abs() < 1e-3);
    let m = est.evaluate_dataset(&data, &[Metric::Mse]).unwrap();
    assert!(m["mse"] < 1e-6);
}

#[test]
fn logistic_regressor_first_step_and_probabilities() {
    let x = Tensor::from_rows(&[[1.0], [-1.0], [2.0], [-2.0]]).unwrap();
    let data = Dataset::from_tensor(x.clone(), Targets::Classes(vec![1, 0, 1, 0])).unwrap();
    let mut est = logistic_regressor(&columns_for_width(1).unwrap(), RunConfig::default()).unwrap();
    let report = est.fit(&data, 1, &mut no_hooks()).unwrap();
    assert!((report.losses[0] - std::f64::consts::LN_2).abs() < 1e-15);
    // dL/dz = (0.5 - y) / 4 at z = 0.
    let dw = (-0.5 * 1.0 + 0.5 * -1.0 - 0.5 * 2.0 + 0.5 * -2.0) / 4.0;
    assert!((est.params().unwrap()["logistic/logits/weights"].get(0, 0) + 0.1 * dw).abs() < 1e-15);
    est.fit(&data, 200, &mut no_hooks()).unwrap();
    let p = est.predict(&x).unwrap();
    assert_eq!(p.classes().unwrap(), vec![1, 0, 1, 0]);
    assert_eq!(p.probabilities().unwrap().cols(), 2);
}

#[test]
fn hook_lifecycle_for_three_steps() {
    let data = toy_classes(10);
    let rec = EventRecorder::new();
    let mut hooks: Vec<Box<dyn SessionRunHook>> = vec![Box::new(rec.clone())];
    let mut est = Estimator::new(small_dnn(), RunConfig::default());
    est.fit(&data, 3, &mut hooks).unwrap();
    use HookEventKind::*;
    assert_eq!(
        rec.kinds(),
        vec![SessionStart, BeforeRun, AfterRun, BeforeRun, AfterRun, BeforeRun, AfterRun, SessionEnd]
    );
    let steps: Vec<u64> = rec.events().iter().map(|e| e.global_step).collect();
    assert_eq!(steps, vec![0, 0, 1, 1, 2, 2, 3, 3]);
}

fn small_dnn() -> tfln::estimator::CannedModel {
    tfln::estimator::CannedModel::dnn_classifier(&[4], 2).unwrap()
}

#[test]
fn stop_at_step_hook_halts_fit() {
    let data = toy_classes(10);
    let mut hooks: Vec<Box<dyn SessionRunHook>> = vec![Box::new(StopAtStepHook::new(5).unwrap())];
    let mut est = Estimator::new(small_dnn(), RunConfig::default());
    let report = est.fit(&data, 200, &mut hooks).unwrap();
    assert_eq!(est.global_step(), 5);
    assert!(report.stopped_early);
    assert_eq!(report.steps_run, 5);
}

#[test]
fn checkpoint_saver_hook_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_classes(10);
    let saver = CheckpointSaverHook::new(2, dir.path()).unwrap();
    let written = saver.written();
    let mut hooks: Vec<Box<dyn SessionRunHook>> = vec![Box::new(saver)];
    let mut est = Estimator::new(small_dnn(), RunConfig::default());
    est.fit(&data, 5, &mut hooks).unwrap();
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, vec!["ckpt-2", "ckpt-4", "ckpt-5"]);
    assert_eq!(written.lock().unwrap().len(), 3);
    assert_eq!(Checkpoint::load(dir.path().join("ckpt-4")).unwrap().global_step, 4);
}

#[test]
fn save_restore_reproduces_predictions_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = iris_split();
    let mut est = iris_estimator(42);
    est.fit(&train, 30, &mut no_hooks()).unwrap();
    let path = est.save_checkpoint_in(dir.path()).unwrap();
    let mut restored = iris_estimator(999);
    restored.restore_checkpoint(&path).unwrap();
    let x = test.features().unwrap();
    assert!(est.predict(&x).unwrap().bit_eq(&restored.predict(&x).unwrap()));
    assert_eq!(restored.global_step(), 30);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = iris_split();
    let mut est = iris_estimator(42);
    est.fit(&train, 3, &mut no_hooks()).unwrap();
    let path = est.save_checkpoint_in(dir.path()).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    fs::write(&path, &bytes).unwrap();
    let mut other = iris_estimator(42);
    assert!(matches!(other.restore_checkpoint(&path), Err(Error::Crc { .. })));

    bytes.truncate(bytes.len() - 9);
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(other.restore_checkpoint(&path), Err(Error::Format { .. })));
}

#[test]
fn mismatched_checkpoint_names_the_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = iris_split();
    let mut est = iris_estimator(42);
    est.fit(&train, 1, &mut no_hooks()).unwrap();
    let path = est.save_checkpoint_in(dir.path()).unwrap();
    let mut other =
        dnn_classifier(&columns_for_width(4).unwrap(), &[10, 21, 10], 3, RunConfig::default()).unwrap();
    let err = other.restore_checkpoint(&path).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Shape { .. }));
    assert!(msg.contains("dnn/hiddenlayer_1/weights"), "{msg}");
}

#[test]
fn fit_saves_final_checkpoint_into_model_dir() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_classes(8);
    let mut est = Estimator::new(small_dnn(), RunConfig::default().with_model_dir(dir.path()));
    est.fit(&data, 4, &mut no_hooks()).unwrap();
    assert!(dir.path().join("ckpt-4").exists());
    let mut again = Estimator::new(small_dnn(), RunConfig::default().with_model_dir(dir.path()));
    assert_eq!(again.restore_latest().unwrap(), Some(4));
}
