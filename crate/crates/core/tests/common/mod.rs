#![allow(dead_code)]

use std::sync::Arc;

use tfln::data::{bundled_iris, train_test_split, Dataset, Targets};
use tfln::estimator::{
    optimize_loss, DenseNet, FnModel, Mode, ModelFnOutput, ModelKind, CLASS_KEY, PROB_KEY,
};
use tfln::numerics::{argmax_rows, one_hot, softmax_cross_entropy, softmax_rows, OptimizerSpec, Tensor};
use tfln::Result;

pub fn iris_split() -> (Dataset, Dataset) {
    train_test_split(&bundled_iris(), 0.2, 42).unwrap()
}

/// The custom model function: one-hot targets, a [10,20,10] relu stack with
/// dropout at keep_prob 0.9, linear logits, softmax cross-entropy, Adagrad 0.1.
pub fn custom_iris_model() -> FnModel {
    let net = Arc::new(DenseNet::new("my_model", &[10, 20, 10], 3).unwrap());
    let init_net = Arc::clone(&net);
    FnModel::new(
        ModelKind::Classifier { n_classes: 3 },
        move |n, rng| init_net.init_glorot(n, rng),
        move |features, targets, mode, params, rng| -> Result<ModelFnOutput> {
            let pass = net.forward(params, features, 0.9, rng, mode == Mode::Train)?;
            let prob = softmax_rows(&pass.logits);
            let class = argmax_rows(&pass.logits);
            let mut predictions = std::collections::BTreeMap::new();
            predictions.insert(CLASS_KEY.to_string(), tfln::estimator::class_tensor(&class)?);
            predictions.insert(PROB_KEY.to_string(), prob);
            let (loss, train_op) = match targets {
                Some(t) => {
                    let target = one_hot(t.classes()?, 3, 1.0, 0.0)?;
                    let (loss, dlogits) = softmax_cross_entropy(&pass.logits, &target)?;
                    let grads = net.gradients(&pass, &dlogits)?;
                    (Some(loss), Some(optimize_loss(grads, OptimizerSpec::adagrad(0.1))))
                }
                None => (None, None),
            };
            Ok(ModelFnOutput {
                predictions,
                loss,
                train_op,
            })
        },
    )
}


/// Small linearly separable-ish 2-class data set with `n` rows.
pub fn toy_classes(n: usize) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let x = i as f64 / n as f64;
            vec![x, 1.0 - x * x, (i % 3) as f64 * 0.5]
        })
        .collect();
    let labels = (0..n).map(|i| usize::from(i * 2 >= n)).collect();
    Dataset::from_tensor(Tensor::from_rows(&rows).unwrap(), Targets::Classes(labels)).unwrap()
}

pub fn max_param_diff(a: &tfln::numerics::NamedTensors, b: &tfln::numerics::NamedTensors) -> f64 {
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    a.iter()
        .map(|(k, t)| t.max_abs_diff(&b[k]).unwrap())
        .fold(0.0, f64::max)
}
