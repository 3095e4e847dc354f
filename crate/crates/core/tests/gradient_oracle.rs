use std::time::Instant;

use tfln::estimator::DenseNet;
use tfln::numerics::{mean_squared_error, one_hot, softmax_cross_entropy, NamedTensors, RngState, Tensor};

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

struct Case {
    net: DenseNet,
    params: NamedTensors,
    x: Tensor,
    labels: Vec<usize>,
    values: Tensor,
    n_out: usize,
}

fn random_case(seed: u64) -> Case {
    let mut rng = RngState::new(seed);
    let n_in = 1 + rng.below(8);
    let hidden: Vec<usize> = (0..rng.below(3)).map(|_| 1 + rng.below(8)).collect();
    let n_out = 2 + rng.below(7);
    let batch = 1 + rng.below(5);
    let net = DenseNet::new("net", &hidden, n_out).unwrap();
    let mut params = net.init_glorot(n_in, &mut rng).unwrap();
    for t in params.values_mut() {
        for v in t.data_mut() {
            *v += rng.uniform(-0.3, 0.3);
        }
    }
    let x = Tensor::new(batch, n_in, (0..batch * n_in).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap();
    let labels = (0..batch).map(|_| rng.below(n_out)).collect();
    let values = Tensor::new(batch, n_out, (0..batch * n_out).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
    Case {
        net,
        params,
        x,
        labels,
        values,
        n_out,
    }
}

fn loss_and_grads(case: &Case, params: &NamedTensors, softmax: bool) -> (f64, NamedTensors) {
    let mut rng = RngState::new(0);
    let pass = case.net.forward(params, &case.x, 1.0, &mut rng, true).unwrap();
    let (loss, dlogits) = if softmax {
        let t = one_hot(&case.labels, case.n_out, 1.0, 0.0).unwrap();
        softmax_cross_entropy(&pass.logits, &t).unwrap()
    } else {
        mean_squared_error(&pass.logits, &case.values).unwrap()
    };
    (loss, case.net.gradients(&pass, &dlogits).unwrap())
}

fn check_case(case: &Case, softmax: bool) -> (usize, f64) {
    let (_, analytic) = loss_and_grads(case, &case.params, softmax);
    assert_eq!(analytic.keys().collect::<Vec<_>>(), case.params.keys().collect::<Vec<_>>());
    let mut checked = 0;
    let mut worst = 0.0f64;
    for (name, t) in &case.params {
        for i in 0..t.len() {
            let mut plus = case.params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += H;
            let mut minus = case.params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= H;
            let numeric = (loss_and_grads(case, &plus, softmax).0 - loss_and_grads(case, &minus, softmax).0) / (2.0 * H);
            let a = analytic[name].data()[i];
            let e = rel_err(a, numeric);
            assert!(e < TOL, "{name}[{i}]: analytic {a} numeric {numeric} rel err {e}");
            worst = worst.max(e);
            checked += 1;
        }
    }
    (checked, worst)
}

#[test]
fn softmax_cross_entropy_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut total = 0;
    for seed in 0..25 {
        total += check_case(&random_case(seed), true).0;
    }
    assert!(total > 0);
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn mean_squared_error_gradients_match_finite_differences() {
    for seed in 100..125 {
        check_case(&random_case(seed), false);
    }
}

#[test]
fn gradients_with_dropout_match_finite_differences_under_a_fixed_mask() {
    let net = DenseNet::new("net", &[6, 5], 3).unwrap();
    let mut rng = RngState::new(3);
    let params = net.init_glorot(4, &mut rng).unwrap();
    let x = Tensor::new(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let t = one_hot(&[0, 2, 1], 3, 1.0, 0.0).unwrap();
    let loss = |p: &NamedTensors| {
        let pass = net.forward(p, &x, 0.7, &mut RngState::new(11), true).unwrap();
        softmax_cross_entropy(&pass.logits, &t).unwrap()
    };
    let pass = net.forward(&params, &x, 0.7, &mut RngState::new(11), true).unwrap();
    let (_, dlogits) = loss(&params);
    let grads = net.gradients(&pass, &dlogits).unwrap();
    for (name, g) in &grads {
        for i in 0..g.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += H;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= H;
            let numeric = (loss(&plus).0 - loss(&minus).0) / (2.0 * H);
            assert!(rel_err(g.data()[i], numeric) < TOL, "{name}[{i}]");
        }
    }
}
