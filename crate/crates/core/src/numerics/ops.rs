use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Matrix product `a · b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.rows() {
        return Err(Error::shape(
            "matmul",
            format!("cannot multiply {} by {}", a.shape(), b.shape()),
        ));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = ad[i * k + p];
            let b_row = &bd[p * m..(p + 1) * m];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(n, m, out)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Row-wise log-softmax via log-sum-exp.
pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

pub fn one_hot(labels: &[usize], depth: usize, on_value: f64, off_value: f64) -> Result<Tensor> {
    if depth == 0 {
        return Err(Error::validation("one_hot depth must be at least 1"));
    }
    if labels.is_empty() {
        return Err(Error::validation("one_hot needs at least one label"));
    }
    let mut out = Tensor::filled(labels.len(), depth, off_value);
    for (i, &label) in labels.iter().enumerate() {
        if label >= depth {
            return Err(Error::validation(format!(
                "label {label} at index {i} is outside [0, {depth})"
            )));
        }
        out.set(i, label, on_value);
    }
    Ok(out)
}

/// Per-row index of the maximum; ties go to the lowest index.
pub fn argmax_rows(x: &Tensor) -> Vec<usize> {
    x.row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let b = t(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_oracle() {
        // 1*5+2*7=19, 1*6+2*8=22, 3*5+4*7=43, 3*6+4*8=50
        let a = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = t(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(2, 3), &Tensor::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2×3 by 2×3"), "{msg}");
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&t(&[&[-1.0, 0.0, 2.0]])).data(), &[0.0, 0.0, 2.0]);
        let pos = t(&[&[1.0, 2.5]]);
        assert_eq!(relu(&pos), pos);
        assert_eq!(relu(&t(&[&[-1.0, -3.0]])).data(), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_rows(&t(&[&[0.0, 0.0, 0.0]]));
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // exp(ln2)=2, sum=4
        let s = softmax_rows(&t(&[&[2f64.ln(), 0.0, 0.0]]));
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.25).abs() < 1e-15);
        let s = softmax_rows(&t(&[&[1000.0, 0.0, 0.0]]));
        assert!(s.all_finite());
        assert!((s.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(s.get(0, 1) < 1e-300);
    }

    #[test]
    fn one_hot_cases() {
        assert_eq!(one_hot(&[2], 3, 1.0, 0.0).unwrap().data(), &[0.0, 0.0, 1.0]);
        assert_eq!(one_hot(&[0], 3, 1.0, 0.0).unwrap().data(), &[1.0, 0.0, 0.0]);
        assert_eq!(
            one_hot(&[1], 4, 5.0, -1.0).unwrap().data(),
            &[-1.0, 5.0, -1.0, -1.0]
        );
        let err = one_hot(&[0, 3], 3, 1.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("index 1"));
    }

    #[test]
    fn argmax_cases() {
        assert_eq!(argmax_rows(&t(&[&[0.1, 0.7, 0.2]])), vec![1]);
        assert_eq!(argmax_rows(&t(&[&[0.5, 0.5]])), vec![0]);
        assert_eq!(argmax_rows(&Tensor::zeros(3, 4)).len(), 3);
    }
}
