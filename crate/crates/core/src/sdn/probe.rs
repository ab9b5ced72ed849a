use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::frontend::STD_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub chance: f64,
}

const PROBE_STEPS: usize = 500;
const PROBE_LR: f64 = 0.5;
const PROBE_L2: f64 = 1e-4;

/// Multinomial logistic regression fitted by full-batch gradient descent on
/// standardised inputs; returns held-out accuracy. Standardisation uses
/// training-row statistics only.
pub fn linear_probe(
    train_x: &Array2<f64>,
    train_y: &[usize],
    test_x: &Array2<f64>,
    test_y: &[usize],
    n_classes: usize,
) -> Result<ProbeResult> {
    if train_x.nrows() != train_y.len() || test_x.nrows() != test_y.len() {
        return Err(Error::shape("linear_probe", "rows and labels differ"));
    }
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::shape("linear_probe", "train and test widths differ"));
    }
    if train_y.is_empty() || test_y.is_empty() || n_classes < 2 {
        return Err(Error::Data("probe needs samples in both sets and at least two classes".into()));
    }
    if train_y.iter().chain(test_y).any(|&y| y >= n_classes) {
        return Err(Error::Data("label out of range".into()));
    }
    let mean = train_x.mean_axis(Axis(0)).expect("non-empty");
    let std = train_x.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
    let norm = |x: &Array2<f64>| (x - &mean.view().insert_axis(Axis(0))) / std.view().insert_axis(Axis(0));
    let xs = norm(train_x);
    let xt = norm(test_x);

    let (n, d) = xs.dim();
    let mut onehot = Array2::<f64>::zeros((n, n_classes));
    for (i, &y) in train_y.iter().enumerate() {
        onehot[[i, y]] = 1.0;
    }
    let mut w = Array2::<f64>::zeros((d, n_classes));
    let mut b = Array1::<f64>::zeros(n_classes);
    for _ in 0..PROBE_STEPS {
        let p = softmax(&(xs.dot(&w) + b.view().insert_axis(Axis(0))));
        let err = (p - &onehot) / n as f64;
        let gw = xs.t().dot(&err) + &w * PROBE_L2;
        let gb = err.sum_axis(Axis(0));
        w.scaled_add(-PROBE_LR, &gw);
        b.scaled_add(-PROBE_LR, &gb);
    }
    let scores = xt.dot(&w) + b.view().insert_axis(Axis(0));
    let correct = scores
        .outer_iter()
        .zip(test_y)
        .filter(|(row, &y)| argmax(row.as_slice().expect("row-major")) == y)
        .count();
    Ok(ProbeResult {
        accuracy: correct as f64 / test_y.len() as f64,
        chance: 1.0 / n_classes as f64,
    })
}

fn softmax(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
