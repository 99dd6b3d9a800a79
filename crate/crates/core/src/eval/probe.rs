use nalgebra::{DMatrix, RowDVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub folds: usize,
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { folds: 5, iterations: 300, lr: 0.5, l2: 1e-3, seed: 0 }
    }
}

/// Relative eigenvalue floor below which whitened directions are dropped.
const WHITEN_FLOOR: f64 = 1e-9;

/// Centers and whitens `x` with statistics of `fit`, dropping null directions,
/// so that redundant or rescaled columns do not change the problem.
fn whitener(fit: &DMatrix<f64>) -> (RowDVector<f64>, DMatrix<f64>) {
    let mean = fit.row_mean();
    let mut c = fit.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    let cov = (c.transpose() * &c) / fit.nrows() as f64;
    let e = SymmetricEigen::new(cov);
    let top = e.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let keep: Vec<usize> = (0..e.eigenvalues.len()).filter(|&i| e.eigenvalues[i] > WHITEN_FLOOR * top.max(1e-300)).collect();
    let mut w = DMatrix::zeros(fit.ncols(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        let s = 1.0 / e.eigenvalues[i].sqrt();
        w.set_column(j, &(e.eigenvectors.column(i) * s));
    }
    (mean, w)
}

fn transform(x: &DMatrix<f64>, mean: &RowDVector<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean;
    }
    c * w
}

/// Multinomial logistic regression by full-batch gradient descent with
/// momentum from zero weights; returns `(W, b)`.
fn fit_softmax(x: &DMatrix<f64>, y: &[usize], classes: usize, cfg: &ProbeConfig) -> (DMatrix<f64>, Vec<f64>) {
    let (m, d) = x.shape();
    let mut w = DMatrix::zeros(d, classes);
    let mut b = vec![0.0; classes];
    let mut vw = DMatrix::zeros(d, classes);
    let mut vb = vec![0.0; classes];
    for _ in 0..cfg.iterations {
        let mut p = x * &w;
        for mut row in p.row_iter_mut() {
            let mut mx = f64::NEG_INFINITY;
            for (j, v) in row.iter_mut().enumerate() {
                *v += b[j];
                mx = mx.max(*v);
            }
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            row /= s;
        }
        for (i, &yi) in y.iter().enumerate() {
            p[(i, yi)] -= 1.0;
        }
        p /= m as f64;
        let gw = x.transpose() * &p + &w * cfg.l2;
        let gb: Vec<f64> = (0..classes).map(|j| p.column(j).sum()).collect();
        vw = vw * 0.9 + gw;
        w -= &vw * cfg.lr;
        for j in 0..classes {
            vb[j] = 0.9 * vb[j] + gb[j];
            b[j] -= cfg.lr * vb[j];
        }
    }
    (w, b)
}

fn predict(x: &DMatrix<f64>, w: &DMatrix<f64>, b: &[f64]) -> Vec<usize> {
    let s = x * w;
    s.row_iter()
        .map(|r| {
            (0..r.len()).max_by(|&i, &j| (r[i] + b[i]).total_cmp(&(r[j] + b[j])).then(j.cmp(&i))).unwrap_or(0)
        })
        .collect()
}

/// Cross-validated accuracy of a linear softmax classifier on frozen features.
pub fn linear_probe(features: &Tensor, labels: &[usize], cfg: &ProbeConfig) -> Result<f64> {
    let (m, d) = (features.rows(), features.cols());
    if labels.len() != m {
        return Err(Error::Shape(format!("{} labels for {m} feature rows", labels.len())));
    }
    let classes = labels.iter().max().map_or(0, |&c| c + 1);
    if cfg.folds < 2 || m < cfg.folds * classes.max(1) {
        return Err(Error::invalid(format!("{m} samples are too few for {} folds over {classes} classes", cfg.folds)));
    }
    let x = DMatrix::from_row_iterator(m, d, features.data().iter().map(|&v| v as f64));
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut correct = 0usize;
    for f in 0..cfg.folds {
        let test: Vec<usize> = order.iter().enumerate().filter(|(k, _)| k % cfg.folds == f).map(|(_, &i)| i).collect();
        let train: Vec<usize> = order.iter().enumerate().filter(|(k, _)| k % cfg.folds != f).map(|(_, &i)| i).collect();
        let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        if ytr.iter().all(|&c| c == ytr[0]) {
            return Err(Error::invalid(format!("fold {f} trains on a single class")));
        }
        let xtr = x.select_rows(&train);
        let (mean, w) = whitener(&xtr);
        let (wt, b) = fit_softmax(&transform(&xtr, &mean, &w), &ytr, classes, cfg);
        let pred = predict(&transform(&x.select_rows(&test), &mean, &w), &wt, &b);
        correct += pred.iter().zip(&test).filter(|(p, &i)| **p == labels[i]).count();
    }
    Ok(correct as f64 / m as f64)
}
