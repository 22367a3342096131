//! L2-penalized logistic regression with an unpenalized intercept, fit by
//! damped Newton iterations from zero.
//!
//! Objective: `||w||^2 / (2C) + sum_i log(1 + exp(-s_i (w.x_i + b)))` with
//! `s_i = 2 y_i - 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    data: Vec<f64>,
    cols: usize,
}

impl Design {
    pub fn new(data: Vec<f64>, cols: usize) -> Result<Self> {
        if cols == 0 || !data.len().is_multiple_of(cols) {
            return Err(Error::Fit(format!(
                "design of {} values is not a multiple of {cols} columns",
                data.len()
            )));
        }
        Ok(Self { data, cols })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.as_ref().len() != cols {
                return Err(Error::Fit("ragged design rows".into()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(data, cols.max(1))
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Stop once the gradient infinity-norm is at or below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub report: OptimizerReport,
}

/// `log(1 + exp(-m))` without overflow.
pub(crate) fn softplus_neg(m: f64) -> f64 {
    (-m).max(0.0) + (-m.abs()).exp().ln_1p()
}

/// Logistic function, saturating at the nearest representable values
/// inside (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn sign(y: u8) -> f64 {
    if y == 1 {
        1.0
    } else {
        -1.0
    }
}

fn check_shapes(weights: &[f64], x: &Design, y: &[u8]) {
    assert_eq!(weights.len(), x.cols(), "weight/design dimension mismatch");
    assert_eq!(y.len(), x.rows(), "label/design length mismatch");
}

/// Penalized loss and its exact gradient. The gradient has one entry per
/// weight followed by the intercept entry.
pub fn logistic_loss_and_gradient(
    weights: &[f64],
    intercept: f64,
    x: &Design,
    y: &[u8],
    c: f64,
) -> (f64, Vec<f64>) {
    check_shapes(weights, x, y);
    let d = x.cols();
    let mut grad = vec![0.0; d + 1];
    let mut loss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let row = x.row(i);
        let s = sign(yi);
        let z = dot(weights, row) + intercept;
        let m = s * z;
        loss += softplus_neg(m);
        // d/dz log(1 + exp(-s z)) = -s * sigmoid(-m)
        let g = -s * sigmoid_unclamped(-m);
        for (gj, xj) in grad.iter_mut().zip(row) {
            *gj += g * xj;
        }
        grad[d] += g;
    }
    let penalty = weights.iter().map(|w| w * w).sum::<f64>() / (2.0 * c);
    for (gj, wj) in grad.iter_mut().zip(weights) {
        *gj += wj / c;
    }
    (loss + penalty, grad)
}

/// Penalty term on its own, `||w||^2 / (2C)`.
pub fn l2_penalty(weights: &[f64], c: f64) -> f64 {
    weights.iter().map(|w| w * w).sum::<f64>() / (2.0 * c)
}

fn sigmoid_unclamped(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn loss_only(weights: &[f64], intercept: f64, x: &Design, y: &[u8], c: f64) -> f64 {
    let data: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &yi)| softplus_neg(sign(yi) * (dot(weights, x.row(i)) + intercept)))
        .sum();
    data + l2_penalty(weights, c)
}

fn hessian(weights: &[f64], intercept: f64, x: &Design, c: f64) -> DMatrix<f64> {
    let d = x.cols();
    let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut aug = vec![1.0; d + 1];
    for i in 0..x.rows() {
        let row = x.row(i);
        aug[..d].copy_from_slice(row);
        let p = sigmoid_unclamped(dot(weights, row) + intercept);
        let w = p * (1.0 - p);
        if w == 0.0 {
            continue;
        }
        for a in 0..=d {
            let wa = w * aug[a];
            for b in a..=d {
                h[(a, b)] += wa * aug[b];
            }
        }
    }
    for a in 0..=d {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    for j in 0..d {
        h[(j, j)] += 1.0 / c;
    }
    h
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes the penalized logistic loss.
pub fn fit_logistic(x: &Design, y: &[u8], c: f64, opts: &FitOptions) -> Result<LogisticFit> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Fit(format!("inverse regularization strength {c} must be positive")));
    }
    if y.len() != x.rows() || y.is_empty() {
        return Err(Error::Fit(format!(
            "{} labels for {} rows",
            y.len(),
            x.rows()
        )));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::Fit("training labels contain a single class".into()));
    }

    let d = x.cols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let (mut loss, mut grad) = logistic_loss_and_gradient(&w, b, x, y, c);
    let mut iterations = 0;
    loop {
        let gnorm = inf_norm(&grad);
        if gnorm <= opts.tol {
            return Ok(LogisticFit {
                weights: w,
                intercept: b,
                report: OptimizerReport {
                    iterations,
                    final_gradient_norm: gnorm,
                },
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence(OptimizerReport {
                iterations,
                final_gradient_norm: gnorm,
            }));
        }
        iterations += 1;

        let h = hessian(&w, b, x, c);
        let g = DVector::from_column_slice(&grad);
        let step = match h.clone().cholesky() {
            Some(chol) => chol.solve(&(-&g)),
            None => {
                // only reachable through severe saturation; damp and retry
                let ridge = DMatrix::<f64>::identity(d + 1, d + 1) * 1e-8;
                (h + ridge)
                    .cholesky()
                    .map(|chol| chol.solve(&(-&g)))
                    .unwrap_or_else(|| -g.clone())
            }
        };
        let slope = g.dot(&step);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let w_new: Vec<f64> = w.iter().zip(step.iter()).map(|(wi, si)| wi + t * si).collect();
            let b_new = b + t * step[d];
            let loss_new = loss_only(&w_new, b_new, x, y, c);
            // slack absorbs rounding once the loss has converged
            let slack = 1e-13 * (1.0 + loss.abs());
            if loss_new <= loss + 1e-4 * t * slope + slack {
                w = w_new;
                b = b_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence(OptimizerReport {
                iterations,
                final_gradient_norm: gnorm,
            }));
        }
        (loss, grad) = logistic_loss_and_gradient(&w, b, x, y, c);
    }
}
