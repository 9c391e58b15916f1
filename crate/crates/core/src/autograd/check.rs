//! Finite-difference gradient checking.

use super::{Shape, Tape, Tensor};
use crate::error::{Error, Result};

/// A scalar-valued tensor function of several inputs, rebuilt on a fresh
/// tape for every evaluation.
pub trait TensorFn: Fn(&Tape, &[Tensor]) -> Result<Tensor> {}
impl<F: Fn(&Tape, &[Tensor]) -> Result<Tensor>> TensorFn for F {}

/// Compare the tape's analytic gradient of `f` against central finite
/// differences. Returns the max over all input entries of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn finite_diff_check<F: TensorFn>(
    f: F,
    inputs: &[(Vec<f64>, Shape)],
    eps: f64,
) -> Result<f64> {
    finite_diff_check_skip(f, inputs, eps, &[])
}

/// As [`finite_diff_check`], but skips input entries within `eps` of any of
/// the listed kink points (e.g. 0.0 for relu, where the subgradient
/// convention and the straddling difference quotient legitimately disagree).
pub fn finite_diff_check_skip<F: TensorFn>(
    f: F,
    inputs: &[(Vec<f64>, Shape)],
    eps: f64,
    kinks: &[f64],
) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::contract("finite_diff_check: eps must be > 0"));
    }

    // Analytic pass.
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(v, s)| tape.leaf(v.clone(), s.clone(), true))
        .collect::<Result<_>>()?;
    let out = f(&tape, &leaves)?;
    if out.shape() != vec![1] {
        return Err(Error::contract(format!(
            "finite_diff_check: f must return a scalar, got {:?}",
            out.shape()
        )));
    }
    out.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .enumerate()
        .map(|(i, t)| t.grad().unwrap_or_else(|| vec![0.0; inputs[i].0.len()]))
        .collect();

    let eval = |pt: &[(Vec<f64>, Shape)]| -> Result<f64> {
        let tape = Tape::new();
        let leaves: Vec<Tensor> = pt
            .iter()
            .map(|(v, s)| tape.leaf(v.clone(), s.clone(), false))
            .collect::<Result<_>>()?;
        f(&tape, &leaves)?.item()
    };

    let mut max_err: f64 = 0.0;
    let mut point = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].0.len() {
            let orig = point[i].0[j];
            if kinks.iter().any(|k| (orig - k).abs() <= eps) {
                continue;
            }
            point[i].0[j] = orig + eps;
            let plus = eval(&point)?;
            point[i].0[j] = orig - eps;
            let minus = eval(&point)?;
            point[i].0[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}
