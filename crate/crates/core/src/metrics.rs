//! Evaluation metrics: MAE, cumulative score and epsilon-error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Thresholds of the default CS curve: integers 0 through 20.
pub fn default_thresholds() -> Vec<f64> {
    (0..=20).map(f64::from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsPoint {
    pub theta: f64,
    pub cs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub mae: f64,
    pub cs_curve: Vec<CsPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_error: Option<f64>,
}

fn check_pair<T>(predictions: &[T], labels: &[T]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::ParameterDomain("metrics need at least one sample".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape("predictions vs labels", labels.len(), predictions.len()));
    }
    Ok(())
}

pub fn mae<T: Scalar>(predictions: &[T], labels: &[T]) -> Result<T> {
    check_pair(predictions, labels)?;
    let total: T = predictions.iter().zip(labels).map(|(&p, &y)| (p - y).abs()).sum();
    Ok(total / T::from_count(labels.len()))
}

/// Fraction of samples whose absolute error is at most `theta`.
pub fn cs<T: Scalar>(predictions: &[T], labels: &[T], theta: T) -> Result<T> {
    check_pair(predictions, labels)?;
    if !(theta >= T::zero()) {
        return Err(Error::ParameterDomain(format!("theta must be non-negative, got {theta}")));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p - y).abs() <= theta)
        .count();
    Ok(T::from_count(hits) / T::from_count(labels.len()))
}

pub fn cs_curve<T: Scalar>(predictions: &[T], labels: &[T], thetas: &[f64]) -> Result<Vec<CsPoint>> {
    thetas
        .iter()
        .map(|&theta| {
            Ok(CsPoint {
                theta,
                cs: cs(predictions, labels, T::lit(theta))?.as_f64(),
            })
        })
        .collect()
}

/// `1 - mean_i exp(-(p_i - y_i)^2 / (2 sigma_i^2))`.
pub fn eps_error<T: Scalar>(predictions: &[T], labels: &[T], stddevs: &[T]) -> Result<T> {
    check_pair(predictions, labels)?;
    if stddevs.len() != labels.len() {
        return Err(Error::Schema(format!(
            "{} stddevs for {} samples",
            stddevs.len(),
            labels.len()
        )));
    }
    if let Some(i) = stddevs.iter().position(|&s| !(s > T::zero())) {
        return Err(Error::Schema(format!("stddev of sample {i} is not positive")));
    }
    let two = T::lit(2.0);
    let score: T = predictions
        .iter()
        .zip(labels)
        .zip(stddevs)
        .map(|((&p, &y), &s)| (-(p - y) * (p - y) / (two * s * s)).exp())
        .sum();
    Ok(T::one() - score / T::from_count(labels.len()))
}

/// MAE, the CS curve at `thetas`, and the epsilon-error when `stddevs` is
/// given.
pub fn evaluate<T: Scalar>(
    predictions: &[T],
    labels: &[T],
    stddevs: Option<&[T]>,
    thetas: &[f64],
) -> Result<EvalReport> {
    Ok(EvalReport {
        samples: labels.len(),
        mae: mae(predictions, labels)?.as_f64(),
        cs_curve: cs_curve(predictions, labels, thetas)?,
        eps_error: stddevs
            .map(|s| eps_error(predictions, labels, s))
            .transpose()?
            .map(Scalar::as_f64),
    })
}

/// The CS curve as `theta,cs` CSV text.
pub fn cs_curve_csv(curve: &[CsPoint]) -> String {
    let mut out = String::from("theta,cs\n");
    for p in curve {
        out.push_str(&format!("{},{}\n", p.theta, p.cs));
    }
    out
}
