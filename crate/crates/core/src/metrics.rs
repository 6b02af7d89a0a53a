//! MSLE, MALE and Hit@40.

use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

pub const HIT_THRESHOLD: f64 = 0.4;

fn check(pred: &[f64], truth: &[f64], non_negative: bool) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch { what: "predictions vs targets", left: pred.len(), right: truth.len() });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput { what: "metric batch" });
    }
    if non_negative {
        for (what, v) in [("prediction", pred), ("target", truth)] {
            if let Some((i, &x)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
                return Err(Error::NegativeValue { what, index: i, value: x });
            }
        }
    }
    Ok(())
}

fn log_errors<'a>(pred: &'a [f64], truth: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    pred.iter().zip(truth).map(|(&p, &y)| math::ln_1p(p) - math::ln_1p(y))
}

pub fn msle(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, true)?;
    Ok(log_errors(pred, truth).map(|d| d * d).sum::<f64>() / pred.len() as f64)
}

pub fn male(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, true)?;
    Ok(log_errors(pred, truth).map(math::abs).sum::<f64>() / pred.len() as f64)
}

pub fn is_hit(pred: f64, truth: f64) -> bool {
    math::abs(pred - truth) / truth.max(1.0) < HIT_THRESHOLD
}

pub fn hit_at_40(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, false)?;
    Ok(pred.iter().zip(truth).filter(|(&p, &y)| is_hit(p, y)).count() as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub msle: f64,
    pub male: f64,
    pub hit40: f64,
    pub n_tasks: usize,
}

impl MetricsReport {
    pub fn compute(split: &str, pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(MetricsReport {
            split: split.into(),
            msle: msle(pred, truth)?,
            male: male(pred, truth)?,
            hit40: hit_at_40(pred, truth)?,
            n_tasks: pred.len(),
        })
    }
}
