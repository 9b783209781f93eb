//! Incidence and latency estimators for the mixture cure model
//! `S(t|x) = 1 - p(x) + p(x) S0(t|x)`.
//!
//! The incidence `1 - p(x)` is estimated by the Beran curve evaluated at the
//! largest uncensored time of the whole sample. The latency is then
//!
//! ```text
//! S0_h(t|x) = (S_h(t|x) - (1 - p_h(x))) / p_h(x)
//! ```
//!
//! With one bandwidth the result is always a proper survival function that
//! reaches zero at `T¹_max`. With separate bandwidths for the numerator curve
//! (`h1`) and the incidence (`h2`) it need not be; clamping is opt-in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::survival::{beran_values, sorted_weights, CensoredSample, StepSurvivalCurve};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Bandwidth {
    Single { h: f64 },
    Pair { h1: f64, h2: f64 },
}

/// A fitted cure model at one covariate value.
#[derive(Debug, Clone, PartialEq)]
pub struct CureFit {
    pub x: f64,
    pub bandwidth: Bandwidth,
    /// Estimated cure probability `1 - p(x)`.
    pub incidence: f64,
    pub latency: StepSurvivalCurve,
    /// Largest uncensored time in the sample.
    pub t_max1: f64,
}

impl CureFit {
    /// Estimated probability of not being cured, `p(x)`.
    pub fn uncured(&self) -> f64 {
        1.0 - self.incidence
    }
}

/// Beran values at the sample's event times plus the incidence they imply.
fn beran_with_incidence(sample: &CensoredSample, x: f64, h: f64, kernel: Kernel) -> Result<(Vec<f64>, f64)> {
    if sample.largest_uncensored().is_none() {
        return Err(Error::NoUncensored);
    }
    let w = sorted_weights(sample, x, h, kernel)?;
    let values = beran_values(sample, &w);
    let incidence = *values.last().expect("at least one event time");
    Ok((values, incidence))
}

/// Estimated cure probability `1 - p_h(x) = S_h(T¹_max | x)`.
pub fn incidence_estimate(sample: &CensoredSample, x: f64, h: f64, kernel: Kernel) -> Result<f64> {
    beran_with_incidence(sample, x, h, kernel).map(|(_, inc)| inc)
}

fn latency_from(sample: &CensoredSample, x: f64, values: &[f64], incidence: f64) -> Result<StepSurvivalCurve> {
    let uncured = 1.0 - incidence;
    if uncured <= 0.0 {
        return Err(Error::AllCured { x });
    }
    let latency: Vec<f64> = values.iter().map(|&s| (s - incidence) / uncured).collect();
    Ok(StepSurvivalCurve::from_parts(
        sample.event_times().to_vec(),
        latency,
        1.0,
    ))
}

/// One-bandwidth latency estimate.
pub fn latency_estimate(sample: &CensoredSample, x: f64, h: f64, kernel: Kernel) -> Result<CureFit> {
    let (values, incidence) = beran_with_incidence(sample, x, h, kernel)?;
    let latency = latency_from(sample, x, &values, incidence)?;
    Ok(CureFit {
        x,
        bandwidth: Bandwidth::Single { h },
        incidence,
        latency,
        t_max1: sample.largest_uncensored().expect("checked above"),
    })
}

/// Two-bandwidth latency estimate: `h1` smooths the conditional survival
/// curve, `h2` the incidence.
///
/// Raw values can fall outside `[0, 1]` and need not be monotone. With
/// `clamp` set they are clipped to `[0, 1]` and then replaced by their running
/// minimum; `incidence` is reported unclamped either way.
pub fn latency_estimate_two_bw(
    sample: &CensoredSample,
    x: f64,
    h1: f64,
    h2: f64,
    kernel: Kernel,
    clamp: bool,
) -> Result<CureFit> {
    let (values, _) = beran_with_incidence(sample, x, h1, kernel)?;
    let incidence = if h2 == h1 {
        *values.last().expect("at least one event time")
    } else {
        incidence_estimate(sample, x, h2, kernel)?
    };
    let mut latency = latency_from(sample, x, &values, incidence)?;
    if clamp {
        latency = clamp_monotone(&latency);
    }
    Ok(CureFit {
        x,
        bandwidth: Bandwidth::Pair { h1, h2 },
        incidence,
        latency,
        t_max1: sample.largest_uncensored().expect("checked above"),
    })
}

fn clamp_monotone(curve: &StepSurvivalCurve) -> StepSurvivalCurve {
    let mut running = curve.initial_value().clamp(0.0, 1.0);
    let initial = running;
    let values = curve
        .values()
        .iter()
        .map(|&v| {
            running = running.min(v.clamp(0.0, 1.0));
            running
        })
        .collect();
    StepSurvivalCurve::from_parts(curve.jump_times().to_vec(), values, initial)
}
