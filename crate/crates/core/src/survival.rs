//! Right-censored samples and product-limit estimators.
//!
//! [`kaplan_meier`] is the unconditional product-limit estimator; [`beran`] is
//! its kernel-weighted conditional generalisation,
//!
//! ```text
//! S_h(t|x) = prod_{T_(i) <= t} (1 - delta_(i) B_(i)(x) / sum_{r >= i} B_(r)(x))
//! ```
//!
//! Observations are ordered by time, with uncensored records ahead of censored
//! ones at equal times.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{raw_weights_into, Kernel};

/// One observation: covariate, observed time `min(Y, C)` and `1{Y <= C}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub x: f64,
    pub t: f64,
    pub delta: bool,
}

impl Record {
    pub fn new(x: f64, t: f64, delta: bool) -> Self {
        Record { x, t, delta }
    }
}

/// A validated, nonempty right-censored sample.
///
/// Records keep their input order; a time-sorted view is built once at
/// construction and shared by every estimator call.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredSample {
    records: Vec<Record>,
    sorted_x: Vec<f64>,
    sorted_t: Vec<f64>,
    sorted_delta: Vec<bool>,
    event_times: Vec<f64>,
}

fn time_order(a: &Record, b: &Record) -> Ordering {
    a.t.total_cmp(&b.t).then(b.delta.cmp(&a.delta))
}

impl CensoredSample {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptySample);
        }
        for (index, r) in records.iter().enumerate() {
            if !r.x.is_finite() {
                return Err(Error::InvalidRecord {
                    index,
                    reason: format!("covariate {} is not finite", r.x),
                });
            }
            if !r.t.is_finite() || r.t < 0.0 {
                return Err(Error::InvalidRecord {
                    index,
                    reason: format!("time {} must be finite and nonnegative", r.t),
                });
            }
        }
        let mut sorted = records.clone();
        sorted.sort_by(time_order);
        let mut event_times: Vec<f64> = Vec::new();
        for r in sorted.iter().filter(|r| r.delta) {
            if event_times.last() != Some(&r.t) {
                event_times.push(r.t);
            }
        }
        Ok(CensoredSample {
            sorted_x: sorted.iter().map(|r| r.x).collect(),
            sorted_t: sorted.iter().map(|r| r.t).collect(),
            sorted_delta: sorted.iter().map(|r| r.delta).collect(),
            records,
            event_times,
        })
    }

    pub fn from_columns(xs: &[f64], ts: &[f64], deltas: &[bool]) -> Result<Self> {
        if xs.len() != ts.len() || xs.len() != deltas.len() {
            return Err(Error::invalid("columns", "column lengths differ"));
        }
        Self::new(
            xs.iter()
                .zip(ts)
                .zip(deltas)
                .map(|((&x, &t), &d)| Record::new(x, t, d))
                .collect(),
        )
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn covariates(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.x)
    }

    /// Distinct uncensored times, increasing.
    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    /// Largest uncensored time `T¹_max`, if any observation is uncensored.
    pub fn largest_uncensored(&self) -> Option<f64> {
        self.event_times.last().copied()
    }

    pub fn largest_time(&self) -> f64 {
        *self.sorted_t.last().expect("sample is nonempty")
    }

    pub fn censored_count(&self) -> usize {
        self.records.iter().filter(|r| !r.delta).count()
    }

    pub(crate) fn sorted_x(&self) -> &[f64] {
        &self.sorted_x
    }
}

/// Right-continuous, nonincreasing step function.
///
/// `values[k]` holds on `[jump_times[k], jump_times[k+1])`; `initial_value`
/// holds before the first jump. Curves built from the two-bandwidth latency
/// estimator may leave `[0, 1]`; see [`StepSurvivalCurve::is_proper`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSurvivalCurve {
    jump_times: Vec<f64>,
    values: Vec<f64>,
    initial_value: f64,
}

impl StepSurvivalCurve {
    pub fn constant(value: f64) -> Self {
        StepSurvivalCurve {
            jump_times: Vec::new(),
            values: Vec::new(),
            initial_value: value,
        }
    }

    /// Builds a curve, checking that jump times strictly increase.
    pub fn new(jump_times: Vec<f64>, values: Vec<f64>, initial_value: f64) -> Result<Self> {
        if jump_times.len() != values.len() {
            return Err(Error::invalid("values", "one value per jump time required"));
        }
        if jump_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("jump_times", "must be strictly increasing"));
        }
        Ok(Self::from_parts(jump_times, values, initial_value))
    }

    pub(crate) fn from_parts(jump_times: Vec<f64>, values: Vec<f64>, initial_value: f64) -> Self {
        debug_assert_eq!(jump_times.len(), values.len());
        StepSurvivalCurve {
            jump_times,
            values,
            initial_value,
        }
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    pub fn final_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(self.initial_value)
    }

    /// Value at `t`, right-continuous at jumps.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&s| s <= t);
        if idx == 0 {
            self.initial_value
        } else {
            self.values[idx - 1]
        }
    }

    /// Evaluates at increasing `times` in a single merge pass.
    pub fn eval_sorted(&self, times: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(times.len());
        let mut idx = 0;
        for &t in times {
            while idx < self.jump_times.len() && self.jump_times[idx] <= t {
                idx += 1;
            }
            out.push(if idx == 0 {
                self.initial_value
            } else {
                self.values[idx - 1]
            });
        }
        out
    }

    /// `(time, drop)` for every jump; the drops are the masses of the
    /// distribution whose survival function this curve is.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mut prev = self.initial_value;
        self.jump_times.iter().zip(&self.values).map(move |(&t, &v)| {
            let mass = prev - v;
            prev = v;
            (t, mass)
        })
    }

    /// Nonincreasing with every value in `[0, 1]`.
    pub fn is_proper(&self) -> bool {
        let in_range = |v: f64| (0.0..=1.0).contains(&v);
        in_range(self.initial_value)
            && self.values.iter().all(|&v| in_range(v))
            && std::iter::once(self.initial_value)
                .chain(self.values.iter().copied())
                .collect::<Vec<_>>()
                .windows(2)
                .all(|w| w[1] <= w[0])
    }
}

/// Which indicator plays the role of "event" for [`kaplan_meier`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventSelector {
    /// `delta = 1`: the lifetime distribution.
    Uncensored,
    /// `delta = 0`: the censoring distribution.
    Censored,
}

impl EventSelector {
    fn selects(self, delta: bool) -> bool {
        match self {
            EventSelector::Uncensored => delta,
            EventSelector::Censored => !delta,
        }
    }
}

/// Product-limit estimator ignoring covariates.
///
/// At tied times selected events are counted before the other records.
pub fn kaplan_meier(sample: &CensoredSample, selector: EventSelector) -> StepSurvivalCurve {
    let mut obs: Vec<(f64, bool)> = sample
        .records()
        .iter()
        .map(|r| (r.t, selector.selects(r.delta)))
        .collect();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));

    let n = obs.len();
    let mut jump_times = Vec::new();
    let mut values = Vec::new();
    let mut surv = 1.0;
    let mut i = 0;
    while i < n {
        let t = obs[i].0;
        let at_risk = n - i;
        let mut events = 0usize;
        let mut j = i;
        while j < n && obs[j].0 == t {
            if obs[j].1 {
                events += 1;
            }
            j += 1;
        }
        if events > 0 {
            surv *= 1.0 - events as f64 / at_risk as f64;
            jump_times.push(t);
            values.push(surv);
        }
        i = j;
    }
    StepSurvivalCurve::from_parts(jump_times, values, 1.0)
}

/// Beran values at every distinct uncensored time of `sample`, given the
/// unnormalised kernel weights in time-sorted order.
///
/// Normalising the weights does not change any factor of the product, so the
/// raw kernel values are used directly. A factor whose remaining-weight
/// denominator is zero is taken as 1.
pub(crate) fn beran_values(sample: &CensoredSample, weights: &[f64]) -> Vec<f64> {
    let n = weights.len();
    let mut tail = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        acc += weights[i];
        tail[i] = acc;
    }
    let ts = &sample.sorted_t;
    let ds = &sample.sorted_delta;
    let mut out = Vec::with_capacity(sample.event_times.len());
    let mut surv = 1.0;
    for i in 0..n {
        if !ds[i] {
            continue;
        }
        if tail[i] > 0.0 {
            surv *= 1.0 - weights[i] / tail[i];
        }
        let group_ends = i + 1 == n || ts[i + 1] != ts[i] || !ds[i + 1];
        if group_ends {
            out.push(surv);
        }
    }
    debug_assert_eq!(out.len(), sample.event_times.len());
    out
}

/// Normalised Nadaraya-Watson weights in time-sorted order.
pub(crate) fn sorted_weights(sample: &CensoredSample, x: f64, h: f64, kernel: Kernel) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::NonPositiveBandwidth(h));
    }
    let mut w = Vec::new();
    let total = raw_weights_into(kernel, x, sample.sorted_x(), h, &mut w);
    if total <= 0.0 {
        return Err(Error::EmptyNeighborhood { x, h });
    }
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Conditional survival estimate `S_h(·|x)`.
pub fn beran(sample: &CensoredSample, x: f64, h: f64, kernel: Kernel) -> Result<StepSurvivalCurve> {
    let w = sorted_weights(sample, x, h, kernel)?;
    let values = beran_values(sample, &w);
    Ok(StepSurvivalCurve::from_parts(sample.event_times.clone(), values, 1.0))
}
