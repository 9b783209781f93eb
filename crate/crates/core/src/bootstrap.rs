//! Bootstrap bandwidth selection for the latency estimator.
//!
//! Resampling keeps the covariates fixed, draws censoring times from the
//! Kaplan-Meier estimate of the (covariate-free) censoring distribution, and
//! draws lifetimes from the pilot fit: cured with probability `1 - p_g(X_i)`,
//! otherwise from the jumps of `S0_g(·|X_i)`. For every bandwidth on the grid
//! the squared distance between the resample fit and the pilot fit at `x`,
//! integrated over `[0, upper]`, is averaged over resamples; the selected
//! bandwidth minimises that average.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cure::{incidence_estimate, latency_estimate};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::quadrature::uniform_grid;
use crate::rng::{self, Stream};
use crate::survival::{kaplan_meier, CensoredSample, EventSelector, Record, StepSurvivalCurve};

/// Strictly increasing positive bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BandwidthGrid {
    values: Vec<f64>,
}

impl BandwidthGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("grid", "bandwidth grid is empty"));
        }
        if values.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::invalid("grid", "bandwidths must be positive and finite"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("grid", "bandwidths must be strictly increasing"));
        }
        Ok(BandwidthGrid { values })
    }

    pub fn single(h: f64) -> Result<Self> {
        Self::new(vec![h])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl TryFrom<Vec<f64>> for BandwidthGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BandwidthGrid> for Vec<f64> {
    fn from(g: BandwidthGrid) -> Self {
        g.values
    }
}

/// `count` values from `lo` to `hi` inclusive, equispaced on a log scale.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<BandwidthGrid> {
    if !(lo > 0.0 && lo.is_finite()) {
        return Err(Error::invalid("grid.lo", format!("must be positive, got {lo}")));
    }
    if !(hi > lo && hi.is_finite()) {
        return Err(Error::invalid("grid.hi", format!("must exceed lo = {lo}, got {hi}")));
    }
    if count < 2 {
        return Err(Error::invalid(
            "grid.count",
            format!("need at least 2 points, got {count}"),
        ));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (count - 1) as f64;
    let values = (0..count)
        .map(|k| match k {
            0 => lo,
            k if k + 1 == count => hi,
            k => (a + step * k as f64).exp(),
        })
        .collect();
    BandwidthGrid::new(values)
}

/// Naive pilot bandwidth `c · (max - min) · n^(-1/9)`.
pub fn pilot_bandwidth(xs: &[f64], c: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("pilot_c", format!("must be positive, got {c}")));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateCovariate);
    }
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if !(hi > lo) {
        return Err(Error::DegenerateCovariate);
    }
    Ok(c * (hi - lo) * (xs.len() as f64).powf(-1.0 / 9.0))
}

/// Upper end of the weight function `w = 1[0, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum WeightUpper {
    /// The largest uncensored time of the sample being evaluated.
    LargestUncensored,
    Fixed(f64),
}

/// Trapezoid rule on a uniform time grid over the weight support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationRule {
    pub time_grid_size: usize,
    pub weight_upper: WeightUpper,
}

impl Default for IntegrationRule {
    fn default() -> Self {
        IntegrationRule {
            time_grid_size: 100,
            weight_upper: WeightUpper::LargestUncensored,
        }
    }
}

impl IntegrationRule {
    pub fn validate(&self) -> Result<()> {
        if self.time_grid_size < 2 {
            return Err(Error::invalid("time_grid_size", "need at least 2 points"));
        }
        if let WeightUpper::Fixed(u) = self.weight_upper {
            if !(u > 0.0 && u.is_finite()) {
                return Err(Error::invalid("weight_upper", format!("must be positive, got {u}")));
            }
        }
        Ok(())
    }

    /// Nodes and trapezoid weights for `sample`.
    pub fn nodes(&self, sample: &CensoredSample) -> Result<(Vec<f64>, Vec<f64>)> {
        let upper = match self.weight_upper {
            WeightUpper::LargestUncensored => sample.largest_uncensored().ok_or(Error::NoUncensored)?,
            WeightUpper::Fixed(u) => u,
        };
        Ok(uniform_grid(upper, self.time_grid_size))
    }
}

/// Weighted squared distance `Σ w_k (a_k - b_k)²`.
pub(crate) fn weighted_sq_distance(a: &[f64], b: &[f64], weights: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(weights)
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Number of resamples `B`.
    pub resamples: usize,
    pub grid: BandwidthGrid,
    pub pilot_c: f64,
    pub integration: IntegrationRule,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(resamples: usize, grid: BandwidthGrid, seed: u64) -> Self {
        BootstrapConfig {
            resamples,
            grid,
            pilot_c: 0.75,
            integration: IntegrationRule::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resamples == 0 {
            return Err(Error::invalid("resamples", "need at least one resample"));
        }
        if !(self.pilot_c > 0.0 && self.pilot_c.is_finite()) {
            return Err(Error::invalid("pilot_c", "must be positive"));
        }
        self.integration.validate()
    }
}

/// Inverse-transform sampler over the jumps of a survival step curve.
#[derive(Debug, Clone)]
struct JumpSampler {
    times: Vec<f64>,
    cdf: Vec<f64>,
    /// Where mass not covered by the jumps goes.
    residual_at: f64,
}

impl JumpSampler {
    fn new(curve: &StepSurvivalCurve, residual_at: f64) -> Self {
        JumpSampler {
            times: curve.jump_times().to_vec(),
            cdf: curve.values().iter().map(|&s| 1.0 - s).collect(),
            residual_at,
        }
    }

    fn draw(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c <= u);
        self.times.get(k).copied().unwrap_or(self.residual_at)
    }
}

/// Pilot quantities needed to draw resamples from a fixed original sample.
#[derive(Debug, Clone)]
pub struct ResamplingPlan {
    covariates: Vec<f64>,
    uncured: Vec<f64>,
    lifetimes: Vec<Option<JumpSampler>>,
    censoring: JumpSampler,
}

impl ResamplingPlan {
    pub fn new(sample: &CensoredSample, g: f64, kernel: Kernel) -> Result<Self> {
        let n = sample.len();
        let mut uncured = Vec::with_capacity(n);
        let mut lifetimes = Vec::with_capacity(n);
        for r in sample.records() {
            let wrap = |e: Error| Error::ResampleFit {
                x: r.x,
                source: Box::new(e),
            };
            let incidence = incidence_estimate(sample, r.x, g, kernel).map_err(wrap)?;
            let p = 1.0 - incidence;
            uncured.push(p);
            if p > 0.0 {
                let fit = latency_estimate(sample, r.x, g, kernel).map_err(wrap)?;
                let last = *fit.latency.jump_times().last().expect("fit has events");
                lifetimes.push(Some(JumpSampler::new(&fit.latency, last)));
            } else {
                lifetimes.push(None);
            }
        }
        let g_km = kaplan_meier(sample, EventSelector::Censored);
        Ok(ResamplingPlan {
            covariates: sample.covariates().collect(),
            uncured,
            lifetimes,
            censoring: JumpSampler::new(&g_km, sample.largest_time()),
        })
    }

    /// Latent `(Y*, C*)` for record `i`; `Y* = ∞` when cured. Three uniforms
    /// are consumed per call.
    fn draw_latent(&self, i: usize, rng: &mut Stream) -> (f64, f64) {
        let (u_cure, u_life, u_cens): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let y = match &self.lifetimes[i] {
            Some(s) if u_cure < self.uncured[i] => s.draw(u_life),
            _ => f64::INFINITY,
        };
        (y, self.censoring.draw(u_cens))
    }

    pub fn draw(&self, rng: &mut Stream) -> CensoredSample {
        let records = (0..self.covariates.len())
            .map(|i| {
                let (y, c) = self.draw_latent(i, rng);
                Record::new(self.covariates[i], y.min(c), y <= c)
            })
            .collect();
        CensoredSample::new(records).expect("resampled times are finite")
    }
}

/// One bootstrap resample with pilot bandwidth `g`.
pub fn resample(sample: &CensoredSample, g: f64, kernel: Kernel, rng: &mut Stream) -> Result<CensoredSample> {
    Ok(ResamplingPlan::new(sample, g, kernel)?.draw(rng))
}

/// Criterion values over a bandwidth grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiseCurve {
    pub grid: BandwidthGrid,
    pub values: Vec<f64>,
    pub argmin_index: usize,
    /// Resamples (or trials) that produced a fit, per bandwidth.
    pub used: Vec<usize>,
}

impl MiseCurve {
    pub(crate) fn from_parts(grid: BandwidthGrid, values: Vec<f64>, used: Vec<usize>) -> Self {
        let argmin_index = argmin_first(&values);
        MiseCurve {
            grid,
            values,
            argmin_index,
            used,
        }
    }

    pub fn argmin(&self) -> f64 {
        self.grid.values()[self.argmin_index]
    }

    pub fn min_value(&self) -> f64 {
        self.values[self.argmin_index]
    }

    /// Skipped fits, summed over bandwidths.
    pub fn failures(&self, attempts: usize) -> usize {
        self.used.iter().map(|&u| attempts - u).sum()
    }
}

/// Index of the first minimum.
pub(crate) fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Averages per-attempt results in index order; `None` entries are skipped.
pub(crate) fn reduce_indexed(grid: &BandwidthGrid, per_attempt: &[Vec<Option<f64>>]) -> Result<MiseCurve> {
    let mut values = Vec::with_capacity(grid.len());
    let mut used = Vec::with_capacity(grid.len());
    for (l, &h) in grid.values().iter().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for attempt in per_attempt {
            if let Some(v) = attempt[l] {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::AllFitsFailed { h });
        }
        values.push(sum / count as f64);
        used.push(count);
    }
    Ok(MiseCurve::from_parts(grid.clone(), values, used))
}

/// Bootstrap approximation of the latency MISE at `x` over the grid.
pub fn mise_star(sample: &CensoredSample, x: f64, config: &BootstrapConfig, kernel: Kernel) -> Result<MiseCurve> {
    config.validate()?;
    let xs: Vec<f64> = sample.covariates().collect();
    let g = pilot_bandwidth(&xs, config.pilot_c)?;
    let pilot = latency_estimate(sample, x, g, kernel)?;
    let (times, weights) = config.integration.nodes(sample)?;
    let reference = pilot.latency.eval_sorted(&times);
    let plan = ResamplingPlan::new(sample, g, kernel)?;

    let per_resample: Vec<Vec<Option<f64>>> = (0..config.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(config.seed, b as u64);
            let boot = plan.draw(&mut rng);
            config
                .grid
                .values()
                .iter()
                .map(|&h| {
                    latency_estimate(&boot, x, h, kernel).ok().map(|fit| {
                        let est = fit.latency.eval_sorted(&times);
                        weighted_sq_distance(&est, &reference, &weights)
                    })
                })
                .collect()
        })
        .collect();
    reduce_indexed(&config.grid, &per_resample)
}

/// Bootstrap bandwidth at `x`: the grid minimiser of [`mise_star`].
pub fn select_bandwidth(sample: &CensoredSample, x: f64, config: &BootstrapConfig, kernel: Kernel) -> Result<f64> {
    mise_star(sample, x, config, kernel).map(|c| c.argmin())
}
