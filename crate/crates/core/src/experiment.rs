//! Monte Carlo MISE experiments against a known model.
//!
//! Every trial draws one sample from its own seed; all bandwidths (and all
//! covariate values) are evaluated on that same sample, so curves differ only
//! through the smoothing parameters. Integrated squared errors use the same
//! integration rule as the bootstrap criterion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{
    argmin_first, mise_star, reduce_indexed, weighted_sq_distance, BandwidthGrid, BootstrapConfig, IntegrationRule,
    MiseCurve,
};
use crate::cure::{latency_estimate, latency_estimate_two_bw};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::models::{self, ModelSpec};
use crate::rng;
use crate::survival::CensoredSample;

const BOOTSTRAP_TAG: u64 = 0x626f_6f74;

/// Latency curve estimator evaluated on a time grid. The Beran-based
/// estimator is the default; other implementations are test hooks.
pub trait LatencyEstimator: Sync {
    fn latency_on(&self, sample: &CensoredSample, x: f64, h: f64, times: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KernelLatency {
    pub kernel: Kernel,
}

impl LatencyEstimator for KernelLatency {
    fn latency_on(&self, sample: &CensoredSample, x: f64, h: f64, times: &[f64]) -> Result<Vec<f64>> {
        Ok(latency_estimate(sample, x, h, self.kernel)?.latency.eval_sorted(times))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiseConfig {
    pub integration: IntegrationRule,
    pub kernel: Kernel,
    /// Master seed; trial `j` uses `models::trial_seed(seed, j)`.
    pub seed: u64,
}

impl MiseConfig {
    pub fn new(seed: u64) -> Self {
        MiseConfig {
            integration: IntegrationRule::default(),
            kernel: Kernel::Epanechnikov,
            seed,
        }
    }
}

fn check_trials(n: usize, m: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n", "sample size must be at least 1"));
    }
    if m == 0 {
        return Err(Error::invalid("m", "need at least one trial"));
    }
    Ok(())
}

/// Per-trial ISE of `estimator` at each bandwidth; `None` marks a failed fit.
fn trial_ise<E: LatencyEstimator>(
    spec: &ModelSpec,
    sample: &CensoredSample,
    x: f64,
    grid: &BandwidthGrid,
    config: &MiseConfig,
    estimator: &E,
) -> Vec<Option<f64>> {
    let Ok((times, weights)) = config.integration.nodes(sample) else {
        return vec![None; grid.len()];
    };
    let truth: Vec<f64> = times.iter().map(|&t| spec.true_latency(t, x)).collect();
    grid.values()
        .iter()
        .map(|&h| {
            estimator
                .latency_on(sample, x, h, &times)
                .ok()
                .map(|est| weighted_sq_distance(&est, &truth, &weights))
        })
        .collect()
}

fn trial_samples(spec: &ModelSpec, n: usize, m: usize, seed: u64) -> Result<Vec<CensoredSample>> {
    (0..m)
        .into_par_iter()
        .map(|j| models::trial_sample(spec, n, models::trial_seed(seed, j)))
        .collect()
}

/// Monte Carlo MISE of the latency estimator at `x` over `grid`.
pub fn true_mise(
    spec: &ModelSpec,
    n: usize,
    m: usize,
    x: f64,
    grid: &BandwidthGrid,
    config: &MiseConfig,
) -> Result<MiseCurve> {
    true_mise_with(spec, n, m, x, grid, config, &KernelLatency { kernel: config.kernel })
}

/// [`true_mise`] with a caller-supplied estimator.
pub fn true_mise_with<E: LatencyEstimator>(
    spec: &ModelSpec,
    n: usize,
    m: usize,
    x: f64,
    grid: &BandwidthGrid,
    config: &MiseConfig,
    estimator: &E,
) -> Result<MiseCurve> {
    check_trials(n, m)?;
    config.integration.validate()?;
    let per_trial: Vec<Vec<Option<f64>>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let sample = models::trial_sample(spec, n, models::trial_seed(config.seed, j))?;
            Ok(trial_ise(spec, &sample, x, grid, config, estimator))
        })
        .collect::<Result<_>>()?;
    reduce_indexed(grid, &per_trial)
}

/// MISE values over covariates and one or two bandwidth grids, stored
/// row-major as `[x][h][h2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiseSurface {
    pub model_id: String,
    pub n: usize,
    pub trials: usize,
    pub x_grid: Vec<f64>,
    pub h_grid: BandwidthGrid,
    pub h2_grid: Option<BandwidthGrid>,
    pub values: Vec<f64>,
    /// Trials contributing to each value.
    pub used: Vec<usize>,
}

/// One cell of a [`MiseSurface`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceCell {
    pub x: f64,
    pub h: f64,
    pub h2: Option<f64>,
    pub mise: f64,
    pub used: usize,
}

impl MiseSurface {
    fn inner_len(&self) -> usize {
        self.h2_grid.as_ref().map_or(1, |g| g.len())
    }

    fn offset(&self, ix: usize, i1: usize, i2: usize) -> usize {
        (ix * self.h_grid.len() + i1) * self.inner_len() + i2
    }

    pub fn value(&self, ix: usize, i1: usize, i2: usize) -> f64 {
        self.values[self.offset(ix, i1, i2)]
    }

    pub fn cells(&self) -> impl Iterator<Item = SurfaceCell> + '_ {
        let inner = self.inner_len();
        let hs = self.h_grid.len();
        self.values
            .iter()
            .zip(&self.used)
            .enumerate()
            .map(move |(k, (&mise, &used))| {
                let i2 = k % inner;
                let i1 = (k / inner) % hs;
                let ix = k / (inner * hs);
                SurfaceCell {
                    x: self.x_grid[ix],
                    h: self.h_grid.values()[i1],
                    h2: self.h2_grid.as_ref().map(|g| g.values()[i2]),
                    mise,
                    used,
                }
            })
    }

    /// `(i1, i2)` of the first minimum at covariate index `ix`.
    pub fn argmin(&self, ix: usize) -> (usize, usize) {
        let inner = self.inner_len();
        let start = self.offset(ix, 0, 0);
        let k = argmin_first(&self.values[start..start + self.h_grid.len() * inner]);
        (k / inner, k % inner)
    }

    /// One-bandwidth curve at covariate index `ix`.
    pub fn curve(&self, ix: usize) -> Option<MiseCurve> {
        if self.h2_grid.is_some() {
            return None;
        }
        let start = self.offset(ix, 0, 0);
        let end = start + self.h_grid.len();
        Some(MiseCurve::from_parts(
            self.h_grid.clone(),
            self.values[start..end].to_vec(),
            self.used[start..end].to_vec(),
        ))
    }
}

/// [`true_mise`] at several covariate values, sharing trials across them.
pub fn true_mise_surface(
    spec: &ModelSpec,
    n: usize,
    m: usize,
    x_grid: &[f64],
    grid: &BandwidthGrid,
    config: &MiseConfig,
) -> Result<MiseSurface> {
    check_trials(n, m)?;
    config.integration.validate()?;
    if x_grid.is_empty() {
        return Err(Error::invalid("x", "need at least one covariate value"));
    }
    let estimator = KernelLatency { kernel: config.kernel };
    let samples = trial_samples(spec, n, m, config.seed)?;
    let mut values = Vec::with_capacity(x_grid.len() * grid.len());
    let mut used = Vec::with_capacity(values.capacity());
    for &x in x_grid {
        let per_trial: Vec<Vec<Option<f64>>> = samples
            .par_iter()
            .map(|s| trial_ise(spec, s, x, grid, config, &estimator))
            .collect();
        let curve = reduce_indexed(grid, &per_trial)?;
        values.extend(curve.values);
        used.extend(curve.used);
    }
    Ok(MiseSurface {
        model_id: spec.id.clone(),
        n,
        trials: m,
        x_grid: x_grid.to_vec(),
        h_grid: grid.clone(),
        h2_grid: None,
        values,
        used,
    })
}

/// Monte Carlo MISE of the two-bandwidth latency estimator (unclamped) over
/// the `(h1, h2)` lattice at `x`.
pub fn true_mise_two_bw(
    spec: &ModelSpec,
    n: usize,
    m: usize,
    x: f64,
    grid1: &BandwidthGrid,
    grid2: &BandwidthGrid,
    config: &MiseConfig,
) -> Result<MiseSurface> {
    check_trials(n, m)?;
    config.integration.validate()?;
    let cells = grid1.len() * grid2.len();
    let per_trial: Vec<Vec<Option<f64>>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let sample = models::trial_sample(spec, n, models::trial_seed(config.seed, j))?;
            let Ok((times, weights)) = config.integration.nodes(&sample) else {
                return Ok(vec![None; cells]);
            };
            let truth: Vec<f64> = times.iter().map(|&t| spec.true_latency(t, x)).collect();
            let mut out = Vec::with_capacity(cells);
            for &h1 in grid1.values() {
                for &h2 in grid2.values() {
                    out.push(
                        latency_estimate_two_bw(&sample, x, h1, h2, config.kernel, false)
                            .ok()
                            .map(|fit| weighted_sq_distance(&fit.latency.eval_sorted(&times), &truth, &weights)),
                    );
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut values = Vec::with_capacity(cells);
    let mut used = Vec::with_capacity(cells);
    for k in 0..cells {
        let (mut sum, mut count) = (0.0, 0usize);
        for trial in &per_trial {
            if let Some(v) = trial[k] {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::AllFitsFailed {
                h: grid1.values()[k / grid2.len()],
            });
        }
        values.push(sum / count as f64);
        used.push(count);
    }
    Ok(MiseSurface {
        model_id: spec.id.clone(),
        n,
        trials: m,
        x_grid: vec![x],
        h_grid: grid1.clone(),
        h2_grid: Some(grid2.clone()),
        values,
        used,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const RATIO_QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

/// Bootstrap selections at one covariate value compared with the grid
/// optimum of the Monte Carlo MISE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub x: f64,
    pub mise: MiseCurve,
    /// Bootstrap bandwidth per trial; `None` when selection failed.
    pub selected: Vec<Option<f64>>,
    /// Selection counts per grid bandwidth.
    pub histogram: Vec<usize>,
    /// `MISE(h*) / min MISE` per successful trial, in trial order.
    pub ratios: Vec<f64>,
    /// Quantiles of `ratios` at [`RATIO_QUANTILES`].
    pub ratio_quantiles: Vec<f64>,
    pub failures: usize,
}

impl SelectionSummary {
    pub fn h_opt(&self) -> f64 {
        self.mise.argmin()
    }

    pub fn median_ratio(&self) -> f64 {
        self.ratio_quantiles[2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapComparison {
    pub model_id: String,
    pub n: usize,
    pub trials: usize,
    pub summaries: Vec<SelectionSummary>,
}

/// For each trial and covariate value, selects a bandwidth by bootstrap and
/// compares its true MISE with the best grid value. `boot` supplies the
/// resample count, grid and pilot settings; its seed is replaced per trial by
/// one derived from `config.seed`.
pub fn bootstrap_vs_optimal(
    spec: &ModelSpec,
    n: usize,
    m: usize,
    x_grid: &[f64],
    boot: &BootstrapConfig,
    config: &MiseConfig,
) -> Result<BootstrapComparison> {
    boot.validate()?;
    let grid = &boot.grid;
    let surface = true_mise_surface(spec, n, m, x_grid, grid, config)?;
    let samples = trial_samples(spec, n, m, config.seed)?;

    let mut summaries = Vec::with_capacity(x_grid.len());
    for (ix, &x) in x_grid.iter().enumerate() {
        let curve = surface.curve(ix).expect("one-bandwidth surface");
        let selected: Vec<Option<usize>> = samples
            .par_iter()
            .enumerate()
            .map(|(j, sample)| {
                let cfg = BootstrapConfig {
                    seed: rng::derive_seed(config.seed, BOOTSTRAP_TAG, j as u64),
                    ..boot.clone()
                };
                mise_star(sample, x, &cfg, config.kernel).ok().map(|c| c.argmin_index)
            })
            .collect();

        let mut histogram = vec![0usize; grid.len()];
        let best = curve.min_value();
        let mut ratios = Vec::with_capacity(m);
        for &k in selected.iter().flatten() {
            histogram[k] += 1;
            ratios.push(curve.values[k] / best);
        }
        let failures = m - ratios.len();
        if ratios.is_empty() {
            return Err(Error::AllFitsFailed { h: grid.values()[0] });
        }
        let mut sorted = ratios.clone();
        sorted.sort_by(f64::total_cmp);
        summaries.push(SelectionSummary {
            x,
            selected: selected.iter().map(|k| k.map(|k| grid.values()[k])).collect(),
            histogram,
            ratio_quantiles: RATIO_QUANTILES.iter().map(|&q| quantile(&sorted, q)).collect(),
            ratios,
            failures,
            mise: curve,
        });
    }
    Ok(BootstrapComparison {
        model_id: spec.id.clone(),
        n,
        trials: m,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::log_grid;

    struct Truth(ModelSpec);

    impl LatencyEstimator for Truth {
        fn latency_on(&self, _: &CensoredSample, x: f64, _: f64, times: &[f64]) -> Result<Vec<f64>> {
            Ok(times.iter().map(|&t| self.0.true_latency(t, x)).collect())
        }
    }

    #[test]
    fn exact_estimator_has_zero_mise() {
        let spec = models::model1();
        let grid = log_grid(5.0, 50.0, 4).unwrap();
        let c = true_mise_with(&spec, 50, 5, 5.0, &grid, &MiseConfig::new(1), &Truth(spec.clone())).unwrap();
        assert_eq!(c.values, vec![0.0; 4]);
        assert_eq!(c.used, vec![5; 4]);
    }

    #[test]
    fn single_trial_is_reproducible_ise() {
        let spec = models::model1();
        let grid = BandwidthGrid::single(10.0).unwrap();
        let cfg = MiseConfig::new(3);
        let a = true_mise(&spec, 60, 1, 5.0, &grid, &cfg).unwrap();
        let b = true_mise(&spec, 60, 1, 5.0, &grid, &cfg).unwrap();
        assert_eq!(a, b);

        let sample = models::trial_sample(&spec, 60, models::trial_seed(3, 0)).unwrap();
        let (times, w) = cfg.integration.nodes(&sample).unwrap();
        let est = latency_estimate(&sample, 5.0, 10.0, cfg.kernel)
            .unwrap()
            .latency
            .eval_sorted(&times);
        let direct: f64 = times
            .iter()
            .zip(&est)
            .zip(&w)
            .map(|((&t, &e), &w)| w * (e - spec.true_latency(t, 5.0)).powi(2))
            .sum();
        assert_eq!(a.values[0], direct);
    }

    #[test]
    fn two_bw_diagonal_equals_one_bw() {
        let spec = models::model1();
        let grid = log_grid(5.0, 60.0, 5).unwrap();
        let cfg = MiseConfig::new(11);
        let one = true_mise(&spec, 50, 8, 5.0, &grid, &cfg).unwrap();
        let two = true_mise_two_bw(&spec, 50, 8, 5.0, &grid, &grid, &cfg).unwrap();
        for k in 0..grid.len() {
            assert_eq!(two.value(0, k, k), one.values[k]);
        }
        assert!(two.values.iter().all(|&v| v >= 0.0));
        assert!(two.used.iter().all(|&u| u <= 8));
    }

    #[test]
    fn surface_rows_match_single_curves() {
        let spec = models::model2();
        let grid = log_grid(5.0, 40.0, 3).unwrap();
        let cfg = MiseConfig::new(2);
        let s = true_mise_surface(&spec, 40, 4, &[0.0, 5.0], &grid, &cfg).unwrap();
        for (ix, &x) in [0.0, 5.0].iter().enumerate() {
            assert_eq!(s.curve(ix).unwrap(), true_mise(&spec, 40, 4, x, &grid, &cfg).unwrap());
        }
        let cells: Vec<_> = s.cells().collect();
        assert_eq!(cells.len(), 6);
        assert_eq!((cells[4].x, cells[4].h), (5.0, grid.values()[1]));
    }

    #[test]
    fn one_point_bootstrap_grid_gives_unit_ratio() {
        let spec = models::model1();
        let boot = BootstrapConfig::new(3, BandwidthGrid::single(12.0).unwrap(), 0);
        let r = bootstrap_vs_optimal(&spec, 50, 4, &[5.0], &boot, &MiseConfig::new(5)).unwrap();
        let s = &r.summaries[0];
        assert!(s.selected.iter().all(|&h| h == Some(12.0)));
        assert!(s.ratios.iter().all(|&q| q == 1.0));
        assert_eq!(s.histogram, vec![4]);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
    }

    #[test]
    fn rejects_zero_trials() {
        let grid = BandwidthGrid::single(1.0).unwrap();
        assert!(true_mise(&models::model1(), 10, 0, 0.0, &grid, &MiseConfig::new(0)).is_err());
    }
}
