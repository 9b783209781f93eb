//! Data-generating processes for mixture cure models.
//!
//! A [`ModelSpec`] fixes the probability of not being cured `p(x)`, the
//! latency `S0(t|x)`, the censoring distribution (independent of the
//! covariate) and the covariate distribution. [`model1`] and [`model2`] are
//! the two benchmark designs used by the experiments: covariate `U(-20, 20)`
//! and exponential censoring with mean `10/3`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::survival::{CensoredSample, Record};

/// Probability of not being cured, `p(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Incidence {
    /// `p(x) = logistic(c0 + c1 x + c2 x² + ...)`.
    Logistic {
        coefficients: Vec<f64>,
    },
    Constant {
        p: f64,
    },
}

impl Incidence {
    pub fn uncured(&self, x: f64) -> f64 {
        match self {
            Incidence::Logistic { coefficients } => {
                let eta = coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c);
                logistic(eta)
            }
            Incidence::Constant { p } => *p,
        }
    }
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Latency families, `S0(t|x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Latency {
    /// Exponential with rate `exp((x + offset) / scale)`, truncated at `tau0`.
    TruncatedExponential { tau0: f64, offset: f64, scale: f64 },
    /// `½ (exp(-α(x) t⁵) + exp(-fast_rate t⁵))` with
    /// `α(x) = alpha_factor · exp((x + offset) / scale)`.
    FifthPowerMixture {
        alpha_factor: f64,
        offset: f64,
        scale: f64,
        fast_rate: f64,
    },
    /// Exponential with a fixed rate, no covariate effect.
    Exponential { rate: f64 },
    /// All susceptible subjects fail exactly at `at`.
    Step { at: f64 },
}

/// Below this survival level a latency's density is treated as zero.
const SUPPORT_TAIL: f64 = 1e-14;

impl Latency {
    fn te_rate(offset: f64, scale: f64, x: f64) -> f64 {
        ((x + offset) / scale).exp()
    }

    pub fn survival(&self, t: f64, x: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match *self {
            Latency::TruncatedExponential { tau0, offset, scale } => {
                if t >= tau0 {
                    return 0.0;
                }
                let l = Self::te_rate(offset, scale, x);
                let tail = (-l * tau0).exp();
                ((-l * t).exp() - tail) / (1.0 - tail)
            }
            Latency::FifthPowerMixture {
                alpha_factor,
                offset,
                scale,
                fast_rate,
            } => {
                let a = alpha_factor * Self::te_rate(offset, scale, x);
                let u = t.powi(5);
                0.5 * ((-a * u).exp() + (-fast_rate * u).exp())
            }
            Latency::Exponential { rate } => (-rate * t).exp(),
            Latency::Step { at } => {
                if t < at {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `-d/dt S0(t|x)`. Zero for the step family.
    pub fn density(&self, t: f64, x: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            Latency::TruncatedExponential { tau0, offset, scale } => {
                if t > tau0 {
                    return 0.0;
                }
                let l = Self::te_rate(offset, scale, x);
                l * (-l * t).exp() / (1.0 - (-l * tau0).exp())
            }
            Latency::FifthPowerMixture {
                alpha_factor,
                offset,
                scale,
                fast_rate,
            } => {
                let a = alpha_factor * Self::te_rate(offset, scale, x);
                let u = t.powi(5);
                let t4 = t.powi(4);
                0.5 * (5.0 * a * t4 * (-a * u).exp() + 5.0 * fast_rate * t4 * (-fast_rate * u).exp())
            }
            Latency::Exponential { rate } => rate * (-rate * t).exp(),
            Latency::Step { .. } => 0.0,
        }
    }

    /// The time at which `S0(·|x)` equals `level ∈ (0, 1]`.
    pub fn inverse(&self, level: f64, x: f64) -> f64 {
        if level >= 1.0 {
            return 0.0;
        }
        match *self {
            Latency::TruncatedExponential { tau0, offset, scale } => {
                let l = Self::te_rate(offset, scale, x);
                let tail = (-l * tau0).exp();
                let t = -(level * (1.0 - tail) + tail).ln() / l;
                t.clamp(0.0, tau0)
            }
            Latency::FifthPowerMixture {
                alpha_factor,
                offset,
                scale,
                fast_rate,
            } => {
                let a = alpha_factor * Self::te_rate(offset, scale, x);
                let g = |u: f64| 0.5 * ((-a * u).exp() + (-fast_rate * u).exp());
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                while g(hi) > level {
                    lo = hi;
                    hi *= 2.0;
                }
                while hi - lo > 1e-10 * hi {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) > level {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                (0.5 * (lo + hi)).powf(0.2)
            }
            Latency::Exponential { rate } => -level.ln() / rate,
            Latency::Step { at } => at,
        }
    }

    /// A time beyond which the latency density is negligible.
    pub fn support_end(&self, x: f64) -> f64 {
        match *self {
            Latency::TruncatedExponential { tau0, .. } => tau0,
            Latency::Step { at } => at,
            _ => self.inverse(SUPPORT_TAIL, x),
        }
    }
}

/// Censoring time distribution, common to every covariate value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Censoring {
    Exponential {
        mean: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Every subject is censored at `at` unless the event happens first.
    Fixed {
        at: f64,
    },
    /// No censoring: `C = ∞`.
    None,
}

impl Censoring {
    /// `1 - G(t)`.
    pub fn survival(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 1.0;
        }
        match *self {
            Censoring::Exponential { mean } => (-t / mean).exp(),
            Censoring::Uniform { lo, hi } => ((hi - t) / (hi - lo)).clamp(0.0, 1.0),
            Censoring::Fixed { at } => {
                if t < at {
                    1.0
                } else {
                    0.0
                }
            }
            Censoring::None => 1.0,
        }
    }

    /// Density of the censoring time; `None` for the atom of `Fixed`.
    pub fn density(&self, t: f64) -> Option<f64> {
        match *self {
            _ if t < 0.0 => Some(0.0),
            Censoring::Exponential { mean } => Some((-t / mean).exp() / mean),
            Censoring::Uniform { lo, hi } => Some(if t >= lo && t <= hi { 1.0 / (hi - lo) } else { 0.0 }),
            Censoring::Fixed { .. } => None,
            Censoring::None => Some(0.0),
        }
    }

    fn draw(&self, u: f64) -> f64 {
        match *self {
            Censoring::Exponential { mean } => -mean * (1.0 - u).ln(),
            Censoring::Uniform { lo, hi } => lo + (hi - lo) * u,
            Censoring::Fixed { at } => at,
            Censoring::None => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Covariate {
    Uniform { lo: f64, hi: f64 },
    Fixed { x: f64 },
}

impl Covariate {
    /// Density and its derivative at `x`; `None` where no density exists.
    pub fn density(&self, x: f64) -> Option<(f64, f64)> {
        match *self {
            Covariate::Uniform { lo, hi } => {
                if x > lo && x < hi {
                    Some((1.0 / (hi - lo), 0.0))
                } else {
                    Some((0.0, 0.0))
                }
            }
            Covariate::Fixed { .. } => None,
        }
    }

    fn draw(&self, u: f64) -> f64 {
        match *self {
            Covariate::Uniform { lo, hi } => lo + (hi - lo) * u,
            Covariate::Fixed { x } => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub incidence: Incidence,
    pub latency: Latency,
    pub censoring: Censoring,
    pub covariate: Covariate,
}

/// Logistic incidence with truncated-exponential latency (`tau0 = 4.605`).
/// About 47% cured and 54% censored.
pub fn model1() -> ModelSpec {
    ModelSpec {
        id: "model1".into(),
        incidence: Incidence::Logistic {
            coefficients: vec![0.476, 0.358],
        },
        latency: Latency::TruncatedExponential {
            tau0: 4.605,
            offset: 20.0,
            scale: 40.0,
        },
        censoring: Censoring::Exponential { mean: 10.0 / 3.0 },
        covariate: Covariate::Uniform { lo: -20.0, hi: 20.0 },
    }
}

/// Cubic-logistic incidence with a two-component fifth-power latency.
/// About 53% cured and 62% censored.
pub fn model2() -> ModelSpec {
    ModelSpec {
        id: "model2".into(),
        incidence: Incidence::Logistic {
            coefficients: vec![0.0476, -0.2558, -0.0027, 0.0020],
        },
        latency: Latency::FifthPowerMixture {
            alpha_factor: 0.2,
            offset: 20.0,
            scale: 40.0,
            fast_rate: 100.0,
        },
        censoring: Censoring::Exponential { mean: 10.0 / 3.0 },
        covariate: Covariate::Uniform { lo: -20.0, hi: 20.0 },
    }
}

/// Looks a benchmark model up by number.
pub fn by_number(n: u32) -> Result<ModelSpec> {
    match n {
        1 => Ok(model1()),
        2 => Ok(model2()),
        other => Err(Error::invalid(
            "model",
            format!("unknown model {other}; expected 1 or 2"),
        )),
    }
}

impl ModelSpec {
    pub fn uncured(&self, x: f64) -> f64 {
        self.incidence.uncured(x)
    }

    pub fn true_latency(&self, t: f64, x: f64) -> f64 {
        self.latency.survival(t, x)
    }

    /// Improper survival `S(t|x) = 1 - p(x) + p(x) S0(t|x)`.
    pub fn survival(&self, t: f64, x: f64) -> f64 {
        let p = self.uncured(x);
        1.0 - p + p * self.latency.survival(t, x)
    }

    /// Latent draw `(x, y, c)` with `y = ∞` for cured subjects. Exactly four
    /// uniforms are consumed whatever branch is taken, keeping streams aligned
    /// across models.
    fn draw_latent(&self, rng: &mut Stream) -> (f64, f64, f64) {
        let (ux, ucure, ulat, ucens): (f64, f64, f64, f64) = (rng.random(), rng.random(), rng.random(), rng.random());
        let x = self.covariate.draw(ux);
        let y = if ucure < self.uncured(x) {
            self.latency.inverse(1.0 - ulat, x)
        } else {
            f64::INFINITY
        };
        (x, y, self.censoring.draw(ucens))
    }

    fn draw_record(&self, rng: &mut Stream) -> Result<Record> {
        let (x, y, c) = self.draw_latent(rng);
        if y.is_infinite() && c.is_infinite() {
            return Err(Error::invalid(
                "censoring",
                "cured subjects need a finite censoring time",
            ));
        }
        Ok(Record::new(x, y.min(c), y <= c))
    }

    /// Draws a sample of size `n`.
    pub fn generate(&self, n: usize, rng: &mut Stream) -> Result<CensoredSample> {
        if n == 0 {
            return Err(Error::invalid("n", "sample size must be at least 1"));
        }
        let records = (0..n).map(|_| self.draw_record(rng)).collect::<Result<Vec<_>>>()?;
        CensoredSample::new(records)
    }

    /// Fractions of cured and of censored subjects among `n` draws.
    pub fn marginals(&self, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = rng::stream(seed, 0);
        let (mut cured, mut censored) = (0usize, 0usize);
        for _ in 0..n {
            let (_, y, c) = self.draw_latent(&mut rng);
            cured += usize::from(y.is_infinite());
            censored += usize::from(c < y);
        }
        (cured as f64 / n as f64, censored as f64 / n as f64)
    }
}

const TRIAL_TAG: u64 = 0x7472_6961_6c73;

/// Independent samples regenerable one by one from their seeds.
#[derive(Debug, Clone)]
pub struct TrialBatch {
    pub model_id: String,
    pub seeds: Vec<u64>,
    pub samples: Vec<CensoredSample>,
}

/// Seed of trial `j` under `master`.
pub fn trial_seed(master: u64, j: usize) -> u64 {
    rng::derive_seed(master, TRIAL_TAG, j as u64)
}

/// Regenerates the sample of one trial from its seed.
pub fn trial_sample(spec: &ModelSpec, n: usize, seed: u64) -> Result<CensoredSample> {
    spec.generate(n, &mut rng::stream(seed, 0))
}

pub fn generate_batch(spec: &ModelSpec, n: usize, m: usize, master: u64) -> Result<TrialBatch> {
    let seeds: Vec<u64> = (0..m).map(|j| trial_seed(master, j)).collect();
    let samples = seeds
        .par_iter()
        .map(|&s| trial_sample(spec, n, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialBatch {
        model_id: spec.id.clone(),
        seeds,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model1_values() {
        let m = model1();
        assert!((m.uncured(0.0) - 0.476f64.exp() / (1.0 + 0.476f64.exp())).abs() < 1e-15);
        assert!((m.uncured(0.0) - 0.6168).abs() < 1e-4);
        for x in [-20.0, -3.0, 0.0, 12.5, 20.0] {
            assert_eq!(m.true_latency(0.0, x), 1.0);
            assert_eq!(m.true_latency(4.605, x), 0.0);
            assert_eq!(m.true_latency(7.0, x), 0.0);
        }
        let l = 0.5f64.exp();
        let expected = ((-l).exp() - (-l * 4.605).exp()) / (1.0 - (-l * 4.605).exp());
        assert!((m.true_latency(1.0, 0.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn model2_values() {
        let m = model2();
        assert_eq!(m.true_latency(0.0, 3.0), 1.0);
        assert!((m.uncured(0.0) - 0.5119).abs() < 1e-4);
        if let Latency::FifthPowerMixture {
            alpha_factor,
            offset,
            scale,
            ..
        } = m.latency
        {
            let a0 = alpha_factor * ((0.0 + offset) / scale).exp();
            assert!((a0 - 0.3297).abs() < 1e-4);
        } else {
            unreachable!()
        }
    }

    #[test]
    fn latencies_are_proper_on_a_grid() {
        for spec in [model1(), model2()] {
            for xi in 0..=40 {
                let x = -20.0 + xi as f64;
                let p = spec.uncured(x);
                assert!((0.0..=1.0).contains(&p));
                let mut prev = 1.0;
                for ti in 0..=100 {
                    let s = spec.true_latency(ti as f64 * 0.05, x);
                    assert!(s <= prev + 1e-15 && (0.0..=1.0).contains(&s));
                    prev = s;
                }
            }
        }
    }

    #[test]
    fn inverse_round_trips() {
        for spec in [model1(), model2()] {
            for x in [-10.0, 0.0, 5.0, 18.0] {
                for level in [0.95, 0.6, 0.3, 0.01] {
                    let t = spec.latency.inverse(level, x);
                    let back = spec.true_latency(t, x);
                    assert!((back - level).abs() < 1e-8, "{} {x} {level} {back}", spec.id);
                }
            }
        }
    }

    #[test]
    fn density_matches_difference_quotient() {
        for spec in [model1(), model2()] {
            for (t, x) in [(0.3, 0.0), (1.0, 5.0), (0.6, -8.0)] {
                let e = 1e-6;
                let fd = (spec.true_latency(t - e, x) - spec.true_latency(t + e, x)) / (2.0 * e);
                let d = spec.latency.density(t, x);
                assert!((fd - d).abs() < 1e-6 * (1.0 + d), "{} {fd} {d}", spec.id);
            }
        }
    }

    #[test]
    fn forced_branch_generation() {
        let spec = ModelSpec {
            id: "forced".into(),
            incidence: Incidence::Constant { p: 1.0 },
            latency: Latency::Step { at: 1.0 },
            censoring: Censoring::Fixed { at: 2.0 },
            covariate: Covariate::Uniform { lo: 0.0, hi: 1.0 },
        };
        let s = spec.generate(50, &mut rng::stream(3, 0)).unwrap();
        assert!(s.records().iter().all(|r| r.delta && r.t == 1.0));
    }

    #[test]
    fn generation_is_deterministic_and_finite() {
        for spec in [model1(), model2()] {
            let a = trial_sample(&spec, 300, 11).unwrap();
            let b = trial_sample(&spec, 300, 11).unwrap();
            assert_eq!(a.records(), b.records());
            assert!(a.records().iter().all(|r| r.t.is_finite() && r.t >= 0.0));
        }
    }

    #[test]
    fn cured_without_censoring_is_rejected() {
        let spec = ModelSpec {
            censoring: Censoring::None,
            ..model1()
        };
        assert!(spec.generate(200, &mut rng::stream(1, 0)).is_err());
    }

    #[test]
    fn unknown_model_number() {
        assert!(by_number(3).is_err());
        assert_eq!(by_number(2).unwrap().id, "model2");
    }
}
