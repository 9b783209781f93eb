//! Asymptotic bias, variance and AMSE-optimal bandwidth of the latency
//! estimator for a known model.
//!
//! Everything is expressed through the observable distributions
//! `H(t|x) = P(T ≤ t | X = x)` and `H1(t|x) = P(T ≤ t, δ = 1 | X = x)`, with
//!
//! ```text
//! Φ(y,t,x)  = ∫₀ᵗ dH1(v|y) / (1-H(v|x)) - ∫₀ᵗ (1-H(v|y)) dH1(v|x) / (1-H(v|x))²
//! Φ1(x,t,x) = Φ2(x,t,x) = ∫₀ᵗ dH1(v|x) / (1-H(v|x))²
//! ```
//!
//! `y`-derivatives of `Φ` are taken by central differences applied to the
//! closed-form integrand, so quadrature error is not amplified by the
//! differencing. The time `t = ∞` is represented by `f64::INFINITY` and
//! resolved to the end of the latency support.
//!
//! The estimator linearises as
//! `S0_h - S0 ≈ (Ŝ_h - S)/p + (1-S)/p² · (p_h - p)`, so the incidence
//! contribution enters with the opposite sign to the conditional survival
//! one: the squared bias uses `B = B1 - B2`, the variance
//! `V = V1 + V2 - 2 V3`, and the bias term carries `d_K²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::models::ModelSpec;
use crate::quadrature::{adaptive_simpson, composite_simpson};

/// Evaluations require `1 - H(t|x)` at least this large.
pub const SUPPORT_GUARD: f64 = 1e-3;
/// Absolute tolerance of every single-integral quadrature.
pub const QUAD_TOL: f64 = 1e-8;
/// Panels of the outer rule for integrals over `t`.
const T_PANELS: usize = 128;

/// Central-difference step in `y`.
pub fn fd_step(y: f64) -> f64 {
    f64::max(1e-4, 1e-4 * y.abs())
}

/// Observable-time distributions implied by a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct PopulationFunctions {
    spec: ModelSpec,
}

impl PopulationFunctions {
    pub fn from_model(spec: &ModelSpec) -> Self {
        PopulationFunctions { spec: spec.clone() }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn uncured(&self, x: f64) -> f64 {
        self.spec.uncured(x)
    }

    pub fn latency(&self, t: f64, x: f64) -> f64 {
        self.spec.true_latency(t, x)
    }

    /// Improper survival `S(t|x)`.
    pub fn survival(&self, t: f64, x: f64) -> f64 {
        self.spec.survival(t, x)
    }

    /// `1 - G(t)`.
    pub fn censoring_survival(&self, t: f64) -> f64 {
        self.spec.censoring.survival(t)
    }

    /// `1 - H(t|x) = S(t|x) (1 - G(t))`.
    pub fn at_risk(&self, t: f64, x: f64) -> f64 {
        self.survival(t, x) * self.censoring_survival(t)
    }

    pub fn h(&self, t: f64, x: f64) -> f64 {
        1.0 - self.at_risk(t, x)
    }

    /// `dH1(t|x)/dt = (1 - G(t)) p(x) f0(t|x)`.
    pub fn h1_density(&self, t: f64, x: f64) -> f64 {
        self.censoring_survival(t) * self.uncured(x) * self.spec.latency.density(t, x)
    }

    pub fn h1(&self, t: f64, x: f64) -> f64 {
        let upper = t.min(self.support_end(x));
        if upper <= 0.0 {
            return 0.0;
        }
        adaptive_simpson(|v| self.h1_density(v, x), 0.0, upper, 1e-12).value
    }

    /// End of the latency support at `x`; the time used for `t = ∞`.
    pub fn support_end(&self, x: f64) -> f64 {
        self.spec.latency.support_end(x)
    }

    /// Covariate density `m(x)` and `m'(x)`.
    pub fn covariate_density(&self, x: f64) -> Result<(f64, f64)> {
        match self.spec.covariate.density(x) {
            Some((m, dm)) if m > 0.0 => Ok((m, dm)),
            _ => Err(Error::DegenerateDensity(x)),
        }
    }

    /// Upper integration limit for time `t` and the support guard check at
    /// covariate `x`.
    fn upper_limit(&self, t: f64, x: f64, others: &[f64]) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::invalid("t", format!("must be nonnegative, got {t}")));
        }
        let end = others
            .iter()
            .fold(self.support_end(x), |acc, &y| acc.max(self.support_end(y)));
        let upper = t.min(end);
        let survival = self.at_risk(upper, x);
        if survival < SUPPORT_GUARD {
            return Err(Error::SupportGuard { t, x, survival });
        }
        Ok(upper)
    }

    /// Integrand of `Φ(y,·,x)`.
    fn phi_integrand(&self, v: f64, y: f64, x: f64) -> f64 {
        let r = self.at_risk(v, x);
        self.h1_density(v, y) / r - self.at_risk(v, y) * self.h1_density(v, x) / (r * r)
    }

    /// `dH1(v|x) / (1-H(v|x))²`.
    fn diagonal_integrand(&self, v: f64, x: f64) -> f64 {
        let r = self.at_risk(v, x);
        self.h1_density(v, x) / (r * r)
    }
}

/// `Φ(y,t,x)`, each of its two integrals evaluated separately.
pub fn phi(pop: &PopulationFunctions, y: f64, t: f64, x: f64) -> Result<f64> {
    let upper = pop.upper_limit(t, x, &[y])?;
    let first = adaptive_simpson(|v| pop.h1_density(v, y) / pop.at_risk(v, x), 0.0, upper, QUAD_TOL);
    let second = adaptive_simpson(
        |v| {
            let r = pop.at_risk(v, x);
            pop.at_risk(v, y) * pop.h1_density(v, x) / (r * r)
        },
        0.0,
        upper,
        QUAD_TOL,
    );
    Ok(first.value - second.value)
}

fn diagonal(pop: &PopulationFunctions, t: f64, x: f64) -> Result<f64> {
    let upper = pop.upper_limit(t, x, &[])?;
    Ok(adaptive_simpson(|v| pop.diagonal_integrand(v, x), 0.0, upper, QUAD_TOL).value)
}

/// `Φ1(x,t,x) = ∫₀ᵗ dH1(v|x) / (1-H(v|x))²`.
pub fn phi1(pop: &PopulationFunctions, t: f64, x: f64) -> Result<f64> {
    diagonal(pop, t, x)
}

/// `Φ2(x,t,x)`; on the diagonal it coincides with [`phi1`].
pub fn phi2(pop: &PopulationFunctions, t: f64, x: f64) -> Result<f64> {
    diagonal(pop, t, x)
}

/// The four pieces of `E[ξ(t) ξ(∞) | X = x] = A - B - C + D`, each computed
/// as a nested integral from the definition of `ξ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phi2Decomposition {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Phi2Decomposition {
    pub fn value(&self) -> f64 {
        self.a - self.b - self.c + self.d
    }
}

pub fn phi2_decomposed(pop: &PopulationFunctions, t: f64, x: f64) -> Result<Phi2Decomposition> {
    const OUTER: f64 = 1e-9;
    const INNER: f64 = 1e-12;
    let upper = pop.upper_limit(t, x, &[])?;
    let end = pop.support_end(x);
    let g = |v: f64| pop.diagonal_integrand(v, x);
    let jump = |v: f64| pop.h1_density(v, x) / pop.at_risk(v, x);
    let cumulative = |s: f64| adaptive_simpson(g, 0.0, s, INNER).value;

    // a(ξ_t) a(ξ_∞): both indicator terms, nonzero only for T ≤ t, δ = 1.
    let a = adaptive_simpson(g, 0.0, upper, OUTER).value;
    // a(ξ_t) c(ξ_∞): event before t times the compensator up to T.
    let b = adaptive_simpson(|v| jump(v) * cumulative(v), 0.0, upper, OUTER).value;
    // c(ξ_t) a(ξ_∞): any event time, compensator up to min(T, t).
    let c = adaptive_simpson(|v| jump(v) * cumulative(v), 0.0, upper, OUTER).value
        + cumulative(upper) * adaptive_simpson(jump, upper, end, OUTER).value;
    // c(ξ_t) c(ξ_∞) = ∫₀ᵗ ∫₀^∞ g(u) g(w) P(T ≥ max(u, w)) dw du.
    let d = adaptive_simpson(
        |u| {
            let below = pop.at_risk(u, x) * cumulative(u);
            let above = adaptive_simpson(|w| g(w) * pop.at_risk(w, x), u, end, INNER).value;
            g(u) * (below + above)
        },
        0.0,
        upper,
        OUTER,
    )
    .value;
    Ok(Phi2Decomposition { a, b, c, d })
}

/// `∂ᵏΦ(y,t,x)/∂yᵏ` for `order` 1 or 2, with difference step `step`.
pub fn phi_derivative(pop: &PopulationFunctions, y: f64, t: f64, x: f64, order: u8, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::invalid("step", "difference step must be positive"));
    }
    let upper = pop.upper_limit(t, x, &[y - step, y + step])?;
    let q = match order {
        1 => adaptive_simpson(
            |v| (pop.phi_integrand(v, y + step, x) - pop.phi_integrand(v, y - step, x)) / (2.0 * step),
            0.0,
            upper,
            QUAD_TOL,
        ),
        2 => adaptive_simpson(
            |v| {
                (pop.phi_integrand(v, y + step, x) - 2.0 * pop.phi_integrand(v, y, x)
                    + pop.phi_integrand(v, y - step, x))
                    / (step * step)
            },
            0.0,
            upper,
            QUAD_TOL,
        ),
        other => return Err(Error::invalid("order", format!("expected 1 or 2, got {other}"))),
    };
    Ok(q.value)
}

/// Diagonal quantities at one time point.
#[derive(Debug, Clone, Copy)]
struct DiagonalAt {
    phi1: f64,
    d1: f64,
    d2: f64,
}

/// Quantities at `t = ∞`; only needed when part of the population is cured,
/// and unavailable without a cure fraction since `1 - H(∞|x) = 0` then.
fn tail_at(pop: &PopulationFunctions, x: f64, step: f64) -> Result<DiagonalAt> {
    if pop.uncured(x) < 1.0 {
        diagonal_at(pop, f64::INFINITY, x, step)
    } else {
        Ok(DiagonalAt {
            phi1: 0.0,
            d1: 0.0,
            d2: 0.0,
        })
    }
}

fn diagonal_at(pop: &PopulationFunctions, t: f64, x: f64, step: f64) -> Result<DiagonalAt> {
    Ok(DiagonalAt {
        phi1: phi1(pop, t, x)?,
        d1: phi_derivative(pop, x, t, x, 1, step)?,
        d2: phi_derivative(pop, x, t, x, 2, step)?,
    })
}

/// The five components of the asymptotic bias and variance at `(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceTerms {
    pub b1: f64,
    pub b2: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
}

impl BiasVarianceTerms {
    pub fn bias(&self) -> f64 {
        self.b1 - self.b2
    }

    pub fn variance(&self) -> f64 {
        self.v1 + self.v2 - 2.0 * self.v3
    }
}

fn assemble(
    pop: &PopulationFunctions,
    t: f64,
    x: f64,
    at_t: DiagonalAt,
    at_inf: DiagonalAt,
) -> Result<BiasVarianceTerms> {
    let (m, dm) = pop.covariate_density(x)?;
    let p = pop.uncured(x);
    let s = pop.survival(t, x);
    let cure = 1.0 - p;
    Ok(BiasVarianceTerms {
        b1: s / (p * m) * (at_t.d2 * m + 2.0 * at_t.d1 * dm),
        b2: cure * (1.0 - s) / (p * p * m) * (at_inf.d2 * m + 2.0 * at_inf.d1 * dm),
        v1: (s / p).powi(2) * at_t.phi1 / m,
        v2: (cure * (1.0 - s) / (p * p)).powi(2) * at_inf.phi1 / m,
        v3: cure * s * (1.0 - s) / (p.powi(3) * m) * at_t.phi1,
    })
}

/// `B1, B2, V1, V2, V3` at `(t, x)`.
pub fn bias_variance_terms(pop: &PopulationFunctions, t: f64, x: f64) -> Result<BiasVarianceTerms> {
    pop.covariate_density(x)?;
    let step = fd_step(x);
    let at_inf = tail_at(pop, x, step)?;
    let at_t = diagonal_at(pop, t, x, step)?;
    assemble(pop, t, x, at_t, at_inf)
}

/// Largest relative change of `Φ'` and `Φ''` at `(t, x)` when the difference
/// step is halved.
pub fn fd_halving_change(pop: &PopulationFunctions, t: f64, x: f64) -> Result<f64> {
    let step = fd_step(x);
    let full = diagonal_at(pop, t, x, step)?;
    let half = diagonal_at(pop, t, x, 0.5 * step)?;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    Ok(rel(full.d1, half.d1).max(rel(full.d2, half.d2)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmseReport {
    pub t: f64,
    pub x: f64,
    pub h: f64,
    pub n: usize,
    pub b1: f64,
    pub b2: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    /// `d_K = ∫ v² K(v) dv`.
    pub d_k: f64,
    /// `c_K = ∫ K(v)² dv`.
    pub c_k: f64,
    /// `(h⁴/4) d_K² B²`.
    pub bias_term: f64,
    /// `c_K V / (n h)`.
    pub variance_term: f64,
    pub amse: f64,
}

impl AmseReport {
    pub fn components(&self) -> BiasVarianceTerms {
        BiasVarianceTerms {
            b1: self.b1,
            b2: self.b2,
            v1: self.v1,
            v2: self.v2,
            v3: self.v3,
        }
    }

    /// `(bias_term, variance_term, amse)` rebuilt from the components.
    pub fn recompose(&self) -> (f64, f64, f64) {
        let c = self.components();
        let bias_term = self.h.powi(4) / 4.0 * self.d_k * self.d_k * c.bias().powi(2);
        let variance_term = self.c_k / (self.n as f64 * self.h) * c.variance();
        (bias_term, variance_term, bias_term + variance_term)
    }

    /// The same components combined with `B = B1 + B2`, `V = V1 + V2 + 2 V3`
    /// and a bias term linear in `d_K`; kept for comparison only.
    pub fn amse_same_sign(&self) -> f64 {
        let b = self.b1 + self.b2;
        let v = self.v1 + self.v2 + 2.0 * self.v3;
        self.h.powi(4) / 4.0 * self.d_k * b * b + self.c_k / (self.n as f64 * self.h) * v
    }
}

/// Asymptotic mean squared error of the latency estimator at `(t, x)`.
pub fn amse(pop: &PopulationFunctions, t: f64, x: f64, h: f64, n: usize, kernel: Kernel) -> Result<AmseReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::NonPositiveBandwidth(h));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let c = bias_variance_terms(pop, t, x)?;
    let mut report = AmseReport {
        t,
        x,
        h,
        n,
        b1: c.b1,
        b2: c.b2,
        v1: c.v1,
        v2: c.v2,
        v3: c.v3,
        d_k: kernel.second_moment(),
        c_k: kernel.roughness(),
        bias_term: 0.0,
        variance_term: 0.0,
        amse: 0.0,
    };
    (report.bias_term, report.variance_term, report.amse) = report.recompose();
    Ok(report)
}

/// Default time range `[ε, q]` with `S0(q|x) = 0.05` and `ε = q/1000`.
pub fn default_t_range(pop: &PopulationFunctions, x: f64) -> (f64, f64) {
    let q = pop.spec().latency.inverse(0.05, x);
    (1e-3 * q, q)
}

/// `∫ V dt` and `∫ B² dt` over a time range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmiseIntegrals {
    pub x: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub integrated_variance: f64,
    pub integrated_squared_bias: f64,
}

impl AmiseIntegrals {
    /// `(c_K ∫V / (d_K² ∫B²))^(1/5) n^(-1/5)`.
    pub fn bandwidth(&self, n: usize, kernel: Kernel) -> Result<f64> {
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        let dk = kernel.second_moment();
        let ratio = kernel.roughness() * self.integrated_variance / (dk * dk * self.integrated_squared_bias);
        Ok(ratio.powf(0.2) * (n as f64).powf(-0.2))
    }
}

pub fn amise_integrals(pop: &PopulationFunctions, x: f64, t_range: Option<(f64, f64)>) -> Result<AmiseIntegrals> {
    let (t_lo, t_hi) = t_range.unwrap_or_else(|| default_t_range(pop, x));
    if !(t_lo >= 0.0 && t_hi > t_lo && t_hi.is_finite()) {
        return Err(Error::invalid(
            "t_range",
            format!("need 0 ≤ lo < hi, got [{t_lo}, {t_hi}]"),
        ));
    }
    pop.covariate_density(x)?;
    let step = fd_step(x);
    let at_inf = tail_at(pop, x, step)?;
    pop.upper_limit(t_hi, x, &[])?;

    let nodes: Vec<f64> = (0..=T_PANELS)
        .map(|k| t_lo + (t_hi - t_lo) * k as f64 / T_PANELS as f64)
        .collect();
    let terms = nodes
        .iter()
        .map(|&t| assemble(pop, t, x, diagonal_at(pop, t, x, step)?, at_inf))
        .collect::<Result<Vec<_>>>()?;
    let index = |t: f64| (((t - t_lo) / (t_hi - t_lo)) * T_PANELS as f64).round() as usize;
    let integrated_variance = composite_simpson(|t| terms[index(t)].variance(), t_lo, t_hi, T_PANELS);
    let integrated_squared_bias = composite_simpson(|t| terms[index(t)].bias().powi(2), t_lo, t_hi, T_PANELS);
    if !(integrated_squared_bias > 0.0) {
        return Err(Error::BiasFree);
    }
    Ok(AmiseIntegrals {
        x,
        t_lo,
        t_hi,
        integrated_variance,
        integrated_squared_bias,
    })
}

/// AMISE-optimal bandwidth at `x` for sample size `n`.
pub fn h_amise(
    pop: &PopulationFunctions,
    x: f64,
    n: usize,
    t_range: Option<(f64, f64)>,
    kernel: Kernel,
) -> Result<f64> {
    amise_integrals(pop, x, t_range)?.bandwidth(n, kernel)
}
