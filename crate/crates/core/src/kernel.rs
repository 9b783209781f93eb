//! Compactly supported smoothing kernels and Nadaraya-Watson weights.
//!
//! Every conditional estimator in the crate localises the sample around a
//! covariate value `x` through the weights
//!
//! ```text
//! B_i(x) = K((x - X_i) / h) / sum_j K((x - X_j) / h)
//! ```
//!
//! The `1/h` factor of the rescaled kernel cancels in the ratio, so it is not
//! applied here.

use serde::{Deserialize, Serialize};

/// Symmetric probability density vanishing outside `(-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Epanechnikov,
}

impl Kernel {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// Second moment `d_K = ∫ v² K(v) dv`.
    pub fn second_moment(self) -> f64 {
        match self {
            Kernel::Epanechnikov => 0.2,
        }
    }

    /// Roughness `c_K = ∫ K(v)² dv`.
    pub fn roughness(self) -> f64 {
        match self {
            Kernel::Epanechnikov => 0.6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Epanechnikov => "epanechnikov",
        }
    }
}

/// Nadaraya-Watson weights, one per sample point.
///
/// An all-zero vector marks an empty neighbourhood: no sample point lies
/// within one bandwidth of the target covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
    empty: bool,
}

impl WeightVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_empty_neighborhood(&self) -> bool {
        self.empty
    }
}

/// Unnormalised kernel values `K((x - xs_i) / h)` written into `out`.
/// Returns their sum.
pub(crate) fn raw_weights_into(kernel: Kernel, x: f64, xs: &[f64], h: f64, out: &mut Vec<f64>) -> f64 {
    out.clear();
    out.reserve(xs.len());
    let mut total = 0.0;
    for &xi in xs {
        let k = kernel.eval((x - xi) / h);
        total += k;
        out.push(k);
    }
    total
}

/// Nadaraya-Watson weights of `xs` at `x` with bandwidth `h > 0`.
pub fn nw_weights(kernel: Kernel, x: f64, xs: &[f64], h: f64) -> WeightVector {
    debug_assert!(h > 0.0);
    let mut weights = Vec::new();
    let total = raw_weights_into(kernel, x, xs, h, &mut weights);
    if total > 0.0 {
        for w in &mut weights {
            *w /= total;
        }
        WeightVector { weights, empty: false }
    } else {
        weights.iter_mut().for_each(|w| *w = 0.0);
        WeightVector { weights, empty: true }
    }
}
