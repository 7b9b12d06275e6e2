//! Random-variate kernels and log densities used by the sampler.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub a_nu: f64,
    pub b_nu: f64,
    pub a_rho: f64,
    pub b_rho: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_kappa: f64,
    pub b_kappa: f64,
    /// spike scale, slab variance multiplier when excluded
    pub nu0: f64,
    /// intercept prior variance
    pub sigma2_mu: f64,
    pub b1: f64,
    pub c1: f64,
    pub b2: f64,
    pub c2: f64,
    /// maximum number of confounders
    #[serde(rename = "P_max")]
    pub p_max: usize,
}

impl Hyperparameters {
    /// Simulation-study defaults for `q` primary variables: unit
    /// inverse-gamma/beta hyperparameters, `nu0 = 2.5e-4`, `P_max = q − 1`,
    /// `b1 = b2 = 6`, `c1 = c2 = 6(P_max − 1)/P_max`.
    pub fn defaults_for(q: usize) -> Self {
        let p_max = q.saturating_sub(1);
        let c = if p_max > 0 {
            6.0 * (p_max as f64 - 1.0) / p_max as f64
        } else {
            0.0
        };
        Self {
            a_nu: 1.0,
            b_nu: 1.0,
            a_rho: 1.0,
            b_rho: 1.0,
            a_sigma: 1.0,
            b_sigma: 1.0,
            a_kappa: 1.0,
            b_kappa: 1.0,
            nu0: 2.5e-4,
            sigma2_mu: 100.0,
            b1: 6.0,
            c1: c,
            b2: 6.0,
            c2: c,
            p_max,
        }
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        let positive = [
            ("a_nu", self.a_nu),
            ("b_nu", self.b_nu),
            ("a_rho", self.a_rho),
            ("b_rho", self.b_rho),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("a_kappa", self.a_kappa),
            ("b_kappa", self.b_kappa),
            ("nu0", self.nu0),
            ("sigma2_mu", self.sigma2_mu),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.nu0 >= 1.0 {
            return Err(Error::Config(format!("nu0 must be below 1, got {}", self.nu0)));
        }
        if self.p_max >= q {
            return Err(Error::Config(format!(
                "P_max must be below the number of primary variables ({q}), got {}",
                self.p_max
            )));
        }
        if self.p_max > 0 {
            for (name, v) in [("b1", self.b1), ("c1", self.c1), ("b2", self.b2), ("c2", self.c2)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!(
                        "{name} must be positive and finite, got {v} (set c1/c2 explicitly when P_max = 1)"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Draw from the inverse-gamma law with density `∝ x^{−shape−1} e^{−scale/x}`.
pub fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
        return Err(Error::Domain(format!(
            "inverse-gamma needs positive parameters, got ({shape}, {scale})"
        )));
    }
    let g = Gamma::new(shape, 1.0 / scale)
        .map_err(|e| Error::Domain(format!("gamma({shape}, {scale}): {e}")))?
        .sample(rng);
    Ok(1.0 / g)
}

/// Wald draw with mean `mean` and shape `shape` by the transformation method
/// with one uniform acceptance step (Michael, Schucany and Haas).
pub fn draw_inverse_gaussian<R: Rng + ?Sized>(mean: f64, shape: f64, rng: &mut R) -> Result<f64> {
    if !(mean > 0.0 && shape > 0.0) || !mean.is_finite() || !shape.is_finite() {
        return Err(Error::Domain(format!(
            "inverse-Gaussian needs positive parameters, got ({mean}, {shape})"
        )));
    }
    let z: f64 = rng.sample(StandardNormal);
    let y = z * z;
    if y == 0.0 {
        return Ok(mean);
    }
    // smaller root of the chi-square(1) transformation, written without
    // cancellation: x = 4 μ² λ y / (S + μ y)², S = sqrt(4 μ λ y + μ² y²)
    let my = mean * y;
    let s = (4.0 * mean * shape * y + my * my).sqrt();
    let x = 4.0 * mean * mean * shape * y / ((s + my) * (s + my));
    let u: f64 = rng.random();
    if u <= mean / (mean + x) {
        Ok(x)
    } else {
        Ok(mean * mean / x)
    }
}

/// Laplace draw through its normal scale mixture: `τ ~ IG(1, 1/8)`,
/// `e | τ ~ N(0, sigma2/τ)`. Marginally `e` is Laplace with scale
/// `2√sigma2` and variance `8·sigma2`.
pub fn draw_laplace_via_mixture<R: Rng + ?Sized>(sigma2: f64, rng: &mut R) -> (f64, f64) {
    // 1/τ ~ Exponential(rate 1/8)
    let u: f64 = rng.random();
    let w = -8.0 * (1.0 - u).ln();
    let tau = 1.0 / w;
    let z: f64 = rng.sample(StandardNormal);
    ((sigma2 / tau).sqrt() * z, tau)
}

pub fn draw_laplace<R: Rng + ?Sized>(sigma2: f64, rng: &mut R) -> f64 {
    draw_laplace_via_mixture(sigma2, rng).0
}

/// Log posterior odds of slab (`γ = 1`) versus spike (`γ = nu0`) for a
/// coefficient `value` with slab variance `nu` and inclusion probability
/// `rho`. Returns `−∞` for `rho = 0` and `+∞` for `rho = 1`.
pub fn spike_slab_log_odds(value: f64, nu: f64, nu0: f64, rho: f64) -> f64 {
    if rho <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if rho >= 1.0 {
        return f64::INFINITY;
    }
    0.5 * nu0.ln() + rho.ln() - (1.0 - rho).ln()
        + (1.0 - nu0) * value * value / (2.0 * nu0 * nu)
}

/// Odds form of [`spike_slab_log_odds`]; may overflow to `+∞`.
pub fn spike_slab_odds(value: f64, nu: f64, nu0: f64, rho: f64) -> f64 {
    spike_slab_log_odds(value, nu, nu0, rho).exp()
}

/// Probability `odds / (1 + odds)` evaluated from log odds.
pub fn prob_from_log_odds(log_odds: f64) -> f64 {
    if log_odds >= 0.0 {
        1.0 / (1.0 + (-log_odds).exp())
    } else {
        let e = log_odds.exp();
        e / (1.0 + e)
    }
}

pub fn draw_bernoulli_log_odds<R: Rng + ?Sized>(log_odds: f64, rng: &mut R) -> bool {
    if log_odds == f64::INFINITY {
        return true;
    }
    if log_odds == f64::NEG_INFINITY {
        return false;
    }
    rng.random::<f64>() < prob_from_log_odds(log_odds)
}

pub fn draw_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let d = Beta::new(a, b).map_err(|e| Error::Domain(format!("beta({a}, {b}): {e}")))?;
    // keep draws strictly inside (0, 1) so log densities stay finite
    Ok(d.sample(rng).clamp(1e-300, 1.0 - 1e-16))
}

pub fn draw_normal<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + var.sqrt() * z
}

pub fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

pub fn ln_inverse_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub fn ln_beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta_fn(a, b)
}

/// Prior mean of an inverse-gamma law, or its mode when the mean is infinite.
pub fn inverse_gamma_center(shape: f64, scale: f64) -> f64 {
    if shape > 1.0 {
        scale / (shape - 1.0)
    } else {
        scale / (shape + 1.0)
    }
}
