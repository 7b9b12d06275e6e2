//! Sampler state for one chain and the log joint density it targets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{
    ln_beta_fn, ln_beta_pdf, ln_inverse_gamma, ln_normal, Hyperparameters,
};
use crate::error::{Error, Result};
use crate::graph_model::{CausalParameters, Dataset};
use crate::linalg::{log_abs_det, spectral_radius};

/// Proposal used for the Metropolis–Hastings update of single `B` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BProposal {
    /// Gaussian random walk with per-entry step sizes adapted during burn-in.
    RandomWalk,
    /// Independence proposal from the Gaussian part of the full conditional;
    /// only the Jacobian term enters the acceptance ratio.
    Conditional,
}

/// Tuning knobs of the sampler that are not prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub b_proposal: BProposal,
    /// initial random-walk step for `B` entries
    pub b_step: f64,
    /// log-scale random-walk step for `(a1, a2)`
    pub a_step: f64,
    /// include the loading prior's dependence on `σ²` in the `σ²` update
    pub exact_sigma2: bool,
    /// floor on |residual| in the `τ` update
    pub residual_floor: f64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            b_proposal: BProposal::RandomWalk,
            b_step: 0.1,
            a_step: 0.2,
            exact_sigma2: false,
            residual_floor: 1e-8,
        }
    }
}

impl SamplerOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("b_step", self.b_step),
            ("a_step", self.a_step),
            ("residual_floor", self.residual_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Every latent quantity of one chain.
///
/// `delta`, `zeta`, `pivots` and the columns of `c` are indexed by confounder
/// slot `0..P_max`; a slot is active iff its pivot is set. Inactive slots
/// have all-zero `delta` and `L` columns.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub params: CausalParameters,
    pub gamma_alpha: DMatrix<f64>,
    pub nu_alpha: DMatrix<f64>,
    pub rho_alpha: f64,
    pub gamma_beta: DMatrix<f64>,
    pub nu_beta: DMatrix<f64>,
    pub rho_beta: f64,
    pub delta: DMatrix<bool>,
    pub pivots: Vec<Option<usize>>,
    pub zeta: Vec<f64>,
    pub kappa: f64,
    pub a1: f64,
    pub a2: f64,
    /// `n x P_max`
    pub c: DMatrix<f64>,
    /// `n x Q`
    pub tau: DMatrix<f64>,
    /// cached `Y − μ − XAᵀ − YBᵀ − CLᵀ`, `n x Q`
    pub resid: DMatrix<f64>,
    /// per-entry random-walk steps for `B`
    pub b_step: DMatrix<f64>,
    pub nu0: f64,
}

impl SamplerState {
    pub fn q(&self) -> usize {
        self.params.q()
    }

    pub fn s(&self) -> usize {
        self.params.s()
    }

    pub fn p_max(&self) -> usize {
        self.pivots.len()
    }

    pub fn n(&self) -> usize {
        self.resid.nrows()
    }

    pub fn p_star(&self) -> usize {
        self.pivots.iter().filter(|p| p.is_some()).count()
    }

    pub fn active_columns(&self) -> Vec<usize> {
        (0..self.p_max()).filter(|&p| self.pivots[p].is_some()).collect()
    }

    pub fn column_count(&self, p: usize) -> usize {
        self.delta.column(p).iter().filter(|&&d| d).count()
    }

    /// Number of active columns with exactly one non-zero entry.
    pub fn p_single(&self) -> usize {
        self.active_columns()
            .into_iter()
            .filter(|&p| self.column_count(p) == 1)
            .count()
    }

    /// Rows not used as a pivot by any active column.
    pub fn unused_rows(&self) -> Vec<usize> {
        (0..self.q())
            .filter(|r| !self.pivots.iter().any(|p| *p == Some(*r)))
            .collect()
    }

    pub fn a_p(&self) -> f64 {
        self.a1 * self.a2 / self.p_max() as f64
    }

    /// Recomputes the residual cache from scratch.
    pub fn refresh_residuals(&mut self, data: &Dataset) {
        self.resid = compute_residuals(&self.params, &self.c, data);
    }

    /// Largest absolute deviation between the cache and a fresh computation.
    pub fn residual_drift(&self, data: &Dataset) -> f64 {
        (compute_residuals(&self.params, &self.c, data) - &self.resid).amax()
    }

    /// Checks the structural invariants of the state.
    pub fn check_invariants(&self) -> Result<()> {
        let (q, pm) = (self.q(), self.p_max());
        let nu0 = self.nu0;
        let ok_gamma = |g: f64| g == 1.0 || g == nu0;
        if !self.gamma_alpha.iter().all(|&g| ok_gamma(g)) {
            return Err(Error::Validation("gamma_alpha outside {nu0, 1}".into()));
        }
        for i in 0..q {
            for j in 0..q {
                if i != j && !ok_gamma(self.gamma_beta[(i, j)]) {
                    return Err(Error::Validation("gamma_beta outside {nu0, 1}".into()));
                }
            }
            if self.params.b[(i, i)] != 0.0 {
                return Err(Error::Validation("B has a non-zero diagonal".into()));
            }
        }
        let mut seen = vec![false; q];
        for p in 0..pm {
            match self.pivots[p] {
                None => {
                    if self.delta.column(p).iter().any(|&d| d)
                        || self.params.l.column(p).iter().any(|&v| v != 0.0)
                    {
                        return Err(Error::Validation(format!("inactive column {p} is not zero")));
                    }
                }
                Some(r) => {
                    if seen[r] {
                        return Err(Error::Validation(format!("pivot row {r} used twice")));
                    }
                    seen[r] = true;
                    if (0..r).any(|i| self.delta[(i, p)]) || !self.delta[(r, p)] {
                        return Err(Error::Validation(format!(
                            "column {p} violates the pivot structure"
                        )));
                    }
                }
            }
            for i in 0..q {
                if !self.delta[(i, p)] && self.params.l[(i, p)] != 0.0 {
                    return Err(Error::Validation(format!("L[{i},{p}] non-zero where delta is 0")));
                }
            }
        }
        let radius = spectral_radius(&self.params.b)?;
        if radius >= 1.0 {
            return Err(Error::Unstable { radius });
        }
        Ok(())
    }
}

pub fn compute_residuals(params: &CausalParameters, c: &DMatrix<f64>, data: &Dataset) -> DMatrix<f64> {
    let n = data.n();
    let mut r = &data.y - &data.x * params.a.transpose() - &data.y * params.b.transpose()
        - c * params.l.transpose();
    for q in 0..params.q() {
        let mu = params.mu[q];
        for i in 0..n {
            r[(i, q)] -= mu;
        }
    }
    r
}

/// Log of the structural prior over which slots are active: each of the
/// `P_max` slots is active independently with a `Beta(a_P, a2)` probability
/// integrated out.
pub fn ln_activity_prior(k: usize, p_max: usize, a_p: f64, a2: f64) -> f64 {
    ln_beta_fn(a_p + k as f64, a2 + (p_max - k) as f64) - ln_beta_fn(a_p, a2)
}

/// Log joint density of the state and the data, up to a constant that does
/// not depend on the state (including the number of active confounders).
pub fn log_joint(state: &SamplerState, data: &Dataset, hyper: &Hyperparameters) -> f64 {
    let (n, q, s, pm) = (data.n(), state.q(), state.s(), state.p_max());
    let params = &state.params;
    let mut lp = 0.0;

    // observation model
    let i_minus_b = DMatrix::<f64>::identity(q, q) - &params.b;
    lp += n as f64 * log_abs_det(&i_minus_b).0;
    for j in 0..q {
        let s2 = params.sigma2[j];
        for i in 0..n {
            let t = state.tau[(i, j)];
            lp += ln_normal(state.resid[(i, j)], 0.0, s2 / t) + ln_inverse_gamma(t, 1.0, 0.125);
        }
        lp += ln_normal(params.mu[j], 0.0, hyper.sigma2_mu);
        lp += ln_inverse_gamma(s2, hyper.a_sigma, hyper.b_sigma);
    }

    // spike-and-slab blocks
    let slab = |value: f64, gamma: f64, nu: f64, rho: f64| {
        ln_normal(value, 0.0, gamma * nu)
            + if gamma == 1.0 { rho.ln() } else { (1.0 - rho).ln() }
            + ln_inverse_gamma(nu, hyper.a_nu, hyper.b_nu)
    };
    for j in 0..q {
        for k in 0..s {
            lp += slab(params.a[(j, k)], state.gamma_alpha[(j, k)], state.nu_alpha[(j, k)], state.rho_alpha);
        }
        for k in 0..q {
            if j != k {
                lp += slab(params.b[(j, k)], state.gamma_beta[(j, k)], state.nu_beta[(j, k)], state.rho_beta);
            }
        }
    }
    lp += ln_beta_pdf(state.rho_alpha, hyper.a_rho, hyper.b_rho);
    lp += ln_beta_pdf(state.rho_beta, hyper.a_rho, hyper.b_rho);

    // confounders
    lp += ln_inverse_gamma(state.kappa, hyper.a_kappa, hyper.b_kappa);
    lp += ln_inverse_gamma(state.a1, hyper.b1, hyper.c1);
    lp += ln_inverse_gamma(state.a2, hyper.b2, hyper.c2);
    if pm > 0 {
        let k = state.p_star();
        let a_p = state.a_p();
        lp += ln_activity_prior(k, pm, a_p, state.a2);
        // uniform assignment of distinct pivot rows to the active slots
        lp -= (0..k).map(|j| ((q - j) as f64).ln()).sum::<f64>();
        for p in state.active_columns() {
            let piv = state.pivots[p].unwrap_or(0);
            let z = state.zeta[p];
            lp += ln_beta_pdf(z, a_p, state.a2);
            for j in (piv + 1)..q {
                lp += if state.delta[(j, p)] { z.ln() } else { (1.0 - z).ln() };
            }
            for j in 0..q {
                if state.delta[(j, p)] {
                    lp += ln_normal(params.l[(j, p)], 0.0, state.kappa * params.sigma2[j]);
                }
            }
            for i in 0..n {
                lp += ln_normal(state.c[(i, p)], 0.0, 1.0);
            }
        }
    }
    lp
}

/// Flat record of one retained state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    #[serde(with = "crate::graph_model::serde_rows::vector")]
    pub mu: DVector<f64>,
    #[serde(rename = "A", with = "crate::graph_model::serde_rows")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "crate::graph_model::serde_rows")]
    pub b: DMatrix<f64>,
    #[serde(rename = "L", with = "crate::graph_model::serde_rows")]
    pub l: DMatrix<f64>,
    #[serde(with = "crate::graph_model::serde_rows::vector")]
    pub sigma2: DVector<f64>,
    #[serde(with = "crate::graph_model::serde_rows::boolean")]
    pub gamma_alpha: DMatrix<bool>,
    #[serde(with = "crate::graph_model::serde_rows::boolean")]
    pub gamma_beta: DMatrix<bool>,
    #[serde(with = "crate::graph_model::serde_rows::boolean")]
    pub delta: DMatrix<bool>,
    pub pivots: Vec<Option<usize>>,
    pub p_star: usize,
    pub kappa: f64,
    pub rho_alpha: f64,
    pub rho_beta: f64,
    pub a1: f64,
    pub a2: f64,
    pub log_joint: f64,
}

impl Snapshot {
    pub fn capture(state: &SamplerState, iteration: usize, log_joint: f64) -> Self {
        Self {
            iteration,
            mu: state.params.mu.clone(),
            a: state.params.a.clone(),
            b: state.params.b.clone(),
            l: state.params.l.clone(),
            sigma2: state.params.sigma2.clone(),
            gamma_alpha: state.gamma_alpha.map(|g| g == 1.0),
            gamma_beta: DMatrix::from_fn(state.q(), state.q(), |i, j| {
                i != j && state.gamma_beta[(i, j)] == 1.0
            }),
            delta: state.delta.clone(),
            pivots: state.pivots.clone(),
            p_star: state.p_star(),
            kappa: state.kappa,
            rho_alpha: state.rho_alpha,
            rho_beta: state.rho_beta,
            a1: state.a1,
            a2: state.a2,
            log_joint,
        }
    }
}
