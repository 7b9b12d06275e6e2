//! Fixed-dimension full-conditional updates. Every update keeps the residual
//! cache `state.resid` in sync with the parameters it changes.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    draw_bernoulli_log_odds, draw_beta, draw_inverse_gamma, draw_inverse_gaussian, draw_normal,
    ln_beta_pdf, ln_inverse_gamma, spike_slab_log_odds, Hyperparameters,
};
use crate::error::{Error, Result};
use crate::graph_model::Dataset;
use crate::linalg::{draw_gaussian_canonical, spectral_radius, ShiftedSolver};
use crate::state::{ln_activity_prior, BProposal, SamplerOptions, SamplerState};

/// Proposal/acceptance counts for one Metropolis–Hastings family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MhCounter {
    pub proposed: u64,
    pub accepted: u64,
}

impl MhCounter {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn merge(&mut self, other: &MhCounter) {
        self.proposed += other.proposed;
        self.accepted += other.accepted;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub b_entry: MhCounter,
    pub a1_a2: MhCounter,
    pub pivot_shift: MhCounter,
    pub pivot_switch: MhCounter,
    pub pivot_add: MhCounter,
    pub pivot_delete: MhCounter,
    pub split: MhCounter,
    pub merge: MhCounter,
}

impl AcceptanceStats {
    pub fn merge(&mut self, other: &AcceptanceStats) {
        self.b_entry.merge(&other.b_entry);
        self.a1_a2.merge(&other.a1_a2);
        self.pivot_shift.merge(&other.pivot_shift);
        self.pivot_switch.merge(&other.pivot_switch);
        self.pivot_add.merge(&other.pivot_add);
        self.pivot_delete.merge(&other.pivot_delete);
        self.split.merge(&other.split);
        self.merge.merge(&other.merge);
    }
}

pub fn update_mu<R: Rng + ?Sized>(
    state: &mut SamplerState,
    hyper: &Hyperparameters,
    rng: &mut R,
) {
    let n = state.n();
    for q in 0..state.q() {
        let s2 = state.params.sigma2[q];
        let old = state.params.mu[q];
        let mut prec = 1.0 / hyper.sigma2_mu;
        let mut lin = 0.0;
        for i in 0..n {
            let w = state.tau[(i, q)] / s2;
            prec += w;
            lin += w * (state.resid[(i, q)] + old);
        }
        let var = 1.0 / prec;
        let new = draw_normal(var * lin, var, rng);
        state.params.mu[q] = new;
        let shift = new - old;
        for v in state.resid.column_mut(q).iter_mut() {
            *v -= shift;
        }
    }
}

/// Gibbs update of each row of `A`, then its indicators, slab variances and
/// inclusion probability. No-op when there are no covariates.
pub fn update_a_block<R: Rng + ?Sized>(
    state: &mut SamplerState,
    data: &Dataset,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    let (n, q_count, s) = (state.n(), state.q(), state.s());
    if s == 0 {
        return Ok(());
    }
    let mut prec = vec![0.0; s * s];
    let mut h = vec![0.0; s];
    let mut e_tilde = vec![0.0; n];
    for q in 0..q_count {
        let s2 = state.params.sigma2[q];
        for i in 0..n {
            let mut v = state.resid[(i, q)];
            for k in 0..s {
                v += state.params.a[(q, k)] * data.x[(i, k)];
            }
            e_tilde[i] = v;
        }
        prec.iter_mut().for_each(|v| *v = 0.0);
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let w = state.tau[(i, q)] / s2;
            for k in 0..s {
                let xk = w * data.x[(i, k)];
                h[k] += xk * e_tilde[i];
                for t in 0..=k {
                    prec[k * s + t] += xk * data.x[(i, t)];
                }
            }
        }
        for k in 0..s {
            for t in 0..k {
                prec[t * s + k] = prec[k * s + t];
            }
            prec[k * s + k] += 1.0 / (state.gamma_alpha[(q, k)] * state.nu_alpha[(q, k)]);
        }
        draw_gaussian_canonical(&mut prec, &mut h, s, 1.0, rng)?;
        for k in 0..s {
            state.params.a[(q, k)] = h[k];
        }
        for i in 0..n {
            let mut v = e_tilde[i];
            for k in 0..s {
                v -= h[k] * data.x[(i, k)];
            }
            state.resid[(i, q)] = v;
        }
    }
    let mut slab_count = 0usize;
    for q in 0..q_count {
        for k in 0..s {
            let value = state.params.a[(q, k)];
            let (g, nu) = update_indicator_and_variance(
                value,
                state.nu_alpha[(q, k)],
                state.rho_alpha,
                hyper,
                rng,
            )?;
            state.gamma_alpha[(q, k)] = g;
            state.nu_alpha[(q, k)] = nu;
            slab_count += usize::from(g == 1.0);
        }
    }
    let total = q_count * s;
    state.rho_alpha = draw_beta(
        hyper.a_rho + slab_count as f64,
        hyper.b_rho + (total - slab_count) as f64,
        rng,
    )?;
    Ok(())
}

/// Spike/slab indicator from its odds, then the slab variance from its
/// inverse-gamma conditional.
fn update_indicator_and_variance<R: Rng + ?Sized>(
    value: f64,
    nu: f64,
    rho: f64,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let slab = draw_bernoulli_log_odds(spike_slab_log_odds(value, nu, hyper.nu0, rho), rng);
    let g = if slab { 1.0 } else { hyper.nu0 };
    let nu = draw_inverse_gamma(hyper.a_nu + 0.5, hyper.b_nu + value * value / (2.0 * g), rng)?;
    Ok((g, nu))
}

/// Cheap sufficient test (induced 1- or ∞-norm below one) before the exact
/// eigenvalue computation.
pub fn is_stable(b: &DMatrix<f64>) -> bool {
    let q = b.nrows();
    let max_row = (0..q)
        .map(|i| b.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let max_col = (0..q)
        .map(|j| b.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if max_row < 1.0 || max_col < 1.0 {
        return true;
    }
    spectral_radius(b).is_ok_and(|r| r < 1.0)
}

/// Metropolis–Hastings sweep over the off-diagonal entries of `B` in random
/// order, followed by the indicator, slab-variance and inclusion-probability
/// updates. `adapt` is the Robbins–Monro gain for the random-walk steps
/// (zero after burn-in).
pub fn update_b_block<R: Rng + ?Sized>(
    state: &mut SamplerState,
    data: &Dataset,
    hyper: &Hyperparameters,
    opts: &SamplerOptions,
    adapt: f64,
    stats: &mut AcceptanceStats,
    rng: &mut R,
) -> Result<()> {
    let (n, q_count) = (state.n(), state.q());
    if q_count < 2 {
        return Ok(());
    }
    let mut inv = ShiftedSolver::new(&state.params.b)?.inverse()?;
    let mut order: Vec<(usize, usize)> = (0..q_count)
        .flat_map(|q| (0..q_count).filter(move |&r| r != q).map(move |r| (q, r)))
        .collect();
    order.shuffle(rng);
    for (q, r) in order {
        let s2 = state.params.sigma2[q];
        let old = state.params.b[(q, r)];
        let prior_var = state.gamma_beta[(q, r)] * state.nu_beta[(q, r)];
        // sufficient statistics of the row-q likelihood along B[q, r]
        let mut syy = 0.0;
        let mut syr = 0.0;
        for i in 0..n {
            let w = state.tau[(i, q)] / s2;
            let y = data.y[(i, r)];
            syy += w * y * y;
            syr += w * y * state.resid[(i, q)];
        }
        let (proposal, mut log_ratio) = match opts.b_proposal {
            BProposal::RandomWalk => {
                let prop = draw_normal(old, state.b_step[(q, r)].powi(2), rng);
                let d = prop - old;
                let lik = d * syr - 0.5 * d * d * syy;
                let prior = -(prop * prop - old * old) / (2.0 * prior_var);
                (prop, lik + prior)
            }
            BProposal::Conditional => {
                let prec = 1.0 / prior_var + syy;
                let lin = syr + old * syy;
                (draw_normal(lin / prec, 1.0 / prec, rng), 0.0)
            }
        };
        let delta = proposal - old;
        // det(I − B') = det(I − B) · (1 − Δ · (I − B)⁻¹[r, q])
        let factor = 1.0 - delta * inv[(r, q)];
        let accepted = if factor <= 0.0 {
            false
        } else {
            log_ratio += n as f64 * factor.ln();
            let u: f64 = rng.random();
            if u.ln() < log_ratio {
                state.params.b[(q, r)] = proposal;
                if is_stable(&state.params.b) {
                    true
                } else {
                    state.params.b[(q, r)] = old;
                    false
                }
            } else {
                false
            }
        };
        stats.b_entry.record(accepted);
        if accepted {
            for i in 0..n {
                state.resid[(i, q)] -= delta * data.y[(i, r)];
            }
            let col = inv.column(q).clone_owned();
            let row = inv.row(r).clone_owned();
            inv += (col * row) * (delta / factor);
        }
        if adapt > 0.0 && opts.b_proposal == BProposal::RandomWalk {
            let target = 0.35;
            let step = state.b_step[(q, r)] * (adapt * (f64::from(u8::from(accepted)) - target)).exp();
            state.b_step[(q, r)] = step.clamp(1e-5, 2.0);
        }
    }
    let mut slab_count = 0usize;
    for q in 0..q_count {
        for r in 0..q_count {
            if q == r {
                continue;
            }
            let (g, nu) = update_indicator_and_variance(
                state.params.b[(q, r)],
                state.nu_beta[(q, r)],
                state.rho_beta,
                hyper,
                rng,
            )?;
            state.gamma_beta[(q, r)] = g;
            state.nu_beta[(q, r)] = nu;
            slab_count += usize::from(g == 1.0);
        }
    }
    let total = q_count * (q_count - 1);
    state.rho_beta = draw_beta(
        hyper.a_rho + slab_count as f64,
        hyper.b_rho + (total - slab_count) as f64,
        rng,
    )?;
    Ok(())
}

/// Joint normal update of the non-zero loadings in each row of `L`.
pub fn update_l_rows<R: Rng + ?Sized>(state: &mut SamplerState, rng: &mut R) -> Result<()> {
    let n = state.n();
    let active = state.active_columns();
    if active.is_empty() {
        return Ok(());
    }
    let mut e_tilde = vec![0.0; n];
    for q in 0..state.q() {
        let cols: Vec<usize> = active.iter().copied().filter(|&p| state.delta[(q, p)]).collect();
        let k = cols.len();
        if k == 0 {
            continue;
        }
        for i in 0..n {
            let mut v = state.resid[(i, q)];
            for &p in &cols {
                v += state.params.l[(q, p)] * state.c[(i, p)];
            }
            e_tilde[i] = v;
        }
        let mut prec = vec![0.0; k * k];
        let mut h = vec![0.0; k];
        for i in 0..n {
            let t = state.tau[(i, q)];
            for (a, &pa) in cols.iter().enumerate() {
                let ca = t * state.c[(i, pa)];
                h[a] += ca * e_tilde[i];
                for (b, &pb) in cols.iter().enumerate().take(a + 1) {
                    prec[a * k + b] += ca * state.c[(i, pb)];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                prec[b * k + a] = prec[a * k + b];
            }
            prec[a * k + a] += 1.0 / state.kappa;
        }
        draw_gaussian_canonical(&mut prec, &mut h, k, state.params.sigma2[q], rng)?;
        for (a, &p) in cols.iter().enumerate() {
            state.params.l[(q, p)] = h[a];
        }
        for i in 0..n {
            let mut v = e_tilde[i];
            for (a, &p) in cols.iter().enumerate() {
                v -= h[a] * state.c[(i, p)];
            }
            state.resid[(i, q)] = v;
        }
    }
    Ok(())
}

/// Conjugate quantities for loading `(q, p)` with that loading's own
/// contribution removed from the residual: likelihood precision
/// `Σ τ C²/σ²`, linear term `Σ τ C r/σ²`, and the prior variance `κσ²`.
#[derive(Debug, Clone, Copy)]
pub struct LoadingStats {
    pub lik_prec: f64,
    pub lin: f64,
    pub prior_var: f64,
}

impl LoadingStats {
    pub fn compute(state: &SamplerState, q: usize, p: usize) -> Self {
        let s2 = state.params.sigma2[q];
        let current = state.params.l[(q, p)];
        let (mut lik_prec, mut lin) = (0.0, 0.0);
        for i in 0..state.n() {
            let w = state.tau[(i, q)] / s2;
            let c = state.c[(i, p)];
            lik_prec += w * c * c;
            lin += w * c * (state.resid[(i, q)] + current * c);
        }
        Self {
            lik_prec,
            lin,
            prior_var: state.kappa * s2,
        }
    }

    pub fn post_prec(&self) -> f64 {
        self.lik_prec + 1.0 / self.prior_var
    }

    pub fn post_mean(&self) -> f64 {
        self.lin / self.post_prec()
    }

    /// Log Bayes factor of including the loading (integrated against its
    /// normal prior) versus excluding it.
    pub fn log_bayes_factor(&self) -> f64 {
        -0.5 * (self.prior_var * self.lik_prec).ln_1p() + 0.5 * self.lin * self.lin / self.post_prec()
    }

    /// Log density of `value` under the conditional normal.
    pub fn ln_conditional(&self, value: f64) -> f64 {
        crate::distributions::ln_normal(value, self.post_mean(), 1.0 / self.post_prec())
    }
}

/// Sets loading `(q, p)` to `value` (zero when excluded) and updates the
/// residual cache.
pub fn set_loading(state: &mut SamplerState, q: usize, p: usize, include: bool, value: f64) {
    let value = if include { value } else { 0.0 };
    let d = value - state.params.l[(q, p)];
    state.delta[(q, p)] = include;
    state.params.l[(q, p)] = value;
    if d != 0.0 {
        for i in 0..state.n() {
            state.resid[(i, q)] -= d * state.c[(i, p)];
        }
    }
}

/// Draws loading `(q, p)` from its conditional normal and installs it.
pub fn draw_loading<R: Rng + ?Sized>(state: &mut SamplerState, q: usize, p: usize, rng: &mut R) -> f64 {
    let st = LoadingStats::compute(state, q, p);
    let value = draw_normal(st.post_mean(), 1.0 / st.post_prec(), rng);
    set_loading(state, q, p, true, value);
    value
}

/// Partially collapsed update of each indicator below the pivot: the
/// indicator is drawn with its loading integrated out, then the loading is
/// drawn given the indicator.
pub fn update_delta<R: Rng + ?Sized>(state: &mut SamplerState, rng: &mut R) {
    for p in state.active_columns() {
        let pivot = state.pivots[p].expect("active column has a pivot");
        let z = state.zeta[p];
        let prior_log_odds = z.ln() - (1.0 - z).ln();
        for q in (pivot + 1)..state.q() {
            let st = LoadingStats::compute(state, q, p);
            let include = draw_bernoulli_log_odds(prior_log_odds + st.log_bayes_factor(), rng);
            if include {
                let value = draw_normal(st.post_mean(), 1.0 / st.post_prec(), rng);
                set_loading(state, q, p, true, value);
            } else {
                set_loading(state, q, p, false, 0.0);
            }
        }
    }
}

pub fn update_kappa<R: Rng + ?Sized>(
    state: &mut SamplerState,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    let (mut shape, mut scale) = (hyper.a_kappa, hyper.b_kappa);
    for p in state.active_columns() {
        for q in 0..state.q() {
            if state.delta[(q, p)] {
                shape += 0.5;
                scale += 0.5 * state.params.l[(q, p)].powi(2) / state.params.sigma2[q];
            }
        }
    }
    state.kappa = draw_inverse_gamma(shape, scale, rng)?;
    Ok(())
}

/// Beta parameters of the column-inclusion probability of active column `p`.
pub fn zeta_posterior(state: &SamplerState, p: usize) -> (f64, f64) {
    let pivot = state.pivots[p].expect("active column has a pivot");
    let d = state.column_count(p) as f64;
    let below = (state.q() - 1 - pivot) as f64;
    (state.a_p() + d - 1.0, state.a2 + below - (d - 1.0))
}

pub fn update_zeta<R: Rng + ?Sized>(state: &mut SamplerState, rng: &mut R) -> Result<()> {
    for p in state.active_columns() {
        let (alpha, beta) = zeta_posterior(state, p);
        state.zeta[p] = draw_beta(alpha, beta, rng)?;
    }
    Ok(())
}

/// Log conditional target of `(a1, a2)`: inverse-gamma priors, the beta
/// prior of every active `ζ_p`, and the column-activity prior.
pub fn ln_a_target(state: &SamplerState, hyper: &Hyperparameters, a1: f64, a2: f64) -> f64 {
    let mut lp = ln_inverse_gamma(a1, hyper.b1, hyper.c1) + ln_inverse_gamma(a2, hyper.b2, hyper.c2);
    let pm = state.p_max();
    if pm > 0 {
        let a_p = a1 * a2 / pm as f64;
        for p in state.active_columns() {
            lp += ln_beta_pdf(state.zeta[p], a_p, a2);
        }
        lp += ln_activity_prior(state.p_star(), pm, a_p, a2);
    }
    lp
}

/// Coordinate-wise log-scale random-walk Metropolis–Hastings for `(a1, a2)`.
pub fn update_a1_a2<R: Rng + ?Sized>(
    state: &mut SamplerState,
    hyper: &Hyperparameters,
    opts: &SamplerOptions,
    stats: &mut AcceptanceStats,
    rng: &mut R,
) {
    if state.p_max() == 0 {
        return;
    }
    for coord in 0..2 {
        let (a1, a2) = (state.a1, state.a2);
        let current = if coord == 0 { a1 } else { a2 };
        let proposal = current * draw_normal(0.0, opts.a_step * opts.a_step, rng).exp();
        let (n1, n2) = if coord == 0 { (proposal, a2) } else { (a1, proposal) };
        let log_ratio = ln_a_target(state, hyper, n1, n2) - ln_a_target(state, hyper, a1, a2)
            + proposal.ln()
            - current.ln();
        let u: f64 = rng.random();
        let accepted = log_ratio.is_finite() && u.ln() < log_ratio;
        if accepted {
            state.a1 = n1;
            state.a2 = n2;
        }
        stats.a1_a2.record(accepted);
    }
}

/// Per-observation multivariate normal update of the active confounders.
pub fn update_c<R: Rng + ?Sized>(state: &mut SamplerState, rng: &mut R) -> Result<()> {
    let active = state.active_columns();
    let k = active.len();
    if k == 0 {
        return Ok(());
    }
    let q_count = state.q();
    let rows: Vec<Vec<(usize, usize, f64)>> = (0..q_count)
        .map(|q| {
            active
                .iter()
                .enumerate()
                .filter(|(_, &p)| state.delta[(q, p)])
                .map(|(a, &p)| (a, p, state.params.l[(q, p)]))
                .collect()
        })
        .collect();
    let mut prec = vec![0.0; k * k];
    let mut h = vec![0.0; k];
    let mut e_tilde = vec![0.0; q_count];
    for i in 0..state.n() {
        prec.iter_mut().for_each(|v| *v = 0.0);
        h.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..k {
            prec[a * k + a] = 1.0;
        }
        for q in 0..q_count {
            let mut e = state.resid[(i, q)];
            for &(_, p, l) in &rows[q] {
                e += l * state.c[(i, p)];
            }
            e_tilde[q] = e;
            let w = state.tau[(i, q)] / state.params.sigma2[q];
            for &(a, _, la) in &rows[q] {
                h[a] += w * la * e;
                for &(b, _, lb) in &rows[q] {
                    prec[a * k + b] += w * la * lb;
                }
            }
        }
        draw_gaussian_canonical(&mut prec, &mut h, k, 1.0, rng)
            .map_err(|e| Error::Numerical(format!("confounder update at row {i}: {e}")))?;
        for (a, &p) in active.iter().enumerate() {
            state.c[(i, p)] = h[a];
        }
        for q in 0..q_count {
            let mut e = e_tilde[q];
            for &(a, _, l) in &rows[q] {
                e -= l * h[a];
            }
            state.resid[(i, q)] = e;
        }
    }
    Ok(())
}

pub fn update_tau<R: Rng + ?Sized>(
    state: &mut SamplerState,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<()> {
    for q in 0..state.q() {
        let sd = state.params.sigma2[q].sqrt();
        for i in 0..state.n() {
            let r = state.resid[(i, q)].abs().max(opts.residual_floor);
            state.tau[(i, q)] = draw_inverse_gaussian(sd / (2.0 * r), 0.25, rng)?;
        }
    }
    Ok(())
}

/// Inverse-gamma parameters of the `σ²_q` update.
pub fn sigma2_posterior(
    state: &SamplerState,
    hyper: &Hyperparameters,
    opts: &SamplerOptions,
    q: usize,
) -> (f64, f64) {
    let n = state.n();
    let mut shape = hyper.a_sigma + 0.5 * n as f64;
    let mut scale = hyper.b_sigma;
    for i in 0..n {
        scale += 0.5 * state.resid[(i, q)].powi(2) * state.tau[(i, q)];
    }
    if opts.exact_sigma2 {
        for p in state.active_columns() {
            if state.delta[(q, p)] {
                shape += 0.5;
                scale += 0.5 * state.params.l[(q, p)].powi(2) / state.kappa;
            }
        }
    }
    (shape, scale)
}

pub fn update_sigma2<R: Rng + ?Sized>(
    state: &mut SamplerState,
    hyper: &Hyperparameters,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<()> {
    for q in 0..state.q() {
        let (shape, scale) = sigma2_posterior(state, hyper, opts, q);
        state.params.sigma2[q] = draw_inverse_gamma(shape, scale, rng)?;
    }
    Ok(())
}
