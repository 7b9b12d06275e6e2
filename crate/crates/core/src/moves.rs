//! Structure moves on the confounder loadings: pivot shift, switch and
//! add/delete within the current set of active columns, and the
//! dimension-changing split/merge pair that activates or retires a column.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    draw_beta, draw_normal, ln_beta_pdf, ln_inverse_gamma, ln_normal, Hyperparameters,
};
use crate::error::{Error, Result};
use crate::gibbs::{draw_loading, set_loading, AcceptanceStats, LoadingStats};
use crate::state::{ln_activity_prior, SamplerState};

/// How the latent scores of a newly created column are proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScores {
    /// Standard normal prior draws.
    Prior,
    /// Draws from the scores' conditional given the proposed loading, which
    /// lets the new column pick up structure in the split row's residual.
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveConfig {
    pub p_shift: f64,
    pub p_switch: f64,
    /// probability of add within the add/delete family
    pub p_add: f64,
    /// per-sweep probability of attempting a split or merge
    pub p_split_merge: f64,
    pub split_scores: SplitScores,
}

impl Default for MoveConfig {
    fn default() -> Self {
        Self {
            p_shift: 0.4,
            p_switch: 0.4,
            p_add: 0.5,
            p_split_merge: 1.0,
            split_scores: SplitScores::Conditional,
        }
    }
}

impl MoveConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !ok(self.p_shift) || !ok(self.p_switch) || self.p_shift + self.p_switch > 1.0 {
            return Err(Error::Config(
                "p_shift and p_switch must be probabilities summing to at most 1".into(),
            ));
        }
        if !ok(self.p_split_merge) {
            return Err(Error::Config("p_split_merge must be a probability".into()));
        }
        if !(self.p_add > 0.0 && self.p_add < 1.0) {
            return Err(Error::Config("p_add must lie strictly between 0 and 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveOutcome {
    Accepted,
    Rejected,
    /// the move had no legal proposal from this state
    Skipped,
}

fn metropolis<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

fn record(counter: &mut crate::gibbs::MhCounter, outcome: MoveOutcome) {
    if outcome != MoveOutcome::Skipped {
        counter.record(outcome == MoveOutcome::Accepted);
    }
}

fn pivot_of(state: &SamplerState, p: usize) -> usize {
    state.pivots[p].expect("active column has a pivot")
}

/// First non-zero row strictly below the pivot of column `p`, or `Q`.
fn next_nonzero(state: &SamplerState, p: usize) -> usize {
    let piv = pivot_of(state, p);
    ((piv + 1)..state.q()).find(|&i| state.delta[(i, p)]).unwrap_or(state.q())
}

/// Candidate rows for a shift of column `p`: unused rows above the first
/// non-zero entry below its pivot.
pub fn shift_candidates(state: &SamplerState, p: usize) -> Vec<usize> {
    let limit = next_nonzero(state, p);
    state.unused_rows().into_iter().filter(|&i| i < limit).collect()
}

/// Candidate new pivot rows for an add on column `p`: unused rows above its
/// pivot.
pub fn add_candidates(state: &SamplerState, p: usize) -> Vec<usize> {
    let piv = pivot_of(state, p);
    state.unused_rows().into_iter().filter(|&i| i < piv).collect()
}

/// Whether a delete of the pivot entry of column `p` is legal.
pub fn delete_legal(state: &SamplerState, p: usize) -> bool {
    let next = next_nonzero(state, p);
    next < state.q() && !state.pivots.contains(&Some(next))
}

/// Log of the `ζ_p` Bernoulli terms of a column with the given pivot and
/// count of non-zero entries.
fn ln_zeta_terms(q: usize, pivot: usize, count: usize, zeta: f64) -> f64 {
    let ones = count as f64 - 1.0;
    let zeros = (q - 1 - pivot) as f64 - ones;
    let mut lp = 0.0;
    if ones > 0.0 {
        lp += ones * zeta.ln();
    }
    if zeros > 0.0 {
        lp += zeros * (1.0 - zeta).ln();
    }
    lp
}

/// Log acceptance ratio of moving the pivot of column `p` to row `new_row`,
/// with both loadings integrated out.
pub fn shift_log_ratio(state: &SamplerState, p: usize, new_row: usize) -> f64 {
    let (q, piv, d, z) = (state.q(), pivot_of(state, p), state.column_count(p), state.zeta[p]);
    ln_zeta_terms(q, new_row, d, z) - ln_zeta_terms(q, piv, d, z)
        + LoadingStats::compute(state, new_row, p).log_bayes_factor()
        - LoadingStats::compute(state, piv, p).log_bayes_factor()
}

pub fn pivot_shift<R: Rng + ?Sized>(state: &mut SamplerState, p: usize, rng: &mut R) -> MoveOutcome {
    let candidates = shift_candidates(state, p);
    let Some(&new_row) = candidates.choose(rng) else {
        return MoveOutcome::Skipped;
    };
    if !metropolis(shift_log_ratio(state, p, new_row), rng) {
        return MoveOutcome::Rejected;
    }
    let piv = pivot_of(state, p);
    set_loading(state, piv, p, false, 0.0);
    state.pivots[p] = Some(new_row);
    draw_loading(state, new_row, p, rng);
    MoveOutcome::Accepted
}

/// Rows over which a switch of columns `p` and `p2` exchanges entries.
fn switch_range(state: &SamplerState, p: usize, p2: usize) -> (usize, usize) {
    let (a, b) = (pivot_of(state, p), pivot_of(state, p2));
    (a.min(b), a.max(b))
}

/// Log acceptance ratio (the target ratio) of exchanging the `δ` and `L`
/// entries of columns `p` and `p2` between their two pivot rows.
pub fn switch_log_ratio(state: &SamplerState, p: usize, p2: usize) -> f64 {
    let q = state.q();
    let (lo, hi) = switch_range(state, p, p2);
    let mut lp = 0.0;
    for row in lo..=hi {
        let (l1, l2) = (state.params.l[(row, p)], state.params.l[(row, p2)]);
        if l1 == l2 {
            continue;
        }
        let d = l2 - l1;
        let s2 = state.params.sigma2[row];
        for i in 0..state.n() {
            let r = state.resid[(i, row)];
            let new = r - d * (state.c[(i, p)] - state.c[(i, p2)]);
            lp -= state.tau[(i, row)] * (new * new - r * r) / (2.0 * s2);
        }
    }
    let count_after = |col: usize, other: usize| {
        (0..q)
            .filter(|&i| {
                if (lo..=hi).contains(&i) {
                    state.delta[(i, other)]
                } else {
                    state.delta[(i, col)]
                }
            })
            .count()
    };
    let (pv1, pv2) = (pivot_of(state, p), pivot_of(state, p2));
    lp += ln_zeta_terms(q, pv2, count_after(p, p2), state.zeta[p])
        + ln_zeta_terms(q, pv1, count_after(p2, p), state.zeta[p2])
        - ln_zeta_terms(q, pv1, state.column_count(p), state.zeta[p])
        - ln_zeta_terms(q, pv2, state.column_count(p2), state.zeta[p2]);
    lp
}

pub fn apply_switch(state: &mut SamplerState, p: usize, p2: usize) {
    let (lo, hi) = switch_range(state, p, p2);
    let (pv1, pv2) = (pivot_of(state, p), pivot_of(state, p2));
    for row in lo..=hi {
        let (d1, l1) = (state.delta[(row, p)], state.params.l[(row, p)]);
        let (d2, l2) = (state.delta[(row, p2)], state.params.l[(row, p2)]);
        set_loading(state, row, p, d2, l2);
        set_loading(state, row, p2, d1, l1);
    }
    state.pivots[p] = Some(pv2);
    state.pivots[p2] = Some(pv1);
}

pub fn pivot_switch<R: Rng + ?Sized>(state: &mut SamplerState, p: usize, rng: &mut R) -> MoveOutcome {
    let others: Vec<usize> = state.active_columns().into_iter().filter(|&j| j != p).collect();
    let Some(&p2) = others.choose(rng) else {
        return MoveOutcome::Skipped;
    };
    if !metropolis(switch_log_ratio(state, p, p2), rng) {
        return MoveOutcome::Rejected;
    }
    apply_switch(state, p, p2);
    MoveOutcome::Accepted
}

/// Log acceptance ratio of adding an entry of column `p` at `new_row` above
/// its pivot, making it the new pivot.
pub fn add_log_ratio(state: &SamplerState, cfg: &MoveConfig, p: usize, new_row: usize) -> f64 {
    let (q, piv, d, z) = (state.q(), pivot_of(state, p), state.column_count(p), state.zeta[p]);
    let n_candidates = add_candidates(state, p).len() as f64;
    ln_zeta_terms(q, new_row, d + 1, z) - ln_zeta_terms(q, piv, d, z)
        + LoadingStats::compute(state, new_row, p).log_bayes_factor()
        + (1.0 - cfg.p_add).ln()
        - (cfg.p_add / n_candidates).ln()
}

/// Log acceptance ratio of deleting the pivot entry of column `p`; the next
/// non-zero entry becomes the pivot.
pub fn delete_log_ratio(state: &SamplerState, cfg: &MoveConfig, p: usize) -> f64 {
    let (q, piv, d, z) = (state.q(), pivot_of(state, p), state.column_count(p), state.zeta[p]);
    let next = next_nonzero(state, p);
    let reverse_candidates = state
        .unused_rows()
        .into_iter()
        .filter(|&i| i < next)
        .count()
        + 1;
    ln_zeta_terms(q, next, d - 1, z) - ln_zeta_terms(q, piv, d, z)
        - LoadingStats::compute(state, piv, p).log_bayes_factor()
        + (cfg.p_add / reverse_candidates as f64).ln()
        - (1.0 - cfg.p_add).ln()
}

pub fn pivot_add<R: Rng + ?Sized>(
    state: &mut SamplerState,
    cfg: &MoveConfig,
    p: usize,
    rng: &mut R,
) -> MoveOutcome {
    let candidates = add_candidates(state, p);
    let Some(&new_row) = candidates.choose(rng) else {
        return MoveOutcome::Skipped;
    };
    if !metropolis(add_log_ratio(state, cfg, p, new_row), rng) {
        return MoveOutcome::Rejected;
    }
    state.pivots[p] = Some(new_row);
    draw_loading(state, new_row, p, rng);
    MoveOutcome::Accepted
}

pub fn pivot_delete<R: Rng + ?Sized>(
    state: &mut SamplerState,
    cfg: &MoveConfig,
    p: usize,
    rng: &mut R,
) -> MoveOutcome {
    if !delete_legal(state, p) {
        return MoveOutcome::Skipped;
    }
    if !metropolis(delete_log_ratio(state, cfg, p), rng) {
        return MoveOutcome::Rejected;
    }
    let next = next_nonzero(state, p);
    let piv = pivot_of(state, p);
    set_loading(state, piv, p, false, 0.0);
    state.pivots[p] = Some(next);
    MoveOutcome::Accepted
}

/// One pivot move (shift, switch or add/delete) per active column.
pub fn update_pivots<R: Rng + ?Sized>(
    state: &mut SamplerState,
    cfg: &MoveConfig,
    stats: &mut AcceptanceStats,
    rng: &mut R,
) {
    for p in state.active_columns() {
        let u: f64 = rng.random();
        if u < cfg.p_shift {
            let out = pivot_shift(state, p, rng);
            record(&mut stats.pivot_shift, out);
        } else if u < cfg.p_shift + cfg.p_switch {
            let out = pivot_switch(state, p, rng);
            record(&mut stats.pivot_switch, out);
        } else if rng.random::<f64>() < cfg.p_add {
            let out = pivot_add(state, cfg, p, rng);
            record(&mut stats.pivot_add, out);
        } else {
            let out = pivot_delete(state, cfg, p, rng);
            record(&mut stats.pivot_delete, out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimensionMove {
    Split,
    Merge,
}

/// Whether a split is legal with `k` active columns out of `p_max`.
pub fn split_legal(k: usize, p_max: usize) -> bool {
    k < p_max
}

/// Whether a merge is legal with `k` active columns of which `singles` have a
/// single entry. Retiring the last column is not allowed.
pub fn merge_legal(k: usize, singles: usize) -> bool {
    singles >= 1 && !(k == 1 && singles == 1)
}

/// Picks split or merge with probability 1/2 each; a blocked choice yields
/// no move.
pub fn choose_dimension_move<R: Rng + ?Sized>(
    k: usize,
    singles: usize,
    p_max: usize,
    rng: &mut R,
) -> Option<DimensionMove> {
    if rng.random::<f64>() < 0.5 {
        split_legal(k, p_max).then_some(DimensionMove::Split)
    } else {
        merge_legal(k, singles).then_some(DimensionMove::Merge)
    }
}

/// Probability of proposing one particular split: the move, then one of the
/// `p_max − k` free slots, then one of the `Q − k` unused pivot rows.
pub fn q_split(k: usize, p_max: usize, q: usize) -> f64 {
    0.5 / ((p_max - k) as f64 * (q - k) as f64)
}

/// Probability of proposing one particular merge among `singles` candidates.
pub fn q_merge(singles: usize) -> f64 {
    0.5 / singles as f64
}

/// A proposed split: new column slot and pivot row, the signed variance
/// fraction `u ∈ (−1, 1)`, the new column's `ζ`, and its latent scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitProposal {
    pub column: usize,
    pub row: usize,
    pub u: f64,
    pub zeta: f64,
    pub scores: Vec<f64>,
}

impl SplitProposal {
    /// `(σ²_new, L)` given the current `σ²` of the split row.
    pub fn transform(&self, sigma2: f64) -> (f64, f64) {
        ((1.0 - self.u * self.u) * sigma2, (8.0 * sigma2).sqrt() * self.u)
    }
}

/// Mean and variance of the conditional of one latent score given the new
/// loading, the new error scale and the split row's residual.
fn score_conditional(l: f64, sigma2_new: f64, tau: f64, resid: f64) -> (f64, f64) {
    let w = tau / sigma2_new;
    let var = 1.0 / (1.0 + l * l * w);
    (var * l * w * resid, var)
}

fn ln_score_proposal(
    cfg: &MoveConfig,
    state: &SamplerState,
    row: usize,
    l: f64,
    sigma2_new: f64,
    base_resid: impl Fn(usize) -> f64,
    scores: &[f64],
) -> f64 {
    match cfg.split_scores {
        SplitScores::Prior => scores.iter().map(|&c| ln_normal(c, 0.0, 1.0)).sum(),
        SplitScores::Conditional => scores
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let (m, v) = score_conditional(l, sigma2_new, state.tau[(i, row)], base_resid(i));
                ln_normal(c, m, v)
            })
            .sum(),
    }
}

pub fn propose_split<R: Rng + ?Sized>(
    state: &SamplerState,
    cfg: &MoveConfig,
    rng: &mut R,
) -> Result<Option<SplitProposal>> {
    let free: Vec<usize> = (0..state.p_max()).filter(|&p| state.pivots[p].is_none()).collect();
    let unused = state.unused_rows();
    let (Some(&column), Some(&row)) = (free.choose(rng), unused.choose(rng)) else {
        return Ok(None);
    };
    let magnitude: f64 = rng.random();
    let u = if rng.random::<bool>() { magnitude } else { -magnitude };
    let below = (state.q() - 1 - row) as f64;
    let zeta = draw_beta(state.a_p(), state.a2 + below, rng)?;
    let (sigma2_new, l) = (
        (1.0 - u * u) * state.params.sigma2[row],
        (8.0 * state.params.sigma2[row]).sqrt() * u,
    );
    let scores = (0..state.n())
        .map(|i| match cfg.split_scores {
            SplitScores::Prior => draw_normal(0.0, 1.0, rng),
            SplitScores::Conditional => {
                let (m, v) =
                    score_conditional(l, sigma2_new, state.tau[(i, row)], state.resid[(i, row)]);
                draw_normal(m, v, rng)
            }
        })
        .collect();
    Ok(Some(SplitProposal { column, row, u, zeta, scores }))
}

/// Log Metropolis–Hastings ratio of a split, evaluated in the current
/// (smaller) state.
pub fn split_log_ratio(
    state: &SamplerState,
    hyper: &Hyperparameters,
    cfg: &MoveConfig,
    prop: &SplitProposal,
) -> f64 {
    let (q, pm, k, singles) = (state.q(), state.p_max(), state.p_star(), state.p_single());
    let (a_p, a2, kappa, r) = (state.a_p(), state.a2, state.kappa, prop.row);
    let sigma2 = state.params.sigma2[r];
    let (sigma2_new, l) = prop.transform(sigma2);
    if !(sigma2_new > 0.0) {
        return f64::NEG_INFINITY;
    }
    let below = (q - 1 - r) as f64;
    let mut lp = ln_activity_prior(k + 1, pm, a_p, a2) - ln_activity_prior(k, pm, a_p, a2);
    lp -= ((q - k) as f64).ln();
    lp += ln_beta_pdf(prop.zeta, a_p, a2) + below * (1.0 - prop.zeta).ln()
        - ln_beta_pdf(prop.zeta, a_p, a2 + below);
    lp += ln_normal(l, 0.0, kappa * sigma2_new);
    for p in state.active_columns() {
        if state.delta[(r, p)] {
            let v = state.params.l[(r, p)];
            lp += ln_normal(v, 0.0, kappa * sigma2_new) - ln_normal(v, 0.0, kappa * sigma2);
        }
    }
    lp += ln_inverse_gamma(sigma2_new, hyper.a_sigma, hyper.b_sigma)
        - ln_inverse_gamma(sigma2, hyper.a_sigma, hyper.b_sigma);
    for (i, &c) in prop.scores.iter().enumerate() {
        let t = state.tau[(i, r)];
        let res = state.resid[(i, r)];
        lp += ln_normal(c, 0.0, 1.0);
        lp += ln_normal(res - l * c, 0.0, sigma2_new / t) - ln_normal(res, 0.0, sigma2 / t);
    }
    lp -= ln_score_proposal(cfg, state, r, l, sigma2_new, |i| state.resid[(i, r)], &prop.scores);
    // Jacobian of (σ², u) -> (σ²_new, L), and the density 1/2 of the signed u
    lp += 0.5 * (8.0 * sigma2).ln() + std::f64::consts::LN_2;
    lp += q_merge(singles + 1).ln() - q_split(k, pm, q).ln();
    lp
}

pub fn apply_split(state: &mut SamplerState, prop: &SplitProposal) {
    let (p, r) = (prop.column, prop.row);
    let (sigma2_new, l) = prop.transform(state.params.sigma2[r]);
    for (i, &c) in prop.scores.iter().enumerate() {
        state.c[(i, p)] = c;
    }
    state.pivots[p] = Some(r);
    state.zeta[p] = prop.zeta;
    state.params.sigma2[r] = sigma2_new;
    set_loading(state, r, p, true, l);
}

/// Log Metropolis–Hastings ratio of merging the single-entry column `p`
/// back into its row's error, evaluated in the current (larger) state.
pub fn merge_log_ratio(
    state: &SamplerState,
    hyper: &Hyperparameters,
    cfg: &MoveConfig,
    p: usize,
) -> f64 {
    let (q, pm, k, singles) = (state.q(), state.p_max(), state.p_star(), state.p_single());
    let (a_p, a2, kappa) = (state.a_p(), state.a2, state.kappa);
    let r = pivot_of(state, p);
    let l = state.params.l[(r, p)];
    let sigma2_new = state.params.sigma2[r];
    let sigma2 = sigma2_new + l * l / 8.0;
    let zeta = state.zeta[p];
    let below = (q - 1 - r) as f64;
    let mut lp = ln_activity_prior(k - 1, pm, a_p, a2) - ln_activity_prior(k, pm, a_p, a2);
    lp += ((q - k + 1) as f64).ln();
    lp -= ln_beta_pdf(zeta, a_p, a2) + below * (1.0 - zeta).ln() - ln_beta_pdf(zeta, a_p, a2 + below);
    lp -= ln_normal(l, 0.0, kappa * sigma2_new);
    for other in state.active_columns() {
        if other != p && state.delta[(r, other)] {
            let v = state.params.l[(r, other)];
            lp += ln_normal(v, 0.0, kappa * sigma2) - ln_normal(v, 0.0, kappa * sigma2_new);
        }
    }
    lp += ln_inverse_gamma(sigma2, hyper.a_sigma, hyper.b_sigma)
        - ln_inverse_gamma(sigma2_new, hyper.a_sigma, hyper.b_sigma);
    let base = |i: usize| state.resid[(i, r)] + l * state.c[(i, p)];
    let scores: Vec<f64> = (0..state.n()).map(|i| state.c[(i, p)]).collect();
    for (i, &c) in scores.iter().enumerate() {
        let t = state.tau[(i, r)];
        lp -= ln_normal(c, 0.0, 1.0);
        lp += ln_normal(base(i), 0.0, sigma2 / t) - ln_normal(state.resid[(i, r)], 0.0, sigma2_new / t);
    }
    lp += ln_score_proposal(cfg, state, r, l, sigma2_new, base, &scores);
    lp -= 0.5 * (8.0 * sigma2).ln() + std::f64::consts::LN_2;
    lp += q_split(k - 1, pm, q).ln() - q_merge(singles).ln();
    lp
}

pub fn apply_merge(state: &mut SamplerState, p: usize) {
    let r = pivot_of(state, p);
    let l = state.params.l[(r, p)];
    set_loading(state, r, p, false, 0.0);
    state.params.sigma2[r] += l * l / 8.0;
    state.pivots[p] = None;
    state.zeta[p] = 0.5;
    for i in 0..state.n() {
        state.c[(i, p)] = 0.0;
    }
}

/// One split-or-merge attempt.
pub fn dimension_step<R: Rng + ?Sized>(
    state: &mut SamplerState,
    hyper: &Hyperparameters,
    cfg: &MoveConfig,
    stats: &mut AcceptanceStats,
    rng: &mut R,
) -> Result<MoveOutcome> {
    if cfg.p_split_merge < 1.0 && rng.random::<f64>() >= cfg.p_split_merge {
        return Ok(MoveOutcome::Skipped);
    }
    let (k, singles, pm) = (state.p_star(), state.p_single(), state.p_max());
    let outcome = match choose_dimension_move(k, singles, pm, rng) {
        None => MoveOutcome::Skipped,
        Some(DimensionMove::Split) => {
            let Some(prop) = propose_split(state, cfg, rng)? else {
                return Ok(MoveOutcome::Skipped);
            };
            let accepted = metropolis(split_log_ratio(state, hyper, cfg, &prop), rng);
            if accepted {
                apply_split(state, &prop);
            }
            let out = if accepted { MoveOutcome::Accepted } else { MoveOutcome::Rejected };
            record(&mut stats.split, out);
            out
        }
        Some(DimensionMove::Merge) => {
            let singles: Vec<usize> = state
                .active_columns()
                .into_iter()
                .filter(|&p| state.column_count(p) == 1)
                .collect();
            let &p = singles.choose(rng).expect("merge is legal");
            let accepted = metropolis(merge_log_ratio(state, hyper, cfg, p), rng);
            if accepted {
                apply_merge(state, p);
            }
            let out = if accepted { MoveOutcome::Accepted } else { MoveOutcome::Rejected };
            record(&mut stats.merge, out);
            out
        }
    };
    Ok(outcome)
}
