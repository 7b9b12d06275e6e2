//! Chain driver, posterior summaries, graph extraction and convergence
//! diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{inverse_gamma_center, Hyperparameters};
use crate::error::{Error, Result};
use crate::gibbs::{self, AcceptanceStats};
use crate::graph_model::{serde_rows, Dataset};
use crate::moves::{self, MoveConfig};
use crate::rng::{substream, tag};
use crate::state::{compute_residuals, log_joint, SamplerOptions, SamplerState, Snapshot};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { iterations: 50_000, burn_in: 30_000, thin: 10, chains: 1, seed: 0 }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in > self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) exceeds iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Starting state: no edges, no confounders, intercepts at the column means,
/// error scales at a eighth of the column variances, unit mixture weights.
pub fn initialize_state(
    data: &Dataset,
    hyper: &Hyperparameters,
    opts: &SamplerOptions,
) -> Result<SamplerState> {
    data.validate_for_fit()?;
    let (n, q, s) = (data.n(), data.q(), data.s());
    hyper.validate(q)?;
    let pm = hyper.p_max;
    let mut mu = DVector::zeros(q);
    let mut sigma2 = DVector::zeros(q);
    for j in 0..q {
        let col = data.y.column(j);
        let mean = col.mean();
        let var = if n > 1 {
            col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            1.0
        };
        mu[j] = mean;
        sigma2[j] = var / 8.0;
    }
    let params = crate::graph_model::CausalParameters {
        mu,
        a: DMatrix::zeros(q, s),
        b: DMatrix::zeros(q, q),
        l: DMatrix::zeros(q, pm),
        sigma2,
    };
    let c = DMatrix::zeros(n, pm);
    let resid = compute_residuals(&params, &c, data);
    let nu = inverse_gamma_center(hyper.a_nu, hyper.b_nu);
    let rho = hyper.a_rho / (hyper.a_rho + hyper.b_rho);
    let (a1, a2) = if pm > 0 {
        (inverse_gamma_center(hyper.b1, hyper.c1), inverse_gamma_center(hyper.b2, hyper.c2))
    } else {
        (1.0, 1.0)
    };
    Ok(SamplerState {
        params,
        gamma_alpha: DMatrix::from_element(q, s, 1.0),
        nu_alpha: DMatrix::from_element(q, s, nu),
        rho_alpha: rho,
        gamma_beta: DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 } else { hyper.nu0 }),
        nu_beta: DMatrix::from_element(q, q, nu),
        rho_beta: rho,
        delta: DMatrix::from_element(q, pm, false),
        pivots: vec![None; pm],
        zeta: vec![0.5; pm],
        kappa: inverse_gamma_center(hyper.a_kappa, hyper.b_kappa),
        a1,
        a2,
        c,
        tau: DMatrix::from_element(n, q, 1.0),
        resid,
        b_step: DMatrix::from_element(q, q, opts.b_step),
        nu0: hyper.nu0,
    })
}

/// Robbins–Monro gain for the random-walk step adaptation at burn-in
/// iteration `t`.
fn adaptation_gain(t: usize) -> f64 {
    5.0 * (t as f64 + 10.0).powf(-0.6)
}

/// One full sweep in the fixed order μ, A, B, L rows, δ, pivots, κ, ζ,
/// (a1, a2), split/merge, C, τ, σ².
#[allow(clippy::too_many_arguments)]
pub fn sweep<R: Rng + ?Sized>(
    state: &mut SamplerState,
    data: &Dataset,
    hyper: &Hyperparameters,
    move_cfg: &MoveConfig,
    opts: &SamplerOptions,
    adapt: f64,
    stats: &mut AcceptanceStats,
    rng: &mut R,
) -> Result<()> {
    gibbs::update_mu(state, hyper, rng);
    gibbs::update_a_block(state, data, hyper, rng)?;
    gibbs::update_b_block(state, data, hyper, opts, adapt, stats, rng)?;
    gibbs::update_l_rows(state, rng)?;
    gibbs::update_delta(state, rng);
    moves::update_pivots(state, move_cfg, stats, rng);
    gibbs::update_kappa(state, hyper, rng)?;
    gibbs::update_zeta(state, rng)?;
    gibbs::update_a1_a2(state, hyper, opts, stats, rng);
    moves::dimension_step(state, hyper, move_cfg, stats, rng)?;
    gibbs::update_c(state, rng)?;
    gibbs::update_tau(state, opts, rng)?;
    gibbs::update_sigma2(state, hyper, opts, rng)?;
    Ok(())
}

/// Retained draws and traces of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub samples: Vec<Snapshot>,
    pub log_joint: Vec<f64>,
    pub p_star: Vec<usize>,
    /// retained `σ²` draws, one vector per retained state
    pub sigma2: Vec<Vec<f64>>,
    pub acceptance: AcceptanceStats,
}

fn state_dump(state: &SamplerState) -> String {
    format!(
        "p_star={} pivots={:?} kappa={:.4e} sigma2={:?} a1={:.4} a2={:.4}",
        state.p_star(),
        state.pivots,
        state.kappa,
        state.params.sigma2.as_slice(),
        state.a1,
        state.a2
    )
}

/// Runs one chain. Random-walk steps adapt during burn-in only; every
/// `thin`-th post-burn-in state is retained.
pub fn run_chain<R: Rng + ?Sized>(
    data: &Dataset,
    hyper: &Hyperparameters,
    chain: &ChainConfig,
    move_cfg: &MoveConfig,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<ChainOutput> {
    chain.validate()?;
    move_cfg.validate()?;
    opts.validate()?;
    let mut state = initialize_state(data, hyper, opts)?;
    let mut out = ChainOutput {
        samples: Vec::with_capacity(chain.retained_per_chain()),
        log_joint: Vec::new(),
        p_star: Vec::new(),
        sigma2: Vec::new(),
        acceptance: AcceptanceStats::default(),
    };
    for t in 0..chain.iterations {
        let adapt = if t < chain.burn_in { adaptation_gain(t) } else { 0.0 };
        sweep(&mut state, data, hyper, move_cfg, opts, adapt, &mut out.acceptance, rng).map_err(
            |e| match e {
                Error::Numerical(msg) => {
                    Error::Numerical(format!("{msg} (iteration {t}; {})", state_dump(&state)))
                }
                other => other,
            },
        )?;
        if t % 64 == 63 {
            state.refresh_residuals(data);
        }
        if t >= chain.burn_in && (t - chain.burn_in) % chain.thin == chain.thin - 1 {
            state.refresh_residuals(data);
            let lj = log_joint(&state, data, hyper);
            if !lj.is_finite() {
                return Err(Error::Numerical(format!(
                    "log joint is not finite at iteration {t} ({})",
                    state_dump(&state)
                )));
            }
            out.log_joint.push(lj);
            out.p_star.push(state.p_star());
            out.sigma2.push(state.params.sigma2.as_slice().to_vec());
            out.samples.push(Snapshot::capture(&state, t, lj));
        }
    }
    Ok(out)
}

/// Runs `chain.chains` independent chains, chain `c` on stream
/// `(seed, CHAIN, c)`.
pub fn run_chains(
    data: &Dataset,
    hyper: &Hyperparameters,
    chain: &ChainConfig,
    move_cfg: &MoveConfig,
    opts: &SamplerOptions,
) -> Result<Vec<ChainOutput>> {
    (0..chain.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(chain.seed, &[tag::CHAIN, c as u64]);
            run_chain(data, hyper, chain, move_cfg, opts, &mut rng)
        })
        .collect()
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    #[serde(with = "serde_rows")]
    pub incl_prob_B: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub incl_prob_A: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub incl_prob_L: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub mean_B: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub mean_A: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub mean_L: DMatrix<f64>,
    #[serde(with = "serde_rows::vector")]
    pub mean_mu: DVector<f64>,
    #[serde(with = "serde_rows::vector")]
    pub mean_sigma2: DVector<f64>,
    /// entry `k` is the fraction of retained states with `k` confounders
    pub p_star_histogram: Vec<f64>,
    pub modal_p_star: usize,
    pub n_samples: usize,
}

/// Active loading columns of a snapshot with signs fixed so that each
/// pivot entry is positive.
fn signed_columns(s: &Snapshot) -> Vec<(usize, DVector<f64>)> {
    s.pivots
        .iter()
        .enumerate()
        .filter_map(|(p, piv)| {
            piv.map(|r| {
                let col = s.l.column(p).clone_owned();
                let sign = if col[r] < 0.0 { -1.0 } else { 1.0 };
                (p, col * sign)
            })
        })
        .collect()
}

/// Maps each active column of `s` to an output slot: greedy matching to the
/// reference columns by largest absolute inner product, leftovers to the
/// first free slots. Returns `(source column, slot, sign)`.
fn align(s: &Snapshot, reference: &[DVector<f64>], p_max: usize) -> Vec<(usize, usize, f64)> {
    let cols = signed_columns(s);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ci, (_, v)) in cols.iter().enumerate() {
        for (ri, rv) in reference.iter().enumerate() {
            pairs.push((v.dot(rv).abs(), ci, ri));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut col_slot: Vec<Option<usize>> = vec![None; cols.len()];
    let mut slot_used = vec![false; p_max];
    for (_, ci, ri) in pairs {
        if col_slot[ci].is_none() && !slot_used[ri] {
            col_slot[ci] = Some(ri);
            slot_used[ri] = true;
        }
    }
    for slot in col_slot.iter_mut() {
        if slot.is_none() {
            let free = (0..p_max).find(|&k| !slot_used[k]).expect("slots available");
            *slot = Some(free);
            slot_used[free] = true;
        }
    }
    cols.iter()
        .zip(col_slot)
        .map(|((p, _), slot)| {
            let r = s.pivots[*p].expect("active");
            let sign = if s.l[(r, *p)] < 0.0 { -1.0 } else { 1.0 };
            (*p, slot.expect("assigned"), sign)
        })
        .collect()
}

/// Pools retained samples across chains and computes inclusion
/// frequencies and conditional means, after aligning loading columns to a
/// common reference.
pub fn summarize(chains: &[ChainOutput]) -> Result<PosteriorSummary> {
    let samples: Vec<&Snapshot> = chains.iter().flat_map(|c| c.samples.iter()).collect();
    summarize_samples(&samples)
}

pub fn summarize_samples(samples: &[&Snapshot]) -> Result<PosteriorSummary> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Validation("no retained samples to summarise".into()))?;
    let (q, s, pm) = (first.b.nrows(), first.a.ncols(), first.l.ncols());
    let m = samples.len() as f64;
    let mut hist = vec![0.0; pm + 1];
    for smp in samples {
        hist[smp.p_star] += 1.0;
    }
    let modal = hist
        .iter()
        .enumerate()
        .fold((0, -1.0), |best, (k, &c)| if c > best.1 { (k, c) } else { best })
        .0;
    hist.iter_mut().for_each(|h| *h /= m);

    // reference: highest log joint among modal-dimension samples, columns
    // ordered by pivot row
    let reference_sample = samples
        .iter()
        .filter(|smp| smp.p_star == modal)
        .max_by(|a, b| a.log_joint.total_cmp(&b.log_joint))
        .expect("modal dimension is populated");
    let mut ref_cols = signed_columns(reference_sample);
    ref_cols.sort_by_key(|(p, _)| reference_sample.pivots[*p]);
    let reference: Vec<DVector<f64>> = ref_cols.into_iter().map(|(_, v)| v).collect();

    let mut incl_b = DMatrix::zeros(q, q);
    let mut sum_b = DMatrix::zeros(q, q);
    let mut incl_a = DMatrix::zeros(q, s);
    let mut sum_a = DMatrix::zeros(q, s);
    let mut incl_l = DMatrix::zeros(q, pm);
    let mut sum_l = DMatrix::zeros(q, pm);
    let mut sum_mu = DVector::zeros(q);
    let mut sum_s2 = DVector::zeros(q);
    for smp in samples {
        for i in 0..q {
            for j in 0..q {
                if smp.gamma_beta[(i, j)] {
                    incl_b[(i, j)] += 1.0;
                    sum_b[(i, j)] += smp.b[(i, j)];
                }
            }
            for k in 0..s {
                if smp.gamma_alpha[(i, k)] {
                    incl_a[(i, k)] += 1.0;
                    sum_a[(i, k)] += smp.a[(i, k)];
                }
            }
        }
        for (p, slot, sign) in align(smp, &reference, pm) {
            for i in 0..q {
                if smp.delta[(i, p)] {
                    incl_l[(i, slot)] += 1.0;
                    sum_l[(i, slot)] += sign * smp.l[(i, p)];
                }
            }
        }
        sum_mu += &smp.mu;
        sum_s2 += &smp.sigma2;
    }
    let cond_mean = |sum: &DMatrix<f64>, count: &DMatrix<f64>| {
        sum.zip_map(count, |s, c| if c > 0.0 { s / c } else { 0.0 })
    };
    Ok(PosteriorSummary {
        mean_B: cond_mean(&sum_b, &incl_b),
        mean_A: cond_mean(&sum_a, &incl_a),
        mean_L: cond_mean(&sum_l, &incl_l),
        incl_prob_B: incl_b / m,
        incl_prob_A: incl_a / m,
        incl_prob_L: incl_l / m,
        mean_mu: sum_mu / m,
        mean_sigma2: sum_s2 / m,
        p_star_histogram: hist,
        modal_p_star: modal,
        n_samples: samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effects {
    #[serde(rename = "B", with = "serde_rows")]
    pub b: DMatrix<f64>,
    #[serde(rename = "A", with = "serde_rows")]
    pub a: DMatrix<f64>,
    #[serde(rename = "L", with = "serde_rows")]
    pub l: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEstimate {
    #[serde(with = "serde_rows::boolean")]
    pub b_edges: DMatrix<bool>,
    #[serde(with = "serde_rows::boolean")]
    pub a_edges: DMatrix<bool>,
    #[serde(with = "serde_rows::boolean")]
    pub l_edges: DMatrix<bool>,
    pub effects: Effects,
    pub p_star: usize,
    pub threshold: f64,
}

/// Median-probability graph: an edge is kept iff its inclusion probability
/// is strictly above `threshold`. Loading columns beyond the modal number
/// of confounders are dropped.
pub fn extract_graph(summary: &PosteriorSummary, threshold: f64) -> GraphEstimate {
    let keep = |p: f64| p > threshold;
    let q = summary.incl_prob_B.nrows();
    let b_edges = DMatrix::from_fn(q, q, |i, j| i != j && keep(summary.incl_prob_B[(i, j)]));
    let a_edges = summary.incl_prob_A.map(keep);
    let k = summary.modal_p_star;
    let l_edges = DMatrix::from_fn(q, k, |i, p| keep(summary.incl_prob_L[(i, p)]));
    let mask = |m: &DMatrix<f64>, e: &DMatrix<bool>| m.zip_map(e, |v, on| if on { v } else { 0.0 });
    GraphEstimate {
        effects: Effects {
            b: mask(&summary.mean_B, &b_edges),
            a: mask(&summary.mean_A, &a_edges),
            l: mask(&summary.mean_L.columns(0, k).clone_owned(), &l_edges),
        },
        b_edges,
        a_edges,
        l_edges,
        p_star: k,
        threshold,
    }
}

/// Gelman–Rubin potential scale reduction over equal-length chains. `None`
/// with fewer than two chains or fewer than two draws per chain.
pub fn potential_scale_reduction(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min()?;
    if m < 2 || n < 2 {
        return None;
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let between = nf / (m as f64 - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let within = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    if within == 0.0 {
        return Some(if between == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (nf - 1.0) / nf * within + between / nf;
    Some((var_plus / within).sqrt())
}

/// Effective sample size of one trace by Geyer's initial monotone sequence
/// estimator.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let acov = |lag: usize| {
        x[..n - lag]
            .iter()
            .zip(&x[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / n as f64
    };
    let g0 = acov(0);
    if g0 <= 0.0 {
        return n as f64;
    }
    let mut total = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (acov(2 * k) + acov(2 * k + 1)).min(prev);
        if pair <= 0.0 {
            break;
        }
        total += pair;
        prev = pair;
        k += 1;
    }
    let tau = (-g0 + 2.0 * total) / g0;
    (n as f64 / tau.max(1e-12)).min(n as f64 * (n as f64).log10().max(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub b_entry: f64,
    pub a1_a2: f64,
    pub pivot_shift: f64,
    pub pivot_switch: f64,
    pub pivot_add: f64,
    pub pivot_delete: f64,
    pub split: f64,
    pub merge: f64,
}

impl From<&AcceptanceStats> for AcceptanceRates {
    fn from(s: &AcceptanceStats) -> Self {
        Self {
            b_entry: s.b_entry.rate(),
            a1_a2: s.a1_a2.rate(),
            pivot_shift: s.pivot_shift.rate(),
            pivot_switch: s.pivot_switch.rate(),
            pivot_add: s.pivot_add.rate(),
            pivot_delete: s.pivot_delete.rate(),
            split: s.split.rate(),
            merge: s.merge.rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub chains: usize,
    pub samples_per_chain: Vec<usize>,
    pub rhat_log_joint: Option<f64>,
    pub rhat_sigma2: Vec<Option<f64>>,
    pub ess_log_joint: f64,
    pub ess_sigma2: Vec<f64>,
    pub acceptance: Vec<AcceptanceRates>,
}

pub fn diagnostics(chains: &[ChainOutput]) -> DiagnosticsReport {
    let q = chains
        .iter()
        .find_map(|c| c.sigma2.first().map(Vec::len))
        .unwrap_or(0);
    let lj: Vec<Vec<f64>> = chains.iter().map(|c| c.log_joint.clone()).collect();
    let s2 = |j: usize| -> Vec<Vec<f64>> {
        chains.iter().map(|c| c.sigma2.iter().map(|v| v[j]).collect()).collect()
    };
    DiagnosticsReport {
        chains: chains.len(),
        samples_per_chain: chains.iter().map(|c| c.samples.len()).collect(),
        rhat_log_joint: potential_scale_reduction(&lj),
        rhat_sigma2: (0..q).map(|j| potential_scale_reduction(&s2(j))).collect(),
        ess_log_joint: lj.iter().map(|c| effective_sample_size(c)).sum(),
        ess_sigma2: (0..q)
            .map(|j| s2(j).iter().map(|c| effective_sample_size(c)).sum())
            .collect(),
        acceptance: chains.iter().map(|c| AcceptanceRates::from(&c.acceptance)).collect(),
    }
}
