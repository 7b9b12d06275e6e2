#![allow(dead_code)]

use baycausal::distributions::Hyperparameters;
use baycausal::graph_model::{simulate, CausalParameters, CovariateSpec, Dataset};
use baycausal::inference::initialize_state;
use baycausal::rng::SamplerRng;
use baycausal::state::{log_joint, SamplerOptions, SamplerState};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gamma, StandardNormal};

pub fn rng(seed: u64) -> SamplerRng {
    SamplerRng::seed_from_u64(seed)
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Random small parameter set with a sparse `B` scaled to be stable.
pub fn random_params<R: Rng>(q: usize, s: usize, rng: &mut R) -> CausalParameters {
    let mut b = DMatrix::from_fn(q, q, |i, j| {
        if i != j && rng.random::<f64>() < 0.4 { 0.3 * normal(rng) } else { 0.0 }
    });
    let r = baycausal::linalg::spectral_radius(&b).unwrap();
    if r > 0.8 {
        b *= 0.8 / r;
    }
    CausalParameters {
        mu: DVector::from_fn(q, |_, _| normal(rng)),
        a: DMatrix::from_fn(q, s, |_, _| 0.5 * normal(rng)),
        b,
        l: DMatrix::zeros(q, 0),
        sigma2: DVector::from_fn(q, |_, _| rng.random_range(0.05..0.3)),
    }
}

/// A dataset and an initialised state for it.
pub fn toy<R: Rng>(q: usize, s: usize, n: usize, hyper: &Hyperparameters, rng: &mut R) -> (SamplerState, Dataset) {
    let params = random_params(q, s, rng);
    let sim = simulate(&params, n, &CovariateSpec::StandardNormal, rng).unwrap();
    let state = initialize_state(&sim.dataset, hyper, &SamplerOptions::default()).unwrap();
    (state, sim.dataset)
}

/// Fills every latent quantity of `state` with random values respecting
/// the invariants, with `active` confounder columns.
pub fn randomize<R: Rng>(state: &mut SamplerState, data: &Dataset, active: usize, rng: &mut R) {
    let (n, q, s, pm) = (state.n(), state.q(), state.s(), state.p_max());
    let nu0 = state.nu0;
    let gamma = |rng: &mut R| if rng.random::<bool>() { 1.0 } else { nu0 };
    loop {
        let b = DMatrix::from_fn(q, q, |i, j| if i == j { 0.0 } else { 0.25 * normal(rng) });
        if baycausal::linalg::spectral_radius(&b).unwrap() < 0.9 {
            state.params.b = b;
            break;
        }
    }
    state.params.a = DMatrix::from_fn(q, s, |_, _| 0.5 * normal(rng));
    state.params.mu = DVector::from_fn(q, |_, _| normal(rng));
    state.params.sigma2 = DVector::from_fn(q, |_, _| rng.random_range(0.05..0.5));
    for i in 0..q {
        for j in 0..q {
            state.gamma_beta[(i, j)] = if i == j { 1.0 } else { gamma(rng) };
            state.nu_beta[(i, j)] = rng.random_range(0.2..2.0);
        }
        for k in 0..s {
            state.gamma_alpha[(i, k)] = gamma(rng);
            state.nu_alpha[(i, k)] = rng.random_range(0.2..2.0);
        }
    }
    state.rho_alpha = rng.random_range(0.1..0.9);
    state.rho_beta = rng.random_range(0.1..0.9);
    state.kappa = rng.random_range(0.3..3.0);
    state.a1 = rng.random_range(0.5..3.0);
    state.a2 = rng.random_range(0.5..3.0);
    let tau_dist = Gamma::new(2.0, 1.0).unwrap();
    state.tau = DMatrix::from_fn(n, q, |_, _| 0.1 + tau_dist.sample(rng));

    state.pivots = vec![None; pm];
    state.delta = DMatrix::from_element(q, pm, false);
    state.params.l = DMatrix::zeros(q, pm);
    state.c = DMatrix::zeros(n, pm);
    state.zeta = vec![0.5; pm];
    let mut slots: Vec<usize> = (0..pm).collect();
    slots.shuffle(rng);
    let mut rows: Vec<usize> = (0..q).collect();
    rows.shuffle(rng);
    for (&p, &r) in slots.iter().zip(rows.iter()).take(active) {
        state.pivots[p] = Some(r);
        state.zeta[p] = rng.random_range(0.1..0.9);
        for i in r..q {
            if i == r || rng.random::<f64>() < 0.5 {
                state.delta[(i, p)] = true;
                state.params.l[(i, p)] = 0.6 * normal(rng);
            }
        }
        for i in 0..n {
            state.c[(i, p)] = normal(rng);
        }
    }
    state.refresh_residuals(data);
    state.check_invariants().unwrap();
}

/// Log joint with the residual cache rebuilt first.
pub fn fresh_log_joint(state: &SamplerState, data: &Dataset, hyper: &Hyperparameters) -> f64 {
    let mut s = state.clone();
    s.refresh_residuals(data);
    log_joint(&s, data, hyper)
}

/// Mean and variance of the Gaussian conditional of a scalar on which the
/// log joint is exactly quadratic, from three evaluations.
pub fn quadratic_conditional(f: impl Fn(f64) -> f64) -> (f64, f64) {
    let (fm, f0, fp) = (f(-1.0), f(0.0), f(1.0));
    let a = (fp + fm - 2.0 * f0) / 2.0;
    let b = (fp - fm) / 2.0;
    let var = -1.0 / (2.0 * a);
    (b * var, var)
}

pub fn ln_normal(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (x - m).powi(2) / (2.0 * v)
}

/// Total-variation distance between a histogram of `draws` and a density
/// tabulated on the midpoints of equal-width bins over `[lo, hi]`.
pub fn tv_hist_vs_grid(draws: &[f64], lo: f64, hi: f64, bins: usize, log_density: impl Fn(f64) -> f64, sub: usize) -> f64 {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    let mut outside = 0.0;
    for &d in draws {
        if d < lo || d >= hi {
            outside += 1.0;
            continue;
        }
        counts[((d - lo) / width) as usize] += 1.0;
    }
    // integrate the density over each bin with `sub` midpoint sub-cells
    let h = width / sub as f64;
    let logs: Vec<Vec<f64>> = (0..bins)
        .map(|b| (0..sub).map(|k| log_density(lo + b as f64 * width + (k as f64 + 0.5) * h)).collect())
        .collect();
    let max = logs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let mass: Vec<f64> = logs.iter().map(|c| c.iter().map(|l| (l - max).exp()).sum::<f64>()).collect();
    let total: f64 = mass.iter().sum();
    let m = draws.len() as f64;
    0.5 * (counts.iter().zip(&mass).map(|(c, p)| (c / m - p / total).abs()).sum::<f64>() + outside / m)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Dataset drawn from `params` and a state initialised on it.
pub fn fixed_toy<R: Rng>(params: &CausalParameters, n: usize, hyper: &Hyperparameters, rng: &mut R) -> (SamplerState, Dataset) {
    let sim = simulate(params, n, &CovariateSpec::StandardNormal, rng).unwrap();
    let state = initialize_state(&sim.dataset, hyper, &SamplerOptions::default()).unwrap();
    (state, sim.dataset)
}

/// Activates slot `p` with its pivot at `row` and random scores.
pub fn activate<R: Rng>(state: &mut SamplerState, data: &Dataset, p: usize, row: usize, rng: &mut R) {
    state.pivots[p] = Some(row);
    state.delta[(row, p)] = true;
    state.params.l[(row, p)] = 0.5;
    state.zeta[p] = 0.5;
    for i in 0..state.n() {
        state.c[(i, p)] = normal(rng);
    }
    state.refresh_residuals(data);
    state.check_invariants().unwrap();
}

/// Log of `∫ exp(f(y)) dy` over `[lo, hi]` by the midpoint rule.
pub fn ln_integral(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    let h = (hi - lo) / points as f64;
    let vals: Vec<f64> = (0..points).map(|k| f(lo + (k as f64 + 0.5) * h)).collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + (vals.iter().map(|v| (v - max).exp()).sum::<f64>() * h).ln()
}

/// Range of the draws padded by 2% on each side.
pub fn padded_range(draws: &[f64]) -> (f64, f64) {
    let lo = draws.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.02 * (hi - lo).max(1e-12);
    (lo - pad, hi + pad)
}
