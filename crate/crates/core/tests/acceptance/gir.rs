//! Successive-conditional simulation: alternate fresh data given the full
//! state with one sweep given the data. The chain's marginals must equal
//! the prior's.

use baycausal::distributions::Hyperparameters;
use baycausal::gibbs::AcceptanceStats;
use baycausal::graph_model::Dataset;
use baycausal::inference::{effective_sample_size, initialize_state, sweep};
use baycausal::linalg::ShiftedSolver;
use baycausal::moves::MoveConfig;
use baycausal::state::{SamplerOptions, SamplerState};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};

use crate::common::*;

pub const SWEEPS: usize = 100_000;
const N: usize = 5;

pub fn hyper() -> Hyperparameters {
    Hyperparameters {
        a_nu: 3.0,
        b_nu: 1.0,
        a_rho: 1.0,
        b_rho: 1.0,
        a_sigma: 3.0,
        b_sigma: 2.0,
        a_kappa: 3.0,
        b_kappa: 2.0,
        nu0: 2.5e-4,
        sigma2_mu: 1.0,
        b1: 6.0,
        c1: 3.0,
        b2: 6.0,
        c2: 3.0,
        p_max: 1,
    }
}

/// Redraws `Y` from the model given every latent quantity in `state`.
fn regenerate<R: Rng>(state: &SamplerState, data: &mut Dataset, rng: &mut R) {
    let solver = ShiftedSolver::new(&state.params.b).unwrap();
    let q = state.q();
    for i in 0..data.n() {
        let mut rhs = state.params.mu.clone() + &state.params.a * data.x.row(i).transpose();
        for p in state.active_columns() {
            for j in 0..q {
                rhs[j] += state.params.l[(j, p)] * state.c[(i, p)];
            }
        }
        for j in 0..q {
            rhs[j] += (state.params.sigma2[j] / state.tau[(i, j)]).sqrt() * normal(rng);
        }
        let y = solver.solve(&rhs).unwrap();
        for j in 0..q {
            data.y[(i, j)] = y[j];
        }
    }
}

/// Prior mean of `ρ_β` under the stability truncation, by rejection.
fn truncated_rho_beta<R: Rng>(h: &Hyperparameters, draws: usize, rng: &mut R) -> (f64, f64) {
    let beta = Beta::new(h.a_rho, h.b_rho).unwrap();
    let nu = Gamma::new(h.a_nu, 1.0 / h.b_nu).unwrap();
    let mut kept = Vec::new();
    for _ in 0..draws {
        let rho: f64 = beta.sample(rng);
        let entry = |rng: &mut R| {
            let v = 1.0 / nu.sample(rng);
            let g = if rng.random::<f64>() < rho { 1.0 } else { h.nu0 };
            (g * v).sqrt() * normal(rng)
        };
        let (x, y) = (entry(rng), entry(rng));
        if (x * y).abs() < 1.0 {
            kept.push(rho);
        }
    }
    (mean(&kept), (variance(&kept) / kept.len() as f64).sqrt())
}

pub struct Moment {
    pub name: String,
    pub estimate: f64,
    pub expected: f64,
    pub se: f64,
}

impl Moment {
    pub fn z(&self) -> f64 {
        (self.estimate - self.expected) / self.se
    }
}

pub fn run(seed: u64) -> Vec<Moment> {
    let mut rng = rng(seed);
    let h = hyper();
    let x = DMatrix::from_fn(N, 1, |_, _| normal(&mut rng));
    let y = DMatrix::from_fn(N, 2, |_, _| normal(&mut rng));
    let mut data = Dataset::new(y, x).unwrap();
    let opts = SamplerOptions { exact_sigma2: true, b_step: 0.5, ..SamplerOptions::default() };
    let moves = MoveConfig::default();
    let mut state = initialize_state(&data, &h, &opts).unwrap();
    let mut stats = AcceptanceStats::default();

    let names = ["mu_1", "mu_2", "sigma2_1", "sigma2_2", "kappa", "rho_alpha", "rho_beta"];
    let mut traces: Vec<Vec<f64>> = vec![Vec::with_capacity(SWEEPS); names.len()];
    let burn = 2_000;
    for t in 0..(burn + SWEEPS) {
        regenerate(&state, &mut data, &mut rng);
        state.refresh_residuals(&data);
        sweep(&mut state, &data, &h, &moves, &opts, 0.0, &mut stats, &mut rng).unwrap();
        if t >= burn {
            let v = [
                state.params.mu[0],
                state.params.mu[1],
                state.params.sigma2[0],
                state.params.sigma2[1],
                state.kappa,
                state.rho_alpha,
                state.rho_beta,
            ];
            for (trace, value) in traces.iter_mut().zip(v) {
                trace.push(value);
            }
        }
    }
    state.check_invariants().unwrap();

    let (rho_b, rho_b_se) = truncated_rho_beta(&h, 1_000_000, &mut rng);
    let ig_mean = |a: f64, b: f64| b / (a - 1.0);
    let expected = [
        (0.0, 0.0),
        (0.0, 0.0),
        (ig_mean(h.a_sigma, h.b_sigma), 0.0),
        (ig_mean(h.a_sigma, h.b_sigma), 0.0),
        (ig_mean(h.a_kappa, h.b_kappa), 0.0),
        (h.a_rho / (h.a_rho + h.b_rho), 0.0),
        (rho_b, rho_b_se),
    ];
    names
        .iter()
        .zip(traces.iter().zip(expected))
        .map(|(name, (trace, (exp, exp_se)))| {
            let ess = effective_sample_size(trace);
            let se = (variance(trace) / ess + exp_se * exp_se).sqrt();
            Moment { name: name.to_string(), estimate: mean(trace), expected: exp, se }
        })
        .collect()
}
