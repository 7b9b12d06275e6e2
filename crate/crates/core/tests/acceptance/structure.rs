//! Dimension-move identities, the permutation oracle, and the error law.

use baycausal::distributions::{draw_laplace_via_mixture, Hyperparameters};
use baycausal::evaluation::scenarios::{scenario_one, scenario_two};
use baycausal::evaluation::{admissible_stable_permutations, random_disjoint_cycle_graph};
use baycausal::moves::{apply_merge, apply_split, merge_log_ratio, propose_split, split_legal, MoveConfig};
use baycausal::state::SamplerState;
use nalgebra::DMatrix;
use rand::Rng;

use crate::common::*;

/// Largest `|ln r_merge + ln r_split|` over randomized matched state pairs.
pub fn reciprocity(states: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let cfg = MoveConfig::default();
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < states {
        let q = 3 + done % 5;
        let h = Hyperparameters::defaults_for(q);
        let (mut x, data) = toy(q, 2, 25, &h, &mut rng);
        let k = rng.random_range(1..h.p_max);
        randomize(&mut x, &data, k, &mut rng);
        if !split_legal(x.p_star(), x.p_max()) {
            continue;
        }
        let prop = propose_split(&x, &cfg, &mut rng).unwrap().unwrap();
        let split = baycausal::moves::split_log_ratio(&x, &h, &cfg, &prop);
        let mut y = x.clone();
        apply_split(&mut y, &prop);
        let merge = merge_log_ratio(&y, &h, &cfg, prop.column);
        worst = worst.max((split + merge).exp_m1().abs());
        done += 1;
    }
    worst
}

/// Largest relative change of `diag(LLᵀ) + 8σ²` on the touched row over
/// split proposals and the merges that undo them.
pub fn variance_conservation(proposals: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let cfg = MoveConfig::default();
    let mut worst: f64 = 0.0;
    for t in 0..proposals {
        let q = 3 + t % 5;
        let h = Hyperparameters::defaults_for(q);
        let (mut x, data) = toy(q, 1, 10, &h, &mut rng);
        randomize(&mut x, &data, t % h.p_max, &mut rng);
        let prop = propose_split(&x, &cfg, &mut rng).unwrap().unwrap();
        let r = prop.row;
        let total = |s: &SamplerState| {
            s.params.l.row(r).iter().map(|v| v * v).sum::<f64>() + 8.0 * s.params.sigma2[r]
        };
        let before = total(&x);
        let mut y = x.clone();
        apply_split(&mut y, &prop);
        worst = worst.max((total(&y) - before).abs() / before);
        apply_merge(&mut y, prop.column);
        worst = worst.max((total(&y) - before).abs() / before);
    }
    worst
}

/// Number of graphs checked and the failures, each described.
pub fn permutation_oracle(random_graphs: usize, seed: u64) -> (usize, Vec<String>) {
    let mut rng = rng(seed);
    let mut graphs: Vec<(String, DMatrix<f64>)> = vec![
        ("scenario I".into(), scenario_one().b),
        ("scenario II".into(), scenario_two().b),
    ];
    for k in 0..random_graphs {
        let q = 2 + k % 6;
        graphs.push((format!("random #{k} (Q={q})"), random_disjoint_cycle_graph(q, &mut rng)));
    }
    let mut failures = Vec::new();
    for (name, b) in &graphs {
        let q = b.nrows();
        let w = DMatrix::identity(q, q) - b;
        let sols = admissible_stable_permutations(&w, 1e-12).unwrap();
        if sols.len() != 1 {
            failures.push(format!("{name}: {} stable solutions", sols.len()));
            continue;
        }
        let err = (&sols[0].1 - b).abs().max();
        if err > 1e-10 {
            failures.push(format!("{name}: recovered B differs by {err:e}"));
        }
    }
    (graphs.len(), failures)
}

fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 { 0.5 * (x / b).exp() } else { 1.0 - 0.5 * (-x / b).exp() }
}

pub struct LaplaceCheck {
    pub variance: f64,
    pub se: f64,
    pub ks: f64,
    pub ks_critical: f64,
}

pub fn laplace(draws: usize, seed: u64) -> LaplaceCheck {
    let mut rng = rng(seed);
    let sigma2 = 1.0 / 16.0;
    let mut x: Vec<f64> = (0..draws).map(|_| draw_laplace_via_mixture(sigma2, &mut rng).0).collect();
    let m2 = x.iter().map(|v| v * v).sum::<f64>() / draws as f64;
    let m4 = x.iter().map(|v| v.powi(4)).sum::<f64>() / draws as f64;
    // mean is known to be zero; SE of the second moment
    let se = ((m4 - m2 * m2) / draws as f64).sqrt();
    x.sort_by(f64::total_cmp);
    // Laplace(0, b) has variance 2b²
    let b = (8.0 * sigma2 / 2.0).sqrt();
    let nf = draws as f64;
    let ks = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = laplace_cdf(v, b);
            (f - i as f64 / nf).abs().max((f - (i + 1) as f64 / nf).abs())
        })
        .fold(0.0, f64::max);
    // asymptotic Kolmogorov quantile at alpha = 0.01
    let ks_critical = 1.6276 / nf.sqrt();
    LaplaceCheck { variance: m2, se, ks, ks_critical }
}
