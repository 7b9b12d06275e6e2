//! Single-update chains against grid quadrature of the log joint.

use baycausal::distributions::Hyperparameters;
use baycausal::gibbs::{self, set_loading, AcceptanceStats};
use baycausal::graph_model::{CausalParameters, Dataset};
use baycausal::rng::SamplerRng;
use baycausal::state::{SamplerOptions, SamplerState};
use nalgebra::{DMatrix, DVector};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::common::*;

pub const DRAWS: usize = 100_000;
const BINS: usize = 40;
const SUB: usize = 20;

fn tv_1d(draws: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let (lo, hi) = padded_range(draws);
    tv_hist_vs_grid(draws, lo, hi, BINS, f, SUB)
}

fn log_scale(draws: &[f64]) -> Vec<f64> {
    draws.iter().map(|v| v.ln()).collect()
}

/// Density of `N(0, g ν)` with `ν ~ IG(a, b)` integrated out.
fn ln_slab_marginal(x: f64, g: f64, a: f64, b: f64) -> f64 {
    ln_gamma(a + 0.5) - ln_gamma(a) - 0.5 * (2.0 * std::f64::consts::PI * g * b).ln()
        - (a + 0.5) * (1.0 + x * x / (2.0 * g * b)).ln()
}

/// Joint prior of two spike-and-slab entries sharing `ρ ~ Beta(a_ρ, b_ρ)`.
fn ln_pair_prior(x: f64, y: f64, h: &Hyperparameters) -> f64 {
    let mut terms = Vec::new();
    for (gx, sx) in [(1.0, 1), (h.nu0, 0)] {
        for (gy, sy) in [(1.0, 1), (h.nu0, 0)] {
            let k = (sx + sy) as f64;
            let w = ln_beta(h.a_rho + k, h.b_rho + 2.0 - k) - ln_beta(h.a_rho, h.b_rho);
            terms.push(w + ln_slab_marginal(x, gx, h.a_nu, h.b_nu) + ln_slab_marginal(y, gy, h.a_nu, h.b_nu));
        }
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// TV of each coordinate's histogram against the marginal of a 2-D log
/// density integrated on a grid spanning the draws.
fn tv_2d(xs: &[f64], ys: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    let (ylo, yhi) = padded_range(ys);
    let (xlo, xhi) = padded_range(xs);
    let tx = tv_1d(xs, |x| ln_integral(|y| f(x, y), ylo, yhi, 300));
    let ty = tv_1d(ys, |y| ln_integral(|x| f(x, y), xlo, xhi, 300));
    tx.max(ty)
}

/// Defaults for `q`, with a usable `(c1, c2)` when `P_max = 1`.
fn hyper_for(q: usize) -> Hyperparameters {
    let mut h = Hyperparameters::defaults_for(q);
    if h.p_max == 1 {
        h.c1 = 3.0;
        h.c2 = 3.0;
    }
    h
}

fn base(q: usize, s: usize, n: usize, active: usize, seed: u64) -> (SamplerState, Dataset, Hyperparameters, SamplerRng) {
    let mut rng = rng(seed);
    let h = hyper_for(q);
    let (mut state, data) = toy(q, s, n, &h, &mut rng);
    randomize(&mut state, &data, active, &mut rng);
    (state, data, h, rng)
}

pub fn mu() -> f64 {
    let (mut st, data, h, mut rng) = base(3, 1, 30, 1, 501);
    let fixed = st.clone();
    let draws: Vec<f64> = (0..DRAWS)
        .map(|_| {
            gibbs::update_mu(&mut st, &h, &mut rng);
            st.params.mu[0]
        })
        .collect();
    tv_1d(&draws, |v| {
        let mut t = fixed.clone();
        t.params.mu[0] = v;
        fresh_log_joint(&t, &data, &h)
    })
}

pub fn a_block() -> f64 {
    let (mut st, data, h, mut rng) = base(2, 1, 30, 0, 502);
    let fixed = st.clone();
    let (mut xs, mut ys) = (Vec::with_capacity(DRAWS), Vec::with_capacity(DRAWS));
    for _ in 0..DRAWS {
        gibbs::update_a_block(&mut st, &data, &h, &mut rng).unwrap();
        xs.push(st.params.a[(0, 0)]);
        ys.push(st.params.a[(1, 0)]);
    }
    // likelihood from the log joint with the conditional slab terms removed
    let slab = |t: &SamplerState, j: usize| ln_normal(t.params.a[(j, 0)], 0.0, t.gamma_alpha[(j, 0)] * t.nu_alpha[(j, 0)]);
    tv_2d(&xs, &ys, |x, y| {
        let mut t = fixed.clone();
        t.params.a[(0, 0)] = x;
        t.params.a[(1, 0)] = y;
        fresh_log_joint(&t, &data, &h) - slab(&t, 0) - slab(&t, 1) + ln_pair_prior(x, y, &h)
    })
}

pub fn b_block() -> f64 {
    let mut rng = rng(503);
    let h = hyper_for(2);
    let params = CausalParameters {
        mu: DVector::from_vec(vec![0.3, -0.2]),
        a: DMatrix::from_column_slice(2, 1, &[0.5, -0.4]),
        b: DMatrix::from_row_slice(2, 2, &[0.0, 0.5, -0.4, 0.0]),
        l: DMatrix::zeros(2, 0),
        sigma2: DVector::from_vec(vec![0.1, 0.15]),
    };
    let (mut st, data) = fixed_toy(&params, 60, &h, &mut rng);
    randomize(&mut st, &data, 0, &mut rng);
    st.params.b = params.b.clone();
    st.refresh_residuals(&data);
    let opts = SamplerOptions::default();
    let mut stats = AcceptanceStats::default();
    for t in 0..3000 {
        let gain = 5.0 * (t as f64 + 10.0).powf(-0.6);
        gibbs::update_b_block(&mut st, &data, &h, &opts, gain, &mut stats, &mut rng).unwrap();
    }
    let fixed = st.clone();
    let (mut xs, mut ys) = (Vec::with_capacity(DRAWS), Vec::with_capacity(DRAWS));
    for _ in 0..DRAWS {
        for _ in 0..5 {
            gibbs::update_b_block(&mut st, &data, &h, &opts, 0.0, &mut stats, &mut rng).unwrap();
        }
        xs.push(st.params.b[(0, 1)]);
        ys.push(st.params.b[(1, 0)]);
    }
    let slab = |t: &SamplerState, i: usize, j: usize| ln_normal(t.params.b[(i, j)], 0.0, t.gamma_beta[(i, j)] * t.nu_beta[(i, j)]);
    tv_2d(&xs, &ys, |x, y| {
        // eigenvalues of a 2x2 zero-diagonal matrix are ±sqrt(xy)
        if (x * y).abs() >= 1.0 {
            return f64::NEG_INFINITY;
        }
        let mut t = fixed.clone();
        t.params.b[(0, 1)] = x;
        t.params.b[(1, 0)] = y;
        fresh_log_joint(&t, &data, &h) - slab(&t, 0, 1) - slab(&t, 1, 0) + ln_pair_prior(x, y, &h)
    })
}

pub fn l_rows() -> f64 {
    let (mut st, data, h, mut rng) = base(3, 1, 30, 0, 504);
    activate(&mut st, &data, 0, 1, &mut rng);
    let fixed = st.clone();
    let draws: Vec<f64> = (0..DRAWS)
        .map(|_| {
            gibbs::update_l_rows(&mut st, &mut rng).unwrap();
            st.params.l[(1, 0)]
        })
        .collect();
    tv_1d(&draws, |v| {
        let mut t = fixed.clone();
        set_loading(&mut t, 1, 0, true, v);
        fresh_log_joint(&t, &data, &h)
    })
}

/// Indicator below the pivot with its loading: `|P̂(δ=1) − P(δ=1)|` and the
/// TV of the included loading, whichever is larger.
pub fn delta() -> f64 {
    let (mut st, data, h, mut rng) = base(3, 1, 30, 0, 505);
    activate(&mut st, &data, 0, 0, &mut rng);
    // make row 1 weakly informative so both indicator values occur
    st.params.sigma2[1] = 2.0;
    st.refresh_residuals(&data);
    let fixed = st.clone();
    let mut ones = Vec::new();
    for _ in 0..DRAWS {
        gibbs::update_delta(&mut st, &mut rng);
        if st.delta[(1, 0)] {
            ones.push(st.params.l[(1, 0)]);
        }
    }
    let f = |include: bool, v: f64| {
        let mut t = fixed.clone();
        set_loading(&mut t, 1, 0, include, v);
        fresh_log_joint(&t, &data, &h)
    };
    let (m, var) = quadratic_conditional(|v| f(true, v));
    let sd = var.sqrt();
    let ln_in = ln_integral(|v| f(true, v), m - 12.0 * sd, m + 12.0 * sd, 4000);
    let ln_out = f(false, 0.0);
    let p_in = 1.0 / (1.0 + (ln_out - ln_in).exp());
    let p_hat = ones.len() as f64 / DRAWS as f64;
    println!("    delta: P(include) sampler {p_hat:.4} quadrature {p_in:.4}");
    let tv_l = if ones.len() > 1000 { tv_1d(&ones, |v| f(true, v)) } else { 0.0 };
    (p_hat - p_in).abs().max(tv_l)
}

pub fn kappa() -> f64 {
    let (mut st, data, h, mut rng) = base(3, 1, 30, 2, 506);
    let fixed = st.clone();
    let draws: Vec<f64> = (0..DRAWS)
        .map(|_| {
            gibbs::update_kappa(&mut st, &h, &mut rng).unwrap();
            st.kappa
        })
        .collect();
    tv_1d(&log_scale(&draws), |u| {
        let mut t = fixed.clone();
        t.kappa = u.exp();
        fresh_log_joint(&t, &data, &h) + u
    })
}

pub fn zeta() -> f64 {
    let (mut st, data, h, mut rng) = base(4, 1, 30, 0, 507);
    activate(&mut st, &data, 1, 0, &mut rng);
    set_loading(&mut st, 2, 1, true, 0.3);
    let fixed = st.clone();
    let draws: Vec<f64> = (0..DRAWS)
        .map(|_| {
            gibbs::update_zeta(&mut st, &mut rng).unwrap();
            st.zeta[1]
        })
        .collect();
    tv_1d(&draws, |z| {
        if !(0.0..1.0).contains(&z) || z == 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut t = fixed.clone();
        t.zeta[1] = z;
        fresh_log_joint(&t, &data, &h)
    })
}

pub fn a1_a2() -> f64 {
    let (mut st, data, h, mut rng) = base(4, 1, 10, 2, 508);
    let opts = SamplerOptions::default();
    let mut stats = AcceptanceStats::default();
    let fixed = st.clone();
    let (mut xs, mut ys) = (Vec::with_capacity(DRAWS), Vec::with_capacity(DRAWS));
    for _ in 0..DRAWS {
        for _ in 0..10 {
            gibbs::update_a1_a2(&mut st, &h, &opts, &mut stats, &mut rng);
        }
        xs.push(st.a1.ln());
        ys.push(st.a2.ln());
    }
    tv_2d(&xs, &ys, |u1, u2| {
        let mut t = fixed.clone();
        t.a1 = u1.exp();
        t.a2 = u2.exp();
        fresh_log_joint(&t, &data, &h) + u1 + u2
    })
}

/// Both scores of one observation, drawn as a block.
pub fn scores() -> f64 {
    let (mut st, data, h, mut rng) = base(3, 1, 30, 2, 509);
    let (p1, p2) = (st.active_columns()[0], st.active_columns()[1]);
    let fixed = st.clone();
    let (mut xs, mut ys) = (Vec::with_capacity(DRAWS), Vec::with_capacity(DRAWS));
    for _ in 0..DRAWS {
        gibbs::update_c(&mut st, &mut rng).unwrap();
        xs.push(st.c[(0, p1)]);
        ys.push(st.c[(0, p2)]);
    }
    tv_2d(&xs, &ys, |x, y| {
        let mut t = fixed.clone();
        t.c[(0, p1)] = x;
        t.c[(0, p2)] = y;
        fresh_log_joint(&t, &data, &h)
    })
}

pub fn tau() -> f64 {
    let (mut st, data, h, mut rng) = base(3, 1, 30, 1, 510);
    let opts = SamplerOptions::default();
    let fixed = st.clone();
    let draws: Vec<f64> = (0..DRAWS)
        .map(|_| {
            gibbs::update_tau(&mut st, &opts, &mut rng).unwrap();
            st.tau[(0, 0)]
        })
        .collect();
    tv_1d(&log_scale(&draws), |u| {
        let mut t = fixed.clone();
        t.tau[(0, 0)] = u.exp();
        fresh_log_joint(&t, &data, &h) + u
    })
}

/// Error variance: default update with no loadings, and the exact update
/// on a row that carries loadings.
pub fn sigma2() -> f64 {
    let run = |active: usize, exact: bool, seed: u64| {
        let (mut st, data, h, mut rng) = base(3, 1, 30, active, seed);
        let row = match st.active_columns().first() {
            Some(&p) => st.pivots[p].unwrap(),
            None => 0,
        };
        let opts = SamplerOptions { exact_sigma2: exact, ..SamplerOptions::default() };
        let fixed = st.clone();
        let draws: Vec<f64> = (0..DRAWS)
            .map(|_| {
                gibbs::update_sigma2(&mut st, &h, &opts, &mut rng).unwrap();
                st.params.sigma2[row]
            })
            .collect();
        tv_1d(&log_scale(&draws), |u| {
            let mut t = fixed.clone();
            t.params.sigma2[row] = u.exp();
            fresh_log_joint(&t, &data, &h) + u
        })
    };
    run(0, false, 511).max(run(2, true, 512))
}

pub fn all() -> Vec<(&'static str, f64)> {
    vec![
        ("mu", mu()),
        ("A block", a_block()),
        ("B block", b_block()),
        ("L rows", l_rows()),
        ("delta", delta()),
        ("kappa", kappa()),
        ("zeta", zeta()),
        ("a1/a2", a1_a2()),
        ("C", scores()),
        ("tau", tau()),
        ("sigma2", sigma2()),
    ]
}
