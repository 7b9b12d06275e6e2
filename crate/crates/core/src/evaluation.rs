//! Graph scoring against a ground truth, replicated simulation studies, and
//! the permutation-enumeration identifiability oracle.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::HyperOverrides;
use crate::error::{Error, Result};
use crate::graph_model::{serde_rows, simulate, CausalParameters, CovariateSpec, GroundTruthGraph};
use crate::inference::{extract_graph, run_chains, summarize, ChainConfig};
use crate::linalg::spectral_radius;
use crate::moves::MoveConfig;
use crate::rng::{derive_seed, substream, tag};
use crate::state::SamplerOptions;

/// The two simulation scenarios (0-based indices in code).
pub mod scenarios {
    use nalgebra::{DMatrix, DVector};

    use crate::graph_model::CausalParameters;

    /// Q = 5, S = 2, two confounders, acyclic `B`.
    pub fn scenario_one() -> CausalParameters {
        let mut b = DMatrix::zeros(5, 5);
        b[(0, 1)] = 0.5;
        b[(2, 3)] = 0.4;
        b[(2, 4)] = -0.7;
        b[(3, 0)] = 0.3;
        let mut l = DMatrix::zeros(5, 2);
        l[(1, 0)] = 0.5;
        l[(2, 0)] = 0.3;
        l[(3, 1)] = -0.5;
        l[(4, 1)] = 0.4;
        CausalParameters {
            mu: DVector::from_vec(vec![0.79, -0.47, -0.26, 0.15, 0.82]),
            a: DMatrix::from_column_slice(
                5,
                2,
                &[-0.60, 0.80, 0.89, 0.32, 0.26, -0.88, -0.59, -0.65, 0.37, -0.23],
            ),
            b,
            l,
            sigma2: DVector::from_element(5, 1.0 / 16.0),
        }
    }

    /// Q = 7, S = 2, two confounders, two disjoint 3-cycles
    /// `Y1 → Y4 → Y2 → Y1` and `Y3 → Y5 → Y7 → Y3` joined by `Y6 → Y4`
    /// and `Y7 → Y6`.
    pub fn scenario_two() -> CausalParameters {
        let mut b = DMatrix::zeros(7, 7);
        b[(0, 1)] = 0.5;
        b[(1, 3)] = -0.4;
        b[(4, 2)] = -0.7;
        b[(3, 0)] = 0.3;
        b[(3, 5)] = 0.5;
        b[(6, 4)] = 0.9;
        b[(5, 6)] = 0.4;
        b[(2, 6)] = 0.6;
        let mut l = DMatrix::zeros(7, 2);
        l[(1, 0)] = 0.4;
        l[(2, 0)] = 0.5;
        l[(3, 1)] = -0.5;
        l[(4, 1)] = 0.4;
        l[(5, 1)] = 0.3;
        CausalParameters {
            mu: DVector::from_vec(vec![0.79, -0.47, -0.26, 0.15, 0.82, -0.60, 0.80]),
            a: DMatrix::from_column_slice(
                7,
                2,
                &[
                    0.89, 0.32, 0.26, -0.88, -0.59, -0.65, 0.37, -0.23, 0.54, 0.0, 0.44, 0.98,
                    -0.24, 0.55,
                ],
            ),
            b,
            l,
            sigma2: DVector::from_element(7, 1.0 / 16.0),
        }
    }
}

/// Confusion counts and rates over the `Q(Q − 1)` ordered pairs of distinct
/// primary variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tpr: f64,
    pub fdr: f64,
    pub mcc: f64,
    pub exact: bool,
}

impl EdgeScore {
    /// Rates from counts. With no true edges the TPR is 1; with no
    /// discoveries the FDR is 0; a zero MCC denominator gives MCC 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let f = |v: usize| v as f64;
        let tpr = if tp + fn_ == 0 { 1.0 } else { f(tp) / f(tp + fn_) };
        let fdr = if tp + fp == 0 { 0.0 } else { f(fp) / f(tp + fp) };
        let denom = (f(tp + fp) * f(tp + fn_) * f(tn + fp) * f(tn + fn_)).sqrt();
        let mcc = if denom == 0.0 { 0.0 } else { (f(tp) * f(tn) - f(fp) * f(fn_)) / denom };
        Self { tp, fp, tn, fn_, tpr, fdr, mcc, exact: fp == 0 && fn_ == 0 }
    }
}

pub fn score_graph(estimate: &DMatrix<bool>, truth: &DMatrix<bool>) -> Result<EdgeScore> {
    let q = truth.nrows();
    if truth.ncols() != q || estimate.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {}x{}, truth is {}x{}",
            estimate.nrows(),
            estimate.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..q {
        for j in 0..q {
            if i == j {
                continue;
            }
            match (estimate[(i, j)], truth[(i, j)]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    Ok(EdgeScore::from_counts(tp, fp, tn, fn_))
}

/// Whether two loading supports have the same non-empty child sets up to
/// column order.
pub fn l_support_matches(estimate: &DMatrix<bool>, truth: &DMatrix<bool>) -> bool {
    let sets = |m: &DMatrix<bool>| {
        let mut v: Vec<Vec<bool>> = (0..m.ncols())
            .map(|p| m.column(p).iter().copied().collect::<Vec<_>>())
            .filter(|c| c.iter().any(|&b| b))
            .collect();
        v.sort();
        v
    };
    estimate.nrows() == truth.nrows() && sets(estimate) == sets(truth)
}

/// Everything a replicate study needs besides the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateConfig {
    pub hyper: HyperOverrides,
    pub moves: MoveConfig,
    pub sampler: SamplerOptions,
    pub chain: ChainConfig,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub score: Option<EdgeScore>,
    pub modal_p_star: Option<usize>,
    pub l_support_match: Option<bool>,
    /// point estimate of `A`: posterior mean given inclusion, zero for
    /// excluded entries
    #[serde(with = "serde_rows")]
    pub a_estimate: DMatrix<f64>,
    #[serde(with = "serde_rows::boolean")]
    pub b_edges: DMatrix<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub label: String,
    pub n: usize,
    pub replicates: Vec<ReplicateResult>,
    /// number of replicates whose `B` support matched exactly
    pub csr: usize,
    pub completed: usize,
    pub mean_tpr: f64,
    pub mean_fdr: f64,
    pub mean_mcc: f64,
    /// rates computed from confusion counts pooled over replicates
    pub pooled: Option<EdgeScore>,
    pub p_star_correct: usize,
    pub l_support_correct: usize,
    #[serde(with = "serde_rows")]
    pub a_bias: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub a_mse: DMatrix<f64>,
}

impl RecoveryReport {
    /// Plain-text table with CSR, TPR, FDR and MCC.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>6} {:>6} {:>6} {:>6} {:>6}", "scenario", "n", "CSR", "TPR", "FDR", "MCC");
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>6} {:>6.2} {:>6.2} {:>6.2}",
            self.label,
            self.n,
            format!("{}/{}", self.csr, self.replicates.len()),
            self.mean_tpr,
            self.mean_fdr,
            self.mean_mcc
        );
        out
    }
}

fn aggregate(label: &str, n: usize, truth: &CausalParameters, results: Vec<ReplicateResult>) -> RecoveryReport {
    let graph = GroundTruthGraph::from_params(truth);
    let scored: Vec<&EdgeScore> = results.iter().filter_map(|r| r.score.as_ref()).collect();
    let completed = scored.len();
    let mean = |f: fn(&EdgeScore) -> f64| {
        if completed == 0 {
            f64::NAN
        } else {
            scored.iter().map(|s| f(s)).sum::<f64>() / completed as f64
        }
    };
    let pooled = (completed > 0).then(|| {
        let sum = |f: fn(&EdgeScore) -> usize| scored.iter().map(|s| f(s)).sum::<usize>();
        EdgeScore::from_counts(sum(|s| s.tp), sum(|s| s.fp), sum(|s| s.tn), sum(|s| s.fn_))
    });
    let (q, s) = (truth.q(), truth.s());
    let mut bias = DMatrix::zeros(q, s);
    let mut mse = DMatrix::zeros(q, s);
    let ok: Vec<&ReplicateResult> = results.iter().filter(|r| r.error.is_none()).collect();
    for r in &ok {
        let d = &r.a_estimate - &truth.a;
        bias += &d;
        mse += d.component_mul(&d);
    }
    if !ok.is_empty() {
        bias /= ok.len() as f64;
        mse /= ok.len() as f64;
    }
    RecoveryReport {
        label: label.to_string(),
        n,
        csr: scored.iter().filter(|s| s.exact).count(),
        completed,
        mean_tpr: mean(|s| s.tpr),
        mean_fdr: mean(|s| s.fdr),
        mean_mcc: mean(|s| s.mcc),
        pooled,
        p_star_correct: results.iter().filter(|r| r.modal_p_star == Some(graph.p_star)).count(),
        l_support_correct: results.iter().filter(|r| r.l_support_match == Some(true)).count(),
        a_bias: bias,
        a_mse: mse,
        replicates: results,
    }
}

/// Fits one replicate: data from stream `(seed, REPLICATE, r, DATA)`,
/// chains seeded from `(seed, REPLICATE, r)`.
pub fn run_replicate(
    truth: &CausalParameters,
    n: usize,
    index: usize,
    cfg: &ReplicateConfig,
    seed: u64,
) -> ReplicateResult {
    let graph = GroundTruthGraph::from_params(truth);
    let fit = || -> Result<ReplicateResult> {
        let mut data_rng = substream(seed, &[tag::REPLICATE, index as u64, tag::DATA]);
        let sim = simulate(truth, n, &CovariateSpec::StandardNormal, &mut data_rng)?;
        let hyper = cfg.hyper.resolve(truth.q())?;
        let chain = ChainConfig {
            seed: derive_seed(seed, &[tag::REPLICATE, index as u64]),
            ..cfg.chain.clone()
        };
        let chains = run_chains(&sim.dataset, &hyper, &chain, &cfg.moves, &cfg.sampler)?;
        let summary = summarize(&chains)?;
        let est = extract_graph(&summary, cfg.threshold);
        let a_estimate = est.effects.a.clone();
        Ok(ReplicateResult {
            index,
            score: Some(score_graph(&est.b_edges, &graph.b_support)?),
            modal_p_star: Some(summary.modal_p_star),
            l_support_match: Some(l_support_matches(&est.l_edges, &graph.l_support)),
            a_estimate,
            b_edges: est.b_edges,
            error: None,
        })
    };
    fit().unwrap_or_else(|e| ReplicateResult {
        index,
        score: None,
        modal_p_star: None,
        l_support_match: None,
        a_estimate: DMatrix::zeros(truth.q(), truth.s()),
        b_edges: DMatrix::from_element(truth.q(), truth.q(), false),
        error: Some(e.to_string()),
    })
}

/// Replicated study. Failed replicates are kept in the report with their
/// error message and excluded from the aggregates.
pub fn run_replicates(
    label: &str,
    truth: &CausalParameters,
    n: usize,
    replicates: usize,
    cfg: &ReplicateConfig,
    seed: u64,
) -> Result<RecoveryReport> {
    truth.validate()?;
    cfg.moves.validate()?;
    cfg.sampler.validate()?;
    cfg.chain.validate()?;
    cfg.hyper.resolve(truth.q())?;
    let results: Vec<ReplicateResult> = (0..replicates)
        .into_par_iter()
        .map(|r| run_replicate(truth, n, r, cfg, seed))
        .collect();
    for r in &results {
        if let Some(e) = &r.error {
            eprintln!("warning: replicate {} failed: {e}", r.index);
        }
    }
    Ok(aggregate(label, n, truth, results))
}

/// Row permutation `perm` (row `i` of the result is row `perm[i]` of `W`),
/// the normalised `B = I − W̃`, and whether it is stable.
pub type AdmissibleSolution = (Vec<usize>, DMatrix<f64>);

/// Enumerates the row permutations of `w` with a non-zero diagonal,
/// normalises each to a unit diagonal, and returns those giving a stable
/// `B = I − W̃`.
pub fn admissible_stable_permutations(w: &DMatrix<f64>, tol: f64) -> Result<Vec<AdmissibleSolution>> {
    let q = w.nrows();
    if w.ncols() != q {
        return Err(Error::Dimension("W must be square".into()));
    }
    if q > 8 {
        return Err(Error::Dimension(format!("enumeration is limited to Q <= 8, got {q}")));
    }
    let mut out = Vec::new();
    let mut perm: Vec<usize> = Vec::with_capacity(q);
    let mut used = vec![false; q];
    enumerate(w, tol, &mut perm, &mut used, &mut out)?;
    Ok(out)
}

fn enumerate(
    w: &DMatrix<f64>,
    tol: f64,
    perm: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut Vec<AdmissibleSolution>,
) -> Result<()> {
    let q = w.nrows();
    let i = perm.len();
    if i == q {
        let b = DMatrix::from_fn(q, q, |r, c| {
            let row = perm[r];
            let v = w[(row, c)] / w[(row, r)];
            if r == c { 0.0 } else { -v }
        });
        if spectral_radius(&b)? < 1.0 {
            out.push((perm.clone(), b));
        }
        return Ok(());
    }
    for src in 0..q {
        if !used[src] && w[(src, i)].abs() > tol {
            used[src] = true;
            perm.push(src);
            enumerate(w, tol, perm, used, out)?;
            perm.pop();
            used[src] = false;
        }
    }
    Ok(())
}

fn signed_weight<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let v = rng.random_range(lo..hi);
    if rng.random::<bool>() { v } else { -v }
}

/// Random stable `B` on `q` vertices whose cycles are vertex-disjoint:
/// vertices are split into groups of size 1 to 3 in random order, each
/// group of size ≥ 2 forms a directed cycle with |weight product| < 1, and
/// extra edges only point from earlier to later groups.
pub fn random_disjoint_cycle_graph<R: Rng + ?Sized>(q: usize, rng: &mut R) -> DMatrix<f64> {
    let mut order: Vec<usize> = (0..q).collect();
    order.shuffle(rng);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut start = 0;
    while start < q {
        let size = rng.random_range(1..=3).min(q - start);
        groups.push(order[start..start + size].to_vec());
        start += size;
    }
    let mut b = DMatrix::zeros(q, q);
    for g in &groups {
        if g.len() < 2 {
            continue;
        }
        for k in 0..g.len() {
            let (from, to) = (g[k], g[(k + 1) % g.len()]);
            b[(to, from)] = signed_weight(rng, 0.3, 0.95);
        }
    }
    for (gi, g) in groups.iter().enumerate() {
        for later in &groups[gi + 1..] {
            for &from in g {
                for &to in later {
                    if rng.random::<f64>() < 0.3 {
                        b[(to, from)] = signed_weight(rng, 0.3, 0.9);
                    }
                }
            }
        }
    }
    b
}
