//! Replicate studies on the two simulation scenarios.

use baycausal::config::HyperOverrides;
use baycausal::evaluation::{run_replicates, ReplicateConfig, RecoveryReport};
use baycausal::graph_model::{simulate, CausalParameters, CovariateSpec};
use baycausal::inference::{extract_graph, run_chains, summarize, ChainConfig};
use baycausal::linalg::spectral_radius;
use baycausal::moves::MoveConfig;
use baycausal::rng::{derive_seed, substream, tag};
use baycausal::state::{SamplerOptions, Snapshot};
use nalgebra::DMatrix;

pub const SEED: u64 = 20_240_901;

pub fn config(iterations: usize, burn_in: usize) -> ReplicateConfig {
    ReplicateConfig {
        hyper: HyperOverrides::default(),
        moves: MoveConfig::default(),
        sampler: SamplerOptions::default(),
        chain: ChainConfig { iterations, burn_in, thin: 10, chains: 1, seed: 0 },
        threshold: 0.5,
    }
}

pub fn study(label: &str, truth: &CausalParameters, n: usize, replicates: usize) -> RecoveryReport {
    let started = std::time::Instant::now();
    let report = run_replicates(label, truth, n, replicates, &config(20_000, 12_000), SEED).unwrap();
    print!("{}", report.table());
    println!(
        "    {} replicates at n={n} in {:.0?}; modal P* per replicate {:?}",
        replicates,
        started.elapsed(),
        report.replicates.iter().map(|r| r.modal_p_star).collect::<Vec<_>>()
    );
    report
}

/// Whether every edge of `cycle` (as a vertex sequence `v0 → v1 → ...`)
/// is in the support; `B[to, from]` is the effect of `from` on `to`.
pub fn has_cycle(edges: &DMatrix<bool>, cycle: &[usize]) -> bool {
    (0..cycle.len()).all(|k| edges[(cycle[(k + 1) % cycle.len()], cycle[k])])
}

/// Violations of stability or of the pivot structure among retained samples.
pub fn structural_violations(samples: &[Snapshot]) -> Vec<String> {
    let mut out = Vec::new();
    for s in samples {
        let radius = spectral_radius(&s.b).unwrap_or(f64::INFINITY);
        if radius >= 1.0 {
            out.push(format!("iteration {}: spectral radius {radius}", s.iteration));
        }
        let mut rows: Vec<usize> = s.pivots.iter().flatten().copied().collect();
        let k = rows.len();
        rows.sort_unstable();
        rows.dedup();
        if rows.len() != k {
            out.push(format!("iteration {}: repeated pivot rows {:?}", s.iteration, s.pivots));
        }
        for (p, piv) in s.pivots.iter().enumerate() {
            let col = s.delta.column(p);
            let ok = match piv {
                Some(r) => col[*r] && (0..*r).all(|i| !col[i]),
                None => col.iter().all(|d| !d),
            };
            if !ok {
                out.push(format!("iteration {}: column {p} breaks the pivot structure", s.iteration));
            }
        }
    }
    out
}

/// Re-runs replicate 0 of the Scenario II study keeping every retained
/// sample; returns the samples and the recovered edge support.
pub fn replicate_zero(truth: &CausalParameters, n: usize) -> (Vec<Snapshot>, DMatrix<bool>) {
    let cfg = config(20_000, 12_000);
    let mut data_rng = substream(SEED, &[tag::REPLICATE, 0, tag::DATA]);
    let sim = simulate(truth, n, &CovariateSpec::StandardNormal, &mut data_rng).unwrap();
    let hyper = cfg.hyper.resolve(truth.q()).unwrap();
    let chain = ChainConfig { seed: derive_seed(SEED, &[tag::REPLICATE, 0]), ..cfg.chain };
    let chains = run_chains(&sim.dataset, &hyper, &chain, &cfg.moves, &cfg.sampler).unwrap();
    let est = extract_graph(&summarize(&chains).unwrap(), cfg.threshold);
    let samples = chains.into_iter().flat_map(|c| c.samples).collect();
    (samples, est.b_edges)
}
