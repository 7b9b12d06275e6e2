mod manifest;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use baycausal::config::RunConfig;
use baycausal::evaluation::scenarios::{scenario_one, scenario_two};
use baycausal::evaluation::{run_replicates, score_graph, ReplicateConfig};
use baycausal::graph_model::{simulate, CausalParameters, CovariateSpec};
use baycausal::inference::{diagnostics, extract_graph, run_chains, summarize};
use baycausal::io::{self, TruthFile};
use baycausal::rng::{substream, tag};
use baycausal::{Error, Result};
use clap::{Args, Parser, Subcommand};

use manifest::{Inputs, RunManifest};

#[derive(Parser)]
#[command(name = "baycausal", version, about = "Bayesian causal discovery with cycles and latent confounders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a built-in scenario or a parameter file.
    Simulate {
        /// built-in scenario: I or II
        #[arg(long, conflicts_with = "params", required_unless_present = "params")]
        scenario: Option<String>,
        /// JSON file with mu, A, B, L, sigma2
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model to a CSV dataset.
    Fit {
        /// CSV with header Y1..YQ then X1..XS
        data: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate and fit replicates of a scenario and report recovery.
    Replicate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        replicates: usize,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an estimated edge support with the truth.
    Score {
        /// graph.json, truth.json, or a bare 0/1 matrix
        estimate: PathBuf,
        truth: PathBuf,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long = "burn-in")]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
}

impl RunArgs {
    /// Config file, then flags on top.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_path(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.iterations {
            cfg.chain.iterations = v;
        }
        if let Some(v) = self.burn_in {
            cfg.chain.burn_in = v;
        }
        if let Some(v) = self.thin {
            cfg.chain.thin = v;
        }
        if let Some(v) = self.chains {
            cfg.chain.chains = v;
        }
        if let Some(v) = self.seed {
            cfg.chain.seed = v;
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn scenario(name: &str) -> Result<CausalParameters> {
    match name {
        "I" | "1" | "i" => Ok(scenario_one()),
        "II" | "2" | "ii" => Ok(scenario_two()),
        other => Err(Error::Config(format!("unknown scenario {other:?}; expected I or II"))),
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn finish(mut manifest: RunManifest, started: Instant, out: &Path, outputs: Vec<PathBuf>) -> Result<()> {
    let path = out.join("manifest.json");
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    manifest.outputs = outputs;
    manifest.outputs.push(path.clone());
    io::write_json(&path, &manifest)
}

fn cmd_simulate(inputs: Inputs, seed: u64, out: &Path) -> Result<()> {
    let started = Instant::now();
    let params = match (&inputs.scenario, &inputs.params) {
        (Some(name), _) => scenario(name)?,
        (None, Some(path)) => io::parse_params(&std::fs::read_to_string(path)?)?,
        (None, None) => return Err(Error::Config("give --scenario or --params".into())),
    };
    let n = inputs.n.unwrap_or(0);
    let mut rng = substream(seed, &[tag::DATA]);
    let sim = simulate(&params, n, &CovariateSpec::StandardNormal, &mut rng)?;
    prepare_out(out)?;
    let data_path = out.join("data.csv");
    io::write_dataset_csv(BufWriter::new(File::create(&data_path)?), &sim.dataset)?;
    let truth_path = out.join("truth.json");
    io::write_json(&truth_path, &TruthFile::new(params))?;
    let mut cfg = RunConfig::default();
    cfg.chain.seed = seed;
    let manifest = RunManifest::new("simulate", inputs, cfg);
    finish(manifest, started, out, vec![data_path, truth_path])?;
    eprintln!("wrote {} observations of {} variables to {}", n, sim.dataset.q(), out.display());
    Ok(())
}

fn cmd_fit(inputs: Inputs, cfg: RunConfig, out: &Path) -> Result<()> {
    let started = Instant::now();
    let data_path = inputs.data.clone().ok_or_else(|| Error::Config("no data file".into()))?;
    let data = io::read_dataset_csv(BufReader::new(File::open(&data_path)?))?;
    let hyper = cfg.hyper.resolve(data.q())?;
    eprintln!(
        "fitting n={} Q={} S={} with {} chain(s) of {} iterations",
        data.n(),
        data.q(),
        data.s(),
        cfg.chain.chains,
        cfg.chain.iterations
    );
    let chains = run_chains(&data, &hyper, &cfg.chain, &cfg.moves, &cfg.sampler)?;
    let summary = summarize(&chains)?;
    let graph = extract_graph(&summary, cfg.threshold);
    let diag = diagnostics(&chains);
    prepare_out(out)?;
    let samples_path = out.join("samples.ndjson");
    let all: Vec<_> = chains.iter().flat_map(|c| c.samples.iter().cloned()).collect();
    io::write_samples_ndjson(BufWriter::new(File::create(&samples_path)?), &all)?;
    let paths = [out.join("summary.json"), out.join("graph.json"), out.join("diagnostics.json")];
    io::write_json(&paths[0], &summary)?;
    io::write_json(&paths[1], &graph)?;
    io::write_json(&paths[2], &diag)?;
    let manifest = RunManifest::new("fit", inputs, cfg);
    let mut outputs = vec![samples_path];
    outputs.extend(paths);
    finish(manifest, started, out, outputs)?;
    eprintln!(
        "modal P* {}, {} edges among primary variables",
        summary.modal_p_star,
        graph.b_edges.iter().filter(|&&e| e).count()
    );
    Ok(())
}

fn cmd_replicate(inputs: Inputs, cfg: RunConfig, out: &Path) -> Result<()> {
    let started = Instant::now();
    let name = inputs.scenario.clone().ok_or_else(|| Error::Config("no scenario".into()))?;
    let truth = scenario(&name)?;
    let (n, reps) = (inputs.n.unwrap_or(0), inputs.replicates.unwrap_or(0));
    let rcfg = ReplicateConfig {
        hyper: cfg.hyper.clone(),
        moves: cfg.moves.clone(),
        sampler: cfg.sampler.clone(),
        chain: cfg.chain.clone(),
        threshold: cfg.threshold,
    };
    let report = run_replicates(&name, &truth, n, reps, &rcfg, cfg.chain.seed)?;
    prepare_out(out)?;
    let report_path = out.join("report.json");
    io::write_json(&report_path, &report)?;
    let table_path = out.join("table.txt");
    let table = report.table();
    std::fs::write(&table_path, &table)?;
    print!("{table}");
    let manifest = RunManifest::new("replicate", inputs, cfg);
    finish(manifest, started, out, vec![report_path, table_path])
}

fn cmd_score(estimate: &Path, truth: &Path) -> Result<()> {
    let est = io::parse_b_support(&std::fs::read_to_string(estimate)?)?;
    let tru = io::parse_b_support(&std::fs::read_to_string(truth)?)?;
    let s = score_graph(&est, &tru)?;
    println!("TP {}  FP {}  TN {}  FN {}", s.tp, s.fp, s.tn, s.fn_);
    println!("TPR {:.4}", s.tpr);
    println!("FDR {:.4}", s.fdr);
    println!("MCC {:.4}", s.mcc);
    println!("exact {}", s.exact);
    Ok(())
}

fn cmd_replay(path: &Path, out: &Path) -> Result<()> {
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if m.version != env!("CARGO_PKG_VERSION") {
        eprintln!("warning: manifest written by version {}, replaying with {}", m.version, env!("CARGO_PKG_VERSION"));
    }
    match m.command.as_str() {
        "simulate" => cmd_simulate(m.inputs, m.seed, out),
        "fit" => cmd_fit(m.inputs, m.config, out),
        "replicate" => cmd_replicate(m.inputs, m.config, out),
        other => Err(Error::Config(format!("cannot replay command {other:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, params, n, seed, out } => {
            cmd_simulate(Inputs { scenario, params, n: Some(n), ..Inputs::default() }, seed, &out)
        }
        Command::Fit { data, run, out } => {
            cmd_fit(Inputs { data: Some(data), ..Inputs::default() }, run.resolve()?, &out)
        }
        Command::Replicate { scenario, n, replicates, run, out } => {
            let inputs = Inputs { scenario: Some(scenario), n: Some(n), replicates: Some(replicates), ..Inputs::default() };
            cmd_replicate(inputs, run.resolve()?, &out)
        }
        Command::Score { estimate, truth } => cmd_score(&estimate, &truth),
        Command::Replay { manifest, out } => cmd_replay(&manifest, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
