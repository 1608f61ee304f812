// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `netcpd` command line: `simulate`, `detect`, `evaluate` and `gof`.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or validation
//! errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::admm::{read_mu_csv, write_mu_csv, AdmmConfig};
use crate::dcsbm::{interval_holdout_score, write_holdout_csv, DcsbmOptions};
use crate::decoder::DecoderParameters;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, write_metrics_csv};
use crate::graph::{degree_histogram, esp_histogram, load_graph_sequence, ChangePointSet, GraphSequence};
use crate::langevin::sample_prior;
use crate::localization::{detect, LocalizationConfig, Method};
use crate::selection::{refit_and_pick, select_lambda, DATA_DRIVEN_GRID, GAMMA_GRID};
use crate::simulation::{read_truth, simulate_generator, simulate_sbm, write_truth, GeneratorSpec, SbmSpec};
use crate::seeding;

#[derive(Debug, Parser)]
#[command(name = "netcpd", version, about = "Change point detection for sequences of networks")]
pub struct Cli {
    /// Worker threads for the parallel parts (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a graph sequence with planted change points.
    Simulate(SimulateArgs),
    /// Fit the model and localize change points.
    Detect(DetectArgs),
    /// Score detected change points against the truth or by DCSBM holdout.
    Evaluate(EvaluateArgs),
    /// Degree and shared-partner histograms of generated vs observed graphs.
    Gof(GofArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Sbm,
    Generator,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "T")]
    pub t_len: Option<usize>,
    /// Comma-separated 1-based change points.
    #[arg(long, value_delimiter = ',')]
    pub change_points: Option<Vec<usize>>,
    #[arg(long)]
    pub undirected: bool,
    #[arg(long, env = "NETCPD_SEED")]
    pub seed: Option<u64>,
    /// JSON file with `scenario`, `sbm` and `generator` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: Option<Scenario>,
    pub sbm: SbmSpec,
    pub generator: GeneratorSpec,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Graph sequence JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Fixed penalty; skips cross-validation.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Penalty grid for cross-validation.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Quantile of the data-driven threshold.
    #[arg(long)]
    pub q: Option<f64>,
    /// Level of the Gamma threshold.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Full-data refits to choose from.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Outer iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Decoder steps per iteration.
    #[arg(long)]
    pub decoder_steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Langevin chains per time point.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Langevin steps per chain.
    #[arg(long)]
    pub langevin_steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, env = "NETCPD_SEED")]
    pub seed: Option<u64>,
    /// JSON file with `admm`, `localization`, `lambda`, `grid`, `repeats`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gamma,
    #[value(name = "data_driven", alias = "data-driven")]
    DataDriven,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gamma => Method::Gamma,
            MethodArg::DataDriven => Method::DataDriven,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub admm: AdmmConfig,
    pub localization: LocalizationConfig,
    pub lambda: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub repeats: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            admm: AdmmConfig::default(),
            localization: LocalizationConfig::default(),
            lambda: None,
            grid: None,
            repeats: 3,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Detected change points (JSON written by `detect`, or a bare array).
    #[arg(long)]
    pub detected: PathBuf,
    /// True change points.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Graph sequence; gives `T` and is required with `--dcsbm`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Number of time points when no graph file is given.
    #[arg(long = "T")]
    pub t_len: Option<usize>,
    /// Held-out DCSBM likelihood of the detected segmentation.
    #[arg(long)]
    pub dcsbm: bool,
    #[arg(long, default_value_t = 6)]
    pub gap: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    pub k_grid: Vec<usize>,
    #[arg(long, env = "NETCPD_SEED")]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GofArgs {
    /// Graph sequence JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory holding `decoder.json` and `mu.csv` from `detect`.
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated 1-based time points.
    #[arg(long, value_delimiter = ',', required = true)]
    pub times: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, env = "NETCPD_SEED")]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be >= 1");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gof(a) => cmd_gof(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{what} {} does not exist", path.display())))
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn finish(mut w: BufWriter<File>, name: &str) -> Result<()> {
    w.flush().map_err(|e| Error::io(name, e))
}

fn write_string(dir: &Path, name: &str, text: &str) -> Result<()> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes()).map_err(|e| Error::io(name, e))?;
    finish(w, name)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg: SimulateConfig = match &args.config {
        Some(p) => {
            require_file(p, "config")?;
            read_json(p)?
        }
        None => SimulateConfig::default(),
    };
    let scenario = args.scenario.or(cfg.scenario).unwrap_or(Scenario::Sbm);
    let (graphs, truth) = match scenario {
        Scenario::Sbm => {
            let mut spec = cfg.sbm;
            if let Some(n) = args.n {
                spec.n = n;
            }
            if let Some(t) = args.t_len {
                spec.t_len = t;
            }
            if let Some(c) = &args.change_points {
                spec.change_points = c.clone();
            }
            if args.undirected {
                spec.directed = false;
            }
            if let Some(s) = args.seed {
                spec.seed = s;
            }
            simulate_sbm(&spec)?
        }
        Scenario::Generator => {
            let mut spec = cfg.generator;
            if let Some(n) = args.n {
                spec.n = n;
            }
            if let Some(t) = args.t_len {
                spec.t_len = t;
            }
            if let Some(c) = &args.change_points {
                spec.change_points = c.clone();
            }
            if args.undirected {
                spec.directed = false;
            }
            if let Some(s) = args.seed {
                spec.seed = s;
                spec.weight_seed = seeding::derive_seed(s, &[1]);
            }
            simulate_generator(&spec)?
        }
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    graphs.save(&args.out.join("graphs.json"))?;
    write_truth(&args.out.join("truth.json"), &truth)?;
    Ok(())
}

#[derive(Serialize)]
struct DetectReport<'a> {
    change_points: &'a [usize],
    lambda: f64,
    method: Method,
    threshold: f64,
    refit: usize,
    coefficient_of_variation: Vec<Option<f64>>,
}

/// Resolves the detect configuration: defaults, then the config file, then flags.
pub fn detect_config(args: &DetectArgs) -> Result<DetectConfig> {
    let mut cfg: DetectConfig = match &args.config {
        Some(p) => {
            require_file(p, "config")?;
            read_json(p)?
        }
        None => DetectConfig::default(),
    };
    let a = &mut cfg.admm;
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(args.iterations, a.iterations);
    set!(args.decoder_steps, a.decoder_steps);
    set!(args.learning_rate, a.learning_rate);
    set!(args.kappa, a.kappa0);
    set!(args.chains, a.langevin.chains);
    set!(args.langevin_steps, a.langevin.steps);
    set!(args.step_size, a.langevin.step_size);
    set!(args.latent_dim, a.decoder.latent_dim);
    set!(args.hidden, a.decoder.hidden);
    set!(args.rank, a.decoder.rank);
    if let Some(s) = args.seed {
        a.seed = s;
        cfg.localization.seed = s;
    }
    let l = &mut cfg.localization;
    set!(args.method.map(Method::from), l.method);
    set!(args.q, l.quantile);
    set!(args.alpha, l.alpha);
    set!(args.repeats, cfg.repeats);
    if args.lambda.is_some() {
        cfg.lambda = args.lambda;
    }
    if args.grid.is_some() {
        cfg.grid = args.grid.clone();
    }
    if cfg.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    cfg.admm.validate()?;
    cfg.localization.validate()?;
    Ok(cfg)
}

pub fn cmd_detect(args: &DetectArgs) -> Result<()> {
    require_file(&args.input, "input")?;
    let cfg = detect_config(args)?;
    let graphs = load_graph_sequence(&args.input)?;
    let out = &args.out;

    let lambda = match cfg.lambda {
        Some(l) => l,
        None => {
            let grid = cfg.grid.clone().unwrap_or_else(|| match cfg.localization.method {
                Method::DataDriven => DATA_DRIVEN_GRID.to_vec(),
                Method::Gamma => GAMMA_GRID.to_vec(),
            });
            let sel = select_lambda(&graphs, &grid, &cfg.admm).map_err(|e| e.context("lambda selection"))?;
            let mut w = create(out, "lambda.csv")?;
            sel.write_csv(&mut w)?;
            finish(w, "lambda.csv")?;
            sel.lambda
        }
    };
    let admm = AdmmConfig { lambda, ..cfg.admm.clone() };
    let pick = refit_and_pick(&graphs, &admm, cfg.repeats).map_err(|e| e.context("final fit"))?;
    let best = pick.best();
    let (cps, mags) = detect(best.mu.view(), &cfg.localization)?;

    let mut w = create(out, "mu.csv")?;
    write_mu_csv(best.mu.view(), &mut w)?;
    finish(w, "mu.csv")?;
    let mut w = create(out, "magnitudes.csv")?;
    mags.write_csv(&mut w)?;
    finish(w, "magnitudes.csv")?;
    let mut w = create(out, "diagnostics.csv")?;
    best.diagnostics.write_csv(&mut w)?;
    finish(w, "diagnostics.csv")?;
    let decoder = serde_json::to_string(&best.decoder).map_err(|e| Error::Parse(e.to_string()))?;
    write_string(out, "decoder.json", &(decoder + "\n"))?;
    let report = DetectReport {
        change_points: cps.points(),
        lambda,
        method: cfg.localization.method,
        threshold: mags.threshold,
        refit: pick.chosen,
        coefficient_of_variation: pick.cov.iter().map(|c| c.is_finite().then_some(*c)).collect(),
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?;
    write_string(out, "change_points.json", &(json + "\n"))?;
    log::info!("detected {:?} with lambda {lambda}", cps.points());
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    require_file(&args.detected, "detected change points")?;
    let detected = read_truth(&args.detected)?;
    let graphs = match &args.input {
        Some(p) => {
            require_file(p, "input")?;
            Some(load_graph_sequence(p)?)
        }
        None => None,
    };
    let t_len = match (&graphs, args.t_len) {
        (Some(g), Some(t)) if g.len() != t => {
            return Err(Error::DimensionMismatch { expected: g.len(), got: t });
        }
        (Some(g), _) => Some(g.len()),
        (None, t) => t,
    };
    if args.truth.is_none() && !args.dcsbm {
        return Err(Error::InvalidConfig("nothing to do: pass --truth and/or --dcsbm".into()));
    }
    if let Some(truth_path) = &args.truth {
        require_file(truth_path, "truth")?;
        let truth = read_truth(truth_path)?;
        let t_len = t_len.ok_or_else(|| Error::InvalidConfig("need --input or --T".into()))?;
        let m = evaluate(&truth, &detected, t_len)?;
        let mut w = create(&args.out, "metrics.csv")?;
        write_metrics_csv(&[m], &mut w)?;
        finish(w, "metrics.csv")?;
    }
    if args.dcsbm {
        let graphs = graphs.ok_or_else(|| Error::InvalidConfig("--dcsbm needs --input".into()))?;
        let opts = DcsbmOptions {
            seed: args.seed.unwrap_or(0),
            ..DcsbmOptions::default()
        };
        let mut rows = Vec::new();
        let det = interval_holdout_score(&graphs, &detected, args.gap, &args.k_grid, &opts)?;
        rows.push(("detected".to_string(), det));
        let none = interval_holdout_score(&graphs, &ChangePointSet::empty(), args.gap, &args.k_grid, &opts)?;
        rows.push(("no_change".to_string(), none));
        if let Some(truth_path) = &args.truth {
            let truth = read_truth(truth_path)?;
            rows.push((
                "truth".to_string(),
                interval_holdout_score(&graphs, &truth, args.gap, &args.k_grid, &opts)?,
            ));
        }
        let mut w = create(&args.out, "holdout.csv")?;
        write_holdout_csv(&rows, &mut w)?;
        finish(w, "holdout.csv")?;
    }
    Ok(())
}

/// Histogram columns: observed counts at `t` and mean counts over the
/// generated graphs.
fn write_histograms<W: Write>(columns: &[(&str, Vec<f64>)], mut out: W) -> Result<()> {
    let io = |e| Error::io("histogram", e);
    let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
    writeln!(out, "value,{}", names.join(",")).map_err(io)?;
    let len = columns.iter().map(|c| c.1.len()).max().unwrap_or(0);
    for k in 0..len {
        let cells: Vec<String> = columns
            .iter()
            .map(|c| format!("{:.6}", c.1.get(k).copied().unwrap_or(0.0)))
            .collect();
        writeln!(out, "{k},{}", cells.join(",")).map_err(io)?;
    }
    Ok(())
}

fn accumulate(acc: &mut [f64], hist: &[usize], weight: f64) {
    for (a, &h) in acc.iter_mut().zip(hist) {
        *a += h as f64 * weight;
    }
}

fn as_f64(hist: &[usize]) -> Vec<f64> {
    hist.iter().map(|&h| h as f64).collect()
}

pub fn cmd_gof(args: &GofArgs) -> Result<()> {
    require_file(&args.input, "input")?;
    let graphs: GraphSequence = load_graph_sequence(&args.input)?;
    let decoder_path = args.model.join("decoder.json");
    let mu_path = args.model.join("mu.csv");
    require_file(&decoder_path, "decoder checkpoint")?;
    require_file(&mu_path, "posterior means")?;
    let decoder: DecoderParameters = read_json(&decoder_path)?;
    let mu_text = std::fs::read_to_string(&mu_path).map_err(|e| Error::io(mu_path.display().to_string(), e))?;
    let mu: Array2<f64> = read_mu_csv(&mu_text)?;
    let shape = decoder.shape();
    if mu.nrows() != graphs.len() {
        return Err(Error::DimensionMismatch { expected: graphs.len(), got: mu.nrows() });
    }
    if mu.ncols() != shape.latent_dim {
        return Err(Error::DimensionMismatch { expected: shape.latent_dim, got: mu.ncols() });
    }
    if shape.nodes != graphs.n() || shape.directed != graphs.directed() {
        return Err(Error::InvalidConfig("decoder does not match the graph sequence".into()));
    }
    if args.samples == 0 {
        return Err(Error::InvalidConfig("need at least one generated graph".into()));
    }
    let seed = args.seed.unwrap_or(0);
    for &t in &args.times {
        let observed = graphs.at(t)?;
        let n = graphs.n();
        let directed = graphs.directed();
        let obs_deg = degree_histogram(observed, directed);
        let obs_esp = esp_histogram(observed);
        let mut gen_out = vec![0.0; obs_deg.degree.len()];
        let mut gen_in = vec![0.0; obs_deg.degree.len()];
        let mut gen_esp = vec![0.0; obs_esp.len()];
        let weight = 1.0 / args.samples as f64;
        let mut rng = seeding::stream(seed, &[t as u64]);
        let zs = sample_prior(mu.row(t - 1), args.samples, &mut rng);
        for z in zs.outer_iter() {
            let y = decoder.sample_graph(z, &mut rng)?;
            let deg = degree_histogram(&y, directed);
            accumulate(&mut gen_out, &deg.degree, weight);
            if let Some(h) = &deg.in_degree {
                accumulate(&mut gen_in, h, weight);
            }
            accumulate(&mut gen_esp, &esp_histogram(&y), weight);
        }
        debug_assert_eq!(gen_out.len(), n.max(1));
        let mut cols = vec![("observed", as_f64(&obs_deg.degree)), ("generated", gen_out)];
        if let Some(h) = &obs_deg.in_degree {
            cols[0].0 = "observed_out";
            cols[1].0 = "generated_out";
            cols.push(("observed_in", as_f64(h)));
            cols.push(("generated_in", gen_in));
        }
        let name = format!("degree_t{t}.csv");
        let mut w = create(&args.out, &name)?;
        write_histograms(&cols, &mut w)?;
        finish(w, &name)?;
        let name = format!("esp_t{t}.csv");
        let mut w = create(&args.out, &name)?;
        write_histograms(&[("observed", as_f64(&obs_esp)), ("generated", gen_esp)], &mut w)?;
        finish(w, &name)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("netcpd").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"admm": {"iterations": 7, "lambda": 3}, "repeats": 2}"#).unwrap();
        let cli = parse(&[
            "detect",
            "--input",
            "g.json",
            "--config",
            cfg.to_str().unwrap(),
            "--repeats",
            "1",
            "--q",
            "0.8",
        ]);
        let Command::Detect(a) = cli.command else { panic!() };
        let c = detect_config(&a).unwrap();
        assert_eq!(c.admm.iterations, 7);
        assert_eq!(c.repeats, 1);
        assert_eq!(c.localization.quantile, 0.8);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["netcpd", "simulate", "--scenario", "nope"]), 2);
        assert_eq!(run(["netcpd", "detect"]), 2);
        assert_eq!(run(["netcpd", "detect", "--input", "/nonexistent/g.json"]), 2);
        assert_eq!(run(["netcpd", "--help"]), 0);
    }
}
