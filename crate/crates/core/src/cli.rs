//! Command-line front end. Each subcommand runs one pipeline stage, reads
//! only files written by earlier stages and writes a run manifest next to
//! its outputs.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluate::{self, EvalReport, Label};
use crate::features::{self, FeatureMatrix};
use crate::graph::{build_tx_graph, build_user_graph, GraphKind, NodeGraph};
use crate::kmeans::{self, Clustering, Init, KMeansConfig};
use crate::ledger::{parse_ledger, write_ledger};
use crate::lof::{self, NeighborQuery, RankedScores};
use crate::powerlaw::{self, Binning, DensificationSeries, PowerLawFit};
use crate::synth::{self, AnomalyProfile, SynthConfig};
use crate::tsv::{write_atomic, Table};

#[derive(Parser, Debug)]
#[command(
    name = "ledgerlof",
    version,
    about = "Dual-graph anomaly detection on transaction ledgers"
)]
pub struct Cli {
    /// Plain-text `key = value` file supplying default flag values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic ledger with planted anomalies.
    Synth(SynthArgs),
    /// Validate a ledger and write both graphs as TSV.
    #[command(alias = "ingest")]
    Build(BuildArgs),
    /// Extract per-node features from a built graph.
    Features(FeaturesArgs),
    /// Fit a power law to a feature distribution or to graph densification.
    Powerlaw(PowerlawArgs),
    /// k-means on normalized model features.
    Cluster(ClusterArgs),
    /// Rank nodes by local outlier factor.
    Lof(LofArgs),
    /// Centroid ratios, dual metric and known-label hits.
    Eval(EvalArgs),
    /// Turn stage outputs into scatter data.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    pub n_users: usize,
    #[arg(long, default_value_t = 40_000)]
    pub n_tx: usize,
    #[arg(long, default_value_t = 2.5)]
    pub degree_exponent: f64,
    #[arg(long, default_value_t = 1.3)]
    pub densification_exponent: f64,
    #[arg(long, default_value_t = 0.01)]
    pub anomaly_rate: f64,
    #[arg(long, default_value = "extreme-value")]
    pub anomaly_profile: AnomalyProfile,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Ledger CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Labels file to write (one `user:<id>` per line).
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    /// Directory receiving `{user,tx}_{nodes,edges}.tsv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    /// Directory written by `build`.
    #[arg(long)]
    pub graph_dir: PathBuf,
    #[arg(long)]
    pub kind: GraphKind,
    /// Ledger CSV; required for transaction features.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Also emit the descriptive extended columns.
    #[arg(long)]
    pub extended: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PowerlawArgs {
    /// `densification` or a column of the features TSV.
    #[arg(long)]
    pub quantity: String,
    #[arg(long, required_if_eq("quantity", "densification"))]
    pub ledger: Option<PathBuf>,
    /// Graph whose densification is measured.
    #[arg(long, default_value = "tx")]
    pub kind: GraphKind,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = powerlaw::DEFAULT_SNAPSHOTS)]
    pub snapshots: usize,
    #[arg(long, value_enum, default_value_t = BinningArg::Log)]
    pub binning: BinningArg,
    #[arg(long, default_value_t = powerlaw::DEFAULT_BIN_RATIO)]
    pub bin_ratio: f64,
    #[arg(long, default_value_t = powerlaw::DEFAULT_MIN_BIN_COUNT)]
    pub min_bin_count: usize,
    /// Deviation threshold in residual standard deviations.
    #[arg(long, default_value_t = powerlaw::DEFAULT_DEVIATION_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the ids whose values fall in deviating bins.
    #[arg(long)]
    pub deviant_ids: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BinningArg {
    Log,
    Exact,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, conflicts_with = "select_k")]
    pub k: Option<usize>,
    /// Entropy-based k selection over `lo..hi` (inclusive); the default when
    /// `--k` is absent is 2..10.
    #[arg(long, value_parser = parse_range)]
    pub select_k: Option<RangeInclusive<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = kmeans::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    pub init: InitArg,
    /// Use every column instead of the model feature set.
    #[arg(long)]
    pub all_columns: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Random,
    Farthest,
}

#[derive(Args, Debug)]
pub struct LofArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = lof::DEFAULT_K_NEIGHBORS)]
    pub k_neighbors: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    /// Directory written by `cluster`; required in cluster mode.
    #[arg(long, required_if_eq("mode", "cluster"))]
    pub cluster_dir: Option<PathBuf>,
    #[arg(long, default_value_t = lof::DEFAULT_TOP_N)]
    pub top: usize,
    #[arg(long)]
    pub all_columns: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Cluster,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long)]
    pub user_lof: PathBuf,
    #[arg(long)]
    pub tx_lof: PathBuf,
    #[arg(long, default_value_t = evaluate::DEFAULT_DUAL_N)]
    pub n: usize,
    #[arg(long, default_value_t = evaluate::DEFAULT_DUAL_M)]
    pub m: usize,
    /// Features and `cluster` output for the centroid ratios.
    #[arg(long)]
    pub user_features: Option<PathBuf>,
    #[arg(long)]
    pub tx_features: Option<PathBuf>,
    #[arg(long)]
    pub cluster_dir: Option<PathBuf>,
    /// Outliers averaged by the centroid ratio.
    #[arg(long, default_value_t = lof::DEFAULT_TOP_N)]
    pub top: usize,
    #[arg(long)]
    pub all_columns: bool,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = lof::DEFAULT_TOP_N)]
    pub label_top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long, value_enum, default_value_t = PlotFrom::Powerlaw)]
    pub from: PlotFrom,
    /// TSV written by `powerlaw`.
    #[arg(long, required_if_eq("from", "powerlaw"))]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = powerlaw::DEFAULT_DEVIATION_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, required_if_eq("from", "clusters"))]
    pub features: Option<PathBuf>,
    #[arg(long, required_if_eq("from", "clusters"))]
    pub cluster_dir: Option<PathBuf>,
    /// Feature columns on the axes (default: the first two).
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_range(s: &str) -> std::result::Result<RangeInclusive<usize>, String> {
    let (lo, hi) = s
        .split_once("..=")
        .or_else(|| s.split_once(".."))
        .ok_or_else(|| format!("expected lo..hi, got {s:?}"))?;
    let lo: usize = lo
        .trim()
        .parse()
        .map_err(|_| format!("bad lower bound in {s:?}"))?;
    let hi: usize = hi
        .trim()
        .parse()
        .map_err(|_| format!("bad upper bound in {s:?}"))?;
    if lo == 0 || hi < lo {
        return Err(format!("range {s:?} must satisfy 1 <= lo <= hi"));
    }
    Ok(lo..=hi)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one subcommand run, written as JSON next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub subcommand: String,
    /// Every flag of the subcommand with its effective value.
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings_ms: BTreeMap<String, f64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

struct Run {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timings: BTreeMap<String, f64>,
    seed: Option<u64>,
    manifest: PathBuf,
}

impl Run {
    fn new(manifest: PathBuf) -> Self {
        Run {
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            seed: None,
            manifest,
        }
    }

    fn input<'p>(&mut self, p: &'p Path) -> &'p Path {
        if !self.inputs.iter().any(|q| q == p) {
            self.inputs.push(p.to_path_buf());
        }
        p
    }

    fn output<'p>(&mut self, p: &'p Path) -> &'p Path {
        self.outputs.push(p.to_path_buf());
        p
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings
            .insert(stage.to_string(), t.elapsed().as_secs_f64() * 1e3);
        out
    }
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn manifest_beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    file.with_file_name(name)
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if args.len() <= 1 {
        let mut cmd = Cli::command();
        eprintln!("{}", cmd.render_help());
        return 2;
    }
    match try_run(args) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: kind=usage message={}", one_line(&msg));
            2
        }
        Err(Failure::Display(text)) => {
            print!("{text}");
            0
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!(
                "error: kind={} message={}",
                e.kind(),
                one_line(&e.to_string())
            );
            e.exit_code()
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

enum Failure {
    Usage(String),
    Display(String),
    Pipeline(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Pipeline(e)
    }
}

fn try_run(args: Vec<OsString>) -> std::result::Result<(), Failure> {
    let merged = merge_config(&args)?;
    let matches = match Cli::command().try_get_matches_from(&merged) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    Err(Failure::Display(e.render().to_string()))
                }
                _ => {
                    let text = e.render().to_string();
                    let first = text
                        .lines()
                        .find(|l| !l.trim().is_empty())
                        .unwrap_or("invalid arguments")
                        .trim_start_matches("error: ")
                        .to_string();
                    Err(Failure::Usage(first))
                }
            };
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Failure::Usage(e.to_string()))?;
    let (sub_name, sub_matches) = matches.subcommand().expect("subcommand required");
    let config = snapshot(sub_name, sub_matches);
    let command_line: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let started = Instant::now();
    let mut run = pool.install(|| execute(&cli.command))?;
    run.timings
        .insert("total".into(), started.elapsed().as_secs_f64() * 1e3);
    let manifest = RunManifest {
        command_line,
        subcommand: sub_name.to_string(),
        config,
        seed: run.seed,
        inputs: digests(&run.inputs)?,
        outputs: digests(&run.outputs)?,
        timings_ms: run.timings,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    write_atomic(&run.manifest, format!("{json}\n").as_bytes())?;
    Ok(())
}

fn snapshot(sub: &str, m: &ArgMatches) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let cmd = Cli::command();
    let Some(sc) = cmd.find_subcommand(sub) else {
        return out;
    };
    for arg in sc.get_arguments() {
        let id = arg.get_id().as_str();
        if let Ok(Some(vals)) = m.try_get_raw(id) {
            let v: Vec<String> = vals.map(|v| v.to_string_lossy().into_owned()).collect();
            out.insert(id.replace('_', "-"), v.join(","));
        }
    }
    out
}

/// Splices `key = value` lines from `--config` into the argument list as
/// `--key=value`, skipping keys given on the command line or belonging to
/// other subcommands.
fn merge_config(args: &[OsString]) -> std::result::Result<Vec<OsString>, Failure> {
    let mut config_path: Option<PathBuf> = None;
    let mut sub_pos: Option<usize> = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            config_path = args.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config_path = Some(PathBuf::from(p));
        } else if a == "--threads" {
            i += 2;
            continue;
        } else if sub_pos.is_none() && !a.starts_with('-') {
            sub_pos = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(sub_pos)) = (config_path, sub_pos) else {
        return Ok(args.to_vec());
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let entries = parse_config(&text)?;

    let root = Cli::command();
    let sub_name = args[sub_pos].to_string_lossy().into_owned();
    let Some(sub) = root.find_subcommand(&sub_name) else {
        return Ok(args.to_vec());
    };
    let mut known_anywhere: HashSet<String> = HashSet::new();
    for a in root.get_arguments() {
        known_anywhere.extend(a.get_long().map(str::to_string));
    }
    for s in root.get_subcommands() {
        for a in s.get_arguments() {
            known_anywhere.extend(a.get_long().map(str::to_string));
        }
    }
    let given: HashSet<String> = args
        .iter()
        .filter_map(|a| {
            let a = a.to_string_lossy();
            a.strip_prefix("--")
                .map(|f| f.split('=').next().unwrap_or(f).to_string())
        })
        .collect();

    let mut extra: Vec<OsString> = Vec::new();
    let mut global: Vec<OsString> = Vec::new();
    for (line, key, value) in entries {
        let flag = key.replace('_', "-");
        if flag == "config" {
            return Err(Error::Config(format!("line {line}: config files cannot nest")).into());
        }
        if !known_anywhere.contains(&flag) {
            return Err(Error::Config(format!("line {line}: unknown key {key:?}")).into());
        }
        if given.contains(&flag) {
            continue;
        }
        let target = if let Some(a) = sub.get_arguments().find(|a| a.get_long() == Some(&flag)) {
            Some((a.get_action().takes_values(), &mut extra))
        } else if let Some(a) = root.get_arguments().find(|a| a.get_long() == Some(&flag)) {
            Some((a.get_action().takes_values(), &mut global))
        } else {
            None
        };
        match target {
            Some((true, dst)) => dst.push(format!("--{flag}={value}").into()),
            Some((false, dst)) => match value.as_str() {
                "true" | "yes" | "1" => dst.push(format!("--{flag}").into()),
                "false" | "no" | "0" => {}
                other => {
                    return Err(Error::Config(format!(
                        "line {line}: {key} expects true or false, got {other:?}"
                    ))
                    .into())
                }
            },
            None => {}
        }
    }
    let mut out: Vec<OsString> = args[..=sub_pos].to_vec();
    out.extend(global);
    out.extend(extra);
    out.extend_from_slice(&args[sub_pos + 1..]);
    Ok(out)
}

/// `(line number, key, value)` for each `key = value` line; `#` starts a
/// comment.
pub fn parse_config(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1))
        })?;
        let (k, v) = (k.trim(), v.trim().trim_matches('"'));
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn execute(cmd: &Command) -> Result<Run> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Build(a) => cmd_build(a),
        Command::Features(a) => cmd_features(a),
        Command::Powerlaw(a) => cmd_powerlaw(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Lof(a) => cmd_lof(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<Run> {
    let mut run = Run::new(manifest_beside(&a.out));
    run.seed = Some(a.seed);
    let cfg = SynthConfig {
        n_users: a.n_users,
        n_tx: a.n_tx,
        degree_exponent: a.degree_exponent,
        densification_exponent: a.densification_exponent,
        anomaly_rate: a.anomaly_rate,
        anomaly_profile: a.anomaly_profile,
        seed: a.seed,
    };
    let out = run.time("generate", || synth::generate(&cfg))?;
    let mut buf = Vec::new();
    write_ledger(&mut buf, &out.ledger)?;
    write_atomic(run.output(&a.out), &buf)?;
    write_atomic(
        run.output(&a.labels),
        evaluate::format_labels(&out.labels).as_bytes(),
    )?;
    Ok(run)
}

fn cmd_build(a: &BuildArgs) -> Result<Run> {
    let mut run = Run::new(a.out_dir.join("build.manifest.json"));
    let records = run.time("parse", || parse_ledger(&a.ledger))?;
    run.input(&a.ledger);
    let (user, tx) = run.time("build", || {
        (build_user_graph(&records), build_tx_graph(&records))
    });
    for g in [&user, &tx] {
        g.write_tsv(&a.out_dir)?;
        for part in ["nodes", "edges"] {
            run.outputs
                .push(a.out_dir.join(format!("{}_{part}.tsv", g.kind)));
        }
    }
    Ok(run)
}

fn cmd_features(a: &FeaturesArgs) -> Result<Run> {
    let mut run = Run::new(manifest_beside(&a.out));
    let g = NodeGraph::read_tsv(&a.graph_dir, a.kind)?;
    for part in ["nodes", "edges"] {
        run.inputs
            .push(a.graph_dir.join(format!("{}_{part}.tsv", a.kind)));
    }
    let m = match a.kind {
        GraphKind::User => run.time("extract", || {
            features::extract_user_features(&g, a.extended)
        })?,
        GraphKind::Transaction => {
            let ledger = a
                .ledger
                .as_ref()
                .ok_or_else(|| Error::Config("transaction features need --ledger".into()))?;
            let records = parse_ledger(run.input(ledger))?;
            run.time("extract", || {
                features::extract_tx_features(&g, &records, a.extended)
            })?
        }
    };
    m.write_tsv(run.output(&a.out))?;
    Ok(run)
}

/// The matrix k-means and LOF operate on: model columns (unless `all`),
/// log-transformed and standardized.
pub fn model_matrix(raw: &FeatureMatrix, all: bool) -> Result<FeatureMatrix> {
    let picked = if all {
        raw.clone()
    } else {
        raw.select(features::model_features(raw.graph_kind))?
    };
    Ok(features::normalize(&picked))
}

fn fit_table(fit: &PowerLawFit) -> Table {
    let mut t = Table::new(["log_x", "log_y", "fitted_y", "residual"]);
    for p in &fit.points {
        t.push(vec![
            p.log_x.to_string(),
            p.log_y.to_string(),
            p.fitted.to_string(),
            p.residual.to_string(),
        ]);
    }
    t.comments.push(format!(
        "exponent={} r2={} intercept={} points={}",
        fit.exponent,
        fit.r_squared,
        fit.intercept,
        fit.points.len()
    ));
    t
}

fn cmd_powerlaw(a: &PowerlawArgs) -> Result<Run> {
    let mut run = Run::new(manifest_beside(&a.out));
    let fit;
    if a.quantity == "densification" {
        let ledger = a.ledger.as_ref().expect("clap requires --ledger");
        let records = parse_ledger(run.input(ledger))?;
        let series = DensificationSeries::from_ledger(&records, a.kind, a.snapshots);
        fit = run.time("fit", || powerlaw::densification_fit(&series))?;
    } else {
        let path = a
            .features
            .as_ref()
            .ok_or_else(|| Error::Config(format!("quantity {:?} needs --features", a.quantity)))?;
        let m = FeatureMatrix::read_tsv(run.input(path))?;
        let values = m
            .column_by_name(&a.quantity)
            .ok_or_else(|| Error::Config(format!("no feature column {:?}", a.quantity)))?;
        let binning = match a.binning {
            BinningArg::Exact => Binning::Exact,
            BinningArg::Log => Binning::Log {
                ratio: a.bin_ratio,
                min_count: a.min_bin_count,
            },
        };
        fit = run.time("fit", || {
            powerlaw::degree_distribution_fit(&values, binning)
        })?;
        if let Some(ids_path) = &a.deviant_ids {
            let dev = powerlaw::deviation_points(&fit, a.threshold);
            let ids = powerlaw::ids_in_points(&m.node_ids, &values, &dev);
            let text: String = ids
                .iter()
                .map(|id| format!("{}:{id}\n", m.graph_kind))
                .collect();
            write_atomic(run.output(ids_path), text.as_bytes())?;
        }
    }
    fit_table(&fit).write(run.output(&a.out))?;
    Ok(run)
}

fn cluster_paths(dir: &Path, kind: GraphKind) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{kind}_clusters.tsv")),
        dir.join(format!("{kind}_centroids.tsv")),
    )
}

fn cmd_cluster(a: &ClusterArgs) -> Result<Run> {
    let raw = FeatureMatrix::read_tsv(&a.features)?;
    let kind = raw.graph_kind;
    let mut run = Run::new(a.out_dir.join(format!("{kind}_cluster.manifest.json")));
    run.input(&a.features);
    run.seed = Some(a.seed);
    let m = model_matrix(&raw, a.all_columns)?;
    let init = match a.init {
        InitArg::Random => Init::Random,
        InitArg::Farthest => Init::FarthestPoint,
    };

    let (clustering, entropies, best_k) = match a.k {
        Some(k) => {
            let cfg = KMeansConfig {
                init,
                max_iter: a.max_iter,
                ..KMeansConfig::new(k, a.seed)
            };
            let c = run.time("kmeans", || kmeans::kmeans_with(&m, &cfg))?;
            let h = kmeans::cluster_entropy(&m, &c.assignments, c.k);
            (c, vec![(k, h)], k)
        }
        None => {
            let range = a.select_k.clone().unwrap_or(kmeans::DEFAULT_K_RANGE);
            if init != Init::Random {
                return Err(Error::Config("--select-k supports random init only".into()));
            }
            let sel = run.time("select_k", || {
                kmeans::select_k(&m, range, a.seed, a.max_iter)
            })?;
            (sel.best, sel.entropies, sel.best_k)
        }
    };

    let (assign_path, centroid_path) = cluster_paths(&a.out_dir, kind);
    clustering.write_tsv(&m, &assign_path, &centroid_path)?;
    run.output(&assign_path);
    run.output(&centroid_path);

    let mut et = Table::new(["k", "entropy"]);
    for (k, h) in &entropies {
        et.push(vec![k.to_string(), h.to_string()]);
    }
    et.comments.push(format!("best_k={best_k}"));
    let ep = a.out_dir.join(format!("{kind}_entropy.tsv"));
    et.write(run.output(&ep))?;

    let mut tt = Table::new(["iteration", "wcss"]);
    for (i, w) in clustering.objective_trace.iter().enumerate() {
        tt.push(vec![(i + 1).to_string(), w.to_string()]);
    }
    let tp = a.out_dir.join(format!("{kind}_wcss.tsv"));
    tt.write(run.output(&tp))?;

    // per-cluster means of the raw features, for reading clusters in units
    let assign = clustering.assignments_for(&m)?;
    let mut pt = Table::new(
        ["cluster".to_string(), "size".to_string()]
            .into_iter()
            .chain(raw.feature_names.clone()),
    );
    for c in 0..clustering.k {
        let members: Vec<usize> = (0..raw.rows()).filter(|&i| assign[i] == c).collect();
        let mut row = vec![c.to_string(), members.len().to_string()];
        for j in 0..raw.dims() {
            let mean = if members.is_empty() {
                0.0
            } else {
                members.iter().map(|&i| raw.row(i)[j]).sum::<f64>() / members.len() as f64
            };
            row.push(mean.to_string());
        }
        pt.push(row);
    }
    let pp = a.out_dir.join(format!("{kind}_cluster_profile.tsv"));
    pt.write(run.output(&pp))?;
    Ok(run)
}

fn read_clustering(run: &mut Run, dir: &Path, kind: GraphKind) -> Result<Clustering> {
    let (ap, cp) = cluster_paths(dir, kind);
    let c = Clustering::read_tsv(&ap, &cp)?;
    run.input(&ap);
    run.input(&cp);
    Ok(c)
}

fn cmd_lof(a: &LofArgs) -> Result<Run> {
    let mut run = Run::new(manifest_beside(&a.out));
    let raw = FeatureMatrix::read_tsv(run.input(&a.features))?;
    let m = model_matrix(&raw, a.all_columns)?;
    let clustering;
    let query = match a.mode {
        ModeArg::Exact => NeighborQuery::exact(a.k_neighbors),
        ModeArg::Cluster => {
            let dir = a.cluster_dir.as_ref().expect("clap requires --cluster-dir");
            clustering = read_clustering(&mut run, dir, raw.graph_kind)?;
            NeighborQuery::cluster_restricted(a.k_neighbors, &clustering)
        }
    };
    let report = run.time("score", || lof::score_all(&m, &query, a.top))?;
    report.write_tsv(run.output(&a.out))?;
    Ok(run)
}

fn cmd_eval(a: &EvalArgs) -> Result<Run> {
    let mut run = Run::new(manifest_beside(&a.out));
    let records = parse_ledger(run.input(&a.ledger))?;
    let users = RankedScores::read_tsv(run.input(&a.user_lof))?.ids();
    let txs = RankedScores::read_tsv(run.input(&a.tx_lof))?.ids();

    let mut ratio = |features: &Option<PathBuf>| -> Result<Option<evaluate::CentroidRatio>> {
        let (Some(fp), Some(dir)) = (features, &a.cluster_dir) else {
            return Ok(None);
        };
        let raw = FeatureMatrix::read_tsv(run.input(fp))?;
        let ranked = if raw.graph_kind == GraphKind::User {
            &users
        } else {
            &txs
        };
        let m = model_matrix(&raw, a.all_columns)?;
        let c = read_clustering(&mut run, dir, raw.graph_kind)?;
        evaluate::centroid_ratio(ranked, &c, &m, a.top.min(ranked.len())).map(Some)
    };
    let centroid_ratio_user = ratio(&a.user_features)?;
    let centroid_ratio_tx = ratio(&a.tx_features)?;

    let dual = run.time("dual", || {
        evaluate::dual_metric(&users, &txs, &records, a.n, a.m)
    })?;

    let mut label_hits: Vec<(Label, usize)> = Vec::new();
    if let Some(lp) = &a.labels {
        let labels = evaluate::read_labels(run.input(lp))?;
        for (kind, ranked) in [(GraphKind::User, &users), (GraphKind::Transaction, &txs)] {
            let ids: Vec<u64> = labels
                .iter()
                .filter(|l| l.kind == kind)
                .map(|l| l.id)
                .collect();
            label_hits.extend(
                evaluate::label_check(ranked, &ids, a.label_top)
                    .into_iter()
                    .map(|(id, rank)| (Label { kind, id }, rank)),
            );
        }
    }
    let report = EvalReport {
        centroid_ratio_user,
        centroid_ratio_tx,
        dual,
        label_hits,
    };
    write_atomic(run.output(&a.out), report.to_text().as_bytes())?;
    Ok(run)
}

fn cmd_plot(a: &PlotArgs) -> Result<Run> {
    let mut run = Run::new(manifest_beside(&a.out));
    let table = match a.from {
        PlotFrom::Powerlaw => {
            let input = a.input.as_ref().expect("clap requires --input");
            powerlaw_scatter(&Table::read(run.input(input))?, a.threshold)?
        }
        PlotFrom::Clusters => {
            let fp = a.features.as_ref().expect("clap requires --features");
            let dir = a.cluster_dir.as_ref().expect("clap requires --cluster-dir");
            let raw = FeatureMatrix::read_tsv(run.input(fp))?;
            let c = read_clustering(&mut run, dir, raw.graph_kind)?;
            cluster_scatter(&raw, &c, a.x.as_deref(), a.y.as_deref())?
        }
    };
    table.write(run.output(&a.out))?;
    Ok(run)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotFrom {
    Powerlaw,
    Clusters,
}

/// `x y fit flag` in linear units from a `powerlaw` table; `flag` marks
/// points beyond `threshold` residual standard deviations.
pub fn powerlaw_scatter(t: &Table, threshold: f64) -> Result<Table> {
    t.expect_header(&["log_x", "log_y", "fitted_y", "residual"])?;
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Format(format!("invalid number {s:?}")))
    };
    let rows = t
        .rows
        .iter()
        .map(|r| Ok([parse(&r[0])?, parse(&r[1])?, parse(&r[2])?, parse(&r[3])?]))
        .collect::<Result<Vec<[f64; 4]>>>()?;
    let sd = if rows.is_empty() {
        0.0
    } else {
        (rows.iter().map(|r| r[3] * r[3]).sum::<f64>() / rows.len() as f64).sqrt()
    };
    let mut out = Table::new(["x", "y", "fit", "flag"]);
    for r in &rows {
        let flag = sd > 0.0 && r[3].abs() > threshold * sd;
        out.push(vec![
            10f64.powf(r[0]).to_string(),
            10f64.powf(r[1]).to_string(),
            10f64.powf(r[2]).to_string(),
            u8::from(flag).to_string(),
        ]);
    }
    out.comments.extend(t.comments.iter().cloned());
    Ok(out)
}

/// `node_id x y cluster` over two raw feature columns.
pub fn cluster_scatter(
    raw: &FeatureMatrix,
    c: &Clustering,
    x: Option<&str>,
    y: Option<&str>,
) -> Result<Table> {
    let pick = |name: Option<&str>, default: usize| -> Result<(String, Vec<f64>)> {
        let name = match name {
            Some(n) => n.to_string(),
            None => raw
                .feature_names
                .get(default)
                .cloned()
                .ok_or_else(|| Error::Config("need at least two feature columns".into()))?,
        };
        let col = raw
            .column_by_name(&name)
            .ok_or_else(|| Error::Config(format!("no feature column {name:?}")))?;
        Ok((name, col))
    };
    let (xn, xs) = pick(x, 0)?;
    let (yn, ys) = pick(y, 1)?;
    let mut by_id = std::collections::HashMap::new();
    for (id, cl) in c.node_ids.iter().zip(&c.assignments) {
        by_id.insert(*id, *cl);
    }
    let mut out = Table::new(["node_id", "x", "y", "cluster"]);
    for (i, id) in raw.node_ids.iter().enumerate() {
        let cl = by_id.get(id).ok_or(Error::UnknownNode(*id))?;
        out.push(vec![
            id.to_string(),
            xs[i].to_string(),
            ys[i].to_string(),
            cl.to_string(),
        ]);
    }
    out.comments.push(format!("x={xn} y={yn}"));
    Ok(out)
}
