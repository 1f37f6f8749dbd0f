//! `fundaml` command line.
//!
//! Exit status: 0 on success, 1 for usage or input errors, 2 for internal
//! failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calendar::{Day, Granularity};
use crate::classifier::{NetworkConfig, SamplingPolicy};
use crate::clustering::{
    drill_root, drilldown, write_assignments_csv, ClusterSelection, ClusteringConfig, ClusteringSummary,
};
use crate::features::{bucketize, compute_points, read_points_csv, write_points_csv, DeltaPoint, FeatureRow, PeriodAggregate};
use crate::ingest::{
    clean_mapping_errors, parse_transactions, partition_by_customer_type, write_rejections, write_transactions,
    JointPolicy, ParsedTransactions, Partition,
};
use crate::pipeline::{self, BatchProfile, InvestigateRequest, PipelineError, RunStore};
use crate::screening::{screen_mask, ScreeningThresholds};
use crate::service::{self, ServiceConfig};
use crate::synthgen::{generate, InjectionSpec, PopulationSpec};

#[derive(Debug, Parser)]
#[command(name = "fundaml", version, about = "Suspicious-transaction monitoring for investment funds")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic population with injected patterns.
    Gen(GenArgs),
    /// Validate and clean a transaction file.
    Ingest(IngestArgs),
    /// Aggregate transactions and compute delta points at one granularity.
    Features(FeaturesArgs),
    /// Mark the points that pass the screening thresholds.
    Screen(ScreenArgs),
    /// Cluster (screened) points, optionally drilling into sub-clusters.
    Cluster(ClusterArgs),
    /// Run the full pipeline and store a new run.
    RunBatch(RunBatchArgs),
    /// Score one customer at one date and record the case.
    Investigate(InvestigateArgs),
    /// Score every customer-period of a run.
    ScoreAll(ScoreAllArgs),
    /// Serve the JSON API over a run store.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Population {
    All,
    Individual,
    Corporate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JointAs {
    Individual,
    Corporate,
}

impl From<JointAs> for JointPolicy {
    fn from(j: JointAs) -> Self {
        match j {
            JointAs::Individual => JointPolicy::AsIndividual,
            JointAs::Corporate => JointPolicy::AsCorporate,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    pub customers: usize,
    #[arg(long, default_value_t = 3)]
    pub funds: usize,
    #[arg(long, default_value = "2000-01-01")]
    pub start: Day,
    #[arg(long, default_value = "2000-12-31")]
    pub end: Day,
    /// Pattern injection such as `rapid:10` or `exchange:5` (repeatable).
    #[arg(long)]
    pub inject: Vec<InjectionSpec>,
    #[arg(long, default_value_t = 0.3)]
    pub corporate_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub joint_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives `tx.csv` and `ground_truth.json`.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Cleaned transactions.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// `line_number,reason` of every rejected row.
    #[arg(long)]
    pub rejections: Option<PathBuf>,
    /// Also write `individual.csv` and `corporate.csv` here.
    #[arg(long)]
    pub partition_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "individual")]
    pub joint_as: JointAs,
    /// Format of the cleaning report on stdout.
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "day")]
    pub granularity: Granularity,
    /// Lookback in periods; 0 compares within the period only.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(0..=10))]
    pub k: u32,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    /// Points CSV.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Minimum delta1.
    #[arg(long = "s", default_value_t = 0.4)]
    pub s: f64,
    /// Minimum delta2.
    #[arg(long = "S", default_value_t = 0.4)]
    pub s_upper: f64,
    /// Write only the rows that pass.
    #[arg(long)]
    pub only_screened: bool,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusteringArgs {
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub cluster_seed: u64,
    /// Seedings per clustering; the lowest-inertia run is kept.
    #[arg(long, default_value_t = 10)]
    pub n_init: usize,
}

impl ClusteringArgs {
    fn config(&self) -> ClusteringConfig {
        ClusteringConfig {
            n_clusters: self.clusters,
            max_iterations: self.max_iter,
            convergence_tolerance: self.tol,
            rng_seed: self.cluster_seed,
            n_init: self.n_init,
        }
    }
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Points CSV; only screened rows are used when the column is present.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Cluster every row, ignoring the screened column.
    #[arg(long)]
    pub all: bool,
    #[command(flatten)]
    pub clustering: ClusteringArgs,
    /// Re-cluster inside a cluster: `top` or an index (repeatable, applied in order).
    #[arg(long)]
    pub drill: Vec<String>,
    /// `point_id,cluster` of the final level.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// JSON summary; stdout when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunBatchArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Run store directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long = "s", default_value_t = 0.4)]
    pub s: f64,
    #[arg(long = "S", default_value_t = 0.4)]
    pub s_upper: f64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(0..=10))]
    pub k: u32,
    #[arg(long, value_delimiter = ',', default_value = "day,week,month")]
    pub granularities: Vec<Granularity>,
    /// Levels scored by `investigate`; defaults to the trained levels.
    #[arg(long, value_delimiter = ',')]
    pub investigation: Option<Vec<Granularity>>,
    #[command(flatten)]
    pub clustering: ClusteringArgs,
    #[arg(long, value_delimiter = ',', default_value = "2,5,1")]
    pub layers: Vec<usize>,
    #[arg(long, default_value_t = 5000)]
    pub cycles: usize,
    #[arg(long, default_value_t = 0.25)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub nn_seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub sampling_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub sampling_seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub alert_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    pub review_threshold: f64,
    /// Logical run date; defaults to the latest transaction date.
    #[arg(long)]
    pub as_of: Option<Day>,
    #[arg(long, value_enum, default_value = "all")]
    pub population: Population,
    #[arg(long, value_enum, default_value = "individual")]
    pub joint_as: JointAs,
    /// Expert choice of suspicious cluster, `granularity=index` (repeatable).
    #[arg(long)]
    pub suspicious_cluster: Vec<String>,
}

#[derive(Debug, Args)]
pub struct InvestigateArgs {
    #[arg(long, default_value = "runs")]
    pub store: PathBuf,
    #[arg(long)]
    pub run: String,
    #[arg(long)]
    pub customer: String,
    #[arg(long)]
    pub fund: Option<String>,
    #[arg(long)]
    pub date: Day,
    #[arg(long, value_delimiter = ',')]
    pub granularities: Option<Vec<Granularity>>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ScoreAllArgs {
    #[arg(long, default_value = "runs")]
    pub store: PathBuf,
    #[arg(long)]
    pub run: String,
    /// Defaults to every trained level.
    #[arg(long, value_delimiter = ',')]
    pub granularities: Option<Vec<Granularity>>,
    /// One row per customer (their best-scoring period) instead of per period.
    #[arg(long)]
    pub customers: bool,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "runs")]
    pub store: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value_t = service::DEFAULT_PORT)]
    pub port: u16,
    /// Required in `x-analyst-token` for mutations.
    #[arg(long)]
    pub token: Option<String>,
    #[arg(long)]
    pub read_only: bool,
    /// Console assets to serve alongside the API.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn internal<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Internal(e.to_string())
}

fn open_input(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn create_output(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Input(format!("{}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create_output(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_json<T: serde::Serialize>(sink: &mut dyn Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *sink, value).map_err(internal)?;
    writeln!(sink).map_err(internal)
}

/// Parses a transaction file and collapses mapping-error copies.
pub fn load_transactions(path: &Path) -> Result<ParsedTransactions, CliError> {
    let mut parsed = parse_transactions(open_input(path)?).map_err(input)?;
    let (records, removed) = clean_mapping_errors(std::mem::take(&mut parsed.records));
    parsed.records = records;
    parsed.report.duplicates_removed += removed as u64;
    Ok(parsed)
}

fn load_points(path: &Path) -> Result<Vec<FeatureRow>, CliError> {
    read_points_csv(open_input(path)?).map_err(input)
}

fn split_rows(rows: &[FeatureRow]) -> (Vec<PeriodAggregate>, Vec<DeltaPoint>) {
    rows.iter().map(|r| (r.aggregate.clone(), r.point.clone())).unzip()
}

fn gen(a: GenArgs) -> Result<(), CliError> {
    let spec = PopulationSpec {
        n_customers: a.customers,
        n_funds: a.funds,
        start: a.start,
        end: a.end,
        injections: a.inject,
        corporate_fraction: a.corporate_fraction,
        joint_fraction: a.joint_fraction,
        rng_seed: a.seed,
        ..PopulationSpec::default()
    };
    let (records, truth) = generate(&spec).map_err(input)?;
    write_transactions(create_output(&a.out.join("tx.csv"))?, &records).map_err(internal)?;
    let mut sink = create_output(&a.out.join("ground_truth.json"))?;
    print_json(&mut sink, &truth)?;
    sink.flush().map_err(internal)?;
    println!(
        "{} records, {} injected customers -> {}",
        records.len(),
        truth.customers.len(),
        a.out.display()
    );
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<(), CliError> {
    let parsed = load_transactions(&a.input)?;
    if let Some(path) = &a.out {
        write_transactions(create_output(path)?, &parsed.records).map_err(internal)?;
    }
    if let Some(path) = &a.rejections {
        write_rejections(create_output(path)?, &parsed.rejections).map_err(internal)?;
    }
    if let Some(dir) = &a.partition_dir {
        for (part, records) in partition_by_customer_type(parsed.records.clone(), a.joint_as.into()) {
            let name = match part {
                Partition::Individual => "individual.csv",
                Partition::Corporate => "corporate.csv",
            };
            write_transactions(create_output(&dir.join(name))?, &records).map_err(internal)?;
        }
    }
    let r = &parsed.report;
    let mut stdout = io::stdout().lock();
    match a.format {
        Format::Json => print_json(&mut stdout, r),
        Format::Csv => {
            let c = &r.rejected_by_reason;
            writeln!(
                stdout,
                "records_read,records_accepted,records_rejected,duplicates_removed,missing_field,unparsable_value,negative_amount,zero_redemption,duplicate\n{},{},{},{},{},{},{},{},{}",
                r.records_read,
                r.records_accepted,
                r.records_rejected,
                r.duplicates_removed,
                c.missing_field,
                c.unparsable_value,
                c.negative_amount,
                c.zero_redemption,
                c.duplicate
            )
            .map_err(internal)
        }
    }
}

fn features(a: FeaturesArgs) -> Result<(), CliError> {
    let parsed = load_transactions(&a.input)?;
    let aggregates = bucketize(&parsed.records, a.granularity);
    let points = compute_points(&aggregates, a.k);
    let mut sink = create_output(&a.out)?;
    write_points_csv(&mut sink, &aggregates, &points, None).map_err(internal)?;
    sink.flush().map_err(internal)?;
    println!("{} {} points -> {}", points.len(), a.granularity, a.out.display());
    Ok(())
}

fn screen(a: ScreenArgs) -> Result<(), CliError> {
    let thresholds = ScreeningThresholds::new(a.s, a.s_upper).map_err(input)?;
    let rows = load_points(&a.input)?;
    let (mut aggregates, mut points) = split_rows(&rows);
    let mut mask = screen_mask(&points, &thresholds);
    if a.only_screened {
        let keep = mask.clone();
        let mut it = keep.iter();
        aggregates.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        points.retain(|_| *it.next().unwrap());
        mask.retain(|&m| m);
    }
    let mut sink = create_output(&a.out)?;
    write_points_csv(&mut sink, &aggregates, &points, Some(&mask)).map_err(internal)?;
    sink.flush().map_err(internal)?;
    println!(
        "{} of {} points pass s={} S={}",
        mask.iter().filter(|&&m| m).count(),
        rows.len(),
        thresholds.delta1_min(),
        thresholds.delta2_min()
    );
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<(), CliError> {
    let rows = load_points(&a.input)?;
    let used: Vec<&FeatureRow> = rows
        .iter()
        .filter(|r| a.all || r.screened.unwrap_or(true))
        .collect();
    let coords: Vec<[f64; 2]> = used.iter().map(|r| r.point.coords()).collect();
    let config = a.clustering.config();
    let mut step = drill_root(&coords, &config).map_err(input)?;
    for choice in &a.drill {
        let selection = if choice == "top" {
            ClusterSelection::TopRanked
        } else {
            ClusterSelection::Index(
                choice
                    .parse()
                    .map_err(|_| CliError::Input(format!("--drill expects `top` or an index, got {choice:?}")))?,
            )
        };
        step = drilldown(&coords, &config, &step, selection).map_err(input)?;
    }
    if let Some(path) = &a.out {
        let ids: Vec<String> = step.members.iter().map(|&i| used[i].point.key.id()).collect();
        let mut sink = create_output(path)?;
        write_assignments_csv(&mut sink, &ids, &step.result).map_err(internal)?;
        sink.flush().map_err(internal)?;
    }
    let summary = ClusteringSummary::new(&step.result, &config);
    let mut sink = output(a.summary.as_deref())?;
    print_json(&mut sink, &summary)?;
    sink.flush().map_err(internal)
}

fn parse_overrides(specs: &[String]) -> Result<BTreeMap<Granularity, Vec<usize>>, CliError> {
    let mut out: BTreeMap<Granularity, Vec<usize>> = BTreeMap::new();
    for s in specs {
        let bad = || CliError::Input(format!("--suspicious-cluster expects granularity=index, got {s:?}"));
        let (g, idx) = s.split_once('=').ok_or_else(bad)?;
        let g: Granularity = g.parse().map_err(|_| bad())?;
        out.entry(g).or_default().push(idx.parse().map_err(|_| bad())?);
    }
    Ok(out)
}

/// Maps run-batch flags onto a profile.
pub fn batch_profile(a: &RunBatchArgs) -> Result<BatchProfile, CliError> {
    let defaults = SamplingPolicy::default();
    Ok(BatchProfile {
        granularities: a.granularities.clone(),
        lookback_k: a.k,
        thresholds: ScreeningThresholds::new(a.s, a.s_upper).map_err(input)?,
        clustering: a.clustering.config(),
        network: NetworkConfig {
            layer_sizes: a.layers.clone(),
            training_cycles: a.cycles,
            learning_rate: a.lr,
            rng_seed: a.nn_seed,
        },
        sampling: SamplingPolicy {
            rate: a.sampling_rate,
            seed: a.sampling_seed,
            ..defaults
        },
        alert: pipeline::AlertThresholds {
            alert: a.alert_threshold,
            review: a.review_threshold,
        },
        investigation: a.investigation.clone().unwrap_or_else(|| a.granularities.clone()),
        as_of: a.as_of,
        suspicious_overrides: parse_overrides(&a.suspicious_cluster)?,
    })
}

fn run_batch(a: RunBatchArgs) -> Result<(), CliError> {
    let profile = batch_profile(&a)?;
    let parsed = load_transactions(&a.input)?;
    let r = &parsed.report;
    eprintln!(
        "read {} accepted {} rejected {} duplicates removed {}",
        r.records_read, r.records_accepted, r.records_rejected, r.duplicates_removed
    );
    let records = match a.population {
        Population::All => parsed.records,
        Population::Individual | Population::Corporate => {
            let want = if a.population == Population::Individual {
                Partition::Individual
            } else {
                Partition::Corporate
            };
            partition_by_customer_type(parsed.records, a.joint_as.into())
                .remove(&want)
                .unwrap_or_default()
        }
    };
    eprintln!("profile {}", serde_json::to_string(&profile).map_err(internal)?);
    let store = RunStore::open(&a.out)?;
    let run_id = pipeline::run_batch(&store, &records, &profile)?;
    println!("{run_id}");
    Ok(())
}

fn investigate(a: InvestigateArgs) -> Result<(), CliError> {
    let store = RunStore::open(&a.store)?;
    let req = InvestigateRequest {
        customer_id: a.customer,
        fund_id: a.fund,
        date: a.date,
        granularities: a.granularities,
    };
    let case = pipeline::investigate(&store, &a.run, &req)?;
    let mut stdout = io::stdout().lock();
    match a.format {
        Format::Json => print_json(&mut stdout, &case),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(stdout);
            w.write_record(["case_id", "customer_id", "fund_id", "date", "granularity", "delta1", "delta2", "degree", "alert_level"])
                .map_err(internal)?;
            for (g, d) in &case.degrees {
                let [d1, d2] = case.deltas[g];
                w.write_record([
                    case.case_id.clone(),
                    case.customer_id.clone(),
                    case.fund_id.clone(),
                    case.as_of_date.to_string(),
                    g.to_string(),
                    d1.to_string(),
                    d2.to_string(),
                    d.to_string(),
                    case.alert_level.to_string(),
                ])
                .map_err(internal)?;
            }
            w.flush().map_err(internal)
        }
    }
}

fn score_all(a: ScoreAllArgs) -> Result<(), CliError> {
    let store = RunStore::open(&a.store)?;
    let levels = match a.granularities {
        Some(g) => g,
        None => store.config(&a.run)?.profile.granularities,
    };
    let ranked = pipeline::score_all(&store, &a.run, &levels)?;
    let mut sink = output(a.out.as_deref())?;
    match (a.customers, a.format) {
        (false, Format::Csv) => pipeline::write_scored_csv(&mut sink, &ranked).map_err(internal)?,
        (false, Format::Json) => print_json(&mut sink, &ranked)?,
        (true, Format::Json) => print_json(&mut sink, &pipeline::rank_customers(&ranked))?,
        (true, Format::Csv) => {
            let mut w = csv::Writer::from_writer(&mut sink);
            w.write_record(["rank", "customer_id", "fund_id", "granularity", "period_start", "degree"])
                .map_err(internal)?;
            for (i, c) in pipeline::rank_customers(&ranked).iter().enumerate() {
                w.write_record([
                    (i + 1).to_string(),
                    c.customer_id.clone(),
                    c.fund_id.clone(),
                    c.granularity.to_string(),
                    c.period_start.to_string(),
                    c.degree.to_string(),
                ])
                .map_err(internal)?;
            }
            w.flush().map_err(internal)?;
        }
    }
    sink.flush().map_err(internal)
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let store = Arc::new(RunStore::open(&a.store)?);
    let config = ServiceConfig {
        analyst_token: a.token,
        read_only: a.read_only,
        static_dir: a.static_dir,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(internal)?;
    runtime
        .block_on(service::serve(store, config, SocketAddr::new(a.host, a.port)))
        .map_err(input)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Ingest(a) => ingest(a),
        Command::Features(a) => features(a),
        Command::Screen(a) => screen(a),
        Command::Cluster(a) => cluster(a),
        Command::RunBatch(a) => run_batch(a),
        Command::Investigate(a) => investigate(a),
        Command::ScoreAll(a) => score_all(a),
        Command::Serve(a) => serve(a),
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn main() -> ExitCode {
    main_with_args(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_tree_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_match_library() {
        let cli = Cli::try_parse_from(["fundaml", "run-batch", "--in", "tx.csv"]).unwrap();
        let Command::RunBatch(a) = cli.command else { panic!() };
        let p = batch_profile(&a).unwrap();
        let d = BatchProfile::default();
        assert_eq!(p, d);
    }

    #[test]
    fn overrides_parse() {
        let o = parse_overrides(&["week=2".into(), "week=0".into(), "day=1".into()]).unwrap();
        assert_eq!(o[&Granularity::Week], vec![2, 0]);
        assert!(parse_overrides(&["week".into()]).is_err());
    }
}
