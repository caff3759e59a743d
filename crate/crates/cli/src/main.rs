mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Router vendor fingerprinting pipeline.
///
/// Stages exchange plain files: targets, response JSONL, label CSV,
/// signature table JSON, verdict JSONL and report CSV/JSON. Every run
/// writes `<subcommand>.manifest.json` next to its outputs.
///
/// Exit status: 0 success, 1 finished with warnings, 2 fatal error.
#[derive(Debug, Parser)]
#[command(name = "routerprint", version)]
pub struct Cli {
    /// Directory receiving all outputs; created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// TOML configuration file. Flags override its values.
    #[arg(long, global = true, env = "ROUTERPRINT_CONFIG")]
    pub config: Option<PathBuf>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe targets and write responses.jsonl.
    Scan(ScanArgs),
    /// Extract vendor labels from SNMPv3 replies into labels.csv.
    Label(LabelArgs),
    /// Build signatures.json from labeled responses.
    BuildSigs(BuildSigsArgs),
    /// Classify responses against a signature table into verdicts.jsonl.
    Classify(ClassifyArgs),
    /// Vendor diversity, AS homogeneity and alternative-transit reports.
    AnalyzePaths(AnalyzePathsArgs),
    /// Materialize a simulated fleet: ground truth, router list and targets.
    Simulate(SimulateArgs),
    /// Seeded holdout evaluation; writes per-vendor recall and precision.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportArg {
    Live,
    Sim(PathBuf),
}

fn parse_transport(s: &str) -> Result<TransportArg, String> {
    if s == "live" {
        return Ok(TransportArg::Live);
    }
    match s.strip_prefix("sim:") {
        Some(p) if !p.is_empty() => Ok(TransportArg::Sim(PathBuf::from(p))),
        _ => Err(format!("expected `live` or `sim:<fleet.json>`, got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Target list, one IPv4 address per line. Defaults to every router of a simulated fleet.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// `live` (raw sockets, needs root or CAP_NET_RAW) or `sim:<fleet.json>`.
    #[arg(long, value_parser = parse_transport)]
    pub transport: TransportArg,
    /// Seed for probe payloads and initial tags.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Source address for live scans; defaults to the route toward the first target.
    #[arg(long)]
    pub source: Option<std::net::Ipv4Addr>,
    /// Probes per second toward one target.
    #[arg(long)]
    pub per_target_rate: Option<f64>,
    /// Packets per second overall.
    #[arg(long)]
    pub global_rate: Option<f64>,
    /// Seconds to wait for each reply.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Destination port for TCP and UDP probes.
    #[arg(long)]
    pub port: Option<u16>,
    /// Targets probed concurrently.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Extra `pen,vendor` CSV merged over the built-in dictionary (sim fleets).
    #[arg(long)]
    pub vendors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Scan output (responses JSONL).
    #[arg(long)]
    pub responses: PathBuf,
    /// Extra `pen,vendor` CSV merged over the built-in dictionary.
    #[arg(long)]
    pub vendors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabeledInputs {
    /// Responses JSONL; repeat for several datasets, paired in order with --labels.
    #[arg(long, required = true)]
    pub responses: Vec<PathBuf>,
    /// Labels CSV matching each --responses.
    #[arg(long, required = true)]
    pub labels: Vec<PathBuf>,
    /// Largest per-step IPID increase still counted as incremental.
    #[arg(long)]
    pub ipid_threshold: Option<u32>,
}

#[derive(Debug, Args)]
pub struct BuildSigsArgs {
    #[command(flatten)]
    pub inputs: LabeledInputs,
    /// Minimum occurrences for a signature to be used.
    #[arg(long)]
    pub min_occurrences: Option<u32>,
    /// Do not derive partial-protocol signatures.
    #[arg(long)]
    pub no_partials: bool,
    /// Also write sweep.csv for these thresholds, e.g. `1..50` or `5,10,20`.
    #[arg(long)]
    pub sweep: Option<String>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Responses JSONL to classify.
    #[arg(long)]
    pub responses: PathBuf,
    /// Signature table written by build-sigs.
    #[arg(long)]
    pub table: PathBuf,
    /// Largest per-step IPID increase still counted as incremental.
    #[arg(long)]
    pub ipid_threshold: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TracerouteFormat {
    /// `{"src","dst","hops":[{"hop","ip"}]}` per line.
    Native,
    /// Public measurement-platform result objects.
    External,
}

#[derive(Debug, Args)]
pub struct AnalyzePathsArgs {
    #[arg(long)]
    pub traceroutes: PathBuf,
    #[arg(long, value_enum, default_value_t = TracerouteFormat::Native)]
    pub traceroute_format: TracerouteFormat,
    /// Verdicts JSONL from classify.
    #[arg(long)]
    pub verdicts: PathBuf,
    /// Alias sets, `node N<id>: ip ip ...` lines.
    #[arg(long)]
    pub aliases: Option<PathBuf>,
    /// Prefix-to-AS table, `prefix<TAB>length<TAB>asn`.
    #[arg(long)]
    pub pfx2as: Option<PathBuf>,
    /// Prefix-to-country CSV with header `prefix,country`.
    #[arg(long)]
    pub countries: Option<PathBuf>,
    /// AS relationships, `as1|as2|rel`.
    #[arg(long)]
    pub relationships: Option<PathBuf>,
    /// Anycast prefixes, one per line; their hops are ignored.
    #[arg(long)]
    pub anycast: Option<PathBuf>,
    /// Region filter: `all`, `intra:CC` or `inter:CC`. Repeatable.
    #[arg(long = "region", default_value = "all")]
    pub regions: Vec<String>,
    #[arg(long)]
    pub min_hops: Option<usize>,
    /// Homogeneity: minimum fingerprinted IPs per AS.
    #[arg(long)]
    pub min_routers: Option<usize>,
    /// Homogeneity: minimum share of the dominant vendor.
    #[arg(long)]
    pub dominance: Option<f64>,
    /// Alternative-transit query `DST_AS:AVOID_AS`. Repeatable.
    #[arg(long = "transit")]
    pub transit: Vec<String>,
    /// Longest AS path searched, in ASes.
    #[arg(long)]
    pub max_depth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Fleet specification JSON.
    #[arg(long)]
    pub fleet: PathBuf,
    /// Override the fleet file's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra `pen,vendor` CSV merged over the built-in dictionary.
    #[arg(long)]
    pub vendors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub inputs: LabeledInputs,
    /// Training share of the labeled vectors.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_occurrences: Option<u32>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
