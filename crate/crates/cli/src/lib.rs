//! Command-line driver: generate record files, run either sorting pipeline
//! on either transport, sweep the redundancy, and emit one CSV row per run.
//!
//! Every invocation verifies its own output against the input; the process
//! exits 0 only when every emitted row is `sorted_ok=true`.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use coded_terasort::{
    generate_records, records_from_bytes, records_to_bytes, run_coded_terasort,
    run_terasort, run_worker, CostModel, Record, RunOutcome, SocketConfig, SortedOutput,
    Transport, MAX_WIRE_NODES,
};

/// Fixed CSV header for run reports; a `speedup` column is appended when a
/// redundancy sweep runs both pipelines in one invocation.
pub const CSV_HEADER: &str = "mode,K,r,codegen_s,map_s,pack_encode_s,shuffle_s,\
unpack_decode_s,reduce_s,total_s,comm_load_L,units,bytes,sorted_ok";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Single-copy placement, unicast shuffle.
    Terasort,
    /// Replicated placement, XOR-coded multicast shuffle.
    Coded,
}

impl Mode {
    fn label(self) -> &'static str {
        match self {
            Mode::Terasort => "terasort",
            Mode::Coded => "coded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportKind {
    /// In-process deterministic simulator.
    Sim,
    /// One worker process per node over loopback TCP.
    Socket,
}

/// An inclusive redundancy range `A..B` for `--sweep-r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RedundancyRange {
    pub start: usize,
    pub end: usize,
}

fn parse_range(text: &str) -> Result<RedundancyRange, String> {
    let (start, end) = text
        .split_once("..")
        .ok_or_else(|| format!("expected A..B, got {text:?}"))?;
    let start: usize = start.trim().parse().map_err(|_| format!("bad range start {start:?}"))?;
    let end: usize = end.trim().parse().map_err(|_| format!("bad range end {end:?}"))?;
    if start < 1 || end < start {
        return Err(format!("range {start}..{end} must satisfy 1 <= A <= B"));
    }
    Ok(RedundancyRange { start, end })
}

#[derive(Debug, Parser)]
#[command(
    name = "coded-terasort",
    version,
    about = "Distributed sorting with optionally coded shuffle traffic",
    args_conflicts_with_subcommands = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write freshly generated records to a file in the flat 100-byte format.
    Generate(GenerateArgs),
    /// Worker process body for the socket transport (spawned internally).
    #[command(hide = true)]
    Worker(WorkerArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Pipeline to run.
    #[arg(long, value_enum, default_value_t = Mode::Coded)]
    pub mode: Mode,
    /// Cluster size K.
    #[arg(long = "nodes", default_value_t = 4)]
    pub nodes: usize,
    /// Redundancy r: how many nodes store each input file (coded mode).
    #[arg(long = "redundancy", default_value_t = 2)]
    pub redundancy: usize,
    /// How many records to generate.
    #[arg(long = "records", default_value_t = 10_000)]
    pub records: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Where the shuffle bytes travel.
    #[arg(long, value_enum, default_value_t = TransportKind::Sim)]
    pub transport: TransportKind,
    /// Link bandwidth in bytes per second for the shuffle cost model.
    #[arg(long, default_value_t = 12.5e6)]
    pub bandwidth: f64,
    /// Multicast overhead coefficient: transfers cost (1 + alpha*log2(receivers)).
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Run the coded pipeline once per r in the inclusive range A..B,
    /// plus an unreported baseline run for the speedup column.
    #[arg(long = "sweep-r", value_parser = parse_range)]
    pub sweep_r: Option<RedundancyRange>,
    /// Also write the CSV report to this file.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Read input records from a flat-format file instead of generating.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// How many records to generate.
    #[arg(long = "records", default_value_t = 10_000)]
    pub records: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Destination file (flat 100-byte records).
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    #[arg(long)]
    pub node: usize,
    #[arg(long)]
    pub port: u16,
}

/// A validated run request.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub nodes: usize,
    pub redundancy: usize,
    pub records: usize,
    pub seed: u64,
    pub transport: TransportKind,
    pub bandwidth: f64,
    pub alpha: f64,
    pub sweep_r: Option<RedundancyRange>,
    pub output: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

/// Cross-flag validation beyond what clap checks per flag.
pub fn validate(args: RunArgs) -> anyhow::Result<RunConfig> {
    if args.nodes < 1 {
        bail!("--nodes must be at least 1");
    }
    if !args.bandwidth.is_finite() || args.bandwidth <= 0.0 {
        bail!("--bandwidth must be a positive number of bytes per second");
    }
    if !args.alpha.is_finite() || args.alpha < 0.0 {
        bail!("--alpha must be a non-negative number");
    }
    if args.mode == Mode::Coded {
        if args.nodes > MAX_WIRE_NODES {
            bail!("coded mode supports at most {MAX_WIRE_NODES} nodes");
        }
        let top = args.sweep_r.map_or(args.redundancy, |range| range.end);
        let bottom = args.sweep_r.map_or(args.redundancy, |range| range.start);
        if bottom < 1 || top > args.nodes - 1 {
            bail!(
                "redundancy must satisfy 1 <= r <= K-1 = {}, got {bottom}..{top}",
                args.nodes - 1
            );
        }
    } else if args.sweep_r.is_some() {
        bail!("--sweep-r only applies to --mode coded");
    }
    Ok(RunConfig {
        mode: args.mode,
        nodes: args.nodes,
        redundancy: args.redundancy,
        records: args.records,
        seed: args.seed,
        transport: args.transport,
        bandwidth: args.bandwidth,
        alpha: args.alpha,
        sweep_r: args.sweep_r,
        output: args.output,
        input: args.input,
    })
}

/// True iff the concatenated output is non-decreasing by key and
/// multiset-equal to the input; logs the first offending index on failure.
pub fn verify_output(output: &SortedOutput, input: &[Record]) -> bool {
    let produced = output.concatenated();
    for (index, pair) in produced.windows(2).enumerate() {
        if pair[0].key > pair[1].key {
            eprintln!("verification failed: output out of order at record {}", index + 1);
            return false;
        }
    }
    if produced.len() != input.len() {
        eprintln!(
            "verification failed: output holds {} records, input {}",
            produced.len(),
            input.len()
        );
        return false;
    }
    let mut expected = input.to_vec();
    expected.sort();
    let mut sorted_produced = produced;
    sorted_produced.sort();
    for (index, (got, want)) in sorted_produced.iter().zip(&expected).enumerate() {
        if got != want {
            eprintln!("verification failed: record multiset differs at sorted index {index}");
            return false;
        }
    }
    true
}

fn load_input(config: &RunConfig) -> anyhow::Result<Vec<Record>> {
    match &config.input {
        Some(path) => {
            let bytes = fs::read(path)
                .with_context(|| format!("reading records from {}", path.display()))?;
            Ok(records_from_bytes(&bytes)?)
        }
        None => Ok(generate_records(config.records, config.seed)),
    }
}

fn transport_for(config: &RunConfig) -> anyhow::Result<Transport> {
    Ok(match config.transport {
        TransportKind::Sim => Transport::Sim,
        TransportKind::Socket => {
            let exe = std::env::current_exe().context("locating the worker executable")?;
            Transport::Socket(SocketConfig::new(exe))
        }
    })
}

fn csv_row(mode: Mode, k: usize, r: usize, outcome: &RunOutcome, sorted_ok: bool) -> String {
    let t = &outcome.times;
    format!(
        "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
        mode.label(),
        k,
        r,
        t.codegen,
        t.map,
        t.pack_encode,
        t.shuffle,
        t.unpack_decode,
        t.reduce,
        t.total,
        outcome.load.load_f64(),
        outcome.load.total_units,
        outcome.ledger.total_bytes(),
        sorted_ok
    )
}

/// Runs the configured pipeline(s) and writes the CSV report to `sink`
/// (and `--output` if given). Returns true iff every row verified.
pub fn run_and_report(config: &RunConfig, sink: &mut impl Write) -> anyhow::Result<bool> {
    let cost = CostModel::new(config.bandwidth, config.alpha)?;
    let input = load_input(config)?;
    let transport = transport_for(config)?;
    let mut all_ok = true;
    let mut report = String::new();

    match config.sweep_r {
        None => {
            report.push_str(CSV_HEADER);
            report.push('\n');
            let outcome = match config.mode {
                Mode::Terasort => run_terasort(&input, config.nodes, &cost, &transport)?,
                Mode::Coded => run_coded_terasort(
                    &input,
                    config.nodes,
                    config.redundancy,
                    &cost,
                    &transport,
                )?,
            };
            let sorted_ok = verify_output(&outcome.output, &input);
            all_ok &= sorted_ok;
            let r = match config.mode {
                Mode::Terasort => 1,
                Mode::Coded => config.redundancy,
            };
            report.push_str(&csv_row(config.mode, config.nodes, r, &outcome, sorted_ok));
            report.push('\n');
        }
        Some(range) => {
            // Both pipelines run: the plain sort supplies the speedup
            // baseline but is not emitted as a row.
            report.push_str(CSV_HEADER);
            report.push_str(",speedup\n");
            let baseline = run_terasort(&input, config.nodes, &cost, &transport)?;
            if !verify_output(&baseline.output, &input) {
                all_ok = false;
            }
            for r in range.start..=range.end {
                let outcome =
                    run_coded_terasort(&input, config.nodes, r, &cost, &transport)?;
                let sorted_ok = verify_output(&outcome.output, &input);
                all_ok &= sorted_ok;
                let speedup = baseline.times.total / outcome.times.total;
                report.push_str(&csv_row(Mode::Coded, config.nodes, r, &outcome, sorted_ok));
                report.push_str(&format!(",{speedup:.4}\n"));
            }
        }
    }

    sink.write_all(report.as_bytes())?;
    if let Some(path) = &config.output {
        fs::write(path, &report)
            .with_context(|| format!("writing the report to {}", path.display()))?;
    }
    Ok(all_ok)
}

pub fn generate_to_file(args: &GenerateArgs) -> anyhow::Result<()> {
    let records = generate_records(args.records, args.seed);
    fs::write(&args.output, records_to_bytes(&records))
        .with_context(|| format!("writing records to {}", args.output.display()))?;
    Ok(())
}

/// Full program body; returns the process exit code.
pub fn main_impl() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap exits 0 for --help/--version and 2 for usage errors.
            let _ = err.print();
            return if err.use_stderr() { 2 } else { 0 };
        }
    };
    match cli.command {
        Some(Command::Generate(args)) => match generate_to_file(&args) {
            Ok(()) => 0,
            Err(err) => {
                eprintln!("error: {err:#}");
                1
            }
        },
        Some(Command::Worker(args)) => match run_worker(args.node, args.port) {
            Ok(()) => 0,
            Err(err) => {
                eprintln!("worker {} failed: {err}", args.node);
                1
            }
        },
        None => {
            let config = match validate(cli.run) {
                Ok(config) => config,
                Err(err) => {
                    eprintln!("error: {err}");
                    return 2;
                }
            };
            let stdout = std::io::stdout();
            match run_and_report(&config, &mut stdout.lock()) {
                Ok(true) => 0,
                Ok(false) => 1,
                Err(err) => {
                    eprintln!("error: {err:#}");
                    1
                }
            }
        }
    }
}
