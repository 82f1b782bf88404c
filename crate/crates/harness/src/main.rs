use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rask::{AnchorBackend, Config};
use rask_harness::{
    compare, generate, parse_trace, write_trace, Baseline, BenchOptions, Columns, HarnessError, ReplayOptions,
    WorkloadInfo, WorkloadSpec,
};

#[derive(Parser)]
#[command(
    name = "rask",
    version,
    about = "Replay block I/O traces against the rask range index"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace or synthetic workload and report metrics.
    Bench(BenchArgs),
    /// Write a synthetic workload as a CSV trace.
    Generate(GenerateArgs),
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false)]
struct Source {
    /// CSV trace with columns timestamp,lba,length,op.
    #[arg(long, group = "source")]
    trace: Option<PathBuf>,
    /// Synthetic workload spec, e.g. "write=0.7,len=uniform:4-64,space=1048576".
    #[arg(long, group = "source")]
    synthetic: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    source: Source,
    /// Column names of the trace in file order; unknown names are skipped.
    #[arg(long)]
    columns: Option<String>,
    /// Trace addresses and lengths are bytes; convert with this block size.
    #[arg(long)]
    block_size: Option<u64>,
    /// Operation count (synthetic) or cap on records replayed (trace).
    #[arg(long)]
    ops: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 16)]
    capacity: usize,
    #[arg(long, default_value_t = 4)]
    merge_threshold: u32,
    #[arg(long, value_enum, default_value_t = BackendArg::Art)]
    backend: BackendArg,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Records replayed before measurement begins.
    #[arg(long, default_value_t = 0)]
    warmup: usize,
    #[arg(long, value_enum, default_value_t = BaselineArg::LazyBtree)]
    baseline: BaselineArg,
    /// Compare every n-th read with the baseline; 0 turns checking off.
    #[arg(long, default_value_t = 1)]
    verify_every: usize,
    /// Write JSON metrics here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a per-system CSV summary here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    synthetic: String,
    #[arg(long)]
    ops: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Art,
    Btree,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    LazyBtree,
    None,
}

fn spec_from(text: &str, ops: Option<u64>, seed: Option<u64>) -> Result<WorkloadSpec, HarnessError> {
    let mut spec: WorkloadSpec = text.parse()?;
    if let Some(ops) = ops {
        spec.ops = ops;
    }
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, HarnessError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

fn bench(args: BenchArgs) -> Result<(), HarnessError> {
    let (records, info) = if let Some(path) = &args.source.trace {
        let mut columns = args.columns.as_deref().map(Columns::parse).transpose()?;
        if let Some(bs) = args.block_size {
            columns = Some(columns.unwrap_or_default().with_block_size(bs));
        }
        let mut records = parse_trace(path, columns)?;
        if let Some(n) = args.ops {
            records.truncate(n as usize);
        }
        let info = WorkloadInfo::new("trace", path.display().to_string(), &records, args.threads);
        (records, info)
    } else {
        let text = args.source.synthetic.as_deref().expect("clap requires a source");
        let spec = spec_from(text, args.ops, args.seed)?;
        let records = generate(&spec)?;
        let info = WorkloadInfo::new("synthetic", spec.to_string(), &records, args.threads);
        (records, info)
    };
    info!("{} records, mean length {:.2}", records.len(), info.mean_length);

    let config = Config {
        capacity: args.capacity,
        merge_threshold: args.merge_threshold,
        backend: match args.backend {
            BackendArg::Art => AnchorBackend::Trie,
            BackendArg::Btree => AnchorBackend::Ordered,
        },
        ..Config::default()
    };
    let opts = BenchOptions {
        config,
        replay: ReplayOptions {
            threads: args.threads,
            warmup: args.warmup,
        },
        baseline: match args.baseline {
            BaselineArg::LazyBtree => Baseline::LazyBtree,
            BaselineArg::None => Baseline::None,
        },
        verify_every: args.verify_every,
    };
    let report = compare(info, &records, opts)?;
    print!("{}", report.table());
    if let Some(path) = &args.out {
        serde_json::to_writer_pretty(create(path)?, &report)?;
    }
    if let Some(path) = &args.csv {
        report.write_csv(create(path)?)?;
    }
    report.verdict()
}

fn generate_cmd(args: GenerateArgs) -> Result<(), HarnessError> {
    let spec = spec_from(&args.synthetic, args.ops, args.seed)?;
    let records = generate(&spec)?;
    match &args.out {
        Some(path) => write_trace(create(path)?, &records),
        None => write_trace(io::stdout().lock(), &records),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("RASK_LOG")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(args) => bench(args),
        Command::Generate(args) => generate_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
