//! `streamcoord-bench`: times the tiled Cholesky implementations and writes
//! one row per run as CSV or JSON.
//!
//! Exit status: 0 on success, 2 when `--check` finds a wrong factor, 1 for
//! any other error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use streamcoord::bench::{run_bench_with, write_csv, write_json, BenchConfig, BenchError, Impl};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "streamcoord-bench", version, about = "Benchmark the tiled Cholesky implementations")]
struct Args {
    /// Implementation to run (serial, barrier, dataflow, cnc, cnc-tuned or all);
    /// repeatable or comma-separated.
    #[arg(long = "impl", value_delimiter = ',', default_value = "all")]
    impls: Vec<String>,
    /// Matrix order; ignored with --input.
    #[arg(long, default_value_t = 1024)]
    n: usize,
    /// Block size; repeatable.
    #[arg(long = "block", value_delimiter = ',', default_value = "128")]
    blocks: Vec<usize>,
    /// Worker count; repeatable.
    #[arg(long = "workers", value_delimiter = ',', default_value = "1")]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Compare every factor with the serial one and report residuals.
    #[arg(long)]
    check: bool,
    /// Matrix file to factor instead of a generated SPD matrix.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Serial block size used as the speedup reference for every row.
    #[arg(long)]
    baseline_block: Option<usize>,
    /// Pin workers to cores (Linux only).
    #[arg(long)]
    pin: bool,
    /// Print each configuration to stderr as it finishes.
    #[arg(long, short)]
    verbose: bool,
}

fn parse_impls(names: &[String]) -> Result<Vec<Impl>, BenchError> {
    let mut out = Vec::new();
    for name in names {
        let add: Vec<Impl> = if name == "all" {
            Impl::ALL.to_vec()
        } else {
            vec![name.parse().map_err(BenchError::Config)?]
        };
        for i in add {
            if !out.contains(&i) {
                out.push(i);
            }
        }
    }
    Ok(out)
}

fn run(args: Args) -> Result<(), BenchError> {
    let cfg = BenchConfig {
        impls: parse_impls(&args.impls)?,
        n: args.n,
        blocks: args.blocks,
        workers: args.workers,
        seed: args.seed,
        reps: args.reps,
        check: args.check,
        input: args.input,
        baseline_block: args.baseline_block,
        pin_workers: args.pin,
    };
    let verbose = args.verbose;
    let rows = run_bench_with(&cfg, |r| {
        if verbose {
            eprintln!(
                "{:<10} n={} b={} workers={} rep={} wall_ms={:.3} speedup={:.2}",
                r.implementation, r.n, r.block, r.workers, r.rep, r.wall_ms, r.speedup
            );
        }
    })?;
    let io_err = |e: String| BenchError::Config(format!("writing output: {e}"));
    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(File::create(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut sink = BufWriter::new(sink);
    match args.format {
        Format::Csv => write_csv(&mut sink, &rows).map_err(|e| io_err(e.to_string()))?,
        Format::Json => {
            write_json(&mut sink, &rows).map_err(|e| io_err(e.to_string()))?;
            writeln!(sink).map_err(|e| io_err(e.to_string()))?;
        }
    }
    sink.flush().map_err(|e| io_err(e.to_string()))
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
