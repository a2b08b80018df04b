//! Measurement harness: runs the factorizations over a grid of block sizes
//! and worker counts, checks them against the serial reference, and
//! reports wall time, speedup and engine counters per run.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{run_barrier, BARRIER_WAITS};
use crate::cholesky::{assemble, decompose, gen_spd, load_matrix, residual, serial_tiled_cholesky, DenseMatrix, TaskCounts};
use crate::cnc::{run_cnc, CncConfig};
use crate::dataflow::run_dataflow;
use crate::error::FactorError;
use crate::runtime::RunConfig;

/// Residual bound for `--check`.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Impl {
    Serial,
    Barrier,
    Dataflow,
    Cnc,
    CncTuned,
}

impl Impl {
    pub const ALL: [Impl; 5] = [Impl::Serial, Impl::Barrier, Impl::Dataflow, Impl::Cnc, Impl::CncTuned];
    pub const PARALLEL: [Impl; 4] = [Impl::Barrier, Impl::Dataflow, Impl::Cnc, Impl::CncTuned];

    pub fn name(self) -> &'static str {
        match self {
            Impl::Serial => "serial",
            Impl::Barrier => "barrier",
            Impl::Dataflow => "dataflow",
            Impl::Cnc => "cnc",
            Impl::CncTuned => "cnc-tuned",
        }
    }
}

impl fmt::Display for Impl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Impl {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Impl::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| format!("unknown implementation `{s}` (expected serial, barrier, dataflow, cnc or cnc-tuned)"))
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub impls: Vec<Impl>,
    pub n: usize,
    pub blocks: Vec<usize>,
    pub workers: Vec<usize>,
    pub seed: u64,
    pub reps: usize,
    /// Compare every factor with the serial reference and compute residuals.
    pub check: bool,
    /// Matrix file to factor instead of a generated one.
    pub input: Option<PathBuf>,
    /// Block size of the serial baseline; by default each block size is
    /// compared with the serial run at the same block size.
    pub baseline_block: Option<usize>,
    pub pin_workers: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            impls: Impl::ALL.to_vec(),
            n: 1024,
            blocks: vec![128],
            workers: vec![1],
            seed: 1,
            reps: 3,
            check: false,
            input: None,
            baseline_block: None,
            pin_workers: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.impls.is_empty() {
            return bad("no implementation selected".into());
        }
        if self.blocks.is_empty() || self.workers.is_empty() {
            return bad("block and worker lists must be non-empty".into());
        }
        if self.reps == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.workers.contains(&0) {
            return bad("worker counts must be positive".into());
        }
        if self.input.is_none() && self.n == 0 {
            return bad("matrix size must be positive".into());
        }
        Ok(())
    }

    fn check_blocks(&self, n: usize) -> Result<(), BenchError> {
        for &b in self.blocks.iter().chain(&self.baseline_block) {
            if b == 0 || n % b != 0 {
                return Err(BenchError::Config(format!("block size {b} does not divide N = {n}")));
            }
        }
        Ok(())
    }
}

/// One timed run. `speedup` compares medians: the serial baseline's median
/// wall time over this configuration's median.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BenchRow {
    #[serde(rename = "impl")]
    pub implementation: String,
    pub n: usize,
    pub block: usize,
    pub workers: usize,
    pub seed: u64,
    pub rep: usize,
    pub wall_ms: f64,
    pub speedup: f64,
    pub residual: Option<f64>,
    /// [`checksum`] as 16 hex digits.
    pub checksum: String,
    pub activations: u64,
    pub stalls: u64,
    pub barrier_waits: u64,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("correctness check failed: {0}")]
    Correctness(String),
}

impl BenchError {
    /// 2 for a failed correctness check, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Correctness(_) => 2,
            _ => 1,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Order-independent hash of the `(index, bit pattern)` pairs of `l`:
/// a wrapping sum over the entries whose bits are non-zero, so the zero
/// matrix hashes to 0.
pub fn checksum(l: &DenseMatrix) -> u64 {
    l.data()
        .iter()
        .enumerate()
        .filter(|(_, x)| x.to_bits() != 0)
        .fold(0u64, |acc, (i, x)| acc.wrapping_add(splitmix64(splitmix64(i as u64) ^ x.to_bits())))
}

struct Measured {
    l: DenseMatrix,
    wall_ms: f64,
    activations: u64,
    stalls: u64,
    barrier_waits: u64,
}

fn run_one(which: Impl, a: &Arc<DenseMatrix>, b: usize, workers: usize, pin: bool) -> Result<Measured, FactorError> {
    let run_cfg = RunConfig { pin_workers: pin, ..RunConfig::with_workers(workers) };
    let cnc_cfg = CncConfig { workers, pin_workers: pin };
    let start = Instant::now();
    let (l, activations, stalls, barrier_waits) = match which {
        Impl::Serial => {
            let l = assemble(&serial_tiled_cholesky(&decompose(a, b)?)?);
            (l, TaskCounts::for_blocks(a.n() / b).total(), 0, 0)
        }
        Impl::Barrier => {
            let (l, m) = run_barrier(a.clone(), b, &run_cfg)?;
            (l, m.box_activations(), 0, m.counter(BARRIER_WAITS))
        }
        Impl::Dataflow => {
            let (l, m) = run_dataflow(a.clone(), b, &run_cfg)?;
            (l, m.box_activations(), 0, m.counter(BARRIER_WAITS))
        }
        Impl::Cnc | Impl::CncTuned => {
            let (l, m) = run_cnc(a, b, which == Impl::CncTuned, &cnc_cfg)?;
            (l, m.total_executed(), m.steps_stalled, 0)
        }
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(Measured { l, wall_ms, activations, stalls, barrier_waits })
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// The input matrix: loaded from `cfg.input` or generated from `cfg.seed`.
pub fn input_matrix(cfg: &BenchConfig) -> Result<DenseMatrix, BenchError> {
    match &cfg.input {
        Some(path) => load_matrix(path).map_err(|e| BenchError::Factor(e.into())),
        None => Ok(gen_spd(cfg.n, cfg.seed)),
    }
}

/// Runs the full cross-product, serial baseline first for each block size.
/// `on_row` sees each row as soon as its configuration finishes.
pub fn run_bench_with(cfg: &BenchConfig, mut on_row: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>, BenchError> {
    cfg.validate()?;
    let a = Arc::new(input_matrix(cfg)?);
    run_bench_on(cfg, &a, &mut on_row)
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>, BenchError> {
    run_bench_with(cfg, |_| {})
}

/// As [`run_bench_with`] on a given matrix; `cfg.n` and `cfg.input` are
/// ignored.
pub fn run_bench_on(cfg: &BenchConfig, a: &Arc<DenseMatrix>, on_row: &mut dyn FnMut(&BenchRow)) -> Result<Vec<BenchRow>, BenchError> {
    cfg.validate()?;
    let n = a.n();
    cfg.check_blocks(n)?;
    let mut rows = Vec::new();
    let fixed_baseline = match cfg.baseline_block {
        Some(b0) => Some(serial_baseline(cfg, a, b0)?),
        None => None,
    };
    for &b in &cfg.blocks {
        let own = match (&fixed_baseline, cfg.baseline_block) {
            (Some(_), Some(b0)) if b0 != b => None,
            (Some(base), _) => Some(base.clone()),
            (None, _) => None,
        };
        let serial = match own {
            Some(s) => s,
            None => serial_baseline(cfg, a, b)?,
        };
        let base_ms = fixed_baseline.as_ref().unwrap_or(&serial).median_ms;
        let residual_of = |l: &DenseMatrix| cfg.check.then(|| residual(a, l));
        if cfg.impls.contains(&Impl::Serial) {
            let res = residual_of(&serial.oracle);
            check_residual(Impl::Serial, b, 1, res)?;
            for (rep, m) in serial.runs.iter().enumerate() {
                let row = row(Impl::Serial, n, b, 1, cfg.seed, rep, m, base_ms / serial.median_ms, res, checksum(&serial.oracle));
                on_row(&row);
                rows.push(row);
            }
        }
        for which in cfg.impls.iter().copied().filter(|&i| i != Impl::Serial) {
            for &workers in &cfg.workers {
                let runs = (0..cfg.reps)
                    .map(|_| run_one(which, a, b, workers, cfg.pin_workers))
                    .collect::<Result<Vec<_>, _>>()?;
                let med = median(&runs.iter().map(|m| m.wall_ms).collect::<Vec<_>>());
                let mut batch = Vec::new();
                for (rep, m) in runs.iter().enumerate() {
                    let res = residual_of(&m.l);
                    if cfg.check {
                        compare(which, b, workers, rep, &m.l, &serial.oracle)?;
                        check_residual(which, b, workers, res)?;
                    }
                    batch.push(row(which, n, b, workers, cfg.seed, rep, m, base_ms / med, res, checksum(&m.l)));
                }
                for row in batch {
                    on_row(&row);
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Clone)]
struct Baseline {
    runs: Vec<MeasuredLite>,
    median_ms: f64,
    oracle: DenseMatrix,
}

#[derive(Clone)]
struct MeasuredLite {
    wall_ms: f64,
    activations: u64,
}

fn serial_baseline(cfg: &BenchConfig, a: &Arc<DenseMatrix>, b: usize) -> Result<Baseline, BenchError> {
    let mut runs = Vec::new();
    let mut oracle = None;
    for _ in 0..cfg.reps {
        let m = run_one(Impl::Serial, a, b, 1, false)?;
        runs.push(MeasuredLite { wall_ms: m.wall_ms, activations: m.activations });
        oracle.get_or_insert(m.l);
    }
    let median_ms = median(&runs.iter().map(|m| m.wall_ms).collect::<Vec<_>>());
    Ok(Baseline { runs, median_ms, oracle: oracle.expect("reps >= 1") })
}

trait RowSource {
    fn wall_ms(&self) -> f64;
    fn counters(&self) -> (u64, u64, u64);
}

impl RowSource for Measured {
    fn wall_ms(&self) -> f64 {
        self.wall_ms
    }
    fn counters(&self) -> (u64, u64, u64) {
        (self.activations, self.stalls, self.barrier_waits)
    }
}

impl RowSource for MeasuredLite {
    fn wall_ms(&self) -> f64 {
        self.wall_ms
    }
    fn counters(&self) -> (u64, u64, u64) {
        (self.activations, 0, 0)
    }
}

#[allow(clippy::too_many_arguments)]
fn row(
    which: Impl,
    n: usize,
    block: usize,
    workers: usize,
    seed: u64,
    rep: usize,
    m: &dyn RowSource,
    speedup: f64,
    residual: Option<f64>,
    sum: u64,
) -> BenchRow {
    let (activations, stalls, barrier_waits) = m.counters();
    BenchRow {
        implementation: which.name().to_owned(),
        n,
        block,
        workers,
        seed,
        rep,
        wall_ms: m.wall_ms(),
        speedup,
        residual,
        checksum: format!("{sum:016x}"),
        activations,
        stalls,
        barrier_waits,
    }
}

fn check_residual(which: Impl, b: usize, workers: usize, res: Option<f64>) -> Result<(), BenchError> {
    match res {
        Some(r) if !(r <= RESIDUAL_TOLERANCE) => Err(BenchError::Correctness(format!(
            "{which} b={b} workers={workers}: residual {r:e} exceeds {RESIDUAL_TOLERANCE:e}"
        ))),
        _ => Ok(()),
    }
}

fn compare(which: Impl, b: usize, workers: usize, rep: usize, l: &DenseMatrix, oracle: &DenseMatrix) -> Result<(), BenchError> {
    let n = oracle.n();
    let diffs: Vec<(usize, usize)> = (0..n * n)
        .filter(|&k| l.data()[k].to_bits() != oracle.data()[k].to_bits())
        .map(|k| (k / n, k % n))
        .collect();
    if diffs.is_empty() {
        return Ok(());
    }
    let (i, j) = diffs[0];
    Err(BenchError::Correctness(format!(
        "{which} b={b} workers={workers} rep={rep}: {} entries differ from the serial factor; first at ({i},{j}): {:e} vs {:e}",
        diffs.len(),
        l.get(i, j),
        oracle.get(i, j)
    )))
}

pub const CSV_HEADER: &str = "impl,n,block,workers,seed,rep,wall_ms,speedup,residual,checksum,activations,stalls,barrier_waits";

pub fn write_csv<W: Write>(w: W, rows: &[BenchRow]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(CSV_HEADER.split(','))?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(w: W, rows: &[BenchRow]) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(w, rows)
}

/// Median wall time of each `(impl, block, workers)` configuration.
pub fn medians(rows: &[BenchRow]) -> Vec<(String, usize, usize, f64, f64)> {
    let mut keys: Vec<(String, usize, usize)> = rows
        .iter()
        .map(|r| (r.implementation.clone(), r.block, r.workers))
        .collect();
    keys.dedup();
    keys.into_iter()
        .map(|(imp, b, w)| {
            let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.implementation == imp && r.block == b && r.workers == w).collect();
            let wall = median(&sel.iter().map(|r| r.wall_ms).collect::<Vec<_>>());
            (imp, b, w, wall, sel[0].speedup)
        })
        .collect()
}
