//! Acceptance suite. Prints one line per criterion:
//! `PASS`, `FAIL`, or `NOT EVALUATED` (only when the host cannot run the
//! configuration the criterion is stated for).
//!
//! Runs without the libtest harness so the verdict lines are always
//! visible. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p streamcoord --test acceptance -- 3 5`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use streamcoord::barrier::{run_barrier, BARRIER_WAITS};
use streamcoord::bench::{checksum, medians, run_bench_on, BenchConfig, BenchRow, Impl};
use streamcoord::cholesky::{assemble, decompose, dense_cholesky, gen_spd, residual, serial_tiled_cholesky, DenseMatrix, TaskCounts};
use streamcoord::cnc::{build_cholesky_cnc, run_cnc, seed_cholesky, CncConfig, POTRF, TRSM, UPDATE};
use streamcoord::combinators::{box_node, compile, feedback, split, star, stateful, sync, NetworkExpr};
use streamcoord::dataflow::{out_tiles, run_dataflow};
use streamcoord::runtime::{run, RunConfig, RunOutput};
use streamcoord::{BoxSignature, Record, TypePattern};

/// Residual bound of criterion 1.
const RESIDUAL_MAX: f64 = 1e-10;
/// Entrywise distance to the unblocked dense factor, an oracle independent
/// of the tiling.
const DENSE_MAX_ABS_DIFF: f64 = 1e-12;
const SEED: u64 = 20_240_601;

const DETERMINISM_RUNS: usize = 10;
const DETERMINISM_WORKERS: [usize; 3] = [1, 2, 8];

const SCALING_MIN_THREADS: usize = 8;
const SCALING_DATAFLOW_MIN_SPEEDUP: f64 = 4.0;
const SCALING_BARRIER_MIN_SPEEDUP: f64 = 1.5;

const TUNING_WORKERS: usize = 4;
const TUNING_REPS: usize = 9;

const SWEEP_N: usize = 2048;
const SWEEP_WORKERS: usize = 8;
const SWEEP_BASELINE_BLOCK: usize = 128;
const SWEEP_INTERIOR: [usize; 4] = [32, 64, 128, 256];
const SWEEP_REPS: usize = 5;

enum Verdict {
    Pass(String),
    NotEvaluated(String),
}

type Outcome = Result<Verdict, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bits(m: &DenseMatrix) -> Vec<u64> {
    m.data().iter().map(|x| x.to_bits()).collect()
}

fn factor(which: Impl, a: &Arc<DenseMatrix>, b: usize, workers: usize) -> Result<DenseMatrix, String> {
    let cfg = RunConfig::with_workers(workers);
    let res = match which {
        Impl::Serial => return Ok(assemble(&serial_tiled_cholesky(&decompose(a, b).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?)),
        Impl::Barrier => run_barrier(a.clone(), b, &cfg).map(|r| r.0),
        Impl::Dataflow => run_dataflow(a.clone(), b, &cfg).map(|r| r.0),
        Impl::Cnc | Impl::CncTuned => run_cnc(a, b, which == Impl::CncTuned, &CncConfig::with_workers(workers)).map(|r| r.0),
    };
    res.map_err(|e| format!("{which} b={b} workers={workers}: {e}"))
}

fn max_abs_diff(x: &DenseMatrix, y: &DenseMatrix) -> f64 {
    x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn correctness() -> Outcome {
    let mut worst = 0.0f64;
    let mut runs = 0;
    for n in [256, 1024] {
        let a = Arc::new(gen_spd(n, SEED));
        let dense = dense_cholesky(&a).map_err(|e| e.to_string())?;
        for b in [32, 64, 128] {
            let oracle = factor(Impl::Serial, &a, b, 1)?;
            let d = max_abs_diff(&oracle, &dense);
            ensure(d <= DENSE_MAX_ABS_DIFF, || format!("n={n} b={b}: tiled serial differs from dense factor by {d:e}"))?;
            for which in Impl::ALL {
                let l = factor(which, &a, b, 4)?;
                let r = residual(&a, &l);
                ensure(r <= RESIDUAL_MAX, || format!("{which} n={n} b={b}: residual {r:e}"))?;
                ensure(bits(&l) == bits(&oracle), || format!("{which} n={n} b={b}: not bitwise equal to the serial oracle"))?;
                ensure(checksum(&l) == checksum(&oracle), || format!("{which} n={n} b={b}: checksum differs"))?;
                worst = worst.max(r);
                runs += 1;
            }
        }
    }
    Ok(Verdict::Pass(format!("{runs} factorizations bitwise equal to the serial oracle, max residual {worst:.2e}")))
}

fn determinism() -> Outcome {
    let (n, b) = (256, 32);
    let a = Arc::new(gen_spd(n, SEED));
    let expect = checksum(&factor(Impl::Serial, &a, b, 1)?);
    for which in Impl::PARALLEL {
        let mut seen = BTreeSet::new();
        for workers in DETERMINISM_WORKERS {
            for _ in 0..DETERMINISM_RUNS {
                seen.insert(checksum(&factor(which, &a, b, workers)?));
            }
        }
        ensure(seen.len() == 1, || format!("{which}: {} distinct checksums", seen.len()))?;
        ensure(seen.contains(&expect), || format!("{which}: checksum differs from serial"))?;
    }
    Ok(Verdict::Pass(format!(
        "{} runs per implementation (n={n} b={b}), one checksum {expect:016x}",
        DETERMINISM_RUNS * DETERMINISM_WORKERS.len()
    )))
}

/// Non-zero tiles on and below the diagonal; upper tiles must be zero.
fn factor_tiles(l: &DenseMatrix, b: usize) -> Result<u64, String> {
    let p = l.n() / b;
    let mut lower = 0;
    for ti in 0..p {
        for tj in 0..p {
            let nonzero = (0..b).any(|i| (0..b).any(|j| l.get(ti * b + i, tj * b + j) != 0.0));
            if tj > ti {
                ensure(!nonzero, || format!("upper tile ({ti},{tj}) is non-zero"))?;
            } else if nonzero {
                lower += 1;
            }
        }
    }
    Ok(lower)
}

fn activation_oracles() -> Outcome {
    let b = 8;
    for p in [1usize, 2, 4, 8] {
        let a = Arc::new(gen_spd(p * b, SEED + p as u64));
        let pu = p as u64;
        let potrf = pu;
        let trsm = pu * pu.saturating_sub(1) / 2;
        let update: u64 = (0..pu).map(|k| (pu - 1 - k) * (pu - k) / 2).sum();
        let out = pu * (pu + 1) / 2;
        let want = (potrf, trsm, update);
        ensure(TaskCounts::for_blocks(p) == TaskCounts { potrf, trsm, update }, || format!("p={p}: TaskCounts disagrees"))?;

        let (l, m) = run_barrier(a.clone(), b, &RunConfig::with_workers(4)).map_err(|e| e.to_string())?;
        let got = (m.activations("factor"), m.activations("trsm"), m.activations("update"));
        ensure(got == want, || format!("barrier p={p}: (potrf, trsm, update) = {got:?}, want {want:?}"))?;
        ensure(m.counter(BARRIER_WAITS) == 2 * pu, || format!("barrier p={p}: barrier_waits {}", m.counter(BARRIER_WAITS)))?;
        ensure(factor_tiles(&l, b)? == out, || format!("barrier p={p}: factor tile count"))?;
        ensure(m.parked == 0 && m.ledger_balanced(), || format!("barrier p={p}: parked {} or unbalanced ledger", m.parked))?;

        let (l, m) = run_dataflow(a.clone(), b, &RunConfig::with_workers(4)).map_err(|e| e.to_string())?;
        let got = (m.activations("potrf"), m.activations("solve"), m.activations("update"));
        ensure(got == want, || format!("dataflow p={p}: (potrf, trsm, update) = {got:?}, want {want:?}"))?;
        ensure(m.activations("merge") == out && out_tiles(p) as u64 == out, || format!("dataflow p={p}: Out tiles {}", m.activations("merge")))?;
        ensure(factor_tiles(&l, b)? == out, || format!("dataflow p={p}: factor tile count"))?;
        ensure(m.counter(BARRIER_WAITS) == 0, || format!("dataflow p={p}: barrier_waits {}", m.counter(BARRIER_WAITS)))?;
        ensure(m.parked == 0 && m.ledger_balanced(), || format!("dataflow p={p}: parked {} or unbalanced ledger", m.parked))?;

        for tuned in [false, true] {
            let (mut g, h) = build_cholesky_cnc(tuned);
            seed_cholesky(&mut g, &h, &decompose(&a, b).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            let res = g.run(&CncConfig::with_workers(4)).map_err(|e| e.to_string())?;
            let m = &res.metrics;
            let got = (m.executed(POTRF), m.executed(TRSM), m.executed(UPDATE));
            ensure(got == want, || format!("cnc tuned={tuned} p={p}: (potrf, trsm, update) = {got:?}, want {want:?}"))?;
            let prescribed: u64 = m.steps_prescribed.values().sum();
            ensure(prescribed == m.total_executed(), || format!("cnc tuned={tuned} p={p}: {prescribed} prescribed, {} executed", m.total_executed()))?;
            let finals = res.keys(h.lkji).iter().filter(|t| t.at(0) == t.at(1) + 1).count() as u64;
            ensure(finals == out, || format!("cnc tuned={tuned} p={p}: {finals} factor tiles"))?;
        }
    }
    Ok(Verdict::Pass("p in {1,2,4,8}: kernel counts, Out tiles and barrier_waits match closed forms; nothing parked or unexecuted".into()))
}

fn bench_rows(impls: Vec<Impl>, a: &Arc<DenseMatrix>, blocks: Vec<usize>, workers: usize, reps: usize, baseline: Option<usize>) -> Result<Vec<BenchRow>, String> {
    let cfg = BenchConfig {
        impls,
        n: a.n(),
        blocks,
        workers: vec![workers],
        seed: SEED,
        reps,
        check: false,
        input: None,
        baseline_block: baseline,
        pin_workers: false,
    };
    run_bench_on(&cfg, a, &mut |_| {}).map_err(|e| e.to_string())
}

/// `(median wall_ms, speedup)` per `(impl, block)`.
fn summary(rows: &[BenchRow]) -> BTreeMap<(String, usize), (f64, f64)> {
    medians(rows).into_iter().map(|(i, b, _, wall, s)| ((i, b), (wall, s))).collect()
}

fn host_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn scaling() -> Outcome {
    let threads = host_threads();
    if threads < SCALING_MIN_THREADS {
        return Ok(Verdict::NotEvaluated(format!("host has {threads} hardware thread(s), criterion is stated for >= {SCALING_MIN_THREADS}")));
    }
    let a = Arc::new(gen_spd(2048, SEED));
    let rows = bench_rows(vec![Impl::Serial, Impl::Barrier, Impl::Dataflow], &a, vec![128], 8, 3, None)?;
    let s = summary(&rows);
    let (df_wall, df_speedup) = s[&("dataflow".to_owned(), 128)];
    let (ba_wall, ba_speedup) = s[&("barrier".to_owned(), 128)];
    let detail = format!("dataflow {df_speedup:.2}x ({df_wall:.0} ms), barrier {ba_speedup:.2}x ({ba_wall:.0} ms)");
    ensure(df_speedup >= SCALING_DATAFLOW_MIN_SPEEDUP, || format!("dataflow speedup below {SCALING_DATAFLOW_MIN_SPEEDUP}: {detail}"))?;
    ensure(df_wall <= ba_wall, || format!("dataflow slower than barrier: {detail}"))?;
    ensure(ba_speedup >= SCALING_BARRIER_MIN_SPEEDUP, || format!("barrier speedup below {SCALING_BARRIER_MIN_SPEEDUP}: {detail}"))?;
    Ok(Verdict::Pass(detail))
}

/// Untuned and tuned runs alternate so host drift hits both equally.
fn tuning_runs(a: &DenseMatrix, b: usize) -> Result<[(Vec<f64>, Vec<u64>); 2], String> {
    let cfg = CncConfig::with_workers(TUNING_WORKERS);
    let mut out: [(Vec<f64>, Vec<u64>); 2] = Default::default();
    for _ in 0..TUNING_REPS {
        for (slot, tuned) in [(0, false), (1, true)] {
            let start = Instant::now();
            let (_, m) = run_cnc(a, b, tuned, &cfg).map_err(|e| e.to_string())?;
            out[slot].0.push(start.elapsed().as_secs_f64() * 1e3);
            out[slot].1.push(m.steps_stalled);
        }
    }
    Ok(out)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn tuning() -> Outcome {
    let a = gen_spd(1024, SEED);
    let mut walls = BTreeMap::new();
    for b in [32, 512] {
        let [(u_wall, u_stalls), (t_wall, t_stalls)] = tuning_runs(&a, b)?;
        let min_u = *u_stalls.iter().min().unwrap();
        let max_t = *t_stalls.iter().max().unwrap();
        ensure(min_u > 0, || format!("b={b}: an untuned run had no stalls"))?;
        ensure(max_t == 0, || format!("b={b}: a tuned run stalled {max_t} times"))?;
        walls.insert(b, (min_u, median(&u_wall), median(&t_wall)));
    }
    let (stalls, untuned, tuned) = walls[&32];
    let detail = format!(
        "b=32: stalls >= {stalls} vs 0, median {untuned:.1} ms vs {tuned:.1} ms; b=512: stalls >= {} vs 0",
        walls[&512].0
    );
    let threads = host_threads();
    if threads < TUNING_WORKERS {
        return Ok(Verdict::Pass(format!(
            "{detail}; wall-time clause NOT EVALUATED: {TUNING_WORKERS} workers share {threads} hardware thread(s)"
        )));
    }
    ensure(tuned <= untuned, || format!("tuned slower than untuned at b=32: {detail}"))?;
    Ok(Verdict::Pass(detail))
}

fn timed(which: Impl, a: &Arc<DenseMatrix>, b: usize, workers: usize) -> Result<f64, String> {
    let start = Instant::now();
    factor(which, a, b, workers)?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

/// Each round times the serial baseline and every (impl, block) pair once,
/// so slow phases of the host spread over all configurations.
fn sweep_shape() -> Outcome {
    let a = Arc::new(gen_spd(SWEEP_N, SEED));
    let mut blocks = vec![SWEEP_N, 16];
    blocks.extend(SWEEP_INTERIOR);
    let mut base = Vec::new();
    let mut walls: BTreeMap<(Impl, usize), Vec<f64>> = BTreeMap::new();
    for _ in 0..SWEEP_REPS {
        base.push(timed(Impl::Serial, &a, SWEEP_BASELINE_BLOCK, 1)?);
        for &b in &blocks {
            for which in Impl::PARALLEL {
                walls.entry((which, b)).or_default().push(timed(which, &a, b, SWEEP_WORKERS)?);
            }
        }
    }
    let base = median(&base);
    // one tile leaves nothing to run concurrently; without spare hardware
    // threads the b=N point differs from the interior only by cache effects
    let threads = host_threads();
    let judge_dense = threads >= SWEEP_WORKERS;
    let mut parts = Vec::new();
    for which in Impl::PARALLEL {
        let at = |b: usize| base / median(&walls[&(which, b)]);
        let (best_b, best) = SWEEP_INTERIOR.iter().map(|&b| (b, at(b))).max_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
        let line = format!("{which}: b=N {:.2}, b=16 {:.2}, best b={best_b} {best:.2}", at(SWEEP_N), at(16));
        ensure(at(16) < best, || format!("b=16 not below the interior: {line}"))?;
        ensure(!judge_dense || at(SWEEP_N) < best, || format!("b=N not below the interior: {line}"))?;
        parts.push(line);
    }
    let mut detail = parts.join("; ");
    if !judge_dense {
        detail.push_str(&format!(
            "; b=N clause NOT EVALUATED: {SWEEP_WORKERS} workers share {threads} hardware thread(s)"
        ));
    }
    Ok(Verdict::Pass(detail))
}

fn sig(s: &str) -> BoxSignature {
    BoxSignature::parse(s).unwrap()
}

fn pat(s: &str) -> TypePattern {
    TypePattern::parse(s).unwrap()
}

fn exec(e: &NetworkExpr, inputs: Vec<Record>, cfg: &RunConfig) -> Result<RunOutput, String> {
    run(&compile(e).map_err(|e| e.to_string())?, inputs, cfg).map_err(|e| e.to_string())
}

fn combinator_semantics() -> Outcome {
    let one = RunConfig::with_workers(1);
    let many = RunConfig::with_workers(4);

    // synchrocell: first matches park, the merge is emitted once, then
    // everything passes through; a repeating cell re-arms
    let cell = sync(vec![pat("{r}"), pat("{s}")], false);
    let f = |name: &str, v: i32| Record::new().with_field(name.to_owned(), v);
    let out = exec(&cell, vec![f("s", 1), f("t", 2), f("r", 3), f("r", 4)], &one)?;
    let merged = out.records.iter().filter(|r| r.has_field("r") && r.has_field("s")).count();
    ensure(out.records.len() == 3 && merged == 1, || format!("synchrocell emitted {:?}", out.records))?;
    ensure(out.metrics.fires("sync[|{r},{s}|]") == 1 && out.metrics.parked == 0, || "synchrocell fired more than once".into())?;
    let out = exec(&sync(vec![pat("{r}"), pat("{s}")], true), vec![f("r", 1), f("s", 2), f("s", 3), f("r", 4)], &one)?;
    let mut pairs: Vec<(i32, i32)> = out.records.iter().map(|r| (*r.field::<i32>("r").unwrap(), *r.field::<i32>("s").unwrap())).collect();
    pairs.sort();
    ensure(pairs == vec![(1, 2), (4, 3)], || format!("repeating synchrocell pairs {pairs:?}"))?;

    // star: one operand instance per unfolding
    let count = box_node("count", sig("{<n>} -> {<n>} | {<n>,<done>}"), |r, _| {
        let n = r.tag("n").unwrap() + 1;
        let out = Record::new().with_tag("n", n);
        Ok(vec![if n >= 5 { out.with_tag("done", 1) } else { out }])
    });
    let out = exec(&star(count, pat("{<done>}")), vec![Record::new().with_tag("n", 0)], &many)?;
    ensure(out.metrics.instances("star{<done>}") == 5 && out.metrics.activations("count") == 5, || "star expansion count".into())?;

    // split: equal tag values meet one branch
    let at = box_node("where", sig("{<k>} -> {<k>,<branch>}"), |r, ctx| Ok(vec![r.with_tag("branch", ctx.instance() as i64)]));
    let inputs = (0..60).map(|s| Record::new().with_tag("k", s % 7).with_tag("seq", s)).collect();
    let out = exec(&split(at, "k"), inputs, &many)?;
    let mut branch_of = BTreeMap::new();
    for r in &out.records {
        let prev = branch_of.insert(r.tag("k").unwrap(), r.tag("branch").unwrap());
        ensure(prev.is_none() || prev == r.tag("branch"), || "split sent one tag value to two branches".into())?;
    }
    ensure(out.metrics.instances("split<k>") == 7, || "split instance count".into())?;

    // feedback: exactly P recirculations for P + 1 passes
    const P: i64 = 9;
    let body = box_node("advance", sig("{A,<k>} -> {A,<k>} | {L}"), |r, _| {
        let k = r.tag("k").unwrap();
        Ok(vec![if k < P { Record::new().with_field("A", ()).with_tag("k", k + 1) } else { Record::new().with_field("L", ()) }])
    });
    let out = exec(&feedback(body, pat("{A}")), vec![Record::new().with_field("A", ()).with_tag("k", 0)], &many)?;
    ensure(out.metrics.recirculations("feedback{A}") == P as u64 && out.records.len() == 1, || "feedback recirculation count".into())?;

    // stateful idiom: one live state, so every running sum appears once
    let acc = stateful(
        pat("{V,<v>}"),
        pat("{S,<sum>}"),
        box_node("acc", sig("{V,S,<v>,<sum>} -> {S,<sum>} | {<seen>}"), |r, _| {
            let sum = r.tag("sum").unwrap() + r.tag("v").unwrap();
            Ok(vec![Record::new().with_field("S", ()).with_tag("sum", sum), Record::new().with_tag("seen", sum)])
        }),
    );
    let mut inputs: Vec<Record> = (0..100).map(|_| Record::new().with_field("V", ()).with_tag("v", 1)).collect();
    inputs.insert(50, Record::new().with_field("S", ()).with_tag("sum", 0));
    let out = exec(&acc, inputs, &RunConfig { allow_parked: true, ..many.clone() })?;
    let mut seen: Vec<i64> = out.records.iter().filter_map(|r| r.tag("seen")).collect();
    seen.sort();
    ensure(seen == (1..=100).collect::<Vec<_>>() && out.metrics.parked == 1, || "stateful idiom produced a second live state".into())?;

    Ok(Verdict::Pass("synchrocell, star, split, feedback and stateful-idiom checks hold; full suite in tests/combinators.rs".into()))
}

const CRITERIA: [(u32, &str, fn() -> Outcome); 7] = [
    (1, "correctness", correctness),
    (2, "determinism", determinism),
    (3, "activation-count oracles", activation_oracles),
    (4, "scaling", scaling),
    (5, "tuning effect", tuning),
    (6, "block-size sweep shape", sweep_shape),
    (7, "combinator semantics", combinator_semantics),
];

fn main() -> ExitCode {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(Verdict::Pass(d)) => println!("PASS criterion {id} ({name}) [{secs:.1}s]: {d}"),
            Ok(Verdict::NotEvaluated(d)) => println!("NOT EVALUATED criterion {id} ({name}): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}) [{secs:.1}s]: {d}");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
