//! Tiled Cholesky as a feedback loop over three stages, with a counting
//! collector closing each parallel stage.
//!
//! ```text
//! decompose
//!   .. ( factor
//!        .. scatter_trsm   .. ( (trsm!<j> | keep_trsm) .. collect(gather_trsm) | trsm_done )
//!        .. scatter_update .. ( (update!<i>!<j> | keep_update) .. collect(gather_update) | update_done )
//!      ) \ {A}
//!   .. finalize
//! ```
//!
//! The iteration record is `{A, L, <k>, <P>, <B>}`. A scatter box emits one
//! record per independent kernel call plus an accumulator record holding the
//! grids and a `<pending>` count. The collector is the stateful-feedback
//! idiom with the accumulator as its state: each kernel result is merged
//! with the state, and the gather box either re-emits the state or, at
//! zero, the completed iteration record. A stage with no kernel calls
//! passes the iteration record straight through its `done` branch. After
//! the last iteration the record carries no `A` and leaves the loop.
//!
//! Box signatures:
//!
//! | box | input | outputs |
//! |---|---|---|
//! | decompose | `{Matrix}` | `{A,L,<k>,<P>,<B>}` |
//! | factor | `{A,L,<k>}` | `{A,L,<k>}` |
//! | scatter_trsm | `{A,L,<k>,<P>}` | `{Tri_Ajk,Tri_Lkk,<k>,<j>}`, `{TrsmAcc,<pending>}`, `{A,L}` |
//! | trsm | `{Tri_Ajk,Tri_Lkk,<k>,<j>}` | `{Tri_Ljk,<k>,<j>}` |
//! | gather_trsm | `{Tri_Ljk,TrsmAcc,<pending>,<j>,<k>}` | `{TrsmAcc,<pending>}`, `{A,L}` |
//! | scatter_update | `{A,L,<k>,<P>}` | `{Sym_Aij,Sym_Lik,Sym_Ljk,<i>,<j>}`, `{UpdAcc,<pending>}`, `{L}` |
//! | update | `{Sym_Aij,Sym_Lik,Sym_Ljk,<i>,<j>}` | `{Upd_Aij,<i>,<j>}` |
//! | gather_update | `{Upd_Aij,UpdAcc,<pending>,<i>,<j>,<k>}` | `{UpdAcc,<pending>}`, `{A,L}` |
//! | finalize | `{L,<P>}` | `{Result}` |

use std::sync::Arc;

use crate::cholesky::{assemble, decompose, potrf_tile, trsm_tile, update_tile, DenseMatrix, TiledMatrix};
use crate::combinators::{box_node, compile, feedback, parallel, split, stateful, BoxDef, NetworkExpr};
use crate::error::{BoxError, CholeskyError, FactorError, NumericError};
use crate::fields::{index, pat, sig, tag, take, tile};
use crate::record::{Payload, Record};
use crate::runtime::{run, BoxContext, RunConfig, RunMetrics};

/// Counter bumped once per completed stage (two per iteration).
pub const BARRIER_WAITS: &str = "barrier_waits";
/// Counter bumped once per pass through the loop body.
pub const ITERATIONS: &str = "iterations";

/// Accumulator payload of a stage collector.
#[derive(Clone, Debug)]
struct Grids {
    a: Arc<TiledMatrix>,
    l: TiledMatrix,
}

fn iteration_record(a: Arc<TiledMatrix>, l: TiledMatrix, k: usize, p: i64, b: i64) -> Record {
    let a: Payload = a;
    Record::new()
        .with_payload("A", a)
        .with_field("L", l)
        .with_tag("k", k as i64)
        .with_tag("P", p)
        .with_tag("B", b)
}

fn loop_tags(r: &Record) -> Result<(usize, i64, i64), BoxError> {
    Ok((index(r, "k")?, tag(r, "P")?, tag(r, "B")?))
}

fn identity(name: &str, signature: &str) -> NetworkExpr {
    box_node(name, sig(signature), |r, _| Ok(vec![r]))
}

fn numeric(k: usize, i: usize, j: usize) -> impl FnOnce(NumericError) -> BoxError {
    move |source| CholeskyError::Numeric { k, i, j, source }.into()
}

/// The whole network for a `p x p` grid of `b x b` tiles.
pub fn build_barrier_network(p: usize, b: usize) -> NetworkExpr {
    assert!(p >= 1 && b >= 1, "grid and tile sizes must be positive");
    decompose_box(p, b)
        .then(feedback(factor_box().then(trsm_stage()).then(update_stage()), pat("{A}")))
        .then(finalize_box())
}

fn decompose_box(p: usize, b: usize) -> NetworkExpr {
    box_node("decompose", sig("{Matrix} -> {A,L,<k>,<P>,<B>}"), move |mut r, _| {
        let m = take::<DenseMatrix>(&mut r, "Matrix")?;
        if m.n() != p * b {
            return Err(BoxError::new(format!("matrix of size {} does not fit a {p}x{p} grid of {b}x{b} tiles", m.n())));
        }
        let a = decompose(&m, b)?;
        Ok(vec![iteration_record(Arc::new(a), TiledMatrix::zeros(p, b), 0, p as i64, b as i64)])
    })
}

fn factor_box() -> NetworkExpr {
    BoxDef::new("factor", sig("{A,L,<k>} -> {A,L,<k>}"), |mut r, ctx: &BoxContext| {
        let k = index(&r, "k")?;
        let a = take::<TiledMatrix>(&mut r, "A")?;
        let mut l = Arc::unwrap_or_clone(take::<TiledMatrix>(&mut r, "L")?);
        let l_kk = potrf_tile(a.tile(k, k)).map_err(numeric(k, k, k))?;
        l.set_tile(k, k, Arc::new(l_kk));
        ctx.count(ITERATIONS, 1);
        let a: Payload = a;
        Ok(vec![Record::new().with_payload("A", a).with_field("L", l).with_tag("k", k as i64)])
    })
    .with_pass_through()
    .into()
}

fn trsm_stage() -> NetworkExpr {
    let scatter = box_node(
        "scatter_trsm",
        sig("{A,L,<k>,<P>} -> {Tri_Ajk,Tri_Lkk,<k>,<j>} | {TrsmAcc,<pending>} | {A,L}"),
        |mut r, ctx| {
            let (k, p, b) = loop_tags(&r)?;
            let a = take::<TiledMatrix>(&mut r, "A")?;
            let l = Arc::unwrap_or_clone(take::<TiledMatrix>(&mut r, "L")?);
            let pending = p as usize - 1 - k;
            if pending == 0 {
                ctx.count(BARRIER_WAITS, 1);
                return Ok(vec![iteration_record(a, l, k, p, b)]);
            }
            let l_kk = l.tile(k, k).clone();
            let mut out: Vec<Record> = (k + 1..p as usize)
                .map(|j| {
                    Record::new()
                        .with_payload("Tri_Ajk", tile(a.tile(j, k).clone()))
                        .with_payload("Tri_Lkk", tile(l_kk.clone()))
                        .with_tag("k", k as i64)
                        .with_tag("j", j as i64)
                })
                .collect();
            out.push(
                Record::new()
                    .with_field("TrsmAcc", Grids { a, l })
                    .with_tag("pending", pending as i64)
                    .with_tag("k", k as i64)
                    .with_tag("P", p)
                    .with_tag("B", b),
            );
            Ok(out)
        },
    );
    let trsm = box_node("trsm", sig("{Tri_Ajk,Tri_Lkk,<k>,<j>} -> {Tri_Ljk,<k>,<j>}"), |mut r, _| {
        let (k, j) = (index(&r, "k")?, index(&r, "j")?);
        let l_kk = take(&mut r, "Tri_Lkk")?;
        let a_jk = take(&mut r, "Tri_Ajk")?;
        let l_jk = trsm_tile(&l_kk, &a_jk).map_err(numeric(k, j, k))?;
        Ok(vec![Record::new()
            .with_field("Tri_Ljk", l_jk)
            .with_tag("k", k as i64)
            .with_tag("j", j as i64)])
    });
    let gather = BoxDef::new(
        "gather_trsm",
        sig("{Tri_Ljk,TrsmAcc,<pending>,<j>,<k>} -> {TrsmAcc,<pending>} | {A,L}"),
        |mut r, ctx| {
            let (k, p, b) = loop_tags(&r)?;
            let j = index(&r, "j")?;
            let pending = index(&r, "pending")? - 1;
            let l_jk = take(&mut r, "Tri_Ljk")?;
            let mut acc = Arc::unwrap_or_clone(take::<Grids>(&mut r, "TrsmAcc")?);
            acc.l.set_tile(j, k, l_jk);
            Ok(vec![close_or_continue(acc, "TrsmAcc", pending, k, p, b, ctx)])
        },
    )
    .as_barrier();
    stage(scatter, split(trsm, "j"), "TrsmAcc", gather, identity("trsm_done", "{A,L} -> {A,L}"), "Tri_Ljk")
}

fn update_stage() -> NetworkExpr {
    let scatter = box_node(
        "scatter_update",
        sig("{A,L,<k>,<P>} -> {Sym_Aij,Sym_Lik,Sym_Ljk,<i>,<j>} | {UpdAcc,<pending>} | {L}"),
        |mut r, ctx| {
            let (k, p, b) = loop_tags(&r)?;
            let pu = p as usize;
            let a = take::<TiledMatrix>(&mut r, "A")?;
            let l = Arc::unwrap_or_clone(take::<TiledMatrix>(&mut r, "L")?);
            if k + 1 == pu {
                ctx.count(BARRIER_WAITS, 1);
                return Ok(vec![Record::new()
                    .with_field("L", l)
                    .with_tag("k", p)
                    .with_tag("P", p)
                    .with_tag("B", b)]);
            }
            let mut out = Vec::new();
            for j in k + 1..pu {
                for i in j..pu {
                    out.push(
                        Record::new()
                            .with_payload("Sym_Aij", tile(a.tile(i, j).clone()))
                            .with_payload("Sym_Lik", tile(l.tile(i, k).clone()))
                            .with_payload("Sym_Ljk", tile(l.tile(j, k).clone()))
                            .with_tag("k", k as i64)
                            .with_tag("i", i as i64)
                            .with_tag("j", j as i64),
                    );
                }
            }
            out.push(
                Record::new()
                    .with_field("UpdAcc", Grids { a, l })
                    .with_tag("pending", out.len() as i64)
                    .with_tag("k", k as i64)
                    .with_tag("P", p)
                    .with_tag("B", b),
            );
            Ok(out)
        },
    );
    let update = box_node("update", sig("{Sym_Aij,Sym_Lik,Sym_Ljk,<i>,<j>} -> {Upd_Aij,<i>,<j>}"), |mut r, _| {
        let (i, j) = (tag(&r, "i")?, tag(&r, "j")?);
        let a_ij = take(&mut r, "Sym_Aij")?;
        let l_ik = take(&mut r, "Sym_Lik")?;
        let l_jk = take(&mut r, "Sym_Ljk")?;
        Ok(vec![Record::new()
            .with_field("Upd_Aij", update_tile(&a_ij, &l_ik, &l_jk))
            .with_tag("i", i)
            .with_tag("j", j)])
    });
    let gather = BoxDef::new(
        "gather_update",
        sig("{Upd_Aij,UpdAcc,<pending>,<i>,<j>,<k>} -> {UpdAcc,<pending>} | {A,L}"),
        |mut r, ctx| {
            let (k, p, b) = loop_tags(&r)?;
            let (i, j) = (index(&r, "i")?, index(&r, "j")?);
            let pending = index(&r, "pending")? - 1;
            let a_ij = take(&mut r, "Upd_Aij")?;
            let mut acc = Arc::unwrap_or_clone(take::<Grids>(&mut r, "UpdAcc")?);
            Arc::make_mut(&mut acc.a).set_tile(i, j, a_ij);
            Ok(vec![close_or_continue(acc, "UpdAcc", pending, k, p, b, ctx)])
        },
    )
    .as_barrier();
    let kernels = split(split(update, "i"), "j");
    stage(scatter, kernels, "UpdAcc", gather, identity("update_done", "{L} -> {L}"), "Upd_Aij")
}

/// `scatter .. ((kernels | keep) .. collector | done)`
fn stage(
    scatter: NetworkExpr,
    kernels: NetworkExpr,
    acc: &str,
    gather: BoxDef,
    done: NetworkExpr,
    result: &str,
) -> NetworkExpr {
    let state = pat(&format!("{{{acc},<pending>}}"));
    let keep = identity(&format!("keep_{}", gather.name.trim_start_matches("gather_")), &format!("{state} -> {state}"));
    let collector = stateful(pat(&format!("{{{result}}}")), state, gather.into());
    scatter.then(parallel(vec![parallel(vec![kernels, keep]).then(collector), done]))
}

/// Re-emits the accumulator, or the iteration record for `k + 1` once every
/// kernel result of the stage has been merged. The update stage advances
/// `k`; the trsm stage keeps it.
fn close_or_continue(acc: Grids, name: &str, pending: usize, k: usize, p: i64, b: i64, ctx: &BoxContext) -> Record {
    if pending > 0 {
        return Record::new()
            .with_field(name.to_owned(), acc)
            .with_tag("pending", pending as i64)
            .with_tag("k", k as i64)
            .with_tag("P", p)
            .with_tag("B", b);
    }
    ctx.count(BARRIER_WAITS, 1);
    let next = if name == "UpdAcc" { k + 1 } else { k };
    iteration_record(acc.a, acc.l, next, p, b)
}

fn finalize_box() -> NetworkExpr {
    box_node("finalize", sig("{L,<P>} -> {Result}"), |mut r, _| {
        let l = take::<TiledMatrix>(&mut r, "L")?;
        Ok(vec![Record::new().with_field("Result", assemble(&l))])
    })
}

/// Factors `a` with tiles of size `b` on the barrier network.
pub fn run_barrier(a: Arc<DenseMatrix>, b: usize, config: &RunConfig) -> Result<(DenseMatrix, RunMetrics), FactorError> {
    let p = grid_size(a.n(), b)?;
    let graph = compile(&build_barrier_network(p, b))?;
    let matrix: Payload = a;
    let out = run(&graph, vec![Record::new().with_payload("Matrix", matrix)], config)?;
    Ok((single_result(out.records)?, out.metrics))
}

pub(crate) fn grid_size(n: usize, b: usize) -> Result<usize, CholeskyError> {
    if b == 0 {
        return Err(CholeskyError::ZeroBlock);
    }
    if n == 0 || n % b != 0 {
        return Err(CholeskyError::Indivisible { n, b });
    }
    Ok(n / b)
}

pub(crate) fn single_result(records: Vec<Record>) -> Result<DenseMatrix, FactorError> {
    let count = records.len();
    let [mut r] = <[Record; 1]>::try_from(records)
        .map_err(|_| FactorError::Output(format!("expected one result record, got {count}")))?;
    let l = r
        .take_field::<DenseMatrix>("Result")
        .ok_or_else(|| FactorError::Output(format!("exit record {r:?} carries no Result")))?;
    Ok(Arc::unwrap_or_clone(l))
}
