//! Tiled Cholesky as tile-level dataflow: every kernel call waits only for
//! its own input tiles, joined by synchrocells, so iterations overlap.
//!
//! ```text
//! start .. ( potrf!<k>
//!          | ([|{Tri_Ajk},{Tri_Lkk}|] .. solve)!<j>!<k>
//!          | ([|{Sym_Aij},{Sym_Lik},{Sym_Ljk}|] .. update)!<j>!<i>!<k>
//!          | collect(merge)
//!          ) \ {<k>}
//! ```
//!
//! Every tile message carries `<k>` and is fed back into the parallel
//! combinator, which routes it by role. Row `i` is always at least column
//! `j`; `Tri_*` messages for panel row `j` carry only `<k>` and `<j>`.
//! `collect(merge)` is the stateful-feedback idiom with
//! `{Result,<X>}` as its state: it places each `Out` tile and counts `X`
//! down, and at zero emits the assembled factor as `{Result}`.

use std::sync::Arc;

use crate::barrier::{grid_size, single_result};
use crate::cholesky::{assemble, decompose, potrf_tile, trsm_tile, update_tile, DenseMatrix, Tile, TiledMatrix};
use crate::combinators::{box_node, compile, feedback, parallel, split, stateful, sync, NetworkExpr};
use crate::error::{BoxError, CholeskyError, FactorError};
use crate::fields::{index, pat, sig, tag, take, tile};
use crate::record::{Payload, Record};
use crate::runtime::{run, RunConfig, RunMetrics};

/// One tile message, by role and index tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Message {
    /// Diagonal tile ready to be factored at step `k`.
    FacAkk { k: usize },
    /// Panel tile `(j, k)` awaiting its solve.
    TriAjk { k: usize, j: usize },
    /// `L_kk` delivered to the solve of row `j`.
    TriLkk { k: usize, j: usize },
    /// Trailing tile `(i, j)` awaiting its step-`k` update.
    SymAij { k: usize, i: usize, j: usize },
    /// `L_ik` delivered to the update of `(i, j)`.
    SymLik { k: usize, i: usize, j: usize },
    /// `L_jk` delivered to the update of `(i, j)`.
    SymLjk { k: usize, i: usize, j: usize },
    /// Final factor tile `(i, j)`.
    Out { i: usize, j: usize },
}

impl Message {
    pub fn role(&self) -> &'static str {
        match self {
            Message::FacAkk { .. } => "Fac_Akk",
            Message::TriAjk { .. } => "Tri_Ajk",
            Message::TriLkk { .. } => "Tri_Lkk",
            Message::SymAij { .. } => "Sym_Aij",
            Message::SymLik { .. } => "Sym_Lik",
            Message::SymLjk { .. } => "Sym_Ljk",
            Message::Out { .. } => "Out",
        }
    }

    fn to_record(self, t: Arc<Tile>, p: usize) -> Record {
        let r = Record::new().with_payload(self.role(), tile(t)).with_tag("P", p as i64);
        let idx = |r: Record, name: &'static str, v: usize| r.with_tag(name, v as i64);
        match self {
            Message::FacAkk { k } => idx(r, "k", k),
            Message::TriAjk { k, j } | Message::TriLkk { k, j } => idx(idx(r, "k", k), "j", j),
            Message::SymAij { k, i, j } | Message::SymLik { k, i, j } | Message::SymLjk { k, i, j } => {
                idx(idx(idx(r, "k", k), "i", i), "j", j)
            }
            // `<k>` sends the tile around the loop to the collector
            Message::Out { i, j } => idx(idx(idx(r, "k", j), "i", i), "j", j),
        }
    }
}

/// Messages `start` emits for the input tiles, paired with the tile
/// coordinates they carry.
pub fn initial_messages(p: usize) -> Vec<(Message, (usize, usize))> {
    let mut out = vec![(Message::FacAkk { k: 0 }, (0, 0))];
    out.extend((1..p).map(|j| (Message::TriAjk { k: 0, j }, (j, 0))));
    for j in 1..p {
        out.extend((j..p).map(|i| (Message::SymAij { k: 0, i, j }, (i, j))));
    }
    out
}

/// Messages carrying `L_kk` out of the factorization of step `k`.
pub fn potrf_successors(k: usize, p: usize) -> Vec<Message> {
    let mut out = vec![Message::Out { i: k, j: k }];
    out.extend((k + 1..p).map(|j| Message::TriLkk { k, j }));
    out
}

/// Messages carrying `L_jk` out of its solve: the final tile, then one
/// message per step-`k` update that reads it, as `L_ik` for the updates in
/// row `j` and as `L_jk` for the updates in column `j`.
pub fn emit_successors(k: usize, j: usize, p: usize) -> Vec<Message> {
    let mut out = vec![Message::Out { i: j, j: k }];
    out.extend((k + 1..=j).map(|c| Message::SymLik { k, i: j, j: c }));
    out.extend((j..p).map(|r| Message::SymLjk { k, i: r, j }));
    out
}

/// Where the tile `(i, j)` goes after its step-`k` update.
pub fn update_successor(k: usize, i: usize, j: usize) -> Message {
    let next = k + 1;
    if i == next && j == next {
        Message::FacAkk { k: next }
    } else if j == next {
        Message::TriAjk { k: next, j: i }
    } else {
        Message::SymAij { k: next, i, j }
    }
}

/// Number of `Out` tiles, p(p+1)/2.
pub fn out_tiles(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Accumulator of the collector state.
#[derive(Clone, Debug)]
struct Collected(TiledMatrix);

fn start_box(p: usize, b: usize) -> NetworkExpr {
    box_node(
        "start",
        sig("{Matrix} -> {Result,<X>} | {Fac_Akk,<k>} | {Tri_Ajk,<k>,<j>} | {Sym_Aij,<k>,<i>,<j>}"),
        move |mut r, _| {
            let m = take::<DenseMatrix>(&mut r, "Matrix")?;
            if m.n() != p * b {
                return Err(BoxError::new(format!("matrix of size {} does not fit a {p}x{p} grid of {b}x{b} tiles", m.n())));
            }
            let a = decompose(&m, b)?;
            let mut out = vec![Record::new()
                .with_field("Result", Collected(TiledMatrix::zeros(p, b)))
                .with_tag("X", out_tiles(p) as i64)];
            out.extend(
                initial_messages(p)
                    .into_iter()
                    .map(|(msg, (i, j))| msg.to_record(a.tile(i, j).clone(), p)),
            );
            Ok(out)
        },
    )
}

fn potrf_box() -> NetworkExpr {
    box_node("potrf", sig("{Fac_Akk,<k>,<P>} -> {Out,<k>,<i>,<j>} | {Tri_Lkk,<k>,<j>}"), |mut r, _| {
        let (k, p) = (index(&r, "k")?, index(&r, "P")?);
        let a = take::<Tile>(&mut r, "Fac_Akk")?;
        let l = Arc::new(potrf_tile(&a).map_err(|source| BoxError::from(CholeskyError::Numeric { k, i: k, j: k, source }))?);
        Ok(potrf_successors(k, p).into_iter().map(|m| m.to_record(l.clone(), p)).collect())
    })
}

fn solve_box() -> NetworkExpr {
    box_node(
        "solve",
        sig("{Tri_Ajk,Tri_Lkk,<k>,<j>,<P>} -> {Out,<k>,<i>,<j>} | {Sym_Lik,<k>,<i>,<j>} | {Sym_Ljk,<k>,<i>,<j>}"),
        |mut r, _| {
            let (k, j, p) = (index(&r, "k")?, index(&r, "j")?, index(&r, "P")?);
            let a = take::<Tile>(&mut r, "Tri_Ajk")?;
            let l_kk = take::<Tile>(&mut r, "Tri_Lkk")?;
            let l = trsm_tile(&l_kk, &a).map_err(|source| BoxError::from(CholeskyError::Numeric { k, i: j, j: k, source }))?;
            let l = Arc::new(l);
            Ok(emit_successors(k, j, p).into_iter().map(|m| m.to_record(l.clone(), p)).collect())
        },
    )
}

fn update_box() -> NetworkExpr {
    box_node(
        "update",
        sig("{Sym_Aij,Sym_Lik,Sym_Ljk,<k>,<i>,<j>,<P>} -> {Fac_Akk,<k>} | {Tri_Ajk,<k>,<j>} | {Sym_Aij,<k>,<i>,<j>}"),
        |mut r, _| {
            let (k, i, j, p) = (index(&r, "k")?, index(&r, "i")?, index(&r, "j")?, index(&r, "P")?);
            let a = take::<Tile>(&mut r, "Sym_Aij")?;
            let l_ik = take::<Tile>(&mut r, "Sym_Lik")?;
            let l_jk = take::<Tile>(&mut r, "Sym_Ljk")?;
            let next = update_successor(k, i, j);
            Ok(vec![next.to_record(Arc::new(update_tile(&a, &l_ik, &l_jk)), p)])
        },
    )
}

fn merge_box() -> NetworkExpr {
    box_node("merge", sig("{Out,Result,<X>,<i>,<j>} -> {Result,<X>} | {Result}"), |mut r, _| {
        let (i, j) = (index(&r, "i")?, index(&r, "j")?);
        let x = tag(&r, "X")? - 1;
        let t = take::<Tile>(&mut r, "Out")?;
        let Collected(mut l) = Arc::unwrap_or_clone(take::<Collected>(&mut r, "Result")?);
        l.set_tile(i, j, t);
        let out = if x == 0 {
            Record::new().with_field("Result", assemble(&l))
        } else {
            Record::new().with_field("Result", Collected(l)).with_tag("X", x)
        };
        Ok(vec![out])
    })
}

/// The whole network for a `p x p` grid of `b x b` tiles.
pub fn build_dataflow_network(p: usize, b: usize) -> NetworkExpr {
    assert!(p >= 1 && b >= 1, "grid and tile sizes must be positive");
    let joined = |slots: &[&str]| sync(slots.iter().map(|s| pat(s)).collect(), false);
    let factor = split(potrf_box(), "k");
    let solve = split(
        split(joined(&["{Tri_Ajk,<k>,<j>}", "{Tri_Lkk,<k>,<j>}"]).then(solve_box()), "j"),
        "k",
    );
    let update = split(
        split(
            split(
                joined(&["{Sym_Aij,<k>,<i>,<j>}", "{Sym_Lik,<k>,<i>,<j>}", "{Sym_Ljk,<k>,<i>,<j>}"]).then(update_box()),
                "j",
            ),
            "i",
        ),
        "k",
    );
    let collect = stateful(pat("{Out}"), pat("{Result,<X>}"), merge_box());
    // every kernel output recirculates; the tile count is ~p^3/2
    let body = feedback(parallel(vec![factor, solve, update, collect]), pat("{<k>}")).with_limit(u64::MAX);
    start_box(p, b).then(body)
}

/// Factors `a` with tiles of size `b` on the dataflow network.
pub fn run_dataflow(a: Arc<DenseMatrix>, b: usize, config: &RunConfig) -> Result<(DenseMatrix, RunMetrics), FactorError> {
    let p = grid_size(a.n(), b)?;
    let graph = compile(&build_dataflow_network(p, b))?;
    let matrix: Payload = a;
    let out = run(&graph, vec![Record::new().with_payload("Matrix", matrix)], config)?;
    Ok((single_result(out.records)?, out.metrics))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::cholesky::{gen_spd, serial_tiled_cholesky, TaskCounts};

    #[test]
    fn successor_examples() {
        assert_eq!(update_successor(0, 1, 1), Message::FacAkk { k: 1 });
        assert_eq!(update_successor(0, 3, 1), Message::TriAjk { k: 1, j: 3 });
        assert_eq!(update_successor(0, 3, 2), Message::SymAij { k: 1, i: 3, j: 2 });
        assert_eq!(
            emit_successors(0, 2, 4),
            vec![
                Message::Out { i: 2, j: 0 },
                Message::SymLik { k: 0, i: 2, j: 1 },
                Message::SymLik { k: 0, i: 2, j: 2 },
                Message::SymLjk { k: 0, i: 2, j: 2 },
                Message::SymLjk { k: 0, i: 3, j: 2 },
            ]
        );
        assert_eq!(potrf_successors(3, 4), vec![Message::Out { i: 3, j: 3 }]);
        assert_eq!(initial_messages(1), vec![(Message::FacAkk { k: 0 }, (0, 0))]);
    }

    /// The messages each kernel call consumes, read off the serial loop nest.
    fn demanded(p: usize) -> BTreeMap<Message, usize> {
        let mut want = BTreeMap::new();
        for k in 0..p {
            *want.entry(Message::FacAkk { k }).or_default() += 1;
            for j in k + 1..p {
                *want.entry(Message::TriAjk { k, j }).or_default() += 1;
                *want.entry(Message::TriLkk { k, j }).or_default() += 1;
            }
            for j in k + 1..p {
                for i in j..p {
                    for m in [Message::SymAij { k, i, j }, Message::SymLik { k, i, j }, Message::SymLjk { k, i, j }] {
                        *want.entry(m).or_default() += 1;
                    }
                }
            }
        }
        for j in 0..p {
            for i in j..p {
                *want.entry(Message::Out { i, j }).or_default() += 1;
            }
        }
        want
    }

    /// Everything emitted by start and by every kernel call.
    fn supplied(p: usize) -> BTreeMap<Message, usize> {
        let mut got = BTreeMap::new();
        let mut add = |m: Message| *got.entry(m).or_default() += 1;
        initial_messages(p).into_iter().for_each(|(m, _)| add(m));
        for k in 0..p {
            potrf_successors(k, p).into_iter().for_each(&mut add);
            for j in k + 1..p {
                emit_successors(k, j, p).into_iter().for_each(&mut add);
                for i in j..p {
                    add(update_successor(k, i, j));
                }
            }
        }
        got
    }

    #[test]
    fn every_input_is_supplied_exactly_once() {
        for p in 1..=9 {
            assert_eq!(supplied(p), demanded(p), "p={p}");
        }
    }

    #[test]
    fn each_panel_tile_feeds_p_minus_k_updates() {
        for p in 1..8 {
            for k in 0..p {
                for j in k + 1..p {
                    let succ = emit_successors(k, j, p);
                    assert_eq!(succ.len(), 1 + (j - k) + (p - j));
                }
            }
        }
    }

    fn run_case(n: usize, b: usize, workers: usize) -> (DenseMatrix, DenseMatrix, RunMetrics) {
        let a = Arc::new(gen_spd(n, 100 + n as u64));
        let (l, m) = run_dataflow(a.clone(), b, &RunConfig::with_workers(workers)).unwrap();
        let oracle = assemble(&serial_tiled_cholesky(&decompose(&a, b).unwrap()).unwrap());
        (l, oracle, m)
    }

    fn fires_of(m: &RunMetrics, role: &str) -> u64 {
        m.nodes
            .iter()
            .filter(|n| n.kind == "sync" && n.node.contains(role))
            .map(|n| n.fires)
            .sum()
    }

    #[test]
    fn matches_serial_oracle_bitwise() {
        for (n, b, workers) in [(4, 4, 1), (8, 2, 2), (16, 4, 3), (20, 4, 1), (24, 3, 4)] {
            let (l, oracle, m) = run_case(n, b, workers);
            let bits = |d: &DenseMatrix| d.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&l), bits(&oracle), "n={n} b={b}");
            assert!(m.ledger_balanced());
            assert_eq!(m.parked, 0);
        }
    }

    #[test]
    fn join_and_activation_counts() {
        for p in 1..=6 {
            let (_, _, m) = run_case(p * 2, 2, 2);
            let c = TaskCounts::for_blocks(p);
            assert_eq!(m.activations("potrf"), c.potrf);
            assert_eq!(m.activations("solve"), c.trsm);
            assert_eq!(m.activations("update"), c.update);
            assert_eq!(fires_of(&m, "Tri_Ajk"), c.trsm);
            assert_eq!(fires_of(&m, "Sym_Aij"), c.update);
            assert_eq!(m.activations("merge"), out_tiles(p) as u64);
            assert_eq!(m.counter("barrier_waits"), 0);
        }
    }

    #[test]
    fn network_has_no_collective_barrier() {
        let g = compile(&build_dataflow_network(4, 2)).unwrap();
        assert_eq!(g.barrier_nodes(), 0);
        // start, router, three splits, fused collector cells, merge, and the
        // collector and outer feedbacks
        assert_eq!(g.nodes.len(), 9);
        // plus potrf; split<j>, join, solve; split<i>, split<j>, join, update
        assert_eq!(g.total_nodes(), 17);
    }
}
