use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::sync::Arc;

use super::{BoxDef, NetworkExpr};
use crate::error::CompileError;
use crate::record::{Name, TypePattern};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug)]
pub enum NodeKind {
    Box(BoxDef),
    Sync {
        slots: Arc<[TypePattern]>,
        repeating: bool,
    },
    /// `[|...|] * exit` over a non-repeating cell, executed as one node that
    /// owns the whole chain of cell instances.
    SyncStar {
        slots: Arc<[TypePattern]>,
        exit: Arc<TypePattern>,
        max_instances: u64,
    },
    /// Parallel fan-out: one output per branch, best match over each
    /// branch's input variants.
    Router { branches: Vec<Vec<TypePattern>> },
    /// First gate of a star; later instances of `body` are created lazily.
    Star {
        exit: TypePattern,
        max_instances: u64,
        body: Arc<NetworkGraph>,
    },
    Split { index_tag: Name, body: Arc<NetworkGraph> },
    /// `outputs[0]` leads back to the operand entry, `outputs[1]` out.
    Feedback { back: TypePattern, max_recirculations: u64 },
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Box(_) => "box",
            NodeKind::Sync { .. } => "sync",
            NodeKind::SyncStar { .. } => "syncstar",
            NodeKind::Router { .. } => "router",
            NodeKind::Star { .. } => "star",
            NodeKind::Split { .. } => "split",
            NodeKind::Feedback { .. } => "feedback",
        }
    }
}

#[derive(Clone, Debug)]
pub struct GraphNode {
    pub id: NodeId,
    pub label: String,
    pub kind: NodeKind,
    pub input: StreamId,
    pub outputs: Vec<StreamId>,
}

/// Executable form of a network expression. Star and split nodes carry the
/// graph of their operand as a template that the runtime instantiates on
/// demand; node ids are unique across all nested templates.
#[derive(Clone, Debug)]
pub struct NetworkGraph {
    pub nodes: Vec<GraphNode>,
    pub streams: usize,
    pub entry: StreamId,
    pub exit: StreamId,
    /// One past the largest node id in this graph and its templates.
    pub id_bound: usize,
}

impl NetworkGraph {
    /// Node count including nested templates (each counted once).
    pub fn total_nodes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match &n.kind {
                NodeKind::Star { body, .. } | NodeKind::Split { body, .. } => 1 + body.total_nodes(),
                _ => 1,
            })
            .sum()
    }

    /// Stream count including nested templates.
    pub fn total_streams(&self) -> usize {
        self.streams
            + self
                .nodes
                .iter()
                .map(|n| match &n.kind {
                    NodeKind::Star { body, .. } | NodeKind::Split { body, .. } => body.total_streams(),
                    _ => 0,
                })
                .sum::<usize>()
    }

    /// Visits every node, nested templates included, in id order.
    pub fn walk(&self, f: &mut dyn FnMut(&GraphNode)) {
        for node in &self.nodes {
            f(node);
            if let NodeKind::Star { body, .. } | NodeKind::Split { body, .. } = &node.kind {
                body.walk(f);
            }
        }
    }

    /// Count of boxes flagged as barrier collectors.
    pub fn barrier_nodes(&self) -> usize {
        let mut count = 0;
        self.walk(&mut |n| {
            if matches!(&n.kind, NodeKind::Box(def) if def.barrier) {
                count += 1;
            }
        });
        count
    }

    /// Labels indexed by node id.
    pub fn node_labels(&self) -> Vec<(String, &'static str)> {
        let mut labels = vec![(String::new(), ""); self.id_bound];
        self.walk(&mut |n| labels[n.id.0] = (n.label.clone(), n.kind.name()));
        labels
    }

    /// Line-oriented dump, stable for a given expression.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        self.dump_into(&mut out, 0);
        out
    }

    fn dump_into(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        let _ = writeln!(out, "{pad}graph entry=s{} exit=s{} streams={}", self.entry.0, self.exit.0, self.streams);
        for node in &self.nodes {
            let outs: Vec<String> = node.outputs.iter().map(|s| format!("s{}", s.0)).collect();
            let detail = match &node.kind {
                NodeKind::Box(def) => format!(" {}", def.signature),
                NodeKind::Sync { slots, repeating } => {
                    format!(" {}{}", join(slots), if *repeating { " repeating" } else { "" })
                }
                NodeKind::SyncStar { slots, exit, .. } => format!(" {} exit={exit}", join(slots)),
                NodeKind::Router { branches } => {
                    let b: Vec<String> = branches.iter().map(|v| join(v)).collect();
                    format!(" {}", b.join(" "))
                }
                NodeKind::Star { exit, .. } => format!(" exit={exit}"),
                NodeKind::Split { index_tag, .. } => format!(" <{index_tag}>"),
                NodeKind::Feedback { back, .. } => format!(" back={back}"),
            };
            let _ = writeln!(
                out,
                "{pad}n{} {} \"{}\"{} in=s{} out=[{}]",
                node.id.0,
                node.kind.name(),
                node.label,
                detail,
                node.input.0,
                outs.join(",")
            );
            if let NodeKind::Star { body, .. } | NodeKind::Split { body, .. } = &node.kind {
                body.dump_into(out, depth + 1);
            }
        }
    }
}

impl fmt::Display for NetworkGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dump())
    }
}

fn join(patterns: &[TypePattern]) -> String {
    let parts: Vec<String> = patterns.iter().map(|p| p.to_string()).collect();
    format!("[{}]", parts.join(","))
}

struct Lowering {
    next_id: usize,
}

struct GraphBuilder {
    nodes: Vec<GraphNode>,
    streams: usize,
}

impl GraphBuilder {
    fn stream(&mut self) -> StreamId {
        self.streams += 1;
        StreamId(self.streams - 1)
    }
}

/// Validates `expr` and lowers it to a graph with one entry and one exit
/// stream.
pub fn compile(expr: &NetworkExpr) -> Result<NetworkGraph, CompileError> {
    let mut lowering = Lowering { next_id: 0 };
    let mut graph = lowering.subgraph(expr, "")?;
    graph.id_bound = lowering.next_id;
    Ok(graph)
}

fn child(path: &str, segment: &str) -> String {
    if path.is_empty() {
        segment.to_owned()
    } else {
        format!("{path}/{segment}")
    }
}

fn fail(path: &str, expr: &NetworkExpr, message: impl Into<String>) -> CompileError {
    CompileError {
        path: if path.is_empty() { expr.label() } else { path.to_owned() },
        message: message.into(),
    }
}

impl Lowering {
    fn subgraph(&mut self, expr: &NetworkExpr, path: &str) -> Result<NetworkGraph, CompileError> {
        let mut builder = GraphBuilder { nodes: Vec::new(), streams: 0 };
        let entry = builder.stream();
        let exit = builder.stream();
        self.lower(expr, entry, exit, &mut builder, path)?;
        Ok(NetworkGraph {
            nodes: builder.nodes,
            streams: builder.streams,
            entry,
            exit,
            id_bound: 0,
        })
    }

    fn node(&mut self, b: &mut GraphBuilder, label: String, kind: NodeKind, input: StreamId, outputs: Vec<StreamId>) {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        b.nodes.push(GraphNode { id, label, kind, input, outputs });
    }

    fn lower(
        &mut self,
        expr: &NetworkExpr,
        entry: StreamId,
        exit: StreamId,
        b: &mut GraphBuilder,
        path: &str,
    ) -> Result<(), CompileError> {
        match expr {
            NetworkExpr::Box(def) => {
                if def.signature.outputs.is_empty() {
                    return Err(fail(path, expr, "box signature has no output types"));
                }
                self.node(b, def.name.clone(), NodeKind::Box(def.clone()), entry, vec![exit]);
            }
            NetworkExpr::Sync { slots, repeating } => {
                if slots.len() < 2 {
                    return Err(fail(path, expr, "a synchrocell needs at least two slots"));
                }
                let kind = NodeKind::Sync { slots: slots.as_slice().into(), repeating: *repeating };
                self.node(b, expr.label(), kind, entry, vec![exit]);
            }
            NetworkExpr::Serial(left, right) => {
                let mid = b.stream();
                self.lower(left, entry, mid, b, &child(path, "serial.0"))?;
                self.lower(right, mid, exit, b, &child(path, "serial.1"))?;
            }
            NetworkExpr::Parallel(ops) => {
                if ops.len() < 2 {
                    return Err(fail(path, expr, "parallel composition needs at least two operands"));
                }
                let branches: Vec<Vec<TypePattern>> = ops.iter().map(|op| op.input_types()).collect();
                let mut owner: HashMap<&TypePattern, usize> = HashMap::new();
                for (i, variants) in branches.iter().enumerate() {
                    for p in variants {
                        if let Some(&j) = owner.get(p) {
                            if j != i {
                                return Err(fail(
                                    path,
                                    expr,
                                    format!("operands {j} and {i} both accept {p}; routing would be ambiguous"),
                                ));
                            }
                        }
                        owner.insert(p, i);
                    }
                }
                let outs: Vec<StreamId> = (0..ops.len()).map(|_| b.stream()).collect();
                self.node(b, expr.label(), NodeKind::Router { branches: branches.clone() }, entry, outs.clone());
                for (i, (op, s)) in ops.iter().zip(outs).enumerate() {
                    self.lower(op, s, exit, b, &child(path, &format!("parallel.{i}")))?;
                }
            }
            NetworkExpr::Star { operand, exit: exit_pattern, max_instances } => {
                let inner = child(path, "star");
                if let NetworkExpr::Sync { slots, repeating: false } = operand.as_ref() {
                    if slots.len() < 2 {
                        return Err(fail(&inner, operand, "a synchrocell needs at least two slots"));
                    }
                    let kind = NodeKind::SyncStar {
                        slots: slots.as_slice().into(),
                        exit: Arc::new(exit_pattern.clone()),
                        max_instances: *max_instances,
                    };
                    let label = format!("{}*{exit_pattern}", operand.label());
                    self.node(b, label, kind, entry, vec![exit]);
                } else {
                    let id = NodeId(self.next_id);
                    self.next_id += 1;
                    let body = Arc::new(self.subgraph(operand, &inner)?);
                    b.nodes.push(GraphNode {
                        id,
                        label: expr.label(),
                        kind: NodeKind::Star { exit: exit_pattern.clone(), max_instances: *max_instances, body },
                        input: entry,
                        outputs: vec![exit],
                    });
                }
            }
            NetworkExpr::Split { operand, index_tag } => {
                let inner = child(path, &format!("split<{index_tag}>"));
                for variant in operand.input_types() {
                    if !variant.requires_tag(index_tag) {
                        return Err(fail(
                            &inner,
                            operand,
                            format!("input type {variant} does not require index tag <{index_tag}>"),
                        ));
                    }
                }
                let id = NodeId(self.next_id);
                self.next_id += 1;
                let body = Arc::new(self.subgraph(operand, &inner)?);
                b.nodes.push(GraphNode {
                    id,
                    label: expr.label(),
                    kind: NodeKind::Split { index_tag: index_tag.clone(), body },
                    input: entry,
                    outputs: vec![exit],
                });
            }
            NetworkExpr::Feedback { operand, back, max_recirculations } => {
                let out = b.stream();
                self.lower(operand, entry, out, b, &child(path, "feedback"))?;
                let kind = NodeKind::Feedback { back: back.clone(), max_recirculations: *max_recirculations };
                self.node(b, expr.label(), kind, out, vec![entry, exit]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinators::*;
    use crate::record::{BoxSignature, TypePattern};

    fn pat(s: &str) -> TypePattern {
        TypePattern::parse(s).unwrap()
    }

    fn identity(name: &str, sig: &str) -> NetworkExpr {
        box_node(name, BoxSignature::parse(sig).unwrap(), |r, _| Ok(vec![r]))
    }

    #[test]
    fn single_box_graph() {
        let g = compile(&identity("f", "{A} -> {A}")).unwrap();
        assert_eq!(g.total_nodes(), 1);
        assert_eq!(g.streams, 2);
        assert_eq!(g.dump(), "graph entry=s0 exit=s1 streams=2\nn0 box \"f\" {A} -> {A} in=s0 out=[s1]\n");
    }

    #[test]
    fn serial_shares_middle_stream() {
        let a = identity("f", "{A} -> {A}");
        let b = identity("g", "{A} -> {A}");
        let g = compile(&serial(a, b)).unwrap();
        assert_eq!(g.total_nodes(), 2);
        assert_eq!(g.streams, 3);
        assert_eq!(g.nodes[0].outputs, vec![g.nodes[1].input]);
    }

    #[test]
    fn compile_is_deterministic() {
        let build = || {
            feedback(
                serial(identity("f", "{A,<k>} -> {A,<k>}"), split(identity("g", "{A,<k>} -> {A,<k>}"), "k")),
                pat("{A}"),
            )
        };
        assert_eq!(compile(&build()).unwrap().dump(), compile(&build()).unwrap().dump());
    }

    #[test]
    fn parallel_rejects_identical_inputs() {
        let e = parallel(vec![identity("f", "{A} -> {B}"), identity("g", "{A} -> {C}")]);
        let err = compile(&e).unwrap_err();
        assert!(err.message.contains("ambiguous"), "{err}");
        let e = parallel(vec![identity("f", "{A} -> {B}")]);
        assert!(compile(&e).is_err());
    }

    #[test]
    fn split_requires_index_tag() {
        let e = serial(identity("f", "{A} -> {A}"), split(identity("g", "{A} -> {A}"), "k"));
        let err = compile(&e).unwrap_err();
        assert_eq!(err.path, "serial.1/split<k>");
        assert!(err.message.contains("<k>"));
        assert!(compile(&split(identity("g", "{A,<k>} -> {A}"), "k")).is_ok());
    }

    #[test]
    fn sync_needs_two_slots() {
        assert!(compile(&sync(vec![pat("{A}")], false)).is_err());
        assert!(compile(&sync(vec![pat("{A}"), pat("{B}")], false)).is_ok());
    }

    #[test]
    fn star_of_sync_is_fused() {
        let e = star(sync(vec![pat("{r}"), pat("{s}")], false), pat("{r,s}"));
        let g = compile(&e).unwrap();
        assert_eq!(g.total_nodes(), 1);
        assert!(matches!(g.nodes[0].kind, NodeKind::SyncStar { .. }));
        let e = star(identity("f", "{A} -> {A}"), pat("{B}"));
        let g = compile(&e).unwrap();
        assert_eq!(g.total_nodes(), 2);
        assert!(matches!(g.nodes[0].kind, NodeKind::Star { .. }));
    }

    #[test]
    fn feedback_loops_back_to_entry() {
        let g = compile(&feedback(identity("f", "{A} -> {A}"), pat("{A}"))).unwrap();
        let fb = g.nodes.iter().find(|n| n.kind.name() == "feedback").unwrap();
        assert_eq!(fb.outputs[0], g.entry);
        assert_eq!(fb.outputs[1], g.exit);
    }
}
