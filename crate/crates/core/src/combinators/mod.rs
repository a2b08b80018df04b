//! The combinator algebra: network expressions built from boxes and
//! synchrocells with serial, parallel, star, split and feedback
//! combinators, and their compilation into an executable graph.

mod compile;

use std::fmt;
use std::sync::Arc;

pub use compile::{compile, GraphNode, NetworkGraph, NodeId, NodeKind, StreamId};

use crate::error::BoxError;
use crate::record::{BoxSignature, Name, Record, TypePattern};
use crate::runtime::BoxContext;

/// Default cap on star instances and on feedback recirculations.
pub const DEFAULT_DIVERGENCE_LIMIT: u64 = 1_000_000;

/// A box function: one record in, zero or more records out. Kernels must
/// be pure; the runtime may call one kernel concurrently from many workers.
pub type Kernel = Arc<dyn Fn(Record, &BoxContext) -> Result<Vec<Record>, BoxError> + Send + Sync>;

#[derive(Clone)]
pub struct BoxDef {
    pub name: String,
    pub signature: BoxSignature,
    pub kernel: Kernel,
    /// Re-attach input names the box did not consume to each output that
    /// lacks them.
    pub pass_through: bool,
    /// Marks a collective fan-in point (barrier collector).
    pub barrier: bool,
}

impl BoxDef {
    pub fn new<F>(name: impl Into<String>, signature: BoxSignature, kernel: F) -> Self
    where
        F: Fn(Record, &BoxContext) -> Result<Vec<Record>, BoxError> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            signature,
            kernel: Arc::new(kernel),
            pass_through: false,
            barrier: false,
        }
    }

    pub fn with_pass_through(mut self) -> Self {
        self.pass_through = true;
        self
    }

    pub fn as_barrier(mut self) -> Self {
        self.barrier = true;
        self
    }
}

impl fmt::Debug for BoxDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoxDef")
            .field("name", &self.name)
            .field("signature", &self.signature.to_string())
            .field("pass_through", &self.pass_through)
            .field("barrier", &self.barrier)
            .finish()
    }
}

impl From<BoxDef> for NetworkExpr {
    fn from(def: BoxDef) -> Self {
        NetworkExpr::Box(def)
    }
}

#[derive(Clone, Debug)]
pub enum NetworkExpr {
    Box(BoxDef),
    Serial(Box<NetworkExpr>, Box<NetworkExpr>),
    Parallel(Vec<NetworkExpr>),
    Star {
        operand: Box<NetworkExpr>,
        exit: TypePattern,
        max_instances: u64,
    },
    Split {
        operand: Box<NetworkExpr>,
        index_tag: Name,
    },
    Feedback {
        operand: Box<NetworkExpr>,
        back: TypePattern,
        max_recirculations: u64,
    },
    Sync {
        slots: Vec<TypePattern>,
        repeating: bool,
    },
}

pub fn box_node<F>(name: impl Into<String>, signature: BoxSignature, kernel: F) -> NetworkExpr
where
    F: Fn(Record, &BoxContext) -> Result<Vec<Record>, BoxError> + Send + Sync + 'static,
{
    BoxDef::new(name, signature, kernel).into()
}

/// `a .. b`
pub fn serial(a: NetworkExpr, b: NetworkExpr) -> NetworkExpr {
    NetworkExpr::Serial(Box::new(a), Box::new(b))
}

/// `a | b | ...`; records go to the operand whose input type matches best.
pub fn parallel(ops: Vec<NetworkExpr>) -> NetworkExpr {
    NetworkExpr::Parallel(ops)
}

/// `a * exit`
pub fn star(a: NetworkExpr, exit: TypePattern) -> NetworkExpr {
    NetworkExpr::Star {
        operand: Box::new(a),
        exit,
        max_instances: DEFAULT_DIVERGENCE_LIMIT,
    }
}

/// `a ! <tag>`
pub fn split(a: NetworkExpr, index_tag: impl Into<Name>) -> NetworkExpr {
    NetworkExpr::Split {
        operand: Box::new(a),
        index_tag: index_tag.into(),
    }
}

/// `a \ back`
pub fn feedback(a: NetworkExpr, back: TypePattern) -> NetworkExpr {
    NetworkExpr::Feedback {
        operand: Box::new(a),
        back,
        max_recirculations: DEFAULT_DIVERGENCE_LIMIT,
    }
}

/// `[| p0, p1, ... |]`
pub fn sync(slots: Vec<TypePattern>, repeating: bool) -> NetworkExpr {
    NetworkExpr::Sync { slots, repeating }
}

/// The stateful-feedback idiom `([|{r},{s}|] * {r,s} .. body) \ {s}`: a
/// single state record `s` is combined with each incoming `r`; `body` must
/// emit the evolved state (matching `s`) to keep the loop alive.
pub fn stateful(r: TypePattern, s: TypePattern, body: NetworkExpr) -> NetworkExpr {
    let both = TypePattern::new()
        .fields(r.required_fields().chain(s.required_fields()).map(|f| Name::Owned(f.to_owned())))
        .tags(r.required_tags().chain(s.required_tags()).map(|t| Name::Owned(t.to_owned())));
    feedback(serial(star(sync(vec![r, s.clone()], false), both), body), s)
}

impl NetworkExpr {
    /// `self .. next`
    pub fn then(self, next: NetworkExpr) -> NetworkExpr {
        serial(self, next)
    }

    /// Overrides the divergence cap of a star or feedback node; no effect
    /// on other nodes.
    pub fn with_limit(mut self, limit: u64) -> NetworkExpr {
        match &mut self {
            NetworkExpr::Star { max_instances, .. } => *max_instances = limit,
            NetworkExpr::Feedback { max_recirculations, .. } => *max_recirculations = limit,
            _ => {}
        }
        self
    }

    /// The record types this expression accepts, as a list of variants.
    pub fn input_types(&self) -> Vec<TypePattern> {
        match self {
            NetworkExpr::Box(def) => vec![def.signature.input.clone()],
            NetworkExpr::Serial(a, _) => a.input_types(),
            NetworkExpr::Parallel(ops) => ops.iter().flat_map(|op| op.input_types()).collect(),
            NetworkExpr::Star { operand, exit, .. } => {
                let mut types = vec![exit.clone()];
                types.extend(operand.input_types());
                types
            }
            NetworkExpr::Split { operand, .. } => operand.input_types(),
            NetworkExpr::Feedback { operand, .. } => operand.input_types(),
            NetworkExpr::Sync { slots, .. } => slots.clone(),
        }
    }

    /// Short label used in diagnostics and graph dumps.
    pub fn label(&self) -> String {
        match self {
            NetworkExpr::Box(def) => def.name.clone(),
            NetworkExpr::Serial(..) => "serial".into(),
            NetworkExpr::Parallel(_) => "parallel".into(),
            NetworkExpr::Star { exit, .. } => format!("star{exit}"),
            NetworkExpr::Split { index_tag, .. } => format!("split<{index_tag}>"),
            NetworkExpr::Feedback { back, .. } => format!("feedback{back}"),
            NetworkExpr::Sync { slots, repeating } => {
                let slots: Vec<String> = slots.iter().map(|s| s.to_string()).collect();
                let star = if *repeating { "*" } else { "" };
                format!("sync[|{}|]{star}", slots.join(","))
            }
        }
    }
}
