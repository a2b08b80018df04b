use std::collections::BTreeMap;
use std::sync::atomic::Ordering;

use serde::{Deserialize, Serialize};

use super::Engine;
use crate::combinators::NetworkGraph;

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct NodeMetrics {
    pub node: String,
    pub id: usize,
    pub kind: String,
    /// Records processed (boxes: kernel invocations).
    pub activations: u64,
    /// Synchrocell firings.
    pub fires: u64,
    /// Records parked at the end of the run.
    pub parked: u64,
    /// Star operand instances, split branches, or synchrocell instances.
    pub instances: u64,
    pub recirculations: u64,
    pub busy_ns: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct WorkerMetrics {
    pub worker: usize,
    pub busy_ns: u64,
    pub idle_ns: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ActivationSpan {
    pub node: String,
    pub tag: Option<i64>,
    pub start_ns: u64,
    pub end_ns: u64,
    pub worker: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct RunMetrics {
    pub nodes: Vec<NodeMetrics>,
    pub workers: Vec<WorkerMetrics>,
    pub injected: u64,
    pub produced: u64,
    pub absorbed: u64,
    pub exited: u64,
    pub parked: u64,
    pub peak_live: u64,
    pub wall_ns: u64,
    pub backpressure_waits: u64,
    pub capacity_overflows: u64,
    /// Counters bumped by kernels through `BoxContext::count`.
    pub counters: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timeline: Vec<ActivationSpan>,
}

impl RunMetrics {
    /// Sum of activations over every node with this label.
    pub fn activations(&self, label: &str) -> u64 {
        self.nodes.iter().filter(|n| n.node == label).map(|n| n.activations).sum()
    }

    pub fn fires(&self, label: &str) -> u64 {
        self.nodes.iter().filter(|n| n.node == label).map(|n| n.fires).sum()
    }

    pub fn instances(&self, label: &str) -> u64 {
        self.nodes.iter().filter(|n| n.node == label).map(|n| n.instances).sum()
    }

    pub fn recirculations(&self, label: &str) -> u64 {
        self.nodes.iter().filter(|n| n.node == label).map(|n| n.recirculations).sum()
    }

    pub fn box_activations(&self) -> u64 {
        self.nodes.iter().filter(|n| n.kind == "box").map(|n| n.activations).sum()
    }

    pub fn counter(&self, name: &str) -> u64 {
        self.counters.get(name).copied().unwrap_or(0)
    }

    /// exited + parked = injected + produced - absorbed. Holds at
    /// quiescence, when nothing is in flight.
    pub fn ledger_balanced(&self) -> bool {
        (self.exited + self.parked) as i128 == self.injected as i128 + self.produced as i128 - self.absorbed as i128
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

pub(super) fn collect(engine: &Engine<'_>, graph: &NetworkGraph, wall_ns: u64) -> RunMetrics {
    let mut nodes = Vec::new();
    graph.walk(&mut |n| {
        let c = &engine.counters[n.id.0];
        nodes.push(NodeMetrics {
            node: n.label.clone(),
            id: n.id.0,
            kind: n.kind.name().to_owned(),
            activations: c.activations.load(Ordering::Relaxed),
            fires: c.fires.load(Ordering::Relaxed),
            parked: c.parked.load(Ordering::Relaxed).max(0) as u64,
            instances: c.instances.load(Ordering::Relaxed),
            recirculations: c.recirculations.load(Ordering::Relaxed),
            busy_ns: c.busy_ns.load(Ordering::Relaxed),
        });
    });
    let workers = engine
        .worker_busy
        .iter()
        .enumerate()
        .map(|(worker, busy)| {
            let busy_ns = busy.load(Ordering::Relaxed).min(wall_ns);
            WorkerMetrics { worker, busy_ns, idle_ns: wall_ns - busy_ns }
        })
        .collect();
    let mut timeline = std::mem::take(&mut *engine.timeline.lock());
    timeline.sort_by_key(|s| (s.start_ns, s.end_ns));
    RunMetrics {
        nodes,
        workers,
        injected: engine.injected.load(Ordering::Relaxed),
        produced: engine.produced.load(Ordering::Relaxed),
        absorbed: engine.absorbed.load(Ordering::Relaxed),
        exited: engine.exited.load(Ordering::Relaxed),
        parked: engine.parked.load(Ordering::Relaxed).max(0) as u64,
        peak_live: engine.peak_live.load(Ordering::Relaxed).max(0) as u64,
        wall_ns,
        backpressure_waits: engine.backpressure_waits.load(Ordering::Relaxed),
        capacity_overflows: engine.capacity_overflows.load(Ordering::Relaxed),
        counters: engine.user_counters.lock().clone(),
        timeline,
    }
}
