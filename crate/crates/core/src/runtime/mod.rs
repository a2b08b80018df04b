//! Executes a compiled [`NetworkGraph`] on a pool of workers.
//!
//! Boxes and synchrocells own an input queue and are activated by tasks on
//! a work-stealing pool; one node instance processes its queue in FIFO
//! order, one record at a time. Routers, split dispatchers, star gates and
//! feedback routers hold no records: they route on the producer's thread.
//! Star operand instances and split branches are instantiated from their
//! templates the first time a record needs them. The run ends at
//! quiescence, when the pool has no pending task.

mod metrics;
mod sync;

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock, Weak};
use std::time::Instant;

use parking_lot::Mutex;
use rayon::Scope;

pub use metrics::{ActivationSpan, NodeMetrics, RunMetrics, WorkerMetrics};
pub use sync::{step_sync, SyncOutcome, SyncState};
use sync::SyncChain;

use crate::combinators::{BoxDef, NetworkGraph, NodeId, NodeKind};
use crate::error::{ParkedRecord, RunError};
use crate::record::{best_match, matches, Name, Payload, Record, TypePattern};

pub const DEFAULT_STREAM_CAPACITY: usize = 4096;

/// Records a queued node processes per task before yielding the worker.
const BATCH: usize = 32;
/// Consecutive empty yields before a blocked producer overfills a stream.
const MAX_IDLE_SPINS: u32 = 2000;
/// Nested drains on one worker before a blocked producer stops helping.
/// Helping runs other drains, which may block in turn.
const MAX_HELP_DEPTH: u32 = 32;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub workers: usize,
    /// Bound on each box or synchrocell input stream. Producers block
    /// (helping the pool) while the target stream is full. Feedback edges
    /// never block.
    pub stream_capacity: usize,
    /// Accept quiescence with records still parked in synchrocells instead
    /// of reporting a deadlock.
    pub allow_parked: bool,
    /// Record one [`ActivationSpan`] per box activation.
    pub record_timeline: bool,
    /// Tag whose value is stored in each timeline span.
    pub timeline_tag: Option<String>,
    pub pin_workers: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            stream_capacity: DEFAULT_STREAM_CAPACITY,
            allow_parked: false,
            record_timeline: false,
            timeline_tag: None,
            pin_workers: false,
        }
    }
}

impl RunConfig {
    pub fn with_workers(workers: usize) -> Self {
        Self { workers, ..Self::default() }
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<Record>,
    pub metrics: RunMetrics,
}

/// Handed to every kernel invocation.
pub struct BoxContext<'a> {
    node: &'a str,
    instance: u64,
    counters: Option<&'a Mutex<BTreeMap<String, u64>>>,
}

impl<'a> BoxContext<'a> {
    /// Context for calling a kernel outside of a run.
    pub fn detached(node: &'a str) -> Self {
        Self { node, instance: 0, counters: None }
    }

    pub fn node(&self) -> &str {
        self.node
    }

    /// Unique id of the node instance (distinct per split branch and per
    /// star instance).
    pub fn instance(&self) -> u64 {
        self.instance
    }

    /// Adds `delta` to the named run-wide counter in [`RunMetrics`].
    pub fn count(&self, name: &str, delta: u64) {
        if let Some(counters) = self.counters {
            *counters.lock().entry(name.to_owned()).or_default() += delta;
        }
    }
}

/// Runs one box activation: checks the input type, invokes the kernel,
/// re-attaches pass-through names and checks every output against the
/// declared output types.
pub fn activate_box(def: &BoxDef, r: Record, ctx: &BoxContext<'_>) -> Result<Vec<Record>, RunError> {
    if !matches(&r, &def.signature.input) {
        return Err(RunError::Contract {
            node: def.name.clone(),
            message: format!("input {r:?} does not match {}", def.signature.input),
        });
    }
    let excess = def.pass_through.then(|| excess_names(&r, &def.signature.input));
    let mut outputs = (def.kernel)(r, ctx).map_err(|e| RunError::BoxFailed {
        node: def.name.clone(),
        message: e.0,
    })?;
    for out in &mut outputs {
        if let Some((fields, tags)) = &excess {
            for (name, value) in fields {
                if !out.has_field(name) && !out.has_tag(name) {
                    let _ = out.insert_payload(name.clone(), value.clone());
                }
            }
            for (name, value) in tags {
                if !out.has_field(name) && !out.has_tag(name) {
                    let _ = out.insert_tag(name.clone(), *value);
                }
            }
        }
        if !def.signature.admits_output(out) {
            return Err(RunError::Contract {
                node: def.name.clone(),
                message: format!("output {out:?} matches none of the declared output types"),
            });
        }
    }
    Ok(outputs)
}

type Excess = (Vec<(Name, Payload)>, Vec<(Name, i64)>);

fn excess_names(r: &Record, input: &TypePattern) -> Excess {
    let fields = r
        .fields()
        .filter(|(n, _)| !input.requires_field(n))
        .map(|(n, p)| (Name::Owned(n.to_owned()), p.clone()))
        .collect();
    let tags = r
        .tags()
        .filter(|(n, _)| !input.requires_tag(n))
        .map(|(n, v)| (Name::Owned(n.to_owned()), v))
        .collect();
    (fields, tags)
}

/// Executes `graph` on `inputs` and returns everything emitted on the exit
/// stream once the network is quiescent. Output order is unspecified.
pub fn run(graph: &NetworkGraph, inputs: Vec<Record>, config: &RunConfig) -> Result<RunOutput, RunError> {
    if config.workers == 0 {
        return Err(RunError::NoWorkers);
    }
    let pool = crate::pool::build(config.workers, config.pin_workers, "snet").map_err(RunError::Pool)?;
    let engine = Engine::new(graph, config);
    let started = Instant::now();
    let entry = engine.instantiate(graph, Target::Exit);
    pool.scope(|s| {
        for r in inputs {
            engine.injected.fetch_add(1, Ordering::Relaxed);
            engine.add_live(1);
            engine.deliver(&entry, r, s, true);
        }
    });
    let wall = started.elapsed();
    engine.finish(graph, wall.as_nanos() as u64)
}

#[derive(Clone)]
enum Target<'c> {
    Node(Weak<NodeInstance<'c>>),
    Exit,
}

/// Instances borrow their definitions from the compiled graph, so creating
/// a split branch or star instance only allocates the per-instance state.
struct NodeInstance<'c> {
    id: NodeId,
    serial: u64,
    kind: InstanceKind<'c>,
    outputs: OnceLock<Vec<Target<'c>>>,
}

impl<'c> NodeInstance<'c> {
    fn output(&self, i: usize) -> &Target<'c> {
        &self.outputs.get().expect("instance wired")[i]
    }
}

enum InstanceKind<'c> {
    Queued(QueuedNode<'c>),
    Router(&'c [Vec<TypePattern>]),
    StarGate {
        exit: &'c TypePattern,
        max_instances: u64,
        body: &'c NetworkGraph,
        depth: u64,
        next: Mutex<Option<Target<'c>>>,
    },
    Split {
        index_tag: &'c str,
        body: &'c NetworkGraph,
        branches: Mutex<HashMap<i64, Target<'c>>>,
    },
    Feedback {
        back: &'c TypePattern,
        max_recirculations: u64,
    },
}

struct QueuedNode<'c> {
    queue: Mutex<QueueState>,
    len: AtomicUsize,
    work: Work<'c>,
}

#[derive(Default)]
struct QueueState {
    records: VecDeque<Record>,
    scheduled: bool,
}

enum Work<'c> {
    Box(&'c BoxDef),
    Sync(Mutex<SyncState>),
    SyncStar(Mutex<SyncChain>),
}

#[derive(Default)]
struct NodeCounters {
    activations: AtomicU64,
    fires: AtomicU64,
    parked: AtomicI64,
    instances: AtomicU64,
    recirculations: AtomicU64,
    busy_ns: AtomicU64,
}

thread_local! {
    static DRAIN_DEPTH: Cell<u32> = const { Cell::new(0) };
}

struct Engine<'c> {
    config: &'c RunConfig,
    labels: Vec<(String, &'static str)>,
    counters: Vec<NodeCounters>,
    registry: Mutex<Vec<Arc<NodeInstance<'c>>>>,
    next_serial: AtomicU64,
    exit: Mutex<Vec<Record>>,
    failed: AtomicBool,
    error: Mutex<Option<RunError>>,
    injected: AtomicU64,
    produced: AtomicU64,
    absorbed: AtomicU64,
    exited: AtomicU64,
    parked: AtomicI64,
    live: AtomicI64,
    peak_live: AtomicI64,
    backpressure_waits: AtomicU64,
    capacity_overflows: AtomicU64,
    worker_busy: Vec<AtomicU64>,
    user_counters: Mutex<BTreeMap<String, u64>>,
    timeline: Mutex<Vec<ActivationSpan>>,
    epoch: Instant,
}

impl<'c> Engine<'c> {
    fn new(graph: &'c NetworkGraph, config: &'c RunConfig) -> Self {
        let labels = graph.node_labels();
        let counters = (0..labels.len()).map(|_| NodeCounters::default()).collect();
        Self {
            config,
            labels,
            counters,
            registry: Mutex::new(Vec::new()),
            next_serial: AtomicU64::new(0),
            exit: Mutex::new(Vec::new()),
            failed: AtomicBool::new(false),
            error: Mutex::new(None),
            injected: AtomicU64::new(0),
            produced: AtomicU64::new(0),
            absorbed: AtomicU64::new(0),
            exited: AtomicU64::new(0),
            parked: AtomicI64::new(0),
            live: AtomicI64::new(0),
            peak_live: AtomicI64::new(0),
            backpressure_waits: AtomicU64::new(0),
            capacity_overflows: AtomicU64::new(0),
            worker_busy: (0..config.workers).map(|_| AtomicU64::new(0)).collect(),
            user_counters: Mutex::new(BTreeMap::new()),
            timeline: Mutex::new(Vec::new()),
            epoch: Instant::now(),
        }
    }

    fn add_live(&self, delta: i64) {
        let now = self.live.fetch_add(delta, Ordering::Relaxed) + delta;
        if delta > 0 {
            self.peak_live.fetch_max(now, Ordering::Relaxed);
        }
    }

    fn fail(&self, err: RunError) {
        let mut slot = self.error.lock();
        if slot.is_none() {
            *slot = Some(err);
        }
        self.failed.store(true, Ordering::Release);
    }

    fn label(&self, id: NodeId) -> &str {
        &self.labels[id.0].0
    }

    /// Creates node instances for `graph` whose exit leads to `exit` and
    /// returns the entry target.
    fn instantiate(&self, graph: &'c NetworkGraph, exit: Target<'c>) -> Target<'c> {
        let mut stream_targets: Vec<Option<Target<'c>>> = vec![None; graph.streams];
        stream_targets[graph.exit.0] = Some(exit);
        let mut created = Vec::with_capacity(graph.nodes.len());
        for node in &graph.nodes {
            let kind = match &node.kind {
                NodeKind::Box(def) => InstanceKind::Queued(QueuedNode::new(Work::Box(def))),
                NodeKind::Sync { slots, repeating } => InstanceKind::Queued(QueuedNode::new(Work::Sync(
                    Mutex::new(SyncState::new(slots.clone(), *repeating)),
                ))),
                NodeKind::SyncStar { slots, exit, max_instances } => InstanceKind::Queued(QueuedNode::new(
                    Work::SyncStar(Mutex::new(SyncChain::new(slots.clone(), exit.clone(), *max_instances))),
                )),
                NodeKind::Router { branches } => InstanceKind::Router(branches),
                NodeKind::Star { exit, max_instances, body } => InstanceKind::StarGate {
                    exit,
                    max_instances: *max_instances,
                    body,
                    depth: 1,
                    next: Mutex::new(None),
                },
                NodeKind::Split { index_tag, body } => InstanceKind::Split {
                    index_tag,
                    body,
                    branches: Mutex::new(HashMap::new()),
                },
                NodeKind::Feedback { back, max_recirculations } => InstanceKind::Feedback {
                    back,
                    max_recirculations: *max_recirculations,
                },
            };
            let inst = Arc::new(NodeInstance {
                id: node.id,
                serial: self.next_serial.fetch_add(1, Ordering::Relaxed),
                kind,
                outputs: OnceLock::new(),
            });
            stream_targets[node.input.0] = Some(Target::Node(Arc::downgrade(&inst)));
            created.push(inst);
        }
        for (node, inst) in graph.nodes.iter().zip(&created) {
            let outs = node
                .outputs
                .iter()
                .map(|s| stream_targets[s.0].clone().expect("every stream has a consumer"))
                .collect();
            let _ = inst.outputs.set(outs);
        }
        let entry = stream_targets[graph.entry.0].clone().expect("entry stream has a consumer");
        self.registry.lock().extend(created);
        entry
    }

    fn deliver<'s>(&'s self, target: &Target<'c>, r: Record, s: &Scope<'s>, blocking: bool) {
        if self.failed.load(Ordering::Relaxed) {
            return;
        }
        match target {
            Target::Exit => {
                self.exited.fetch_add(1, Ordering::Relaxed);
                self.add_live(-1);
                self.exit.lock().push(r);
            }
            Target::Node(weak) => {
                let node = weak.upgrade().expect("node instances live until the run ends");
                self.accept(&node, r, s, blocking);
            }
        }
    }

    fn accept<'s>(&'s self, node: &Arc<NodeInstance<'c>>, r: Record, s: &Scope<'s>, blocking: bool) {
        match &node.kind {
            InstanceKind::Queued(q) => {
                if blocking && q.len.load(Ordering::Relaxed) >= self.config.stream_capacity {
                    self.wait_for_capacity(q);
                }
                let spawn = {
                    let mut st = q.queue.lock();
                    st.records.push_back(r);
                    q.len.fetch_add(1, Ordering::Relaxed);
                    !std::mem::replace(&mut st.scheduled, true)
                };
                if spawn {
                    let node = node.clone();
                    s.spawn(move |s| self.drain(node, s));
                }
            }
            InstanceKind::Router(branches) => {
                let variants = || branches.iter().enumerate().flat_map(|(i, v)| v.iter().map(move |p| (i, p)));
                match best_match(&r, variants().map(|(_, p)| p)) {
                    Some(k) => {
                        let branch = variants().nth(k).expect("best_match index is in range").0;
                        self.deliver(node.output(branch), r, s, blocking)
                    }
                    None => self.fail(RunError::Routing {
                        node: self.label(node.id).to_owned(),
                        record: format!("{r:?}"),
                    }),
                }
            }
            InstanceKind::Feedback { back, max_recirculations } => {
                if matches(&r, back) {
                    let n = self.counters[node.id.0].recirculations.fetch_add(1, Ordering::Relaxed) + 1;
                    if n > *max_recirculations {
                        self.fail(RunError::Divergence {
                            node: self.label(node.id).to_owned(),
                            limit: *max_recirculations,
                            what: "recirculations",
                        });
                        return;
                    }
                    self.deliver(node.output(0), r, s, false);
                } else {
                    self.deliver(node.output(1), r, s, blocking);
                }
            }
            InstanceKind::Split { index_tag, body, branches } => {
                let Some(value) = r.tag(index_tag) else {
                    self.fail(RunError::MissingIndexTag {
                        node: self.label(node.id).to_owned(),
                        tag: index_tag.to_string(),
                        record: format!("{r:?}"),
                    });
                    return;
                };
                let target = {
                    let mut map = branches.lock();
                    map.entry(value)
                        .or_insert_with(|| {
                            self.counters[node.id.0].instances.fetch_add(1, Ordering::Relaxed);
                            self.instantiate(body, node.output(0).clone())
                        })
                        .clone()
                };
                self.deliver(&target, r, s, blocking);
            }
            InstanceKind::StarGate { exit, max_instances, body, depth, next } => {
                if matches(&r, exit) {
                    self.deliver(node.output(0), r, s, blocking);
                    return;
                }
                let target = {
                    let mut next = next.lock();
                    if next.is_none() {
                        if *depth > *max_instances {
                            drop(next);
                            self.fail(RunError::Divergence {
                                node: self.label(node.id).to_owned(),
                                limit: *max_instances,
                                what: "star instances",
                            });
                            return;
                        }
                        self.counters[node.id.0].instances.fetch_add(1, Ordering::Relaxed);
                        let gate = self.star_gate(node, exit, *max_instances, body, depth + 1);
                        *next = Some(self.instantiate(body, gate));
                    }
                    next.clone().expect("just created")
                };
                self.deliver(&target, r, s, blocking);
            }
        }
    }

    fn star_gate(
        &self,
        prev: &NodeInstance<'c>,
        exit: &'c TypePattern,
        max_instances: u64,
        body: &'c NetworkGraph,
        depth: u64,
    ) -> Target<'c> {
        let gate = Arc::new(NodeInstance {
            id: prev.id,
            serial: self.next_serial.fetch_add(1, Ordering::Relaxed),
            kind: InstanceKind::StarGate {
                exit,
                max_instances,
                body,
                depth,
                next: Mutex::new(None),
            },
            outputs: OnceLock::new(),
        });
        let _ = gate.outputs.set(vec![prev.output(0).clone()]);
        let target = Target::Node(Arc::downgrade(&gate));
        self.registry.lock().push(gate);
        target
    }

    /// Cooperative blocking: run other pool work until the stream drains.
    /// If nothing else is runnable for a while the consumer is stuck behind
    /// this producer, and the record is admitted over capacity. The same
    /// happens when the worker is already nested too deep in helping.
    fn wait_for_capacity(&self, q: &QueuedNode<'c>) {
        self.backpressure_waits.fetch_add(1, Ordering::Relaxed);
        if DRAIN_DEPTH.with(|d| d.get()) >= MAX_HELP_DEPTH {
            self.capacity_overflows.fetch_add(1, Ordering::Relaxed);
            return;
        }
        let mut idle = 0;
        while q.len.load(Ordering::Relaxed) >= self.config.stream_capacity && !self.failed.load(Ordering::Relaxed) {
            match rayon::yield_now() {
                Some(rayon::Yield::Executed) => idle = 0,
                _ => {
                    idle += 1;
                    if idle > MAX_IDLE_SPINS {
                        self.capacity_overflows.fetch_add(1, Ordering::Relaxed);
                        return;
                    }
                    std::thread::yield_now();
                }
            }
        }
    }

    fn drain<'s>(&'s self, node: Arc<NodeInstance<'c>>, s: &Scope<'s>) {
        let InstanceKind::Queued(q) = &node.kind else {
            unreachable!("only queued nodes are drained")
        };
        let outermost = DRAIN_DEPTH.with(|d| {
            d.set(d.get() + 1);
            d.get() == 1
        });
        let started = Instant::now();
        let mut processed = 0;
        loop {
            let next = {
                let mut st = q.queue.lock();
                if processed == BATCH && !st.records.is_empty() {
                    drop(st);
                    let node = node.clone();
                    s.spawn(move |s| self.drain(node, s));
                    break;
                }
                match st.records.pop_front() {
                    Some(r) => {
                        q.len.fetch_sub(1, Ordering::Relaxed);
                        r
                    }
                    None => {
                        st.scheduled = false;
                        // most instances are split branches that see a
                        // handful of records; don't keep their buffers
                        st.records = VecDeque::new();
                        break;
                    }
                }
            };
            processed += 1;
            if !self.failed.load(Ordering::Relaxed) {
                self.process(&node, &q.work, next, s);
            }
        }
        DRAIN_DEPTH.with(|d| d.set(d.get() - 1));
        if outermost {
            let worker = rayon::current_thread_index().unwrap_or(0);
            if let Some(busy) = self.worker_busy.get(worker) {
                busy.fetch_add(started.elapsed().as_nanos() as u64, Ordering::Relaxed);
            }
        }
    }

    fn process<'s>(&'s self, node: &Arc<NodeInstance<'c>>, work: &Work<'c>, r: Record, s: &Scope<'s>) {
        let counters = &self.counters[node.id.0];
        match work {
            Work::Box(def) => {
                counters.activations.fetch_add(1, Ordering::Relaxed);
                let tag_value = match (&self.config.record_timeline, &self.config.timeline_tag) {
                    (true, Some(tag)) => r.tag(tag),
                    _ => None,
                };
                let ctx = BoxContext {
                    node: &def.name,
                    instance: node.serial,
                    counters: Some(&self.user_counters),
                };
                let start = Instant::now();
                let result = activate_box(def, r, &ctx);
                let end = Instant::now();
                counters.busy_ns.fetch_add((end - start).as_nanos() as u64, Ordering::Relaxed);
                if self.config.record_timeline {
                    self.timeline.lock().push(ActivationSpan {
                        node: def.name.clone(),
                        tag: tag_value,
                        start_ns: (start - self.epoch).as_nanos() as u64,
                        end_ns: (end - self.epoch).as_nanos() as u64,
                        worker: rayon::current_thread_index().unwrap_or(0),
                    });
                }
                match result {
                    Ok(outputs) => {
                        self.absorbed.fetch_add(1, Ordering::Relaxed);
                        self.produced.fetch_add(outputs.len() as u64, Ordering::Relaxed);
                        self.add_live(outputs.len() as i64 - 1);
                        let target = node.output(0);
                        for out in outputs {
                            self.deliver(target, out, s, true);
                        }
                    }
                    Err(e) => self.fail(e),
                }
            }
            Work::Sync(state) => {
                counters.activations.fetch_add(1, Ordering::Relaxed);
                let (outcome, slots) = {
                    let mut state = state.lock();
                    (state.step(r), state.slot_count())
                };
                match outcome {
                    SyncOutcome::Parked => self.note_parked(counters),
                    SyncOutcome::Forwarded(r) => self.deliver(node.output(0), r, s, true),
                    SyncOutcome::Fired(m) => {
                        self.note_fires(counters, 1, slots);
                        self.deliver(node.output(0), m, s, true);
                    }
                }
            }
            Work::SyncStar(chain) => {
                counters.activations.fetch_add(1, Ordering::Relaxed);
                let (step, slots) = {
                    let mut chain = chain.lock();
                    (chain.step(r), chain.slot_count())
                };
                match step {
                    Ok(step) => {
                        counters.instances.fetch_add(step.created, Ordering::Relaxed);
                        self.note_fires(counters, step.fires, slots);
                        if step.parked {
                            self.note_parked(counters);
                        }
                        if let Some(out) = step.emitted {
                            self.deliver(node.output(0), out, s, true);
                        }
                    }
                    Err(limit) => self.fail(RunError::Divergence {
                        node: self.label(node.id).to_owned(),
                        limit,
                        what: "star instances",
                    }),
                }
            }
        }
    }

    fn note_parked(&self, counters: &NodeCounters) {
        counters.parked.fetch_add(1, Ordering::Relaxed);
        self.parked.fetch_add(1, Ordering::Relaxed);
    }

    /// Each firing of an n-slot cell absorbs n records (n-1 of them were
    /// parked) and produces one.
    fn note_fires(&self, counters: &NodeCounters, fires: u64, slots: usize) {
        if fires == 0 {
            return;
        }
        let n = slots as u64;
        counters.fires.fetch_add(fires, Ordering::Relaxed);
        counters.parked.fetch_sub((fires * (n - 1)) as i64, Ordering::Relaxed);
        self.parked.fetch_sub((fires * (n - 1)) as i64, Ordering::Relaxed);
        self.absorbed.fetch_add(fires * n, Ordering::Relaxed);
        self.produced.fetch_add(fires, Ordering::Relaxed);
        self.add_live(-((fires * (n - 1)) as i64));
    }

    fn finish(self, graph: &NetworkGraph, wall_ns: u64) -> Result<RunOutput, RunError> {
        if let Some(err) = self.error.lock().take() {
            return Err(err);
        }
        let registry = std::mem::take(&mut *self.registry.lock());
        let mut parked = Vec::new();
        for inst in &registry {
            if let InstanceKind::Queued(q) = &inst.kind {
                debug_assert!(q.queue.lock().records.is_empty(), "queues drain at quiescence");
                let label = self.label(inst.id);
                match &q.work {
                    Work::Sync(state) => parked.extend(state.lock().parked().map(|r| ParkedRecord {
                        node: label.to_owned(),
                        record: format!("{r:?}"),
                    })),
                    Work::SyncStar(chain) => parked.extend(chain.lock().parked().map(|r| ParkedRecord {
                        node: label.to_owned(),
                        record: format!("{r:?}"),
                    })),
                    Work::Box(_) => {}
                }
            }
        }
        drop(registry);
        if !parked.is_empty() && !self.config.allow_parked {
            return Err(RunError::Deadlock { parked });
        }
        let metrics = metrics::collect(&self, graph, wall_ns);
        let records = self.exit.into_inner();
        Ok(RunOutput { records, metrics })
    }
}

impl<'c> QueuedNode<'c> {
    fn new(work: Work<'c>) -> Self {
        Self {
            queue: Mutex::new(QueueState::default()),
            len: AtomicUsize::new(0),
            work,
        }
    }
}
