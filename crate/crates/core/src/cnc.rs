//! A tuple-space engine in the style of Concurrent Collections: keyed
//! single-assignment item collections, tag collections whose puts
//! prescribe step instances, and step collections run on a worker pool.
//!
//! A prescribed step is enabled once its inputs are available. Without a
//! dependency function the engine runs it right away; a get on a missing
//! item aborts it, drops its buffered puts, and parks it on that item until
//! the item is put (one stall). With a dependency function the engine
//! waits for every declared input before running the step. The run ends
//! when no step is running or runnable; it is valid if every prescribed
//! step has executed.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use dashmap::mapref::entry::Entry;
use dashmap::{DashMap, DashSet};
use parking_lot::Mutex;
use rayon::Scope;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::cholesky::{assemble, decompose, potrf_tile, trsm_tile, update_tile, DenseMatrix, Tile, TiledMatrix};
use crate::error::{CholeskyError, CncError, FactorError, StepError};

/// Key of an item, tag or step instance: a short tuple of integers.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Tag(SmallVec<[i64; 3]>);

impl Tag {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(values: &[i64]) -> Self {
        Self(SmallVec::from_slice(values))
    }

    /// Component `i` as an index.
    pub fn at(&self, i: usize) -> usize {
        usize::try_from(self.0[i]).expect("tag components used as indices are non-negative")
    }
}

impl Deref for Tag {
    type Target = [i64];
    fn deref(&self) -> &[i64] {
        &self.0
    }
}

impl<const N: usize> From<[i64; N]> for Tag {
    fn from(values: [i64; N]) -> Self {
        Self::new(&values)
    }
}

impl<const N: usize> From<[usize; N]> for Tag {
    fn from(values: [usize; N]) -> Self {
        Self(values.iter().map(|&v| v as i64).collect())
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Debug for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A value storable in an item collection. Rewrites must be equal.
pub trait Item: Any + Send + Sync {
    fn same(&self, other: &dyn Item) -> bool;
    fn as_any(&self) -> &dyn Any;
    fn into_any(self: Arc<Self>) -> Arc<dyn Any + Send + Sync>;
}

impl<T: Any + Send + Sync + PartialEq> Item for T {
    fn same(&self, other: &dyn Item) -> bool {
        other.as_any().downcast_ref::<T>() == Some(self)
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
    fn into_any(self: Arc<Self>) -> Arc<dyn Any + Send + Sync> {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ItemId(usize);
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TagId(usize);
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StepId(usize);

pub type StepFn = Arc<dyn Fn(&Tag, &mut StepCtx<'_>) -> Result<(), StepError> + Send + Sync>;
/// Maps a step tag to the item keys the step will get.
pub type DependsFn = Arc<dyn Fn(&Tag) -> Vec<(ItemId, Tag)> + Send + Sync>;

struct StepDef {
    name: String,
    func: StepFn,
    depends: Option<DependsFn>,
}

struct TagDef {
    name: String,
    prescribes: Vec<StepId>,
}

#[derive(Clone)]
struct Instance {
    step: StepId,
    tag: Tag,
}

/// Countdown of the declared inputs a tuned step still lacks.
struct Countdown {
    inst: Instance,
    missing: AtomicUsize,
}

#[derive(Clone)]
enum Waiter {
    Retry(Instance),
    Ready(Arc<Countdown>),
}

enum Slot {
    Ready(Arc<dyn Item>),
    Waiting(Vec<Waiter>),
}

/// Collections, steps and the environment's puts. Consumed by [`CncGraph::run`].
#[derive(Default)]
pub struct CncGraph {
    item_names: Vec<String>,
    stores: Vec<DashMap<Tag, Slot>>,
    tags: Vec<TagDef>,
    tag_sets: Vec<DashSet<Tag>>,
    steps: Vec<StepDef>,
    initial: Vec<Instance>,
    item_puts: Vec<AtomicU64>,
    tag_puts: Vec<AtomicU64>,
}

#[derive(Clone, Copy, Debug)]
pub struct CncConfig {
    pub workers: usize,
    pub pin_workers: bool,
}

impl Default for CncConfig {
    fn default() -> Self {
        Self { workers: 1, pin_workers: false }
    }
}

impl CncConfig {
    pub fn with_workers(workers: usize) -> Self {
        Self { workers, ..Self::default() }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct CncMetrics {
    /// Completed instances per step collection.
    pub steps_executed: BTreeMap<String, u64>,
    pub steps_prescribed: BTreeMap<String, u64>,
    /// Aborted executions: gets of items not yet available.
    pub steps_stalled: u64,
    /// Re-executions of stalled instances.
    pub retries: u64,
    pub item_puts: BTreeMap<String, u64>,
    pub tag_puts: BTreeMap<String, u64>,
    pub workers: usize,
    pub wall_ns: u64,
}

impl CncMetrics {
    pub fn executed(&self, step: &str) -> u64 {
        self.steps_executed.get(step).copied().unwrap_or(0)
    }

    pub fn total_executed(&self) -> u64 {
        self.steps_executed.values().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

impl CncGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn item_collection(&mut self, name: impl Into<String>) -> ItemId {
        self.item_names.push(name.into());
        self.stores.push(DashMap::new());
        self.item_puts.push(AtomicU64::new(0));
        ItemId(self.stores.len() - 1)
    }

    pub fn tag_collection(&mut self, name: impl Into<String>) -> TagId {
        self.tags.push(TagDef { name: name.into(), prescribes: Vec::new() });
        self.tag_sets.push(DashSet::new());
        self.tag_puts.push(AtomicU64::new(0));
        TagId(self.tags.len() - 1)
    }

    /// A step collection prescribed by `tags`.
    pub fn step_collection<F>(&mut self, name: impl Into<String>, tags: TagId, func: F) -> StepId
    where
        F: Fn(&Tag, &mut StepCtx<'_>) -> Result<(), StepError> + Send + Sync + 'static,
    {
        self.steps.push(StepDef { name: name.into(), func: Arc::new(func), depends: None });
        let id = StepId(self.steps.len() - 1);
        self.tags[tags.0].prescribes.push(id);
        id
    }

    /// Attaches a dependency function: the step runs only once every item
    /// it names is available.
    pub fn set_depends<F>(&mut self, step: StepId, depends: F)
    where
        F: Fn(&Tag) -> Vec<(ItemId, Tag)> + Send + Sync + 'static,
    {
        self.steps[step.0].depends = Some(Arc::new(depends));
    }

    /// Environment put of an item, before the run.
    pub fn put_item<T: Item + 'static>(&mut self, item: ItemId, key: impl Into<Tag>, value: T) -> Result<(), CncError> {
        let value: Arc<dyn Item> = Arc::new(value);
        let key = key.into();
        self.item_puts[item.0].fetch_add(1, Ordering::Relaxed);
        match self.stores[item.0].entry(key) {
            Entry::Occupied(e) => match e.get() {
                Slot::Ready(old) if old.same(&*value) => Ok(()),
                _ => Err(CncError::SingleAssignment { collection: self.item_names[item.0].clone(), key: e.key().to_string() }),
            },
            Entry::Vacant(e) => {
                e.insert(Slot::Ready(value));
                Ok(())
            }
        }
    }

    /// Environment put of a tag, before the run. Duplicates are ignored.
    pub fn put_tag(&mut self, tags: TagId, key: impl Into<Tag>) {
        let key = key.into();
        self.tag_puts[tags.0].fetch_add(1, Ordering::Relaxed);
        if self.tag_sets[tags.0].insert(key.clone()) {
            for &step in &self.tags[tags.0].prescribes {
                self.initial.push(Instance { step, tag: key.clone() });
            }
        }
    }

    /// Prescribed instances so far (environment tag puts only).
    pub fn prescribed(&self) -> usize {
        self.initial.len()
    }

    /// Runs to quiescence and checks that every prescribed step executed.
    pub fn run(mut self, config: &CncConfig) -> Result<CncOutput, CncError> {
        if config.workers == 0 {
            return Err(CncError::NoWorkers);
        }
        let pool = crate::pool::build(config.workers, config.pin_workers, "cnc").map_err(CncError::Pool)?;
        let initial = std::mem::take(&mut self.initial);
        let engine = Engine {
            executed: (0..self.steps.len()).map(|_| AtomicU64::new(0)).collect(),
            prescribed: (0..self.steps.len()).map(|_| AtomicU64::new(0)).collect(),
            stalls: AtomicU64::new(0),
            retries: AtomicU64::new(0),
            failed: AtomicBool::new(false),
            error: Mutex::new(None),
            graph: self,
        };
        let started = Instant::now();
        pool.scope(|s| {
            for inst in initial {
                engine.prescribe(inst, s);
            }
        });
        let wall_ns = started.elapsed().as_nanos() as u64;
        engine.finish(config.workers, wall_ns)
    }
}

struct Engine {
    graph: CncGraph,
    executed: Vec<AtomicU64>,
    prescribed: Vec<AtomicU64>,
    stalls: AtomicU64,
    retries: AtomicU64,
    failed: AtomicBool,
    error: Mutex<Option<CncError>>,
}

/// Handle a step uses to read and write collections. Puts are buffered and
/// committed only if the step completes.
pub struct StepCtx<'a> {
    graph: &'a CncGraph,
    puts: Vec<(ItemId, Tag, Arc<dyn Item>)>,
    tag_puts: Vec<(TagId, Tag)>,
    missing: Option<(ItemId, Tag)>,
}

impl StepCtx<'_> {
    pub fn get<T: Any + Send + Sync>(&mut self, item: ItemId, key: impl Into<Tag>) -> Result<Arc<T>, StepError> {
        let key = key.into();
        let found = match self.graph.stores[item.0].get(&key).as_deref() {
            Some(Slot::Ready(v)) => Some(v.clone()),
            _ => None,
        };
        match found {
            Some(v) => v.into_any().downcast::<T>().map_err(|_| {
                StepError::Failed(format!("item {}{key} has an unexpected type", self.graph.item_names[item.0]))
            }),
            None => {
                let err = StepError::Unavailable { collection: self.graph.item_names[item.0].clone(), key: key.to_string() };
                self.missing = Some((item, key));
                Err(err)
            }
        }
    }

    pub fn put<T: Item + 'static>(&mut self, item: ItemId, key: impl Into<Tag>, value: T) {
        self.puts.push((item, key.into(), Arc::new(value)));
    }

    pub fn put_tag(&mut self, tags: TagId, key: impl Into<Tag>) {
        self.tag_puts.push((tags, key.into()));
    }
}

impl Engine {
    fn fail(&self, err: CncError) {
        let mut slot = self.error.lock();
        if slot.is_none() {
            *slot = Some(err);
        }
        self.failed.store(true, Ordering::Release);
    }

    fn spawn<'s>(&'s self, inst: Instance, s: &Scope<'s>) {
        s.spawn(move |s| self.execute(inst, s));
    }

    fn prescribe<'s>(&'s self, inst: Instance, s: &Scope<'s>) {
        self.prescribed[inst.step.0].fetch_add(1, Ordering::Relaxed);
        let Some(depends) = &self.graph.steps[inst.step.0].depends else {
            self.spawn(inst, s);
            return;
        };
        let keys = depends(&inst.tag);
        let countdown = Arc::new(Countdown { inst, missing: AtomicUsize::new(keys.len() + 1) });
        for (item, key) in keys {
            if !self.wait_on(item, key, Waiter::Ready(countdown.clone())) {
                self.count_down(&countdown, s);
            }
        }
        self.count_down(&countdown, s);
    }

    fn count_down<'s>(&'s self, c: &Countdown, s: &Scope<'s>) {
        if c.missing.fetch_sub(1, Ordering::AcqRel) == 1 {
            self.spawn(c.inst.clone(), s);
        }
    }

    /// Parks `waiter` on a missing item; false if the item is available.
    fn wait_on(&self, item: ItemId, key: Tag, waiter: Waiter) -> bool {
        match self.graph.stores[item.0].entry(key) {
            Entry::Occupied(mut e) => match e.get_mut() {
                Slot::Ready(_) => false,
                Slot::Waiting(ws) => {
                    ws.push(waiter);
                    true
                }
            },
            Entry::Vacant(e) => {
                e.insert(Slot::Waiting(vec![waiter]));
                true
            }
        }
    }

    fn wake<'s>(&'s self, waiter: Waiter, s: &Scope<'s>) {
        match waiter {
            Waiter::Retry(inst) => {
                self.retries.fetch_add(1, Ordering::Relaxed);
                self.spawn(inst, s);
            }
            Waiter::Ready(c) => self.count_down(&c, s),
        }
    }

    fn execute<'s>(&'s self, inst: Instance, s: &Scope<'s>) {
        if self.failed.load(Ordering::Relaxed) {
            return;
        }
        let step = &self.graph.steps[inst.step.0];
        let mut ctx = StepCtx { graph: &self.graph, puts: Vec::new(), tag_puts: Vec::new(), missing: None };
        let result = (step.func)(&inst.tag, &mut ctx);
        if let Some((item, key)) = ctx.missing.take() {
            // abort: buffered puts are dropped with ctx
            self.stalls.fetch_add(1, Ordering::Relaxed);
            if !self.wait_on(item, key, Waiter::Retry(inst.clone())) {
                self.wake(Waiter::Retry(inst), s);
            }
            return;
        }
        if let Err(e) = result {
            self.fail(CncError::StepFailed { step: step.name.clone(), tag: inst.tag.to_string(), message: e.to_string() });
            return;
        }
        self.executed[inst.step.0].fetch_add(1, Ordering::Relaxed);
        for (item, key, value) in ctx.puts {
            if let Err(e) = self.commit(item, key, value, s) {
                self.fail(e);
                return;
            }
        }
        for (tags, key) in ctx.tag_puts {
            self.graph.tag_puts[tags.0].fetch_add(1, Ordering::Relaxed);
            if self.graph.tag_sets[tags.0].insert(key.clone()) {
                for &step in &self.graph.tags[tags.0].prescribes {
                    self.prescribe(Instance { step, tag: key.clone() }, s);
                }
            }
        }
    }

    fn commit<'s>(&'s self, item: ItemId, key: Tag, value: Arc<dyn Item>, s: &Scope<'s>) -> Result<(), CncError> {
        self.graph.item_puts[item.0].fetch_add(1, Ordering::Relaxed);
        let waiters = match self.graph.stores[item.0].entry(key) {
            Entry::Occupied(mut e) => match e.get_mut() {
                Slot::Ready(old) => {
                    if old.same(&*value) {
                        return Ok(());
                    }
                    return Err(CncError::SingleAssignment {
                        collection: self.graph.item_names[item.0].clone(),
                        key: e.key().to_string(),
                    });
                }
                Slot::Waiting(ws) => {
                    let ws = std::mem::take(ws);
                    e.insert(Slot::Ready(value));
                    ws
                }
            },
            Entry::Vacant(e) => {
                e.insert(Slot::Ready(value));
                return Ok(());
            }
        };
        for w in waiters {
            self.wake(w, s);
        }
        Ok(())
    }

    fn finish(self, workers: usize, wall_ns: u64) -> Result<CncOutput, CncError> {
        if let Some(err) = self.error.lock().take() {
            return Err(err);
        }
        let g = &self.graph;
        let mut pending = Vec::new();
        for (c, store) in g.stores.iter().enumerate() {
            for entry in store.iter() {
                if let Slot::Waiting(ws) = entry.value() {
                    for w in ws {
                        let inst = match w {
                            Waiter::Retry(inst) => inst,
                            Waiter::Ready(cd) => &cd.inst,
                        };
                        pending.push(format!(
                            "{}{} awaiting {}{}",
                            g.steps[inst.step.0].name,
                            inst.tag,
                            g.item_names[c],
                            entry.key()
                        ));
                    }
                }
            }
        }
        if !pending.is_empty() {
            pending.sort();
            pending.dedup();
            return Err(CncError::InvalidTermination { pending });
        }
        let per_step = |counts: &[AtomicU64]| {
            g.steps
                .iter()
                .zip(counts)
                .map(|(s, c)| (s.name.clone(), c.load(Ordering::Relaxed)))
                .collect::<BTreeMap<_, _>>()
        };
        let metrics = CncMetrics {
            steps_executed: per_step(&self.executed),
            steps_prescribed: per_step(&self.prescribed),
            steps_stalled: self.stalls.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            item_puts: g.item_names.iter().cloned().zip(g.item_puts.iter().map(|c| c.load(Ordering::Relaxed))).collect(),
            tag_puts: g.tags.iter().map(|t| t.name.clone()).zip(g.tag_puts.iter().map(|c| c.load(Ordering::Relaxed))).collect(),
            workers,
            wall_ns,
        };
        debug_assert_eq!(metrics.steps_executed, metrics.steps_prescribed);
        Ok(CncOutput { graph: self.graph, metrics })
    }
}

/// Item stores after a valid run, for the environment's gets.
pub struct CncOutput {
    graph: CncGraph,
    pub metrics: CncMetrics,
}

impl CncOutput {
    pub fn get<T: Any + Send + Sync>(&self, item: ItemId, key: impl Into<Tag>) -> Option<Arc<T>> {
        match self.graph.stores[item.0].get(&key.into()).as_deref() {
            Some(Slot::Ready(v)) => v.clone().into_any().downcast::<T>().ok(),
            _ => None,
        }
    }

    /// Keys of the available items, sorted.
    pub fn keys(&self, item: ItemId) -> Vec<Tag> {
        let mut keys: Vec<Tag> = self.graph.stores[item.0]
            .iter()
            .filter(|e| matches!(e.value(), Slot::Ready(_)))
            .map(|e| e.key().clone())
            .collect();
        keys.sort();
        keys
    }
}

/// Handles of the Cholesky graph's collections.
#[derive(Clone, Copy, Debug)]
pub struct CholeskyCnc {
    /// Tile `(i, j)` after `k` updates at key `(k, j, i)`; the factor tile
    /// `L_ij` at `(j + 1, j, i)`.
    pub lkji: ItemId,
    pub b: ItemId,
    pub p: ItemId,
    pub singleton: TagId,
    pub k_tags: TagId,
    pub kj_tags: TagId,
    pub kji_tags: TagId,
}

/// Step collection names of the Cholesky graph.
pub const K_COMPUTE: &str = "k_compute";
pub const KJ_COMPUTE: &str = "kj_compute";
pub const KJI_COMPUTE: &str = "kji_compute";
pub const POTRF: &str = "InitialFactorization";
pub const TRSM: &str = "TriangularSolve";
pub const UPDATE: &str = "SymmetricRankUpdate";

/// The tiled Cholesky graph: control steps generate the tag space, kernel
/// steps read and write versioned tiles in `Lkji`. With `tuned`, every step
/// declares its inputs through a dependency function.
pub fn build_cholesky_cnc(tuned: bool) -> (CncGraph, CholeskyCnc) {
    let mut g = CncGraph::new();
    let lkji = g.item_collection("Lkji");
    let b = g.item_collection("b");
    let p = g.item_collection("p");
    let singleton = g.tag_collection("singleton");
    let k_tags = g.tag_collection("k_tags");
    let kj_tags = g.tag_collection("kj_tags");
    let kji_tags = g.tag_collection("kji_tags");
    let h = CholeskyCnc { lkji, b, p, singleton, k_tags, kj_tags, kji_tags };

    let k_compute = g.step_collection(K_COMPUTE, singleton, move |_, ctx| {
        let p = *ctx.get::<usize>(h.p, Tag::empty())?;
        (0..p).for_each(|k| ctx.put_tag(h.k_tags, [k]));
        Ok(())
    });
    let kj_compute = g.step_collection(KJ_COMPUTE, k_tags, move |t, ctx| {
        let p = *ctx.get::<usize>(h.p, Tag::empty())?;
        let k = t.at(0);
        (k + 1..p).for_each(|j| ctx.put_tag(h.kj_tags, [k, j]));
        Ok(())
    });
    let kji_compute = g.step_collection(KJI_COMPUTE, kj_tags, move |t, ctx| {
        let p = *ctx.get::<usize>(h.p, Tag::empty())?;
        let (k, j) = (t.at(0), t.at(1));
        (j..p).for_each(|i| ctx.put_tag(h.kji_tags, [k, j, i]));
        Ok(())
    });
    let potrf = g.step_collection(POTRF, k_tags, move |t, ctx| {
        let k = t.at(0);
        let b = *ctx.get::<usize>(h.b, Tag::empty())?;
        let a = ctx.get::<Tile>(h.lkji, [k, k, k])?;
        check_block(&a, b)?;
        let l = potrf_tile(&a).map_err(|e| numeric(k, k, k, e))?;
        ctx.put(h.lkji, [k + 1, k, k], l);
        Ok(())
    });
    let trsm = g.step_collection(TRSM, kj_tags, move |t, ctx| {
        let (k, j) = (t.at(0), t.at(1));
        let b = *ctx.get::<usize>(h.b, Tag::empty())?;
        let l_kk = ctx.get::<Tile>(h.lkji, [k + 1, k, k])?;
        let a = ctx.get::<Tile>(h.lkji, [k, k, j])?;
        check_block(&a, b)?;
        let l = trsm_tile(&l_kk, &a).map_err(|e| numeric(k, j, k, e))?;
        ctx.put(h.lkji, [k + 1, k, j], l);
        Ok(())
    });
    let update = g.step_collection(UPDATE, kji_tags, move |t, ctx| {
        let (k, j, i) = (t.at(0), t.at(1), t.at(2));
        let b = *ctx.get::<usize>(h.b, Tag::empty())?;
        let a = ctx.get::<Tile>(h.lkji, [k, j, i])?;
        let l_ik = ctx.get::<Tile>(h.lkji, [k + 1, k, i])?;
        let l_jk = ctx.get::<Tile>(h.lkji, [k + 1, k, j])?;
        check_block(&a, b)?;
        ctx.put(h.lkji, [k + 1, j, i], update_tile(&a, &l_ik, &l_jk));
        Ok(())
    });

    if tuned {
        let scalar = move |_: &Tag| vec![(h.p, Tag::empty())];
        g.set_depends(k_compute, scalar);
        g.set_depends(kj_compute, scalar);
        g.set_depends(kji_compute, scalar);
        g.set_depends(potrf, move |t| {
            let k = t.at(0);
            vec![(h.b, Tag::empty()), (h.lkji, Tag::from([k, k, k]))]
        });
        g.set_depends(trsm, move |t| {
            let (k, j) = (t.at(0), t.at(1));
            vec![(h.b, Tag::empty()), (h.lkji, Tag::from([k + 1, k, k])), (h.lkji, Tag::from([k, k, j]))]
        });
        g.set_depends(update, move |t| {
            let (k, j, i) = (t.at(0), t.at(1), t.at(2));
            vec![
                (h.b, Tag::empty()),
                (h.lkji, Tag::from([k, j, i])),
                (h.lkji, Tag::from([k + 1, k, i])),
                (h.lkji, Tag::from([k + 1, k, j])),
            ]
        });
    }
    (g, h)
}

fn check_block(t: &Tile, b: usize) -> Result<(), StepError> {
    if t.b() == b {
        Ok(())
    } else {
        Err(StepError::Failed(format!("tile of size {} where b = {b}", t.b())))
    }
}

fn numeric(k: usize, i: usize, j: usize, source: crate::error::NumericError) -> StepError {
    StepError::Failed(CholeskyError::Numeric { k, i, j, source }.to_string())
}

/// Environment side: puts the tiles of `a`, `b`, `p` and the singleton tag.
pub fn seed_cholesky(g: &mut CncGraph, h: &CholeskyCnc, a: &TiledMatrix) -> Result<(), CncError> {
    let p = a.p();
    g.put_item(h.b, Tag::empty(), a.b())?;
    g.put_item(h.p, Tag::empty(), p)?;
    for j in 0..p {
        for i in j..p {
            g.put_item(h.lkji, [0, j, i], Tile::clone(a.tile(i, j)))?;
        }
    }
    g.put_tag(h.singleton, Tag::empty());
    Ok(())
}

/// Environment gets of the p(p+1)/2 factor tiles.
pub fn collect_factor(out: &CncOutput, h: &CholeskyCnc, p: usize, b: usize) -> Result<TiledMatrix, CncError> {
    let mut l = TiledMatrix::zeros(p, b);
    for j in 0..p {
        for i in j..p {
            let t = out.get::<Tile>(h.lkji, [j + 1, j, i]).ok_or_else(|| CncError::InvalidTermination {
                pending: vec![format!("factor tile Lkji{}", Tag::from([j + 1, j, i]))],
            })?;
            l.set_tile(i, j, t);
        }
    }
    Ok(l)
}

/// Factors `a` with tiles of size `b` on the Cholesky graph.
pub fn run_cnc(a: &DenseMatrix, b: usize, tuned: bool, config: &CncConfig) -> Result<(DenseMatrix, CncMetrics), FactorError> {
    let tiles = decompose(a, b)?;
    let (mut g, h) = build_cholesky_cnc(tuned);
    seed_cholesky(&mut g, &h, &tiles)?;
    let out = g.run(config)?;
    let l = collect_factor(&out, &h, tiles.p(), b)?;
    Ok((assemble(&l), out.metrics))
}
