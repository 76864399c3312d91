use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Result, SacError};
use crate::metrics::{Counters, Phase, TraceMetrics, TraceSnapshot, VisitEvent, VisitKind};
use crate::modifiable::{AnyMod, BlockReads, Deps, IntoDeps, ModCore};
use crate::trace::{self, Node, NodeIds, NodeKind, ReadSlot, Side};
use crate::value::{Data, DynValue};
use crate::Mod;

static EPOCHS: AtomicU64 = AtomicU64::new(1);

const STACK_SIZE: usize = 64 << 20;

/// Engine configuration.
#[derive(Clone, Default)]
pub struct Config {
    /// Worker threads; 0 runs on the ambient rayon pool.
    pub threads: usize,
    /// Record the visit log and re-executed reader ids during propagation.
    pub instrument: bool,
    /// Shared pool to run on instead of building one from `threads`.
    pub pool: Option<Arc<ThreadPool>>,
}

impl Config {
    pub fn threads(threads: usize) -> Self {
        Config {
            threads,
            ..Config::default()
        }
    }

    pub fn instrumented(mut self) -> Self {
        self.instrument = true;
        self
    }

    pub fn build_pool(threads: usize) -> Arc<ThreadPool> {
        Arc::new(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .stack_size(STACK_SIZE)
                .build()
                .expect("thread pool"),
        )
    }
}

impl std::fmt::Debug for Config {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Config")
            .field("threads", &self.threads)
            .field("instrument", &self.instrument)
            .finish()
    }
}

/// Type-erased reader closure stored in a read node.
pub(crate) trait Reader: Send + Sync {
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<()>;
    fn for_each_core(&self, f: &mut dyn FnMut(&ModCore));
    fn mods(&self) -> Vec<Arc<dyn AnyMod>>;
    fn recorded(&self) -> Option<Arc<dyn DynValue>>;
    fn arity_ok(&self) -> bool;
    fn is_current(&self) -> bool;
    fn unregister(&self, node: &Arc<Node>);
}

struct ReadThunk<D: Deps, F> {
    deps: D,
    f: F,
    recorded: Mutex<Option<Arc<D::Values>>>,
}

impl<D, F> Reader for ReadThunk<D, F>
where
    D: Deps,
    F: Fn(&mut Ctx<'_>, &D::Values) -> Result<()> + Send + Sync,
{
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<()> {
        let vals = Arc::new(self.deps.values()?);
        *self.recorded.lock() = Some(vals.clone());
        (self.f)(cx, &vals)
    }

    fn for_each_core(&self, f: &mut dyn FnMut(&ModCore)) {
        self.deps.for_each_core(f)
    }

    fn mods(&self) -> Vec<Arc<dyn AnyMod>> {
        self.deps.erased()
    }

    fn recorded(&self) -> Option<Arc<dyn DynValue>> {
        self.recorded
            .lock()
            .clone()
            .map(|v| v as Arc<dyn DynValue>)
    }

    fn arity_ok(&self) -> bool {
        self.recorded.lock().is_some()
    }

    fn is_current(&self) -> bool {
        match (&*self.recorded.lock(), self.deps.values()) {
            (Some(r), Ok(v)) => **r == v,
            _ => false,
        }
    }

    fn unregister(&self, node: &Arc<Node>) {
        self.deps.for_each_core(&mut |c| c.readers().remove(node));
    }
}

type Touched = Vec<(Arc<dyn AnyMod>, Arc<dyn DynValue>)>;

struct BlockThunk<F> {
    f: F,
    touched: Mutex<Touched>,
}

/// Recorded values of a block reader, in first-read order.
#[derive(Debug, Clone)]
struct BlockValues(Vec<Arc<dyn DynValue>>);

impl PartialEq for BlockValues {
    fn eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| a.dyn_eq(&**b))
    }
}

impl<F> Reader for BlockThunk<F>
where
    F: Fn(&mut Ctx<'_>, &BlockReads) -> Result<()> + Send + Sync,
{
    fn execute(&self, cx: &mut Ctx<'_>) -> Result<()> {
        let node = cx.reader.clone().expect("block runs inside its read node");
        let blk = BlockReads::default();
        let res = (self.f)(cx, &blk);
        let fresh = blk.into_touched();
        let old = std::mem::replace(&mut *self.touched.lock(), fresh.clone());
        let old_ids: HashSet<u64> = old.iter().map(|(m, _)| m.core().id()).collect();
        let new_ids: HashSet<u64> = fresh.iter().map(|(m, _)| m.core().id()).collect();
        for (m, _) in &fresh {
            if !old_ids.contains(&m.core().id()) {
                m.core().readers().insert(&node);
            }
        }
        for (m, _) in &old {
            if !new_ids.contains(&m.core().id()) {
                m.core().readers().remove(&node);
            }
        }
        res
    }

    fn for_each_core(&self, f: &mut dyn FnMut(&ModCore)) {
        for m in self.mods() {
            f(m.core())
        }
    }

    fn mods(&self) -> Vec<Arc<dyn AnyMod>> {
        self.touched.lock().iter().map(|(m, _)| m.clone()).collect()
    }

    fn recorded(&self) -> Option<Arc<dyn DynValue>> {
        let vals = self.touched.lock().iter().map(|(_, v)| v.clone()).collect();
        Some(Arc::new(BlockValues(vals)))
    }

    fn arity_ok(&self) -> bool {
        true
    }

    fn is_current(&self) -> bool {
        self.touched
            .lock()
            .iter()
            .all(|(m, v)| m.current().is_some_and(|c| c.dyn_eq(&**v)))
    }

    fn unregister(&self, node: &Arc<Node>) {
        for m in self.mods() {
            m.core().readers().remove(node);
        }
    }
}

pub(crate) struct Shared {
    ids: NodeIds,
    epoch: AtomicU64,
    propagating: AtomicBool,
    pub(crate) counters: Counters,
    pile: Mutex<Vec<Arc<Node>>>,
    instrument: bool,
    log: Mutex<Vec<VisitEvent>>,
    clock: AtomicU64,
    strands: AtomicU64,
    reexecuted: Mutex<Vec<u64>>,
}

impl Shared {
    fn begin_epoch(&self) {
        self.epoch
            .store(EPOCHS.fetch_add(1, Ordering::Relaxed), Ordering::Release);
        self.counters.reset();
        self.log.lock().clear();
        self.reexecuted.lock().clear();
    }

    fn event(&self, node: u64, kind: VisitKind, strand: u64) {
        if self.instrument {
            let at = self.clock.fetch_add(1, Ordering::SeqCst);
            self.log.lock().push(VisitEvent {
                node,
                kind,
                strand,
                at,
            });
        }
    }

    fn strand(&self) -> u64 {
        self.strands.fetch_add(1, Ordering::Relaxed)
    }

    fn exec_reader(&self, node: &Arc<Node>) -> Result<()> {
        let slot = node.read_slot().expect("read node");
        slot.work.store(1, Ordering::Release);
        if self.propagating.load(Ordering::Acquire) {
            self.counters.add_reexec_work(1);
        }
        let mut cx = Ctx {
            shared: self,
            scope: node.clone(),
            left_used: false,
            reader: Some(node.clone()),
        };
        slot.reader.execute(&mut cx)
    }

    fn visit(&self, node: &Arc<Node>, strand: u64) -> Result<()> {
        self.counters.add_visited();
        self.event(node.id(), VisitKind::Enter, strand);
        let res = match node.kind() {
            NodeKind::R if node.is_affected() => self.reexecute(node),
            NodeKind::Fan => {
                let kids: Vec<Arc<Node>> = node
                    .children()
                    .into_iter()
                    .filter(|c| c.is_marked())
                    .collect();
                kids.par_iter().try_for_each(|c| self.visit(c, self.strand()))
            }
            NodeKind::P => {
                let l = node.left().filter(|c| c.is_marked());
                let r = node.right().filter(|c| c.is_marked());
                match (l, r) {
                    (Some(l), Some(r)) => {
                        let (a, b) = rayon::join(
                            || self.visit(&l, self.strand()),
                            || self.visit(&r, self.strand()),
                        );
                        a.and(b)
                    }
                    (Some(c), None) | (None, Some(c)) => self.visit(&c, strand),
                    (None, None) => Ok(()),
                }
            }
            NodeKind::S | NodeKind::R => {
                let mut res = Ok(());
                if let Some(l) = node.left().filter(|c| c.is_marked()) {
                    res = self.visit(&l, strand);
                }
                if res.is_ok() {
                    if let Some(r) = node.right().filter(|c| c.is_marked()) {
                        res = self.visit(&r, strand);
                    }
                }
                res
            }
        };
        node.set_marked(false);
        self.event(node.id(), VisitKind::Exit, strand);
        res
    }

    fn reexecute(&self, node: &Arc<Node>) -> Result<()> {
        let old = node.take_children();
        for c in &old {
            c.set_detached();
        }
        self.pile.lock().extend(old);
        self.counters.add_affected();
        self.counters.add_destroyed_work(node.work());
        if self.instrument {
            self.reexecuted.lock().push(node.id());
        }
        let res = self.exec_reader(node);
        node.clear_affected();
        res
    }
}

/// Destroys every node reachable from `roots`: read nodes leave their
/// reader sets, and sets left with dead entries are compacted. Returns
/// (nodes, read work units).
fn destroy(roots: Vec<Arc<Node>>) -> (u64, u64) {
    let mut all = Vec::new();
    let mut stack = roots;
    while let Some(n) = stack.pop() {
        stack.extend(n.children());
        all.push(n);
    }
    let work: u64 = all
        .par_iter()
        .map(|n| {
            n.set_destroyed();
            n.read_slot().map_or(0, |slot| {
                slot.reader.unregister(n);
                slot.work.load(Ordering::Acquire)
            })
        })
        .sum();
    let mut dirty: Vec<Arc<dyn AnyMod>> = all
        .par_iter()
        .filter_map(|n| n.read_slot())
        .flat_map_iter(|slot| slot.reader.mods())
        .filter(|m| m.core().readers().dead_entries() > 0)
        .collect();
    dirty.sort_by_key(|m| m.core().id());
    dirty.dedup_by_key(|m| m.core().id());
    dirty.par_iter().for_each(|m| m.core().readers().compact());
    (all.len() as u64, work)
}

/// Handle to a recorded run.
pub struct Computation {
    shared: Arc<Shared>,
    root: Arc<Node>,
    pool: Option<Arc<ThreadPool>>,
}

impl std::fmt::Debug for Computation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Computation")
            .field("root", &self.root.id())
            .finish()
    }
}

impl Computation {
    /// Runs `main` from scratch and records its trace.
    pub fn run<F>(config: Config, main: F) -> Result<Computation>
    where
        F: FnOnce(&mut Ctx<'_>) -> Result<()> + Send,
    {
        let pool = config.pool.clone().or_else(|| {
            (config.threads > 0).then(|| Config::build_pool(config.threads))
        });
        let ids = NodeIds::new();
        let root = Node::new_node(&ids, NodeKind::S, None)?;
        let comp = Computation {
            shared: Arc::new(Shared {
                ids,
                epoch: AtomicU64::new(0),
                propagating: AtomicBool::new(false),
                counters: Counters::default(),
                pile: Mutex::new(Vec::new()),
                instrument: config.instrument,
                log: Mutex::new(Vec::new()),
                clock: AtomicU64::new(0),
                strands: AtomicU64::new(1),
                reexecuted: Mutex::new(Vec::new()),
            }),
            root,
            pool,
        };
        comp.shared.begin_epoch();
        let start = Instant::now();
        comp.install(|| {
            let mut cx = Ctx {
                shared: &comp.shared,
                scope: comp.root.clone(),
                left_used: false,
                reader: None,
            };
            main(&mut cx)
        })?;
        comp.shared
            .counters
            .set_phase(Phase::Run, start.elapsed());
        Ok(comp)
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    pub fn root(&self) -> &Arc<Node> {
        &self.root
    }

    /// Re-executes every affected reader. A second call without new writes
    /// does nothing.
    pub fn propagate(&mut self) -> Result<()> {
        let shared = &self.shared;
        shared.begin_epoch();
        let start = Instant::now();
        shared.propagating.store(true, Ordering::Release);
        let res = if self.root.is_marked() {
            let strand = shared.strand();
            self.install(|| shared.visit(&self.root, strand))
        } else {
            Ok(())
        };
        shared.propagating.store(false, Ordering::Release);
        shared.counters.set_phase(Phase::Propagate, start.elapsed());
        res
    }

    /// Destroys the subtrees replaced by the last propagation.
    pub fn gc_collect(&mut self) {
        let pile = std::mem::take(&mut *self.shared.pile.lock());
        if pile.is_empty() {
            return;
        }
        let start = Instant::now();
        let (nodes, work) = self.install(|| destroy(pile));
        let c = &self.shared.counters;
        c.add_collected(nodes);
        c.add_destroyed_work(work);
        c.set_phase(Phase::Gc, start.elapsed());
    }

    /// Number of subtree roots awaiting collection.
    pub fn pile_len(&self) -> usize {
        self.shared.pile.lock().len()
    }

    /// Opens an input-mutation epoch.
    pub fn begin_update(&mut self) -> UpdateEpoch<'_> {
        UpdateEpoch {
            computation: self,
            writes_applied: 0,
            propagated: false,
        }
    }

    /// Counters of the last run or propagation (and the collection after
    /// it), plus the current tree shape.
    pub fn metrics(&self) -> TraceMetrics {
        let mut m = self.shared.counters.read();
        m.tree_height = trace::tree_height(&self.root) as u64;
        m.tree_nodes = trace::tree_nodes(&self.root) as u64;
        m
    }

    pub fn snapshot(&self) -> TraceSnapshot {
        TraceSnapshot::capture(&self.root)
    }

    /// Visit events of the last propagation; empty unless instrumented.
    pub fn visit_log(&self) -> Vec<VisitEvent> {
        let mut log = self.shared.log.lock().clone();
        log.sort_by_key(|e| e.at);
        log
    }

    /// Ids of the readers re-executed by the last propagation; empty unless
    /// instrumented.
    pub fn reexecuted(&self) -> Vec<u64> {
        self.shared.reexecuted.lock().clone()
    }
}

impl Drop for Computation {
    fn drop(&mut self) {
        let mut roots = std::mem::take(&mut *self.shared.pile.lock());
        roots.push(self.root.clone());
        self.install(|| destroy(roots));
    }
}

/// One batch of input writes followed by at most one propagation.
pub struct UpdateEpoch<'a> {
    pub computation: &'a mut Computation,
    pub writes_applied: usize,
    pub propagated: bool,
}

impl UpdateEpoch<'_> {
    pub fn write<T: Data>(&mut self, m: &Mod<T>, v: T) -> bool {
        assert!(!self.propagated, "epoch already propagated");
        self.writes_applied += 1;
        m.write(v)
    }

    pub fn propagate(mut self) -> Result<()> {
        self.propagated = true;
        self.computation.propagate()
    }
}

/// Per-strand execution context handed to user code.
pub struct Ctx<'a> {
    shared: &'a Shared,
    scope: Arc<Node>,
    left_used: bool,
    reader: Option<Arc<Node>>,
}

impl<'a> Ctx<'a> {
    fn child(&self, scope: Arc<Node>) -> Ctx<'a> {
        Ctx {
            shared: self.shared,
            scope,
            left_used: false,
            reader: self.reader.clone(),
        }
    }

    /// Node the next primitive hangs its left child on.
    fn slot_parent(&mut self) -> Result<Arc<Node>> {
        if self.left_used {
            let s = Node::attach(&self.scope, self.shared.ids.next(), NodeKind::S, Side::Right, None)?;
            self.scope = s;
        }
        self.left_used = true;
        Ok(self.scope.clone())
    }

    fn continue_after_fork(&mut self) -> Result<()> {
        self.scope = Node::attach(&self.scope, self.shared.ids.next(), NodeKind::S, Side::Right, None)?;
        self.left_used = false;
        Ok(())
    }

    /// Id of the current scope node.
    pub fn scope_id(&self) -> u64 {
        self.scope.id()
    }

    /// Allocates a modifiable owned by the current scope.
    pub fn alloc<T: Data>(&self) -> Mod<T> {
        Mod::with_owner(Some(self.scope.id()))
    }

    pub fn alloc_array<T: Data>(&self, n: usize) -> Vec<Mod<T>> {
        (0..n).map(|_| self.alloc()).collect()
    }

    /// Writes `v`; readers are marked if the value changed. Writing a
    /// different value twice in one run or propagation is an error.
    pub fn write<T: Data>(&self, m: &Mod<T>, v: T) -> Result<()> {
        m.store(v, Some(self.shared.epoch.load(Ordering::Acquire)))
            .map(|_| ())
    }

    /// Adds `n` work units to the enclosing reader.
    pub fn tick(&self, n: u64) {
        if let Some(r) = &self.reader {
            if let Some(slot) = r.read_slot() {
                slot.work.fetch_add(n, Ordering::AcqRel);
            }
            if self.shared.propagating.load(Ordering::Acquire) {
                self.shared.counters.add_reexec_work(n);
            }
        }
    }

    /// Reads `deps` and runs `f` on their values inside a new read node.
    /// `f` is re-run by propagation whenever any of the values change.
    pub fn read<I, F>(&mut self, deps: I, f: F) -> Result<()>
    where
        I: IntoDeps,
        F: Fn(&mut Ctx<'_>, &<I::Deps as Deps>::Values) -> Result<()> + Send + Sync + 'static,
    {
        let deps = deps.into_deps();
        deps.values()?;
        let thunk = ReadThunk {
            deps,
            f,
            recorded: Mutex::new(None),
        };
        let node = self.read_node(Box::new(thunk))?;
        node.read_slot()
            .unwrap()
            .reader
            .for_each_core(&mut |c| c.readers().insert(&node));
        self.shared.exec_reader(&node)
    }

    /// Reads a whole slice of modifiables with a single reader.
    pub fn read_array<T, F>(&mut self, mods: &[Mod<T>], f: F) -> Result<()>
    where
        T: Data,
        F: Fn(&mut Ctx<'_>, &[T]) -> Result<()> + Send + Sync + 'static,
    {
        self.read(mods.to_vec(), move |cx, vals: &Vec<T>| f(cx, vals))
    }

    /// Runs `f` inside a read node; every modifiable read through the
    /// accessor becomes a dependency.
    pub fn read_block<F>(&mut self, f: F) -> Result<()>
    where
        F: Fn(&mut Ctx<'_>, &BlockReads) -> Result<()> + Send + Sync + 'static,
    {
        let thunk = BlockThunk {
            f,
            touched: Mutex::new(Vec::new()),
        };
        let node = self.read_node(Box::new(thunk))?;
        self.shared.exec_reader(&node)
    }

    fn read_node(&mut self, reader: Box<dyn Reader>) -> Result<Arc<Node>> {
        let parent = self.slot_parent()?;
        let slot = ReadSlot {
            affected: AtomicBool::new(false),
            work: AtomicU64::new(0),
            reader,
        };
        Node::attach(&parent, self.shared.ids.next(), NodeKind::R, Side::Left, Some(slot))
    }

    /// Runs `a` and `b` in parallel, each in its own scope.
    pub fn par<A, B>(&mut self, a: A, b: B) -> Result<()>
    where
        A: FnOnce(&mut Ctx<'_>) -> Result<()> + Send,
        B: FnOnce(&mut Ctx<'_>) -> Result<()> + Send,
    {
        let parent = self.slot_parent()?;
        let ids = &self.shared.ids;
        let p = Node::attach(&parent, ids.next(), NodeKind::P, Side::Left, None)?;
        let l = Node::attach(&p, ids.next(), NodeKind::S, Side::Left, None)?;
        let r = Node::attach(&p, ids.next(), NodeKind::S, Side::Right, None)?;
        let (mut cl, mut cr) = (self.child(l), self.child(r));
        let (ra, rb) = rayon::join(move || a(&mut cl), move || b(&mut cr));
        ra?;
        rb?;
        self.continue_after_fork()
    }

    /// Runs `body(i)` for every `i` in `lo..hi` in parallel, each in its own
    /// scope under one fan-out node.
    pub fn parfor<F>(&mut self, lo: usize, hi: usize, body: F) -> Result<()>
    where
        F: Fn(&mut Ctx<'_>, usize) -> Result<()> + Send + Sync,
    {
        if lo > hi {
            return Err(SacError::Contract(format!("parfor range {lo}..{hi} is reversed")));
        }
        let parent = self.slot_parent()?;
        let fan = Node::attach(&parent, self.shared.ids.next(), NodeKind::Fan, Side::Left, None)?;
        let kids = fan.fan_out(&self.shared.ids, hi - lo);
        kids.par_iter().enumerate().try_for_each(|(i, s)| {
            let mut cx = self.child(s.clone());
            body(&mut cx, lo + i)
        })?;
        self.continue_after_fork()
    }
}
