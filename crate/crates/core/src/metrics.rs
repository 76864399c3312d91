//! Counters, trace snapshots and the trace-diff oracles.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use thiserror::Error;

use crate::trace::{Node, NodeKind};
use crate::value::DynValue;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Run,
    Propagate,
    Gc,
}

/// Counters for one run or propagation and the collection that follows it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceMetrics {
    /// Readers re-executed by propagation.
    pub affected_readers_reexecuted: u64,
    /// Work ticks spent inside re-executed readers, nested readers included.
    pub reexec_work_units: u64,
    /// Work ticks of the replaced readers and the subtrees they discarded.
    /// Collection adds the discarded part.
    pub destroyed_work_units: u64,
    pub nodes_visited: u64,
    pub tree_height: u64,
    pub tree_nodes: u64,
    pub pile_nodes_collected: u64,
    pub phase_durations: BTreeMap<Phase, Duration>,
}

#[derive(Default)]
pub(crate) struct Counters {
    affected: AtomicU64,
    reexec_work: AtomicU64,
    destroyed_work: AtomicU64,
    visited: AtomicU64,
    collected: AtomicU64,
    phases: Mutex<BTreeMap<Phase, Duration>>,
}

impl Counters {
    pub(crate) fn reset(&self) {
        for c in [
            &self.affected,
            &self.reexec_work,
            &self.destroyed_work,
            &self.visited,
            &self.collected,
        ] {
            c.store(0, Ordering::Relaxed);
        }
        self.phases.lock().clear();
    }

    pub(crate) fn add_affected(&self) {
        self.affected.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn add_reexec_work(&self, n: u64) {
        self.reexec_work.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_destroyed_work(&self, n: u64) {
        self.destroyed_work.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_visited(&self) {
        self.visited.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn add_collected(&self, n: u64) {
        self.collected.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn set_phase(&self, p: Phase, d: Duration) {
        self.phases.lock().insert(p, d);
    }

    pub(crate) fn read(&self) -> TraceMetrics {
        TraceMetrics {
            affected_readers_reexecuted: self.affected.load(Ordering::Acquire),
            reexec_work_units: self.reexec_work.load(Ordering::Acquire),
            destroyed_work_units: self.destroyed_work.load(Ordering::Acquire),
            nodes_visited: self.visited.load(Ordering::Acquire),
            tree_height: 0,
            tree_nodes: 0,
            pile_nodes_collected: self.collected.load(Ordering::Acquire),
            phase_durations: self.phases.lock().clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisitKind {
    Enter,
    Exit,
}

/// One propagation visit event. `at` is a global logical clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VisitEvent {
    pub node: u64,
    pub kind: VisitKind,
    pub strand: u64,
    pub at: u64,
}

/// Child position used as the path alphabet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Left,
    Right,
    Fan(usize),
}

#[derive(Clone)]
pub struct SnapNode {
    pub id: u64,
    pub kind: NodeKind,
    pub children: Vec<(Slot, usize)>,
    pub recorded: Option<Arc<dyn DynValue>>,
    /// Exclusive work units of a read node.
    pub work: u64,
}

impl fmt::Debug for SnapNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SnapNode")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("children", &self.children)
            .field("recorded", &self.recorded)
            .field("work", &self.work)
            .finish()
    }
}

/// Immutable structural copy of a trace. Node 0 is the root.
#[derive(Clone, Debug)]
pub struct TraceSnapshot {
    nodes: Vec<SnapNode>,
}

impl TraceSnapshot {
    pub(crate) fn capture(root: &Arc<Node>) -> TraceSnapshot {
        let mut nodes = Vec::new();
        type Pending = (Arc<Node>, Option<(usize, Slot)>);
        let mut stack: Vec<Pending> = vec![(root.clone(), None)];
        while let Some((n, parent)) = stack.pop() {
            let idx = nodes.len();
            let slot = n.read_slot();
            nodes.push(SnapNode {
                id: n.id(),
                kind: n.kind(),
                children: Vec::new(),
                recorded: slot.and_then(|s| s.reader.recorded()),
                work: n.work(),
            });
            if let Some((p, s)) = parent {
                nodes[p].children.push((s, idx));
            }
            let (fan, kids) = n.slotted_children();
            for (i, k) in kids.into_iter().rev() {
                let s = match (fan, i) {
                    (true, i) => Slot::Fan(i),
                    (false, 0) => Slot::Left,
                    _ => Slot::Right,
                };
                stack.push((k, Some((idx, s))));
            }
        }
        for n in &mut nodes {
            n.children.sort_by_key(|c| c.0);
        }
        TraceSnapshot { nodes }
    }

    pub fn nodes(&self) -> &[SnapNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inclusive work of the subtree at `idx`: the sum of read-node work
    /// units in it.
    pub fn inclusive_work(&self, idx: usize) -> u64 {
        let mut total = 0;
        let mut stack = vec![idx];
        while let Some(i) = stack.pop() {
            total += self.nodes[i].work;
            stack.extend(self.nodes[i].children.iter().map(|c| c.1));
        }
        total
    }

    /// Ids of the nodes on the path from the root to `id`, inclusive.
    pub fn ancestors_of(&self, id: u64) -> Vec<u64> {
        let mut parent = vec![usize::MAX; self.nodes.len()];
        let mut found = None;
        for (i, n) in self.nodes.iter().enumerate() {
            for &(_, c) in &n.children {
                parent[c] = i;
            }
            if n.id == id {
                found = Some(i);
            }
        }
        let mut out = Vec::new();
        let mut cur = found;
        while let Some(i) = cur {
            out.push(self.nodes[i].id);
            cur = (parent[i] != usize::MAX).then_some(parent[i]);
        }
        out
    }

    /// The given node ids together with all their ancestors.
    pub fn with_ancestors(&self, ids: &[u64]) -> HashSet<u64> {
        let mut parent = vec![usize::MAX; self.nodes.len()];
        let mut at = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for &(_, c) in &n.children {
                parent[c] = i;
            }
            at.insert(n.id, i);
        }
        let mut out = HashSet::new();
        for id in ids {
            let mut cur = at.get(id).copied();
            while let Some(i) = cur {
                if !out.insert(self.nodes[i].id) {
                    break;
                }
                cur = (parent[i] != usize::MAX).then_some(parent[i]);
            }
        }
        out
    }

    /// Multiset of node kinds.
    pub fn kind_counts(&self) -> BTreeMap<NodeKind, usize> {
        let mut m = BTreeMap::new();
        for n in &self.nodes {
            *m.entry(n.kind).or_insert(0) += 1;
        }
        m
    }
}

/// Builds snapshots by hand, for oracle tests.
pub struct SnapshotBuilder {
    nodes: Vec<SnapNode>,
}

impl SnapshotBuilder {
    pub fn new(kind: NodeKind, recorded: Option<Arc<dyn DynValue>>, work: u64) -> Self {
        SnapshotBuilder {
            nodes: vec![SnapNode {
                id: 0,
                kind,
                children: Vec::new(),
                recorded,
                work,
            }],
        }
    }

    /// Adds a child under `parent` and returns its index.
    pub fn child(
        &mut self,
        parent: usize,
        slot: Slot,
        kind: NodeKind,
        recorded: Option<Arc<dyn DynValue>>,
        work: u64,
    ) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(SnapNode {
            id: idx as u64,
            kind,
            children: Vec::new(),
            recorded,
            work,
        });
        self.nodes[parent].children.push((slot, idx));
        self.nodes[parent].children.sort_by_key(|c| c.0);
        idx
    }

    pub fn build(self) -> TraceSnapshot {
        TraceSnapshot { nodes: self.nodes }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("node kinds differ at {path:?}")]
    LabelMismatch { path: Vec<Slot> },
    #[error("child slots differ at {path:?}")]
    ArityMismatch { path: Vec<Slot> },
}

/// Outermost pair of cognate read nodes that read different values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffectedPair {
    pub path: Vec<Slot>,
    pub old: u64,
    pub new: u64,
}

fn values_differ(a: &SnapNode, b: &SnapNode) -> bool {
    match (&a.recorded, &b.recorded) {
        (Some(x), Some(y)) => !x.dyn_eq(&**y),
        (None, None) => false,
        _ => true,
    }
}

/// Walks cognate positions of both traces. `on_diff` is called for each
/// outermost differing read pair.
fn walk_cognates(
    t: &TraceSnapshot,
    u: &TraceSnapshot,
    mut on_diff: impl FnMut(usize, usize, &[Slot]),
) -> Result<(), OracleError> {
    if t.is_empty() || u.is_empty() {
        return Ok(());
    }
    let mut stack = vec![(0usize, 0usize, Vec::new())];
    while let Some((i, j, path)) = stack.pop() {
        let (a, b) = (&t.nodes[i], &u.nodes[j]);
        if a.kind != b.kind {
            return Err(OracleError::LabelMismatch { path });
        }
        if a.kind == NodeKind::R && values_differ(a, b) {
            on_diff(i, j, &path);
            continue;
        }
        if a.children.len() != b.children.len()
            || a.children.iter().zip(&b.children).any(|(x, y)| x.0 != y.0)
        {
            return Err(OracleError::ArityMismatch { path });
        }
        for (&(s, ci), &(_, cj)) in a.children.iter().zip(&b.children).rev() {
            let mut p = path.clone();
            p.push(s);
            stack.push((ci, cj, p));
        }
    }
    Ok(())
}

/// Outermost cognate read pairs whose recorded values differ, in trace order.
pub fn affected_readers(
    t: &TraceSnapshot,
    u: &TraceSnapshot,
) -> Result<Vec<AffectedPair>, OracleError> {
    let mut out = Vec::new();
    walk_cognates(t, u, |i, j, path| {
        out.push(AffectedPair {
            path: path.to_vec(),
            old: t.nodes[i].id,
            new: u.nodes[j].id,
        })
    })?;
    Ok(out)
}

/// Computation distance: the inclusive work of both sides of every
/// outermost differing read pair, summed over the trace.
pub fn computation_distance(t: &TraceSnapshot, u: &TraceSnapshot) -> Result<u64, OracleError> {
    let mut d = 0;
    walk_cognates(t, u, |i, j, _| {
        d += t.inclusive_work(i) + u.inclusive_work(j);
    })?;
    Ok(d)
}

/// Like [`computation_distance`] but split into (old side, new side).
pub fn distance_sides(t: &TraceSnapshot, u: &TraceSnapshot) -> Result<(u64, u64), OracleError> {
    let (mut a, mut b) = (0, 0);
    walk_cognates(t, u, |i, j, _| {
        a += t.inclusive_work(i);
        b += u.inclusive_work(j);
    })?;
    Ok((a, b))
}
