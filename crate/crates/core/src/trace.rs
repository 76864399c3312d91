use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};

use parking_lot::Mutex;

use crate::engine::{Computation, Reader};
use crate::error::{Result, SacError};
use crate::modifiable::ModCore;
use crate::reader_set::ReaderKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    /// Sequence: left runs before right.
    S,
    /// Parallel: two S children.
    P,
    /// Read: re-runnable reader closure.
    R,
    /// Flat parallel fan-out created by `parfor`.
    Fan,
}

/// Per-computation node id source.
#[derive(Debug, Default)]
pub struct NodeIds(AtomicU64);

impl NodeIds {
    pub fn new() -> Self {
        NodeIds(AtomicU64::new(0))
    }

    pub fn next(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }

    pub(crate) fn reserve(&self, n: u64) -> u64 {
        self.0.fetch_add(n, Ordering::Relaxed)
    }
}

pub(crate) enum Children {
    Binary(Option<Arc<Node>>, Option<Arc<Node>>),
    Fan(Vec<Arc<Node>>),
}

impl Children {
    fn take_all(&mut self) -> Vec<Arc<Node>> {
        match self {
            Children::Binary(l, r) => l.take().into_iter().chain(r.take()).collect(),
            Children::Fan(v) => std::mem::take(v),
        }
    }
}

pub(crate) struct ReadSlot {
    pub(crate) affected: AtomicBool,
    pub(crate) work: AtomicU64,
    pub(crate) reader: Box<dyn Reader>,
}

pub struct Node {
    id: u64,
    kind: NodeKind,
    parent: Weak<Node>,
    marked: AtomicBool,
    detached: AtomicBool,
    destroyed: AtomicBool,
    children: Mutex<Children>,
    read: Option<ReadSlot>,
}

impl ReaderKey for Node {
    fn reader_id(&self) -> u64 {
        self.id
    }
}

impl fmt::Debug for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Node")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("marked", &self.is_marked())
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Side {
    Left,
    Right,
}

impl Node {
    fn build(id: u64, kind: NodeKind, parent: Weak<Node>, read: Option<ReadSlot>) -> Node {
        let children = if kind == NodeKind::Fan {
            Children::Fan(Vec::new())
        } else {
            Children::Binary(None, None)
        };
        Node {
            id,
            kind,
            parent,
            marked: AtomicBool::new(false),
            detached: AtomicBool::new(false),
            destroyed: AtomicBool::new(false),
            children: Mutex::new(children),
            read,
        }
    }

    /// Creates a node and attaches it to the first free slot of `parent`.
    /// Read nodes carry a reader and can only be created through
    /// [`Ctx::read`](crate::Ctx::read).
    pub fn new_node(
        ids: &NodeIds,
        kind: NodeKind,
        parent: Option<&Arc<Node>>,
    ) -> Result<Arc<Node>> {
        if kind == NodeKind::R {
            return Err(SacError::Contract(
                "read nodes need a reader closure".into(),
            ));
        }
        let Some(parent) = parent else {
            return Ok(Arc::new(Node::build(ids.next(), kind, Weak::new(), None)));
        };
        let mut ch = parent.children.lock();
        let node = Arc::new(Node::build(ids.next(), kind, Arc::downgrade(parent), None));
        match &mut *ch {
            Children::Fan(v) => v.push(node.clone()),
            Children::Binary(l @ None, _) => *l = Some(node.clone()),
            Children::Binary(_, r @ None) => *r = Some(node.clone()),
            Children::Binary(..) => return Err(SacError::SlotOccupied { node: parent.id }),
        }
        Ok(node)
    }

    pub(crate) fn attach(
        parent: &Arc<Node>,
        id: u64,
        kind: NodeKind,
        side: Side,
        read: Option<ReadSlot>,
    ) -> Result<Arc<Node>> {
        let node = Arc::new(Node::build(id, kind, Arc::downgrade(parent), read));
        let mut ch = parent.children.lock();
        let slot = match (&mut *ch, side) {
            (Children::Binary(l, _), Side::Left) => l,
            (Children::Binary(_, r), Side::Right) => r,
            (Children::Fan(_), _) => return Err(SacError::SlotOccupied { node: parent.id }),
        };
        if slot.is_some() {
            return Err(SacError::SlotOccupied { node: parent.id });
        }
        *slot = Some(node.clone());
        Ok(node)
    }

    /// Installs `n` fresh S children under an empty fan-out node.
    pub(crate) fn fan_out(self: &Arc<Node>, ids: &NodeIds, n: usize) -> Vec<Arc<Node>> {
        let base = ids.reserve(n as u64);
        let kids: Vec<Arc<Node>> = (0..n as u64)
            .map(|i| Arc::new(Node::build(base + i, NodeKind::S, Arc::downgrade(self), None)))
            .collect();
        *self.children.lock() = Children::Fan(kids.clone());
        kids
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn parent(&self) -> Option<Arc<Node>> {
        self.parent.upgrade()
    }

    pub fn is_marked(&self) -> bool {
        self.marked.load(Ordering::Acquire)
    }

    /// Overrides the mark flag. Intended for planting defects in tests.
    pub fn set_marked(&self, v: bool) {
        self.marked.store(v, Ordering::Release);
    }

    pub fn is_affected(&self) -> bool {
        self.read
            .as_ref()
            .is_some_and(|r| r.affected.load(Ordering::Acquire))
    }

    pub(crate) fn set_affected(&self) {
        if let Some(r) = &self.read {
            r.affected.store(true, Ordering::Release);
        }
    }

    pub(crate) fn clear_affected(&self) {
        if let Some(r) = &self.read {
            r.affected.store(false, Ordering::Release);
        }
    }

    pub fn is_destroyed(&self) -> bool {
        self.destroyed.load(Ordering::Acquire)
    }

    pub(crate) fn set_destroyed(&self) {
        self.destroyed.store(true, Ordering::Release);
    }

    pub(crate) fn set_detached(&self) {
        self.detached.store(true, Ordering::Release);
    }

    /// Exclusive work units of the last execution of a read node.
    pub fn work(&self) -> u64 {
        self.read
            .as_ref()
            .map_or(0, |r| r.work.load(Ordering::Acquire))
    }

    pub(crate) fn read_slot(&self) -> Option<&ReadSlot> {
        self.read.as_ref()
    }

    pub fn left(&self) -> Option<Arc<Node>> {
        match &*self.children.lock() {
            Children::Binary(l, _) => l.clone(),
            Children::Fan(_) => None,
        }
    }

    pub fn right(&self) -> Option<Arc<Node>> {
        match &*self.children.lock() {
            Children::Binary(_, r) => r.clone(),
            Children::Fan(_) => None,
        }
    }

    /// Children in slot order.
    pub fn children(&self) -> Vec<Arc<Node>> {
        match &*self.children.lock() {
            Children::Binary(l, r) => l.iter().chain(r.iter()).cloned().collect(),
            Children::Fan(v) => v.clone(),
        }
    }

    /// Children paired with their slot index: 0 = left, 1 = right for binary
    /// nodes, position for fan-out nodes.
    pub(crate) fn slotted_children(&self) -> (bool, Vec<(usize, Arc<Node>)>) {
        match &*self.children.lock() {
            Children::Binary(l, r) => (
                false,
                l.iter()
                    .map(|n| (0, n.clone()))
                    .chain(r.iter().map(|n| (1, n.clone())))
                    .collect(),
            ),
            Children::Fan(v) => (true, v.iter().cloned().enumerate().collect()),
        }
    }

    pub(crate) fn take_children(&self) -> Vec<Arc<Node>> {
        self.children.lock().take_all()
    }

    /// Whether this read node lists the modifiable `id` among its reads.
    fn reads_mod(&self, id: u64) -> bool {
        let mut hit = false;
        if let Some(r) = &self.read {
            r.reader.for_each_core(&mut |c: &ModCore| hit |= c.id() == id);
        }
        hit
    }
}

impl Drop for Node {
    fn drop(&mut self) {
        // Unlink iteratively so long sequential chains do not overflow the stack.
        let mut stack = self.children.get_mut().take_all();
        while let Some(c) = stack.pop() {
            if let Some(mut n) = Arc::into_inner(c) {
                stack.extend(n.children.get_mut().take_all());
            }
        }
    }
}

/// Sets the mark on `n` and its ancestors, stopping at the first one already
/// marked. Nodes detached into the garbage pile stop the ascent.
pub fn mark(n: &Arc<Node>) {
    let mut cur = n.clone();
    loop {
        if cur.detached.load(Ordering::Acquire) || cur.marked.swap(true, Ordering::AcqRel) {
            return;
        }
        match cur.parent.upgrade() {
            Some(p) => cur = p,
            None => return,
        }
    }
}

/// Maximum number of edges from `root` to any descendant.
pub fn tree_height(root: &Arc<Node>) -> usize {
    let mut max = 0;
    let mut stack = vec![(root.clone(), 0usize)];
    while let Some((n, d)) = stack.pop() {
        max = max.max(d);
        stack.extend(n.children().into_iter().map(|c| (c, d + 1)));
    }
    max
}

/// Number of nodes reachable from `root`, including it.
pub(crate) fn tree_nodes(root: &Arc<Node>) -> usize {
    let mut count = 0;
    let mut stack = vec![root.clone()];
    while let Some(n) = stack.pop() {
        count += 1;
        stack.extend(n.children());
    }
    count
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Marked node with no affected read node below it.
    StaleMark { node: u64 },
    /// Reader-set entry whose node was destroyed or dropped.
    DanglingReader { modifiable: u64 },
    /// Read node missing from the reader set of a modifiable it reads.
    MissingReader { node: u64, modifiable: u64 },
    /// Reader-set entry pointing at a read node that does not read it.
    ForeignReader { node: u64, modifiable: u64 },
    /// Recorded values do not match the number of modifiables read.
    ArityMismatch { node: u64 },
    /// Unaffected read node whose recorded values are out of date.
    StaleRead { node: u64 },
    /// Parallel node without exactly two S children.
    MalformedPar { node: u64 },
}

/// Checks structural invariants of a computation's trace.
pub fn audit_trace(c: &Computation) -> Vec<Violation> {
    audit_root(c.root())
}

pub(crate) fn audit_root(root: &Arc<Node>) -> Vec<Violation> {
    let mut out = Vec::new();
    // post-order: (node, children_done)
    let mut order = Vec::new();
    let mut stack = vec![root.clone()];
    while let Some(n) = stack.pop() {
        stack.extend(n.children());
        order.push(n);
    }
    let mut below: std::collections::HashMap<u64, bool> = std::collections::HashMap::new();
    let mut seen_mods = HashSet::new();
    for n in order.iter().rev() {
        let kids = n.children();
        let any_kid = kids.iter().any(|k| below.get(&k.id).copied().unwrap_or(false));
        let here = n.is_affected() || any_kid;
        below.insert(n.id, here);
        if n.is_marked() && !here {
            out.push(Violation::StaleMark { node: n.id });
        }
        if n.kind == NodeKind::P
            && (kids.len() != 2 || kids.iter().any(|k| k.kind != NodeKind::S))
        {
            out.push(Violation::MalformedPar { node: n.id });
        }
        let Some(slot) = &n.read else { continue };
        if !slot.reader.arity_ok() {
            out.push(Violation::ArityMismatch { node: n.id });
        }
        if !n.is_affected() && !slot.reader.is_current() {
            out.push(Violation::StaleRead { node: n.id });
        }
        slot.reader.for_each_core(&mut |core: &ModCore| {
            if !core.readers().contains(n) {
                out.push(Violation::MissingReader {
                    node: n.id,
                    modifiable: core.id(),
                });
            }
            if !seen_mods.insert(core.id()) {
                return;
            }
            core.readers().for_each_entry(|entry, dead| {
                if dead {
                    return;
                }
                match entry {
                    Some(r) if r.is_destroyed() => out.push(Violation::DanglingReader {
                        modifiable: core.id(),
                    }),
                    None => out.push(Violation::DanglingReader {
                        modifiable: core.id(),
                    }),
                    Some(r) if !r.reads_mod(core.id()) => out.push(Violation::ForeignReader {
                        node: r.id,
                        modifiable: core.id(),
                    }),
                    Some(_) => {}
                }
            });
        });
    }
    out
}
