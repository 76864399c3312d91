//! Filtering a binary search tree with leaf blocks.
//!
//! Internal nodes hold one value and two child cells; leaves hold a sorted
//! block of up to `capacity` values. The filtered tree shares child cells
//! with the sub-results it is assembled from, so a changed leaf only
//! re-runs the joins that had to look inside it.

use std::fmt;
use std::sync::Arc;

use psac::{Computation, Config, Ctx, Mod, Result, SacError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::harness::{App, AppError, BenchmarkSpec, Instance};

pub const DEFAULT_CAPACITY: usize = 64;

pub type Tree = Mod<Option<BstRef>>;

#[derive(Debug)]
pub enum BstNode {
    Leaf { values: Mod<Arc<[i64]>> },
    Internal { value: Mod<i64>, left: Tree, right: Tree },
}

/// Shared node handle; equal only to itself.
#[derive(Clone)]
pub struct BstRef(pub Arc<BstNode>);

impl PartialEq for BstRef {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl fmt::Debug for BstRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn leaf(values: &[i64]) -> Option<BstRef> {
    (!values.is_empty()).then(|| {
        BstRef(Arc::new(BstNode::Leaf {
            values: Mod::with(Arc::from(values)),
        }))
    })
}

pub fn internal(value: i64, left: Tree, right: Tree) -> Option<BstRef> {
    Some(BstRef(Arc::new(BstNode::Internal {
        value: Mod::with(value),
        left,
        right,
    })))
}

fn node(t: &Tree) -> Option<BstRef> {
    t.get().flatten()
}

/// In-order values, read without recording dependencies.
pub fn in_order(t: &Tree) -> Vec<i64> {
    let mut out = Vec::new();
    let mut stack = vec![(t.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        let Some(r) = node(&t) else { continue };
        match &*r.0 {
            BstNode::Leaf { values } => out.extend(values.get().iter().flat_map(|v| v.iter())),
            BstNode::Internal { value, left, right } => {
                if expanded {
                    out.extend(value.get());
                } else {
                    stack.push((right.clone(), false));
                    stack.push((t.clone(), true));
                    stack.push((left.clone(), false));
                }
            }
        }
    }
    out
}

/// Nodes on the longest root-to-leaf path.
pub fn height(t: &Tree) -> usize {
    let mut best = 0;
    let mut stack = vec![(t.clone(), 1)];
    while let Some((t, d)) = stack.pop() {
        let Some(r) = node(&t) else { continue };
        best = best.max(d);
        if let BstNode::Internal { left, right, .. } = &*r.0 {
            stack.push((left.clone(), d + 1));
            stack.push((right.clone(), d + 1));
        }
    }
    best
}

fn extreme(t: &Tree, max: bool) -> Option<i64> {
    let mut best = None;
    let mut t = t.clone();
    loop {
        let Some(r) = node(&t) else { return best };
        match &*r.0 {
            BstNode::Leaf { values } => {
                let v = values.get()?;
                return if max { v.last() } else { v.first() }.copied().or(best);
            }
            BstNode::Internal { value, left, right } => {
                best = value.get();
                t = if max { right.clone() } else { left.clone() };
            }
        }
    }
}

fn check_order(l: &Tree, v: Option<i64>, r: &Tree) -> Result<()> {
    if !cfg!(debug_assertions) {
        return Ok(());
    }
    let seq = [extreme(l, true), v, extreme(r, false)];
    let seq: Vec<i64> = seq.into_iter().flatten().collect();
    if seq.windows(2).all(|w| w[0] <= w[1]) {
        Ok(())
    } else {
        Err(SacError::Contract(format!("join arguments out of order: {seq:?}")))
    }
}

/// Writes `dest` with the tree `l`, `v`, `r`.
pub fn join(cx: &mut Ctx<'_>, l: Tree, v: i64, r: Tree, dest: Tree) -> Result<()> {
    check_order(&l, Some(v), &r)?;
    cx.write(&dest, internal(v, l, r))
}

/// Writes `dest` with the concatenation of `l` and `r`.
pub fn join2(cx: &mut Ctx<'_>, l: Tree, r: Tree, dest: Tree) -> Result<()> {
    check_order(&l, None, &r)?;
    join2_rec(cx, l, r, dest)
}

fn join2_rec(cx: &mut Ctx<'_>, l: Tree, r: Tree, dest: Tree) -> Result<()> {
    cx.read(&l, move |cx, ln| {
        let Some(ln) = ln else {
            let dest = dest.clone();
            return cx.read(&r, move |cx, rn| cx.write(&dest, rn.clone()));
        };
        match &*ln.0 {
            BstNode::Leaf { values } => {
                let (r, dest) = (r.clone(), dest.clone());
                cx.read(values, move |cx, vals| {
                    let (max, rest) = vals.split_last().expect("leaves are never empty");
                    cx.write(&dest, internal(*max, Mod::with(leaf(rest)), r.clone()))
                })
            }
            BstNode::Internal { value, left, right } => {
                let d2: Tree = cx.alloc();
                let top = BstRef(Arc::new(BstNode::Internal {
                    value: value.clone(),
                    left: left.clone(),
                    right: d2.clone(),
                }));
                cx.write(&dest, Some(top))?;
                join2_rec(cx, right.clone(), r.clone(), d2)
            }
        }
    })
}

fn keep(v: i64) -> bool {
    v % 2 != 0
}

/// Writes to `dest` the subtree of `t` holding the values that pass the predicate.
pub fn filter(cx: &mut Ctx<'_>, t: Tree, dest: Tree) -> Result<()> {
    cx.read(&t, move |cx, tn| {
        let Some(tn) = tn else {
            return cx.write(&dest, None);
        };
        match &*tn.0 {
            BstNode::Leaf { values } => {
                let dest = dest.clone();
                cx.read(values, move |cx, vals| {
                    cx.tick(vals.len() as u64);
                    let kept: Vec<i64> = vals.iter().copied().filter(|&v| keep(v)).collect();
                    cx.write(&dest, leaf(&kept))
                })
            }
            BstNode::Internal { value, left, right } => {
                let (fl, fr): (Tree, Tree) = (cx.alloc(), cx.alloc());
                let (l, r, fl1, fr1) = (left.clone(), right.clone(), fl.clone(), fr.clone());
                cx.par(move |cx| filter(cx, l, fl1), move |cx| filter(cx, r, fr1))?;
                let dest = dest.clone();
                cx.read(value, move |cx, &v| {
                    if keep(v) {
                        join(cx, fl.clone(), v, fr.clone(), dest.clone())
                    } else {
                        join2(cx, fl.clone(), fr.clone(), dest.clone())
                    }
                })
            }
        }
    })
}

pub struct FilterBst {
    root: Tree,
    values: Vec<i64>,
    capacity: usize,
    rng: ChaCha8Rng,
}

impl FilterBst {
    pub fn from_values(values: &[i64], capacity: usize, seed: u64) -> Result<Self, AppError> {
        if capacity == 0 {
            return Err(AppError::Input("leaf capacity must be positive".into()));
        }
        let mut app = FilterBst {
            root: Mod::with(None),
            values: Vec::with_capacity(values.len()),
            capacity,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        };
        for &v in values {
            app.insert(v);
        }
        Ok(app)
    }

    pub fn root(&self) -> &Tree {
        &self.root
    }

    pub fn height(&self) -> usize {
        height(&self.root)
    }

    /// Inserts `x` into the leaf block it belongs to, splitting the block
    /// around its median when it overflows.
    pub fn insert(&mut self, x: i64) {
        self.values.push(x);
        let mut t = self.root.clone();
        loop {
            let Some(n) = node(&t) else {
                t.write(leaf(&[x]));
                return;
            };
            match &*n.0 {
                BstNode::Internal { value, left, right } => {
                    t = if x <= value.get().expect("node value") {
                        left.clone()
                    } else {
                        right.clone()
                    };
                }
                BstNode::Leaf { values } => {
                    let mut vals = values.get().expect("leaf values").to_vec();
                    let at = vals.partition_point(|&v| v <= x);
                    vals.insert(at, x);
                    if vals.len() <= self.capacity {
                        values.write(Arc::from(vals));
                    } else {
                        let mid = vals.len() / 2;
                        let split = internal(
                            vals[mid],
                            Mod::with(leaf(&vals[..mid])),
                            Mod::with(leaf(&vals[mid + 1..])),
                        );
                        t.write(split);
                    }
                    return;
                }
            }
        }
    }
}

impl App for FilterBst {
    type Output = Vec<i64>;
    const NAME: &'static str = "filter";

    fn build(spec: &BenchmarkSpec) -> Result<Self, AppError> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let values: Vec<i64> = (0..spec.n).map(|_| rng.gen_range(0..1 << 40)).collect();
        Self::from_values(&values, spec.granularity.unwrap_or(DEFAULT_CAPACITY), spec.seed)
    }

    fn run(&self, cfg: Config) -> Result<Instance<Vec<i64>>, AppError> {
        let out: Tree = Mod::new();
        let (root, o2) = (self.root.clone(), out.clone());
        let comp = Computation::run(cfg, move |cx| filter(cx, root, o2))?;
        Ok(Instance::new(comp, move || in_order(&out)))
    }

    /// Inserts `k` uniformly random values.
    fn mutate(&mut self, k: usize) -> Result<(), AppError> {
        for _ in 0..k {
            let x = self.rng.gen_range(0..1 << 40);
            self.insert(x);
        }
        Ok(())
    }

    fn expected(&self) -> Vec<i64> {
        let mut v: Vec<i64> = self.values.iter().copied().filter(|&v| keep(v)).collect();
        v.sort_unstable();
        v
    }

    fn plain_reads(&self) -> bool {
        false
    }
}
