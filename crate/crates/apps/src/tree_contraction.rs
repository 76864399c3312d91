//! Heaviest edge on every vertex-to-root path of a dynamic binary tree.

use std::sync::Arc;

use psac::{BlockReads, Computation, Config, Mod, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contraction::{collect_answers, contract, Answers, Forest, Plan, Vert, DEFAULT_CHUNK};
use crate::harness::{App, AppError, BenchmarkSpec, Instance};

/// Adjacency of one vertex. `weight` is the weight of the edge to `parent`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Links {
    pub parent: Option<u32>,
    pub kids: [Option<u32>; 2],
    pub weight: i64,
}

pub struct TreeContraction {
    links: Vec<Links>,
    cells: Arc<Vec<Mod<Links>>>,
    plan: Arc<Plan>,
    rng: ChaCha8Rng,
}

struct Tree(Arc<Vec<Mod<Links>>>);

impl Forest for Tree {
    type W = Option<i64>;

    fn len(&self) -> usize {
        self.0.len()
    }

    fn initial(&self, rd: &BlockReads, v: u32) -> Result<Vert<Option<i64>>> {
        let l = rd.get(&self.0[v as usize])?;
        Ok(Vert {
            parent: l.parent,
            kids: l.kids,
            w: Some(l.weight),
        })
    }

    fn combine(a: &Option<i64>, b: &Option<i64>) -> Option<i64> {
        match (a, b) {
            (Some(x), Some(y)) => Some(*x.max(y)),
            (x, None) => *x,
            (None, y) => *y,
        }
    }

    fn root_answer(&self, _: u32) -> Option<i64> {
        None
    }
}

fn bad(msg: String) -> AppError {
    AppError::Input(msg)
}

impl TreeContraction {
    /// Tree given by parent pointers and per-vertex edge weights (the
    /// root's weight is ignored).
    pub fn from_parents(
        parents: &[Option<u32>],
        weights: &[i64],
        chunk: usize,
        seed: u64,
    ) -> Result<Self, AppError> {
        let n = parents.len();
        if weights.len() != n {
            return Err(bad("one weight per vertex required".into()));
        }
        if chunk == 0 {
            return Err(bad("chunk size must be positive".into()));
        }
        let mut links: Vec<Links> = (0..n)
            .map(|v| Links {
                parent: parents[v],
                kids: [None, None],
                weight: weights[v],
            })
            .collect();
        for (v, p) in parents.iter().enumerate() {
            let Some(p) = *p else { continue };
            let slot = links
                .get_mut(p as usize)
                .ok_or_else(|| bad(format!("vertex {v} has unknown parent {p}")))?
                .kids
                .iter_mut()
                .find(|k| k.is_none())
                .ok_or_else(|| bad(format!("vertex {p} would have more than two children")))?;
            *slot = Some(v as u32);
        }
        let roots = parents.iter().filter(|p| p.is_none()).count();
        if n > 0 && roots != 1 {
            return Err(bad(format!("expected one root, found {roots}")));
        }
        let app = TreeContraction {
            cells: Arc::new(links.iter().map(|l| Mod::with(l.clone())).collect()),
            links,
            plan: Arc::new(Plan::new(n, chunk, seed)),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        };
        for v in 0..n as u32 {
            app.root_of(v)?;
        }
        Ok(app)
    }

    pub fn links(&self) -> &[Links] {
        &self.links
    }

    fn root_of(&self, v: u32) -> Result<u32, AppError> {
        let mut x = v;
        for _ in 0..=self.links.len() {
            match self.links[x as usize].parent {
                Some(p) => x = p,
                None => return Ok(x),
            }
        }
        Err(bad(format!("vertex {v} lies on a cycle")))
    }

    fn is_ancestor(&self, a: u32, mut v: u32) -> bool {
        loop {
            if v == a {
                return true;
            }
            match self.links[v as usize].parent {
                Some(p) => v = p,
                None => return false,
            }
        }
    }

    /// Moves the subtree rooted at `v` under `parent` with a new edge weight.
    pub fn relink(&mut self, v: u32, parent: u32, weight: i64) -> Result<(), AppError> {
        let n = self.links.len() as u32;
        if v >= n || parent >= n {
            return Err(bad(format!("vertex out of range: {v} -> {parent}")));
        }
        let Some(old) = self.links[v as usize].parent else {
            return Err(bad(format!("cannot relink the root {v}")));
        };
        if self.is_ancestor(v, parent) {
            return Err(bad(format!("linking {v} under {parent} creates a cycle")));
        }
        if old != parent && self.links[parent as usize].kids.iter().all(Option::is_some) {
            return Err(bad(format!("vertex {parent} already has two children")));
        }
        for k in self.links[old as usize].kids.iter_mut() {
            if *k == Some(v) {
                *k = None;
            }
        }
        let slot = self.links[parent as usize]
            .kids
            .iter_mut()
            .find(|k| k.is_none())
            .expect("free slot checked above");
        *slot = Some(v);
        self.links[v as usize].parent = Some(parent);
        self.links[v as usize].weight = weight;
        for x in [old, parent, v] {
            self.cells[x as usize].write(self.links[x as usize].clone());
        }
        Ok(())
    }
}

impl App for TreeContraction {
    type Output = Vec<Option<i64>>;
    const NAME: &'static str = "tree";

    /// Random recursive tree: each vertex attaches to a uniformly chosen
    /// earlier vertex that still has a free child slot.
    fn build(spec: &BenchmarkSpec) -> Result<Self, AppError> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut parents = vec![None; spec.n];
        let mut kids = vec![0u8; spec.n];
        let mut open: Vec<u32> = Vec::new();
        for (v, parent) in parents.iter_mut().enumerate() {
            if !open.is_empty() {
                let i = rng.gen_range(0..open.len());
                let p = open[i];
                *parent = Some(p);
                kids[p as usize] += 1;
                if kids[p as usize] == 2 {
                    open.swap_remove(i);
                }
            }
            open.push(v as u32);
        }
        let weights: Vec<i64> = (0..spec.n).map(|_| rng.gen_range(1..=1_000_000)).collect();
        Self::from_parents(&parents, &weights, spec.granularity.unwrap_or(DEFAULT_CHUNK), spec.seed)
    }

    fn run(&self, cfg: Config) -> Result<Instance<Vec<Option<i64>>>, AppError> {
        let nc = self.plan.chunks(self.links.len());
        let out: Arc<Vec<Mod<Answers<Option<i64>>>>> = Arc::new((0..nc).map(|_| Mod::new()).collect());
        let (tree, plan, o2) = (Arc::new(Tree(self.cells.clone())), self.plan.clone(), out.clone());
        let comp = Computation::run(cfg, move |cx| contract(cx, tree, plan, o2))?;
        Ok(Instance::new(comp, move || collect_answers(&out)))
    }

    /// Cuts `k` random edges and relinks each detached subtree under a
    /// random vertex outside it that has a free child slot.
    fn mutate(&mut self, k: usize) -> Result<(), AppError> {
        let n = self.links.len() as u32;
        if n < 2 {
            return Ok(());
        }
        let mut done = 0;
        while done < k {
            let v = self.rng.gen_range(0..n);
            if self.links[v as usize].parent.is_none() {
                continue;
            }
            let weight = self.rng.gen_range(1..=1_000_000);
            for _ in 0..64 {
                let q = self.rng.gen_range(0..n);
                let full = self.links[q as usize].kids.iter().all(Option::is_some);
                if !full && !self.is_ancestor(v, q) {
                    self.relink(v, q, weight)?;
                    done += 1;
                    break;
                }
            }
        }
        Ok(())
    }

    fn expected(&self) -> Vec<Option<i64>> {
        (0..self.links.len())
            .map(|v| {
                let mut best = None;
                let mut x = v;
                while let Some(p) = self.links[x].parent {
                    best = best.max(Some(self.links[x].weight));
                    x = p as usize;
                }
                best
            })
            .collect()
    }
}
