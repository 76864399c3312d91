//! Prefix sums over a linked sequence maintained under cut and rejoin.
//!
//! Each element has `prev` and `next` link cells. The sequence is
//! contracted as a chain rooted at its head, so every element's answer is
//! the inclusive prefix sum up to it.

use std::sync::Arc;

use psac::{BlockReads, Computation, Config, Mod, Result};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contraction::{collect_answers, contract, Answers, Forest, Plan, Vert, DEFAULT_CHUNK};
use crate::harness::{App, AppError, BenchmarkSpec, Instance};

type Link = Mod<Option<u32>>;

pub struct ListContraction {
    values: Arc<Vec<i64>>,
    order: Vec<u32>,
    prev: Arc<Vec<Link>>,
    next: Arc<Vec<Link>>,
    plan: Arc<Plan>,
    rng: ChaCha8Rng,
}

struct Chain {
    values: Arc<Vec<i64>>,
    prev: Arc<Vec<Link>>,
    next: Arc<Vec<Link>>,
}

impl Forest for Chain {
    type W = i64;

    fn len(&self) -> usize {
        self.values.len()
    }

    fn initial(&self, rd: &BlockReads, v: u32) -> Result<Vert<i64>> {
        Ok(Vert {
            parent: rd.get(&self.prev[v as usize])?,
            kids: [rd.get(&self.next[v as usize])?, None],
            w: self.values[v as usize],
        })
    }

    fn combine(a: &i64, b: &i64) -> i64 {
        a + b
    }

    fn root_answer(&self, v: u32) -> i64 {
        self.values[v as usize]
    }
}

impl ListContraction {
    /// Elements `0..values.len()` linked in index order.
    pub fn from_values(values: Vec<i64>, chunk: usize, seed: u64) -> Result<Self, AppError> {
        if chunk == 0 {
            return Err(AppError::Input("chunk size must be positive".into()));
        }
        let n = values.len();
        let app = ListContraction {
            plan: Arc::new(Plan::new(n, chunk, seed)),
            values: Arc::new(values),
            order: (0..n as u32).collect(),
            prev: Arc::new((0..n).map(|i| Mod::with(i.checked_sub(1).map(|p| p as u32))).collect()),
            next: Arc::new(
                (0..n)
                    .map(|i| Mod::with((i + 1 < n).then_some(i as u32 + 1)))
                    .collect(),
            ),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        };
        Ok(app)
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    /// Relinks the elements into the given sequence. Every element must
    /// appear exactly once.
    pub fn set_order(&mut self, order: &[u32]) -> Result<(), AppError> {
        let n = self.values.len();
        if order.len() != n {
            return Err(AppError::Input(format!(
                "sequence has {} elements, expected {n}",
                order.len()
            )));
        }
        let mut seen = vec![false; n];
        for &e in order {
            let slot = seen
                .get_mut(e as usize)
                .ok_or_else(|| AppError::Input(format!("unknown element {e}")))?;
            if *slot {
                return Err(AppError::Input(format!("element {e} linked twice")));
            }
            *slot = true;
        }
        for (i, &e) in order.iter().enumerate() {
            let p = i.checked_sub(1).map(|j| order[j]);
            self.prev[e as usize].write(p);
            self.next[e as usize].write(order.get(i + 1).copied());
        }
        self.order = order.to_vec();
        Ok(())
    }
}

impl App for ListContraction {
    type Output = Vec<i64>;
    const NAME: &'static str = "list";

    fn build(spec: &BenchmarkSpec) -> Result<Self, AppError> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let values = (0..spec.n).map(|_| rng.gen_range(-1000..=1000)).collect();
        Self::from_values(values, spec.granularity.unwrap_or(DEFAULT_CHUNK), spec.seed)
    }

    fn run(&self, cfg: Config) -> Result<Instance<Vec<i64>>, AppError> {
        let nc = self.plan.chunks(self.values.len());
        let out: Arc<Vec<Mod<Answers<i64>>>> = Arc::new((0..nc).map(|_| Mod::new()).collect());
        let chain = Arc::new(Chain {
            values: self.values.clone(),
            prev: self.prev.clone(),
            next: self.next.clone(),
        });
        let (plan, o2) = (self.plan.clone(), out.clone());
        let comp = Computation::run(cfg, move |cx| contract(cx, chain, plan, o2))?;
        Ok(Instance::new(comp, move || collect_answers(&out)))
    }

    /// Cuts `k` random links, shuffles the pieces and rejoins them.
    fn mutate(&mut self, k: usize) -> Result<(), AppError> {
        let n = self.order.len();
        if n < 2 {
            return Ok(());
        }
        let mut cuts: Vec<usize> = sample(&mut self.rng, n - 1, k.min(n - 1))
            .into_iter()
            .map(|i| i + 1)
            .collect();
        cuts.sort_unstable();
        let mut pieces = Vec::with_capacity(cuts.len() + 1);
        let mut lo = 0;
        for c in cuts.into_iter().chain([n]) {
            pieces.push(&self.order[lo..c]);
            lo = c;
        }
        pieces.shuffle(&mut self.rng);
        let order = pieces.concat();
        self.set_order(&order)
    }

    fn expected(&self) -> Vec<i64> {
        let mut out = vec![0; self.order.len()];
        let mut acc = 0;
        for &e in &self.order {
            acc += self.values[e as usize];
            out[e as usize] = acc;
        }
        out
    }
}
