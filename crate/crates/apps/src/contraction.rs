//! Chunked randomized rake/compress contraction shared by the list and
//! tree apps.
//!
//! Vertices are grouped into fixed-size chunks. Each round has one reader
//! per chunk that reads the previous round's state of its chunk and of
//! neighboring chunks and writes the chunk's next state. Expansion runs
//! the rounds backwards and fills in path aggregates.

use std::collections::HashMap;
use std::sync::Arc;

use psac::{BlockReads, Ctx, Data, Mod, Result, SacError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) const DEFAULT_CHUNK: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Vert<W> {
    pub parent: Option<u32>,
    pub kids: [Option<u32>; 2],
    /// Aggregate weight of the path to `parent`.
    pub w: W,
}

impl<W> Vert<W> {
    fn nkids(&self) -> usize {
        self.kids.iter().flatten().count()
    }

    fn only_kid(&self) -> Option<u32> {
        match self.kids {
            [Some(k), None] | [None, Some(k)] => Some(k),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ChunkState<W> {
    /// `None` once the vertex has been contracted away.
    verts: Vec<Option<Vert<W>>>,
    /// Removed in the round that produced this state: (local index, pred, weight).
    died: Vec<(u32, u32, W)>,
}

/// One round's chunk states.
type RoundCells<W> = Vec<Mod<Arc<ChunkState<W>>>>;

pub(crate) type Answers<W> = Arc<Vec<Option<W>>>;

/// Input forest and path aggregate.
pub(crate) trait Forest: Send + Sync + 'static {
    type W: Data;

    fn len(&self) -> usize;

    /// Reads the input state of `v` through the block accessor.
    fn initial(&self, rd: &BlockReads, v: u32) -> Result<Vert<Self::W>>;

    fn combine(a: &Self::W, b: &Self::W) -> Self::W;

    fn root_answer(&self, v: u32) -> Self::W;
}

/// Chunk size, round count and pre-generated coins.
pub(crate) struct Plan {
    pub chunk: usize,
    pub rounds: usize,
    coins: Vec<Vec<u64>>,
}

pub(crate) fn rounds_for(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        4 * (usize::BITS - (n - 1).leading_zeros()) as usize + 24
    }
}

impl Plan {
    pub fn new(n: usize, chunk: usize, seed: u64) -> Self {
        let rounds = rounds_for(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0175);
        let words = n.div_ceil(64);
        let coins = (0..rounds)
            .map(|_| (0..words).map(|_| rng.gen()).collect())
            .collect();
        Plan {
            chunk,
            rounds,
            coins,
        }
    }

    fn heads(&self, r: usize, v: u32) -> bool {
        self.coins[r][v as usize / 64] >> (v % 64) & 1 == 1
    }

    pub fn chunks(&self, n: usize) -> usize {
        n.div_ceil(self.chunk)
    }
}

fn contract_err(msg: String) -> SacError {
    SacError::Contract(msg)
}

/// Reads vertex states of one round, caching chunk snapshots.
struct Lookup<'r, W: Data> {
    rd: &'r BlockReads,
    round: &'r [Mod<Arc<ChunkState<W>>>],
    chunk: usize,
    cache: HashMap<usize, Arc<ChunkState<W>>>,
}

impl<W: Data> Lookup<'_, W> {
    fn chunk_of(&mut self, ci: usize) -> Result<Arc<ChunkState<W>>> {
        if let Some(s) = self.cache.get(&ci) {
            return Ok(s.clone());
        }
        let s = self.rd.get(&self.round[ci])?;
        self.cache.insert(ci, s.clone());
        Ok(s)
    }

    fn vert(&mut self, v: u32) -> Result<Vert<W>> {
        let s = self.chunk_of(v as usize / self.chunk)?;
        s.verts[v as usize % self.chunk]
            .clone()
            .ok_or_else(|| contract_err(format!("vertex {v} linked after removal")))
    }
}

fn rakes<W>(x: &Vert<W>) -> bool {
    x.parent.is_some() && x.nkids() == 0
}

fn compresses<W: Data>(plan: &Plan, r: usize, id: u32, x: &Vert<W>, look: &mut Lookup<'_, W>) -> Result<bool> {
    let (Some(p), Some(k)) = (x.parent, x.only_kid()) else {
        return Ok(false);
    };
    if !plan.heads(r, id) || plan.heads(r, p) {
        return Ok(false);
    }
    Ok(look.vert(k)?.nkids() > 0)
}

fn step<F: Forest>(
    plan: &Plan,
    r: usize,
    lo: usize,
    look: &mut Lookup<'_, F::W>,
) -> Result<ChunkState<F::W>> {
    let cur = look.chunk_of(lo / plan.chunk)?;
    let mut verts = Vec::with_capacity(cur.verts.len());
    let mut died = Vec::new();
    for (i, slot) in cur.verts.iter().enumerate() {
        let v = (lo + i) as u32;
        let Some(x) = slot else {
            verts.push(None);
            continue;
        };
        if rakes(x) || compresses(plan, r, v, x, look)? {
            died.push((i as u32, x.parent.unwrap(), x.w.clone()));
            verts.push(None);
            continue;
        }
        let mut next = x.clone();
        if let Some(p) = x.parent {
            let pv = look.vert(p)?;
            if compresses(plan, r, p, &pv, look)? {
                next.parent = pv.parent;
                next.w = F::combine(&x.w, &pv.w);
            }
        }
        for kid in next.kids.iter_mut() {
            let Some(u) = *kid else { continue };
            let uv = look.vert(u)?;
            if rakes(&uv) {
                *kid = None;
            } else if compresses(plan, r, u, &uv, look)? {
                *kid = uv.only_kid();
            }
        }
        verts.push(Some(next));
    }
    Ok(ChunkState { verts, died })
}

/// Contracts the forest and writes each chunk's answers to `out`.
pub(crate) fn contract<F: Forest>(
    cx: &mut Ctx<'_>,
    forest: Arc<F>,
    plan: Arc<Plan>,
    out: Arc<Vec<Mod<Answers<F::W>>>>,
) -> Result<()> {
    let n = forest.len();
    let nc = plan.chunks(n);
    let c = plan.chunk;
    let rounds = plan.rounds;
    let states: Arc<Vec<RoundCells<F::W>>> = Arc::new((0..=rounds).map(|_| cx.alloc_array(nc)).collect());

    cx.parfor(0, nc, |cx, ci| {
        let (f, dest) = (forest.clone(), states[0][ci].clone());
        cx.read_block(move |cx, rd| {
            let lo = ci * c;
            let hi = (lo + c).min(f.len());
            let verts = (lo..hi)
                .map(|v| f.initial(rd, v as u32).map(Some))
                .collect::<Result<Vec<_>>>()?;
            cx.tick(verts.len() as u64);
            cx.write(&dest, Arc::new(ChunkState { verts, died: Vec::new() }))
        })
    })?;

    for r in 0..rounds {
        cx.parfor(0, nc, |cx, ci| {
            let (plan, states) = (plan.clone(), states.clone());
            cx.read_block(move |cx, rd| {
                let mut look = Lookup {
                    rd,
                    round: &states[r],
                    chunk: c,
                    cache: HashMap::new(),
                };
                let next = step::<F>(&plan, r, ci * c, &mut look)?;
                cx.tick(next.verts.iter().flatten().count() as u64);
                cx.write(&states[r + 1][ci], Arc::new(next))
            })
        })?;
    }

    let mut answers: Vec<Vec<Mod<Answers<F::W>>>> = Vec::with_capacity(rounds + 1);
    answers.push(out.to_vec());
    for _ in 0..rounds {
        answers.push(cx.alloc_array(nc));
    }
    let answers = Arc::new(answers);

    cx.parfor(0, nc, |cx, ci| {
        let (f, last) = (forest.clone(), states[rounds][ci].clone());
        let dest = answers[rounds][ci].clone();
        cx.read(&last, move |cx, st| {
            let ans = st
                .verts
                .iter()
                .enumerate()
                .map(|(i, slot)| match slot {
                    None => Ok(None),
                    Some(x) if x.parent.is_none() => Ok(Some(f.root_answer((ci * c + i) as u32))),
                    Some(_) => Err(contract_err(format!(
                        "vertex {} survived all contraction rounds",
                        ci * c + i
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            cx.tick(ans.len() as u64);
            cx.write(&dest, Arc::new(ans))
        })
    })?;

    for r in (0..rounds).rev() {
        cx.parfor(0, nc, |cx, ci| {
            let (states, answers) = (states.clone(), answers.clone());
            cx.read_block(move |cx, rd| {
                let st = rd.get(&states[r + 1][ci])?;
                let above = rd.get(&answers[r + 1][ci])?;
                let mut ans = (*above).clone();
                for (i, pred, w) in &st.died {
                    let (pc, pi) = (*pred as usize / c, *pred as usize % c);
                    let pa = if pc == ci {
                        above[pi].clone()
                    } else {
                        rd.get(&answers[r + 1][pc])?[pi].clone()
                    };
                    let pa = pa.ok_or_else(|| {
                        contract_err(format!("vertex {pred} has no answer in round {}", r + 1))
                    })?;
                    ans[*i as usize] = Some(F::combine(w, &pa));
                }
                cx.tick(1 + st.died.len() as u64);
                cx.write(&answers[r][ci], Arc::new(ans))
            })
        })?;
    }
    Ok(())
}

/// Concatenates per-chunk answers into one vector indexed by vertex.
pub(crate) fn collect_answers<W: Data>(out: &[Mod<Answers<W>>]) -> Vec<W> {
    out.iter()
        .flat_map(|m| {
            let a = m.get().expect("answers written");
            a.iter().map(|x| x.clone().expect("every vertex answered")).collect::<Vec<_>>()
        })
        .collect()
}
