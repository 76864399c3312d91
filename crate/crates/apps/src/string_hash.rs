//! Polynomial string hash over fixed-size chunks.

use std::collections::BTreeMap;
use std::sync::Arc;

use psac::{Computation, Config, Ctx, Mod, Result};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::harness::{App, AppError, BenchmarkSpec, Instance};
use crate::reduce::{reduce, Reduce};

pub const DEFAULT_CHUNK: usize = 64;
pub const DEFAULT_BASE: u64 = 256;
pub const DEFAULT_PRIME: u64 = (1 << 61) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashParams {
    pub base: u64,
    pub prime: u64,
}

impl Default for HashParams {
    fn default() -> Self {
        HashParams {
            base: DEFAULT_BASE,
            prime: DEFAULT_PRIME,
        }
    }
}

impl HashParams {
    fn mul(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.prime as u128) as u64
    }

    fn add(&self, a: u64, b: u64) -> u64 {
        ((a as u128 + b as u128) % self.prime as u128) as u64
    }

    pub fn pow(&self, mut e: u64) -> u64 {
        let (mut acc, mut b) = (1 % self.prime, self.base % self.prime);
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(acc, b);
            }
            b = self.mul(b, b);
            e >>= 1;
        }
        acc
    }

    /// Horner evaluation of `s` as a polynomial in the base.
    pub fn hash(&self, s: &[u8]) -> u64 {
        s.iter()
            .fold(0, |h, &c| self.add(self.mul(h, self.base), c as u64))
    }

    /// Hash of the concatenation `l ++ r` given `|r|`.
    pub fn concat(&self, l: u64, r: u64, rlen: usize) -> u64 {
        self.add(self.mul(l, self.pow(rlen as u64)), r)
    }
}

pub type Chunk = Arc<[u8]>;

pub struct StringHash {
    params: HashParams,
    text: Vec<u8>,
    chunk: usize,
    cells: Arc<Vec<Mod<Chunk>>>,
    rng: ChaCha8Rng,
}

struct Polynomial {
    params: HashParams,
    chunk: usize,
    len: usize,
    cells: Arc<Vec<Mod<Chunk>>>,
}

impl Reduce for Polynomial {
    type Out = u64;

    fn leaf(&self, cx: &mut Ctx<'_>, i: usize, dest: Mod<u64>) -> Result<()> {
        let params = self.params;
        cx.read(&self.cells[i], move |cx, c| {
            cx.tick(c.len() as u64);
            cx.write(&dest, params.hash(c))
        })
    }

    fn combine(&self, l: &u64, r: &u64, _: usize, mid: usize, hi: usize) -> u64 {
        let rlen = (hi * self.chunk).min(self.len) - mid * self.chunk;
        self.params.concat(*l, *r, rlen)
    }
}

impl StringHash {
    pub fn from_text(text: &[u8], chunk: usize, params: HashParams, seed: u64) -> Self {
        assert!(chunk > 0, "chunk size must be positive");
        let cells = Arc::new(text.chunks(chunk).map(|c| Mod::with(Chunk::from(c))).collect());
        StringHash {
            params,
            text: text.to_vec(),
            chunk,
            cells,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        }
    }

    pub fn text(&self) -> &[u8] {
        &self.text
    }

    pub fn chunks(&self) -> usize {
        self.cells.len()
    }

    /// Replaces the characters at the given positions, rewriting each
    /// touched chunk once.
    pub fn set_chars(&mut self, edits: &[(usize, u8)]) {
        let mut touched = BTreeMap::new();
        for &(i, c) in edits {
            self.text[i] = c;
            touched.insert(i / self.chunk, ());
        }
        for &ci in touched.keys() {
            let lo = ci * self.chunk;
            let hi = (lo + self.chunk).min(self.text.len());
            self.cells[ci].write(Chunk::from(&self.text[lo..hi]));
        }
    }
}

impl App for StringHash {
    type Output = u64;
    const NAME: &'static str = "hash";

    fn build(spec: &BenchmarkSpec) -> Result<Self, AppError> {
        let chunk = spec.granularity.unwrap_or(DEFAULT_CHUNK);
        if chunk == 0 {
            return Err(AppError::Input("chunk size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let text: Vec<u8> = (0..spec.n).map(|_| rng.gen()).collect();
        Ok(Self::from_text(&text, chunk, HashParams::default(), spec.seed))
    }

    fn run(&self, cfg: Config) -> Result<Instance<u64>, AppError> {
        let res = Mod::new();
        let nchunks = self.cells.len();
        if nchunks == 0 {
            let comp = Computation::run(cfg, |_| Ok(()))?;
            return Ok(Instance::new(comp, || 0));
        }
        let red = Arc::new(Polynomial {
            params: self.params,
            chunk: self.chunk,
            len: self.text.len(),
            cells: self.cells.clone(),
        });
        let r2 = res.clone();
        let comp = Computation::run(cfg, move |cx| reduce(cx, red, 0, nchunks, r2))?;
        Ok(Instance::new(comp, move || res.get().expect("hash written")))
    }

    fn mutate(&mut self, k: usize) -> Result<(), AppError> {
        let n = self.text.len();
        let mut edits = Vec::new();
        for i in sample(&mut self.rng, n, k.min(n)) {
            let c = self.text[i].wrapping_add(self.rng.gen_range(1..=255));
            edits.push((i, c));
        }
        self.set_chars(&edits);
        Ok(())
    }

    fn expected(&self) -> u64 {
        self.params.hash(&self.text)
    }
}
