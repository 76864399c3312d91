//! Minimum edit distance from a reference string to a set of strings.

use std::sync::Arc;

use psac::{Computation, Config, Ctx, Mod, Result};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::harness::{App, AppError, BenchmarkSpec, Instance};
use crate::reduce::{reduce, Reduce};

pub const DEFAULT_LEN: usize = 80;

pub type Word = Arc<[u8]>;

/// Levenshtein distance with the full quadratic table, one row at a time.
pub fn edit_distance(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub struct Spellcheck {
    reference: Word,
    words: Vec<Word>,
    cells: Arc<Vec<Mod<Word>>>,
    len: usize,
    rng: ChaCha8Rng,
}

struct MinDistance {
    reference: Word,
    cells: Arc<Vec<Mod<Word>>>,
}

impl Reduce for MinDistance {
    type Out = usize;

    fn leaf(&self, cx: &mut Ctx<'_>, i: usize, dest: Mod<usize>) -> Result<()> {
        let reference = self.reference.clone();
        cx.read(&self.cells[i], move |cx, w| {
            cx.tick(reference.len() as u64);
            cx.write(&dest, edit_distance(&reference, w))
        })
    }

    fn combine(&self, l: &usize, r: &usize, _: usize, _: usize, _: usize) -> usize {
        *l.min(r)
    }
}

fn random_word(rng: &mut ChaCha8Rng, len: usize) -> Word {
    (0..len).map(|_| rng.gen_range(b'a'..=b'z')).collect()
}

impl Spellcheck {
    pub fn from_words(reference: &str, words: &[&str], seed: u64) -> Self {
        let words: Vec<Word> = words.iter().map(|w| Word::from(w.as_bytes())).collect();
        Self::assemble(Word::from(reference.as_bytes()), words, seed)
    }

    fn assemble(reference: Word, words: Vec<Word>, seed: u64) -> Self {
        let cells = Arc::new(words.iter().map(|w| Mod::with(w.clone())).collect());
        Spellcheck {
            len: reference.len(),
            reference,
            words,
            cells,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        }
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn set(&mut self, i: usize, w: &str) {
        let w = Word::from(w.as_bytes());
        self.words[i] = w.clone();
        self.cells[i].write(w);
    }
}

impl App for Spellcheck {
    type Output = usize;
    const NAME: &'static str = "spellcheck";

    fn build(spec: &BenchmarkSpec) -> Result<Self, AppError> {
        if spec.n == 0 {
            return Err(AppError::Input("spellcheck needs at least one string".into()));
        }
        let len = spec.granularity.unwrap_or(DEFAULT_LEN);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let reference = random_word(&mut rng, len);
        let words = (0..spec.n).map(|_| random_word(&mut rng, len)).collect();
        Ok(Self::assemble(reference, words, spec.seed))
    }

    fn run(&self, cfg: Config) -> Result<Instance<usize>, AppError> {
        let res = Mod::new();
        let red = Arc::new(MinDistance {
            reference: self.reference.clone(),
            cells: self.cells.clone(),
        });
        let (r2, n) = (res.clone(), self.words.len());
        let comp = Computation::run(cfg, move |cx| reduce(cx, red, 0, n, r2))?;
        Ok(Instance::new(comp, move || res.get().expect("minimum written")))
    }

    fn mutate(&mut self, k: usize) -> Result<(), AppError> {
        let n = self.words.len();
        for i in sample(&mut self.rng, n, k.min(n)) {
            let w = random_word(&mut self.rng, self.len);
            self.words[i] = w.clone();
            self.cells[i].write(w);
        }
        Ok(())
    }

    fn expected(&self) -> usize {
        self.words
            .iter()
            .map(|w| edit_distance(&self.reference, w))
            .min()
            .expect("non-empty")
    }
}
