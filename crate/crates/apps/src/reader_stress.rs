//! Many workers reading a few shared cells.

use std::sync::Arc;

use psac::{Computation, Config, Mod};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::harness::{App, AppError, BenchmarkSpec, Instance};

pub const DEFAULT_CELLS: usize = 1024;

pub struct ReaderStress {
    values: Vec<i64>,
    cells: Arc<Vec<Mod<i64>>>,
    /// Cell read by each worker.
    assign: Arc<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl ReaderStress {
    /// `workers` readers spread evenly over `cells` modifiables.
    pub fn new(workers: usize, cells: usize, seed: u64) -> Result<Self, AppError> {
        if cells == 0 || cells > workers {
            return Err(AppError::Input(format!(
                "need 1 <= cells <= workers, got {cells} cells for {workers} workers"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<i64> = (0..cells).map(|_| rng.gen_range(0..1 << 40)).collect();
        let mut assign: Vec<usize> = (0..workers).map(|i| i % cells).collect();
        assign.shuffle(&mut rng);
        Ok(ReaderStress {
            cells: Arc::new(values.iter().map(|&v| Mod::with(v)).collect()),
            values,
            assign: Arc::new(assign),
            rng,
        })
    }

    pub fn cells(&self) -> &[Mod<i64>] {
        &self.cells
    }

    pub fn workers(&self) -> usize {
        self.assign.len()
    }
}

impl App for ReaderStress {
    type Output = Vec<i64>;
    const NAME: &'static str = "readers";

    fn build(spec: &BenchmarkSpec) -> Result<Self, AppError> {
        let cells = spec.granularity.unwrap_or(DEFAULT_CELLS).min(spec.n);
        ReaderStress::new(spec.n, cells, spec.seed)
    }

    fn run(&self, cfg: Config) -> Result<Instance<Vec<i64>>, AppError> {
        let out: Arc<Vec<Mod<i64>>> = Arc::new((0..self.workers()).map(|_| Mod::new()).collect());
        let (cells, assign, o2) = (self.cells.clone(), self.assign.clone(), out.clone());
        let comp = Computation::run(cfg, move |cx| {
            cx.parfor(0, assign.len(), |cx, i| {
                let dest = o2[i].clone();
                cx.read(&cells[assign[i]], move |cx, v| cx.write(&dest, *v))
            })
        })?;
        Ok(Instance::new(comp, move || {
            out.iter().map(|m| m.get().expect("output written")).collect()
        }))
    }

    /// Rewrites `min(k, cells)` distinct cells with fresh values.
    fn mutate(&mut self, k: usize) -> Result<(), AppError> {
        let m = self.values.len();
        for i in sample(&mut self.rng, m, k.min(m)) {
            self.values[i] += self.rng.gen_range(1..1000);
            self.cells[i].write(self.values[i]);
        }
        Ok(())
    }

    fn expected(&self) -> Vec<i64> {
        self.assign.iter().map(|&c| self.values[c]).collect()
    }
}
