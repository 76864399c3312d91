//! Divide-and-conquer sum over an array of cells.

use std::sync::Arc;

use psac::{Computation, Config, Ctx, Mod, Result};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::harness::{App, AppError, BenchmarkSpec, Instance};
use crate::reduce::{reduce, Reduce};

pub struct Sum {
    values: Vec<i64>,
    cells: Arc<Vec<Mod<i64>>>,
    rng: ChaCha8Rng,
}

struct Add(Arc<Vec<Mod<i64>>>);

impl Reduce for Add {
    type Out = i64;

    fn leaf(&self, cx: &mut Ctx<'_>, i: usize, dest: Mod<i64>) -> Result<()> {
        cx.read(&self.0[i], move |cx, v| cx.write(&dest, *v))
    }

    fn combine(&self, l: &i64, r: &i64, _: usize, _: usize, _: usize) -> i64 {
        l + r
    }
}

impl Sum {
    pub fn from_values(values: Vec<i64>, seed: u64) -> Self {
        let cells = Arc::new(values.iter().map(|&v| Mod::with(v)).collect());
        Sum {
            values,
            cells,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        }
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    /// Sets one input element.
    pub fn set(&mut self, i: usize, v: i64) {
        self.values[i] = v;
        self.cells[i].write(v);
    }
}

impl App for Sum {
    type Output = i64;
    const NAME: &'static str = "sum";

    fn build(spec: &BenchmarkSpec) -> Result<Self, AppError> {
        if spec.n == 0 {
            return Err(AppError::Input("sum needs at least one element".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let values = (0..spec.n).map(|_| rng.gen_range(-1_000_000..=1_000_000)).collect();
        Ok(Sum::from_values(values, spec.seed))
    }

    fn run(&self, cfg: Config) -> Result<Instance<i64>, AppError> {
        let res = Mod::new();
        let (cells, r2, n) = (self.cells.clone(), res.clone(), self.values.len());
        let comp = Computation::run(cfg, move |cx| reduce(cx, Arc::new(Add(cells)), 0, n, r2))?;
        Ok(Instance::new(comp, move || res.get().expect("sum written")))
    }

    fn mutate(&mut self, k: usize) -> Result<(), AppError> {
        let n = self.values.len();
        for i in sample(&mut self.rng, n, k.min(n)) {
            let delta = self.rng.gen_range(1..=1000) * if self.rng.gen() { 1 } else { -1 };
            let v = self.values[i] + delta;
            self.set(i, v);
        }
        Ok(())
    }

    fn expected(&self) -> i64 {
        self.values.iter().sum()
    }
}
