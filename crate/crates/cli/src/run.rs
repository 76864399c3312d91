use std::time::{Duration, Instant};

use psac::{Config, Phase, TraceMetrics};
use psac_apps::{
    checked_update, App, AppError, BenchmarkSpec, FilterBst, ListContraction, ReaderStress,
    Spellcheck, StringHash, Sum, TreeContraction,
};
use thiserror::Error;

use crate::args::{Bench, Options};
use crate::report::{derive_columns, RunReport};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{bench}: {source}")]
    App { bench: &'static str, source: AppError },
    #[error("correctness failure in {bench}: {detail}")]
    Correctness { bench: &'static str, detail: String },
}

impl BenchError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::App {
                source: AppError::Input(_),
                ..
            } => 2,
            _ => 3,
        }
    }
}

/// Deterministic part of one measured phase.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Counters {
    phase: &'static str,
    k: usize,
    affected: u64,
    work: u64,
    nodes: u64,
    height: u64,
}

impl Counters {
    fn of(phase: &'static str, k: usize, m: &TraceMetrics) -> Self {
        Counters {
            phase,
            k,
            affected: m.affected_readers_reexecuted,
            work: m.reexec_work_units,
            nodes: m.tree_nodes,
            height: m.tree_height,
        }
    }
}

fn phase_time(m: &TraceMetrics, p: Phase) -> Duration {
    m.phase_durations.get(&p).copied().unwrap_or_default()
}

struct Runner<'o, A: App> {
    opts: &'o Options,
    spec: BenchmarkSpec,
    _app: std::marker::PhantomData<fn() -> A>,
}

impl<A: App> Runner<'_, A> {
    fn app_err(e: AppError) -> BenchError {
        BenchError::App {
            bench: A::NAME,
            source: e,
        }
    }

    fn mismatch(&self, what: String) -> BenchError {
        BenchError::Correctness {
            bench: A::NAME,
            detail: what,
        }
    }

    fn baseline(&self) -> Result<u64, BenchError> {
        let app = A::build(&self.spec).map_err(Self::app_err)?;
        let mut total = Duration::ZERO;
        for _ in 0..self.opts.reps {
            let t = Instant::now();
            std::hint::black_box(app.expected());
            total += t.elapsed();
        }
        Ok((total / self.opts.reps as u32).as_nanos() as u64)
    }

    /// One repetition at a fixed thread count: counters and times per phase.
    fn repetition(&self, cfg: &Config) -> Result<Vec<(Counters, Duration)>, BenchError> {
        let mut app = A::build(&self.spec).map_err(Self::app_err)?;
        let mut inst = app.run(cfg.clone()).map_err(Self::app_err)?;
        if inst.output() != app.expected() {
            return Err(self.mismatch("initial run differs from the oracle".into()));
        }
        let m = inst.comp.metrics();
        let mut rows = vec![(Counters::of("initial", 0, &m), phase_time(&m, Phase::Run))];
        for &k in &self.opts.k {
            if self.opts.trace_check {
                let check = checked_update(&mut app, &mut inst, k).map_err(Self::app_err)?;
                if !check.consistent() {
                    return Err(self.mismatch(format!("k={k}: trace oracle disagrees: {check:?}")));
                }
            } else {
                app.mutate(k).map_err(Self::app_err)?;
                inst.comp.propagate().map_err(|e| Self::app_err(e.into()))?;
            }
            if inst.output() != app.expected() {
                return Err(self.mismatch(format!("k={k}: propagated output differs from the oracle")));
            }
            let m = inst.comp.metrics();
            rows.push((Counters::of("update", k, &m), phase_time(&m, Phase::Propagate)));
            let t = Instant::now();
            inst.comp.gc_collect();
            let took = t.elapsed();
            let m = inst.comp.metrics();
            let gc = Counters {
                affected: 0,
                work: 0,
                ..Counters::of("gc", k, &m)
            };
            rows.push((gc, took));
        }
        Ok(rows)
    }

    fn run(&self) -> Result<Vec<RunReport>, BenchError> {
        let mut threads = self.opts.threads.clone();
        threads.sort_unstable();
        threads.dedup();
        let mut out = vec![self.report(
            &Counters {
                phase: "baseline",
                k: 0,
                affected: 0,
                work: 0,
                nodes: 0,
                height: 0,
            },
            threads[0],
            self.baseline()?,
        )];
        for &t in &threads {
            let pool = Config::build_pool(t);
            let mut cfg = Config {
                pool: Some(pool.clone()),
                ..Config::threads(t)
            };
            cfg.instrument = self.opts.trace_check;
            let mut first: Option<Vec<Counters>> = None;
            let mut sums: Vec<Duration> = Vec::new();
            for _ in 0..self.opts.reps {
                // Driving from inside the pool keeps the hand-off to a
                // worker thread out of the measured phases.
                let rows = pool.install(|| self.repetition(&cfg))?;
                let counters: Vec<Counters> = rows.iter().map(|r| r.0.clone()).collect();
                match &first {
                    None => {
                        sums = vec![Duration::ZERO; rows.len()];
                        first = Some(counters);
                    }
                    Some(f) if *f != counters => {
                        return Err(self.mismatch("counters differ between repetitions".into()));
                    }
                    Some(_) => {}
                }
                for (s, r) in sums.iter_mut().zip(&rows) {
                    *s += r.1;
                }
            }
            for (c, s) in first.unwrap_or_default().iter().zip(&sums) {
                out.push(self.report(c, t, (*s / self.opts.reps as u32).as_nanos() as u64));
            }
        }
        Ok(out)
    }

    fn report(&self, c: &Counters, threads: usize, time_ns: u64) -> RunReport {
        RunReport {
            benchmark: A::NAME.to_string(),
            n: self.spec.n,
            k: c.k,
            threads,
            phase: c.phase.to_string(),
            time_ns,
            affected_readers: c.affected,
            reexec_work_units: c.work,
            tree_nodes: c.nodes,
            tree_height: c.height,
            su: 0.0,
            ws: 0.0,
            total: 0.0,
        }
    }
}

fn run_app<A: App>(opts: &Options, bench: Bench) -> Result<Vec<RunReport>, BenchError> {
    let spec = BenchmarkSpec {
        n: opts.n.unwrap_or_else(|| bench.default_n(opts.paper_scale)),
        seed: opts.seed,
        granularity: opts.granularity,
    };
    Runner::<A> {
        opts,
        spec,
        _app: std::marker::PhantomData,
    }
    .run()
}

/// Runs every selected benchmark; every phase is checked against the
/// sequential oracle before it is reported.
pub fn run_benchmark(opts: &Options) -> Result<Vec<RunReport>, BenchError> {
    let mut out = Vec::new();
    for b in opts.benches() {
        out.extend(match b {
            Bench::Sum => run_app::<Sum>(opts, b)?,
            Bench::Spellcheck => run_app::<Spellcheck>(opts, b)?,
            Bench::Hash => run_app::<StringHash>(opts, b)?,
            Bench::List => run_app::<ListContraction>(opts, b)?,
            Bench::Tree => run_app::<TreeContraction>(opts, b)?,
            Bench::Filter => run_app::<FilterBst>(opts, b)?,
            Bench::Readers => run_app::<ReaderStress>(opts, b)?,
            Bench::All => unreachable!("expanded by Options::benches"),
        });
    }
    derive_columns(&mut out);
    Ok(out)
}
