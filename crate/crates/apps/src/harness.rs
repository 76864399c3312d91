use std::fmt::Debug;

use psac::{affected_readers, distance_sides, Computation, Config, OracleError, SacError};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchmarkSpec {
    pub n: usize,
    pub seed: u64,
    /// Chunk size, leaf capacity or cell count, depending on the app.
    pub granularity: Option<usize>,
}

impl BenchmarkSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        BenchmarkSpec {
            n,
            seed,
            granularity: None,
        }
    }

    pub fn with_granularity(mut self, g: usize) -> Self {
        self.granularity = Some(g);
        self
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AppError {
    #[error(transparent)]
    Engine(#[from] SacError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("trace comparison failed: {0}")]
    Oracle(OracleError),
}

/// A running self-adjusting instance and a way to read its output.
pub struct Instance<O> {
    pub comp: Computation,
    read: Box<dyn Fn() -> O + Send + Sync>,
}

impl<O> Instance<O> {
    pub fn new(comp: Computation, read: impl Fn() -> O + Send + Sync + 'static) -> Self {
        Instance {
            comp,
            read: Box::new(read),
        }
    }

    pub fn output(&self) -> O {
        (self.read)()
    }
}

pub trait App: Send + Sized {
    type Output: Clone + PartialEq + Debug + Send;

    const NAME: &'static str;

    fn build(spec: &BenchmarkSpec) -> Result<Self, AppError>;

    /// Runs the self-adjusting program from scratch over the current input.
    fn run(&self, cfg: Config) -> Result<Instance<Self::Output>, AppError>;

    /// Writes a batch of `k` random input changes.
    fn mutate(&mut self, k: usize) -> Result<(), AppError>;

    /// Output computed by a plain sequential algorithm over the current input.
    fn expected(&self) -> Self::Output;

    /// Whether recorded read values are plain data, so a fresh run on the
    /// new input can serve as the comparison trace. Apps whose reads record
    /// handles compare against the propagated trace instead.
    fn plain_reads(&self) -> bool {
        true
    }
}

/// Live propagation counters next to the trace-diff oracle for one update.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateCheck {
    /// Old-side ids of the oracle's affected readers, sorted.
    pub affected: Vec<u64>,
    /// Ids of the readers propagation re-executed, sorted.
    pub reexecuted: Vec<u64>,
    /// Visited node ids that are neither affected readers nor their ancestors.
    pub stray_visits: Vec<u64>,
    /// Distance split into old-side and new-side work.
    pub distance: (u64, u64),
    pub reexec_work_units: u64,
}

impl UpdateCheck {
    pub fn consistent(&self) -> bool {
        self.affected == self.reexecuted
            && self.stray_visits.is_empty()
            && self.distance.1 == self.reexec_work_units
    }
}

/// Mutates, propagates and compares against the trace-diff oracle. The
/// instance must be instrumented.
///
/// The comparison trace is a fresh run on the new input when
/// [`App::plain_reads`] holds, and the propagated trace otherwise.
pub fn checked_update<A: App>(
    app: &mut A,
    inst: &mut Instance<A::Output>,
    k: usize,
) -> Result<UpdateCheck, AppError> {
    let before = inst.comp.snapshot();
    app.mutate(k)?;
    let fresh = if app.plain_reads() {
        Some(app.run(Config::default())?.comp.snapshot())
    } else {
        None
    };
    inst.comp.propagate()?;
    let after = fresh.unwrap_or_else(|| inst.comp.snapshot());
    let pairs = affected_readers(&before, &after).map_err(AppError::Oracle)?;
    let mut affected: Vec<u64> = pairs.iter().map(|p| p.old).collect();
    affected.sort_unstable();
    let mut reexecuted = inst.comp.reexecuted();
    reexecuted.sort_unstable();
    let allowed = before.with_ancestors(&affected);
    let mut stray_visits: Vec<u64> = inst
        .comp
        .visit_log()
        .iter()
        .map(|e| e.node)
        .filter(|id| !allowed.contains(id))
        .collect();
    stray_visits.sort_unstable();
    stray_visits.dedup();
    let distance = distance_sides(&before, &after).map_err(AppError::Oracle)?;
    Ok(UpdateCheck {
        affected,
        reexecuted,
        stray_visits,
        distance,
        reexec_work_units: inst.comp.metrics().reexec_work_units,
    })
}
