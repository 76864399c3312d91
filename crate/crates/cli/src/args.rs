use std::ffi::OsString;

use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Bench {
    Sum,
    Spellcheck,
    Hash,
    List,
    Tree,
    Filter,
    Readers,
    All,
}

impl Bench {
    pub const APPS: [Bench; 7] = [
        Bench::Sum,
        Bench::Spellcheck,
        Bench::Hash,
        Bench::List,
        Bench::Tree,
        Bench::Filter,
        Bench::Readers,
    ];

    /// Default input size.
    pub fn default_n(self, paper_scale: bool) -> usize {
        match (self, paper_scale) {
            (Bench::Sum, false) => 1 << 16,
            (Bench::Spellcheck, false) => 1 << 12,
            (Bench::Hash, false) => 1 << 20,
            (Bench::List, false) => 1 << 14,
            (Bench::Tree, false) => 1 << 12,
            (Bench::Filter, false) => 1 << 12,
            (Bench::Readers, false) => 1 << 16,
            (Bench::Sum, true) => 10_000_000,
            (Bench::Spellcheck, true) => 1_000_000,
            (Bench::Hash, true) => 100_000_000,
            (Bench::List, true) => 1_000_000,
            (Bench::Tree, true) => 1_000_000,
            (Bench::Filter, true) => 10_000_000,
            (Bench::Readers, true) => 1_000_000,
            (Bench::All, _) => unreachable!("expanded before sizing"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// Runs the self-adjusting benchmarks and reports times and trace counters.
#[derive(Clone, Debug, Parser)]
#[command(name = "psac-bench", version)]
pub struct Options {
    /// Benchmark to run.
    #[arg(long, value_enum, default_value_t = Bench::All)]
    pub bench: Bench,
    /// Input size; defaults to a per-benchmark size.
    #[arg(long, value_parser = positive)]
    pub n: Option<usize>,
    /// Update batch sizes, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = positive, default_values_t = [1, 16, 256])]
    pub k: Vec<usize>,
    /// Worker thread counts, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = positive, default_values_t = [1])]
    pub threads: Vec<usize>,
    /// Repetitions per measurement; times are averaged.
    #[arg(long, value_parser = positive, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Chunk size, leaf capacity or cell count, depending on the benchmark.
    #[arg(long, value_parser = positive)]
    pub granularity: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Use the large default input sizes.
    #[arg(long)]
    pub paper_scale: bool,
    /// Also compare each update against the trace-diff oracle.
    #[arg(long)]
    pub trace_check: bool,
}

impl Options {
    pub fn benches(&self) -> Vec<Bench> {
        match self.bench {
            Bench::All => Bench::APPS.to_vec(),
            b => vec![b],
        }
    }
}

/// Parses a full argument vector, program name first.
pub fn parse_args<I, T>(argv: I) -> Result<Options, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Options::try_parse_from(argv)
}
