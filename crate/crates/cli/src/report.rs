use std::collections::HashMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::args::Format;

pub const CSV_HEADER: [&str; 13] = [
    "benchmark",
    "n",
    "k",
    "threads",
    "phase",
    "time_ns",
    "affected_readers",
    "reexec_work_units",
    "tree_nodes",
    "tree_height",
    "su",
    "ws",
    "total",
];

/// One measured phase. `k` is 0 for the baseline and initial phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub benchmark: String,
    pub n: usize,
    pub k: usize,
    pub threads: usize,
    pub phase: String,
    pub time_ns: u64,
    pub affected_readers: u64,
    pub reexec_work_units: u64,
    pub tree_nodes: u64,
    pub tree_height: u64,
    /// Speedup over the smallest thread count.
    pub su: f64,
    /// Baseline time over the time at the smallest thread count.
    pub ws: f64,
    pub total: f64,
}

/// Fills `su`, `ws` and `total` from the measured times.
pub fn derive_columns(reports: &mut [RunReport]) {
    let mut fewest: HashMap<(String, usize, usize, String), (usize, u64)> = HashMap::new();
    let mut baseline: HashMap<(String, usize), u64> = HashMap::new();
    for r in reports.iter() {
        let key = (r.benchmark.clone(), r.n, r.k, r.phase.clone());
        let e = fewest.entry(key).or_insert((r.threads, r.time_ns));
        if r.threads < e.0 {
            *e = (r.threads, r.time_ns);
        }
        if r.phase == "baseline" {
            baseline.insert((r.benchmark.clone(), r.n), r.time_ns);
        }
    }
    for r in reports.iter_mut() {
        if r.phase == "baseline" {
            (r.su, r.ws, r.total) = (1.0, 1.0, 1.0);
            continue;
        }
        let t1 = fewest[&(r.benchmark.clone(), r.n, r.k, r.phase.clone())].1.max(1) as f64;
        let t = r.time_ns.max(1) as f64;
        r.su = t1 / t;
        r.ws = baseline
            .get(&(r.benchmark.clone(), r.n))
            .map_or(f64::NAN, |&b| b.max(1) as f64 / t1);
        r.total = r.su * r.ws;
    }
}

fn human(ns: u64) -> String {
    match ns {
        0..=9_999 => format!("{ns}ns"),
        10_000..=9_999_999 => format!("{:.1}us", ns as f64 / 1e3),
        10_000_000..=9_999_999_999 => format!("{:.1}ms", ns as f64 / 1e6),
        _ => format!("{:.2}s", ns as f64 / 1e9),
    }
}

pub fn emit_report(reports: &[RunReport], format: Format, out: &mut dyn Write) -> io::Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(CSV_HEADER)?;
            for r in reports {
                w.serialize(r)?;
            }
            w.flush()
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, reports)?;
            writeln!(out)
        }
        Format::Table => {
            writeln!(
                out,
                "{:<11} {:>10} {:>7} {:>4} {:<8} {:>10} {:>10} {:>12} {:>10} {:>6} {:>8} {:>10} {:>10}",
                "benchmark", "n", "k", "thr", "phase", "time", "R", "W", "nodes", "height", "SU", "WS", "T"
            )?;
            for r in reports {
                writeln!(
                    out,
                    "{:<11} {:>10} {:>7} {:>4} {:<8} {:>10} {:>10} {:>12} {:>10} {:>6} {:>8.2} {:>10.2} {:>10.2}",
                    r.benchmark,
                    r.n,
                    r.k,
                    r.threads,
                    r.phase,
                    human(r.time_ns),
                    r.affected_readers,
                    r.reexec_work_units,
                    r.tree_nodes,
                    r.tree_height,
                    r.su,
                    r.ws,
                    r.total
                )?;
            }
            Ok(())
        }
    }
}
