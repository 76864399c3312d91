use std::process::{Command, Output};

use psac_bench::{RunReport, CSV_HEADER};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psac-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn csv_rows(out: &[u8]) -> Vec<RunReport> {
    let mut r = csv::Reader::from_reader(out);
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
    r.deserialize().map(|row| row.unwrap()).collect()
}

#[test]
fn unknown_bench_is_a_usage_error() {
    let out = bench(&["--bench", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn zero_size_is_a_usage_error() {
    assert_eq!(bench(&["--bench", "sum", "--n", "0"]).status.code(), Some(2));
}

#[test]
fn reader_cells_are_capped_at_workers() {
    let out = bench(&[
        "--bench", "readers", "--n", "8", "--granularity", "9", "--k", "8", "--reps", "1",
        "--format", "csv",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&out.stdout);
    let upd = rows.iter().find(|r| r.phase == "update").unwrap();
    // every cell rewritten, so every worker re-reads
    assert_eq!(upd.affected_readers, 8);
}

#[test]
fn trace_checked_sum_csv() {
    let out = bench(&[
        "--bench", "sum", "--n", "4096", "--k", "1", "--reps", "2", "--format", "csv",
        "--trace-check",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&out.stdout);
    let phases: Vec<&str> = rows.iter().map(|r| r.phase.as_str()).collect();
    assert_eq!(phases, ["baseline", "initial", "update", "gc"]);
    let upd = &rows[2];
    // one leaf plus one combine per level of a 4096-leaf tree
    assert_eq!(upd.affected_readers, 13);
    assert_eq!(upd.k, 1);
    assert!(rows.iter().all(|r| (r.total - r.su * r.ws).abs() < 1e-9));
}

#[test]
fn json_and_csv_agree() {
    let args = ["--bench", "hash", "--n", "4096", "--k", "1,16", "--reps", "1"];
    let csv = bench(&[&args[..], &["--format", "csv"]].concat());
    let json = bench(&[&args[..], &["--format", "json"]].concat());
    assert!(csv.status.success() && json.status.success());
    let a = csv_rows(&csv.stdout);
    let b: Vec<RunReport> = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        let key = |r: &RunReport| {
            (r.benchmark.clone(), r.n, r.k, r.threads, r.phase.clone(), r.affected_readers, r.reexec_work_units, r.tree_nodes, r.tree_height)
        };
        assert_eq!(key(x), key(y));
    }
}

#[test]
fn table_lists_every_app() {
    let out = bench(&["--n", "256", "--k", "1", "--reps", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["sum", "spellcheck", "hash", "list", "tree", "filter", "readers"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
}
