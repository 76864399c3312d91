use std::io::{self, Write};
use std::process::ExitCode;

use psac_bench::{emit_report, parse_args, run_benchmark};

fn main() -> ExitCode {
    let opts = match parse_args(std::env::args_os()) {
        Ok(o) => o,
        Err(e) => e.exit(),
    };
    let reports = match run_benchmark(&opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let mut out = io::stdout().lock();
    if let Err(e) = emit_report(&reports, opts.format, &mut out).and_then(|_| out.flush()) {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
