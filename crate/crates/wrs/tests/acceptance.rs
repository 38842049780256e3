//! Full-size acceptance battery. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use wrs::validate::{run_criterion, Options, Scale, CRITERIA};

fn main() -> ExitCode {
    let threads = std::thread::available_parallelism().map_or(8, |n| n.get().max(8));
    let opts = Options {
        scale: Scale::Full,
        threads,
        ..Options::default()
    };
    let mut failed = Vec::new();
    println!("\nrunning {} acceptance criteria", CRITERIA.len());
    for (id, _) in CRITERIA {
        let start = Instant::now();
        let outcome = run_criterion(id, &opts).unwrap();
        println!("{outcome} ({:.1}s)", start.elapsed().as_secs_f64());
        if !outcome.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed\n", CRITERIA.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}\n");
        ExitCode::FAILURE
    }
}
