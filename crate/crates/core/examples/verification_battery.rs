//! Runs every check suite on a short default schedule and prints the table.
//!
//!     cargo run --release -p acgibbs --example verification_battery

use acgibbs::experiments::{run_verification_battery, ExperimentSchedule};

fn main() {
    let mut s = ExperimentSchedule::default_for(vec![0.5, 0.3, 0.2]);
    s.samples = 2000;
    let report = run_verification_battery(&s).expect("valid schedule");
    report.write_csv(std::io::stdout()).expect("stdout");
    eprintln!("pass: {}, wall time {:.1}s", report.pass, report.provenance.wall_time_s);
}
