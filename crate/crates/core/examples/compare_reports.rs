//! Two short campaigns (gamma = 1 and gamma = 10) on the default scenario,
//! compared side by side.
//!
//! cargo run --release --example compare_reports -- [runs]

use rfs_slam::experiment::{compare, run_campaign, RunConfig};

fn main() -> rfs_slam::Result<()> {
    let runs: usize = std::env::args().nth(1).map_or(Ok(10), |s| s.parse()).expect("runs must be an integer");
    let reports = [1, 10]
        .into_iter()
        .map(|gamma| run_campaign(&RunConfig { gamma, mc_runs: runs, record_timing: true, ..RunConfig::default() }, &()))
        .collect::<rfs_slam::Result<Vec<_>>>()?;
    let table = compare(&reports)?;
    print!("{}", table.to_text());
    println!();
    print!("{}", table.to_csv());
    Ok(())
}
