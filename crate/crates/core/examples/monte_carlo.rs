//! Seeded Monte-Carlo campaign on the default scenario, printing the per-step
//! averages and the summary. Optionally writes the full output set.
//!
//! cargo run --release --example monte_carlo -- [runs] [gamma] [ek-pmb|ek-pmbm] [complement|factored] [out_dir]

use rfs_slam::experiment::{run, RunConfig};
use rfs_slam::multimodel::MissedTypeRule;

fn main() -> rfs_slam::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize| args.get(i).map(String::as_str);
    let config = RunConfig {
        mc_runs: arg(0).map_or(20, |s| s.parse().expect("runs must be an integer")),
        gamma: arg(1).map_or(10, |s| s.parse().expect("gamma must be an integer")),
        filter: arg(2).map_or(Ok(Default::default()), str::parse)?,
        missed_type_rule: match arg(3) {
            Some("factored") => MissedTypeRule::Factored,
            _ => MissedTypeRule::Complement,
        },
        out: arg(4).map(Into::into),
        record_timing: true,
        ..RunConfig::default()
    };
    let started = std::time::Instant::now();
    let report = run(&config)?;
    print!("{}", report.metrics_csv());
    println!("{:#?}", report.summary);
    println!("wall time {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}
