//! One simulated drive around the default scenario, printing the per-step
//! sensor error and mapping GOSPA.
//!
//! cargo run --release --example single_run -- [seed] [gamma] [ek-pmb|ek-pmbm]

use rfs_slam::experiment::{run_once, RunConfig};

fn main() -> rfs_slam::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse()).expect("seed must be an integer");
    let gamma: usize = args.next().map_or(Ok(10), |s| s.parse()).expect("gamma must be an integer");
    let filter = args.next().map_or(Ok(Default::default()), |s| s.parse())?;

    let config = RunConfig { gamma, filter, ..RunConfig::default() };
    let scenario = config.load_scenario()?;
    let filter_config = config.filter_config(&scenario);
    let rec = run_once(&scenario, &filter_config, 0, seed, true, &())?;

    println!("step  pos_err  head_err  bias_err  gospa_va  gospa_sp  ms");
    for k in 0..rec.estimates.len() {
        let (e, t) = (rec.estimates[k], rec.truth[k]);
        let pos = ((e[0] - t[0]).powi(2) + (e[1] - t[1]).powi(2) + (e[2] - t[2]).powi(2)).sqrt();
        println!(
            "{:>4}  {:>7.3}  {:>8.4}  {:>8.3}  {:>8.3}  {:>8.3}  {:>5.1}",
            k + 1,
            pos,
            rfs_slam::eval::heading_error(e[3], t[3]),
            e[4] - t[4],
            rec.gospa_va[k],
            rec.gospa_sp[k],
            rec.ms_predict[k] + rec.ms_update[k],
        );
    }
    Ok(())
}
