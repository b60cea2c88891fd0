//! Runs the filter for a few steps, writes the map density to JSON, reads it
//! back and continues from the checkpoint.
//!
//! cargo run --release --example density_checkpoint -- [steps] [file]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfs_slam::density::PmbmDensity;
use rfs_slam::experiment::{initial_filter_state, RunConfig};
use rfs_slam::sim::{generate_measurements, simulate_trajectory};
use rfs_slam::update::Filter;

fn main() -> rfs_slam::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(10), |s| s.parse()).expect("steps must be an integer");
    let path = args.next().unwrap_or_else(|| std::env::temp_dir().join("rfs-slam-density.json").display().to_string());

    let config = RunConfig::default();
    let scenario = config.load_scenario()?;
    let filter_config = config.filter_config(&scenario);
    let (density, sensor) = initial_filter_state(&scenario, &filter_config)?;
    let mut filter = Filter::new(scenario.channel_model(), filter_config, density, sensor)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = simulate_trajectory(&scenario, &mut rng);
    for ue in truth.iter().skip(1).take(steps) {
        let scan = generate_measurements(ue, &scenario, &mut rng)?;
        filter.step(&scan.measurements)?;
    }

    let text = filter.density.to_json()?;
    std::fs::write(&path, &text).map_err(|e| rfs_slam::SlamError::io(&path, e))?;
    let restored = PmbmDensity::from_json(&std::fs::read_to_string(&path).map_err(|e| rfs_slam::SlamError::io(&path, e))?)?;
    restored.validate()?;
    println!("wrote {} ({} bytes) after {steps} steps", path, text.len());
    println!(
        "hypotheses {}, expected landmarks {:.3}, restored copy identical: {}",
        restored.hypotheses.len(),
        restored.expected_count(),
        restored.to_json()? == text
    );
    for b in &restored.best_hypothesis().expect("density has a hypothesis").bernoullis {
        let d = b.belief.dominant();
        let m = &d.gaussian.mean;
        println!("  r={:.3} {} psi={:.3} at [{:.1}, {:.1}, {:.1}]", b.existence, d.kind, d.psi, m[0], m[1], m[2]);
    }
    Ok(())
}
