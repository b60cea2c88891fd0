//! Channel parameters of every landmark seen from the UE's starting pose in
//! the default scenario, and the position recovered by inverting them.
//!
//! cargo run --example channel_geometry

use rfs_slam::geometry::{LandmarkType, UeState};
use rfs_slam::sim::default_scenario;

fn main() -> rfs_slam::Result<()> {
    let scenario = default_scenario();
    let model = scenario.channel_model();
    let ue = UeState::from_slice(&scenario.initial_state);
    println!("UE at {:?}, heading {:.4} rad, bias {} m\n", ue.position.as_slice(), ue.heading, ue.clock_bias);
    println!("type  position                  toa(m)   aoa_az   aoa_el   aod_az   aod_el   p_D   inversion error");
    for lm in scenario.landmarks() {
        let z = model.measure(&ue, &lm)?;
        let back = model.invert(&z, &ue, lm.kind);
        let err = match back {
            Ok(p) => format!("{:.2e} m", (p - lm.position).norm()),
            Err(e) => format!("n/a ({e})"),
        };
        println!(
            "{:<5} [{:>7.1},{:>7.1},{:>5.1}]  {:>8.3} {:>8.4} {:>8.4} {:>8.4} {:>8.4}  {:.2}  {}",
            lm.kind,
            lm.position.x,
            lm.position.y,
            lm.position.z,
            z[0],
            z[1],
            z[2],
            z[3],
            z[4],
            model.detection_probability(&ue, &lm),
            err
        );
    }

    // The same measurement read as a different landmark type lands somewhere else.
    let va = scenario.landmarks().into_iter().find(|l| l.kind == LandmarkType::Va).expect("scenario has VAs");
    let z = model.measure(&ue, &va)?;
    match model.invert(&z, &ue, LandmarkType::Sp) {
        Ok(p) => println!("\nfirst VA read as a scattering point: [{:.2}, {:.2}, {:.2}]", p.x, p.y, p.z),
        Err(e) => println!("\nfirst VA cannot be read as a scattering point: {e}"),
    }
    Ok(())
}
