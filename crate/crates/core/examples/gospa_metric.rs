//! GOSPA between small landmark sets, showing how the distance splits into
//! localization, missed and false parts.
//!
//! cargo run --example gospa_metric

use nalgebra::Vector3;
use rfs_slam::eval::{gospa, GospaParams};

fn main() -> rfs_slam::Result<()> {
    let params = GospaParams::default();
    let truth = vec![
        Vector3::new(99.0, 0.0, 10.0),
        Vector3::new(0.0, 99.0, 10.0),
        Vector3::new(-99.0, 0.0, 10.0),
    ];
    let cases: Vec<(&str, Vec<Vector3<f64>>)> = vec![
        ("nothing mapped", vec![]),
        ("one found", vec![Vector3::new(98.5, 0.4, 10.2)]),
        ("two found", vec![Vector3::new(98.5, 0.4, 10.2), Vector3::new(0.3, 99.6, 9.5)]),
        (
            "all found, one false",
            vec![
                Vector3::new(98.5, 0.4, 10.2),
                Vector3::new(0.3, 99.6, 9.5),
                Vector3::new(-99.2, 0.1, 10.0),
                Vector3::new(50.0, 50.0, 10.0),
            ],
        ),
        ("one beyond cut-off", vec![Vector3::new(99.0, 25.0, 10.0)]),
    ];
    println!("cut-off {} m, alpha {}, order {}", params.cutoff, params.alpha, params.order);
    println!("{:<22} {:>8} {:>12} {:>8} {:>8}", "estimate", "GOSPA", "localization", "missed", "false");
    for (name, est) in cases {
        let g = gospa(&est, &truth, &params)?;
        println!(
            "{:<22} {:>8.4} {:>12.4} {:>8} {:>8}",
            name, g.distance, g.localization, g.n_missed, g.n_false
        );
    }
    Ok(())
}
