//! Ranked assignments of a small association cost matrix with the
//! missed-detection/birth layout used by the filter: two tracks, three
//! measurements, births only on the diagonal of the right block.
//!
//! cargo run --example kbest_assignment -- [k]

use nalgebra::DMatrix;
use rfs_slam::assignment::murty;

fn main() -> rfs_slam::Result<()> {
    let k: usize = std::env::args().nth(1).map_or(Ok(8), |s| s.parse()).expect("k must be an integer");
    let inf = f64::INFINITY;
    #[rustfmt::skip]
    let cost = DMatrix::from_row_slice(3, 5, &[
        // track 0, track 1, birth 0, birth 1, birth 2
        1.0, 4.5, 3.0, inf, inf,
        2.5, 0.5, inf, 3.0, inf,
        inf, 2.0, inf, inf, 3.5,
    ]);
    println!("cost matrix (rows = measurements):\n{cost:.1}");
    for (rank, a) in murty(&cost, k)?.iter().enumerate() {
        let text: Vec<String> = a
            .columns
            .iter()
            .enumerate()
            .map(|(row, &col)| if col < 2 { format!("z{row}->track{col}") } else { format!("z{row}->new") })
            .collect();
        println!("#{:<2} cost {:>5.2}  {}", rank + 1, a.cost, text.join("  "));
    }
    Ok(())
}
