//! A coarse Ghatak-Sherrington phase diagram printed as a character map
//! (rows: 1/beta decreasing downwards, columns: h/beta increasing).

use parisi::gs::{gs_phase_diagram, PhaseGrid, Region};

fn main() -> parisi::Result<()> {
    let grid = PhaseGrid {
        columns: 17,
        rows: 12,
        ..PhaseGrid::default()
    };
    let points = gs_phase_diagram(&grid)?;
    for row in (0..grid.rows).rev() {
        let line: String = (0..grid.columns)
            .map(|c| match points[row * grid.columns + c].region {
                Region::R1 => '.',
                Region::R2 => '2',
                Region::R3 => '3',
                Region::Unresolved => '?',
            })
            .collect();
        println!("{:>5.2} {line}", grid.inv_beta_at(row));
    }
    println!(
        "      h/beta from {} to {}",
        grid.h_over_beta.0, grid.h_over_beta.1
    );
    Ok(())
}
