//! `P(xi) = sup_u P(xi, u)` and the maximizing self-overlap at a few
//! temperatures of the Ghatak-Sherrington model.

use std::time::Instant;

use parisi::model::{MixtureXi, PriorMeasure};
use parisi::objective::{global_free_energy, ObjectiveOptions};

fn main() -> parisi::Result<()> {
    let prior = PriorMeasure::ghatak_sherrington(0.0);
    let opts = ObjectiveOptions::default();
    println!(
        "{:>5} {:>14} {:>10} {:>8}",
        "beta", "P(xi)", "u*", "seconds"
    );
    for beta in [0.0, 0.5, 1.0] {
        let start = Instant::now();
        let g = global_free_energy(&prior, &MixtureXi::sk(beta), &opts)?;
        println!(
            "{beta:>5.2} {:>14.10} {:>10.6} {:>8.2}",
            g.value,
            g.u_star,
            start.elapsed().as_secs_f64()
        );
    }
    println!("log 3 = {:.10}", 3f64.ln());
    Ok(())
}
