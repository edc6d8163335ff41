//! `P(xi, u)` for the Ghatak-Sherrington prior across a few self-overlaps,
//! including both edges of the support.

use parisi::model::{MixtureXi, PriorMeasure};
use parisi::objective::{format_value, local_free_energy, ObjectiveOptions};

fn main() -> parisi::Result<()> {
    let prior = PriorMeasure::ghatak_sherrington(0.0);
    let xi = MixtureXi::sk(1.5);
    let opts = ObjectiveOptions {
        k_max: 3,
        ..ObjectiveOptions::default()
    };
    println!(
        "{:>6} {:>16} {:>3} {:>9}",
        "u", "P(xi, u)", "k", "converged"
    );
    for u in [0.0, 0.25, 0.5, 0.75, 0.9, 1.0] {
        let r = local_free_energy(&prior, &xi, u, &opts)?;
        println!(
            "{:>6.3} {:>16} {:>3} {:>9}",
            r.u,
            format_value(r.value),
            r.k_used,
            r.converged
        );
    }
    Ok(())
}
