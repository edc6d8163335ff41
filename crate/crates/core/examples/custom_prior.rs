//! A spin-3/2 prior with a crystal field and a mixed 2+4 interaction.

use parisi::model::{Atom, MixtureXi, PriorMeasure};
use parisi::objective::{global_free_energy, ObjectiveOptions};

fn main() -> parisi::Result<()> {
    let atoms = [-1.5, -0.5, 0.5, 1.5].map(|s| Atom::new(s, 1.0)).to_vec();
    let prior = PriorMeasure::atomic(atoms)?.tilted(|s| -0.3 * s * s)?;
    let xi = MixtureXi::new([(2, 0.4), (4, 0.05)])?;
    let (d, big_d) = prior.support_bounds();
    let opts = ObjectiveOptions {
        k_max: 2,
        scan_points: 9,
        ..ObjectiveOptions::default()
    };
    let g = global_free_energy(&prior, &xi, &opts)?;
    println!("support of sigma^2: [{d}, {big_d}]");
    println!("P(xi) = {:.8} at u* = {:.5}", g.value, g.u_star);
    Ok(())
}
