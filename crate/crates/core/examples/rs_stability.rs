//! Replica-symmetric critical point and the sign of the fluctuation
//! function for the two-spin prior on both sides of beta = 1.

use parisi::model::{MixtureXi, PriorMeasure};
use parisi::rs::{rs_verdict, RsOptions};

fn main() -> parisi::Result<()> {
    let prior = PriorMeasure::sherrington_kirkpatrick(0.0);
    let opts = RsOptions {
        a_points: 129,
        ..RsOptions::default()
    };
    for beta in [0.8, 1.5] {
        let s = rs_verdict(&prior, &MixtureXi::sk(beta), 1.0, &opts)?;
        println!(
            "beta {beta}: q = {:.6}, P_1 = {:.10}, max f = {:.3e} at a = {:.4}, {:?}",
            s.q, s.value, s.f_max, s.a_at_max, s.verdict
        );
    }
    println!("log 2 + 0.8^2/4 = {:.10}", 2f64.ln() + 0.16);
    Ok(())
}
