//! Evaluates the discrete Parisi functional for explicit order parameters.

use parisi::functional::{parisi_value, EvalOptions, RsbParams};
use parisi::model::{MixtureXi, PriorMeasure};
use parisi::objective::pk_value;

fn main() -> parisi::Result<()> {
    let prior = PriorMeasure::ghatak_sherrington(0.2);
    let xi = MixtureXi::new([(2, 0.5), (4, 0.1)])?;
    let params = RsbParams::new(
        vec![0.0, 0.3, 0.7, 1.0],
        vec![0.0, 0.1, 0.3, 0.5, 0.6],
        -0.4,
    )?;
    let opts = EvalOptions::default();

    let ev = parisi_value(&prior, &xi, &params, &opts)?;
    println!("X_0            = {:.12}", ev.x0);
    println!("dX_0/dlambda   = {:.12}", ev.dx0_dlambda);
    println!("d2X_0/dlambda2 = {:.12}", ev.d2x0_dlambda2);
    println!(
        "Gauss-Hermite order {} (settled: {})",
        ev.order, ev.order_converged
    );
    println!(
        "P_k            = {:.12}",
        pk_value(&prior, &xi, &params, &opts)?
    );
    Ok(())
}
