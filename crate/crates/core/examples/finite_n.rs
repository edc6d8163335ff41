//! Exact enumeration at small N compared with the variational value.

use parisi::finite_n::{default_eps, estimate_f_n, Window};
use parisi::gs::GsPoint;
use parisi::objective::{global_free_energy, ObjectiveOptions};

fn main() -> parisi::Result<()> {
    let point = GsPoint::new(0.5, 0.2)?;
    let prior = point.prior();
    let g = global_free_energy(&prior, &point.xi(), &ObjectiveOptions::default())?;
    println!("P(xi) = {:.6}, u* = {:.4}", g.value, g.u_star);
    for n in [4, 6, 8, 10] {
        let all = estimate_f_n(&prior, point.beta, n, 200, 1, None)?;
        let window = Window {
            u: g.u_star,
            eps: default_eps(n),
        };
        let near = estimate_f_n(&prior, point.beta, n, 200, 1, Some(window))?;
        println!(
            "N = {n:>2}: F_N = {:.6} +- {:.6}, windowed = {:.6} +- {:.6}",
            all.mean, all.stderr, near.mean, near.stderr
        );
    }
    Ok(())
}
