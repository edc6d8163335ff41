//! The paramagnetic solution at beta = 17.5, u = 0.05 satisfies the
//! Almeida-Thouless condition, yet the fluctuation function turns positive.

use parisi::gs::{gs_f_curve, gs_f_max, gs_u0};

fn main() {
    let (beta, u) = (17.5, 0.05);
    let at = 0.5 * beta * beta * (-1.0 + beta * beta * u * u);
    println!("beta u = {}, f''(0) = {at:.4}", beta * u);
    for (a, f) in gs_f_curve(beta, u, 11) {
        println!("  a = {a:.4}  f = {f:+.6e}");
    }
    let (a, f) = gs_f_max(beta, u, 513);
    println!("max f = {f:.6e} at a = {a:.5}");
    println!("largest stable u: u0 = {:.6}", gs_u0(beta));
}
