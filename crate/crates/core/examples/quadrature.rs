//! Gaussian expectations by Gauss-Hermite rules.

use parisi::quadrature::{gauss_hermite, gaussian_expectation};

fn main() -> parisi::Result<()> {
    let rule = gauss_hermite(20)?;
    // E cosh(z) = e^{1/2}
    println!(
        "E cosh z    = {:.15} (exact {:.15})",
        rule.expect(f64::cosh),
        0.5f64.exp()
    );
    let (v, order) = gaussian_expectation(|z| (2.0 * z).cos(), 1e-14);
    println!(
        "E cos 2z    = {v:.15} (exact {:.15}, order {order})",
        (-2.0f64).exp()
    );
    println!("E log cosh z = {:.15}", rule.expect(|z| z.cosh().ln()));
    Ok(())
}
