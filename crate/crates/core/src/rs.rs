//! Replica-symmetric analysis: the `k = 1` objective, its critical point,
//! the fluctuation function `f(a)` and the resulting stability verdict.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::VARIANCE_EPS;
use crate::model::{MixtureXi, PriorMeasure};
use crate::objective::BOUNDARY_TOL;
use crate::quadrature::{panel_rule_for_scale, GaussHermiteRule};
use crate::util::{brent_root, golden_max, increasing_root, log_sum_exp};

use std::sync::Arc;

/// Numerical settings for the RS routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RsOptions {
    /// Points of the `q` scan used to bracket critical points.
    pub q_scan: usize,
    /// Points of the `a` grid on `[q, u]`.
    pub a_points: usize,
    /// `max f <= confirm_tol` confirms replica symmetry.
    pub confirm_tol: f64,
    /// `max f > detect_tol` reports symmetry breaking.
    pub detect_tol: f64,
    /// Residual bound for a critical point to count as converged.
    pub residual_tol: f64,
}

impl Default for RsOptions {
    fn default() -> Self {
        Self {
            q_scan: 32,
            a_points: 513,
            confirm_tol: 1e-9,
            detect_tol: 1e-6,
            residual_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    RsConfirmed,
    RsbDetected,
    Inconclusive,
}

/// Critical point of `P_1` at fixed `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RsCritical {
    pub q: f64,
    pub lambda: f64,
    pub value: f64,
    /// `(dP_1/dlambda, dP_1/dq)`.
    pub residuals: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RsSolution {
    pub u: f64,
    pub q: f64,
    pub lambda: f64,
    pub value: f64,
    pub residuals: (f64, f64),
    pub f_max: f64,
    pub a_at_max: f64,
    pub at_value: f64,
    pub verdict: Verdict,
    /// `(a, f(a))` on the scan grid.
    pub f_curve: Vec<(f64, f64)>,
}

fn max_abs_sigma(prior: &PriorMeasure) -> f64 {
    prior
        .nodes()
        .iter()
        .map(|a| a.sigma.abs())
        .fold(0.0, f64::max)
}

/// Rule for `E g(sqrt(v) z)` where `g` bends on the scale `1 / max|sigma|`.
fn field_rule(prior: &PriorMeasure, v: f64) -> Option<Arc<GaussHermiteRule>> {
    (v >= VARIANCE_EPS).then(|| panel_rule_for_scale(v.sqrt() * max_abs_sigma(prior)))
}

/// Gaussian average over the field `sqrt(v) z`, collapsing to the single
/// point `0` when `v` vanishes.
fn field_expect(prior: &PriorMeasure, v: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
    match field_rule(prior, v) {
        None => g(0.0),
        Some(rule) => {
            let s = v.sqrt();
            rule.expect(|z| g(s * z))
        }
    }
}

/// Scan points for `q` in `[0, u]`: quadratic spacing plus a few
/// geometric points near zero, where roots appear just past the
/// stability line.
fn q_scan_grid(u: f64, n: usize) -> Vec<f64> {
    let mut qs = vec![0.0, 1e-6 * u, 1e-5 * u, 1e-4 * u];
    qs.extend((1..n).map(|j| u * (j as f64 / (n - 1) as f64).powi(2)));
    qs
}

/// Averages of the single-level Gibbs measure.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RsMoments {
    pub log_z: f64,
    pub mean_sq: f64,
    pub var_sq: f64,
    pub mean_squared: f64,
}

pub(crate) fn moments(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    u: f64,
    q: f64,
    lambda: f64,
) -> RsMoments {
    let v0 = xi.dxi(q);
    let top = lambda + 0.5 * (xi.dxi(u) - v0);
    let mut acc = RsMoments::default();
    let mut run = |x: f64, w: f64| {
        let g = prior.gibbs(x, top);
        acc.log_z += w * g.log_z;
        acc.mean_sq += w * g.mean_sq;
        acc.var_sq += w * g.var_sq;
        acc.mean_squared += w * g.mean * g.mean;
    };
    match field_rule(prior, v0) {
        None => run(0.0, 1.0),
        Some(rule) => {
            let s = v0.sqrt();
            for (z, w) in rule.nodes.iter().zip(&rule.weights) {
                run(s * z, *w);
            }
        }
    }
    acc
}

/// `P_1(q, lambda) = -lambda u - (theta(u) - theta(q))/2 + E log int exp H dnu`
/// with `H(sigma) = sigma z_0 + lambda sigma^2 + sigma^2 (xi'(u) - xi'(q))/2`.
pub fn rs_value(prior: &PriorMeasure, xi: &MixtureXi, u: f64, q: f64, lambda: f64) -> f64 {
    let top = lambda + 0.5 * (xi.dxi(u) - xi.dxi(q));
    let e = field_expect(prior, xi.dxi(q), |x| prior.log_partition(x, top));
    -lambda * u - 0.5 * (xi.theta(u) - xi.theta(q)) + e
}

/// `(dP_1/dlambda, dP_1/dq) = (E<sigma^2> - u, xi''(q) (q - E<sigma>^2) / 2)`.
pub fn rs_residuals(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    u: f64,
    q: f64,
    lambda: f64,
) -> (f64, f64) {
    let mo = moments(prior, xi, u, q, lambda);
    (mo.mean_sq - u, 0.5 * xi.ddxi(q) * (q - mo.mean_squared))
}

/// `lambda` solving `dP_1/dlambda = 0` at fixed `q`.
pub fn rs_lambda(prior: &PriorMeasure, xi: &MixtureXi, u: f64, q: f64, hint: f64) -> Result<f64> {
    let root = increasing_root(
        |lam| {
            let mo = moments(prior, xi, u, q, lam);
            Ok::<_, Error>((mo.mean_sq - u, mo.var_sq))
        },
        hint,
        1e-14,
    )?;
    root.ok_or_else(|| Error::NoConvergence(format!("RS lambda at u = {u}, q = {q}")))
}

/// Critical point of `P_1` with the smallest value.
///
/// When `sigma^2` takes the single value `u`, `lambda` is fixed at 0.
///
/// `lambda(q)` is eliminated exactly and the remaining equation
/// `q = E<sigma>^2` is bracketed on a `q` grid over `[0, u]` (which
/// includes the classical starts `0`, `u/2` and `0.9 u` up to grid
/// spacing) and polished with Brent's method.
pub fn rs_critical_point(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    u: f64,
    opts: &RsOptions,
) -> Result<RsCritical> {
    let (d, big_d) = prior.support_bounds();
    // with a single value of sigma^2 the lambda terms cancel
    let fixed_lambda = big_d - d <= BOUNDARY_TOL && (u - d).abs() <= BOUNDARY_TOL;
    if !fixed_lambda && (u <= d + BOUNDARY_TOL || u >= big_d - BOUNDARY_TOL) {
        return Err(Error::Boundary { u, d, big_d });
    }
    let n = opts.q_scan.max(3);
    let mut hint = 0.0;
    let lambda_at = |q: f64, hint: &mut f64| -> Result<f64> {
        if fixed_lambda {
            return Ok(0.0);
        }
        let lam = rs_lambda(prior, xi, u, q, *hint)?;
        *hint = lam;
        Ok(lam)
    };
    let mut qs = Vec::with_capacity(n);
    let mut rs = Vec::with_capacity(n);
    for q in q_scan_grid(u, n) {
        let lam = lambda_at(q, &mut hint)?;
        let mo = moments(prior, xi, u, q, lam);
        qs.push(q);
        rs.push(q - mo.mean_squared);
    }
    let mut roots = Vec::new();
    let n = qs.len();
    for j in 0..n {
        if rs[j].abs() <= 1e-14 {
            roots.push(qs[j]);
        } else if j + 1 < n && rs[j] * rs[j + 1] < 0.0 {
            let mut h = hint;
            let r = brent_root(
                |q| match lambda_at(q, &mut h) {
                    Ok(lam) => q - moments(prior, xi, u, q, lam).mean_squared,
                    Err(_) => f64::NAN,
                },
                qs[j],
                qs[j + 1],
                1e-15,
                200,
            );
            if let Some(q) = r {
                roots.push(q);
            }
        }
    }
    let mut best: Option<RsCritical> = None;
    for q in roots {
        let lambda = lambda_at(q, &mut hint)?;
        let value = rs_value(prior, xi, u, q, lambda);
        let residuals = rs_residuals(prior, xi, u, q, lambda);
        if best.is_none_or(|b| value < b.value) {
            best = Some(RsCritical {
                q,
                lambda,
                value,
                residuals,
            });
        }
    }
    best.ok_or_else(|| Error::NoConvergence(format!("no RS critical point at u = {u}")))
}

/// Pairs `(sigma, pi_sigma)` of the Gibbs measure at field `x`.
fn tilted_weights(prior: &PriorMeasure, x: f64, top: f64) -> Vec<(f64, f64)> {
    let logs: Vec<f64> = prior
        .nodes()
        .iter()
        .map(|a| a.weight.ln() + a.sigma * x + top * a.sigma * a.sigma)
        .collect();
    let lz = log_sum_exp(logs.iter().copied());
    prior
        .nodes()
        .iter()
        .zip(&logs)
        .map(|(a, l)| (a.sigma, (l - lz).exp()))
        .collect()
}

/// `log Y(y)` with `Y(y) = sum pi_tau exp(tau y - tau^2 v1 / 2)`.
fn log_y(pis: &[(f64, f64)], y: f64, v1: f64) -> f64 {
    log_sum_exp(
        pis.iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|&(t, p)| p.ln() + t * y - 0.5 * t * t * v1),
    )
}

/// The fluctuation function
/// `f(a) = -(theta(a) - theta(q))/2 + E (X/E_1 X) log (X/E_1 X)`.
///
/// With `Y = X / E_1 X` the inner term is `E_1 Y log Y`, evaluated after a
/// change of measure as `sum_sigma pi_sigma E log Y(z_1 + sigma v_1)`.
pub fn rsb_fluctuation(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    u: f64,
    q: f64,
    lambda: f64,
    a: f64,
) -> f64 {
    let v0 = xi.dxi(q);
    let v1 = (xi.dxi(a) - v0).max(0.0);
    let theta = -0.5 * (xi.theta(a) - xi.theta(q));
    if v1 < VARIANCE_EPS {
        return theta;
    }
    let top = lambda + 0.5 * (xi.dxi(u) - v0);
    let inner = field_rule(prior, v1).expect("positive variance");
    let s1 = v1.sqrt();
    let e = field_expect(prior, v0, |x| {
        let pis = tilted_weights(prior, x, top);
        pis.iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|&(sigma, p)| p * inner.expect(|z| log_y(&pis, s1 * z + sigma * v1, v1)))
            .sum()
    });
    theta + e
}

/// The two-level objective
/// `Phi(m, a) = -lambda u - m (theta(a) - theta(q))/2 - (theta(u) - theta(a))/2
///  + (1/m) E log E_1 X^m`.
pub fn rs_perturbation_value(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    u: f64,
    q: f64,
    lambda: f64,
    m: f64,
    a: f64,
) -> f64 {
    let v0 = xi.dxi(q);
    let v1 = (xi.dxi(a) - v0).max(0.0);
    let top = lambda + 0.5 * (xi.dxi(u) - v0);
    let head =
        -lambda * u - 0.5 * m * (xi.theta(a) - xi.theta(q)) - 0.5 * (xi.theta(u) - xi.theta(a));
    let inner = field_rule(prior, v1);
    let s1 = v1.sqrt();
    let e = field_expect(prior, v0, |x| {
        let log_z0 = prior.log_partition(x, top);
        let Some(inner) = &inner else {
            return log_z0;
        };
        let pis = tilted_weights(prior, x, top);
        // E_1 Y^m = sum_sigma pi_sigma E Y(z_1 + sigma v_1)^(m - 1)
        let moment: f64 = pis
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|&(sigma, p)| {
                p * inner.expect(|z| ((m - 1.0) * log_y(&pis, s1 * z + sigma * v1, v1)).exp())
            })
            .sum();
        log_z0 + moment.ln() / m
    });
    head + e
}

/// `f''(q)` from a one-sided five-point stencil on `[q, u]` with one
/// Richardson step.
pub fn at_second_derivative(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    u: f64,
    q: f64,
    lambda: f64,
) -> Result<f64> {
    let curvature = xi.ddxi(u);
    let mut h = (u - q) / 4.0;
    if curvature > 0.0 {
        h = h.min(0.05 / curvature);
    }
    if !(h > 1e-12) {
        return Err(Error::StepUnderflow(format!(
            "q = {q} too close to u = {u}"
        )));
    }
    let f = |a: f64| rsb_fluctuation(prior, xi, u, q, lambda, a);
    let stencil = |h: f64| {
        let fs: Vec<f64> = (0..5).map(|i| f(q + i as f64 * h)).collect();
        (35.0 * fs[0] - 104.0 * fs[1] + 114.0 * fs[2] - 56.0 * fs[3] + 11.0 * fs[4])
            / (12.0 * h * h)
    };
    let coarse = stencil(h);
    let fine = stencil(0.5 * h);
    Ok((8.0 * fine - coarse) / 7.0)
}

/// Maximum of a sampled curve, refined by golden section between the
/// neighbours of the best sample.
fn refine_max(curve: &[(f64, f64)], f: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut best = 0;
    for (i, p) in curve.iter().enumerate() {
        if p.1 > curve[best].1 {
            best = i;
        }
    }
    let (a0, f0) = curve[best];
    if curve.len() < 3 {
        return (a0, f0);
    }
    let lo = curve[best.saturating_sub(1)].0;
    let hi = curve[(best + 1).min(curve.len() - 1)].0;
    let (a, fa) = golden_max(&f, lo, hi, 1e-10 * (1.0 + hi.abs()));
    if fa > f0 {
        (a, fa)
    } else {
        (a0, f0)
    }
}

/// `(a, f(a))` on `points` equally spaced values of `a` in `[q, u]`.
pub fn fluctuation_curve(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    u: f64,
    q: f64,
    lambda: f64,
    points: usize,
) -> Vec<(f64, f64)> {
    let n = points.max(2);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let a = q + (u - q) * i as f64 / (n - 1) as f64;
            (a, rsb_fluctuation(prior, xi, u, q, lambda, a))
        })
        .collect()
}

/// Stability verdict for the replica-symmetric solution at `u`.
pub fn rs_verdict(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    u: f64,
    opts: &RsOptions,
) -> Result<RsSolution> {
    let cp = rs_critical_point(prior, xi, u, opts)?;
    let curve = fluctuation_curve(prior, xi, u, cp.q, cp.lambda, opts.a_points);
    let (a_at_max, f_max) = refine_max(&curve, |a| {
        rsb_fluctuation(prior, xi, u, cp.q, cp.lambda, a)
    });
    let at_value = at_second_derivative(prior, xi, u, cp.q, cp.lambda).unwrap_or(f64::NAN);
    let converged =
        cp.residuals.0.abs() < opts.residual_tol && cp.residuals.1.abs() < opts.residual_tol;
    let verdict = if !converged {
        Verdict::Inconclusive
    } else if f_max <= opts.confirm_tol {
        Verdict::RsConfirmed
    } else if f_max > opts.detect_tol {
        Verdict::RsbDetected
    } else {
        Verdict::Inconclusive
    };
    Ok(RsSolution {
        u,
        q: cp.q,
        lambda: cp.lambda,
        value: cp.value,
        residuals: cp.residuals,
        f_max,
        a_at_max,
        at_value,
        verdict,
        f_curve: curve,
    })
}

/// `a,f` rows.
pub fn f_curve_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("a,f\n");
    for (a, f) in curve {
        out.push_str(&format!("{a},{f}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{EvalOptions, RsbParams};
    use crate::objective::pk_value;
    use approx::assert_abs_diff_eq;

    fn gs(h: f64) -> PriorMeasure {
        PriorMeasure::ghatak_sherrington(h)
    }

    #[test]
    fn value_matches_recursion_and_closed_form() {
        let (beta, h, u, q, lam) = (1.4, 0.3, 0.6, 0.25, -0.7);
        let xi = MixtureXi::sk(beta);
        let v = rs_value(&gs(h), &xi, u, q, lam);
        let p = RsbParams::replica_symmetric(q, u, lam).unwrap();
        let pk = pk_value(&gs(h), &xi, &p, &EvalOptions::default()).unwrap();
        assert_abs_diff_eq!(v, pk, epsilon = 1e-10);
        let (e, _) = crate::quadrature::gaussian_expectation(
            |z| {
                (1.0 + 2.0
                    * (z * beta * q.sqrt()).cosh()
                    * (lam + h + 0.5 * beta * beta * (u - q)).exp())
                .ln()
            },
            1e-15,
        );
        let closed = -lam * u - 0.25 * beta * beta * (u * u - q * q) + e;
        assert_abs_diff_eq!(v, closed, epsilon = 1e-9);
    }

    #[test]
    fn value_is_continuous_at_q_equal_u() {
        let xi = MixtureXi::sk(1.2);
        let a = rs_value(&gs(0.0), &xi, 0.5, 0.5, 0.1);
        let b = rs_value(&gs(0.0), &xi, 0.5, 0.5 - 1e-11, 0.1);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn symmetric_prior_has_paramagnetic_critical_point() {
        let xi = MixtureXi::sk(0.9);
        let (_, rq) = rs_residuals(&gs(0.4), &xi, 0.5, 0.0, -0.3);
        assert_eq!(rq, 0.0);
        let cp = rs_critical_point(&gs(0.0), &xi, 0.5, &RsOptions::default()).unwrap();
        assert_eq!(cp.q, 0.0);
        assert!(cp.residuals.0.abs() < 1e-9 && cp.residuals.1.abs() < 1e-9);
    }

    #[test]
    fn fluctuation_vanishes_at_q() {
        let xi = MixtureXi::sk(2.0);
        assert_eq!(rsb_fluctuation(&gs(0.0), &xi, 0.5, 0.0, -1.0, 0.0), 0.0);
        let sk = PriorMeasure::counting(&[-0.5, 1.0]).unwrap();
        let cp = rs_critical_point(&sk, &MixtureXi::sk(1.5), 0.6, &RsOptions::default());
        // support of sigma^2 is [0.25, 1]
        let cp = cp.unwrap();
        assert!(cp.q > 0.0);
        let f = |a: f64| rsb_fluctuation(&sk, &MixtureXi::sk(1.5), 0.6, cp.q, cp.lambda, a);
        assert_eq!(f(cp.q), 0.0);
        let h = 1e-5;
        let slope = (f(cp.q + h) - f(cp.q)) / h;
        assert!(slope.abs() < 1e-4, "one-sided slope {slope}");
    }

    #[test]
    fn perturbation_reduces_to_rs_value() {
        let xi = MixtureXi::sk(1.3);
        let (u, q, lam) = (0.55, 0.12, -0.4);
        let p1 = rs_value(&gs(0.1), &xi, u, q, lam);
        for a in [0.12, 0.3, 0.55] {
            assert_abs_diff_eq!(
                rs_perturbation_value(&gs(0.1), &xi, u, q, lam, 1.0, a),
                p1,
                epsilon = 1e-10
            );
        }
        for m in [0.1, 0.5, 0.9] {
            assert_abs_diff_eq!(
                rs_perturbation_value(&gs(0.1), &xi, u, q, lam, m, q),
                p1,
                epsilon = 1e-9
            );
        }
        // dPhi/dm at m = 1 is f(a)
        let a = 0.4;
        let eps = 1e-5;
        let d = (rs_perturbation_value(&gs(0.1), &xi, u, q, lam, 1.0, a)
            - rs_perturbation_value(&gs(0.1), &xi, u, q, lam, 1.0 - eps, a))
            / eps;
        let f = rsb_fluctuation(&gs(0.1), &xi, u, q, lam, a);
        assert!((d - f).abs() < 1e-5, "{d} vs {f}");
    }

    #[test]
    fn two_atom_prior_at_high_temperature() {
        let prior = PriorMeasure::sherrington_kirkpatrick(0.0);
        let beta: f64 = 0.8;
        let s = rs_verdict(&prior, &MixtureXi::sk(beta), 1.0, &RsOptions::default()).unwrap();
        assert_eq!(s.q, 0.0);
        assert_eq!(s.lambda, 0.0);
        assert_abs_diff_eq!(s.value, 2f64.ln() + beta * beta / 4.0, epsilon = 1e-12);
        assert_eq!(s.verdict, Verdict::RsConfirmed);
        let low =
            rs_critical_point(&prior, &MixtureXi::sk(1.5), 1.0, &RsOptions::default()).unwrap();
        assert!(low.q > 0.1, "q = {}", low.q);
    }

    #[test]
    fn at_value_matches_closed_form() {
        for &(beta, u) in &[(1.0, 0.5), (17.5, 0.05), (3.0, 0.5)] {
            let xi = MixtureXi::sk(beta);
            let lam = -0.5 * beta * beta * u + (u / (2.0 * (1.0 - u))).ln();
            let v = at_second_derivative(&gs(0.0), &xi, u, 0.0, lam).unwrap();
            let closed = 0.5 * beta * beta * (-1.0 + beta * beta * u * u);
            assert!(
                (v - closed).abs() <= 1e-4 * closed.abs().max(1.0),
                "beta {beta}: {v} vs {closed}"
            );
        }
        let v = at_second_derivative(&gs(0.0), &MixtureXi::zero(), 0.5, 0.0, 0.0).unwrap();
        assert!(v.abs() < 1e-8);
        assert!(at_second_derivative(&gs(0.0), &MixtureXi::sk(1.0), 0.5, 0.5, 0.0).is_err());
    }

    #[test]
    fn verdicts() {
        let opts = RsOptions {
            a_points: 129,
            ..Default::default()
        };
        let s = rs_verdict(&gs(0.0), &MixtureXi::sk(17.5), 0.05, &opts).unwrap();
        assert_eq!(s.verdict, Verdict::RsbDetected);
        assert!(s.at_value < 0.0);
        let s = rs_verdict(&gs(0.0), &MixtureXi::sk(0.1), 0.7, &opts).unwrap();
        assert_eq!(s.verdict, Verdict::RsConfirmed);
        let s = rs_verdict(&gs(0.0), &MixtureXi::zero(), 0.3, &opts).unwrap();
        assert_eq!(s.verdict, Verdict::RsConfirmed);
        assert_eq!(s.f_max, 0.0);
    }

    #[test]
    fn verdict_ignores_prior_scale() {
        let opts = RsOptions {
            a_points: 65,
            ..Default::default()
        };
        let xi = MixtureXi::sk(2.0);
        let base = gs(0.2);
        let scaled = base.scaled(3.5).unwrap();
        let a = rs_verdict(&base, &xi, 0.4, &opts).unwrap();
        let b = rs_verdict(&scaled, &xi, 0.4, &opts).unwrap();
        assert_eq!(a.verdict, b.verdict);
        assert!((a.q - b.q).abs() < 1e-12);
        assert_abs_diff_eq!(b.value - a.value, 3.5f64.ln(), epsilon = 1e-10);
    }
}
