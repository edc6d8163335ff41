//! Closed forms for the Ghatak-Sherrington model: spins in `{-1, 0, 1}`,
//! crystal field `h sigma^2` and the SK mixture `xi(q) = beta^2 q^2 / 2`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MixtureXi, PriorMeasure};
use crate::quadrature::{gaussian_expectation, panel_rule_for_scale};
use crate::rs::{moments, rs_critical_point, RsOptions};
use crate::util::{brent_root, golden_max, log_sum_exp};

/// Ghatak-Sherrington parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsPoint {
    pub beta: f64,
    pub h: f64,
}

impl GsPoint {
    /// `beta = 0` is accepted: the spins decouple and every closed form
    /// below has a finite limit there.
    pub fn new(beta: f64, h: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite() && h.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "GS point needs beta >= 0 and finite h, got beta = {beta}, h = {h}"
            )));
        }
        Ok(Self { beta, h })
    }

    pub fn prior(&self) -> PriorMeasure {
        PriorMeasure::ghatak_sherrington(self.h)
    }

    pub fn xi(&self) -> MixtureXi {
        MixtureXi::sk(self.beta)
    }
}

/// Paramagnetic value together with a flag marking the endpoints
/// `u = 0` and `u = 1`, where the limit is returned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PmValue {
    pub value: f64,
    pub boundary: bool,
}

/// `PM(u) = h u + beta^2 u^2 / 4 + u log(2/u) + (1-u) log(1/(1-u))`.
pub fn gs_pm(point: GsPoint, u: f64) -> Result<PmValue> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidParams(format!(
            "PM(u) needs u in [0, 1], got {u}"
        )));
    }
    let GsPoint { beta, h } = point;
    if u == 0.0 {
        return Ok(PmValue {
            value: 0.0,
            boundary: true,
        });
    }
    if u == 1.0 {
        return Ok(PmValue {
            value: h + 0.25 * beta * beta + std::f64::consts::LN_2,
            boundary: true,
        });
    }
    let value = h * u + 0.25 * beta * beta * u * u + u * (2.0 / u).ln() - (1.0 - u) * (-u).ln_1p();
    Ok(PmValue {
        value,
        boundary: false,
    })
}

/// `dPM/du = h + beta^2 u / 2 + log(2 (1-u) / u)`.
pub fn gs_pm_slope(point: GsPoint, u: f64) -> f64 {
    point.h + 0.5 * point.beta * point.beta * u + (2.0 * (1.0 - u) / u).ln()
}

/// The multiplier minimizing `P_1(0, lambda)`:
/// `lambda = log(u / (2 (1-u))) - h - beta^2 u / 2`.
pub fn gs_pm_lambda(point: GsPoint, u: f64) -> f64 {
    (u / (2.0 * (1.0 - u))).ln() - point.h - 0.5 * point.beta * point.beta * u
}

/// Location and value of the maximum of `PM` on `(0, 1)`; ties go to the
/// smaller `u`.
pub fn gs_pm_argmax(point: GsPoint) -> (f64, f64) {
    // the slope is +inf at 0 and -inf at 1, so the maximum is interior
    let pm = |u: f64| {
        gs_pm(point, u)
            .map(|p| p.value)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let n = 1000;
    let us: Vec<f64> = (1..n).map(|j| j as f64 / n as f64).collect();
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (j, &u) in us.iter().enumerate() {
        let v = pm(u);
        if v > best_v {
            best = j;
            best_v = v;
        }
    }
    let lo = if best == 0 { 1e-12 } else { us[best - 1] };
    let hi = if best + 1 == us.len() {
        1.0 - 1e-12
    } else {
        us[best + 1]
    };
    let (u, v) = golden_max(pm, lo, hi, 1e-12);
    if v >= best_v {
        (u, v)
    } else {
        (us[best], best_v)
    }
}

/// `log Y(y)` with `Y(y) = 1 - u + u e^{-c^2/2} cosh(c y)`.
fn log_y(u: f64, c: f64, y: f64) -> f64 {
    let half = (0.5 * u).ln() - 0.5 * c * c;
    log_sum_exp([(-u).ln_1p(), half + c * y, half - c * y])
}

/// The fluctuation function of the paramagnetic RS solution:
/// `f(a) = -beta^2 a^2 / 4 + E Y log Y` with `Y` as in [`gs_identity_check`],
/// scaled by `u` and shifted by `1 - u`.
///
/// Evaluated as `(1-u) E log Y(z) + u E log Y(z + c)` with
/// `c = beta sqrt(a)`, which removes the exponentially large weights from
/// the integrand.
pub fn gs_f(beta: f64, u: f64, a: f64) -> f64 {
    let c = beta * a.sqrt();
    let base = -0.25 * beta * beta * a * a;
    if c == 0.0 || u == 0.0 {
        return base;
    }
    let rule = panel_rule_for_scale(c);
    let e = rule.expect(|z| (1.0 - u) * log_y(u, c, z) + u * log_y(u, c, z + c));
    base + e
}

/// `E e^{-beta^2 a / 2} cosh(z beta sqrt(a))`, which equals 1.
pub fn gs_identity_check(beta: f64, a: f64) -> f64 {
    let c = beta * a.sqrt();
    if c == 0.0 {
        return 1.0;
    }
    let (v, _) = gaussian_expectation(
        |z| 0.5 * ((c * z - 0.5 * c * c).exp() + (-c * z - 0.5 * c * c).exp()),
        1e-15,
    );
    v
}

/// Maximum of `a -> gs_f(beta, u, a)` over `(0, u]`: a scan of `points`
/// followed by golden-section refinement around the best one.
pub fn gs_f_max(beta: f64, u: f64, points: usize) -> (f64, f64) {
    gs_f_max_until(beta, u, points, f64::INFINITY)
}

/// As [`gs_f_max`], returning early once a value above `stop` is seen.
fn gs_f_max_until(beta: f64, u: f64, points: usize, stop: f64) -> (f64, f64) {
    let n = points.max(2);
    let mut best = (0.0, 0.0);
    let mut best_j = 0;
    for j in 1..=n {
        let a = u * j as f64 / n as f64;
        let f = gs_f(beta, u, a);
        if f > best.1 {
            best = (a, f);
            best_j = j;
            if f > stop {
                return best;
            }
        }
    }
    if best_j == 0 {
        return best;
    }
    let step = u / n as f64;
    let lo = (best.0 - step).max(0.0);
    let hi = (best.0 + step).min(u);
    let refined = golden_max(|a| gs_f(beta, u, a), lo, hi, 1e-10 * u.max(1e-300));
    if refined.1 > best.1 {
        refined
    } else {
        best
    }
}

/// Tolerance for `max f <= 0` in [`gs_u0`].
pub const U0_TOL: f64 = 1e-13;

/// Whether the paramagnetic RS solution at self-overlap `u` is stable:
/// `beta u <= 1` and `max_a f(a) <= 0`.
pub fn gs_is_stable(beta: f64, u: f64) -> bool {
    beta * u <= 1.0 && gs_f_max_until(beta, u, 64, U0_TOL).1 <= U0_TOL
}

/// The largest `u` for which the paramagnetic solution is stable, located
/// by bisection to `1e-6`. Results are cached per `beta`.
///
/// The stability predicate is monotone in `u` since `f` is nondecreasing
/// in `u`; the explicit `beta u <= 1` test pins down the behaviour near
/// `a = 0` where `f` is second order small.
pub fn gs_u0(beta: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&u0) = cache.lock().unwrap().get(&beta.to_bits()) {
        return u0;
    }
    let u0 = if gs_is_stable(beta, 1.0) {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if gs_is_stable(beta, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo == 0.0 {
            0.0
        } else {
            0.5 * (lo + hi)
        }
    };
    cache.lock().unwrap().insert(beta.to_bits(), u0);
    u0
}

/// A stationary point of the RS value in `u` (so `lambda = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RsSaddle {
    pub u: f64,
    pub q: f64,
    pub lambda: f64,
    pub value: f64,
    pub converged: bool,
}

/// Residuals `(E<sigma^2> - u, E<sigma>^2 - q)` at `lambda = 0`.
fn saddle_residual(prior: &PriorMeasure, xi: &MixtureXi, u: f64, q: f64) -> (f64, f64) {
    let mo = moments(prior, xi, u, q, 0.0);
    (mo.mean_sq - u, mo.mean_squared - q)
}

/// Damped Newton on [`saddle_residual`] inside `0 < q < u < 1`.
fn saddle_newton(prior: &PriorMeasure, xi: &MixtureXi, start: (f64, f64)) -> Option<(f64, f64)> {
    let inside = |u: f64, q: f64| u > 0.0 && u < 1.0 && q > 0.0 && q < u;
    let (mut u, mut q) = start;
    let mut r = saddle_residual(prior, xi, u, q);
    for _ in 0..60 {
        let norm = r.0.hypot(r.1);
        if norm < 1e-13 {
            return Some((u, q));
        }
        let h = 1e-7;
        let ru = saddle_residual(prior, xi, u + h, q);
        let rd = saddle_residual(prior, xi, u - h, q);
        let qu = saddle_residual(prior, xi, u, q + h);
        let qd = saddle_residual(prior, xi, u, q - h);
        let j = [
            [(ru.0 - rd.0) / (2.0 * h), (qu.0 - qd.0) / (2.0 * h)],
            [(ru.1 - rd.1) / (2.0 * h), (qu.1 - qd.1) / (2.0 * h)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !det.is_finite() || det.abs() < 1e-300 {
            return None;
        }
        let du = (r.0 * j[1][1] - r.1 * j[0][1]) / det;
        let dq = (j[0][0] * r.1 - j[1][0] * r.0) / det;
        let mut t = 1.0;
        loop {
            let (nu, nq) = (u - t * du, q - t * dq);
            if inside(nu, nq) {
                let nr = saddle_residual(prior, xi, nu, nq);
                if nr.0.hypot(nr.1) < norm {
                    u = nu;
                    q = nq;
                    r = nr;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-10 {
                return None;
            }
        }
    }
    (r.0.hypot(r.1) < 1e-10).then_some((u, q))
}

/// The saddle `(u', q', lambda' = 0)` of the RS approximation
/// `sup_u inf_{q, lambda} P_1`.
///
/// Candidates come from the `q = 0` branch, where
/// `u = 2 e^{h + beta^2 u / 2} / (1 + 2 e^{h + beta^2 u / 2})`, and from
/// multi-start Newton for `q > 0`. A candidate is kept when the RS
/// critical point at its `u` has the same `q`; the largest RS value wins.
/// If nothing survives, the RS value is maximized over a `u` grid and the
/// result is flagged as not converged.
pub fn gs_rs_saddle(point: GsPoint) -> Result<RsSaddle> {
    let prior = point.prior();
    let xi = point.xi();
    let GsPoint { beta, h } = point;
    let mut candidates: Vec<(f64, f64)> = Vec::new();

    let branch = |u: f64| {
        let e = 2.0 * (h + 0.5 * beta * beta * u).exp();
        let occ = if e.is_finite() { e / (1.0 + e) } else { 1.0 };
        occ - u
    };
    let n = 400;
    let mut prev = (1e-12, branch(1e-12));
    for j in 1..=n {
        let u = if j == n {
            1.0 - 1e-12
        } else {
            j as f64 / n as f64
        };
        let g = branch(u);
        if prev.1 * g < 0.0 {
            if let Some(r) = brent_root(branch, prev.0, u, 1e-15, 200) {
                candidates.push((r, 0.0));
            }
        }
        prev = (u, g);
    }

    if beta > 0.0 {
        let (u1, _) = gs_pm_argmax(point);
        let mut starts = vec![(u1, 0.02 * u1), (u1, 0.2 * u1), (u1, 0.6 * u1)];
        starts.extend([
            (0.97, 0.95),
            (0.9, 0.8),
            (0.75, 0.6),
            (0.6, 0.4),
            (0.45, 0.25),
            (0.3, 0.1),
            (0.15, 0.03),
        ]);
        for start in starts {
            if let Some((u, q)) = saddle_newton(&prior, &xi, start) {
                let seen = candidates
                    .iter()
                    .any(|c| (c.0 - u).abs() < 1e-8 && (c.1 - q).abs() < 1e-8);
                if q > 1e-8 && !seen {
                    candidates.push((u, q));
                }
            }
        }
    }

    let opts = RsOptions::default();
    let mut best: Option<RsSaddle> = None;
    for (u, q) in candidates {
        let Ok(cp) = rs_critical_point(&prior, &xi, u, &opts) else {
            continue;
        };
        if (cp.q - q).abs() > 1e-6 || cp.lambda.abs() > 1e-6 {
            continue;
        }
        if best.is_none_or(|b| cp.value > b.value) {
            best = Some(RsSaddle {
                u,
                q: cp.q,
                lambda: cp.lambda,
                value: cp.value,
                converged: true,
            });
        }
    }
    if let Some(b) = best {
        return Ok(b);
    }

    let rs = |u: f64| {
        rs_critical_point(&prior, &xi, u, &opts)
            .map(|cp| cp.value)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let grid: Vec<f64> = (1..64).map(|j| j as f64 / 64.0).collect();
    let vals: Vec<f64> = grid.iter().map(|&u| rs(u)).collect();
    let j = (0..grid.len())
        .max_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(b.cmp(&a)))
        .unwrap();
    let lo = if j == 0 { 1e-6 } else { grid[j - 1] };
    let hi = if j + 1 == grid.len() {
        1.0 - 1e-6
    } else {
        grid[j + 1]
    };
    let (u, _) = golden_max(rs, lo, hi, 1e-9);
    let cp = rs_critical_point(&prior, &xi, u, &opts)?;
    Ok(RsSaddle {
        u,
        q: cp.q,
        lambda: cp.lambda,
        value: cp.value,
        converged: cp.lambda.abs() < 1e-6,
    })
}

/// Regions of the phase diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// The paramagnetic maximum sits where the paramagnet is stable.
    R1,
    /// The RS saddle has `q' > 0`.
    R2,
    /// The RS saddle has `q' = 0` but the paramagnetic maximum is unstable.
    R3,
    /// A solver failed at this point.
    Unresolved,
}

impl Region {
    pub fn label(self) -> &'static str {
        match self {
            Region::R1 => "R1",
            Region::R2 => "R2",
            Region::R3 => "R3",
            Region::Unresolved => "UNRESOLVED",
        }
    }
}

/// `q'` below this counts as zero.
pub const SADDLE_Q_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhasePoint {
    pub h_over_beta: f64,
    pub inv_beta: f64,
    pub beta: f64,
    pub h: f64,
    pub region: Region,
    /// Maximizer of `PM(u)`.
    pub u_star: f64,
    pub u0: f64,
    pub pm_at_ustar: f64,
    pub rs_saddle: Option<RsSaddle>,
    /// In `R3`, whether `u' <= u0`.
    pub saddle_below_u0: Option<bool>,
    pub error: Option<String>,
}

/// Classifies a point: `R1` if `argmax PM <= u0`; otherwise `R3` if the RS
/// saddle has `q' = 0`, else `R2`.
pub fn gs_region(point: GsPoint) -> Result<PhasePoint> {
    let (u_star, pm_at_ustar) = gs_pm_argmax(point);
    let u0 = gs_u0(point.beta);
    let (h_over_beta, inv_beta) = coords(point);
    let mut out = PhasePoint {
        h_over_beta,
        inv_beta,
        beta: point.beta,
        h: point.h,
        region: Region::R1,
        u_star,
        u0,
        pm_at_ustar,
        rs_saddle: None,
        saddle_below_u0: None,
        error: None,
    };
    let saddle = gs_rs_saddle(point)?;
    out.rs_saddle = Some(saddle);
    if u_star > u0 {
        if saddle.q < SADDLE_Q_TOL {
            out.region = Region::R3;
            out.saddle_below_u0 = Some(saddle.u <= u0);
        } else {
            out.region = Region::R2;
        }
    }
    Ok(out)
}

fn coords(point: GsPoint) -> (f64, f64) {
    if point.beta > 0.0 {
        (point.h / point.beta, 1.0 / point.beta)
    } else {
        (f64::NAN, f64::INFINITY)
    }
}

/// Rectangular grid in `(h / beta, 1 / beta)`.
///
/// The `h / beta` axis includes both ends. The `1 / beta` axis is open on
/// the left: row `j` sits at `lo + (hi - lo) (j + 1) / rows`, so a lower
/// end of zero is never evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGrid {
    pub h_over_beta: (f64, f64),
    pub inv_beta: (f64, f64),
    pub columns: usize,
    pub rows: usize,
}

impl Default for PhaseGrid {
    fn default() -> Self {
        Self {
            h_over_beta: (-1.5, 0.5),
            inv_beta: (0.0, 1.5),
            columns: 21,
            rows: 21,
        }
    }
}

impl PhaseGrid {
    pub fn h_over_beta_at(&self, col: usize) -> f64 {
        let (lo, hi) = self.h_over_beta;
        if self.columns <= 1 {
            lo
        } else {
            lo + (hi - lo) * col as f64 / (self.columns - 1) as f64
        }
    }

    pub fn inv_beta_at(&self, row: usize) -> f64 {
        let (lo, hi) = self.inv_beta;
        lo + (hi - lo) * (row + 1) as f64 / self.rows as f64
    }

    pub fn point(&self, row: usize, col: usize) -> GsPoint {
        let beta = 1.0 / self.inv_beta_at(row);
        GsPoint {
            beta,
            h: self.h_over_beta_at(col) * beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.h_over_beta;
        let (c, d) = self.inv_beta;
        if self.rows == 0
            || self.columns == 0
            || !(a <= b)
            || !(c >= 0.0 && c < d)
            || !d.is_finite()
        {
            return Err(Error::Config(format!("invalid phase grid {self:?}")));
        }
        Ok(())
    }
}

/// Classifies every grid point. Rows are ordered by `1/beta`, columns by
/// `h/beta`; a failing point is reported as [`Region::Unresolved`].
pub fn gs_phase_diagram(grid: &PhaseGrid) -> Result<Vec<PhasePoint>> {
    grid.validate()?;
    let cells: Vec<(usize, usize)> = (0..grid.rows)
        .flat_map(|r| (0..grid.columns).map(move |c| (r, c)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(r, c)| {
            let point = grid.point(r, c);
            let mut pp = gs_region(point).unwrap_or_else(|e| {
                let (u_star, pm_at_ustar) = gs_pm_argmax(point);
                PhasePoint {
                    h_over_beta: 0.0,
                    inv_beta: 0.0,
                    beta: point.beta,
                    h: point.h,
                    region: Region::Unresolved,
                    u_star,
                    u0: gs_u0(point.beta),
                    pm_at_ustar,
                    rs_saddle: None,
                    saddle_below_u0: None,
                    error: Some(e.to_string()),
                }
            });
            pp.h_over_beta = grid.h_over_beta_at(c);
            pp.inv_beta = grid.inv_beta_at(r);
            pp
        })
        .collect())
}

/// CSV with one row per point, in the order given.
pub fn phase_csv(points: &[PhasePoint]) -> String {
    let mut s = String::from(
        "h_over_beta,inv_beta,beta,h,region,u_star,u0,pm_at_ustar,u_saddle,q_saddle,lambda_saddle,saddle_converged,saddle_below_u0\n",
    );
    for p in points {
        let (su, sq, sl, sc) = match p.rs_saddle {
            Some(r) => (
                r.u.to_string(),
                r.q.to_string(),
                r.lambda.to_string(),
                r.converged.to_string(),
            ),
            None => Default::default(),
        };
        let below = p.saddle_below_u0.map(|b| b.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{su},{sq},{sl},{sc},{below}",
            p.h_over_beta,
            p.inv_beta,
            p.beta,
            p.h,
            p.region.label(),
            p.u_star,
            p.u0,
            p.pm_at_ustar,
        );
    }
    s
}

/// `(a, f(a))` on `points` equally spaced values of `a` in `[0, u]`.
pub fn gs_f_curve(beta: f64, u: f64, points: usize) -> Vec<(f64, f64)> {
    let n = points.max(2);
    (0..n)
        .into_par_iter()
        .map(|j| {
            let a = u * j as f64 / (n - 1) as f64;
            (a, gs_f(beta, u, a))
        })
        .collect()
}
