//! The variational objective `P_k`, the multiplier `lambda(u)`, and the
//! local and global free energies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::functional::{parisi_value, EvalOptions, ParisiEvaluation, RsbParams};
use crate::model::{MixtureXi, PriorMeasure};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::util::{golden_max, increasing_root};

/// Tolerance used to decide whether `u` sits on `d` or `D`.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// `-lambda u + X_0 - 1/2 sum_l m_l (theta(q_{l+1}) - theta(q_l))`.
pub fn pk_value(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    params: &RsbParams,
    opts: &EvalOptions,
) -> Result<f64> {
    let ev = parisi_value(prior, xi, params, opts)?;
    Ok(pk_from(&ev, xi, params))
}

fn pk_from(ev: &ParisiEvaluation, xi: &MixtureXi, params: &RsbParams) -> f64 {
    -params.lambda * params.u() + ev.x0 - 0.5 * params.theta_sum(xi)
}

/// Result of the inner minimization over `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSolution {
    pub lambda: f64,
    /// `P_k` at the solution.
    pub value: f64,
    /// `dX_0/dlambda - u` at the solution.
    pub residual: f64,
    pub evaluations: usize,
}

fn check_interior(prior: &PriorMeasure, u: f64) -> Result<()> {
    let (d, big_d) = prior.support_bounds();
    if u <= d + BOUNDARY_TOL || u >= big_d - BOUNDARY_TOL {
        return Err(Error::Boundary { u, d, big_d });
    }
    Ok(())
}

/// Solve `dX_0/dlambda = u` for fixed `(m, q)`, `u = q_{k+1}`.
///
/// The derivative is nondecreasing in `lambda`; the root is found by
/// [`increasing_root`] using the second derivative from the recursion.
pub fn solve_lambda(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    m: &[f64],
    q: &[f64],
    lambda_hint: f64,
    opts: &EvalOptions,
) -> Result<LambdaSolution> {
    let u = *q
        .last()
        .ok_or_else(|| Error::InvalidParams("empty q".into()))?;
    check_interior(prior, u)?;
    let mut params = RsbParams::new(m.to_vec(), q.to_vec(), lambda_hint)?;
    let mut last = None;
    let mut evaluations = 0;
    let root = increasing_root(
        |lam| {
            params.lambda = lam;
            let ev = parisi_value(prior, xi, &params, opts)?;
            evaluations += 1;
            let out = (ev.dx0_dlambda - u, ev.d2x0_dlambda2);
            last = Some(ev);
            Ok::<_, Error>(out)
        },
        lambda_hint,
        1e-13 * u.abs().max(1.0),
    )?;
    match (root, last) {
        (Some(lambda), Some(ev)) => Ok(LambdaSolution {
            lambda,
            value: pk_from(&ev, xi, &params),
            residual: ev.dx0_dlambda - u,
            evaluations,
        }),
        _ => Err(Error::NoConvergence(format!("lambda solve for u = {u}"))),
    }
}

/// Controls for [`optimize_local`] and [`global_free_energy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveOptions {
    pub k_max: usize,
    /// Stop raising `k` once the improvement falls below this.
    pub tol: f64,
    pub starts: usize,
    pub seed: u64,
    /// Gauss-Hermite order during the search. The order is checked
    /// against the adaptive rule at the optimum.
    pub search_order: usize,
    pub search_grid_points: usize,
    pub eval: EvalOptions,
    pub scan_points: usize,
    pub max_evals: usize,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        Self {
            k_max: 6,
            tol: 1e-7,
            starts: 5,
            seed: 0x5eed,
            search_order: 40,
            search_grid_points: 513,
            eval: EvalOptions::default(),
            scan_points: 33,
            max_evals: 1500,
        }
    }
}

fn f64_or_marker<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if *v == f64::NEG_INFINITY {
        s.serialize_str("-inf")
    } else {
        s.serialize_f64(*v)
    }
}

/// Formats a value with the `-inf` marker for an empty constraint set.
pub fn format_value(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

/// `P(xi, u)` together with its minimizer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalFreeEnergy {
    pub u: f64,
    /// `-inf` when `u` is a boundary point carrying no mass.
    #[serde(serialize_with = "f64_or_marker")]
    pub value: f64,
    pub best_params: Option<RsbParams>,
    pub k_used: usize,
    pub converged: bool,
    pub iterations: usize,
    pub gh_order: usize,
}

impl LocalFreeEnergy {
    pub fn is_neg_infinity(&self) -> bool {
        self.value == f64::NEG_INFINITY
    }
}

/// Decode unconstrained coordinates into monotone `(m, q)`.
///
/// `t[..k]` set the ratios `q_l / q_{l+1}` and `t[k..]` the ratios
/// `m_l / m_{l+1}`, each through `sin^2`.
fn decode(t: &[f64], k: usize, u: f64) -> (Vec<f64>, Vec<f64>) {
    let mut q = vec![0.0; k + 2];
    q[k + 1] = u;
    for l in (1..=k).rev() {
        q[l] = q[l + 1] * t[l - 1].sin().powi(2);
    }
    let mut m = vec![0.0; k + 1];
    m[k] = 1.0;
    for l in (1..k).rev() {
        m[l] = m[l + 1] * t[k + l - 1].sin().powi(2);
    }
    (m, q)
}

fn encode(m: &[f64], q: &[f64]) -> Vec<f64> {
    let k = m.len() - 1;
    let ratio = |a: f64, b: f64| {
        if b > 0.0 {
            (a / b).clamp(0.0, 1.0)
        } else {
            0.5
        }
    };
    let mut t = Vec::with_capacity(2 * k - 1);
    for l in 1..=k {
        t.push(ratio(q[l], q[l + 1]).sqrt().asin());
    }
    for l in 1..k {
        t.push(ratio(m[l], m[l + 1]).sqrt().asin());
    }
    t
}

/// Split the top level of a `(k-1)`-level point at `q_k + frac (u - q_k)`,
/// giving the new lower part an exponent just below 1.
fn insert_level(m: &[f64], q: &[f64], frac: f64) -> (Vec<f64>, Vec<f64>) {
    let k = m.len() - 1;
    let u = q[k + 1];
    let mut m2 = m[..k].to_vec();
    m2.push(1.0 - 0.02 * (1.0 - m[k - 1]));
    m2.push(1.0);
    let mut q2 = q[..=k].to_vec();
    q2.push(q[k] + frac * (u - q[k]));
    q2.push(u);
    (m2, q2)
}

fn equal_spacing(k: usize, u: f64) -> (Vec<f64>, Vec<f64>) {
    let m = (0..=k).map(|l| l as f64 / k as f64).collect();
    let q = (0..=k + 1).map(|l| u * l as f64 / (k + 1) as f64).collect();
    (m, q)
}

/// `(m, q, lambda hint) -> (P_k, lambda)`.
type LevelEval<'a> = dyn Fn(&[f64], &[f64], f64) -> Result<(f64, f64)> + 'a;

/// Outcome of the search at a single `k`.
struct LevelSearch {
    value: f64,
    params: RsbParams,
    evals: usize,
    converged: bool,
}

/// Minimize `value(m, q)` over monotone `(m, q)` with `k` levels by
/// multi-start Nelder-Mead.
fn search_level(
    k: usize,
    u: f64,
    warm: Option<&RsbParams>,
    opts: &ObjectiveOptions,
    eval: &LevelEval,
) -> Option<LevelSearch> {
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm {
        if w.k() + 1 == k {
            for frac in [0.25, 0.5, 0.75] {
                let (m, q) = insert_level(&w.m, &w.q, frac);
                starts.push(encode(&m, &q));
            }
        } else {
            starts.push(encode(&w.m, &w.q));
        }
    }
    let (m, q) = equal_spacing(k, u);
    starts.push(encode(&m, &q));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (k as u64).wrapping_mul(0x9e37_79b9));
    let dim = 2 * k - 1;
    while starts.len() < opts.starts.max(1) {
        starts.push((0..dim).map(|_| rng.random_range(0.1..1.47)).collect());
    }
    let lambda_hint = std::cell::Cell::new(warm.map_or(0.0, |w| w.lambda));
    let nm = NelderMeadOptions {
        max_evals: opts.max_evals,
        ..Default::default()
    };
    let mut best: Option<LevelSearch> = None;
    let mut evals = 0;
    for x0 in &starts {
        let obj = |t: &[f64]| {
            let (m, q) = decode(t, k, u);
            match eval(&m, &q, lambda_hint.get()) {
                Ok((v, lam)) => {
                    lambda_hint.set(lam);
                    v
                }
                Err(_) => f64::NAN,
            }
        };
        let res = nelder_mead(obj, x0, &nm);
        evals += res.evals;
        if !res.value.is_finite() {
            continue;
        }
        let (m, q) = decode(&res.x, k, u);
        let better = best.as_ref().is_none_or(|b| res.value < b.value);
        if better {
            let Ok((_, lam)) = eval(&m, &q, lambda_hint.get()) else {
                continue;
            };
            best = Some(LevelSearch {
                value: res.value,
                params: RsbParams { m, q, lambda: lam },
                evals: 0,
                converged: res.converged,
            });
        }
    }
    best.map(|mut b| {
        b.evals = evals;
        b
    })
}

/// Raise `k` from 1 until the improvement drops below `opts.tol`.
fn optimize_levels(
    u: f64,
    opts: &ObjectiveOptions,
    eval: &LevelEval,
) -> Result<(LevelSearch, usize)> {
    let mut best: Option<(LevelSearch, usize)> = None;
    let mut total = 0;
    for k in 1..=opts.k_max.max(1) {
        let warm = best.as_ref().map(|(b, _)| &b.params);
        let Some(mut res) = search_level(k, u, warm, opts, eval) else {
            break;
        };
        total += res.evals;
        res.evals = total;
        match &mut best {
            None => best = Some((res, k)),
            Some((b, kb)) => {
                let improvement = b.value - res.value;
                b.evals = total;
                if improvement > 0.0 {
                    *b = res;
                    *kb = k;
                }
                if improvement < opts.tol {
                    break;
                }
            }
        }
    }
    best.ok_or_else(|| Error::NoConvergence(format!("no start evaluated at u = {u}")))
}

/// `P(xi, u) = inf P_k` over `k`, `(m, q)` and `lambda`, for `d < u < D`.
pub fn optimize_local(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    u: f64,
    opts: &ObjectiveOptions,
) -> Result<LocalFreeEnergy> {
    check_interior(prior, u)?;
    let mut order = opts.search_order;
    let search = |order: usize| {
        let eo = EvalOptions {
            gh_order: order,
            adaptive: false,
            grid_points: opts.search_grid_points,
            ..opts.eval
        };
        let eval = move |m: &[f64], q: &[f64], hint: f64| -> Result<(f64, f64)> {
            let s = solve_lambda(prior, xi, m, q, hint, &eo)?;
            Ok((s.value, s.lambda))
        };
        optimize_levels(u, opts, &eval)
    };
    let (mut best, mut k_used) = search(order)?;
    // the adaptive rule at the optimum decides whether the search order
    // was fine enough
    let probe = parisi_value(prior, xi, &best.params, &opts.eval)?;
    if probe.order > order * 2 {
        order = probe.order / 2;
        let (b, k) = search(order)?;
        best = b;
        k_used = k;
    }
    let fin = solve_lambda(
        prior,
        xi,
        &best.params.m,
        &best.params.q,
        best.params.lambda,
        &opts.eval,
    )?;
    let final_order = parisi_value(
        prior,
        xi,
        &RsbParams {
            lambda: fin.lambda,
            ..best.params.clone()
        },
        &opts.eval,
    )?
    .order;
    let params = RsbParams {
        lambda: fin.lambda,
        ..best.params
    };
    Ok(LocalFreeEnergy {
        u,
        value: fin.value,
        best_params: Some(params),
        k_used,
        converged: best.converged,
        iterations: best.evals,
        gh_order: final_order,
    })
}

/// `P(xi, u)` at `u = d` or `u = D`.
///
/// Without an atom at `sigma^2 = u` the value is `-inf`. Otherwise the
/// prior is restricted to `{+sqrt(u), -sqrt(u)}` (keeping its mass) and
/// the `lambda`-free problem is optimized.
pub fn boundary_value(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    u: f64,
    opts: &ObjectiveOptions,
) -> Result<LocalFreeEnergy> {
    let (d, big_d) = prior.support_bounds();
    let on_edge = (u - d).abs() <= BOUNDARY_TOL || (u - big_d).abs() <= BOUNDARY_TOL;
    if !on_edge {
        return Err(Error::InvalidParams(format!(
            "u = {u} is not a boundary point of [{d}, {big_d}]"
        )));
    }
    let Some(restricted) = prior.restrict_to_square(u) else {
        return Ok(LocalFreeEnergy {
            u,
            value: f64::NEG_INFINITY,
            best_params: None,
            k_used: 0,
            converged: true,
            iterations: 0,
            gh_order: 0,
        });
    };
    // the restricted support is the single value sigma^2 = u
    let u = restricted.support_bounds().0;
    let eo = EvalOptions {
        gh_order: opts.search_order,
        adaptive: false,
        grid_points: opts.search_grid_points,
        ..opts.eval
    };
    let eval = |m: &[f64], q: &[f64], _: f64| -> Result<(f64, f64)> {
        let p = RsbParams::new(m.to_vec(), q.to_vec(), 0.0)?;
        Ok((pk_value(&restricted, xi, &p, &eo)?, 0.0))
    };
    let (best, k_used) = optimize_levels(u, opts, &eval)?;
    let ev = parisi_value(&restricted, xi, &best.params, &opts.eval)?;
    Ok(LocalFreeEnergy {
        u,
        value: pk_from(&ev, xi, &best.params),
        best_params: Some(best.params),
        k_used,
        converged: best.converged,
        iterations: best.evals,
        gh_order: ev.order,
    })
}

/// `P(xi, u)` dispatching to [`boundary_value`] on the edges.
pub fn local_free_energy(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    u: f64,
    opts: &ObjectiveOptions,
) -> Result<LocalFreeEnergy> {
    let (d, big_d) = prior.support_bounds();
    if u <= d + BOUNDARY_TOL || u >= big_d - BOUNDARY_TOL {
        boundary_value(prior, xi, u.clamp(d, big_d), opts)
    } else {
        optimize_local(prior, xi, u, opts)
    }
}

/// `P(xi) = sup_u P(xi, u)` with the scanned profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalFreeEnergy {
    pub value: f64,
    pub u_star: f64,
    /// Every evaluated `u`, sorted.
    pub profile: Vec<LocalFreeEnergy>,
}

impl GlobalFreeEnergy {
    /// The profile as CSV, see [`local_csv`].
    pub fn profile_csv(&self) -> String {
        local_csv(&self.profile)
    }
}

/// `u,value,k_used,lambda,q_1..q_K,m_1..m_K` with `K` the largest `k`
/// among the rows; shorter rows are padded with empty fields.
pub fn local_csv(rows: &[LocalFreeEnergy]) -> String {
    let kmax = rows.iter().map(|p| p.k_used).max().unwrap_or(0);
    let mut out = String::from("u,value,k_used,lambda");
    for l in 1..=kmax {
        out.push_str(&format!(",q_{l}"));
    }
    for l in 1..=kmax {
        out.push_str(&format!(",m_{l}"));
    }
    out.push('\n');
    for p in rows {
        out.push_str(&format!("{},{},{}", p.u, format_value(p.value), p.k_used));
        match &p.best_params {
            Some(bp) => {
                out.push_str(&format!(",{}", bp.lambda));
                for l in 1..=kmax {
                    out.push(',');
                    if l <= bp.k() {
                        out.push_str(&format!("{}", bp.q[l]));
                    }
                }
                for l in 1..=kmax {
                    out.push(',');
                    if l <= bp.k() {
                        out.push_str(&format!("{}", bp.m[l]));
                    }
                }
            }
            None => out.push_str(&",".repeat(2 * kmax + 1)),
        }
        out.push('\n');
    }
    out
}

/// Coarse scan of `u` over `[d, D]` followed by golden-section refinement
/// around the best scanned point. Ties resolve toward smaller `u`.
pub fn global_free_energy(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    opts: &ObjectiveOptions,
) -> Result<GlobalFreeEnergy> {
    let (d, big_d) = prior.support_bounds();
    let n = if big_d > d {
        opts.scan_points.max(3)
    } else {
        1
    };
    let us: Vec<f64> = (0..n)
        .map(|i| {
            if i + 1 == n && n > 1 {
                big_d
            } else {
                d + (big_d - d) * i as f64 / (n - 1).max(1) as f64
            }
        })
        .collect();
    let mut profile: Vec<LocalFreeEnergy> = us
        .par_iter()
        .map(|&u| local_free_energy(prior, xi, u, opts))
        .collect::<Result<Vec<_>>>()?;
    let best_idx = argmax_first(&profile);
    if n > 1 {
        let lo = us[best_idx.saturating_sub(1)];
        let hi = us[(best_idx + 1).min(n - 1)];
        let mut extra = Vec::new();
        let mut failure = None;
        golden_max(
            |u| match optimize_local(prior, xi, u, opts) {
                Ok(r) => {
                    let v = r.value;
                    extra.push(r);
                    v
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NEG_INFINITY
                }
            },
            lo,
            hi,
            1e-5 * (big_d - d),
        );
        if let Some(e) = failure {
            if extra.is_empty() {
                return Err(e);
            }
        }
        profile.extend(extra);
        profile.sort_by(|a, b| a.u.total_cmp(&b.u));
    }
    let best = &profile[argmax_first(&profile)];
    Ok(GlobalFreeEnergy {
        value: best.value,
        u_star: best.u,
        profile,
    })
}

fn argmax_first(profile: &[LocalFreeEnergy]) -> usize {
    let mut best = 0;
    for (i, p) in profile.iter().enumerate() {
        if p.value > profile[best].value {
            best = i;
        }
    }
    best
}
