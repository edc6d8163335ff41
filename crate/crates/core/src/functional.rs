//! The Parisi recursion.
//!
//! For a terminal function `F` of the running Gaussian field and levels
//! `(v_p, m_p)`, `p = k, ..., 0`, the functional computes
//! `F_p(x) = (1/m_p) log E exp(m_p F_{p+1}(x + sqrt(v_p) z))` and returns
//! `F_0(0)`. With the prior terminal `X_{k+1}(x) = log sum w exp(sigma x +
//! lambda sigma^2)` this is `X_0(m, q, lambda)`.
//!
//! Two implementations live here:
//!
//! * [`parisi_value`] is the production path for prior terminals. The top
//!   level always has `m_k = 1`, which integrates in closed form
//!   (`X_k` is the terminal with `lambda -> lambda + v_k / 2`). Interior
//!   levels are tabulated on a spline grid, the last two are evaluated
//!   directly at the quadrature nodes they need. The first and second
//!   `lambda`-derivatives are carried along the recursion.
//! * [`ParisiFunctional`] applies the recursion to an arbitrary terminal
//!   closure with every level tabulated. It exposes the per-level
//!   functions and the weights `W_l` used by the property checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MixtureXi, PriorMeasure};
use crate::quadrature::{
    gauss_hermite_cached, GaussHermiteRule, GridFunction, GridSpec, Interpolation, M_ZERO,
};

/// Levels whose variance falls below this are skipped.
pub const VARIANCE_EPS: f64 = 1e-14;

const PARAM_TOL: f64 = 1e-12;

/// Functional order parameter plus Lagrange multiplier:
/// `0 = m_0 <= ... <= m_k = 1`, `0 = q_0 <= ... <= q_{k+1} = u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsbParams {
    pub m: Vec<f64>,
    pub q: Vec<f64>,
    pub lambda: f64,
}

impl RsbParams {
    pub fn new(m: Vec<f64>, q: Vec<f64>, lambda: f64) -> Result<Self> {
        let p = Self { m, q, lambda };
        p.check_shape()?;
        Ok(p)
    }

    /// `k = 1`: `m = (0, 1)`, `q = (0, q1, u)`.
    pub fn replica_symmetric(q1: f64, u: f64, lambda: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], vec![0.0, q1, u], lambda)
    }

    pub fn k(&self) -> usize {
        self.m.len() - 1
    }

    pub fn u(&self) -> f64 {
        *self.q.last().unwrap()
    }

    fn check_shape(&self) -> Result<()> {
        let k = self
            .m
            .len()
            .checked_sub(1)
            .filter(|&k| k >= 1)
            .ok_or_else(|| Error::InvalidParams("need at least two m values (k >= 1)".into()))?;
        if self.q.len() != k + 2 {
            return Err(Error::InvalidParams(format!(
                "k = {k} needs {} q values, got {}",
                k + 2,
                self.q.len()
            )));
        }
        if self.m[0] != 0.0 || self.m[k] != 1.0 {
            return Err(Error::InvalidParams(
                "m must start at 0 and end at 1".into(),
            ));
        }
        if self.q[0] != 0.0 {
            return Err(Error::InvalidParams("q must start at 0".into()));
        }
        if !self.lambda.is_finite() {
            return Err(Error::InvalidParams("lambda must be finite".into()));
        }
        for w in self.m.windows(2) {
            if !(w[0] <= w[1]) {
                return Err(Error::InvalidParams(format!(
                    "m not nondecreasing: {:?}",
                    self.m
                )));
            }
        }
        for w in self.q.windows(2) {
            if !(w[0] <= w[1]) {
                return Err(Error::InvalidParams(format!(
                    "q not nondecreasing: {:?}",
                    self.q
                )));
            }
        }
        Ok(())
    }

    /// Full invariant check including `d <= u <= D`.
    pub fn validate(&self, d: f64, big_d: f64) -> Result<()> {
        self.check_shape()?;
        let u = self.u();
        if u < d - PARAM_TOL || u > big_d + PARAM_TOL {
            return Err(Error::InvalidParams(format!(
                "u = {u} outside [{d}, {big_d}]"
            )));
        }
        Ok(())
    }

    /// Level variances `xi'(q_{p+1}) - xi'(q_p)`, `p = 0..=k`.
    pub fn variances(&self, xi: &MixtureXi) -> Vec<f64> {
        self.q
            .windows(2)
            .map(|w| (xi.dxi(w[1]) - xi.dxi(w[0])).max(0.0))
            .collect()
    }

    /// `sum_{1 <= l <= k} m_l (theta(q_{l+1}) - theta(q_l))`.
    pub fn theta_sum(&self, xi: &MixtureXi) -> f64 {
        (1..=self.k())
            .map(|l| self.m[l] * (xi.theta(self.q[l + 1]) - xi.theta(self.q[l])))
            .sum()
    }

    /// Step function `m(q)` on `[0, u]`: value `m_l` on `[q_l, q_{l+1})`.
    pub fn order_parameter(&self, q: f64) -> f64 {
        for l in (0..=self.k()).rev() {
            if q >= self.q[l] {
                return self.m[l];
            }
        }
        0.0
    }

    /// Drop level `p` (`1 <= p <= k`) when `q_p == q_{p+1}` makes it empty.
    pub fn collapse_empty_levels(&self) -> RsbParams {
        let mut m = vec![self.m[0]];
        let mut q = vec![self.q[0]];
        for p in 1..=self.k() {
            if self.q[p + 1] == self.q[p] && p < self.k() {
                continue;
            }
            m.push(self.m[p]);
            q.push(self.q[p]);
        }
        q.push(self.u());
        // keep the last exponent at 1
        *m.last_mut().unwrap() = 1.0;
        RsbParams {
            m,
            q,
            lambda: self.lambda,
        }
    }
}

/// Value, first and second derivative with respect to `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Numerical controls for the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub gh_order: usize,
    /// Double the Gauss-Hermite order until `X_0` changes by less than
    /// `adaptive_tol`.
    pub adaptive: bool,
    pub adaptive_tol: f64,
    pub max_order: usize,
    pub grid_points: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            gh_order: 40,
            adaptive: true,
            adaptive_tol: 1e-9,
            max_order: 320,
            grid_points: GridSpec::DEFAULT_POINTS,
        }
    }
}

impl EvalOptions {
    pub fn fixed(order: usize) -> Self {
        Self {
            gh_order: order,
            adaptive: false,
            ..Self::default()
        }
    }
}

/// A tabulated level `X_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelGrid {
    pub level: usize,
    pub values: GridFunction,
}

/// Output of [`parisi_value`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParisiEvaluation {
    pub x0: f64,
    pub dx0_dlambda: f64,
    pub d2x0_dlambda2: f64,
    /// Levels that were tabulated, deepest first.
    pub levels: Vec<LevelGrid>,
    /// Gauss-Hermite order of the returned value.
    pub order: usize,
    /// False when adaptive doubling hit `max_order` without settling.
    pub order_converged: bool,
}

/// Half-width of the field grid: eight standard deviations of the total
/// field plus the drift the exponential tilts can add.
pub fn grid_half_width(total_variance: f64, max_abs_sigma: f64) -> f64 {
    8.0 * total_variance.sqrt() + max_abs_sigma * total_variance + 4.0
}

fn max_abs_sigma(prior: &PriorMeasure) -> f64 {
    prior
        .nodes()
        .iter()
        .map(|a| a.sigma.abs())
        .fold(0.0, f64::max)
}

/// `X_0`, `dX_0/dlambda` and `d^2 X_0/dlambda^2` for the prior terminal.
pub fn parisi_value(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    params: &RsbParams,
    opts: &EvalOptions,
) -> Result<ParisiEvaluation> {
    let (d, big_d) = prior.support_bounds();
    params.validate(d, big_d)?;
    if !opts.adaptive {
        return evaluate_at_order(prior, xi, params, opts.gh_order, opts.grid_points);
    }
    let mut order = opts.gh_order;
    let mut prev = evaluate_at_order(prior, xi, params, order, opts.grid_points)?;
    loop {
        let next_order = (order * 2).min(opts.max_order);
        if next_order <= order {
            prev.order_converged = false;
            return Ok(prev);
        }
        let cur = evaluate_at_order(prior, xi, params, next_order, opts.grid_points)?;
        if (cur.x0 - prev.x0).abs() <= opts.adaptive_tol {
            return Ok(cur);
        }
        order = next_order;
        prev = cur;
    }
}

/// `dX_0/dlambda` through the differentiated recursion.
pub fn lambda_derivative(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    params: &RsbParams,
    opts: &EvalOptions,
) -> Result<f64> {
    Ok(parisi_value(prior, xi, params, opts)?.dx0_dlambda)
}

/// `X_0 - log int exp(lambda sigma^2) dnu`, nonnegative up to
/// discretization error.
pub fn lower_bound_check(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    params: &RsbParams,
    opts: &EvalOptions,
) -> Result<f64> {
    let x0 = parisi_value(prior, xi, params, opts)?.x0;
    Ok(x0 - prior.log_partition(0.0, params.lambda))
}

/// One smoothing level applied to a jet-valued function at `x`.
fn smooth_jet_at(f: &dyn Fn(f64) -> Jet, x: f64, sd: f64, m: f64, rule: &GaussHermiteRule) -> Jet {
    let n = rule.order();
    if m < M_ZERO {
        let mut out = Jet::default();
        for j in 0..n {
            let g = f(x + sd * rule.nodes[j]);
            let w = rule.weights[j];
            out.value += w * g.value;
            out.d1 += w * g.d1;
            out.d2 += w * g.d2;
        }
        return out;
    }
    let mut vals = [Jet::default(); crate::quadrature::MAX_GH_ORDER];
    let vals = &mut vals[..n];
    let mut max = f64::NEG_INFINITY;
    for (v, z) in vals.iter_mut().zip(&rule.nodes) {
        *v = f(x + sd * z);
        max = max.max(m * v.value);
    }
    let mut s = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (g, w) in vals.iter().zip(&rule.weights) {
        let e = w * (m * g.value - max).exp();
        s += e;
        s1 += e * g.d1;
        s2 += e * (g.d2 + m * g.d1 * g.d1);
    }
    let d1 = s1 / s;
    Jet {
        value: (max + s.ln()) / m,
        d1,
        d2: s2 / s - m * d1 * d1,
    }
}

struct JetGrid {
    value: GridFunction,
    d1: GridFunction,
    d2: GridFunction,
}

impl JetGrid {
    fn eval(&self, x: f64) -> Jet {
        Jet {
            value: self.value.eval(x),
            d1: self.d1.eval(x),
            d2: self.d2.eval(x),
        }
    }
}

fn evaluate_at_order(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    params: &RsbParams,
    order: usize,
    grid_points: usize,
) -> Result<ParisiEvaluation> {
    let rule = gauss_hermite_cached(order)?;
    let k = params.k();
    let var = params.variances(xi);
    // m_k = 1: the top level integrates in closed form
    let top_lambda = params.lambda + 0.5 * var[k];
    let terminal = |x: f64| {
        let g = prior.gibbs(x, top_lambda);
        Jet {
            value: g.log_z,
            d1: g.mean_sq,
            d2: g.var_sq,
        }
    };
    // remaining active levels, deepest first: (level index, sd, m)
    let active: Vec<(usize, f64, f64)> = (0..k)
        .rev()
        .filter(|&p| var[p] >= VARIANCE_EPS)
        .map(|p| (p, var[p].sqrt(), params.m[p]))
        .collect();

    let total_var: f64 = var.iter().sum();
    let spec = GridSpec::symmetric(
        grid_half_width(total_var, max_abs_sigma(prior)),
        grid_points,
    );
    let mut levels = Vec::new();
    let mut current: Option<JetGrid> = None;
    let n_grid = active.len().saturating_sub(2);
    for &(p, sd, m) in &active[..n_grid] {
        let jets: Vec<Jet> = spec
            .xs()
            .map(|x| match &current {
                None => smooth_jet_at(&terminal, x, sd, m, &rule),
                Some(g) => smooth_jet_at(&|y| g.eval(y), x, sd, m, &rule),
            })
            .collect();
        let grid = JetGrid {
            value: GridFunction::new(
                spec,
                jets.iter().map(|j| j.value).collect(),
                Interpolation::CubicSpline,
            ),
            d1: GridFunction::new(
                spec,
                jets.iter().map(|j| j.d1).collect(),
                Interpolation::CubicSpline,
            ),
            d2: GridFunction::new(
                spec,
                jets.iter().map(|j| j.d2).collect(),
                Interpolation::CubicSpline,
            ),
        };
        levels.push(LevelGrid {
            level: p,
            values: grid.value.clone(),
        });
        current = Some(grid);
    }
    let base: Box<dyn Fn(f64) -> Jet + '_> = match current {
        None => Box::new(terminal),
        Some(g) => Box::new(move |y| g.eval(y)),
    };
    let tail = &active[n_grid..];
    let jet = match tail {
        [] => base(0.0),
        [(_, sd, m)] => smooth_jet_at(&*base, 0.0, *sd, *m, &rule),
        [(_, sd1, m1), (_, sd0, m0)] => {
            let inner = |y: f64| smooth_jet_at(&*base, y, *sd1, *m1, &rule);
            smooth_jet_at(&inner, 0.0, *sd0, *m0, &rule)
        }
        _ => unreachable!(),
    };
    let (d, big_d) = prior.support_bounds();
    Ok(ParisiEvaluation {
        x0: jet.value,
        dx0_dlambda: jet.d1.clamp(d, big_d),
        d2x0_dlambda2: jet.d2.max(0.0),
        levels,
        order,
        order_converged: true,
    })
}

/// Every level `X_{k+1}, X_k, ..., X_1` of the prior recursion sampled on
/// a common grid (for plotting and export).
pub fn level_profiles(
    prior: &PriorMeasure,
    xi: &MixtureXi,
    params: &RsbParams,
    order: usize,
    spec: GridSpec,
) -> Result<Vec<GridFunction>> {
    let (d, big_d) = prior.support_bounds();
    params.validate(d, big_d)?;
    let rule = gauss_hermite_cached(order)?;
    let var = params.variances(xi);
    let lambda = params.lambda;
    let terminal = move |x: f64| prior.log_partition(x, lambda);
    let levels: Vec<_> = (0..=params.k())
        .map(|p| Level {
            variance: var[p],
            m: params.m[p],
        })
        .collect();
    let f = ParisiFunctional::new(levels, rule, spec);
    let rec = f.apply(&terminal);
    let mut out = vec![GridFunction::sample(
        spec,
        Interpolation::CubicSpline,
        terminal,
    )];
    for l in (1..=params.k()).rev() {
        out.push(rec.grid(l).clone());
    }
    Ok(out)
}

/// One level of the generic functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub variance: f64,
    pub m: f64,
}

/// The Parisi functional `P(m) F` for arbitrary terminal functions.
#[derive(Debug, Clone)]
pub struct ParisiFunctional {
    levels: Vec<Level>,
    rule: std::sync::Arc<GaussHermiteRule>,
    spec: GridSpec,
}

/// Per-level functions `F_1, ..., F_k` on the grid, plus `F_0 = F_0(0)`.
pub struct Recursion<'a> {
    functional: &'a ParisiFunctional,
    terminal: &'a dyn Fn(f64) -> f64,
    // grids[l - 1] holds F_l
    grids: Vec<GridFunction>,
    pub f0: f64,
}

impl ParisiFunctional {
    /// `levels[p]` is level `p = 0..=k`.
    pub fn new(levels: Vec<Level>, rule: std::sync::Arc<GaussHermiteRule>, spec: GridSpec) -> Self {
        assert!(!levels.is_empty());
        Self { levels, rule, spec }
    }

    pub fn k(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn rule(&self) -> &GaussHermiteRule {
        &self.rule
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    fn smooth_level(&self, p: usize, f: &dyn Fn(f64) -> f64, x: f64) -> f64 {
        let lv = self.levels[p];
        crate::quadrature::smooth_at(f, x, lv.variance, lv.m, &self.rule)
    }

    /// Run the recursion on `terminal`.
    pub fn apply<'a>(&'a self, terminal: &'a dyn Fn(f64) -> f64) -> Recursion<'a> {
        let k = self.k();
        let mut grids: Vec<GridFunction> = Vec::with_capacity(k);
        for p in (1..=k).rev() {
            let values: Vec<f64> = match grids.last() {
                None => self
                    .spec
                    .xs()
                    .map(|x| self.smooth_level(p, terminal, x))
                    .collect(),
                Some(g) => self
                    .spec
                    .xs()
                    .map(|x| self.smooth_level(p, &|y| g.eval(y), x))
                    .collect(),
            };
            grids.push(GridFunction::new(
                self.spec,
                values,
                Interpolation::CubicSpline,
            ));
        }
        grids.reverse();
        let f0 = match grids.first() {
            None => self.smooth_level(0, terminal, 0.0),
            Some(g) => self.smooth_level(0, &|y| g.eval(y), 0.0),
        };
        Recursion {
            functional: self,
            terminal,
            grids,
            f0,
        }
    }

    /// Apply levels `0..start` to a function already representing
    /// `F_start`, returning `F_0(0)`.
    pub fn apply_from(&self, start: usize, f_start: &GridFunction) -> f64 {
        let mut g = f_start.clone();
        for p in (1..start).rev() {
            g = crate::quadrature::smooth(
                &g,
                self.levels[p].variance,
                self.levels[p].m,
                &self.rule,
            );
        }
        self.smooth_level(0, &|y| g.eval(y), 0.0)
    }
}

impl<'a> Recursion<'a> {
    /// `F_l`, `1 <= l <= k`.
    pub fn grid(&self, l: usize) -> &GridFunction {
        &self.grids[l - 1]
    }

    /// `F_l(x)` for `1 <= l <= k + 1`.
    pub fn value(&self, l: usize, x: f64) -> f64 {
        if l == self.functional.k() + 1 {
            (self.terminal)(x)
        } else {
            self.grids[l - 1].eval(x)
        }
    }

    /// `F_l(x)` where level 0 is only defined at the origin.
    fn level_value(&self, l: usize, x: f64) -> f64 {
        if l == 0 {
            debug_assert!(x == 0.0);
            self.f0
        } else {
            self.value(l, x)
        }
    }

    /// `W_l(x, z) = exp(m_l (F_{l+1}(x + sqrt(v_l) z) - F_l(x)))`.
    pub fn weight(&self, l: usize, x: f64, z: f64) -> f64 {
        let lv = self.functional.levels[l];
        if lv.m < M_ZERO {
            return 1.0;
        }
        let y = x + lv.variance.max(0.0).sqrt() * z;
        (lv.m * (self.value(l + 1, y) - self.level_value(l, x))).exp()
    }

    /// `max |E_l W_l ... W_k - 1|` over the grid points (origin for
    /// `l = 0`), computed bottom-up on the grid.
    pub fn normalization_error(&self, l: usize) -> f64 {
        let f = self.functional;
        let k = f.k();
        let rule = &f.rule;
        let mut next: Option<GridFunction> = None;
        for p in (l.max(1)..=k).rev() {
            let sd = f.levels[p].variance.max(0.0).sqrt();
            let values: Vec<f64> = f
                .spec
                .xs()
                .map(|x| {
                    rule.expect(|z| {
                        let tail = next.as_ref().map_or(1.0, |g| g.eval(x + sd * z));
                        self.weight(p, x, z) * tail
                    })
                })
                .collect();
            next = Some(GridFunction::new(
                f.spec,
                values,
                Interpolation::CubicSpline,
            ));
        }
        if l == 0 {
            let sd = f.levels[0].variance.max(0.0).sqrt();
            let v = rule.expect(|z| {
                let tail = next.as_ref().map_or(1.0, |g| g.eval(sd * z));
                self.weight(0, 0.0, z) * tail
            });
            return (v - 1.0).abs();
        }
        next.unwrap()
            .values()
            .iter()
            .map(|v| (v - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gs() -> PriorMeasure {
        PriorMeasure::ghatak_sherrington(0.0)
    }

    #[test]
    fn params_validation() {
        assert!(RsbParams::new(vec![0.0, 1.0], vec![0.0, 0.3, 0.7], 0.0).is_ok());
        assert!(RsbParams::new(vec![0.0, 0.5], vec![0.0, 0.3, 0.7], 0.0).is_err());
        assert!(
            RsbParams::new(vec![0.0, 0.6, 0.4, 1.0], vec![0.0, 0.1, 0.2, 0.3, 0.7], 0.0).is_err()
        );
        assert!(RsbParams::new(vec![0.0, 1.0], vec![0.0, 0.8, 0.7], 0.0).is_err());
        assert!(RsbParams::new(vec![0.0, 1.0], vec![0.0, 0.7], 0.0).is_err());
        let p = RsbParams::replica_symmetric(0.2, 1.5, 0.0).unwrap();
        assert!(p.validate(0.0, 1.0).is_err());
    }

    #[test]
    fn terminal_function_examples() {
        let sk = PriorMeasure::counting(&[-1.0, 1.0]).unwrap();
        for &x in &[-3.0, 0.0, 0.4, 7.0] {
            assert_abs_diff_eq!(
                sk.log_partition(x, 0.0),
                (2.0 * f64::cosh(x)).ln(),
                epsilon = 1e-14
            );
        }
        let lam: f64 = 0.37;
        for &x in &[-2.0, 0.0, 1.1] {
            let closed = (1.0 + 2.0 * lam.exp() * f64::cosh(x)).ln();
            assert_abs_diff_eq!(gs().log_partition(x, lam), closed, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(gs().log_partition(0.0, 0.0), 3f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn single_level_matches_direct_quadrature() {
        let xi = MixtureXi::sk(1.3);
        let u = 0.6;
        let lam = -0.4;
        let p = RsbParams::replica_symmetric(0.0, u, lam).unwrap();
        let ev = parisi_value(&gs(), &xi, &p, &EvalOptions::default()).unwrap();
        // m = (0, 1), q1 = 0: X_0 = log int exp(xi'(u) sigma^2 / 2 + lambda sigma^2)
        let direct = gs().log_partition(0.0, lam + 0.5 * xi.dxi(u));
        assert_abs_diff_eq!(ev.x0, direct, epsilon = 1e-13);
        // q1 > 0: one Gaussian level, compare against a fine trapezoid rule
        let p = RsbParams::replica_symmetric(0.25, u, lam).unwrap();
        let ev = parisi_value(&gs(), &xi, &p, &EvalOptions::default()).unwrap();
        let s = xi.dxi(0.25).sqrt();
        let top = lam + 0.5 * (xi.dxi(u) - xi.dxi(0.25));
        let h = 0.01;
        let mut acc = 0.0;
        for i in -1200..=1200 {
            let z = i as f64 * h;
            acc += h * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
                * gs().log_partition(s * z, top);
        }
        assert_abs_diff_eq!(ev.x0, acc, epsilon = 1e-11);
    }

    #[test]
    fn sk_derivative_is_one() {
        let sk = PriorMeasure::counting(&[-1.0, 1.0]).unwrap();
        let xi = MixtureXi::sk(0.9);
        for lam in [-3.0, 0.0, 2.0] {
            let p = RsbParams::new(vec![0.0, 0.3, 0.6, 1.0], vec![0.0, 0.1, 0.4, 0.8, 1.0], lam)
                .unwrap();
            let ev = parisi_value(&sk, &xi, &p, &EvalOptions::fixed(24)).unwrap();
            assert_abs_diff_eq!(ev.dx0_dlambda, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_collapses_for_very_negative_lambda() {
        let xi = MixtureXi::sk(1.0);
        let p = RsbParams::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.2, 0.4, 0.7], -30.0).unwrap();
        let ev = parisi_value(&gs(), &xi, &p, &EvalOptions::default()).unwrap();
        assert!(ev.dx0_dlambda < 1e-10, "{}", ev.dx0_dlambda);
    }

    #[test]
    fn duplicate_levels_collapse() {
        let xi = MixtureXi::sk(1.2);
        let dup =
            RsbParams::new(vec![0.0, 0.3, 0.5, 1.0], vec![0.0, 0.2, 0.2, 0.6, 0.8], 0.1).unwrap();
        let collapsed = RsbParams::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.2, 0.6, 0.8], 0.1).unwrap();
        assert_eq!(dup.collapse_empty_levels(), collapsed);
        let a = parisi_value(&gs(), &xi, &dup, &EvalOptions::fixed(32)).unwrap();
        let b = parisi_value(&gs(), &xi, &collapsed, &EvalOptions::fixed(32)).unwrap();
        assert!((a.x0 - b.x0).abs() < 1e-10);
    }

    #[test]
    fn lower_bound_is_nonnegative() {
        let xi = MixtureXi::sk(1.0);
        let p = RsbParams::replica_symmetric(0.0, 2.0 / 3.0, 0.0).unwrap();
        let gap =
            lower_bound_check(&gs(), &MixtureXi::zero(), &p, &EvalOptions::default()).unwrap();
        assert_abs_diff_eq!(gap, 0.0, epsilon = 1e-14);
        let gap = lower_bound_check(&gs(), &xi, &p, &EvalOptions::default()).unwrap();
        assert!(gap >= 0.0);
        let sk = PriorMeasure::counting(&[-1.0, 1.0]).unwrap();
        let p = RsbParams::replica_symmetric(0.0, 1.0, 0.0).unwrap();
        let gap = lower_bound_check(&sk, &xi, &p, &EvalOptions::default()).unwrap();
        // E log cosh(z sqrt(xi'(1))) by an independent adaptive rule
        let (oracle, _) = crate::quadrature::gaussian_expectation(
            |z| f64::cosh(z * xi.dxi(1.0).sqrt()).ln(),
            1e-14,
        );
        // q1 = 0 means the field is deterministic and the gap is xi'(1)/2
        assert_abs_diff_eq!(gap, 0.5 * xi.dxi(1.0), epsilon = 1e-13);
        let p = RsbParams::replica_symmetric(1.0, 1.0, 0.0).unwrap();
        let gap = lower_bound_check(&sk, &xi, &p, &EvalOptions::default()).unwrap();
        assert_abs_diff_eq!(gap, oracle, epsilon = 1e-10);
    }

    #[test]
    fn generic_functional_agrees_with_production_path() {
        let xi = MixtureXi::sk(1.1);
        let prior = PriorMeasure::ghatak_sherrington(0.2);
        let p = RsbParams::new(
            vec![0.0, 0.2, 0.5, 1.0],
            vec![0.0, 0.1, 0.3, 0.6, 0.8],
            -0.3,
        )
        .unwrap();
        let ev = parisi_value(&prior, &xi, &p, &EvalOptions::fixed(40)).unwrap();
        let var = p.variances(&xi);
        let levels = (0..=3)
            .map(|i| Level {
                variance: var[i],
                m: p.m[i],
            })
            .collect();
        let spec = GridSpec::symmetric(grid_half_width(var.iter().sum(), 1.0), 2049);
        let f = ParisiFunctional::new(levels, gauss_hermite_cached(40).unwrap(), spec);
        let lam = p.lambda;
        let term = |x: f64| prior.log_partition(x, lam);
        let rec = f.apply(&term);
        assert!((rec.f0 - ev.x0).abs() < 1e-9, "{} vs {}", rec.f0, ev.x0);
        for l in 0..=3 {
            assert!(rec.normalization_error(l) < 1e-10);
        }
    }
}
