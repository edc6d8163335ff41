//! Gaussian expectations and the one-level smoothing operator
//!
//! `smooth(F, v, m)(x) = (1/m) log E exp(m F(x + sqrt(v) z))`, with the
//! `m = 0` branch `E F(x + sqrt(v) z)`. Expectations over `z ~ N(0, 1)`
//! use Gauss-Hermite rules normalized to the standard normal.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Exponents below this are treated as the `m = 0` branch.
pub const M_ZERO: f64 = 1e-8;

pub const MAX_GH_ORDER: usize = 512;

/// Quadrature rule for `E f(z)`, `z ~ N(0, 1)`, built by
/// [`gauss_hermite`] or [`panel_rule`].
///
/// Weights sum to one. For very large Gauss-Hermite orders the outermost
/// weights underflow to zero in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermiteRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E f(z)`.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// Gauss-Hermite rule of order `n`, exact for polynomials of degree
/// `<= 2n - 1` under the standard normal.
pub fn gauss_hermite(n: usize) -> Result<GaussHermiteRule> {
    if n == 0 || n > MAX_GH_ORDER {
        return Err(Error::QuadratureOrder(n));
    }
    // Starting values are the eigenvalues of the Jacobi matrix; each is
    // polished by Newton on the orthonormal Hermite functions (the
    // polynomials times e^{-x^2/2}, which keeps the recurrence finite for
    // large n) and the weight follows from the derivative at the root.
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let nf = n as f64;
    let mut guesses = jacobi_hermite_eigenvalues(n);
    guesses.sort_by(|a, b| b.total_cmp(a));
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = guesses[i] / std::f64::consts::SQRT_2;
        let mut pp = 0.0;
        for _ in 0..20 {
            let mut p1 = pim4 * (-0.5 * z * z).exp();
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        if n % 2 == 1 && i == m - 1 {
            z = 0.0;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        let wi = 2.0 * (-z * z).exp() / (pp * pp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    // x[0] is the largest node; flip to ascending and rescale to N(0, 1)
    x.reverse();
    w.reverse();
    let s2 = std::f64::consts::SQRT_2;
    let nodes: Vec<f64> = x.iter().map(|v| v * s2).collect();
    let total: f64 = w.iter().sum();
    let weights = w.iter().map(|v| v / total).collect();
    Ok(GaussHermiteRule { nodes, weights })
}

/// Eigenvalues of the symmetric tridiagonal Jacobi matrix of the
/// probabilists' Hermite polynomials (zero diagonal, off-diagonal
/// `sqrt(k)`), by implicit QL.
fn jacobi_hermite_eigenvalues(n: usize) -> Vec<f64> {
    let mut d = vec![0.0f64; n];
    let mut e: Vec<f64> = (1..=n)
        .map(|k| if k < n { (k as f64).sqrt() } else { 0.0 })
        .collect();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 60, "QL iteration did not converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0f64, 1.0f64, 0.0f64);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d
}

/// Shared cache of Gauss-Hermite rules.
pub fn gauss_hermite_cached(n: usize) -> Result<Arc<GaussHermiteRule>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermiteRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().unwrap().get(&n) {
        return Ok(r.clone());
    }
    let rule = Arc::new(gauss_hermite(n)?);
    cache.lock().unwrap().insert(n, rule.clone());
    Ok(rule)
}

/// `E f(z)` with Gauss-Hermite orders 32, 64, ... doubled until two
/// successive values agree to `tol` (relative to `max(1, |value|)`).
/// Returns the value and the order used.
pub fn gaussian_expectation(mut f: impl FnMut(f64) -> f64, tol: f64) -> (f64, usize) {
    let mut n = 32;
    let mut prev = gauss_hermite_cached(n).unwrap().expect(&mut f);
    while n < MAX_GH_ORDER {
        n *= 2;
        let cur = gauss_hermite_cached(n).unwrap().expect(&mut f);
        if (cur - prev).abs() <= tol * cur.abs().max(1.0) {
            return (cur, n);
        }
        prev = cur;
    }
    (prev, n)
}

/// Half-width of the truncated domain used by [`panel_rule`]; the normal
/// mass outside is about `2e-19`.
pub const PANEL_HALF_WIDTH: f64 = 9.0;

/// Composite 8-point Gauss-Legendre rule for `E f(z)` on
/// `[-PANEL_HALF_WIDTH, PANEL_HALF_WIDTH]` with `panels` equal panels.
///
/// Gauss-Hermite converges slowly for integrands like `log cosh(c z)`
/// with large `c`, whose bend has width `1/c`; equal panels resolve it
/// once they are narrower than the bend.
pub fn panel_rule(panels: usize) -> Arc<GaussHermiteRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermiteRule>>>> = OnceLock::new();
    let panels = panels.max(1);
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().unwrap().get(&panels) {
        return r.clone();
    }
    let (gx, gw) = gauss_legendre(8);
    let h = 2.0 * PANEL_HALF_WIDTH / panels as f64;
    let mut nodes = Vec::with_capacity(8 * panels);
    let mut weights = Vec::with_capacity(8 * panels);
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    for p in 0..panels {
        let mid = -PANEL_HALF_WIDTH + (p as f64 + 0.5) * h;
        for (x, w) in gx.iter().zip(&gw) {
            let z = mid + 0.5 * h * x;
            nodes.push(z);
            weights.push(0.5 * h * w * (-0.5 * z * z).exp() / norm);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let rule = Arc::new(GaussHermiteRule { nodes, weights });
    cache.lock().unwrap().insert(panels, rule.clone());
    rule
}

/// [`panel_rule`] with panels no wider than `min(0.25, 0.5 / scale)`,
/// where `scale` is the largest slope of the integrand's exponent in `z`.
pub fn panel_rule_for_scale(scale: f64) -> Arc<GaussHermiteRule> {
    let width = 0.25f64.min(0.5 / scale.max(1e-300));
    let needed = (2.0 * PANEL_HALF_WIDTH / width).ceil() as usize;
    panel_rule(needed.next_power_of_two().max(64))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        if n % 2 == 1 && i == m - 1 {
            z = 0.0;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * pp * pp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Interpolation scheme of a [`GridFunction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Linear,
    /// Natural cubic spline. Linear in the sampled values, so derivatives
    /// of interpolated data propagate exactly.
    CubicSpline,
}

/// Uniform grid on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
}

impl GridSpec {
    pub const DEFAULT_POINTS: usize = 2049;

    pub fn symmetric(half_width: f64, points: usize) -> Self {
        assert!(points >= 4, "grid needs at least 4 points");
        Self {
            x_min: -half_width,
            x_max: half_width,
            points,
        }
    }

    pub fn step(&self) -> f64 {
        (self.x_max - self.x_min) / (self.points - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.x_max
        } else {
            self.x_min + i as f64 * self.step()
        }
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points).map(|i| self.x(i))
    }
}

/// A real function sampled on a uniform grid. Inside the grid it
/// interpolates; outside it extrapolates linearly with the boundary slope.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    spec: GridSpec,
    values: Vec<f64>,
    // spline second derivatives (all zero for linear interpolation)
    second: Vec<f64>,
    kind: Interpolation,
}

impl GridFunction {
    pub fn new(spec: GridSpec, values: Vec<f64>, kind: Interpolation) -> Self {
        assert_eq!(spec.points, values.len());
        assert!(
            values.iter().all(|v| v.is_finite()),
            "grid values must be finite"
        );
        let second = match kind {
            Interpolation::Linear => vec![0.0; values.len()],
            Interpolation::CubicSpline => natural_spline_second(&values, spec.step()),
        };
        Self {
            spec,
            values,
            second,
            kind,
        }
    }

    pub fn sample(spec: GridSpec, kind: Interpolation, f: impl Fn(f64) -> f64) -> Self {
        Self::new(spec, spec.xs().map(f).collect(), kind)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.kind
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let h = self.spec.step();
        let y = &self.values;
        let m = &self.second;
        if x <= self.spec.x_min {
            let slope = (y[1] - y[0]) / h - h / 6.0 * (2.0 * m[0] + m[1]);
            return y[0] + slope * (x - self.spec.x_min);
        }
        if x >= self.spec.x_max {
            let slope = (y[n - 1] - y[n - 2]) / h + h / 6.0 * (m[n - 2] + 2.0 * m[n - 1]);
            return y[n - 1] + slope * (x - self.spec.x_max);
        }
        let s = (x - self.spec.x_min) / h;
        let i = (s.floor() as usize).min(n - 2);
        let t = s - i as f64;
        let u = 1.0 - t;
        let lin = u * y[i] + t * y[i + 1];
        match self.kind {
            Interpolation::Linear => lin,
            Interpolation::CubicSpline => {
                lin + h * h / 6.0 * ((u * u * u - u) * m[i] + (t * t * t - t) * m[i + 1])
            }
        }
    }
}

fn natural_spline_second(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // M[i-1] + 4 M[i] + M[i+1] = 6 (y[i-1] - 2 y[i] + y[i+1]) / h^2
    let k = n - 2;
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    let scale = 6.0 / (h * h);
    for j in 0..k {
        let i = j + 1;
        let rhs = scale * (y[i - 1] - 2.0 * y[i] + y[i + 1]);
        if j == 0 {
            c[j] = 1.0 / 4.0;
            d[j] = rhs / 4.0;
        } else {
            let denom = 4.0 - c[j - 1];
            c[j] = 1.0 / denom;
            d[j] = (rhs - d[j - 1]) / denom;
        }
    }
    m[k] = d[k - 1];
    for j in (0..k - 1).rev() {
        m[j + 1] = d[j] - c[j] * m[j + 2];
    }
    m
}

/// `smooth(F, variance, m)` evaluated at a single point.
pub fn smooth_at(
    f: impl Fn(f64) -> f64,
    x: f64,
    variance: f64,
    m: f64,
    rule: &GaussHermiteRule,
) -> f64 {
    if variance <= 0.0 {
        return f(x);
    }
    let s = variance.sqrt();
    if m < M_ZERO {
        return rule.expect(|z| f(x + s * z));
    }
    let mut max = f64::NEG_INFINITY;
    let vals: Vec<f64> = rule
        .nodes
        .iter()
        .map(|&z| {
            let a = m * f(x + s * z);
            max = max.max(a);
            a
        })
        .collect();
    let sum: f64 = vals
        .iter()
        .zip(&rule.weights)
        .map(|(a, w)| w * (a - max).exp())
        .sum();
    (max + sum.ln()) / m
}

/// One smoothing level applied to a grid function; the output lives on the
/// same grid with the same interpolation.
pub fn smooth(f: &GridFunction, variance: f64, m: f64, rule: &GaussHermiteRule) -> GridFunction {
    if variance <= 0.0 {
        return f.clone();
    }
    let spec = *f.spec();
    GridFunction::new(
        spec,
        spec.xs()
            .map(|x| smooth_at(|y| f.eval(y), x, variance, m, rule))
            .collect(),
        f.interpolation(),
    )
}
