//! Small numeric helpers shared across modules.

/// Numerically stable `log sum exp(x_i)`. Returns `-inf` for an empty
/// iterator.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    #[inline]
    pub fn add(&mut self, x: f64) {
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Pairwise (cascade) summation; the result does not depend on how the
/// slice was produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Brent's method on a bracketing interval `[a, b]` with `f(a) f(b) <= 0`.
pub fn brent_root(
    mut f: impl FnMut(f64) -> f64,
    mut a: f64,
    mut b: f64,
    xtol: f64,
    max_iter: usize,
) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Some(b)
}

/// Root of a nondecreasing function by safeguarded Newton.
///
/// `f` returns the value and derivative. The iteration keeps the tightest
/// known bracket, grows it geometrically from `x0` while one side is still
/// open, and falls back to bisection whenever a Newton step leaves it.
/// Stops once `|f| <= ftol` or the bracket is narrower than
/// `1e-14 (1 + |x|)`; the returned point is always the last one passed to
/// `f`. Returns `Ok(None)` when no root is found within `|x| <= 1e8`.
pub fn increasing_root<E>(
    mut f: impl FnMut(f64) -> Result<(f64, f64), E>,
    x0: f64,
    ftol: f64,
) -> Result<Option<f64>, E> {
    let mut x = x0;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut width = 1.0;
    for _ in 0..400 {
        let (g, dg) = f(x)?;
        if g.abs() <= ftol || hi - lo <= 1e-14 * (1.0 + x.abs()) {
            return Ok(Some(x));
        }
        if g < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = f64::NAN;
        if dg > 0.0 {
            next = x - (g / dg).clamp(-50.0, 50.0);
        }
        if !(next > lo && next < hi) {
            next = if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else if lo.is_finite() {
                width *= 2.0;
                x + width
            } else {
                width *= 2.0;
                x - width
            };
        }
        if !next.is_finite() || next.abs() > 1e8 {
            break;
        }
        x = next;
    }
    Ok(None)
}

/// Golden-section search for a maximum of `f` on `[a, b]`.
pub fn golden_max(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, xtol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > xtol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
