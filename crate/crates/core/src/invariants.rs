//! Randomized checks of the structural identities and inequalities of the
//! Parisi functional. Each check maps an instance to a violation measure
//! that must stay below the check's tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::functional::{
    grid_half_width, parisi_value, EvalOptions, Level, ParisiFunctional, RsbParams,
};
use crate::model::{Atom, MixtureXi, PriorMeasure};
use crate::quadrature::{gauss_hermite_cached, GridFunction, GridSpec, Interpolation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteOptions {
    pub trials: usize,
    pub seed: u64,
    pub gh_order: usize,
    pub grid_points: usize,
    /// Instances for the lambda-derivative check.
    pub derivative_trials: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 7,
            gh_order: 32,
            grid_points: 1025,
            derivative_trials: 50,
        }
    }
}

/// Result of one property over all its trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Largest violation seen.
    pub worst: f64,
    pub tolerance: f64,
}

impl PropertyOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// A random prior, mixture and level structure with `k <= 3`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub prior: PriorMeasure,
    pub xi: MixtureXi,
    pub lambda: f64,
    /// Generic levels `0..=k`, exponents nondecreasing, possibly starting
    /// with zeros and not necessarily ending at 1.
    pub levels: Vec<Level>,
    /// Order parameters with `m_k = 1` for the prior recursion.
    pub params: RsbParams,
}

impl Instance {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n_atoms = rng.random_range(2..=4);
        let atoms: Vec<Atom> = (0..n_atoms)
            .map(|_| Atom::new(rng.random_range(-1.5..1.5), rng.random_range(0.2..2.0)))
            .collect();
        let prior = PriorMeasure::atomic(atoms).expect("random atoms are valid");
        let xi = MixtureXi::new([
            (2, rng.random_range(0.05..1.2)),
            (4, rng.random_range(0.0..0.3)),
        ])
        .expect("even powers with nonnegative weights are valid");
        let lambda = rng.random_range(-1.0..1.0);
        let k = rng.random_range(1..=3);

        let mut m: Vec<f64> = (0..=k).map(|_| rng.random_range(0.05..1.0)).collect();
        m.sort_by(f64::total_cmp);
        let zeros = rng.random_range(0..=k);
        m.iter_mut().take(zeros).for_each(|x| *x = 0.0);
        let levels = m
            .iter()
            .map(|&m| Level {
                variance: rng.random_range(0.05..1.0),
                m,
            })
            .collect();

        let (d, big_d) = prior.support_bounds();
        let u = d + (big_d - d) * rng.random_range(0.1..0.9);
        let mut q: Vec<f64> = (0..k).map(|_| u * rng.random::<f64>()).collect();
        q.sort_by(f64::total_cmp);
        let mut qs = vec![0.0];
        qs.extend(q);
        qs.push(u);
        let mut pm: Vec<f64> = (0..k - 1).map(|_| rng.random::<f64>()).collect();
        pm.sort_by(f64::total_cmp);
        let mut ms = vec![0.0];
        ms.extend(pm);
        ms.push(1.0);
        let params = RsbParams::new(ms, qs, lambda).expect("sorted parameters are valid");
        Self {
            prior,
            xi,
            lambda,
            levels,
            params,
        }
    }

    pub fn k(&self) -> usize {
        self.levels.len() - 1
    }

    fn max_abs_sigma(&self) -> f64 {
        self.prior
            .nodes()
            .iter()
            .map(|a| a.sigma.abs())
            .fold(0.0, f64::max)
    }

    /// The generic functional for these levels.
    pub fn functional(&self, opts: &SuiteOptions) -> Result<ParisiFunctional> {
        let total: f64 = self.levels.iter().map(|l| l.variance).sum();
        let spec = GridSpec::symmetric(
            grid_half_width(total, self.max_abs_sigma()),
            opts.grid_points,
        );
        Ok(ParisiFunctional::new(
            self.levels.clone(),
            gauss_hermite_cached(opts.gh_order)?,
            spec,
        ))
    }

    pub fn terminal(&self) -> impl Fn(f64) -> f64 + '_ {
        move |x| self.prior.log_partition(x, self.lambda)
    }
}

fn with_levels(f: &ParisiFunctional, levels: Vec<Level>) -> ParisiFunctional {
    ParisiFunctional::new(
        levels,
        gauss_hermite_cached(f.rule().order()).expect("order already validated"),
        f.spec(),
    )
}

/// `|P(F + c) - P(F) - c|` for `c = 3.7`.
pub fn shift_violation(inst: &Instance, opts: &SuiteOptions) -> Result<f64> {
    let f = inst.functional(opts)?;
    let t = inst.terminal();
    let c = 3.7;
    let shifted = |x: f64| t(x) + c;
    let a = f.apply(&t).f0;
    let b = f.apply(&shifted).f0;
    Ok((b - a - c).abs())
}

/// Largest amount by which `F <= F'` fails to give `F_l <= F'_l` on the
/// grid or at the origin, with `F' = F + g`, `g >= 0`.
pub fn monotonicity_violation(inst: &Instance, opts: &SuiteOptions) -> Result<f64> {
    let f = inst.functional(opts)?;
    let t = inst.terminal();
    let bumped = |x: f64| t(x) + 0.3 * (-(x - 0.4).powi(2)).exp() + 0.05 * (1.0 + x.tanh());
    let lo = f.apply(&t);
    let hi = f.apply(&bumped);
    let mut worst = lo.f0 - hi.f0;
    for l in 1..=f.k() {
        for (a, b) in lo.grid(l).values().iter().zip(hi.grid(l).values()) {
            worst = worst.max(a - b);
        }
    }
    Ok(worst.max(0.0))
}

/// `E F(sum z_p) - P(m) F` (Jensen gives `<= 0`), together with the
/// prior floor `log int exp(lambda sigma^2) dnu - X_0`.
pub fn jensen_violation(inst: &Instance, opts: &SuiteOptions) -> Result<f64> {
    let f = inst.functional(opts)?;
    let t = inst.terminal();
    let p = f.apply(&t).f0;
    let linear: Vec<Level> = f.levels().iter().map(|l| Level { m: 0.0, ..*l }).collect();
    let mean = with_levels(&f, linear).apply(&t).f0;
    let x0 = parisi_value(
        &inst.prior,
        &inst.xi,
        &inst.params,
        &EvalOptions::fixed(opts.gh_order),
    )?
    .x0;
    let floor = inst.prior.log_partition(0.0, inst.lambda);
    Ok((mean - p).max(floor - x0).max(0.0))
}

/// Difference between `X_0` with a duplicated `q` level and `X_0` with
/// that level removed.
pub fn collapse_violation(inst: &Instance, opts: &SuiteOptions) -> Result<f64> {
    let p = &inst.params;
    let k = p.k();
    let mut m = p.m.clone();
    let mut q = p.q.clone();
    // split level 1 with an empty copy carrying an arbitrary exponent
    let m_new = 0.5 * (m[0] + m[1]);
    m.insert(1, m_new);
    q.insert(1, q[1]);
    let dup = RsbParams::new(m, q, p.lambda)?;
    debug_assert_eq!(dup.k(), k + 1);
    let eo = EvalOptions::fixed(opts.gh_order);
    let a = parisi_value(&inst.prior, &inst.xi, p, &eo)?.x0;
    let b = parisi_value(&inst.prior, &inst.xi, &dup, &eo)?.x0;
    let c = parisi_value(&inst.prior, &inst.xi, &dup.collapse_empty_levels(), &eo)?.x0;
    Ok((a - b).abs().max((a - c).abs()))
}

/// Worst discrepancy in the doubling identity `P(n)(F^1 + F^2) = 2 P(m) F^1`
/// over all split points `1 <= r <= k`. Levels `p >= r` are averaged
/// separately per copy, which yields `2 F^1_r`; the shared levels `p < r`
/// then run with exponents `m_p / 2`.
pub fn doubling_violation(inst: &Instance, opts: &SuiteOptions) -> Result<f64> {
    let f = inst.functional(opts)?;
    let t = inst.terminal();
    let rec = f.apply(&t);
    let mut worst: f64 = 0.0;
    for r in 1..=f.k() {
        let doubled = GridFunction::new(
            f.spec(),
            rec.grid(r).values().iter().map(|v| 2.0 * v).collect(),
            Interpolation::CubicSpline,
        );
        let halved: Vec<Level> = f
            .levels()
            .iter()
            .enumerate()
            .map(|(p, l)| Level {
                m: if p < r { 0.5 * l.m } else { l.m },
                ..*l
            })
            .collect();
        let lhs = with_levels(&f, halved).apply_from(r, &doubled);
        worst = worst.max((lhs - 2.0 * rec.f0).abs());
    }
    Ok(worst)
}

/// `E_0 log E_r W_r ... W_k exp(m_k (f - F)) - m_r (P f - P F)` for
/// `f = F - g <= F`, where `r` is the first level with nonzero exponent.
/// The inequality asks for a nonpositive value; the positive part is
/// returned.
pub fn last_lemma_violation(inst: &Instance, opts: &SuiteOptions) -> Result<f64> {
    let f = inst.functional(opts)?;
    let k = f.k();
    let levels = f.levels().to_vec();
    let Some(r) = levels.iter().position(|l| l.m > 0.0) else {
        return Ok(0.0);
    };
    let big = inst.terminal();
    let small = |x: f64| big(x) - 0.4 * (1.0 + (1.3 * x).sin()) - 0.1 * x * x / (1.0 + x * x);
    let rec = f.apply(&big);
    let rec_small = f.apply(&small);
    let rule = f.rule();
    let spec = f.spec();
    let mk = levels[k].m;

    // G_l(x) = E_l W_l G_{l+1}, with G_{k+1} = exp(m_k (f - F))
    let mut next: Option<GridFunction> = None;
    let tail = |next: &Option<GridFunction>, y: f64| match next {
        Some(g) => g.eval(y),
        None => (mk * (small(y) - big(y))).exp(),
    };
    for l in (r.max(1)..=k).rev() {
        let sd = levels[l].variance.sqrt();
        let values: Vec<f64> = spec
            .xs()
            .map(|x| rule.expect(|z| rec.weight(l, x, z) * tail(&next, x + sd * z)))
            .collect();
        next = Some(GridFunction::new(spec, values, Interpolation::CubicSpline));
    }
    let lhs = if r == 0 {
        let sd = levels[0].variance.sqrt();
        rule.expect(|z| rec.weight(0, 0.0, z) * tail(&next, sd * z))
            .ln()
    } else {
        // levels below r have zero exponent, so the outer average is linear
        let g = next.expect("r >= 1 leaves at least one tabulated level");
        let logs = GridFunction::new(
            spec,
            g.values().iter().map(|v| v.ln()).collect(),
            Interpolation::CubicSpline,
        );
        f.apply_from(r, &logs)
    };
    let rhs = levels[r].m * (rec_small.f0 - rec.f0);
    Ok((lhs - rhs).max(0.0))
}

/// `max_l |E_l W_l ... W_k - 1|`.
pub fn normalization_violation(inst: &Instance, opts: &SuiteOptions) -> Result<f64> {
    let f = inst.functional(opts)?;
    let t = inst.terminal();
    let rec = f.apply(&t);
    Ok((0..=f.k())
        .map(|l| rec.normalization_error(l))
        .fold(0.0, f64::max))
}

/// Negative part of the second central difference of `X_0` in `lambda`.
pub fn convexity_violation(inst: &Instance, opts: &SuiteOptions) -> Result<f64> {
    let eo = EvalOptions::fixed(opts.gh_order);
    let h = 1e-3;
    let x = |lam: f64| -> Result<f64> {
        let p = RsbParams {
            lambda: lam,
            ..inst.params.clone()
        };
        Ok(parisi_value(&inst.prior, &inst.xi, &p, &eo)?.x0)
    };
    let l = inst.lambda;
    let d2 = (x(l + h)? - 2.0 * x(l)? + x(l - h)?) / (h * h);
    Ok((-d2).max(0.0))
}

/// `|analytic dX_0/dlambda - central difference|`, or infinity when the
/// analytic value leaves `[d, D]`.
pub fn derivative_violation(inst: &Instance, _opts: &SuiteOptions) -> Result<f64> {
    let eo = EvalOptions {
        gh_order: 40,
        adaptive: false,
        ..EvalOptions::default()
    };
    let ev = parisi_value(&inst.prior, &inst.xi, &inst.params, &eo)?;
    let (d, big_d) = inst.prior.support_bounds();
    if !(d..=big_d).contains(&ev.dx0_dlambda) {
        return Ok(f64::INFINITY);
    }
    let h = 1e-4;
    let x = |lam: f64| -> Result<f64> {
        let p = RsbParams {
            lambda: lam,
            ..inst.params.clone()
        };
        Ok(parisi_value(&inst.prior, &inst.xi, &p, &eo)?.x0)
    };
    let fd = (x(inst.lambda + h)? - x(inst.lambda - h)?) / (2.0 * h);
    Ok((fd - ev.dx0_dlambda).abs())
}

/// `int_0^u |m(q) - m'(q)| dq` for step functions sharing the same `u`.
pub fn order_parameter_distance(a: &RsbParams, b: &RsbParams) -> f64 {
    let mut cuts: Vec<f64> = a.q.iter().chain(&b.q).copied().collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            (w[1] - w[0]) * (a.order_parameter(mid) - b.order_parameter(mid)).abs()
        })
        .sum()
}

/// Ratio `|X_0(m, q) - X_0(m', q')| / int |m - m'|` for a random nearby
/// order parameter, computed at two discretizations. Returns both ratios.
pub fn continuity_ratios(
    inst: &Instance,
    rng: &mut impl Rng,
    opts: &SuiteOptions,
) -> Result<(f64, f64)> {
    let p = &inst.params;
    let k = p.k();
    let mut m = p.m.clone();
    let mut q = p.q.clone();
    for l in 1..k {
        m[l] = (m[l] + rng.random_range(-0.1..0.1)).clamp(m[l - 1], 1.0);
    }
    let u = p.u();
    for l in 1..=k {
        q[l] = (q[l] + u * rng.random_range(-0.05..0.05)).clamp(q[l - 1], u);
    }
    for l in (1..k).rev() {
        m[l] = m[l].min(m[l + 1]);
    }
    let other = RsbParams::new(m, q, p.lambda)?;
    let dist = order_parameter_distance(p, &other);
    if dist < 1e-12 {
        return Ok((0.0, 0.0));
    }
    let ratio = |order: usize, points: usize| -> Result<f64> {
        let eo = EvalOptions {
            gh_order: order,
            adaptive: false,
            grid_points: points,
            ..EvalOptions::default()
        };
        let a = parisi_value(&inst.prior, &inst.xi, p, &eo)?.x0;
        let b = parisi_value(&inst.prior, &inst.xi, &other, &eo)?.x0;
        Ok((a - b).abs() / dist)
    };
    Ok((
        ratio(opts.gh_order, opts.grid_points)?,
        ratio(2 * opts.gh_order, 2 * opts.grid_points - 1)?,
    ))
}

type Check = fn(&Instance, &SuiteOptions) -> Result<f64>;

/// Name, check and tolerance of every property run by [`run_suite`].
pub const PROPERTIES: [(&str, Check, f64); 7] = [
    ("shift", shift_violation, 1e-10),
    ("monotonicity", monotonicity_violation, 1e-10),
    ("jensen_floor", jensen_violation, 1e-10),
    ("level_collapse", collapse_violation, 1e-10),
    ("doubling", doubling_violation, 1e-9),
    ("last_lemma", last_lemma_violation, 1e-9),
    ("normalization", normalization_violation, 1e-10),
];

fn outcome(
    name: &'static str,
    tolerance: f64,
    trials: usize,
    mut violation: impl FnMut(usize) -> Result<f64>,
) -> Result<PropertyOutcome> {
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let v = violation(t)?;
        if !(v <= tolerance) {
            failures += 1;
        }
        worst = if v.is_nan() { f64::NAN } else { worst.max(v) };
    }
    Ok(PropertyOutcome {
        name,
        trials,
        failures,
        worst,
        tolerance,
    })
}

/// Runs every property on `opts.trials` random instances (the same
/// instances for each property), followed by lambda convexity, the
/// lambda-derivative check and continuity in the order parameter.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<PropertyOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let instances: Vec<Instance> = (0..opts.trials)
        .map(|_| Instance::random(&mut rng))
        .collect();
    let mut out = Vec::new();
    for (name, check, tol) in PROPERTIES {
        out.push(outcome(name, tol, instances.len(), |t| {
            check(&instances[t], opts)
        })?);
    }
    out.push(outcome("lambda_convexity", 1e-8, instances.len(), |t| {
        convexity_violation(&instances[t], opts)
    })?);
    let n_der = opts.derivative_trials.min(instances.len());
    out.push(outcome("lambda_derivative", 1e-7, n_der, |t| {
        derivative_violation(&instances[t], opts)
    })?);
    // the Lipschitz constant estimated at two discretizations must agree
    let mut cont_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xc0_47);
    let n_cont = instances.len().min(20);
    let mut ratios = Vec::with_capacity(n_cont);
    for inst in &instances[..n_cont] {
        ratios.push(continuity_ratios(inst, &mut cont_rng, opts)?);
    }
    let c_coarse = ratios.iter().map(|r| r.0).fold(0.0, f64::max);
    let c_fine = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let drift = (c_coarse - c_fine).abs() / c_fine.max(1e-300);
    out.push(PropertyOutcome {
        name: "continuity",
        trials: n_cont,
        failures: usize::from(!(drift <= 0.05 && c_fine.is_finite())),
        worst: drift,
        tolerance: 0.05,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instances(n: usize) -> Vec<Instance> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..n).map(|_| Instance::random(&mut rng)).collect()
    }

    #[test]
    fn random_instances_are_valid() {
        for inst in instances(30) {
            let (d, big_d) = inst.prior.support_bounds();
            inst.params.validate(d, big_d).unwrap();
            assert!(inst.levels.windows(2).all(|w| w[0].m <= w[1].m));
            assert!((1..=3).contains(&inst.k()));
        }
    }

    #[test]
    fn each_property_holds_on_a_few_instances() {
        let opts = SuiteOptions::default();
        for inst in instances(4) {
            for (name, check, tol) in PROPERTIES {
                let v = check(&inst, &opts).unwrap();
                assert!(v <= tol, "{name}: {v}");
            }
            assert!(convexity_violation(&inst, &opts).unwrap() <= 1e-8);
            assert!(derivative_violation(&inst, &opts).unwrap() <= 1e-7);
        }
    }

    #[test]
    fn distance_between_step_functions() {
        let a = RsbParams::new(vec![0.0, 1.0], vec![0.0, 0.5, 1.0], 0.0).unwrap();
        let b = RsbParams::new(vec![0.0, 1.0], vec![0.0, 0.25, 1.0], 0.0).unwrap();
        assert!((order_parameter_distance(&a, &b) - 0.25).abs() < 1e-15);
        assert_eq!(order_parameter_distance(&a, &a), 0.0);
    }

    #[test]
    fn small_suite_passes() {
        let opts = SuiteOptions {
            trials: 6,
            derivative_trials: 6,
            ..SuiteOptions::default()
        };
        for o in run_suite(&opts).unwrap() {
            assert!(o.passed(), "{o:?}");
        }
    }
}
