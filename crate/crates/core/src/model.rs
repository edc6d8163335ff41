//! Spin priors and mixture covariance functions.
//!
//! A [`PriorMeasure`] is a finite positive measure on a bounded set of
//! real spins, given by atoms plus an optional continuous part. The
//! continuous part is discretized once at construction with a
//! Gauss-Legendre rule, so every sum over the prior downstream is finite.
//!
//! A [`MixtureXi`] is the covariance profile `xi(x) = sum_p c_p x^p` over
//! even powers `p`, with `c_p = a_p^2 >= 0`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::util::log_sum_exp;

/// Default Gauss-Legendre node count for continuous prior parts.
pub const DEFAULT_DENSITY_NODES: usize = 64;

/// A point mass `weight * delta(sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub sigma: f64,
    pub weight: f64,
}

impl Atom {
    pub fn new(sigma: f64, weight: f64) -> Self {
        Self { sigma, weight }
    }
}

/// Continuous part of a prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Density {
    /// Uniform probability density on `[a, b]`.
    Uniform {
        a: f64,
        b: f64,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
}

fn default_nodes() -> usize {
    DEFAULT_DENSITY_NODES
}

impl Density {
    fn discretize(&self) -> Vec<Atom> {
        match *self {
            Density::Uniform { a, b, nodes } => {
                let (x, w) = gauss_legendre(nodes);
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                // weights of the GL rule sum to 2 on [-1,1]; density is 1/(b-a)
                x.iter()
                    .zip(&w)
                    .map(|(&t, &wt)| Atom::new(mid + half * t, 0.5 * wt))
                    .collect()
            }
        }
    }

    /// Essential range of `sigma^2` over the density's support.
    fn square_range(&self) -> (f64, f64) {
        match *self {
            Density::Uniform { a, b, .. } => {
                let lo = if a <= 0.0 && b >= 0.0 {
                    0.0
                } else {
                    (a * a).min(b * b)
                };
                (lo, (a * a).max(b * b))
            }
        }
    }
}

/// Serialized form of a prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Density>,
}

/// A finite positive measure on a bounded spin set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorSpec", into = "PriorSpec")]
pub struct PriorMeasure {
    spec: PriorSpec,
    nodes: Vec<Atom>,
    d: f64,
    big_d: f64,
    total_mass: f64,
}

impl TryFrom<PriorSpec> for PriorMeasure {
    type Error = Error;

    fn try_from(spec: PriorSpec) -> Result<Self> {
        PriorMeasure::from_spec(spec)
    }
}

impl From<PriorMeasure> for PriorSpec {
    fn from(p: PriorMeasure) -> Self {
        p.spec
    }
}

impl PriorMeasure {
    pub fn from_spec(spec: PriorSpec) -> Result<Self> {
        for a in &spec.atoms {
            if !a.sigma.is_finite() {
                return Err(Error::InvalidPrior(format!("non-finite spin {}", a.sigma)));
            }
            if !(a.weight.is_finite() && a.weight > 0.0) {
                return Err(Error::InvalidPrior(format!(
                    "weight {} at sigma {} is not strictly positive",
                    a.weight, a.sigma
                )));
            }
        }
        let mut nodes = spec.atoms.clone();
        let mut d = f64::INFINITY;
        let mut big_d = f64::NEG_INFINITY;
        for a in &spec.atoms {
            let s2 = a.sigma * a.sigma;
            d = d.min(s2);
            big_d = big_d.max(s2);
        }
        if let Some(density) = &spec.density {
            match *density {
                Density::Uniform { a, b, nodes: n } => {
                    if !(a.is_finite() && b.is_finite() && a < b) {
                        return Err(Error::InvalidPrior(format!(
                            "uniform density needs finite a < b, got [{a}, {b}]"
                        )));
                    }
                    if n == 0 || n > 512 {
                        return Err(Error::InvalidPrior(format!(
                            "density node count {n} outside 1..=512"
                        )));
                    }
                }
            }
            let (lo, hi) = density.square_range();
            d = d.min(lo);
            big_d = big_d.max(hi);
            nodes.extend(density.discretize());
        }
        if nodes.is_empty() {
            return Err(Error::InvalidPrior("empty measure".into()));
        }
        let total_mass = nodes.iter().map(|a| a.weight).sum();
        Ok(Self {
            spec,
            nodes,
            d,
            big_d,
            total_mass,
        })
    }

    /// Purely atomic prior.
    pub fn atomic(atoms: Vec<Atom>) -> Result<Self> {
        Self::from_spec(PriorSpec {
            atoms,
            density: None,
        })
    }

    /// Counting measure on the given spin values.
    pub fn counting(values: &[f64]) -> Result<Self> {
        Self::atomic(values.iter().map(|&s| Atom::new(s, 1.0)).collect())
    }

    /// Ghatak-Sherrington prior: counting measure on `{-1, 0, 1}` tilted by
    /// the crystal field `h * sigma^2`.
    pub fn ghatak_sherrington(h: f64) -> Self {
        Self::atomic(vec![
            Atom::new(-1.0, h.exp()),
            Atom::new(0.0, 1.0),
            Atom::new(1.0, h.exp()),
        ])
        .expect("valid GS prior")
    }

    /// Sherrington-Kirkpatrick prior: counting measure on `{-1, 1}` tilted
    /// by the external field `h * sigma`.
    pub fn sherrington_kirkpatrick(h: f64) -> Self {
        Self::atomic(vec![Atom::new(-1.0, (-h).exp()), Atom::new(1.0, h.exp())])
            .expect("valid SK prior")
    }

    /// Uniform probability density on `[a, b]`.
    pub fn uniform(a: f64, b: f64, nodes: usize) -> Result<Self> {
        Self::from_spec(PriorSpec {
            atoms: vec![],
            density: Some(Density::Uniform { a, b, nodes }),
        })
    }

    pub fn spec(&self) -> &PriorSpec {
        &self.spec
    }

    /// Support points used for every sum over the prior (atoms followed by
    /// the density discretization).
    pub fn nodes(&self) -> &[Atom] {
        &self.nodes
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// `(d, D)`: essential min and max of `sigma^2`.
    pub fn support_bounds(&self) -> (f64, f64) {
        (self.d, self.big_d)
    }

    /// Mass the atoms (not the density) put on `{sigma^2 = s2}`.
    pub fn atom_mass_at_square(&self, s2: f64) -> f64 {
        let tol = 1e-12 * s2.abs().max(1.0);
        self.spec
            .atoms
            .iter()
            .filter(|a| (a.sigma * a.sigma - s2).abs() <= tol)
            .map(|a| a.weight)
            .sum()
    }

    /// Restriction of the atoms to `{sigma^2 = s2}`, keeping their weights.
    pub fn restrict_to_square(&self, s2: f64) -> Option<PriorMeasure> {
        let tol = 1e-12 * s2.abs().max(1.0);
        let atoms: Vec<Atom> = self
            .spec
            .atoms
            .iter()
            .filter(|a| (a.sigma * a.sigma - s2).abs() <= tol)
            .copied()
            .collect();
        if atoms.is_empty() {
            None
        } else {
            PriorMeasure::atomic(atoms).ok()
        }
    }

    /// The change of measure `w(sigma) -> w(sigma) exp(field(sigma))`.
    /// Only defined for purely atomic priors.
    pub fn tilted(&self, field: impl Fn(f64) -> f64) -> Result<PriorMeasure> {
        if self.spec.density.is_some() {
            return Err(Error::InvalidPrior(
                "field tilting requires a purely atomic prior".into(),
            ));
        }
        PriorMeasure::atomic(
            self.spec
                .atoms
                .iter()
                .map(|a| Atom::new(a.sigma, a.weight * field(a.sigma).exp()))
                .collect(),
        )
    }

    /// All weights multiplied by `c > 0`. Only defined for purely atomic
    /// priors.
    pub fn scaled(&self, c: f64) -> Result<PriorMeasure> {
        self.tilted(|_| c.ln())
    }

    /// `log sum_sigma w exp(sigma x + lambda sigma^2)`.
    pub fn log_partition(&self, x: f64, lambda: f64) -> f64 {
        log_sum_exp(
            self.nodes
                .iter()
                .map(|a| a.weight.ln() + a.sigma * x + lambda * a.sigma * a.sigma),
        )
    }

    /// Log partition together with Gibbs averages of `sigma`, `sigma^2`
    /// and the variance of `sigma^2`.
    pub fn gibbs(&self, x: f64, lambda: f64) -> GibbsMoments {
        let mut max = f64::NEG_INFINITY;
        for a in &self.nodes {
            let e = a.weight.ln() + a.sigma * x + lambda * a.sigma * a.sigma;
            if e > max {
                max = e;
            }
        }
        let (mut s0, mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0, 0.0);
        for a in &self.nodes {
            let sq = a.sigma * a.sigma;
            let w = (a.weight.ln() + a.sigma * x + lambda * sq - max).exp();
            s0 += w;
            s1 += w * a.sigma;
            s2 += w * sq;
            s4 += w * sq * sq;
        }
        let mean_sq = s2 / s0;
        GibbsMoments {
            log_z: max + s0.ln(),
            mean: s1 / s0,
            mean_sq,
            var_sq: (s4 / s0 - mean_sq * mean_sq).max(0.0),
        }
    }
}

/// Single-site Gibbs averages at field `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsMoments {
    pub log_z: f64,
    pub mean: f64,
    pub mean_sq: f64,
    pub var_sq: f64,
}

/// Even-polynomial covariance `xi(x) = sum_p c_p x^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureXi {
    // (p, c_p) with p even, c_p >= 0, sorted by p
    terms: Vec<(u32, f64)>,
}

impl MixtureXi {
    /// Build from `(p, a_p^2)` pairs. Odd or zero powers are rejected.
    pub fn new(terms: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut map: BTreeMap<u32, f64> = BTreeMap::new();
        for (p, c) in terms {
            if p == 0 || p % 2 == 1 {
                return Err(Error::InvalidMixture(format!(
                    "power {p} is not a positive even integer"
                )));
            }
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidMixture(format!(
                    "coefficient a_{p}^2 = {c} must be finite and nonnegative"
                )));
            }
            *map.entry(p).or_insert(0.0) += c;
        }
        Ok(Self {
            terms: map.into_iter().filter(|&(_, c)| c != 0.0).collect(),
        })
    }

    /// Classical SK covariance `beta^2 x^2 / 2`.
    pub fn sk(beta: f64) -> Self {
        Self::new([(2, 0.5 * beta * beta)]).expect("valid SK mixture")
    }

    /// `xi = 0`: decoupled spins.
    pub fn zero() -> Self {
        Self { terms: vec![] }
    }

    pub fn terms(&self) -> &[(u32, f64)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn xi(&self, x: f64) -> f64 {
        self.terms.iter().map(|&(p, c)| c * x.powi(p as i32)).sum()
    }

    pub fn dxi(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(p, c)| c * p as f64 * x.powi(p as i32 - 1))
            .sum()
    }

    pub fn ddxi(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(p, c)| c * (p * (p - 1)) as f64 * x.powi(p as i32 - 2))
            .sum()
    }

    /// `theta(q) = q xi'(q) - xi(q)`, closed form `sum_p (p-1) c_p q^p`.
    pub fn theta(&self, q: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(p, c)| (p - 1) as f64 * c * q.powi(p as i32))
            .sum()
    }

    /// Verify `xi'' > 0` on a grid of `(0, big_d]`. A zero mixture passes.
    pub fn check_convex(&self, big_d: f64) -> Result<()> {
        if self.is_zero() || big_d <= 0.0 {
            return Ok(());
        }
        for i in 1..=256 {
            let x = big_d * i as f64 / 256.0;
            let v = self.ddxi(x);
            if !(v > 0.0) {
                return Err(Error::InvalidMixture(format!(
                    "xi''({x}) = {v} is not positive"
                )));
            }
        }
        Ok(())
    }

    /// `max { xi(x) : x in [d, D] }`; `xi` is increasing on `[0, inf)`.
    pub fn max_on(&self, d: f64, big_d: f64) -> f64 {
        self.xi(d).max(self.xi(big_d))
    }
}

impl Serialize for MixtureXi {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let map: BTreeMap<String, f64> = self
            .terms
            .iter()
            .map(|&(p, c)| (format!("a{p}_sq"), c))
            .collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MixtureXi {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map: BTreeMap<String, f64> = BTreeMap::deserialize(d)?;
        MixtureXi::from_key_map(&map).map_err(serde::de::Error::custom)
    }
}

impl MixtureXi {
    /// Parse `{"beta_sk": b}` or `{"a2_sq": .., "a4_sq": ..}`.
    pub fn from_key_map(map: &BTreeMap<String, f64>) -> Result<Self> {
        let mut terms = Vec::new();
        for (key, &v) in map {
            if key == "beta_sk" {
                terms.push((2, 0.5 * v * v));
                continue;
            }
            let p = key
                .strip_prefix('a')
                .and_then(|r| r.strip_suffix("_sq"))
                .and_then(|p| p.parse::<u32>().ok())
                .ok_or_else(|| Error::InvalidMixture(format!("unknown key {key:?}")))?;
            terms.push((p, v));
        }
        MixtureXi::new(terms)
    }
}
