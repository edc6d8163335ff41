//! Exact finite-size free energies of the two-spin model
//! `H_N(sigma) = beta / sqrt(N) sum_{i<j} g_ij sigma_i sigma_j` with i.i.d.
//! standard normal couplings, by enumeration of all configurations.
//!
//! Every disorder sample is generated from its own ChaCha20 stream keyed by
//! `(seed, sample index)`, so results do not depend on how the samples are
//! scheduled across threads.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{MixtureXi, PriorMeasure};
use crate::util::{pairwise_sum, LogSumExp};

/// Largest number of configurations [`exact_log_partition`] will visit.
pub const ENUMERATION_BUDGET: f64 = 1e8;

/// Slack added to `eps` when testing `|R_11 - u| <= eps`, so that
/// self-overlaps sitting exactly on the window edge are not lost to
/// rounding.
pub const WINDOW_SLACK: f64 = 1e-12;

/// Couplings `g_ij`, `i < j`, of one disorder realization.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderSample {
    n: usize,
    seed: u64,
    index: u64,
    couplings: Vec<f64>,
}

impl DisorderSample {
    /// Draws the couplings in row-major order `(0,1), (0,2), ..., (1,2), ...`
    /// from stream `index` of the generator seeded with `seed`.
    pub fn generate(n: usize, seed: u64, index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let couplings = (0..n * n.saturating_sub(1) / 2)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Self {
            n,
            seed,
            index,
            couplings,
        }
    }

    pub fn from_couplings(n: usize, couplings: Vec<f64>) -> Result<Self> {
        if couplings.len() != n * n.saturating_sub(1) / 2 {
            return Err(Error::InvalidParams(format!(
                "{n} spins need {} couplings, got {}",
                n * n.saturating_sub(1) / 2,
                couplings.len()
            )));
        }
        Ok(Self {
            n,
            seed: 0,
            index: 0,
            couplings,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    /// `g_ij` for `i != j`.
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        // rows 0..i hold (n-1) + (n-2) + ... + (n-i) entries
        self.couplings[i * (2 * self.n - i - 1) / 2 + (j - i - 1)]
    }

    /// Symmetric matrix with zero diagonal.
    fn dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = self.coupling(i, j);
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        g
    }

    /// `H_N(sigma)` computed directly.
    pub fn energy(&self, beta: f64, sigma: &[f64]) -> f64 {
        let n = self.n;
        let mut e = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                e += self.coupling(i, j) * sigma[i] * sigma[j];
            }
        }
        beta * e / (n as f64).sqrt()
    }
}

/// Window on the self-overlap `R_11 = sum sigma_i^2 / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub u: f64,
    pub eps: f64,
}

impl Window {
    pub fn contains(&self, r11: f64) -> bool {
        (r11 - self.u).abs() <= self.eps + WINDOW_SLACK
    }
}

/// Odometer carries reaching this digit trigger a fresh computation of
/// the local fields.
const REFRESH_DEPTH: usize = 4;

/// The default window half-width `N^{-1/2}`.
pub fn default_eps(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

fn check_budget(prior: &PriorMeasure, n: usize) -> Result<()> {
    let count = (prior.nodes().len() as f64).powi(n as i32);
    if count > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded(count));
    }
    Ok(())
}

/// Enumerates `Sigma^N` in odometer order, updating the local fields
/// `sum_j g_ij sigma_j` incrementally, and returns
/// `(1/N) log sum exp(H_N(sigma)) prod w(sigma_i)` over configurations
/// whose self-overlap passes `window`.
fn enumerate(
    prior: &PriorMeasure,
    beta: f64,
    sample: &DisorderSample,
    window: Option<Window>,
) -> Result<f64> {
    check_budget(prior, sample.n)?;
    let n = sample.n;
    if n == 0 {
        return Ok(0.0);
    }
    let atoms = prior.nodes();
    let sig: Vec<f64> = atoms.iter().map(|a| a.sigma).collect();
    let sq: Vec<f64> = sig.iter().map(|s| s * s).collect();
    let logw: Vec<f64> = atoms.iter().map(|a| a.weight.ln()).collect();
    let g = sample.dense();
    let scale = beta / (n as f64).sqrt();

    let mut digits = vec![0usize; n];
    let mut spins = vec![sig[0]; n];
    // field[i] = sum_j g_ij sigma_j
    let mut field = vec![0.0; n];
    let refresh = |spins: &[f64], field: &mut [f64]| {
        for (i, f) in field.iter_mut().enumerate() {
            *f = g[i * n..(i + 1) * n]
                .iter()
                .zip(spins)
                .map(|(gij, s)| gij * s)
                .sum();
        }
    };
    refresh(&spins, &mut field);
    let mut log_weight = logw[0] * n as f64;
    let mut sq_count = vec![0usize; atoms.len()];
    sq_count[0] = n;

    let mut acc = LogSumExp::default();
    loop {
        let passes = match window {
            None => true,
            Some(w) => {
                let r11 = sq_count
                    .iter()
                    .zip(&sq)
                    .map(|(&c, s)| c as f64 * s)
                    .sum::<f64>()
                    / n as f64;
                w.contains(r11)
            }
        };
        if passes {
            let energy = 0.5 * spins.iter().zip(&field).map(|(s, f)| s * f).sum::<f64>();
            acc.add(scale * energy + log_weight);
        }

        // advance the odometer
        let mut i = 0;
        loop {
            if i == n {
                return Ok(acc.value() / n as f64);
            }
            let old = digits[i];
            let new = if old + 1 == sig.len() { 0 } else { old + 1 };
            digits[i] = new;
            let delta = sig[new] - sig[old];
            spins[i] = sig[new];
            if delta != 0.0 {
                let row = &g[i * n..(i + 1) * n];
                for (f, gij) in field.iter_mut().zip(row) {
                    *f += gij * delta;
                }
            }
            log_weight += logw[new] - logw[old];
            sq_count[old] -= 1;
            sq_count[new] += 1;
            if new != 0 {
                // carries this deep are rare; recomputing the fields then
                // keeps rounding drift from accumulating
                if i >= REFRESH_DEPTH {
                    refresh(&spins, &mut field);
                }
                break;
            }
            i += 1;
        }
    }
}

/// `(1/N) log Z_N` for one disorder sample, where
/// `Z_N = sum_{sigma in Sigma^N} exp(H_N(sigma)) prod_i w(sigma_i)`; an
/// external field `h(sigma)` enters through the prior weights.
pub fn exact_log_partition(
    prior: &PriorMeasure,
    beta: f64,
    sample: &DisorderSample,
) -> Result<f64> {
    enumerate(prior, beta, sample, None)
}

/// As [`exact_log_partition`] restricted to `|R_11 - u| <= eps`. An empty
/// set of configurations gives `-inf`.
pub fn constrained_log_partition(
    prior: &PriorMeasure,
    beta: f64,
    sample: &DisorderSample,
    u: f64,
    eps: f64,
) -> Result<f64> {
    enumerate(prior, beta, sample, Some(Window { u, eps }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteNEstimate {
    pub n: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n_samples)`.
    pub stderr: f64,
    pub window: Option<Window>,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl FiniteNEstimate {
    /// `seed,sample_idx,value` rows.
    pub fn samples_csv(&self) -> String {
        let mut s = String::from("seed,sample_idx,value\n");
        for (i, v) in self.samples.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{}",
                self.seed,
                i,
                crate::objective::format_value(*v)
            );
        }
        s
    }
}

/// Mean and standard error of `values`, summed pairwise.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 || !mean.is_finite() {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Estimates `F_N` (or its constrained version when `window` is given)
/// from `n_samples` independent disorder samples.
pub fn estimate_f_n(
    prior: &PriorMeasure,
    beta: f64,
    n: usize,
    n_samples: usize,
    seed: u64,
    window: Option<Window>,
) -> Result<FiniteNEstimate> {
    check_budget(prior, n)?;
    if n_samples == 0 {
        return Err(Error::InvalidParams(
            "need at least one disorder sample".into(),
        ));
    }
    let samples = (0..n_samples as u64)
        .into_par_iter()
        .map(|idx| {
            let d = DisorderSample::generate(n, seed, idx);
            enumerate(prior, beta, &d, window)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, stderr) = mean_stderr(&samples);
    Ok(FiniteNEstimate {
        n,
        n_samples,
        seed,
        mean,
        stderr,
        window,
        samples,
    })
}

/// One configuration pair of [`covariance_residual`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceTrial {
    pub overlap: f64,
    /// Monte Carlo estimate of `(1/N) E H_N(sigma^1) H_N(sigma^2)`.
    pub estimate: f64,
    pub estimate_stderr: f64,
    /// `|estimate - xi(R_12)|`.
    pub residual: f64,
    /// `beta^2 / (2 N^2) sum_i (sigma^1_i sigma^2_i)^2`, the exact gap.
    pub exact_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    /// `beta^2 D^2 / (2N)`.
    pub bound: f64,
    pub max_residual: f64,
    pub max_exact_residual: f64,
    /// Trials with `residual <= bound + 4 estimate_stderr`.
    pub within_bound: usize,
    pub trials: Vec<CovarianceTrial>,
}

/// Compares the empirical covariance of the Hamiltonian at random pairs of
/// configurations, drawn from the normalized prior, with `xi(R_12)` for
/// `xi(q) = beta^2 q^2 / 2`.
pub fn covariance_residual(
    prior: &PriorMeasure,
    beta: f64,
    n: usize,
    trials: usize,
    disorder_samples: usize,
    seed: u64,
) -> Result<CovarianceReport> {
    if n < 2 || disorder_samples < 2 {
        return Err(Error::InvalidParams(
            "covariance check needs N >= 2 and at least two disorder samples".into(),
        ));
    }
    let atoms = prior.nodes();
    let total = prior.total_mass();
    let (_, big_d) = prior.support_bounds();
    let xi = MixtureXi::sk(beta);
    let nf = n as f64;
    let bound = beta * beta * big_d * big_d / (2.0 * nf);
    let disorder: Vec<DisorderSample> = (0..disorder_samples as u64)
        .map(|i| DisorderSample::generate(n, seed, i))
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let draw = |rng: &mut ChaCha20Rng| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let mut t = rng.random::<f64>() * total;
                for a in atoms {
                    if t < a.weight {
                        return a.sigma;
                    }
                    t -= a.weight;
                }
                atoms[atoms.len() - 1].sigma
            })
            .collect()
    };

    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let s1 = draw(&mut rng);
        let s2 = draw(&mut rng);
        let rho: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a * b).collect();
        let overlap = rho.iter().sum::<f64>() / nf;
        let exact_residual = beta * beta / (2.0 * nf * nf) * rho.iter().map(|r| r * r).sum::<f64>();
        let products: Vec<f64> = disorder
            .iter()
            .map(|d| d.energy(beta, &s1) * d.energy(beta, &s2) / nf)
            .collect();
        let (estimate, estimate_stderr) = mean_stderr(&products);
        out.push(CovarianceTrial {
            overlap,
            estimate,
            estimate_stderr,
            residual: (estimate - xi.xi(overlap)).abs(),
            exact_residual,
        });
    }
    Ok(CovarianceReport {
        bound,
        max_residual: out.iter().map(|t| t.residual).fold(0.0, f64::max),
        max_exact_residual: out.iter().map(|t| t.exact_residual).fold(0.0, f64::max),
        within_bound: out
            .iter()
            .filter(|t| t.residual <= bound + 4.0 * t.estimate_stderr)
            .count(),
        trials: out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub t: f64,
    /// `2 sqrt(L N t)`.
    pub threshold: f64,
    pub frequency: f64,
    /// `2 e^{-t}`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub n: usize,
    pub n_samples: usize,
    /// Mean of `X = log Z_N`.
    pub mean: f64,
    /// `max xi on [d, D] + beta^2 D^2 / (2N)`.
    pub l_const: f64,
    pub tails: Vec<TailRow>,
}

/// Empirical tail frequencies of `|X - mean X|` for `X = log Z_N` against
/// the Gaussian concentration bound `P(|X - E X| >= 2 sqrt(L N t)) <= 2 e^{-t}`.
/// Deviations below `1e-12 (1 + |mean|)` never count as hits.
pub fn concentration_check(
    prior: &PriorMeasure,
    beta: f64,
    n: usize,
    n_samples: usize,
    seed: u64,
    ts: &[f64],
) -> Result<ConcentrationReport> {
    let est = estimate_f_n(prior, beta, n, n_samples, seed, None)?;
    let nf = n as f64;
    let xs: Vec<f64> = est.samples.iter().map(|v| v * nf).collect();
    let mean = est.mean * nf;
    let (d, big_d) = prior.support_bounds();
    let l_const = MixtureXi::sk(beta).max_on(d, big_d) + beta * beta * big_d * big_d / (2.0 * nf);
    // deviations at rounding level are not counted as hits
    let noise = 1e-12 * (1.0 + mean.abs());
    let tails = ts
        .iter()
        .map(|&t| {
            let threshold = 2.0 * (l_const * nf * t).sqrt();
            let hits = xs
                .iter()
                .map(|x| (x - mean).abs())
                .filter(|&dev| dev >= threshold && dev > noise)
                .count();
            TailRow {
                t,
                threshold,
                frequency: hits as f64 / xs.len() as f64,
                bound: 2.0 * (-t).exp(),
            }
        })
        .collect();
    Ok(ConcentrationReport {
        n,
        n_samples,
        mean,
        l_const,
        tails,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Recomputes the partition function configuration by configuration
    /// with direct energies.
    fn brute_force(
        prior: &PriorMeasure,
        beta: f64,
        d: &DisorderSample,
        window: Option<Window>,
    ) -> f64 {
        let atoms = prior.nodes();
        let n = d.n();
        let mut terms = Vec::new();
        let total = atoms.len().pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let mut sigma = Vec::with_capacity(n);
            let mut lw = 0.0;
            for _ in 0..n {
                let a = atoms[c % atoms.len()];
                c /= atoms.len();
                sigma.push(a.sigma);
                lw += a.weight.ln();
            }
            let r11 = sigma.iter().map(|s| s * s).sum::<f64>() / n as f64;
            if window.is_none_or(|w| w.contains(r11)) {
                terms.push(d.energy(beta, &sigma) + lw);
            }
        }
        crate::util::log_sum_exp(terms) / n as f64
    }

    #[test]
    fn coupling_indexing() {
        let d = DisorderSample::from_couplings(4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(d.coupling(0, 1), 1.0);
        assert_eq!(d.coupling(3, 0), 3.0);
        assert_eq!(d.coupling(1, 2), 4.0);
        assert_eq!(d.coupling(2, 3), 6.0);
        assert!(DisorderSample::from_couplings(4, vec![0.0; 5]).is_err());
    }

    #[test]
    fn samples_are_reproducible_and_distinct() {
        let a = DisorderSample::generate(6, 11, 3);
        assert_eq!(a, DisorderSample::generate(6, 11, 3));
        assert_ne!(
            a.couplings(),
            DisorderSample::generate(6, 11, 4).couplings()
        );
        assert_ne!(
            a.couplings(),
            DisorderSample::generate(6, 12, 3).couplings()
        );
    }

    #[test]
    fn decoupled_value() {
        let prior = PriorMeasure::ghatak_sherrington(0.7);
        let d = DisorderSample::generate(7, 1, 0);
        let v = exact_log_partition(&prior, 0.0, &d).unwrap();
        assert!((v - (1.0 + 2.0 * 0.7f64.exp()).ln()).abs() < 1e-13);
    }

    #[test]
    fn two_spin_hand_enumeration() {
        let prior = PriorMeasure::sherrington_kirkpatrick(0.0);
        let (beta, g) = (1.3, -0.8);
        let d = DisorderSample::from_couplings(2, vec![g]).unwrap();
        let x = beta * g / 2f64.sqrt();
        let want = 0.5 * (2.0 * x.exp() + 2.0 * (-x).exp()).ln();
        assert!((exact_log_partition(&prior, beta, &d).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn spin_flip_symmetry() {
        let prior = PriorMeasure::sherrington_kirkpatrick(0.0);
        let d = DisorderSample::generate(9, 5, 0);
        let sigma: Vec<f64> = (0..9)
            .map(|i| if i % 3 == 0 { 1.0 } else { -1.0 })
            .collect();
        let flipped: Vec<f64> = sigma.iter().map(|s| -s).collect();
        assert_eq!(d.energy(1.1, &sigma), d.energy(1.1, &flipped));
        // with two spins, flipping one of them maps g to -g
        let g = DisorderSample::generate(2, 5, 1);
        let neg = DisorderSample::from_couplings(2, vec![-g.couplings()[0]]).unwrap();
        let a = exact_log_partition(&prior, 1.1, &g).unwrap();
        let b = exact_log_partition(&prior, 1.1, &neg).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn agrees_with_brute_force() {
        let prior = PriorMeasure::ghatak_sherrington(0.3);
        for idx in 0..3 {
            let d = DisorderSample::generate(6, 9, idx);
            let a = exact_log_partition(&prior, 1.4, &d).unwrap();
            assert!((a - brute_force(&prior, 1.4, &d, None)).abs() < 1e-12);
            let c = constrained_log_partition(&prior, 1.4, &d, 0.5, 0.1).unwrap();
            let w = Window { u: 0.5, eps: 0.1 };
            assert!((c - brute_force(&prior, 1.4, &d, Some(w))).abs() < 1e-12);
        }
    }

    #[test]
    fn constraint_cases() {
        let sk = PriorMeasure::sherrington_kirkpatrick(0.0);
        let d = DisorderSample::generate(8, 2, 0);
        let full = exact_log_partition(&sk, 0.9, &d).unwrap();
        let c = constrained_log_partition(&sk, 0.9, &d, 1.0, 1e-3).unwrap();
        assert!((c - full).abs() < 1e-15);

        let gs = PriorMeasure::ghatak_sherrington(0.0);
        let zero = constrained_log_partition(&gs, 0.9, &d, 0.0, 0.5 / 8.0).unwrap();
        assert_eq!(zero, 0.0);
        let empty = constrained_log_partition(&gs, 0.9, &d, 0.33, 0.01).unwrap();
        assert_eq!(empty, f64::NEG_INFINITY);

        let free = exact_log_partition(&gs, 0.9, &d).unwrap();
        for j in 0..=8 {
            let u = j as f64 / 8.0;
            assert!(constrained_log_partition(&gs, 0.9, &d, u, 0.01).unwrap() <= free);
        }
        assert!((constrained_log_partition(&gs, 0.9, &d, 0.5, 0.5).unwrap() - free).abs() < 1e-15);
    }

    #[test]
    fn budget_is_enforced() {
        let gs = PriorMeasure::ghatak_sherrington(0.0);
        let d = DisorderSample::generate(20, 0, 0);
        assert!(matches!(
            exact_log_partition(&gs, 1.0, &d),
            Err(Error::BudgetExceeded(_))
        ));
    }

    #[test]
    fn estimate_at_zero_coupling() {
        let gs = PriorMeasure::ghatak_sherrington(0.2);
        let e = estimate_f_n(&gs, 0.0, 5, 20, 3, None).unwrap();
        assert!((e.mean - (1.0 + 2.0 * 0.2f64.exp()).ln()).abs() < 1e-13);
        assert!(e.stderr < 1e-14);
        assert_eq!(e.samples_csv().lines().count(), 21);
    }

    #[test]
    fn estimate_is_deterministic() {
        let gs = PriorMeasure::ghatak_sherrington(0.2);
        let a = estimate_f_n(&gs, 0.7, 6, 16, 42, None).unwrap();
        let b = estimate_f_n(&gs, 0.7, 6, 16, 42, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn covariance_for_ising_spins() {
        let sk = PriorMeasure::sherrington_kirkpatrick(0.0);
        let r = covariance_residual(&sk, 1.2, 6, 5, 50, 1).unwrap();
        for t in &r.trials {
            assert!((t.exact_residual - r.bound).abs() < 1e-15);
        }
        let z = covariance_residual(&sk, 0.0, 6, 5, 50, 1).unwrap();
        assert_eq!(z.max_residual, 0.0);
    }

    #[test]
    fn concentration_at_zero_coupling() {
        let gs = PriorMeasure::ghatak_sherrington(0.0);
        let r = concentration_check(&gs, 0.0, 4, 10, 0, &[1.0, 2.0, 4.0]).unwrap();
        assert!(r.tails.iter().all(|t| t.frequency == 0.0));
    }
}
