use parisi::finite_n::{constrained_log_partition, exact_log_partition, DisorderSample};
use parisi::functional::{parisi_value, EvalOptions, RsbParams};
use parisi::gs::{gs_f, gs_pm, gs_pm_lambda, GsPoint};
use parisi::invariants::{
    collapse_violation, jensen_violation, monotonicity_violation, normalization_violation,
    shift_violation, Instance, SuiteOptions,
};
use parisi::model::{MixtureXi, PriorMeasure};
use parisi::rs::rs_value;
use parisi::util::log_sum_exp;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn instance(seed: u64) -> Instance {
    Instance::random(&mut ChaCha20Rng::seed_from_u64(seed))
}

fn suite() -> SuiteOptions {
    SuiteOptions {
        grid_points: 513,
        ..SuiteOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn recursion_invariants_hold(seed in any::<u64>()) {
        let inst = instance(seed);
        let opts = suite();
        prop_assert!(shift_violation(&inst, &opts).unwrap() < 1e-10);
        prop_assert!(monotonicity_violation(&inst, &opts).unwrap() < 1e-10);
        prop_assert!(jensen_violation(&inst, &opts).unwrap() < 1e-10);
        prop_assert!(collapse_violation(&inst, &opts).unwrap() < 1e-10);
        prop_assert!(normalization_violation(&inst, &opts).unwrap() < 1e-10);
    }

    #[test]
    fn lambda_derivative_stays_in_support(seed in any::<u64>()) {
        let inst = instance(seed);
        let ev = parisi_value(&inst.prior, &inst.xi, &inst.params, &EvalOptions::fixed(32)).unwrap();
        let (d, big_d) = inst.prior.support_bounds();
        prop_assert!(ev.dx0_dlambda >= d - 1e-12 && ev.dx0_dlambda <= big_d + 1e-12);
        prop_assert!(ev.d2x0_dlambda2 >= -1e-10);
    }

    #[test]
    fn pm_is_the_rs_value_at_zero_overlap(
        beta in 0.0f64..4.0,
        h in -2.0f64..2.0,
        u in 0.01f64..0.99,
    ) {
        let point = GsPoint::new(beta, h).unwrap();
        let pm = gs_pm(point, u).unwrap().value;
        let rs = rs_value(&point.prior(), &point.xi(), u, 0.0, gs_pm_lambda(point, u));
        prop_assert!((pm - rs).abs() < 1e-10, "{} vs {}", pm, rs);
    }

    #[test]
    fn fluctuation_starts_at_zero_and_grows_with_u(
        beta in 0.5f64..20.0,
        u in 0.01f64..0.5,
        frac in 0.05f64..1.0,
    ) {
        prop_assert!(gs_f(beta, u, 0.0).abs() < 1e-14);
        let a = frac * u;
        prop_assert!(gs_f(beta, u, a) <= gs_f(beta, (u * 1.5).min(0.99), a) + 1e-12);
    }

    #[test]
    fn window_restriction_lowers_the_partition_function(
        seed in any::<u64>(),
        n in 2usize..7,
        beta in 0.0f64..2.0,
        h in -1.0f64..1.0,
        u in 0.0f64..1.0,
    ) {
        let prior = PriorMeasure::ghatak_sherrington(h);
        let sample = DisorderSample::generate(n, seed, 0);
        let full = exact_log_partition(&prior, beta, &sample).unwrap();
        let part = constrained_log_partition(&prior, beta, &sample, u, 0.2).unwrap();
        prop_assert!(part <= full + 1e-12);
        let wide = constrained_log_partition(&prior, beta, &sample, u, 2.0).unwrap();
        prop_assert!((wide - full).abs() < 1e-12);
    }

    #[test]
    fn global_flip_leaves_the_two_atom_model_unchanged(
        seed in any::<u64>(),
        n in 2usize..9,
        beta in 0.0f64..2.0,
        h in -1.0f64..1.0,
    ) {
        // flipping every spin maps the field h to -h
        let sample = DisorderSample::generate(n, seed, 3);
        let a = exact_log_partition(&PriorMeasure::sherrington_kirkpatrick(h), beta, &sample).unwrap();
        let b = exact_log_partition(&PriorMeasure::sherrington_kirkpatrick(-h), beta, &sample).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_is_shift_equivariant(
        xs in prop::collection::vec(-700.0f64..700.0, 1..20),
        c in -100.0f64..100.0,
    ) {
        let base = log_sum_exp(xs.iter().copied());
        let shifted = log_sum_exp(xs.iter().map(|x| x + c));
        prop_assert!((shifted - base - c).abs() <= 1e-12 * (1.0 + base.abs()));
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(base >= max && base <= max + (xs.len() as f64).ln() + 1e-12);
    }
}

#[test]
fn zero_coupling_gives_the_prior_entropy() {
    let prior = PriorMeasure::ghatak_sherrington(0.3);
    let params = RsbParams::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.2, 0.4, 0.6], 0.0).unwrap();
    let ev = parisi_value(&prior, &MixtureXi::zero(), &params, &EvalOptions::default()).unwrap();
    let expected = prior.total_mass().ln();
    assert!((ev.x0 - expected).abs() < 1e-12, "{} vs {expected}", ev.x0);
}
