//! Estimator algebra verified against quadrature: with every chain average
//! replaced by a Gauss-Hermite integral, the multilevel combination must
//! telescope exactly.

mod common;

use common::{one_param_problem, spec_at};
use eikmc_core::field::{sample_prior, ParamVector};
use eikmc_core::mcmc::SamplerKind;
use eikmc_core::mlmcmc::{
    combine_estimator, gh_expectation, gh_pair_means, indicator, mlmcmc_estimate, InverseProblem,
    JSchedule, MlConfig, PairMeans, Qoi,
};
use eikmc_core::oracle::QuadratureRule;
use eikmc_core::rng::stream;

fn qoi_center() -> Qoi {
    Qoi::SolutionAt {
        point: [0.5, 0.5],
        source: [0.0, 0.0],
    }
}

/// Exact A-term averages for the pair `(l, l')` of the estimator layout.
fn exact_pair(
    problem: &InverseProblem,
    l0: u32,
    l: u32,
    lp: u32,
    qoi: &Qoi,
    rule: &QuadratureRule,
) -> PairMeans {
    let upper = spec_at(problem, l);
    let lower = spec_at(problem, l - 1);
    if lp == l0 {
        let q_lo = spec_at(problem, l0);
        gh_pair_means(problem, &upper, &lower, None, &q_lo, qoi, rule).unwrap()
    } else {
        let q_hi = spec_at(problem, lp);
        let q_lo = spec_at(problem, lp - 1);
        gh_pair_means(problem, &upper, &lower, Some(&q_hi), &q_lo, qoi, rule).unwrap()
    }
}

#[test]
fn single_pair_matches_direct_level_difference() {
    let problem = one_param_problem(7, 91);
    let rule = QuadratureRule::gauss_hermite(40);
    let qoi = qoi_center();
    let (l, lp) = (3u32, 3u32);
    let means = exact_pair(&problem, 2, l, lp, &qoi, &rule);
    let contribution = means.contribution()[0];

    let q_hi = spec_at(&problem, lp);
    let q_lo = spec_at(&problem, lp - 1);
    let e_l = gh_expectation(&problem, &spec_at(&problem, l), Some(&q_hi), &q_lo, &qoi, &rule)
        .unwrap()[0];
    let e_lm1 = gh_expectation(
        &problem,
        &spec_at(&problem, l - 1),
        Some(&q_hi),
        &q_lo,
        &qoi,
        &rule,
    )
    .unwrap()[0];
    assert!(
        (contribution - (e_l - e_lm1)).abs() < 1e-12,
        "pair {contribution} vs direct {}",
        e_l - e_lm1
    );
}

/// Full telescoping with a constant quantity level: the combination over
/// l = l0+1..=L with l' up to a fixed L' collapses to the single direct
/// posterior expectation at measure level L.
#[test]
fn telescoping_constant_quantity_level() {
    let problem = one_param_problem(7, 91);
    let rule = QuadratureRule::gauss_hermite(40);
    let qoi = qoi_center();
    let (l0, l_max, lp_max) = (2u32, 5u32, 3u32);

    let mut pairs = Vec::new();
    for l in (l0 + 1)..=l_max {
        for lp in l0..=lp_max {
            pairs.push(exact_pair(&problem, l0, l, lp, &qoi, &rule));
        }
    }
    let mut rows = Vec::new();
    for lp in (l0 + 1)..=lp_max {
        let q_hi = spec_at(&problem, lp);
        let q_lo = spec_at(&problem, lp - 1);
        rows.push(
            gh_expectation(
                &problem,
                &spec_at(&problem, l0),
                Some(&q_hi),
                &q_lo,
                &qoi,
                &rule,
            )
            .unwrap(),
        );
    }
    let corner = gh_expectation(
        &problem,
        &spec_at(&problem, l0),
        None,
        &spec_at(&problem, l0),
        &qoi,
        &rule,
    )
    .unwrap();

    let combined = combine_estimator(&pairs, &rows, &corner)[0];
    let direct = gh_expectation(
        &problem,
        &spec_at(&problem, l_max),
        None,
        &spec_at(&problem, lp_max),
        &qoi,
        &rule,
    )
    .unwrap()[0];
    assert!(
        (combined - direct).abs() <= 1e-8,
        "combined {combined} vs direct {direct}"
    );
}

/// The production schedule truncates the quantity level to L'(l) = L - l;
/// the exact-expectation combination then equals the explicit sum of level
/// differences of the clipped quantities.
#[test]
fn telescoping_production_schedule() {
    let problem = one_param_problem(7, 91);
    let rule = QuadratureRule::gauss_hermite(40);
    let qoi = qoi_center();
    let (l0, l_max) = (2u32, 6u32);

    let mut pairs = Vec::new();
    for l in (l0 + 1)..=l_max {
        pairs.push(exact_pair(&problem, l0, l, l0, &qoi, &rule));
        for lp in (l0 + 1)..=(l_max - l) {
            pairs.push(exact_pair(&problem, l0, l, lp, &qoi, &rule));
        }
    }
    let mut rows = Vec::new();
    for lp in (l0 + 1)..=(l_max - l0) {
        let q_hi = spec_at(&problem, lp);
        let q_lo = spec_at(&problem, lp - 1);
        rows.push(
            gh_expectation(
                &problem,
                &spec_at(&problem, l0),
                Some(&q_hi),
                &q_lo,
                &qoi,
                &rule,
            )
            .unwrap(),
        );
    }
    let corner = gh_expectation(
        &problem,
        &spec_at(&problem, l0),
        None,
        &spec_at(&problem, l0),
        &qoi,
        &rule,
    )
    .unwrap();
    let combined = combine_estimator(&pairs, &rows, &corner)[0];

    // Direct evaluation: sum over l of (E^l - E^{l-1})[T^{m(l)}] plus
    // E^{l0}[T^{m(l0)}] with m(l) = max(L - l, l0).
    let direct_term = |measure: u32, qlevel: u32| -> f64 {
        gh_expectation(
            &problem,
            &spec_at(&problem, measure),
            None,
            &spec_at(&problem, qlevel),
            &qoi,
            &rule,
        )
        .unwrap()[0]
    };
    let m = |l: u32| (l_max - l).max(l0);
    let mut direct = direct_term(l0, m(l0));
    for l in (l0 + 1)..=l_max {
        direct += direct_term(l, m(l)) - direct_term(l - 1, m(l));
    }
    assert!(
        (combined - direct).abs() <= 1e-10,
        "combined {combined} vs direct {direct}"
    );
}

#[test]
fn indicator_exponentials_bounded_on_prior_draws() {
    let problem = one_param_problem(7, 91);
    let mut rng = stream(5150, "indicator-draws", &[]);
    let l = 4u32;
    let upper = spec_at(&problem, l);
    let lower = spec_at(&problem, l - 1);
    for _ in 0..200 {
        let u = sample_prior(1, &mut rng);
        let phi_l = eikmc_core::bayes::mismatch(&u, &upper, &problem.obs, &problem.template)
            .unwrap()
            .0;
        let phi_lm1 = eikmc_core::bayes::mismatch(&u, &lower, &problem.obs, &problem.template)
            .unwrap()
            .0;
        // The indicator gates which exponential ever enters an A-term; the
        // active factor must be bounded by one.
        if indicator(phi_l, phi_lm1).unwrap() {
            assert!((phi_l - phi_lm1).exp() <= 1.0);
        } else {
            assert!((phi_lm1 - phi_l).exp() <= 1.0);
        }
    }
}

#[test]
fn estimator_reduces_to_corner_when_range_is_trivial() {
    let problem = one_param_problem(6, 91);
    let cfg = MlConfig {
        l0: 2,
        l_max: 2,
        a: 3,
        sampler: SamplerKind::Independence,
        base_seed: 777,
        j_schedule: JSchedule::Balanced,
        coarsest_burn_in: 50,
        coarsest_samples_override: Some(400),
    };
    let out = mlmcmc_estimate(&problem, &cfg, &qoi_center(), 0).unwrap();
    assert_eq!(out.chains.len(), 1);
    assert_eq!(out.chains[0].role, "corner");
    // Rerun is bit-identical.
    let again = mlmcmc_estimate(&problem, &cfg, &qoi_center(), 0).unwrap();
    assert_eq!(out.value, again.value);
    // A different replicate moves the estimate.
    let other = mlmcmc_estimate(&problem, &cfg, &qoi_center(), 1).unwrap();
    assert_ne!(out.value, other.value);
}

#[test]
fn estimator_is_deterministic_and_close_to_oracle() {
    let problem = one_param_problem(7, 91);
    let cfg = MlConfig {
        l0: 2,
        l_max: 4,
        a: 3,
        sampler: SamplerKind::Independence,
        base_seed: 4242,
        j_schedule: JSchedule::Balanced,
        coarsest_burn_in: 500,
        coarsest_samples_override: Some(4000),
    };
    let qoi = qoi_center();
    let out = mlmcmc_estimate(&problem, &cfg, &qoi, 0).unwrap();
    let again = mlmcmc_estimate(&problem, &cfg, &qoi, 0).unwrap();
    assert_eq!(out.value, again.value);
    assert!(out.work.finalized > 0);

    let rule = QuadratureRule::gauss_hermite(40);
    let reference =
        eikmc_core::mlmcmc::gh_adapted_reference(&problem, &spec_at(&problem, 6), &qoi, &rule)
            .unwrap();
    // Loose sanity bracket: the multilevel estimate with a short coarse
    // chain sits near the fine-level posterior expectation.
    assert!(
        (out.value[0] - reference).abs() < 0.2,
        "estimate {} vs reference {reference}",
        out.value[0]
    );
}

#[test]
fn chain_failures_name_the_pair() {
    let mut problem = one_param_problem(6, 91);
    problem.template.s_bar = eikmc_core::field::BackgroundFn::Const(f64::NAN);
    let cfg = MlConfig {
        l0: 2,
        l_max: 2,
        a: 3,
        sampler: SamplerKind::Independence,
        base_seed: 1,
        j_schedule: JSchedule::Balanced,
        coarsest_burn_in: 0,
        coarsest_samples_override: Some(10),
    };
    let err = mlmcmc_estimate(&problem, &cfg, &qoi_center(), 0).unwrap_err();
    match err {
        eikmc_core::Error::ChainFailed { l, lprime, .. } => {
            assert_eq!((l, lprime), (2, 2));
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn slowness_qoi_difference_uses_truncations() {
    // With a multi-term basis, the slowness quantity at level l' is the
    // truncation s^{J_{l'}}; the pair difference must vanish when both
    // levels share the truncation count.
    let problem = one_param_problem(6, 91);
    let qoi = Qoi::SlownessAt { point: [0.5, 0.5] };
    let rule = QuadratureRule::gauss_hermite(16);
    let means = exact_pair(&problem, 2, 3, 3, &qoi, &rule);
    // One-parameter field: J_3 = J_2 = 1, so Q = s^{J_3} - s^{J_2} = 0.
    assert!(means.contribution()[0].abs() < 1e-14);

    let e = gh_expectation(
        &problem,
        &spec_at(&problem, 3),
        None,
        &spec_at(&problem, 2),
        &qoi,
        &rule,
    )
    .unwrap()[0];
    assert!(e > 0.0, "slowness posterior mean must be positive");
}

#[test]
fn param_vector_resize_pads_with_zeros() {
    let u = ParamVector::new(vec![1.0, 2.0]);
    assert_eq!(u.resized(4).as_slice(), &[1.0, 2.0, 0.0, 0.0]);
    assert_eq!(u.resized(1).as_slice(), &[1.0]);
}
