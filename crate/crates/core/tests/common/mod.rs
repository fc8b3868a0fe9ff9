//! Shared fixtures: the single-parameter inverse problem of the
//! point-source experiments.

use eikmc_core::bayes::{generate_observations, LevelSpec, NoiseCov};
use eikmc_core::field::{ParamVector, ReferenceField};
use eikmc_core::grid::{build_grid, Domain, DEFAULT_MEMORY_BUDGET_MB};
use eikmc_core::mlmcmc::InverseProblem;
use eikmc_core::rng::stream;
use eikmc_core::setups;

/// Eight mid-edge observations of the one-parameter slowness on `(-1,1)^2`,
/// source at the centre, noise 0.1^2 I, data synthesized at `ref_level`.
pub fn one_param_problem(ref_level: u32, seed: u64) -> InverseProblem {
    let domain = Domain::symmetric_square();
    let template = setups::single_param_template();
    let reference = ReferenceField::LogNormal(template.with_coeffs(ParamVector::new(vec![0.35])));
    let mut rng = stream(seed, "test-datagen", &[]);
    let obs = generate_observations(
        &reference,
        setups::eight_midedge_points(domain),
        vec![[0.0, 0.0]],
        NoiseCov::scaled_identity(0.1, 8),
        ref_level,
        domain,
        DEFAULT_MEMORY_BUDGET_MB,
        &mut rng,
    )
    .unwrap();
    InverseProblem {
        domain,
        template,
        obs,
        budget_mb: DEFAULT_MEMORY_BUDGET_MB,
    }
}

pub fn spec_at(problem: &InverseProblem, level: u32) -> LevelSpec {
    LevelSpec {
        level,
        j_terms: 1,
        grid: build_grid(problem.domain, level).unwrap(),
    }
}
