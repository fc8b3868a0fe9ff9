//! Mesh-refinement behaviour of the marching solver on a smooth slowness.

use eikmc_core::bayes::sample_node_slowness;
use eikmc_core::fmm::{fmm_solve, max_interior_residual};
use eikmc_core::grid::{build_grid, Domain};
use eikmc_core::setups;

fn solve_at_level(level: u32, u: f64) -> eikmc_core::TravelTimeField {
    let template = setups::single_param_template();
    let g = build_grid(Domain::symmetric_square(), level).unwrap();
    let src = g.node_at([0.0, 0.0]).unwrap();
    let slowness = sample_node_slowness(&template, &[u], &g, 1);
    fmm_solve(&g, &slowness, src).unwrap()
}

/// Max deviation from the reference field over the coarse level's nodes
/// (every coarse node exists on the fine grid).
fn error_vs_reference(coarse: &eikmc_core::TravelTimeField, fine: &eikmc_core::TravelTimeField) -> f64 {
    let mut worst = 0.0f64;
    for idx in 0..coarse.grid.node_count() {
        let p = coarse.grid.node_pos(idx);
        let fidx = fine.grid.node_at(p).unwrap();
        worst = worst.max((coarse.values[idx] - fine.values[fidx]).abs());
    }
    worst
}

#[test]
fn smooth_slowness_convergence_order() {
    let reference = solve_at_level(12, 0.4);
    let mut errors = Vec::new();
    for level in 4..=9 {
        let f = solve_at_level(level, 0.4);
        errors.push(error_vs_reference(&f, &reference));
    }
    for w in errors.windows(2) {
        assert!(w[1] < w[0], "errors must decrease monotonically: {errors:?}");
        let order = (w[0] / w[1]).log2();
        assert!(
            (0.4..=1.1).contains(&order),
            "order {order} outside [0.4, 1.1]; errors {errors:?}"
        );
    }
    // Error constant in err ~ C 2^{-level}, used to scale the golden
    // cross-validation bound.
    let c = errors[2] * 2f64.powi(6);
    assert!(c.is_finite() && c > 0.0);
    println!("smooth-case constant C = err(l) * 2^l at level 6: {c:.3}");
}

#[test]
fn residual_invariant_across_levels() {
    for level in [4u32, 6, 8] {
        let template = setups::single_param_template();
        let g = build_grid(Domain::symmetric_square(), level).unwrap();
        let src = g.node_at([0.0, 0.0]).unwrap();
        let slowness = sample_node_slowness(&template, &[0.7], &g, 1);
        let f = fmm_solve(&g, &slowness, src).unwrap();
        let r = max_interior_residual(&f, &slowness);
        assert!(r <= 1e-10, "level {level}: residual {r}");
    }
}

/// Travel times at the eight boundary observation points for the
/// single-parameter slowness with u = 0.4 and source (0, 0) at level 12,
/// frozen from a run of this solver and cross-checked at level 13 below.
/// The points fall into two symmetry classes of the slowness (swap of the
/// axes and simultaneous sign flip both preserve it).
const GOLDEN_LEVEL12_U04: [f64; 8] = [
    1.2613816509797382, // (-1/2, -1)
    0.9933086984679793, // (1/2, -1)
    0.9933086984679793, // (-1/2, 1)
    1.2613816509797382, // (1/2, 1)
    1.2613816509797382, // (-1, -1/2)
    0.9933086984679793, // (-1, 1/2)
    0.9933086984679793, // (1, -1/2)
    1.2613816509797382, // (1, 1/2)
];

#[test]
#[ignore = "two large grids (~25 s, ~2 GiB); run explicitly to cross-check the golden vector"]
fn golden_vector_level12_cross_validated_at_13() {
    let points = setups::eight_midedge_points(Domain::symmetric_square());
    let mut vals = Vec::new();
    for level in [12u32, 13] {
        let f = solve_at_level(level, 0.4);
        let v: Vec<f64> = points
            .iter()
            .map(|p| f.values[f.grid.node_at(*p).unwrap()])
            .collect();
        println!("level {level}: {v:?}");
        vals.push(v);
    }
    // err(6) = 0.0494 = C 2^{-3} under the square-root rate gives C = 0.395;
    // the two-level agreement bound is 2 C 2^{-6}.
    let c: f64 = 0.395;
    let bound = 2.0 * c * 2f64.powi(-6);
    for (a, b) in vals[0].iter().zip(&vals[1]) {
        assert!((a - b).abs() <= bound, "{a} vs {b}, bound {bound}");
    }
    for (a, g) in vals[0].iter().zip(&GOLDEN_LEVEL12_U04) {
        assert!((a - g).abs() <= 1e-10, "golden drift: {a} vs {g}");
    }
}

/// Fast variant of the cross-validation contract at levels 8 vs 9.
#[test]
fn adjacent_level_consistency_at_8_9() {
    let points = setups::eight_midedge_points(Domain::symmetric_square());
    let f8 = solve_at_level(8, 0.4);
    let f9 = solve_at_level(9, 0.4);
    let c: f64 = 0.395;
    let bound = 2.0 * c * 2f64.powi(-4);
    for p in &points {
        let a = f8.values[f8.grid.node_at(*p).unwrap()];
        let b = f9.values[f9.grid.node_at(*p).unwrap()];
        assert!((a - b).abs() <= bound, "{a} vs {b}, bound {bound}");
    }
}
