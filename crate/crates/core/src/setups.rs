//! Canonical experiment geometries shared by the CLI, tests and benches.

use crate::field::{KlBasis, ParamVector, SineMap, SlownessField};
use crate::grid::Domain;

/// One-parameter slowness template
/// `s(x, u) = exp(u sin(0.5 pi x_1) sin(0.5 pi x_2))` on `(-1, 1)^2`,
/// realized as the first analytic sine term with amplitude one and the sine
/// arguments stretched to half frequency.
pub fn single_param_template() -> SlownessField {
    let map = SineMap {
        offset: [0.0, 0.0],
        scale: [2.0, 2.0],
    };
    SlownessField::new(KlBasis::analytic_sine(4.0, map, 1), ParamVector::zeros(1))
}

/// Cantor-indexed sine template on the given domain (identity sine map).
pub fn cantor_template(kappa: f64, max_terms: usize) -> SlownessField {
    SlownessField::new(
        KlBasis::analytic_sine(kappa, SineMap::default(), max_terms),
        ParamVector::zeros(0),
    )
}

/// The eight mid-edge observation points: on every edge at 1/4 and 3/4 of
/// the edge length. On `(-1,1)^2` these are `(±1/2, ±1)` and `(±1, ±1/2)`.
pub fn eight_midedge_points(domain: Domain) -> Vec<[f64; 2]> {
    let (lx, ly) = (domain.lower[0], domain.lower[1]);
    let (ux, uy) = (domain.upper[0], domain.upper[1]);
    let (w, h) = (domain.width(), domain.height());
    vec![
        [lx + w / 4.0, ly],
        [lx + 3.0 * w / 4.0, ly],
        [lx + w / 4.0, uy],
        [lx + 3.0 * w / 4.0, uy],
        [lx, ly + h / 4.0],
        [lx, ly + 3.0 * h / 4.0],
        [ux, ly + h / 4.0],
        [ux, ly + 3.0 * h / 4.0],
    ]
}

/// Equispaced points along the boundary, walking counterclockwise from the
/// lower-left corner with the given arc-length spacing. The spacing must
/// divide every side length.
pub fn boundary_ring_points(domain: Domain, spacing: f64) -> Vec<[f64; 2]> {
    let (w, h) = (domain.width(), domain.height());
    let steps_w = (w / spacing).round() as usize;
    let steps_h = (h / spacing).round() as usize;
    assert!(
        (w - steps_w as f64 * spacing).abs() < 1e-9 && (h - steps_h as f64 * spacing).abs() < 1e-9,
        "spacing must divide the side lengths"
    );
    let (lx, ly) = (domain.lower[0], domain.lower[1]);
    let (ux, uy) = (domain.upper[0], domain.upper[1]);
    let mut pts = Vec::with_capacity(2 * (steps_w + steps_h));
    for k in 0..steps_w {
        pts.push([lx + k as f64 * spacing, ly]);
    }
    for k in 0..steps_h {
        pts.push([ux, ly + k as f64 * spacing]);
    }
    for k in 0..steps_w {
        pts.push([ux - k as f64 * spacing, uy]);
    }
    for k in 0..steps_h {
        pts.push([lx, uy - k as f64 * spacing]);
    }
    pts
}

/// Five sources spread over the domain: the centre plus the four quarter
/// points. On `(-1,1)^2` these are `(0,0)` and `(±1/2, ±1/2)`.
pub fn five_spread_sources(domain: Domain) -> Vec<[f64; 2]> {
    let (lx, ly) = (domain.lower[0], domain.lower[1]);
    let (w, h) = (domain.width(), domain.height());
    vec![
        [lx + w / 2.0, ly + h / 2.0],
        [lx + w / 4.0, ly + h / 4.0],
        [lx + 3.0 * w / 4.0, ly + h / 4.0],
        [lx + w / 4.0, ly + 3.0 * h / 4.0],
        [lx + 3.0 * w / 4.0, ly + 3.0 * h / 4.0],
    ]
}

/// Uniform `m x m` evaluation lattice at `(i/m, j/m)` fractions for
/// `i, j = 1..=m`, dyadic whenever `m` is a power of two.
pub fn uniform_grid_points(domain: Domain, m: usize) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(m * m);
    for j in 1..=m {
        for i in 1..=m {
            pts.push([
                domain.lower[0] + domain.width() * i as f64 / m as f64,
                domain.lower[1] + domain.height() * j as f64 / m as f64,
            ]);
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midedge_points_on_symmetric_square() {
        let pts = eight_midedge_points(Domain::symmetric_square());
        assert_eq!(pts.len(), 8);
        assert!(pts.contains(&[-0.5, -1.0]));
        assert!(pts.contains(&[1.0, 0.5]));
    }

    #[test]
    fn boundary_ring_sizes() {
        // 64 points of spacing 1/8 on the perimeter of (-1,1)^2.
        let pts = boundary_ring_points(Domain::symmetric_square(), 0.125);
        assert_eq!(pts.len(), 64);
        // 32 points of spacing 1/8 on the unit square.
        let pts = boundary_ring_points(Domain::unit_square(), 0.125);
        assert_eq!(pts.len(), 32);
        let uniq: std::collections::BTreeSet<String> =
            pts.iter().map(|p| format!("{:?}", p)).collect();
        assert_eq!(uniq.len(), 32);
    }

    #[test]
    fn spread_sources() {
        let s = five_spread_sources(Domain::symmetric_square());
        assert_eq!(s[0], [0.0, 0.0]);
        assert!(s.contains(&[-0.5, -0.5]) && s.contains(&[0.5, 0.5]));
    }
}
