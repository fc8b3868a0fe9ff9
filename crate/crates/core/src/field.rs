//! Log-normal slowness fields.
//!
//! The slowness has the form `s(x) = s_*(x) + exp(s̄(x) + Σ_k u_k ψ_k(x))`
//! with independent standard-normal coefficients `u_k`. The analytic basis is
//! the product-sine family indexed through the Cantor pairing, with quartic
//! decay of the sup norms (`p = 2`).

use crate::error::{Error, Result};
use crate::grid::Domain;
use rand::Rng;
use rand_distr::StandardNormal;

/// Coefficient vector of a finite slowness truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn new(coeffs: Vec<f64>) -> Self {
        debug_assert!(coeffs.iter().all(|c| c.is_finite()));
        ParamVector(coeffs)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Copy resized to `len`, zero-padding missing coefficients.
    pub fn resized(&self, len: usize) -> Self {
        let mut v = self.0.clone();
        v.resize(len, 0.0);
        ParamVector(v)
    }
}

/// Cantor pairing `(i, j) -> k` with 1-based `k`.
pub fn cantor_index(i: u64, j: u64) -> Result<u64> {
    let s = i.checked_add(j).ok_or(Error::CantorOverflow { i, j })?;
    let tri = s
        .checked_mul(s.checked_add(1).ok_or(Error::CantorOverflow { i, j })?)
        .ok_or(Error::CantorOverflow { i, j })?
        / 2;
    tri.checked_add(j + 1).ok_or(Error::CantorOverflow { i, j })
}

/// Inverse of [`cantor_index`].
pub fn cantor_unindex(k: u64) -> (u64, u64) {
    debug_assert!(k >= 1);
    let m = k - 1;
    // Triangular root; float guess corrected to be safe near the edges.
    let mut t = (((8.0 * m as f64 + 1.0).sqrt() - 1.0) / 2.0) as u64;
    while t * (t + 1) / 2 > m {
        t -= 1;
    }
    while (t + 1) * (t + 2) / 2 <= m {
        t += 1;
    }
    let j = m - t * (t + 1) / 2;
    (t - j, j)
}

/// Affine map applied to coordinates before the sine arguments, so one basis
/// definition covers the unit-square and the `(-1,1)^2` conventions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineMap {
    pub offset: [f64; 2],
    pub scale: [f64; 2],
}

impl Default for SineMap {
    fn default() -> Self {
        SineMap {
            offset: [0.0, 0.0],
            scale: [1.0, 1.0],
        }
    }
}

impl SineMap {
    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        [
            (x[0] - self.offset[0]) / self.scale[0],
            (x[1] - self.offset[1]) / self.scale[1],
        ]
    }
}

/// A tabulated scalar function on a regular node lattice, evaluated by
/// bilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    pub domain: Domain,
    /// Nodes per axis (values are row-major with `nx` varying fastest).
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl Tabulated {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let fx = ((x[0] - self.domain.lower[0]) / self.domain.width()
            * (self.nx - 1) as f64)
            .clamp(0.0, (self.nx - 1) as f64);
        let fy = ((x[1] - self.domain.lower[1]) / self.domain.height()
            * (self.ny - 1) as f64)
            .clamp(0.0, (self.ny - 1) as f64);
        let i = (fx as usize).min(self.nx - 2);
        let j = (fy as usize).min(self.ny - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let v = |i: usize, j: usize| self.values[j * self.nx + i];
        (1.0 - ty) * ((1.0 - tx) * v(i, j) + tx * v(i + 1, j))
            + ty * ((1.0 - tx) * v(i, j + 1) + tx * v(i + 1, j + 1))
    }
}

/// The KL basis family.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisKind {
    /// `ψ_k(x) = κ / ((i+1)^2 + (j+1)^2)^2 · sin((i+1)π x̂_1) sin((j+1)π x̂_2)`
    /// with `(i, j) = cantor_unindex(k)` and `x̂` the mapped coordinates.
    AnalyticSine { kappa: f64, map: SineMap },
    /// Basis functions tabulated on node lattices.
    Tabulated(Vec<Tabulated>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlBasis {
    pub kind: BasisKind,
    /// Sup-norm decay exponent of the family (`p = 2` for the analytic basis).
    pub p: f64,
    pub max_terms: usize,
}

impl KlBasis {
    pub fn analytic_sine(kappa: f64, map: SineMap, max_terms: usize) -> Self {
        assert!(kappa > 0.0 && max_terms >= 1);
        KlBasis {
            kind: BasisKind::AnalyticSine { kappa, map },
            p: 2.0,
            max_terms,
        }
    }

    /// Evaluates the k-th basis function (1-based).
    pub fn eval(&self, k: u64, x: [f64; 2]) -> f64 {
        match &self.kind {
            BasisKind::AnalyticSine { kappa, map } => {
                let (i, j) = cantor_unindex(k);
                let xm = map.apply(x);
                let (fi, fj) = ((i + 1) as f64, (j + 1) as f64);
                kappa / (fi * fi + fj * fj).powi(2)
                    * (fi * std::f64::consts::PI * xm[0]).sin()
                    * (fj * std::f64::consts::PI * xm[1]).sin()
            }
            BasisKind::Tabulated(tabs) => tabs[(k - 1) as usize].eval(x),
        }
    }

    /// Sup-norm bound for term `k` (exact amplitude for the analytic family).
    pub fn sup_norm_bound(&self, k: u64) -> f64 {
        match &self.kind {
            BasisKind::AnalyticSine { kappa, .. } => {
                let (i, j) = cantor_unindex(k);
                let (fi, fj) = ((i + 1) as f64, (j + 1) as f64);
                kappa / (fi * fi + fj * fj).powi(2)
            }
            BasisKind::Tabulated(tabs) => tabs[(k - 1) as usize]
                .values
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs())),
        }
    }
}

/// Free-standing analytic basis evaluation (identity coordinate map).
pub fn basis_eval(k: u64, x: [f64; 2], kappa: f64) -> f64 {
    KlBasis::analytic_sine(kappa, SineMap::default(), 1).eval(k, x)
}

/// Constant-or-tabulated scalar field used for `s_*` and `s̄`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BackgroundFn {
    #[default]
    Zero,
    Const(f64),
    Tabulated(Tabulated),
}

impl BackgroundFn {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            BackgroundFn::Zero => 0.0,
            BackgroundFn::Const(c) => *c,
            BackgroundFn::Tabulated(t) => t.eval(x),
        }
    }
}

/// Log-normal slowness field `s_* + exp(s̄ + Σ u_k ψ_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlownessField {
    pub s_star: BackgroundFn,
    pub s_bar: BackgroundFn,
    pub basis: KlBasis,
    pub coeffs: ParamVector,
}

impl SlownessField {
    pub fn new(basis: KlBasis, coeffs: ParamVector) -> Self {
        SlownessField {
            s_star: BackgroundFn::Zero,
            s_bar: BackgroundFn::Zero,
            basis,
            coeffs,
        }
    }

    /// Same field with another coefficient vector.
    pub fn with_coeffs(&self, coeffs: ParamVector) -> Self {
        SlownessField {
            s_star: self.s_star.clone(),
            s_bar: self.s_bar.clone(),
            basis: self.basis.clone(),
            coeffs,
        }
    }

    /// Evaluates the slowness truncated to the first `j` terms. Truncation
    /// levels beyond the stored coefficients act as zero coefficients.
    pub fn eval(&self, x: [f64; 2], j: usize) -> f64 {
        let terms = j.min(self.coeffs.len()).min(self.basis.max_terms);
        let mut expo = self.s_bar.eval(x);
        for k in 0..terms {
            expo += self.coeffs.0[k] * self.basis.eval(k as u64 + 1, x);
        }
        self.s_star.eval(x) + expo.exp()
    }
}

/// Binary slowness made of disk inclusions over a constant background. Used
/// only to generate reference data.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryField {
    pub background: f64,
    pub inclusions: Vec<Disk>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
    pub value: f64,
}

impl BinaryField {
    pub fn new(background: f64, inclusions: Vec<Disk>) -> Self {
        assert!(background > 0.0 && inclusions.iter().all(|d| d.value > 0.0));
        BinaryField {
            background,
            inclusions,
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        for d in &self.inclusions {
            let (dx, dy) = (x[0] - d.center[0], x[1] - d.center[1]);
            if dx * dx + dy * dy <= d.radius * d.radius {
                return d.value;
            }
        }
        self.background
    }
}

/// Either slowness representation, for data generation.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceField {
    LogNormal(SlownessField),
    Binary(BinaryField),
}

impl ReferenceField {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            ReferenceField::LogNormal(f) => f.eval(x, usize::MAX),
            ReferenceField::Binary(f) => f.eval(x),
        }
    }
}

/// Draws `j` independent standard-normal coefficients.
pub fn sample_prior<R: Rng + ?Sized>(j: usize, rng: &mut R) -> ParamVector {
    assert!(j >= 1);
    ParamVector((0..j).map(|_| rng.sample(StandardNormal)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn cantor_first_values() {
        assert_eq!(cantor_index(0, 0).unwrap(), 1);
        assert_eq!(cantor_index(1, 0).unwrap(), 2);
        assert_eq!(cantor_index(0, 1).unwrap(), 3);
    }

    #[test]
    fn cantor_overflow_is_an_error() {
        assert!(matches!(
            cantor_index(u64::MAX, 2),
            Err(Error::CantorOverflow { .. })
        ));
        assert!(matches!(
            cantor_index(u64::MAX / 2, u64::MAX / 2),
            Err(Error::CantorOverflow { .. })
        ));
    }

    #[test]
    fn cantor_roundtrip_small_band() {
        for i in 0..=1000u64 {
            for j in 0..=(1000 - i) {
                let k = cantor_index(i, j).unwrap();
                assert_eq!(cantor_unindex(k), (i, j), "k = {k}");
            }
        }
    }

    #[test]
    fn basis_center_value_unit_square() {
        // (i, j) = (0, 0): amplitude kappa / 4, both sines hit 1 at 0.5.
        let v = basis_eval(1, [0.5, 0.5], 20.0);
        assert!((v - 5.0).abs() < 1e-12);
    }

    #[test]
    fn basis_k2_closed_form() {
        // (i, j) = (1, 0): 20/((2^2 + 1^2)^2) sin(2pi x) sin(pi y); at the
        // center sin(pi) = 0 so the value vanishes.
        let v = basis_eval(2, [0.5, 0.5], 20.0);
        assert!(v.abs() < 1e-12);
        let x = [0.25, 0.5];
        let expect = 20.0 / 25.0 * (2.0 * std::f64::consts::PI * 0.25).sin();
        assert!((basis_eval(2, x, 20.0) - expect).abs() < 1e-12);
    }

    #[test]
    fn basis_vanishes_on_unit_square_boundary() {
        for k in 1..=12u64 {
            for p in [[0.0, 0.3], [1.0, 0.7], [0.4, 0.0], [0.9, 1.0]] {
                assert!(basis_eval(k, p, 20.0).abs() < 1e-9, "k = {k}, p = {p:?}");
            }
        }
    }

    #[test]
    fn slowness_trivial_values() {
        let basis = KlBasis::analytic_sine(1.0, SineMap::default(), 4);
        let f = SlownessField::new(basis, ParamVector::zeros(4));
        assert_eq!(f.eval([0.3, 0.7], 4), 1.0);
    }

    #[test]
    fn slowness_single_constant_term() {
        let tab = Tabulated {
            domain: Domain::unit_square(),
            nx: 2,
            ny: 2,
            values: vec![0.25; 4],
        };
        let basis = KlBasis {
            kind: BasisKind::Tabulated(vec![tab]),
            p: 2.0,
            max_terms: 1,
        };
        let f = SlownessField::new(basis, ParamVector::new(vec![1.0]));
        assert!((f.eval([0.6, 0.1], 1) - 0.25f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn single_parameter_experiment_field() {
        // s = exp(u sin(0.5 pi x) sin(0.5 pi y)) on (-1,1)^2 realized with
        // kappa = 4 and sine arguments scaled by 2.
        let map = SineMap {
            offset: [0.0, 0.0],
            scale: [2.0, 2.0],
        };
        let basis = KlBasis::analytic_sine(4.0, map, 1);
        let f = SlownessField::new(basis, ParamVector::new(vec![0.4]));
        assert!((f.eval([1.0, 1.0], 1) - 0.4f64.exp()).abs() < 1e-12);
        let x = [0.3, -0.8];
        let expect = (0.4
            * (0.5 * std::f64::consts::PI * x[0]).sin()
            * (0.5 * std::f64::consts::PI * x[1]).sin())
        .exp();
        assert!((f.eval(x, 1) - expect).abs() < 1e-12);
    }

    #[test]
    fn prior_moments() {
        let mut rng = stream(421, "prior-test", &[]);
        let n = 100_000;
        let mut mean = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let u = sample_prior(3, &mut rng);
            for c in 0..3 {
                mean[c] += u.0[c];
                sq[c] += u.0[c] * u.0[c];
            }
        }
        for c in 0..3 {
            let m = mean[c] / n as f64;
            let v = sq[c] / n as f64 - m * m;
            assert!(m.abs() < 0.02, "mean {m}");
            assert!((v - 1.0).abs() < 0.02, "var {v}");
        }
    }

    #[test]
    fn prior_is_deterministic_under_seed() {
        let a = sample_prior(3, &mut stream(9, "p", &[1]));
        let b = sample_prior(3, &mut stream(9, "p", &[1]));
        assert_eq!(a, b);
    }

    #[test]
    fn analytic_sup_norm_partial_sums_converge() {
        let basis = KlBasis::analytic_sine(20.0, SineMap::default(), 4096);
        let partial = |n: u64| -> f64 { (1..=n).map(|k| basis.sup_norm_bound(k)).sum() };
        let (s250, s500, s1000) = (partial(250), partial(500), partial(1000));
        assert!(s1000.is_finite());
        assert!(s1000 - s500 < s500 - s250);
        assert!(s1000 - s500 < 1e-2 * s1000);
    }

    proptest! {
        #[test]
        fn slowness_is_positive(
            u in prop::collection::vec(-4.0f64..4.0, 1..8),
            x0 in 0.0f64..1.0, x1 in 0.0f64..1.0, j in 0usize..10
        ) {
            let basis = KlBasis::analytic_sine(20.0, SineMap::default(), 64);
            let f = SlownessField::new(basis, ParamVector::new(u));
            prop_assert!(f.eval([x0, x1], j) > 0.0);
        }

        #[test]
        fn truncation_difference_is_bounded(
            u in prop::collection::vec(-3.0f64..3.0, 8),
            x0 in 0.0f64..1.0, x1 in 0.0f64..1.0,
            j in 0usize..8, extra in 1usize..8
        ) {
            let basis = KlBasis::analytic_sine(20.0, SineMap::default(), 64);
            let jp = (j + extra).min(8);
            let f = SlownessField::new(basis.clone(), ParamVector::new(u.clone()));
            let diff = (f.eval([x0, x1], j) - f.eval([x0, x1], jp)).abs();
            let tail: f64 = (j..jp).map(|k| u[k].abs() * basis.sup_norm_bound(k as u64 + 1)).sum();
            let all: f64 = (0..8).map(|k| u[k].abs() * basis.sup_norm_bound(k as u64 + 1)).sum();
            prop_assert!(diff <= all.exp() * tail + 1e-12);
        }
    }
}
