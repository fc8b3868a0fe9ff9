//! Bicubic interpolation of values sampled on a uniform lattice, used to
//! extend coarse posterior-mean grids to the whole domain.

use crate::error::{Error, Result};
use crate::grid::Domain;

/// Tensor-product cubic interpolant through an `m x m` sample lattice with
/// endpoints on the domain boundary. Sample values are reproduced exactly.
#[derive(Debug, Clone)]
pub struct Bicubic {
    pub domain: Domain,
    pub m: usize,
    values: Vec<f64>,
}

pub fn interpolate_field(domain: Domain, m: usize, values: Vec<f64>) -> Result<Bicubic> {
    if m < 4 {
        return Err(Error::InterpTooCoarse(m));
    }
    assert_eq!(values.len(), m * m);
    Ok(Bicubic { domain, m, values })
}

#[inline]
fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
    0.5 * (2.0 * p[1]
        + (p[2] - p[0]) * t
        + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * t * t
        + (3.0 * p[1] - p[0] - 3.0 * p[2] + p[3]) * t * t * t)
}

impl Bicubic {
    #[inline]
    fn sample(&self, i: isize, j: isize) -> f64 {
        // Ghost samples come from cubic extrapolation of the boundary rows,
        // which keeps low-degree polynomials exact up to the edges.
        let m = self.m as isize;
        let fetch = |i: isize, j: isize| self.values[(j * m + i) as usize];
        let extrap = |a: f64, b: f64, c: f64, d: f64| 4.0 * a - 6.0 * b + 4.0 * c - d;
        match (i, j) {
            (i, j) if (0..m).contains(&i) && (0..m).contains(&j) => fetch(i, j),
            (-1, j) => extrap(
                self.sample(0, j),
                self.sample(1, j),
                self.sample(2, j),
                self.sample(3, j),
            ),
            (i, j) if i == m => extrap(
                self.sample(m - 1, j),
                self.sample(m - 2, j),
                self.sample(m - 3, j),
                self.sample(m - 4, j),
            ),
            (i, -1) => extrap(
                self.sample(i, 0),
                self.sample(i, 1),
                self.sample(i, 2),
                self.sample(i, 3),
            ),
            (i, j) if j == m => extrap(
                self.sample(i, m - 1),
                self.sample(i, m - 2),
                self.sample(i, m - 3),
                self.sample(i, m - 4),
            ),
            _ => unreachable!("query clamped to one ghost layer"),
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> Result<f64> {
        let tol = 1e-12 * self.domain.width().max(self.domain.height());
        if !self.domain.contains(x, tol) {
            return Err(Error::PointOutsideDomain(x[0], x[1]));
        }
        let cells = (self.m - 1) as f64;
        let fx = ((x[0] - self.domain.lower[0]) / self.domain.width() * cells).clamp(0.0, cells);
        let fy = ((x[1] - self.domain.lower[1]) / self.domain.height() * cells).clamp(0.0, cells);
        let i = (fx.floor() as usize).min(self.m - 2) as isize;
        let j = (fy.floor() as usize).min(self.m - 2) as isize;
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let mut col = [0.0; 4];
        for (r, c) in col.iter_mut().enumerate() {
            let jj = j - 1 + r as isize;
            *c = catmull_rom(
                [
                    self.sample(i - 1, jj),
                    self.sample(i, jj),
                    self.sample(i + 1, jj),
                    self.sample(i + 2, jj),
                ],
                tx,
            );
        }
        Ok(catmull_rom(col, ty))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(m: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(m * m);
        for j in 0..m {
            for i in 0..m {
                let x = i as f64 / (m - 1) as f64;
                let y = j as f64 / (m - 1) as f64;
                v.push(f(x, y));
            }
        }
        v
    }

    #[test]
    fn too_coarse_is_an_error() {
        assert!(matches!(
            interpolate_field(Domain::unit_square(), 3, vec![0.0; 9]),
            Err(Error::InterpTooCoarse(3))
        ));
    }

    #[test]
    fn reproduces_constants() {
        let b = interpolate_field(Domain::unit_square(), 5, vec![2.5; 25]).unwrap();
        for p in [[0.0, 0.0], [0.13, 0.77], [1.0, 1.0], [0.5, 0.02]] {
            assert!((b.eval(p).unwrap() - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_bilinear() {
        let f = |x: f64, y: f64| 1.0 + 2.0 * x - 0.5 * y + 3.0 * x * y;
        let b = interpolate_field(Domain::unit_square(), 6, lattice(6, f)).unwrap();
        for p in [[0.05, 0.9], [0.31, 0.44], [0.99, 0.01], [0.5, 0.5]] {
            assert!((b.eval(p).unwrap() - f(p[0], p[1])).abs() < 1e-11);
        }
    }

    #[test]
    fn reproduces_samples_exactly() {
        let f = |x: f64, y: f64| (3.1 * x).sin() * (1.7 * y + 0.3).cos();
        let m = 8;
        let vals = lattice(m, f);
        let b = interpolate_field(Domain::unit_square(), m, vals.clone()).unwrap();
        for j in 0..m {
            for i in 0..m {
                let x = i as f64 / (m - 1) as f64;
                let y = j as f64 / (m - 1) as f64;
                assert!((b.eval([x, y]).unwrap() - vals[j * m + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smooth_function_error_bound() {
        let f =
            |x: f64, y: f64| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
        let b = interpolate_field(Domain::unit_square(), 8, lattice(8, f)).unwrap();
        let mut worst = 0.0f64;
        for j in 0..64 {
            for i in 0..64 {
                let x = i as f64 / 63.0;
                let y = j as f64 / 63.0;
                worst = worst.max((b.eval([x, y]).unwrap() - f(x, y)).abs());
            }
        }
        assert!(worst <= 0.05, "max error {worst}");
    }

    #[test]
    fn outside_query_is_an_error() {
        let b = interpolate_field(Domain::unit_square(), 4, vec![0.0; 16]).unwrap();
        assert!(b.eval([1.5, 0.2]).is_err());
    }
}
