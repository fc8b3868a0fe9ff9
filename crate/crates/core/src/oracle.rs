//! Quadrature reference computations for the one-parameter problem:
//! posterior expectations and Hellinger distances against the standard
//! Gaussian prior, accurate enough to serve as ground truth for the
//! sampling estimators.

use crate::error::{Error, Result};
use rayon::prelude::*;

/// Gauss-Hermite rule normalized to the standard Gaussian measure: weights
/// sum to one and `Σ w_i f(u_i)` integrates polynomials of degree `2n - 1`
/// against N(0, 1) exactly.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

/// Implicit-shift QL on a symmetric tridiagonal matrix, accumulating only
/// the first row of the eigenvector matrix: exactly what Golub-Welsch needs.
/// `d` holds the diagonal on entry and the eigenvalues on exit; `e` the
/// off-diagonal in `e[0..n-1]`. Returns the first eigenvector components.
fn tridiagonal_eigen_first_row(d: &mut [f64], e: &mut [f64]) -> Vec<f64> {
    let n = d.len();
    let mut z = vec![0.0f64; n];
    z[0] = 1.0;
    if n == 1 {
        return z;
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            // Find a negligible off-diagonal element.
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter <= 50, "tridiagonal QL failed to converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                // First-row rotation.
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if r == 0.0 && m > l {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    // Sort ascending, carrying the first components along.
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let ds: Vec<f64> = idx.iter().map(|&i| d[i]).collect();
    let zs: Vec<f64> = idx.iter().map(|&i| z[i]).collect();
    d.copy_from_slice(&ds);
    zs
}

impl QuadratureRule {
    /// Nodes and weights by the Golub-Welsch eigenvalue construction on the
    /// Hermite Jacobi matrix, rescaled from weight `exp(-x^2)` to N(0, 1):
    /// nodes `sqrt(2) x_i` and weights that sum to one.
    pub fn gauss_hermite(n: usize) -> Self {
        assert!(n >= 2);
        let mut d = vec![0.0f64; n];
        let mut e: Vec<f64> = (0..n).map(|k| ((k + 1) as f64 / 2.0).sqrt()).collect();
        let z = tridiagonal_eigen_first_row(&mut d, &mut e);
        let nodes: Vec<f64> = d.iter().map(|v| std::f64::consts::SQRT_2 * v).collect();
        // Physicists' weights are sqrt(pi) z^2; the N(0,1) normalization
        // divides by sqrt(pi), leaving z^2 with unit total mass.
        let weights: Vec<f64> = z.iter().map(|v| v * v).collect();
        QuadratureRule {
            nodes,
            weights,
            order: n,
        }
    }

    fn potentials(&self, mut phi: impl FnMut(f64) -> Result<f64>) -> Result<Vec<f64>> {
        let vals: Result<Vec<f64>> = self.nodes.iter().map(|&u| phi(u)).collect();
        let vals = vals?;
        if vals.iter().any(|v| v.is_nan()) {
            return Err(Error::NanPotential);
        }
        Ok(vals)
    }

    /// Expectations `E^{γ^Φ}[f]` of the posterior with density
    /// `exp(-Φ)` against the prior. Potential values are computed once and
    /// shared between numerator and normalizer; the common shift by the
    /// minimum keeps the exponentials representable.
    pub fn posterior_expectation(
        &self,
        mut integrand: impl FnMut(f64) -> Result<f64>,
        phi: impl FnMut(f64) -> Result<f64>,
    ) -> Result<f64> {
        let phis = self.potentials(phi)?;
        let shift = phis.iter().cloned().fold(f64::INFINITY, f64::min);
        if !shift.is_finite() {
            return Err(Error::DegenerateQuadrature);
        }
        let mut z = 0.0;
        let mut num = 0.0;
        for ((&u, &w), &p) in self.nodes.iter().zip(&self.weights).zip(&phis) {
            let dens = w * (-(p - shift)).exp();
            z += dens;
            num += dens * integrand(u)?;
        }
        if z == 0.0 {
            return Err(Error::DegenerateQuadrature);
        }
        Ok(num / z)
    }

    /// Hellinger distance between the posteriors with potentials `phi_a` and
    /// `phi_b`, each normalized by its own quadrature constant.
    pub fn hellinger_distance(
        &self,
        phi_a: impl FnMut(f64) -> Result<f64>,
        phi_b: impl FnMut(f64) -> Result<f64>,
    ) -> Result<f64> {
        let pa = self.potentials(phi_a)?;
        let pb = self.potentials(phi_b)?;
        let sa = pa.iter().cloned().fold(f64::INFINITY, f64::min);
        let sb = pb.iter().cloned().fold(f64::INFINITY, f64::min);
        if !sa.is_finite() || !sb.is_finite() {
            return Err(Error::DegenerateQuadrature);
        }
        let za: f64 = self
            .weights
            .iter()
            .zip(&pa)
            .map(|(&w, &p)| w * (-(p - sa)).exp())
            .sum();
        let zb: f64 = self
            .weights
            .iter()
            .zip(&pb)
            .map(|(&w, &p)| w * (-(p - sb)).exp())
            .sum();
        if za == 0.0 || zb == 0.0 {
            return Err(Error::DegenerateQuadrature);
        }
        let mut acc = 0.0;
        for ((&w, &a), &b) in self.weights.iter().zip(&pa).zip(&pb) {
            let ra = ((-(a - sa)).exp() / za).sqrt();
            let rb = ((-(b - sb)).exp() / zb).sqrt();
            acc += 0.5 * w * (ra - rb) * (ra - rb);
        }
        Ok(acc.sqrt())
    }
}

struct Recentering {
    center: f64,
    scale: f64,
}

impl QuadratureRule {
    /// Mode and width of `exp(-phi(u)) d\gamma(u)` estimated from the raw
    /// node lattice: argmin of the negative log kernel plus a local
    /// parabola fit. Used to recenter the rule onto narrow posteriors.
    fn pilot<F>(&self, phi: &F) -> Result<Recentering>
    where
        F: Fn(f64) -> Result<f64> + Sync,
    {
        let kernels: Vec<Result<f64>> = self
            .nodes
            .par_iter()
            .map(|&u| phi(u).map(|p| p + 0.5 * u * u))
            .collect();
        let mut l_vals = Vec::with_capacity(self.order);
        for k in kernels {
            let v = k?;
            if v.is_nan() {
                return Err(Error::NanPotential);
            }
            l_vals.push(v);
        }
        let mut best = 0usize;
        for (i, v) in l_vals.iter().enumerate() {
            if *v < l_vals[best] {
                best = i;
            }
        }
        let i = best.clamp(1, self.order - 2);
        let (x0, x1, x2) = (self.nodes[i - 1], self.nodes[i], self.nodes[i + 1]);
        let (y0, y1, y2) = (l_vals[i - 1], l_vals[i], l_vals[i + 1]);
        let h = x1 - x0;
        // Parabola through three near-uniform nodes.
        let curv = (y0 - 2.0 * y1 + y2) / (h * h);
        let slope = (y2 - y0) / (2.0 * h);
        let (center, scale) = if curv > 1e-9 {
            (
                (x1 - slope / curv).clamp(x0 - h, x2 + h),
                (1.0 / curv.sqrt()).clamp(1e-4, 1.5),
            )
        } else {
            (self.nodes[best], 1.0)
        };
        Ok(Recentering { center, scale })
    }

    /// Prior-measure log-weights of the recentred lattice: node `u_i =
    /// c + s v_i` carries `log w_i + v_i^2/2 - u_i^2/2 + log s`.
    fn gamma_log_weights(&self, rc: &Recentering) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = Vec::with_capacity(self.order);
        let mut logw = Vec::with_capacity(self.order);
        for (&v, &w) in self.nodes.iter().zip(&self.weights) {
            let u = rc.center + rc.scale * v;
            nodes.push(u);
            logw.push(w.ln() + 0.5 * v * v - 0.5 * u * u + rc.scale.ln());
        }
        (nodes, logw)
    }

    /// Posterior expectation with automatic recentring onto the posterior
    /// bulk; resolves posteriors far narrower than the raw node spacing.
    /// `eval` returns the potential and the integrand in one call so shared
    /// forward solves are not repeated.
    pub fn adapted_posterior_expectation<F>(&self, eval: F) -> Result<f64>
    where
        F: Fn(f64) -> Result<(f64, f64)> + Sync,
    {
        let rc = self.pilot(&|u| eval(u).map(|(p, _)| p))?;
        let (nodes, logw) = self.gamma_log_weights(&rc);
        let pairs: Vec<Result<(f64, f64)>> = nodes.par_iter().map(|&u| eval(u)).collect();
        let mut ln_dens = Vec::with_capacity(self.order);
        let mut fs = Vec::with_capacity(self.order);
        for (lw, pr) in logw.iter().zip(pairs) {
            let (p, f) = pr?;
            if p.is_nan() || f.is_nan() {
                return Err(Error::NanPotential);
            }
            ln_dens.push(lw - p);
            fs.push(f);
        }
        let shift = ln_dens.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(Error::DegenerateQuadrature);
        }
        let mut z = 0.0;
        let mut num = 0.0;
        for (ld, f) in ln_dens.iter().zip(&fs) {
            let d = (ld - shift).exp();
            z += d;
            num += d * f;
        }
        if z == 0.0 {
            return Err(Error::DegenerateQuadrature);
        }
        Ok(num / z)
    }

    /// Hellinger distance with the lattice recentred on the first
    /// posterior's bulk (the second is expected adjacent, as for
    /// consecutive-level diagnostics).
    pub fn adapted_hellinger<A, B>(&self, phi_a: A, phi_b: B) -> Result<f64>
    where
        A: Fn(f64) -> Result<f64> + Sync,
        B: Fn(f64) -> Result<f64> + Sync,
    {
        let mut rc = self.pilot(&phi_a)?;
        rc.scale = (rc.scale * 1.5).min(1.5);
        let (nodes, logw) = self.gamma_log_weights(&rc);
        let evals: Vec<Result<(f64, f64)>> = nodes
            .par_iter()
            .map(|&u| Ok((phi_a(u)?, phi_b(u)?)))
            .collect();
        let mut pa = Vec::with_capacity(self.order);
        let mut pb = Vec::with_capacity(self.order);
        for e in evals {
            let (a, b) = e?;
            if a.is_nan() || b.is_nan() {
                return Err(Error::NanPotential);
            }
            pa.push(a);
            pb.push(b);
        }
        let logsumexp = |terms: &mut dyn Iterator<Item = f64>| -> f64 {
            let v: Vec<f64> = terms.collect();
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !m.is_finite() {
                return f64::NEG_INFINITY;
            }
            m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
        };
        let ln_za = logsumexp(&mut logw.iter().zip(&pa).map(|(lw, p)| lw - p));
        let ln_zb = logsumexp(&mut logw.iter().zip(&pb).map(|(lw, p)| lw - p));
        if !ln_za.is_finite() || !ln_zb.is_finite() {
            return Err(Error::DegenerateQuadrature);
        }
        let mut acc = 0.0;
        for ((lw, a), b) in logw.iter().zip(&pa).zip(&pb) {
            let ra = (0.5 * (-a - ln_za)).exp();
            let rb = (0.5 * (-b - ln_zb)).exp();
            acc += 0.5 * lw.exp() * (ra - rb) * (ra - rb);
        }
        Ok(acc.sqrt())
    }
}

/// Posterior expectation shorthand (see [`QuadratureRule::posterior_expectation`]).
pub fn gh_posterior_expectation(
    integrand: impl FnMut(f64) -> Result<f64>,
    phi: impl FnMut(f64) -> Result<f64>,
    rule: &QuadratureRule,
) -> Result<f64> {
    rule.posterior_expectation(integrand, phi)
}

/// Hellinger distance shorthand (see [`QuadratureRule::hellinger_distance`]).
pub fn hellinger_distance_1d(
    phi_a: impl FnMut(f64) -> Result<f64>,
    phi_b: impl FnMut(f64) -> Result<f64>,
    rule: &QuadratureRule,
) -> Result<f64> {
    rule.hellinger_distance(phi_a, phi_b)
}
