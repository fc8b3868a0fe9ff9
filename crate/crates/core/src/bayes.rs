//! Observation operators and the mismatch potential.
//!
//! A forward map at level `l` truncates the slowness at `J_l` terms, samples
//! it on the level-`l` grid, runs one marching solve per source and reads the
//! travel times at the observation points. The mismatch is
//! `Φ = ½ |δ - G(u)|_Σ²` with the covariance applied through its stored
//! triangular factor.

use crate::error::{Error, Result};
use crate::field::{BasisKind, ParamVector, ReferenceField, SlownessField};
use crate::fmm::{fmm_solve_until, FmmStats};
use crate::grid::{Domain, Grid};
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::HashMap;
use std::io::{BufRead, Write};

/// Noise covariance with its symmetric square-root factor.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseCov {
    ScaledIdentity { sigma: f64, dim: usize },
    /// Lower-triangular Cholesky factor, row-major.
    Full { dim: usize, chol: Vec<f64> },
}

impl NoiseCov {
    pub fn scaled_identity(sigma: f64, dim: usize) -> Self {
        assert!(sigma >= 0.0);
        NoiseCov::ScaledIdentity { sigma, dim }
    }

    /// Factorizes a dense SPD covariance once at load time.
    pub fn full(cov: &[f64], dim: usize) -> Result<Self> {
        assert_eq!(cov.len(), dim * dim);
        let mut l = vec![0.0f64; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let mut sum = cov[i * dim + j];
                for k in 0..j {
                    sum -= l[i * dim + k] * l[j * dim + k];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(Error::CovarianceNotSpd);
                    }
                    l[i * dim + j] = sum.sqrt();
                } else {
                    l[i * dim + j] = sum / l[j * dim + j];
                }
            }
        }
        Ok(NoiseCov::Full { dim, chol: l })
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseCov::ScaledIdentity { dim, .. } | NoiseCov::Full { dim, .. } => *dim,
        }
    }

    /// `|Σ^{-1/2} v|²` via a triangular solve.
    pub fn weighted_sq_norm(&self, v: &[f64]) -> Result<f64> {
        match self {
            NoiseCov::ScaledIdentity { sigma, .. } => {
                if *sigma <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "noise sigma must be positive for inversion".into(),
                    ));
                }
                Ok(v.iter().map(|x| x * x).sum::<f64>() / (sigma * sigma))
            }
            NoiseCov::Full { dim, chol } => {
                let mut y = v.to_vec();
                for i in 0..*dim {
                    let mut s = y[i];
                    for k in 0..i {
                        s -= chol[i * dim + k] * y[k];
                    }
                    y[i] = s / chol[i * dim + i];
                }
                Ok(y.iter().map(|x| x * x).sum())
            }
        }
    }

    /// One draw from N(0, Σ).
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            NoiseCov::ScaledIdentity { sigma, dim } => (0..*dim)
                .map(|_| *sigma * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            NoiseCov::Full { dim, chol } => {
                let xi: Vec<f64> = (0..*dim).map(|_| rng.sample(StandardNormal)).collect();
                (0..*dim)
                    .map(|i| (0..=i).map(|k| chol[i * dim + k] * xi[k]).sum())
                    .collect()
            }
        }
    }
}

/// Observation geometry and data: travel times at `points` for each source,
/// concatenated source-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub points: Vec<[f64; 2]>,
    pub sources: Vec<[f64; 2]>,
    pub data: Vec<f64>,
    /// The noiseless forward values the data was generated from, when known.
    pub noiseless: Option<Vec<f64>>,
    pub noise: NoiseCov,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.points.len() * self.sources.len()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.dim();
        if self.data.len() != expected || self.noise.dim() != expected {
            return Err(Error::ObservationShape {
                data: self.data.len(),
                expected,
            });
        }
        Ok(())
    }

    /// Checks that every observation point is a node of the given grid
    /// (the coarsest inversion level); off-lattice points are rejected.
    pub fn check_on_grid(&self, grid: &Grid) -> Result<()> {
        for p in &self.points {
            grid.node_at(*p)?;
        }
        Ok(())
    }
}

/// One discretization level of the inversion hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSpec {
    pub level: u32,
    pub j_terms: usize,
    pub grid: Grid,
}

/// Samples the truncated slowness at every grid node. For the analytic sine
/// basis the per-axis sine factors are tabulated first, so a node costs one
/// multiply-add per term plus the final exponential.
pub fn sample_node_slowness(
    field: &SlownessField,
    coeffs: &[f64],
    grid: &Grid,
    j: usize,
) -> Vec<f64> {
    let terms = j.min(coeffs.len()).min(field.basis.max_terms);
    let n = grid.node_count();
    let (nx1, ny1) = (grid.nx + 1, grid.ny + 1);

    if let BasisKind::AnalyticSine { kappa, map } = &field.basis.kind {
        // Per-term amplitude and axis frequencies.
        let mut amp = Vec::with_capacity(terms);
        let mut fx = Vec::with_capacity(terms);
        let mut fy = Vec::with_capacity(terms);
        let mut max_f = 0usize;
        for k in 0..terms {
            let (i, jj) = crate::field::cantor_unindex(k as u64 + 1);
            let (a, b) = ((i + 1) as usize, (jj + 1) as usize);
            amp.push(coeffs[k] * kappa / ((a * a + b * b) as f64).powi(2));
            fx.push(a);
            fy.push(b);
            max_f = max_f.max(a).max(b);
        }
        // sin(f * pi * mapped coordinate) per axis and frequency.
        let mut sx = vec![0.0f64; (max_f + 1) * nx1];
        let mut sy = vec![0.0f64; (max_f + 1) * ny1];
        for f in 1..=max_f {
            for i in 0..nx1 {
                let x = grid.domain.lower[0] + i as f64 * grid.h;
                let xm = (x - map.offset[0]) / map.scale[0];
                sx[f * nx1 + i] = (f as f64 * std::f64::consts::PI * xm).sin();
            }
            for jj in 0..ny1 {
                let y = grid.domain.lower[1] + jj as f64 * grid.h;
                let ym = (y - map.offset[1]) / map.scale[1];
                sy[f * ny1 + jj] = (f as f64 * std::f64::consts::PI * ym).sin();
            }
        }
        let mut out = Vec::with_capacity(n);
        for row in 0..ny1 {
            for col in 0..nx1 {
                let mut expo = match &field.s_bar {
                    crate::field::BackgroundFn::Zero => 0.0,
                    other => other.eval(grid.node_pos(row * nx1 + col)),
                };
                for k in 0..terms {
                    expo += amp[k] * sx[fx[k] * nx1 + col] * sy[fy[k] * ny1 + row];
                }
                let base = match &field.s_star {
                    crate::field::BackgroundFn::Zero => 0.0,
                    other => other.eval(grid.node_pos(row * nx1 + col)),
                };
                out.push(base + expo.exp());
            }
        }
        return out;
    }

    let with = field.with_coeffs(ParamVector::new(coeffs.to_vec()));
    (0..n).map(|idx| with.eval(grid.node_pos(idx), terms)).collect()
}

/// Samples a reference slowness (log-normal or binary) at every node.
pub fn sample_reference_slowness(field: &ReferenceField, grid: &Grid) -> Vec<f64> {
    match field {
        ReferenceField::LogNormal(f) => {
            sample_node_slowness(f, f.coeffs.as_slice(), grid, f.coeffs.len())
        }
        ReferenceField::Binary(b) => (0..grid.node_count())
            .map(|idx| b.eval(grid.node_pos(idx)))
            .collect(),
    }
}

/// Forward observation map `G^{J,h}(u)` and the solver work it cost.
pub fn forward_map(
    u: &ParamVector,
    spec: &LevelSpec,
    obs: &Observation,
    template: &SlownessField,
) -> Result<(Vec<f64>, FmmStats)> {
    let slowness = sample_node_slowness(template, u.as_slice(), &spec.grid, spec.j_terms);
    forward_map_with_slowness(&slowness, spec, obs)
}

/// Forward map reusing an already sampled node-slowness array (one array is
/// shared by all sources of the call).
pub fn forward_map_with_slowness(
    slowness: &[f64],
    spec: &LevelSpec,
    obs: &Observation,
) -> Result<(Vec<f64>, FmmStats)> {
    let grid = &spec.grid;
    let point_nodes: Vec<usize> = obs
        .points
        .iter()
        .map(|p| grid.node_at(*p))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(obs.dim());
    let mut stats = FmmStats::default();
    for src in &obs.sources {
        let src_node = grid.snap_point(*src)?;
        let (vals, s) = crate::fmm::fmm_values_at_pooled(grid, slowness, src_node, &point_nodes)?;
        stats += s;
        out.extend(vals);
    }
    Ok((out, stats))
}

/// Mismatch potential `Φ^{J,h}(u; δ) = ½ |δ - G^{J,h}(u)|_Σ²`.
pub fn mismatch(
    u: &ParamVector,
    spec: &LevelSpec,
    obs: &Observation,
    template: &SlownessField,
) -> Result<(f64, FmmStats)> {
    let (g, stats) = forward_map(u, spec, obs, template)?;
    Ok((mismatch_of_forward(&g, obs)?, stats))
}

/// Mismatch from an already computed forward vector.
pub fn mismatch_of_forward(g: &[f64], obs: &Observation) -> Result<f64> {
    let residual: Vec<f64> = obs.data.iter().zip(g).map(|(d, v)| d - v).collect();
    Ok(0.5 * obs.noise.weighted_sq_norm(&residual)?)
}

/// Synthesizes noisy observations from a reference slowness solved on a fine
/// grid. The noiseless vector is retained for diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn generate_observations<R: Rng + ?Sized>(
    reference: &ReferenceField,
    points: Vec<[f64; 2]>,
    sources: Vec<[f64; 2]>,
    noise: NoiseCov,
    ref_level: u32,
    domain: Domain,
    budget_mb: u64,
    rng: &mut R,
) -> Result<Observation> {
    let grid = crate::grid::build_grid_with_budget(domain, ref_level, budget_mb)?;
    let slowness = sample_reference_slowness(reference, &grid);
    let spec = LevelSpec {
        level: ref_level,
        j_terms: usize::MAX,
        grid,
    };
    let probe = Observation {
        points,
        sources,
        data: vec![],
        noiseless: None,
        noise: NoiseCov::scaled_identity(1.0, 0),
    };
    let (noiseless, _) = forward_map_with_slowness(&slowness, &spec, &probe)?;
    let zero_noise = matches!(noise, NoiseCov::ScaledIdentity { sigma, .. } if sigma == 0.0);
    let data = if zero_noise {
        noiseless.clone()
    } else {
        let draw = noise.sample_noise(rng);
        noiseless.iter().zip(&draw).map(|(v, n)| v + n).collect()
    };
    let obs = Observation {
        points: probe.points,
        sources: probe.sources,
        data,
        noiseless: Some(noiseless),
        noise,
    };
    obs.validate()?;
    Ok(obs)
}

/// Memo for forward solves keyed by the exact coefficient bits, level and
/// source; hits return the stored vector unchanged.
#[derive(Default)]
pub struct ForwardCache {
    map: HashMap<(u64, u32, usize), Vec<f64>>,
    pub hits: usize,
}

impl ForwardCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(u: &ParamVector, level: u32) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for c in u.as_slice() {
            h ^= c.to_bits();
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        h ^ u64::from(level)
    }

    /// Travel times at `points` for one source, computed at most once per
    /// `(u, level, source)`.
    pub fn solve(
        &mut self,
        u: &ParamVector,
        spec: &LevelSpec,
        source_idx: usize,
        source: [f64; 2],
        points: &[[f64; 2]],
        template: &SlownessField,
    ) -> Result<Vec<f64>> {
        let key = (Self::key(u, spec.level), spec.level, source_idx);
        if let Some(v) = self.map.get(&key) {
            self.hits += 1;
            return Ok(v.clone());
        }
        let slowness = sample_node_slowness(template, u.as_slice(), &spec.grid, spec.j_terms);
        let nodes: Vec<usize> = points
            .iter()
            .map(|p| spec.grid.node_at(*p))
            .collect::<Result<_>>()?;
        let src = spec.grid.snap_point(source)?;
        let field = fmm_solve_until(&spec.grid, &slowness, src, &nodes)?;
        let vals: Vec<f64> = nodes.iter().map(|&n| field.values[n]).collect();
        self.map.insert(key, vals.clone());
        Ok(vals)
    }
}

/// Writes observation entries as comma-separated values with a header:
/// one row per entry, source-major.
pub fn write_observation_csv<W: Write>(w: &mut W, obs: &Observation, values: &[f64]) -> Result<()> {
    writeln!(w, "source,x,y,value")?;
    let np = obs.points.len();
    for (si, _) in obs.sources.iter().enumerate() {
        for (pi, p) in obs.points.iter().enumerate() {
            writeln!(w, "{},{},{},{}", si, p[0], p[1], values[si * np + pi])?;
        }
    }
    Ok(())
}

/// Reads observation entries written by [`write_observation_csv`]. Sources
/// and noise come from the experiment configuration.
pub fn read_observation_csv<R: BufRead>(
    r: R,
    sources: Vec<[f64; 2]>,
    noise: NoiseCov,
) -> Result<Observation> {
    let mut points: Vec<[f64; 2]> = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if ln == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::InvalidConfig(format!(
                "observation row {ln} has {} columns, expected 4",
                cols.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad number '{s}' in row {ln}")))
        };
        let si: usize = cols[0]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad source index in row {ln}")))?;
        let p = [parse(cols[1])?, parse(cols[2])?];
        if si == 0 {
            points.push(p);
        }
        data.push(parse(cols[3])?);
    }
    let obs = Observation {
        points,
        sources,
        data,
        noiseless: None,
        noise,
    };
    obs.validate()?;
    Ok(obs)
}
