//! Multilevel MCMC estimator for posterior expectations.
//!
//! The posterior expectation at the finest level telescopes over mesh levels
//! `l` and quantity levels `l'`. Each level difference is written with the
//! eight indicator-truncated integrands A1..A8, whose exponential factors
//! stay bounded by one on their active branch, and is estimated from two
//! chains per `(l, l')` pair: one under the level-`l` posterior, one under
//! level `l-1`. Products of expectations are formed as products of chain
//! averages, never as averages of products.

use crate::bayes::{
    forward_map, mismatch_of_forward, sample_node_slowness, LevelSpec, Observation,
};
use crate::error::{Error, Result};
use crate::field::{ParamVector, SlownessField};
use crate::fmm::FmmStats;
use crate::grid::{build_grid_with_budget, Domain};
use crate::mcmc::{run_chain, ChainConfig, ChainInit, ChainOutput, ChainRng, SamplerKind};
use crate::oracle::QuadratureRule;
use rayon::prelude::*;
use std::sync::atomic::{AtomicU64, Ordering};

/// Indicator `I^l = 1` iff `Φ^l - Φ^{l-1} <= 0`.
pub fn indicator(phi_l: f64, phi_lm1: f64) -> Result<bool> {
    if phi_l.is_nan() || phi_lm1.is_nan() {
        return Err(Error::NanPotential);
    }
    Ok(phi_l - phi_lm1 <= 0.0)
}

/// The eight integrands evaluated at one state. `q` carries one entry per
/// quantity-of-interest component.
#[derive(Debug, Clone, PartialEq)]
pub struct ATerms {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: f64,
    pub a4: Vec<f64>,
    pub a5: f64,
    pub a6: Vec<f64>,
    pub a7: Vec<f64>,
    pub a8: Vec<f64>,
}

pub fn a_terms(phi_l: f64, phi_lm1: f64, q: &[f64]) -> Result<ATerms> {
    let ind = indicator(phi_l, phi_lm1)?;
    let d = phi_l - phi_lm1;
    let zeros = vec![0.0; q.len()];
    if ind {
        let e = d.exp(); // d <= 0, so e <= 1
        Ok(ATerms {
            a1: q.iter().map(|v| (1.0 - e) * v).collect(),
            a2: zeros.clone(),
            a3: e - 1.0,
            a4: q.to_vec(),
            a5: 0.0,
            a6: q.iter().map(|v| e * v).collect(),
            a7: zeros,
            a8: vec![0.0; q.len()],
        })
    } else {
        let em = (-d).exp(); // d > 0, so em < 1
        Ok(ATerms {
            a1: zeros.clone(),
            a2: q.iter().map(|v| (em - 1.0) * v).collect(),
            a3: 0.0,
            a4: zeros.clone(),
            a5: 1.0 - em,
            a6: zeros,
            a7: q.to_vec(),
            a8: q.iter().map(|v| em * v).collect(),
        })
    }
}

/// Truncation-level schedule `J_l`.
#[derive(Debug, Clone, PartialEq)]
pub enum JSchedule {
    /// `J_l = max(1, ceil(2^{l/(2q)}))`, balancing truncation against the
    /// mesh error.
    Balanced,
    /// `J_l = 2 ceil(2^{l/2})`, the choice used for the binary recoveries.
    DoubledSqrt,
    /// Explicit terms per level (indexed by level, clamped to the last).
    Explicit(Vec<usize>),
}

impl JSchedule {
    pub fn terms(&self, level: u32, q: f64) -> usize {
        match self {
            JSchedule::Balanced => {
                let e = 2f64.powf(level as f64 / (2.0 * q));
                (e.ceil() as usize).max(1)
            }
            JSchedule::DoubledSqrt => 2 * (2f64.powf(level as f64 / 2.0).ceil() as usize),
            JSchedule::Explicit(v) => {
                let idx = (level as usize).min(v.len().saturating_sub(1));
                v[idx].max(1)
            }
        }
    }
}

/// Sample-size table indexed by the exponent `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSchedule {
    pub l0: u32,
    pub l_max: u32,
    pub a: u32,
    /// `(l, l', M_{ll'})` for `l0 < l <= L`, with `l' = l0` always present
    /// and `l0 < l' <= L - l`.
    pub pairs: Vec<(u32, u32, usize)>,
    /// `(l', M_{l0 l'})` for `l0 < l' <= L - l0`.
    pub row: Vec<(u32, usize)>,
    pub corner_samples: usize,
}

fn validated_exponent(a: u32) -> Result<()> {
    if matches!(a, 0 | 2 | 3 | 4) {
        Ok(())
    } else {
        Err(Error::UnsupportedExponent(a))
    }
}

fn ceil_at_least_one(x: f64) -> usize {
    x.ceil().max(1.0) as usize
}

/// `M_{ll'}` for `l, l' > l0`.
pub fn pair_samples(a: u32, l_max: u32, l: u32, lp: u32) -> usize {
    let s = (l + lp) as f64;
    let base = 2f64.powi(l_max as i32 - (l + lp) as i32);
    let m = match a {
        0 => base,
        _ => s.powi(a as i32) * base,
    };
    ceil_at_least_one(m)
}

/// `M_{l l0} = M_{l0 l}`.
pub fn column_samples(a: u32, l_max: u32, l: u32) -> usize {
    let base = 2f64.powi(l_max as i32 - l as i32);
    let lf = l as f64;
    let lmf = l_max as f64;
    let m = match a {
        0 => base / (lmf * lmf),
        2 => base,
        3 => lf * base,
        4 => lf * lf * base,
        _ => unreachable!(),
    };
    ceil_at_least_one(m)
}

/// `M_{l0 l0}`.
pub fn corner_samples(a: u32, l_max: u32) -> usize {
    let base = 2f64.powi(l_max as i32);
    let lmf = l_max as f64;
    let m = match a {
        0 => base / lmf.powi(4),
        2 => base / (lmf * lmf),
        3 => base / lmf,
        4 => {
            let lg = lmf.log2().max(1.0);
            base / (lg * lg)
        }
        _ => unreachable!(),
    };
    ceil_at_least_one(m)
}

/// Builds every sample count of the estimator for the given range. The
/// quantity-level cutoff is `L'(l) = L - l`.
pub fn level_schedule(l0: u32, l_max: u32, a: u32) -> Result<LevelSchedule> {
    validated_exponent(a)?;
    if l0 < 1 || l_max < l0 {
        return Err(Error::BadLevelRange { l0, l: l_max });
    }
    let mut pairs = Vec::new();
    for l in (l0 + 1)..=l_max {
        pairs.push((l, l0, column_samples(a, l_max, l)));
        let lp_max = l_max.saturating_sub(l);
        for lp in (l0 + 1)..=lp_max {
            pairs.push((l, lp, pair_samples(a, l_max, l, lp)));
        }
    }
    pairs.sort_unstable_by_key(|&(l, lp, _)| (l, lp));
    let mut row = Vec::new();
    for lp in (l0 + 1)..=l_max.saturating_sub(l0) {
        row.push((lp, column_samples(a, l_max, lp)));
    }
    Ok(LevelSchedule {
        l0,
        l_max,
        a,
        pairs,
        row,
        corner_samples: corner_samples(a, l_max),
    })
}

/// Quantity of interest for the posterior expectation.
#[derive(Debug, Clone, PartialEq)]
pub enum Qoi {
    SolutionAt { point: [f64; 2], source: [f64; 2] },
    SlownessAt { point: [f64; 2] },
    SolutionGrid { points: Vec<[f64; 2]>, source: [f64; 2] },
    SlownessGrid { points: Vec<[f64; 2]> },
}

impl Qoi {
    pub fn points(&self) -> Vec<[f64; 2]> {
        match self {
            Qoi::SolutionAt { point, .. } | Qoi::SlownessAt { point } => vec![*point],
            Qoi::SolutionGrid { points, .. } | Qoi::SlownessGrid { points } => points.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.points().len()
    }

    pub fn source(&self) -> Option<[f64; 2]> {
        match self {
            Qoi::SolutionAt { source, .. } | Qoi::SolutionGrid { source, .. } => Some(*source),
            _ => None,
        }
    }

    pub fn is_solution(&self) -> bool {
        self.source().is_some()
    }
}

/// The inverse problem shared by every chain: data, field template, domain.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    pub domain: Domain,
    pub template: SlownessField,
    pub obs: Observation,
    pub budget_mb: u64,
}

/// Estimator configuration.
#[derive(Debug, Clone)]
pub struct MlConfig {
    pub l0: u32,
    pub l_max: u32,
    pub a: u32,
    pub sampler: SamplerKind,
    pub base_seed: u64,
    pub j_schedule: JSchedule,
    /// Burn-in for the coarsest chain (the others start from the previous
    /// level's mean state).
    pub coarsest_burn_in: usize,
    /// Replaces the table's `M_{l0 l0}` when set.
    pub coarsest_samples_override: Option<usize>,
}

/// Thread-safe work accumulator for solver statistics.
#[derive(Default)]
pub struct WorkCounter {
    finalized: AtomicU64,
    pushes: AtomicU64,
}

impl WorkCounter {
    pub fn add(&self, s: FmmStats) {
        self.finalized.fetch_add(s.finalized, Ordering::Relaxed);
        self.pushes.fetch_add(s.pushes, Ordering::Relaxed);
    }

    pub fn total(&self) -> FmmStats {
        FmmStats {
            finalized: self.finalized.load(Ordering::Relaxed),
            pushes: self.pushes.load(Ordering::Relaxed),
        }
    }
}

/// Chain averages of the A-term groups for one `(l, l')` pair, in the exact
/// grouping the estimator multiplies: `E[A3]·E[A4+A8]` and `E[A5]·E[A6+A7]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMeans {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: f64,
    pub a48: Vec<f64>,
    pub a5: f64,
    pub a67: Vec<f64>,
}

impl PairMeans {
    /// The pair's contribution `E[A1] + E[A2] + E[A3]E[A4+A8] + E[A5]E[A6+A7]`.
    pub fn contribution(&self) -> Vec<f64> {
        self.a1
            .iter()
            .zip(&self.a2)
            .zip(self.a48.iter().zip(&self.a67))
            .map(|((x1, x2), (x48, x67))| x1 + x2 + self.a3 * x48 + self.a5 * x67)
            .collect()
    }
}

/// Sums pair contributions, the coarsest-row differences and the coarsest
/// plain term, in the given (sorted) order.
pub fn combine_estimator(
    pairs: &[PairMeans],
    row_means: &[Vec<f64>],
    corner_mean: &[f64],
) -> Vec<f64> {
    let mut total = corner_mean.to_vec();
    for r in row_means {
        for (t, v) in total.iter_mut().zip(r) {
            *t += v;
        }
    }
    for p in pairs {
        for (t, v) in total.iter_mut().zip(p.contribution()) {
            *t += v;
        }
    }
    total
}

// ---------------------------------------------------------------------------
// State evaluation shared by the sampling chains and the quadrature oracle.
// ---------------------------------------------------------------------------

/// Mismatch potential at one level (one solve per source, observation points
/// as targets).
fn phi_at(
    problem: &InverseProblem,
    u: &ParamVector,
    spec: &LevelSpec,
    counter: &WorkCounter,
) -> Result<f64> {
    let (g, stats) = forward_map(u, spec, &problem.obs, &problem.template)?;
    counter.add(stats);
    mismatch_of_forward(&g, &problem.obs)
}

/// Travel times at the QoI points for one level and the QoI's own source.
fn qoi_solution_at(
    problem: &InverseProblem,
    u: &ParamVector,
    spec: &LevelSpec,
    points: &[[f64; 2]],
    source: [f64; 2],
    counter: &WorkCounter,
) -> Result<Vec<f64>> {
    let slowness = sample_node_slowness(&problem.template, u.as_slice(), &spec.grid, spec.j_terms);
    let nodes: Vec<usize> = points
        .iter()
        .map(|p| spec.grid.node_at(*p))
        .collect::<Result<_>>()?;
    let src = spec.grid.snap_point(source)?;
    let (vals, stats) = crate::fmm::fmm_values_at_pooled(&spec.grid, &slowness, src, &nodes)?;
    counter.add(stats);
    Ok(vals)
}

/// Q at one level: travel times for solution QoIs, truncated slowness values
/// otherwise.
fn qoi_at(
    problem: &InverseProblem,
    u: &ParamVector,
    spec: &LevelSpec,
    qoi: &Qoi,
    counter: &WorkCounter,
) -> Result<Vec<f64>> {
    match qoi {
        Qoi::SolutionAt { point, source } => {
            qoi_solution_at(problem, u, spec, &[*point], *source, counter)
        }
        Qoi::SolutionGrid { points, source } => {
            qoi_solution_at(problem, u, spec, points, *source, counter)
        }
        Qoi::SlownessAt { point } => {
            let f = problem.template.with_coeffs(u.clone());
            Ok(vec![f.eval(*point, spec.j_terms)])
        }
        Qoi::SlownessGrid { points } => {
            let f = problem.template.with_coeffs(u.clone());
            Ok(points.iter().map(|p| f.eval(*p, spec.j_terms)).collect())
        }
    }
}

/// `Q(u)`: the level difference for `l' > l0`, the plain level value at the
/// coarsest column.
fn q_eval(
    problem: &InverseProblem,
    u: &ParamVector,
    q_hi: Option<&LevelSpec>,
    q_lo: &LevelSpec,
    qoi: &Qoi,
    counter: &WorkCounter,
) -> Result<Vec<f64>> {
    let lo = qoi_at(problem, u, q_lo, qoi, counter)?;
    match q_hi {
        None => Ok(lo),
        Some(hi_spec) => {
            let hi = qoi_at(problem, u, hi_spec, qoi, counter)?;
            Ok(hi.iter().zip(&lo).map(|(a, b)| a - b).collect())
        }
    }
}

// ---------------------------------------------------------------------------
// The estimator driver.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ChainDiag {
    pub l: u32,
    pub lprime: u32,
    pub role: &'static str,
    pub samples: usize,
    pub acceptance_rate: f64,
    pub work: FmmStats,
}

#[derive(Debug, Clone)]
pub struct EstimateOutput {
    pub value: Vec<f64>,
    pub chains: Vec<ChainDiag>,
    pub work: FmmStats,
}

struct PairResult {
    means: PairMeans,
    upper_mean_state: ParamVector,
    diags: [ChainDiag; 2],
}

fn build_specs(problem: &InverseProblem, cfg: &MlConfig) -> Result<Vec<LevelSpec>> {
    let q = problem.template.basis.p - 1.0;
    if q <= 0.0 {
        return Err(Error::InvalidConfig("basis decay p must exceed 1".into()));
    }
    let mut specs = Vec::new();
    let mut prev_j = 0usize;
    for level in cfg.l0..=cfg.l_max {
        let j = cfg.j_schedule.terms(level, q);
        if j < prev_j {
            return Err(Error::InvalidConfig(
                "truncation schedule J_l must be non-decreasing in l".into(),
            ));
        }
        prev_j = j;
        specs.push(LevelSpec {
            level,
            j_terms: j,
            grid: build_grid_with_budget(problem.domain, level, problem.budget_mb)?,
        });
    }
    Ok(specs)
}

fn chain_dim(qoi_spec_terms: usize, measure_terms: usize) -> usize {
    measure_terms.max(qoi_spec_terms).max(1)
}

/// Runs one replicate of the multilevel estimator.
pub fn mlmcmc_estimate(
    problem: &InverseProblem,
    cfg: &MlConfig,
    qoi: &Qoi,
    replicate: u64,
) -> Result<EstimateOutput> {
    let schedule = level_schedule(cfg.l0, cfg.l_max, cfg.a)?;
    let corner_m = cfg
        .coarsest_samples_override
        .unwrap_or(schedule.corner_samples);
    let specs = build_specs(problem, cfg)?;
    let spec = |level: u32| -> &LevelSpec { &specs[(level - cfg.l0) as usize] };

    problem.obs.validate()?;
    problem.obs.check_on_grid(&spec(cfg.l0).grid)?;
    if qoi.is_solution() {
        for p in qoi.points() {
            spec(cfg.l0).grid.node_at(p)?;
        }
    }

    let mut diags: Vec<ChainDiag> = Vec::new();
    let total_work = WorkCounter::default();

    // Coarsest chain: targets the level-l0 posterior, integrand Q^{l0}.
    let corner_counter = WorkCounter::default();
    let corner_spec = spec(cfg.l0);
    let corner_out = {
        let pot = |u: &ParamVector| phi_at(problem, u, corner_spec, &corner_counter);
        let int =
            |u: &ParamVector, _phi: f64| q_eval(problem, u, None, corner_spec, qoi, &corner_counter);
        let chain_cfg = ChainConfig {
            sampler: cfg.sampler,
            burn_in: cfg.coarsest_burn_in,
            length: corner_m,
            init: ChainInit::PriorDraw,
        };
        let mut rngs = ChainRng::derive(
            cfg.base_seed,
            &[u64::from(cfg.l0), u64::from(cfg.l0), replicate, 0],
        );
        run_chain(
            &chain_cfg,
            chain_dim(corner_spec.j_terms, corner_spec.j_terms),
            &pot,
            &int,
            &mut rngs,
        )
        .map_err(|e| Error::ChainFailed {
            l: cfg.l0,
            lprime: cfg.l0,
            source: Box::new(e),
        })?
    };
    let corner_work = corner_counter.total();
    total_work.add(corner_work);
    diags.push(ChainDiag {
        l: cfg.l0,
        lprime: cfg.l0,
        role: "corner",
        samples: corner_m,
        acceptance_rate: corner_out.acceptance_rate,
        work: corner_work,
    });
    let corner_mean = corner_out.integrand_mean.clone();
    let mut init_state: Vec<ParamVector> = vec![corner_out.mean_state.clone()];

    // Coarsest-row chains: level-l0 measure, integrand Q^{l'} - Q^{l'-1}.
    let row_results: Vec<Result<(Vec<f64>, ChainDiag)>> = schedule
        .row
        .par_iter()
        .map(|&(lp, m)| {
            let counter = WorkCounter::default();
            let q_hi = spec(lp);
            let q_lo = spec(lp - 1);
            let measure = spec(cfg.l0);
            let pot = |u: &ParamVector| phi_at(problem, u, measure, &counter);
            let int = |u: &ParamVector, _phi: f64| {
                q_eval(problem, u, Some(q_hi), q_lo, qoi, &counter)
            };
            let chain_cfg = ChainConfig {
                sampler: cfg.sampler,
                burn_in: 0,
                length: m,
                init: ChainInit::Given(init_state[0].clone()),
            };
            let mut rngs = ChainRng::derive(
                cfg.base_seed,
                &[u64::from(cfg.l0), u64::from(lp), replicate, 1],
            );
            let out = run_chain(
                &chain_cfg,
                chain_dim(q_hi.j_terms, measure.j_terms),
                &pot,
                &int,
                &mut rngs,
            )
            .map_err(|e| Error::ChainFailed {
                l: cfg.l0,
                lprime: lp,
                source: Box::new(e),
            })?;
            let work = counter.total();
            Ok((
                out.integrand_mean,
                ChainDiag {
                    l: cfg.l0,
                    lprime: lp,
                    role: "row",
                    samples: m,
                    acceptance_rate: out.acceptance_rate,
                    work,
                },
            ))
        })
        .collect();
    let mut row_means = Vec::new();
    for r in row_results {
        let (mean, diag) = r?;
        total_work.add(diag.work);
        diags.push(diag);
        row_means.push(mean);
    }

    // Level pairs, one mesh level at a time so each level can start from the
    // previous level's mean state. Pairs within a level run concurrently.
    let mut pair_means: Vec<PairMeans> = Vec::new();
    for l in (cfg.l0 + 1)..=cfg.l_max {
        let level_pairs: Vec<&(u32, u32, usize)> =
            schedule.pairs.iter().filter(|&&(pl, _, _)| pl == l).collect();
        let init = init_state[(l - 1 - cfg.l0) as usize].clone();
        let results: Vec<Result<PairResult>> = level_pairs
            .par_iter()
            .map(|&&(_, lp, m)| run_pair(problem, cfg, qoi, &specs, l, lp, m, &init, replicate))
            .collect();
        let mut next_init: Option<ParamVector> = None;
        for r in results {
            let pr = r?;
            for d in &pr.diags {
                total_work.add(d.work);
            }
            if pr.diags[0].lprime == cfg.l0 {
                next_init = Some(pr.upper_mean_state.clone());
            }
            diags.extend(pr.diags);
            pair_means.push(pr.means);
        }
        init_state.push(next_init.expect("the l' = l0 column exists for every l"));
    }

    let value = combine_estimator(&pair_means, &row_means, &corner_mean);
    Ok(EstimateOutput {
        value,
        chains: diags,
        work: total_work.total(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_pair(
    problem: &InverseProblem,
    cfg: &MlConfig,
    qoi: &Qoi,
    specs: &[LevelSpec],
    l: u32,
    lp: u32,
    m: usize,
    init: &ParamVector,
    replicate: u64,
) -> Result<PairResult> {
    let spec = |level: u32| -> &LevelSpec { &specs[(level - cfg.l0) as usize] };
    let upper = spec(l);
    let lower = spec(l - 1);
    let (q_hi, q_lo) = if lp == cfg.l0 {
        (None, spec(cfg.l0))
    } else {
        (Some(spec(lp)), spec(lp - 1))
    };
    let dim = chain_dim(
        q_hi.map(|s| s.j_terms).unwrap_or(q_lo.j_terms),
        upper.j_terms,
    );
    let chain_cfg = |init_state: ParamVector| ChainConfig {
        sampler: cfg.sampler,
        burn_in: 0,
        length: m,
        init: ChainInit::Given(init_state),
    };

    let upper_counter = WorkCounter::default();
    let lower_counter = WorkCounter::default();

    let wrap = |e: Error| Error::ChainFailed {
        l,
        lprime: lp,
        source: Box::new(e),
    };

    // Upper chain under the level-l posterior averages A1, A3 and A6 + A7;
    // lower chain under level l-1 averages A2, A4 + A8 and A5. Both see the
    // same u through the same slowness construction at every level involved.
    let (upper_out, lower_out) = rayon::join(
        || -> Result<ChainOutput> {
            let pot = |u: &ParamVector| phi_at(problem, u, upper, &upper_counter);
            let int = |u: &ParamVector, phi_l: f64| -> Result<Vec<f64>> {
                let phi_lm1 = phi_at(problem, u, lower, &upper_counter)?;
                let q = q_eval(problem, u, q_hi, q_lo, qoi, &upper_counter)?;
                let t = a_terms(phi_l, phi_lm1, &q)?;
                let mut row = t.a1;
                row.push(t.a3);
                row.extend(t.a6.iter().zip(&t.a7).map(|(x, y)| x + y));
                Ok(row)
            };
            let mut rngs = ChainRng::derive(
                cfg.base_seed,
                &[u64::from(l), u64::from(lp), replicate, 2],
            );
            run_chain(&chain_cfg(init.clone()), dim, &pot, &int, &mut rngs)
        },
        || -> Result<ChainOutput> {
            let pot = |u: &ParamVector| phi_at(problem, u, lower, &lower_counter);
            let int = |u: &ParamVector, phi_lm1: f64| -> Result<Vec<f64>> {
                let phi_l = phi_at(problem, u, upper, &lower_counter)?;
                let q = q_eval(problem, u, q_hi, q_lo, qoi, &lower_counter)?;
                let t = a_terms(phi_l, phi_lm1, &q)?;
                let mut row = t.a2;
                row.extend(t.a4.iter().zip(&t.a8).map(|(x, y)| x + y));
                row.push(t.a5);
                Ok(row)
            };
            let mut rngs = ChainRng::derive(
                cfg.base_seed,
                &[u64::from(l), u64::from(lp), replicate, 3],
            );
            run_chain(&chain_cfg(init.clone()), dim, &pot, &int, &mut rngs)
        },
    );
    let upper_out = upper_out.map_err(wrap)?;
    let lower_out = lower_out.map_err(wrap)?;

    let qdim = qoi.dim();
    let means = PairMeans {
        a1: upper_out.integrand_mean[..qdim].to_vec(),
        a3: upper_out.integrand_mean[qdim],
        a67: upper_out.integrand_mean[qdim + 1..].to_vec(),
        a2: lower_out.integrand_mean[..qdim].to_vec(),
        a48: lower_out.integrand_mean[qdim..2 * qdim].to_vec(),
        a5: lower_out.integrand_mean[2 * qdim],
    };
    Ok(PairResult {
        means,
        upper_mean_state: upper_out.mean_state.clone(),
        diags: [
            ChainDiag {
                l,
                lprime: lp,
                role: "upper",
                samples: m,
                acceptance_rate: upper_out.acceptance_rate,
                work: upper_counter.total(),
            },
            ChainDiag {
                l,
                lprime: lp,
                role: "lower",
                samples: m,
                acceptance_rate: lower_out.acceptance_rate,
                work: lower_counter.total(),
            },
        ],
    })
}

// ---------------------------------------------------------------------------
// Quadrature-exact expectations for the one-parameter problem. These replace
// chain averages with Gauss-Hermite integrals through the same A-term and
// combination code, which verifies the estimator algebra without sampling
// noise.
// ---------------------------------------------------------------------------

/// Exact (quadrature) posterior expectation of the A-term groups for one
/// `(l, l')` pair of a one-parameter problem.
pub fn gh_pair_means(
    problem: &InverseProblem,
    upper: &LevelSpec,
    lower: &LevelSpec,
    q_hi: Option<&LevelSpec>,
    q_lo: &LevelSpec,
    qoi: &Qoi,
    rule: &QuadratureRule,
) -> Result<PairMeans> {
    let counter = WorkCounter::default();
    let n = rule.order;
    let mut phi_u = Vec::with_capacity(n);
    let mut phi_lo = Vec::with_capacity(n);
    let mut qs = Vec::with_capacity(n);
    for &node in &rule.nodes {
        let u = ParamVector::new(vec![node]);
        phi_u.push(phi_at(problem, &u, upper, &counter)?);
        phi_lo.push(phi_at(problem, &u, lower, &counter)?);
        qs.push(q_eval(problem, &u, q_hi, q_lo, qoi, &counter)?);
    }
    let weights_for = |phis: &[f64]| -> Result<Vec<f64>> {
        let shift = phis.iter().cloned().fold(f64::INFINITY, f64::min);
        if !shift.is_finite() {
            return Err(Error::DegenerateQuadrature);
        }
        let dens: Vec<f64> = rule
            .weights
            .iter()
            .zip(phis)
            .map(|(&w, &p)| w * (-(p - shift)).exp())
            .collect();
        let z: f64 = dens.iter().sum();
        Ok(dens.into_iter().map(|d| d / z).collect())
    };
    let wu = weights_for(&phi_u)?;
    let wl = weights_for(&phi_lo)?;

    let qdim = qoi.dim();
    let mut means = PairMeans {
        a1: vec![0.0; qdim],
        a2: vec![0.0; qdim],
        a3: 0.0,
        a48: vec![0.0; qdim],
        a5: 0.0,
        a67: vec![0.0; qdim],
    };
    for i in 0..n {
        let t = a_terms(phi_u[i], phi_lo[i], &qs[i])?;
        for c in 0..qdim {
            means.a1[c] += wu[i] * t.a1[c];
            means.a67[c] += wu[i] * (t.a6[c] + t.a7[c]);
            means.a2[c] += wl[i] * t.a2[c];
            means.a48[c] += wl[i] * (t.a4[c] + t.a8[c]);
        }
        means.a3 += wu[i] * t.a3;
        means.a5 += wl[i] * t.a5;
    }
    Ok(means)
}

/// Exact posterior expectation `E^{γ^measure}[Q]` of a (possibly level
/// differenced) quantity, by quadrature.
pub fn gh_expectation(
    problem: &InverseProblem,
    measure: &LevelSpec,
    q_hi: Option<&LevelSpec>,
    q_lo: &LevelSpec,
    qoi: &Qoi,
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    let counter = WorkCounter::default();
    let n = rule.order;
    let mut phis = Vec::with_capacity(n);
    let mut qs = Vec::with_capacity(n);
    for &node in &rule.nodes {
        let u = ParamVector::new(vec![node]);
        phis.push(phi_at(problem, &u, measure, &counter)?);
        qs.push(q_eval(problem, &u, q_hi, q_lo, qoi, &counter)?);
    }
    let shift = phis.iter().cloned().fold(f64::INFINITY, f64::min);
    if !shift.is_finite() {
        return Err(Error::DegenerateQuadrature);
    }
    let dens: Vec<f64> = rule
        .weights
        .iter()
        .zip(&phis)
        .map(|(&w, &p)| w * (-(p - shift)).exp())
        .collect();
    let z: f64 = dens.iter().sum();
    let qdim = qoi.dim();
    let mut out = vec![0.0; qdim];
    for i in 0..n {
        for c in 0..qdim {
            out[c] += dens[i] / z * qs[i][c];
        }
    }
    Ok(out)
}

/// Potential of the one-parameter problem at a given level, for oracle use.
pub fn gh_potential_fn<'p>(
    problem: &'p InverseProblem,
    spec: &'p LevelSpec,
) -> impl Fn(f64) -> Result<f64> + Sync + 'p {
    move |u: f64| {
        let counter = WorkCounter::default();
        phi_at(problem, &ParamVector::new(vec![u]), spec, &counter)
    }
}

/// High-accuracy reference `E^{γ^spec}[Q^spec]` for scalar quantities of the
/// one-parameter problem, via the recentred quadrature (the posterior is far
/// narrower than the raw Gauss-Hermite lattice at small noise).
pub fn gh_adapted_reference(
    problem: &InverseProblem,
    spec: &LevelSpec,
    qoi: &Qoi,
    rule: &QuadratureRule,
) -> Result<f64> {
    assert_eq!(qoi.dim(), 1, "adapted reference covers scalar quantities");
    rule.adapted_posterior_expectation(|u| {
        let counter = WorkCounter::default();
        let uv = ParamVector::new(vec![u]);
        let phi = phi_at(problem, &uv, spec, &counter)?;
        let q = qoi_at(problem, &uv, spec, qoi, &counter)?;
        Ok((phi, q[0]))
    })
}
