//! Metropolis-Hastings chains on the coefficient vector with independence
//! and pCN proposals, prior-reversible so the acceptance ratio is
//! `1 ∧ exp(Φ(u) - Φ(u'))`.
//!
//! A chain walks its trajectory first, run-length encoding the retained
//! states, and only then evaluates the requested integrands once per
//! distinct state. Independence proposals do not depend on the current
//! state, so their potentials are evaluated in parallel ahead of the walk;
//! proposal noise and acceptance uniforms come from separate derived
//! streams, which keeps trajectories bit-identical either way.

use crate::error::{Error, Result};
use crate::field::{sample_prior, ParamVector};
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerKind {
    Independence,
    Pcn { beta: f64 },
}

impl SamplerKind {
    pub fn validate(&self) -> Result<()> {
        if let SamplerKind::Pcn { beta } = self {
            if !(*beta > 0.0 && *beta <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "pCN beta must lie in (0, 1], got {beta}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChainInit {
    PriorDraw,
    Given(ParamVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub sampler: SamplerKind,
    pub burn_in: usize,
    pub length: usize,
    pub init: ChainInit,
}

/// The random streams a chain consumes, derived from a master seed and the
/// chain's coordinates (level pair, replicate, role).
pub struct ChainRng {
    pub proposal: ChaCha8Rng,
    pub accept: ChaCha8Rng,
    pub init: ChaCha8Rng,
}

impl ChainRng {
    pub fn derive(master_seed: u64, coords: &[u64]) -> Self {
        ChainRng {
            proposal: rng::stream(master_seed, "chain-proposal", coords),
            accept: rng::stream(master_seed, "chain-accept", coords),
            init: rng::stream(master_seed, "chain-init", coords),
        }
    }
}

/// Draws a proposal: a fresh prior sample for the independence sampler,
/// `sqrt(1 - beta^2) u + beta xi` for pCN.
pub fn propose<R: Rng + ?Sized>(kind: &SamplerKind, u: &ParamVector, rng: &mut R) -> ParamVector {
    match kind {
        SamplerKind::Independence => sample_prior(u.len().max(1), rng),
        SamplerKind::Pcn { beta } => {
            let contraction = (1.0 - beta * beta).sqrt();
            ParamVector::new(
                u.as_slice()
                    .iter()
                    .map(|&c| contraction * c + beta * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )
        }
    }
}

/// Accept/reject with probability `1 ∧ exp(phi_current - phi_proposal)`.
pub fn accept<R: Rng + ?Sized>(phi_current: f64, phi_proposal: f64, rng: &mut R) -> Result<bool> {
    if phi_current.is_nan() || phi_proposal.is_nan() {
        return Err(Error::NanPotential);
    }
    let alpha = (phi_current - phi_proposal).exp().min(1.0);
    Ok(rng.random::<f64>() < alpha)
}

/// A retained state with its run length in the post-burn-in trajectory.
#[derive(Debug, Clone)]
pub struct RetainedState {
    pub u: ParamVector,
    pub phi: f64,
    pub weight: u64,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Mean of each integrand component over the post-burn-in samples.
    pub integrand_mean: Vec<f64>,
    /// Average coefficient vector over the post-burn-in samples.
    pub mean_state: ParamVector,
    pub final_state: ParamVector,
    pub acceptance_rate: f64,
    pub accepted: u64,
    pub proposals: u64,
    /// Whether the first post-burn-in step accepted its proposal (used when
    /// reconstructing per-iteration traces from the run-length encoding).
    pub first_retained_accepted: bool,
    /// Distinct retained states in trajectory order with run lengths.
    pub states: Vec<RetainedState>,
}

impl ChainOutput {
    /// Batch-means standard error of one integrand component, evaluated by
    /// expanding the run-length encoded trajectory.
    pub fn batch_se(&self, values: &[f64], n_batches: usize) -> f64 {
        let total: u64 = self.states.iter().map(|s| s.weight).sum();
        assert_eq!(values.len(), self.states.len());
        assert!(n_batches >= 2 && total >= n_batches as u64);
        let batch_len = total / n_batches as u64;
        let used = batch_len * n_batches as u64;
        let mut batch_means = Vec::with_capacity(n_batches);
        let mut idx = 0usize;
        let mut left_in_state = self.states[0].weight;
        for _ in 0..n_batches {
            let mut acc = 0.0;
            let mut need = batch_len;
            while need > 0 {
                let take = need.min(left_in_state);
                acc += take as f64 * values[idx];
                need -= take;
                left_in_state -= take;
                if left_in_state == 0 && idx + 1 < self.states.len() {
                    idx += 1;
                    left_in_state = self.states[idx].weight;
                }
            }
            batch_means.push(acc / batch_len as f64);
        }
        let grand = batch_means.iter().sum::<f64>() / n_batches as f64;
        let var_b = batch_means
            .iter()
            .map(|m| (m - grand) * (m - grand))
            .sum::<f64>()
            / (n_batches - 1) as f64;
        let _ = used;
        (var_b / n_batches as f64).sqrt()
    }
}

/// Runs a Metropolis-Hastings chain targeting `exp(-potential)` against the
/// prior and averages `integrand` over the post-burn-in samples. The
/// potential is evaluated once per proposal; integrands once per distinct
/// retained state.
pub fn run_chain<P, G>(
    config: &ChainConfig,
    dim: usize,
    potential: &P,
    integrand: &G,
    rngs: &mut ChainRng,
) -> Result<ChainOutput>
where
    P: Fn(&ParamVector) -> Result<f64> + Sync,
    G: Fn(&ParamVector, f64) -> Result<Vec<f64>> + Sync,
{
    config.sampler.validate()?;
    assert!(config.length >= 1 && dim >= 1);
    let total = config.burn_in + config.length;

    let init_u = match &config.init {
        ChainInit::PriorDraw => sample_prior(dim, &mut rngs.init),
        ChainInit::Given(v) => v.resized(dim),
    };
    let init_phi = checked(potential(&init_u)?)?;

    let mut accepted = 0u64;
    let mut states: Vec<RetainedState> = Vec::new();
    let mut cur_u = init_u;
    let mut cur_phi = init_phi;
    let mut first_retained_accepted = false;

    let retain = |states: &mut Vec<RetainedState>, u: &ParamVector, phi: f64, fresh: bool| {
        if fresh || states.is_empty() {
            states.push(RetainedState {
                u: u.clone(),
                phi,
                weight: 1,
            });
        } else {
            states.last_mut().unwrap().weight += 1;
        }
    };

    match config.sampler {
        SamplerKind::Independence => {
            // Proposals are state-independent: draw them all in trajectory
            // order, evaluate the potentials in parallel, then walk.
            let proposals: Vec<ParamVector> = (0..total)
                .map(|_| sample_prior(dim, &mut rngs.proposal))
                .collect();
            let phis: Vec<Result<f64>> = proposals
                .par_iter()
                .map(|v| potential(v).and_then(checked))
                .collect();
            let mut entered = false;
            for step in 0..total {
                let phi_v = phis[step].clone()?;
                let take = accept(cur_phi, phi_v, &mut rngs.accept)?;
                if take {
                    accepted += 1;
                    cur_u = proposals[step].clone();
                    cur_phi = phi_v;
                }
                if step >= config.burn_in {
                    if !entered {
                        first_retained_accepted = take;
                    }
                    let fresh = take || !entered;
                    retain(&mut states, &cur_u, cur_phi, fresh);
                    entered = true;
                }
            }
        }
        SamplerKind::Pcn { .. } => {
            let mut entered = false;
            for step in 0..total {
                let v = propose(&config.sampler, &cur_u, &mut rngs.proposal);
                let phi_v = checked(potential(&v)?)?;
                let take = accept(cur_phi, phi_v, &mut rngs.accept)?;
                if take {
                    accepted += 1;
                    cur_u = v;
                    cur_phi = phi_v;
                }
                if step >= config.burn_in {
                    if !entered {
                        first_retained_accepted = take;
                    }
                    let fresh = take || !entered;
                    retain(&mut states, &cur_u, cur_phi, fresh);
                    entered = true;
                }
            }
        }
    }

    // Integrands once per distinct state, in parallel, then weighted means.
    let evals: Vec<Result<Vec<f64>>> = states
        .par_iter()
        .map(|s| integrand(&s.u, s.phi))
        .collect();
    let mut integrand_mean: Vec<f64> = Vec::new();
    let mut mean_state = vec![0.0; dim];
    let total_weight: u64 = states.iter().map(|s| s.weight).sum();
    for (s, ev) in states.iter().zip(evals) {
        let vals = ev?;
        if integrand_mean.is_empty() {
            integrand_mean = vec![0.0; vals.len()];
        }
        let w = s.weight as f64;
        for (acc, v) in integrand_mean.iter_mut().zip(&vals) {
            *acc += w * v;
        }
        for (acc, c) in mean_state.iter_mut().zip(s.u.as_slice()) {
            *acc += w * c;
        }
    }
    let tw = total_weight as f64;
    integrand_mean.iter_mut().for_each(|v| *v /= tw);
    mean_state.iter_mut().for_each(|v| *v /= tw);

    Ok(ChainOutput {
        integrand_mean,
        mean_state: ParamVector::new(mean_state),
        final_state: cur_u,
        acceptance_rate: accepted as f64 / total as f64,
        accepted,
        proposals: total as u64,
        first_retained_accepted,
        states,
    })
}

fn checked(phi: f64) -> Result<f64> {
    if phi.is_nan() {
        Err(Error::NanPotential)
    } else {
        Ok(phi)
    }
}
