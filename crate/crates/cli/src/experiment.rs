//! Assembles solver objects from a parsed configuration.

use crate::config::*;
use eikmc_core::bayes::{generate_observations, read_observation_csv, NoiseCov};
use eikmc_core::field::{
    sample_prior, BinaryField, Disk, KlBasis, ParamVector, ReferenceField, SineMap, SlownessField,
};
use eikmc_core::grid::Domain;
use eikmc_core::mcmc::SamplerKind;
use eikmc_core::mlmcmc::{InverseProblem, JSchedule, MlConfig, Qoi};
use eikmc_core::{rng, setups, Error, Result};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub domain: Domain,
    pub template: SlownessField,
    pub reference: ReferenceField,
    pub points: Vec<[f64; 2]>,
    pub sources: Vec<[f64; 2]>,
}

impl Experiment {
    pub fn build(cfg: ExperimentConfig) -> Result<Self> {
        let domain = Domain::new(cfg.lower, cfg.upper)?;
        let map = SineMap {
            offset: cfg.map_offset,
            scale: cfg.map_scale,
        };
        let mut basis = KlBasis::analytic_sine(cfg.kappa, map, cfg.max_terms);
        basis.p = cfg.p;
        let template = SlownessField::new(basis, ParamVector::zeros(0));

        let reference = match &cfg.reference {
            ReferenceSpec::Coefficients(c) => {
                ReferenceField::LogNormal(template.with_coeffs(ParamVector::new(c.clone())))
            }
            ReferenceSpec::PriorDraw { terms } => {
                let mut r = rng::stream(cfg.seed, "reference-draw", &[]);
                ReferenceField::LogNormal(template.with_coeffs(sample_prior(*terms, &mut r)))
            }
            ReferenceSpec::Binary {
                background,
                inclusions,
            } => ReferenceField::Binary(BinaryField::new(
                *background,
                inclusions
                    .iter()
                    .map(|q| Disk {
                        center: [q[0], q[1]],
                        radius: q[2],
                        value: q[3],
                    })
                    .collect(),
            )),
        };

        let points = match &cfg.points {
            PointsSpec::Midedge8 => setups::eight_midedge_points(domain),
            PointsSpec::Ring { spacing } => setups::boundary_ring_points(domain, *spacing),
            PointsSpec::Explicit(pts) => pts.clone(),
        };
        let sources = match &cfg.sources {
            SourcesSpec::Center => vec![[
                (cfg.lower[0] + cfg.upper[0]) / 2.0,
                (cfg.lower[1] + cfg.upper[1]) / 2.0,
            ]],
            SourcesSpec::Spread5 => setups::five_spread_sources(domain),
            SourcesSpec::Explicit(pts) => pts.clone(),
        };

        Ok(Experiment {
            cfg,
            domain,
            template,
            reference,
            points,
            sources,
        })
    }

    pub fn noise(&self) -> NoiseCov {
        NoiseCov::scaled_identity(
            self.cfg.noise_sigma,
            self.points.len() * self.sources.len(),
        )
    }

    /// Observations: loaded from the configured file when set, otherwise
    /// synthesized at `ref_level` with the data-noise stream.
    pub fn observations(&self, config_dir: &Path) -> Result<eikmc_core::Observation> {
        if let Some(file) = &self.cfg.observation_file {
            let path = if Path::new(file).is_absolute() {
                Path::new(file).to_path_buf()
            } else {
                config_dir.join(file)
            };
            let f = File::open(&path)
                .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let obs = read_observation_csv(BufReader::new(f), self.sources.clone(), self.noise())?;
            return Ok(obs);
        }
        let mut noise_rng = rng::stream(self.cfg.seed, "data-noise", &[]);
        let data_noise = NoiseCov::scaled_identity(
            self.cfg.data_noise_sigma.unwrap_or(self.cfg.noise_sigma),
            self.points.len() * self.sources.len(),
        );
        let mut obs = generate_observations(
            &self.reference,
            self.points.clone(),
            self.sources.clone(),
            data_noise,
            self.cfg.ref_level,
            self.domain,
            self.cfg.memory_budget_mb,
            &mut noise_rng,
        )?;
        obs.noise = self.noise();
        Ok(obs)
    }

    pub fn sampler(&self) -> SamplerKind {
        match self.cfg.sampler {
            SamplerSpec::Independence => SamplerKind::Independence,
            SamplerSpec::Pcn { beta } => SamplerKind::Pcn { beta },
        }
    }

    pub fn ml_config(&self, l_max: u32) -> MlConfig {
        MlConfig {
            l0: self.cfg.l0,
            l_max,
            a: self.cfg.a,
            sampler: self.sampler(),
            base_seed: self.cfg.seed,
            j_schedule: match self.cfg.j_schedule {
                JScheduleSpec::Balanced => JSchedule::Balanced,
                JScheduleSpec::DoubledSqrt => JSchedule::DoubledSqrt,
            },
            coarsest_burn_in: self.cfg.coarsest_burn_in,
            coarsest_samples_override: self.cfg.coarsest_samples,
        }
    }

    pub fn qoi(&self) -> Qoi {
        match self.cfg.qoi {
            QoiSpec::SolutionAt => Qoi::SolutionAt {
                point: self.cfg.qoi_point,
                source: self.cfg.qoi_source,
            },
            QoiSpec::SlownessAt => Qoi::SlownessAt {
                point: self.cfg.qoi_point,
            },
            QoiSpec::SolutionGrid => Qoi::SolutionGrid {
                points: setups::uniform_grid_points(self.domain, self.cfg.grid_m),
                source: self.cfg.qoi_source,
            },
            QoiSpec::SlownessGrid => Qoi::SlownessGrid {
                points: setups::uniform_grid_points(self.domain, self.cfg.grid_m),
            },
        }
    }

    pub fn problem(&self, obs: eikmc_core::Observation) -> InverseProblem {
        InverseProblem {
            domain: self.domain,
            template: self.template.clone(),
            obs,
            budget_mb: self.cfg.memory_budget_mb,
        }
    }
}
