//! Flat sectioned key-value configuration: `[section]` headers, one
//! `key = value` per line, `#` comments, repeated keys building lists.
//! The effective configuration written next to each run's outputs reloads
//! to an identical experiment.

use eikmc_core::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    /// section -> ordered (key, value) pairs
    sections: BTreeMap<String, Vec<(String, String)>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = RawConfig::default();
        let mut current = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| bad(format!("line {}: unterminated section header", ln + 1)))?;
                current = name.trim().to_string();
                out.sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected 'key = value'", ln + 1)))?;
            if current.is_empty() {
                return Err(bad(format!("line {}: assignment before any [section]", ln + 1)));
            }
            out.sections
                .get_mut(&current)
                .unwrap()
                .push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(out)
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|kv| {
            kv.iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        })
    }

    fn get_all(&self, section: &str, key: &str) -> Vec<&str> {
        self.sections
            .get(section)
            .map(|kv| {
                kv.iter()
                    .filter(|(k, _)| k == key)
                    .map(|(_, v)| v.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key)
            .ok_or_else(|| bad(format!("missing key {section}.{key}")))
    }

    fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(section, key) {
            Some(v) => parse_f64(section, key, v),
            None => Ok(default),
        }
    }

    fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.get(section, key) {
            Some(v) => v
                .parse()
                .map_err(|_| bad(format!("{section}.{key}: '{v}' is not a nonnegative integer"))),
            None => Ok(default),
        }
    }

    fn u32_or(&self, section: &str, key: &str, default: u32) -> Result<u32> {
        Ok(self.usize_or(section, key, default as usize)? as u32)
    }

    fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        match self.get(section, key) {
            Some(v) => v
                .parse()
                .map_err(|_| bad(format!("{section}.{key}: '{v}' is not an integer"))),
            None => Ok(default),
        }
    }

    fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(v) => Err(bad(format!("{section}.{key}: '{v}' is not a boolean"))),
            None => Ok(default),
        }
    }

    fn pair(&self, section: &str, key: &str) -> Result<[f64; 2]> {
        let v = self.require(section, key)?;
        parse_pair(section, key, v)
    }

    fn pair_or(&self, section: &str, key: &str, default: [f64; 2]) -> Result<[f64; 2]> {
        match self.get(section, key) {
            Some(v) => parse_pair(section, key, v),
            None => Ok(default),
        }
    }

    fn list_f64(&self, section: &str, key: &str) -> Result<Vec<f64>> {
        let v = self.require(section, key)?;
        v.split_whitespace()
            .map(|t| parse_f64(section, key, t))
            .collect()
    }

    fn list_u32_or(&self, section: &str, key: &str, default: Vec<u32>) -> Result<Vec<u32>> {
        match self.get(section, key) {
            Some(v) => v
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| bad(format!("{section}.{key}: '{t}' is not an integer")))
                })
                .collect(),
            None => Ok(default),
        }
    }
}

fn bad(msg: String) -> Error {
    Error::InvalidConfig(msg)
}

fn parse_f64(section: &str, key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| bad(format!("{section}.{key}: '{v}' is not a number")))
}

fn parse_pair(section: &str, key: &str, v: &str) -> Result<[f64; 2]> {
    let toks: Vec<&str> = v.split_whitespace().collect();
    if toks.len() != 2 {
        return Err(bad(format!("{section}.{key}: expected two numbers, got '{v}'")));
    }
    Ok([
        parse_f64(section, key, toks[0])?,
        parse_f64(section, key, toks[1])?,
    ])
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSpec {
    Coefficients(Vec<f64>),
    PriorDraw { terms: usize },
    Binary {
        background: f64,
        inclusions: Vec<[f64; 4]>, // cx cy r value
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointsSpec {
    Midedge8,
    Ring { spacing: f64 },
    Explicit(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourcesSpec {
    Center,
    Spread5,
    Explicit(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerSpec {
    Independence,
    Pcn { beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum JScheduleSpec {
    Balanced,
    DoubledSqrt,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QoiSpec {
    SolutionAt,
    SlownessAt,
    SolutionGrid,
    SlownessGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TimingTarget {
    Forward,
    Mlmcmc,
}

/// The fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub lower: [f64; 2],
    pub upper: [f64; 2],

    pub kappa: f64,
    pub p: f64,
    pub max_terms: usize,
    pub map_scale: [f64; 2],
    pub map_offset: [f64; 2],

    pub reference: ReferenceSpec,

    pub points: PointsSpec,
    pub sources: SourcesSpec,
    pub noise_sigma: f64,
    /// Noise added when synthesizing data; defaults to `noise_sigma`. Zero
    /// produces exact data while the potential keeps `noise_sigma`.
    pub data_noise_sigma: Option<f64>,
    pub ref_level: u32,
    pub observation_file: Option<String>,

    pub sampler: SamplerSpec,
    pub l0: u32,
    pub l_max: u32,
    pub a: u32,
    pub replicates: usize,
    pub seed: u64,
    pub j_schedule: JScheduleSpec,
    pub coarsest_burn_in: usize,
    pub coarsest_samples: Option<usize>,

    pub qoi: QoiSpec,
    pub qoi_point: [f64; 2],
    pub qoi_source: [f64; 2],
    pub grid_m: usize,

    pub mcmc_level: u32,
    pub mcmc_length: usize,
    pub mcmc_burn_in: usize,
    pub mcmc_trace: bool,

    pub study_l_values: Vec<u32>,
    pub gh_order: usize,
    pub ref_gh_level: u32,

    pub timing_target: TimingTarget,
    pub timing_l_values: Vec<u32>,
    pub forward_levels: Vec<u32>,
    pub timing_repeats: usize,

    pub forward_level: u32,
    pub forward_source: [f64; 2],

    pub out_dir: String,
    pub threads: usize,
    pub memory_budget_mb: u64,
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let lower = raw.pair("domain", "lower")?;
        let upper = raw.pair("domain", "upper")?;
        if !(lower[0] < upper[0] && lower[1] < upper[1]) {
            return Err(bad("domain.lower must be below domain.upper".into()));
        }
        let center = [(lower[0] + upper[0]) / 2.0, (lower[1] + upper[1]) / 2.0];

        let kind = raw.get("basis", "kind").unwrap_or("analytic-sine");
        if kind != "analytic-sine" {
            return Err(bad(format!("basis.kind: unknown kind '{kind}'")));
        }
        let kappa = raw.f64_or("basis", "kappa", 20.0)?;
        if kappa <= 0.0 {
            return Err(bad("basis.kappa must be positive".into()));
        }
        let p = raw.f64_or("basis", "p", 2.0)?;
        if p <= 1.0 {
            return Err(bad("basis.p must exceed 1".into()));
        }
        let max_terms = raw.usize_or("basis", "max_terms", 64)?;
        if max_terms == 0 {
            return Err(bad("basis.max_terms must be at least 1".into()));
        }

        let reference = match raw.get("reference", "kind").unwrap_or("coefficients") {
            "coefficients" => ReferenceSpec::Coefficients(raw.list_f64("reference", "coefficients")?),
            "prior-draw" => ReferenceSpec::PriorDraw {
                terms: raw.usize_or("reference", "draw_terms", max_terms)?,
            },
            "binary" => {
                let background = raw.f64_or("reference", "background", 1.0)?;
                let mut inclusions = Vec::new();
                for v in raw.get_all("reference", "inclusion") {
                    let toks: Vec<&str> = v.split_whitespace().collect();
                    if toks.len() != 4 {
                        return Err(bad(format!(
                            "reference.inclusion: expected 'cx cy r value', got '{v}'"
                        )));
                    }
                    let mut q = [0.0; 4];
                    for (slot, t) in q.iter_mut().zip(&toks) {
                        *slot = parse_f64("reference", "inclusion", t)?;
                    }
                    if q[2] <= 0.0 || q[3] <= 0.0 {
                        return Err(bad("reference.inclusion: radius and value must be positive".into()));
                    }
                    inclusions.push(q);
                }
                if background <= 0.0 {
                    return Err(bad("reference.background must be positive".into()));
                }
                ReferenceSpec::Binary {
                    background,
                    inclusions,
                }
            }
            other => return Err(bad(format!("reference.kind: unknown kind '{other}'"))),
        };

        let points = match raw.get("observation", "points").unwrap_or("midedge-8") {
            "midedge-8" => PointsSpec::Midedge8,
            "explicit" => {
                let pts: Result<Vec<[f64; 2]>> = raw
                    .get_all("observation", "point")
                    .into_iter()
                    .map(|v| parse_pair("observation", "point", v))
                    .collect();
                let pts = pts?;
                if pts.is_empty() {
                    return Err(bad("observation.point: explicit points list is empty".into()));
                }
                PointsSpec::Explicit(pts)
            }
            ring if ring.starts_with("ring:") => {
                let spacing = parse_f64("observation", "points", &ring[5..])?;
                if spacing <= 0.0 {
                    return Err(bad("observation.points: ring spacing must be positive".into()));
                }
                PointsSpec::Ring { spacing }
            }
            other => {
                return Err(bad(format!(
                    "observation.points: expected midedge-8, ring:<spacing> or explicit, got '{other}'"
                )))
            }
        };

        let sources = match raw.get("observation", "sources").unwrap_or("center") {
            "center" => SourcesSpec::Center,
            "spread-5" => SourcesSpec::Spread5,
            "explicit" => {
                let pts: Result<Vec<[f64; 2]>> = raw
                    .get_all("observation", "source")
                    .into_iter()
                    .map(|v| parse_pair("observation", "source", v))
                    .collect();
                let pts = pts?;
                if pts.is_empty() {
                    return Err(bad("observation.source: explicit sources list is empty".into()));
                }
                SourcesSpec::Explicit(pts)
            }
            other => {
                return Err(bad(format!(
                    "observation.sources: expected center, spread-5 or explicit, got '{other}'"
                )))
            }
        };

        let noise_sigma = raw.f64_or("observation", "noise_sigma", 0.1)?;
        if noise_sigma < 0.0 {
            return Err(bad("observation.noise_sigma must be nonnegative".into()));
        }

        let sampler = match raw.get("inversion", "sampler").unwrap_or("independence") {
            "independence" => SamplerSpec::Independence,
            "pcn" => {
                let beta = raw.f64_or("inversion", "beta", 0.5)?;
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(bad("inversion.beta must lie in (0, 1]".into()));
                }
                SamplerSpec::Pcn { beta }
            }
            other => return Err(bad(format!("inversion.sampler: unknown sampler '{other}'"))),
        };
        let l0 = raw.u32_or("inversion", "l0", 2)?;
        let l_max = raw.u32_or("inversion", "l_max", 5)?;
        if l0 < 1 || l_max < l0 {
            return Err(bad("inversion: need 1 <= l0 <= l_max".into()));
        }
        let a = raw.u32_or("inversion", "a", 3)?;
        if !matches!(a, 0 | 2 | 3 | 4) {
            return Err(bad(format!(
                "inversion.a: unsupported exponent {a}; supported rows are 0, 2, 3, 4"
            )));
        }
        let j_schedule = match raw.get("inversion", "j_schedule").unwrap_or("balanced") {
            "balanced" => JScheduleSpec::Balanced,
            "doubled-sqrt" => JScheduleSpec::DoubledSqrt,
            other => return Err(bad(format!("inversion.j_schedule: unknown schedule '{other}'"))),
        };
        let coarsest_samples = match raw.get("inversion", "coarsest_samples") {
            Some(v) => Some(v.parse().map_err(|_| {
                bad(format!("inversion.coarsest_samples: '{v}' is not an integer"))
            })?),
            None => None,
        };

        let qoi = match raw.get("qoi", "kind").unwrap_or("solution-at") {
            "solution-at" => QoiSpec::SolutionAt,
            "slowness-at" => QoiSpec::SlownessAt,
            "solution-grid" => QoiSpec::SolutionGrid,
            "slowness-grid" => QoiSpec::SlownessGrid,
            other => return Err(bad(format!("qoi.kind: unknown kind '{other}'"))),
        };

        let timing_target = match raw.get("timing", "target").unwrap_or("mlmcmc") {
            "mlmcmc" => TimingTarget::Mlmcmc,
            "forward" => TimingTarget::Forward,
            other => return Err(bad(format!("timing.target: unknown target '{other}'"))),
        };

        let cfg = ExperimentConfig {
            lower,
            upper,
            kappa,
            p,
            max_terms,
            map_scale: raw.pair_or("basis", "map_scale", [1.0, 1.0])?,
            map_offset: raw.pair_or("basis", "map_offset", [0.0, 0.0])?,
            reference,
            points,
            sources,
            noise_sigma,
            data_noise_sigma: match raw.get("observation", "data_noise_sigma") {
                Some(v) => Some(parse_f64("observation", "data_noise_sigma", v)?),
                None => None,
            },
            ref_level: raw.u32_or("observation", "ref_level", 10)?,
            observation_file: raw.get("observation", "file").map(|s| s.to_string()),
            sampler,
            l0,
            l_max,
            a,
            replicates: raw.usize_or("inversion", "replicates", 1)?.max(1),
            seed: raw.u64_or("inversion", "seed", 0)?,
            j_schedule,
            coarsest_burn_in: raw.usize_or("inversion", "coarsest_burn_in", 0)?,
            coarsest_samples,
            qoi,
            qoi_point: raw.pair_or("qoi", "point", center)?,
            qoi_source: raw.pair_or("qoi", "qoi_source", center)?,
            grid_m: raw.usize_or("qoi", "grid_m", 8)?,
            mcmc_level: raw.u32_or("mcmc", "level", l_max)?,
            mcmc_length: raw.usize_or("mcmc", "length", 10_000)?,
            mcmc_burn_in: raw.usize_or("mcmc", "burn_in", 1_000)?,
            mcmc_trace: raw.bool_or("mcmc", "trace", false)?,
            study_l_values: raw.list_u32_or("study", "l_values", vec![3, 4, 5, 6])?,
            gh_order: raw.usize_or("study", "gh_order", 40)?,
            ref_gh_level: raw.u32_or("study", "ref_gh_level", 10)?,
            timing_target,
            timing_l_values: raw.list_u32_or("timing", "l_values", vec![4, 5, 6])?,
            forward_levels: raw.list_u32_or("timing", "forward_levels", vec![8, 9, 10])?,
            timing_repeats: raw.usize_or("timing", "repeats", 3)?.max(1),
            forward_level: raw.u32_or("forward", "level", 6)?,
            forward_source: raw.pair_or("forward", "source", center)?,
            out_dir: raw.get("output", "dir").unwrap_or("out").to_string(),
            threads: raw.usize_or("output", "threads", 0)?,
            memory_budget_mb: raw.u64_or(
                "output",
                "memory_budget_mb",
                eikmc_core::grid::DEFAULT_MEMORY_BUDGET_MB,
            )?,
        };
        Ok(cfg)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_raw(&RawConfig::parse(text)?)
    }

    /// Canonical serialization of the effective configuration.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[domain]");
        let _ = writeln!(s, "lower = {} {}", self.lower[0], self.lower[1]);
        let _ = writeln!(s, "upper = {} {}", self.upper[0], self.upper[1]);
        let _ = writeln!(s, "\n[basis]");
        let _ = writeln!(s, "kind = analytic-sine");
        let _ = writeln!(s, "kappa = {}", self.kappa);
        let _ = writeln!(s, "p = {}", self.p);
        let _ = writeln!(s, "max_terms = {}", self.max_terms);
        let _ = writeln!(s, "map_scale = {} {}", self.map_scale[0], self.map_scale[1]);
        let _ = writeln!(s, "map_offset = {} {}", self.map_offset[0], self.map_offset[1]);
        let _ = writeln!(s, "\n[reference]");
        match &self.reference {
            ReferenceSpec::Coefficients(c) => {
                let _ = writeln!(s, "kind = coefficients");
                let toks: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
                let _ = writeln!(s, "coefficients = {}", toks.join(" "));
            }
            ReferenceSpec::PriorDraw { terms } => {
                let _ = writeln!(s, "kind = prior-draw");
                let _ = writeln!(s, "draw_terms = {terms}");
            }
            ReferenceSpec::Binary {
                background,
                inclusions,
            } => {
                let _ = writeln!(s, "kind = binary");
                let _ = writeln!(s, "background = {background}");
                for q in inclusions {
                    let _ = writeln!(s, "inclusion = {} {} {} {}", q[0], q[1], q[2], q[3]);
                }
            }
        }
        let _ = writeln!(s, "\n[observation]");
        match &self.points {
            PointsSpec::Midedge8 => {
                let _ = writeln!(s, "points = midedge-8");
            }
            PointsSpec::Ring { spacing } => {
                let _ = writeln!(s, "points = ring:{spacing}");
            }
            PointsSpec::Explicit(pts) => {
                let _ = writeln!(s, "points = explicit");
                for p in pts {
                    let _ = writeln!(s, "point = {} {}", p[0], p[1]);
                }
            }
        }
        match &self.sources {
            SourcesSpec::Center => {
                let _ = writeln!(s, "sources = center");
            }
            SourcesSpec::Spread5 => {
                let _ = writeln!(s, "sources = spread-5");
            }
            SourcesSpec::Explicit(pts) => {
                let _ = writeln!(s, "sources = explicit");
                for p in pts {
                    let _ = writeln!(s, "source = {} {}", p[0], p[1]);
                }
            }
        }
        let _ = writeln!(s, "noise_sigma = {}", self.noise_sigma);
        if let Some(v) = self.data_noise_sigma {
            let _ = writeln!(s, "data_noise_sigma = {v}");
        }
        let _ = writeln!(s, "ref_level = {}", self.ref_level);
        if let Some(f) = &self.observation_file {
            let _ = writeln!(s, "file = {f}");
        }
        let _ = writeln!(s, "\n[inversion]");
        match self.sampler {
            SamplerSpec::Independence => {
                let _ = writeln!(s, "sampler = independence");
            }
            SamplerSpec::Pcn { beta } => {
                let _ = writeln!(s, "sampler = pcn");
                let _ = writeln!(s, "beta = {beta}");
            }
        }
        let _ = writeln!(s, "l0 = {}", self.l0);
        let _ = writeln!(s, "l_max = {}", self.l_max);
        let _ = writeln!(s, "a = {}", self.a);
        let _ = writeln!(s, "replicates = {}", self.replicates);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(
            s,
            "j_schedule = {}",
            match self.j_schedule {
                JScheduleSpec::Balanced => "balanced",
                JScheduleSpec::DoubledSqrt => "doubled-sqrt",
            }
        );
        let _ = writeln!(s, "coarsest_burn_in = {}", self.coarsest_burn_in);
        if let Some(m) = self.coarsest_samples {
            let _ = writeln!(s, "coarsest_samples = {m}");
        }
        let _ = writeln!(s, "\n[qoi]");
        let _ = writeln!(
            s,
            "kind = {}",
            match self.qoi {
                QoiSpec::SolutionAt => "solution-at",
                QoiSpec::SlownessAt => "slowness-at",
                QoiSpec::SolutionGrid => "solution-grid",
                QoiSpec::SlownessGrid => "slowness-grid",
            }
        );
        let _ = writeln!(s, "point = {} {}", self.qoi_point[0], self.qoi_point[1]);
        let _ = writeln!(s, "qoi_source = {} {}", self.qoi_source[0], self.qoi_source[1]);
        let _ = writeln!(s, "grid_m = {}", self.grid_m);
        let _ = writeln!(s, "\n[mcmc]");
        let _ = writeln!(s, "level = {}", self.mcmc_level);
        let _ = writeln!(s, "length = {}", self.mcmc_length);
        let _ = writeln!(s, "burn_in = {}", self.mcmc_burn_in);
        let _ = writeln!(s, "trace = {}", self.mcmc_trace);
        let _ = writeln!(s, "\n[study]");
        let toks: Vec<String> = self.study_l_values.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "l_values = {}", toks.join(" "));
        let _ = writeln!(s, "gh_order = {}", self.gh_order);
        let _ = writeln!(s, "ref_gh_level = {}", self.ref_gh_level);
        let _ = writeln!(s, "\n[timing]");
        let _ = writeln!(
            s,
            "target = {}",
            match self.timing_target {
                TimingTarget::Mlmcmc => "mlmcmc",
                TimingTarget::Forward => "forward",
            }
        );
        let toks: Vec<String> = self.timing_l_values.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "l_values = {}", toks.join(" "));
        let toks: Vec<String> = self.forward_levels.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "forward_levels = {}", toks.join(" "));
        let _ = writeln!(s, "repeats = {}", self.timing_repeats);
        let _ = writeln!(s, "\n[forward]");
        let _ = writeln!(s, "level = {}", self.forward_level);
        let _ = writeln!(s, "source = {} {}", self.forward_source[0], self.forward_source[1]);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.out_dir);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "memory_budget_mb = {}", self.memory_budget_mb);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[domain]
lower = -1 -1
upper = 1 1

[basis]
kappa = 4
max_terms = 1
map_scale = 2 2

[reference]
coefficients = 0.35

[qoi]
point = 0.5 0.5
qoi_source = 0 0
";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::parse_str(MINIMAL).unwrap();
        assert_eq!(cfg.l0, 2);
        assert_eq!(cfg.points, PointsSpec::Midedge8);
        assert_eq!(cfg.sampler, SamplerSpec::Independence);
        assert_eq!(cfg.noise_sigma, 0.1);
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = ExperimentConfig::parse_str(MINIMAL).unwrap();
        let text = cfg.to_ini();
        let back = ExperimentConfig::parse_str(&text).unwrap();
        assert_eq!(cfg, back);
        // And fixed point: serializing again is byte-identical.
        assert_eq!(text, back.to_ini());
    }

    #[test]
    fn binary_reference_round_trips() {
        let text = "
[domain]
lower = 0 0
upper = 1 1
[reference]
kind = binary
background = 1
inclusion = 0.4 0.6 0.2 1.5
inclusion = 0.7 0.3 0.1 2
[observation]
points = ring:0.125
sources = spread-5
[inversion]
sampler = pcn
beta = 0.25
";
        let cfg = ExperimentConfig::parse_str(text).unwrap();
        let back = ExperimentConfig::parse_str(&cfg.to_ini()).unwrap();
        assert_eq!(cfg, back);
        match &cfg.reference {
            ReferenceSpec::Binary { inclusions, .. } => assert_eq!(inclusions.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_errors_name_the_key() {
        let bad = MINIMAL.replace("kappa = 4", "kappa = four");
        let err = ExperimentConfig::parse_str(&bad).unwrap_err();
        assert!(err.to_string().contains("basis.kappa"), "{err}");

        let bad = MINIMAL.to_string() + "\n[inversion]\na = 7\n";
        let err = ExperimentConfig::parse_str(&bad).unwrap_err();
        assert!(err.to_string().contains("inversion.a"), "{err}");
    }

    #[test]
    fn missing_required_key_is_reported() {
        let err = ExperimentConfig::parse_str("[domain]\nlower = 0 0\n").unwrap_err();
        assert!(err.to_string().contains("domain.upper"), "{err}");
    }
}
