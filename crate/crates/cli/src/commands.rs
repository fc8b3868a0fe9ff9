//! The experiment subcommands. Every command writes its outputs plus the
//! effective configuration into a run directory and is deterministic given
//! the configuration and master seed (timing columns excepted).

use crate::config::{QoiSpec, TimingTarget};
use crate::experiment::Experiment;
use eikmc_core::bayes::{
    mismatch_of_forward, sample_reference_slowness, write_observation_csv, LevelSpec,
};
use eikmc_core::field::ParamVector;
use eikmc_core::fmm::{fmm_solve, max_interior_residual, write_matrix, write_matrix_raw};
use eikmc_core::grid::build_grid_with_budget;
use eikmc_core::interp::interpolate_field;
use eikmc_core::mcmc::{run_chain, ChainConfig, ChainInit, ChainRng};
use eikmc_core::mlmcmc::{gh_adapted_reference, mlmcmc_estimate, Qoi, WorkCounter};
use eikmc_core::oracle::QuadratureRule;
use eikmc_core::{Error, Result};
use rayon::prelude::*;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct Ctx {
    pub exp: Experiment,
    pub out_dir: PathBuf,
    pub config_dir: PathBuf,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_effective_config(&self) -> Result<()> {
        std::fs::write(self.out("effective.ini"), self.exp.cfg.to_ini())?;
        Ok(())
    }

    fn writer(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out(name))?))
    }
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// One forward solve of the reference slowness, dumped as a matrix.
pub fn cmd_forward(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.exp.cfg;
    let grid = build_grid_with_budget(ctx.exp.domain, cfg.forward_level, cfg.memory_budget_mb)?;
    let slowness = sample_reference_slowness(&ctx.exp.reference, &grid);
    let src = grid.snap_point(cfg.forward_source)?;
    let field = fmm_solve(&grid, &slowness, src)?;
    let residual = max_interior_residual(&field, &slowness);
    let name = format!("forward_L{}.txt", cfg.forward_level);
    let mut w = ctx.writer(&name)?;
    write_matrix(&mut w, &field)?;
    w.flush()?;
    ctx.write_effective_config()?;
    println!(
        "forward: level {} ({} nodes), residual {:.3e}, wrote {}",
        cfg.forward_level,
        grid.node_count(),
        residual,
        ctx.out(&name).display()
    );
    Ok(())
}

/// Synthesizes observations and writes the noisy file plus its noiseless twin.
pub fn cmd_generate_data(ctx: &Ctx) -> Result<()> {
    let obs = {
        // Always synthesize here, even when [observation].file points at an
        // existing dataset: this command is the producer.
        let mut exp = ctx.exp.cfg.clone();
        exp.observation_file = None;
        let e = Experiment::build(exp)?;
        e.observations(&ctx.config_dir)?
    };
    let mut w = ctx.writer("obs.csv")?;
    write_observation_csv(&mut w, &obs, &obs.data)?;
    w.flush()?;
    let noiseless = obs.noiseless.as_ref().expect("generator keeps the twin");
    let mut w = ctx.writer("obs_noiseless.csv")?;
    write_observation_csv(&mut w, &obs, noiseless)?;
    w.flush()?;
    ctx.write_effective_config()?;
    println!(
        "generate-data: {} rows ({} points x {} sources) at ref level {}",
        obs.dim(),
        obs.points.len(),
        obs.sources.len(),
        ctx.exp.cfg.ref_level
    );
    Ok(())
}

/// A single-level Metropolis-Hastings chain with summary statistics.
pub fn cmd_mcmc(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.exp.cfg;
    let obs = ctx.exp.observations(&ctx.config_dir)?;
    let problem = ctx.exp.problem(obs);
    let q = cfg.p - 1.0;
    let ml = ctx.exp.ml_config(cfg.l_max);
    let level = cfg.mcmc_level;
    let spec = LevelSpec {
        level,
        j_terms: ml.j_schedule.terms(level, q),
        grid: build_grid_with_budget(ctx.exp.domain, level, cfg.memory_budget_mb)?,
    };
    problem.obs.check_on_grid(&spec.grid)?;
    let qoi = ctx.exp.qoi();
    let counter = WorkCounter::default();

    let dim = spec.j_terms.max(1);
    let potential = |u: &ParamVector| -> Result<f64> {
        let (g, stats) =
            eikmc_core::bayes::forward_map(u, &spec, &problem.obs, &problem.template)?;
        counter.add(stats);
        mismatch_of_forward(&g, &problem.obs)
    };
    let integrand = |u: &ParamVector, _phi: f64| -> Result<Vec<f64>> {
        Ok(u.as_slice().to_vec())
    };
    let chain_cfg = ChainConfig {
        sampler: ctx.exp.sampler(),
        burn_in: cfg.mcmc_burn_in,
        length: cfg.mcmc_length,
        init: ChainInit::PriorDraw,
    };
    let mut rngs = ChainRng::derive(cfg.seed, &[u64::from(level), 0, 0, 10]);
    let t0 = Instant::now();
    let out = run_chain(&chain_cfg, dim, &potential, &integrand, &mut rngs)?;
    let secs = t0.elapsed().as_secs_f64();

    let mut w = ctx.writer("mcmc_summary.csv")?;
    writeln!(w, "component,mean,batch_se")?;
    for c in 0..out.integrand_mean.len() {
        let vals: Vec<f64> = out.states.iter().map(|s| s.u.as_slice()[c]).collect();
        let se = out.batch_se(&vals, 50.min(out.states.len().max(2)));
        writeln!(w, "u{},{},{}", c + 1, out.integrand_mean[c], se)?;
    }
    w.flush()?;

    if cfg.mcmc_trace {
        let mut w = ctx.writer("mcmc_trace.csv")?;
        writeln!(w, "iteration,accepted,potential,value")?;
        let mut iter = 0usize;
        for (si, s) in out.states.iter().enumerate() {
            for k in 0..s.weight {
                let accepted = k == 0 && (si > 0 || out.first_retained_accepted);
                writeln!(
                    w,
                    "{},{},{},{}",
                    iter,
                    u8::from(accepted),
                    s.phi,
                    s.u.as_slice()[0]
                )?;
                iter += 1;
            }
        }
        w.flush()?;
    }
    ctx.write_effective_config()?;
    let _ = qoi;
    println!(
        "mcmc: level {level}, {} samples, acceptance {:.3}, mean u1 {:.6}, {:.1} s, {} node updates",
        cfg.mcmc_length,
        out.acceptance_rate,
        out.integrand_mean[0],
        secs,
        counter.total().finalized
    );
    Ok(())
}

fn is_one_parameter(ctx: &Ctx) -> bool {
    ctx.exp.cfg.max_terms == 1
}

/// Gauss-Hermite reference expectation of the configured QoI at the
/// reference level (one-parameter problems, scalar quantities).
fn oracle_reference(
    ctx: &Ctx,
    problem: &eikmc_core::mlmcmc::InverseProblem,
    qoi: &Qoi,
) -> Result<f64> {
    let cfg = &ctx.exp.cfg;
    let rule = QuadratureRule::gauss_hermite(cfg.gh_order);
    let spec = LevelSpec {
        level: cfg.ref_gh_level,
        j_terms: 1,
        grid: build_grid_with_budget(ctx.exp.domain, cfg.ref_gh_level, cfg.memory_budget_mb)?,
    };
    gh_adapted_reference(problem, &spec, qoi, &rule)
}

/// Full multilevel runs over the configured replicates.
pub fn cmd_mlmcmc(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.exp.cfg;
    let obs = ctx.exp.observations(&ctx.config_dir)?;
    let problem = ctx.exp.problem(obs);
    let qoi = ctx.exp.qoi();
    let ml = ctx.exp.ml_config(cfg.l_max);

    let reference = if is_one_parameter(ctx) && matches!(qoi, Qoi::SolutionAt { .. }) {
        Some(oracle_reference(ctx, &problem, &qoi)?)
    } else {
        None
    };

    let results: Vec<Result<(Vec<f64>, f64, u64)>> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let t0 = Instant::now();
            let out = mlmcmc_estimate(&problem, &ml, &qoi, r)?;
            Ok((out.value, t0.elapsed().as_secs_f64(), out.work.finalized))
        })
        .collect();

    let mut w = ctx.writer("mlmcmc_results.csv")?;
    writeln!(w, "replicate,L,estimate,abs_error,wall_seconds,node_updates")?;
    let mut values: Vec<Vec<f64>> = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        let (value, secs, updates) = res?;
        let scalar = value.iter().sum::<f64>() / value.len() as f64;
        let err = reference.map(|rf| (scalar - rf).abs());
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r,
            cfg.l_max,
            scalar,
            err.map(|e| e.to_string()).unwrap_or_else(|| "na".into()),
            secs,
            updates
        )?;
        values.push(value);
    }
    w.flush()?;

    // Grid quantities additionally get per-replicate matrices and the mean.
    if matches!(qoi, Qoi::SolutionGrid { .. } | Qoi::SlownessGrid { .. }) {
        let m = cfg.grid_m;
        for (r, v) in values.iter().enumerate() {
            let mut w = ctx.writer(&format!("mlmcmc_grid_rep{r}.txt"))?;
            write_matrix_raw(&mut w, v, m)?;
            w.flush()?;
        }
        let mean = mean_of(&values);
        let mut w = ctx.writer("mlmcmc_grid_mean.txt")?;
        write_matrix_raw(&mut w, &mean, m)?;
        w.flush()?;
    }
    ctx.write_effective_config()?;
    println!(
        "mlmcmc: L = {}, {} replicate(s) done",
        cfg.l_max, cfg.replicates
    );
    Ok(())
}

fn mean_of(values: &[Vec<f64>]) -> Vec<f64> {
    let mut mean = vec![0.0; values[0].len()];
    for v in values {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= values.len() as f64);
    mean
}

/// Replicated estimates against the quadrature reference over a range of
/// finest levels, with the best-fit error decay rate.
pub fn cmd_convergence_study(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.exp.cfg;
    if !is_one_parameter(ctx) {
        return Err(Error::InvalidConfig(
            "convergence-study needs the one-parameter problem (basis.max_terms = 1) for its quadrature reference".into(),
        ));
    }
    let obs = ctx.exp.observations(&ctx.config_dir)?;
    let problem = ctx.exp.problem(obs);
    let qoi = ctx.exp.qoi();
    let reference = oracle_reference(ctx, &problem, &qoi)?;

    let mut rows = Vec::new();
    for &l_max in &cfg.study_l_values {
        let ml = ctx.exp.ml_config(l_max);
        let errs: Vec<Result<f64>> = (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|r| {
                let out = mlmcmc_estimate(&problem, &ml, &qoi, r)?;
                Ok((out.value[0] - reference).abs())
            })
            .collect();
        let errs: Result<Vec<f64>> = errs.into_iter().collect();
        let errs = errs?;
        let mean_err = errs.iter().sum::<f64>() / errs.len() as f64;
        rows.push((l_max, mean_err));
        println!("convergence-study: L = {l_max}, mean |error| = {mean_err:.6e}");
    }

    let xs: Vec<f64> = rows.iter().map(|(l, _)| f64::from(*l)).collect();
    let ys: Vec<f64> = rows.iter().map(|(_, e)| e.log2()).collect();
    let decay = least_squares_slope(&xs, &ys).map(|s| -s);

    let mut w = ctx.writer("convergence_study.csv")?;
    writeln!(w, "L,mean_abs_error,log2_error")?;
    for ((l, e), y) in rows.iter().zip(&ys) {
        writeln!(w, "{l},{e},{y}")?;
    }
    w.flush()?;
    ctx.write_effective_config()?;
    match decay {
        Some(s) => println!("convergence-study: best-fit decay rate {s:.3} (reference {reference:.6})"),
        None => println!("convergence-study: best-fit decay rate n/a (need at least two L values)"),
    }
    Ok(())
}

/// Posterior-mean field recovery on the configured grid QoI.
pub fn cmd_recover(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.exp.cfg;
    if !matches!(cfg.qoi, QoiSpec::SolutionGrid | QoiSpec::SlownessGrid) {
        return Err(Error::InvalidConfig(
            "recover needs qoi.kind = solution-grid or slowness-grid".into(),
        ));
    }
    let obs = ctx.exp.observations(&ctx.config_dir)?;
    let problem = ctx.exp.problem(obs);
    let qoi = ctx.exp.qoi();
    let ml = ctx.exp.ml_config(cfg.l_max);
    let m = cfg.grid_m;

    let results: Vec<Result<Vec<f64>>> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| Ok(mlmcmc_estimate(&problem, &ml, &qoi, r)?.value))
        .collect();
    let results: Result<Vec<Vec<f64>>> = results.into_iter().collect();
    let results = results?;
    for (r, v) in results.iter().enumerate() {
        let mut w = ctx.writer(&format!("recover_rep{r}.txt"))?;
        write_matrix_raw(&mut w, v, m)?;
        w.flush()?;
    }
    let mean = mean_of(&results);
    let mut w = ctx.writer("recover_mean.txt")?;
    write_matrix_raw(&mut w, &mean, m)?;
    w.flush()?;

    // Bicubic extension of the mean for plotting.
    if m >= 4 {
        let interp = interpolate_field(grid_qoi_domain(ctx), m, mean.clone())?;
        let probe = 64usize;
        let mut vals = Vec::with_capacity(probe * probe);
        let d = grid_qoi_domain(ctx);
        for j in 0..probe {
            for i in 0..probe {
                let x = d.lower[0] + d.width() * i as f64 / (probe - 1) as f64;
                let y = d.lower[1] + d.height() * j as f64 / (probe - 1) as f64;
                vals.push(interp.eval([x, y])?);
            }
        }
        let mut w = ctx.writer("recover_mean_interp64.txt")?;
        write_matrix_raw(&mut w, &vals, probe)?;
        w.flush()?;
    }

    // The matching reference field sampled at the QoI points.
    let ref_vals: Vec<f64> = match (&cfg.qoi, &qoi) {
        (QoiSpec::SlownessGrid, Qoi::SlownessGrid { points }) => points
            .iter()
            .map(|p| ctx.exp.reference.eval(*p))
            .collect(),
        (QoiSpec::SolutionGrid, Qoi::SolutionGrid { points, source }) => {
            let grid =
                build_grid_with_budget(ctx.exp.domain, cfg.ref_level, cfg.memory_budget_mb)?;
            let slowness = sample_reference_slowness(&ctx.exp.reference, &grid);
            let src = grid.snap_point(*source)?;
            let field = fmm_solve(&grid, &slowness, src)?;
            points
                .iter()
                .map(|p| Ok(field.values[grid.node_at(*p)?]))
                .collect::<Result<Vec<f64>>>()?
        }
        _ => unreachable!(),
    };
    let mut w = ctx.writer("recover_reference.txt")?;
    write_matrix_raw(&mut w, &ref_vals, m)?;
    w.flush()?;
    let max_err = mean
        .iter()
        .zip(&ref_vals)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    ctx.write_effective_config()?;
    println!(
        "recover: {} replicates, grid {m}x{m}, max |mean - reference| = {max_err:.6}",
        cfg.replicates
    );
    Ok(())
}

fn grid_qoi_domain(ctx: &Ctx) -> eikmc_core::Domain {
    // The uniform QoI lattice spans (i/m, j/m) for i, j = 1..=m.
    let d = ctx.exp.domain;
    let m = ctx.exp.cfg.grid_m as f64;
    eikmc_core::Domain {
        lower: [
            d.lower[0] + d.width() / m,
            d.lower[1] + d.height() / m,
        ],
        upper: d.upper,
    }
}

/// Wall-time tables for forward solves or full multilevel runs.
pub fn cmd_timing(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.exp.cfg;
    match cfg.timing_target {
        TimingTarget::Forward => {
            let mut w = ctx.writer("timing_forward.csv")?;
            writeln!(w, "level,nodes,seconds,ratio_vs_prev")?;
            let mut prev: Option<f64> = None;
            for &level in &cfg.forward_levels {
                let grid = build_grid_with_budget(ctx.exp.domain, level, cfg.memory_budget_mb)?;
                let slowness = sample_reference_slowness(&ctx.exp.reference, &grid);
                let src = grid.snap_point(cfg.forward_source)?;
                let mut best = f64::INFINITY;
                for _ in 0..cfg.timing_repeats {
                    let t0 = Instant::now();
                    let f = fmm_solve(&grid, &slowness, src)?;
                    std::hint::black_box(&f.values[0]);
                    best = best.min(t0.elapsed().as_secs_f64());
                }
                let ratio = prev.map(|p| best / p);
                writeln!(
                    w,
                    "{},{},{},{}",
                    level,
                    grid.node_count(),
                    best,
                    ratio.map(|r| r.to_string()).unwrap_or_else(|| "na".into())
                )?;
                println!(
                    "timing forward: level {level} {:.4} s{}",
                    best,
                    ratio
                        .map(|r| format!(" (x{r:.2} vs previous)"))
                        .unwrap_or_default()
                );
                prev = Some(best);
            }
            w.flush()?;
        }
        TimingTarget::Mlmcmc => {
            let obs = ctx.exp.observations(&ctx.config_dir)?;
            let problem = ctx.exp.problem(obs);
            let qoi = ctx.exp.qoi();
            let mut w = ctx.writer("timing_mlmcmc.csv")?;
            writeln!(w, "L,seconds,node_updates,time_ratio,update_ratio")?;
            let mut prev: Option<(f64, u64)> = None;
            for &l_max in &cfg.timing_l_values {
                let ml = ctx.exp.ml_config(l_max);
                let t0 = Instant::now();
                let out = mlmcmc_estimate(&problem, &ml, &qoi, 0)?;
                let secs = t0.elapsed().as_secs_f64();
                let updates = out.work.finalized;
                let (tr, ur) = prev
                    .map(|(pt, pu)| (secs / pt, updates as f64 / pu as f64))
                    .map_or(("na".into(), "na".into()), |(a, b): (f64, f64)| {
                        (a.to_string(), b.to_string())
                    });
                writeln!(w, "{l_max},{secs},{updates},{tr},{ur}")?;
                println!("timing mlmcmc: L = {l_max}, {secs:.2} s, {updates} node updates");
                prev = Some((secs, updates));
            }
            w.flush()?;
        }
    }
    ctx.write_effective_config()?;
    Ok(())
}

/// Maps configuration-shaped failures to exit code 2, runtime failures to 1.
pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::MemoryBudget { .. }
        | Error::EmptyDomain
        | Error::UnalignedRectangle { .. }
        | Error::BadLevelRange { .. }
        | Error::UnsupportedExponent(_)
        | Error::ObservationShape { .. }
        | Error::ObservationOffGrid(..)
        | Error::InterpTooCoarse(_)
        | Error::PointOutsideDomain(..) => 2,
        _ => 1,
    }
}

/// Entry point shared by main and the integration tests.
pub fn run_command(name: &str, ctx: &Ctx) -> Result<()> {
    std::fs::create_dir_all(&ctx.out_dir)?;
    match name {
        "forward" => cmd_forward(ctx),
        "generate-data" => cmd_generate_data(ctx),
        "mcmc" => cmd_mcmc(ctx),
        "mlmcmc" => cmd_mlmcmc(ctx),
        "convergence-study" => cmd_convergence_study(ctx),
        "recover" => cmd_recover(ctx),
        "timing" => cmd_timing(ctx),
        other => Err(Error::InvalidConfig(format!("unknown command {other}"))),
    }
}

/// Resolve the output directory: flag beats environment beats config.
pub fn resolve_out_dir(flag: Option<&Path>, cfg_dir: &str) -> PathBuf {
    if let Some(f) = flag {
        return f.to_path_buf();
    }
    if let Ok(env) = std::env::var("EIKMC_OUT_DIR") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from(cfg_dir)
}
