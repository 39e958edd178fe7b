//! Experiment suites: rate study, importance sampling comparison, adaptive
//! sweeps and the single-level baseline.

use anyhow::Context;
use log::info;
use mldlmc_core::control::ControlSettings;
use mldlmc_core::estimators::Problem;
use mldlmc_core::rates::fit_loglog;
use mldlmc_core::{
    fit_rate, level_difference, offline_control, run_adaptive, run_single_level, ControlField,
    Error, Executor, LevelStats, MlmcReport, RateFit, Sampler, StreamKey,
};
use serde::Serialize;

use crate::config::{ControlSource, RunConfig};

// Stream tags, one per experiment.
const RATES_VARIANCE: u64 = 0x7261_7465_0001;
const RATES_BIAS: u64 = 0x7261_7465_0002;
const IS_INNER: u64 = 0x6973_0001;
const IS_OUTER: u64 = 0x6973_0002;
const SWEEP: u64 = 0x7377_6565_7001;

#[derive(Clone, Debug, Serialize)]
pub struct RateRow {
    pub sampler: &'static str,
    pub level: usize,
    pub abs_mean: f64,
    pub mean_std_error: f64,
    pub v1: f64,
    pub v2: f64,
    pub variance_m1: usize,
    pub variance_m2: usize,
    pub bias_m1: usize,
    pub bias_m2: usize,
}

#[derive(Clone, Debug)]
pub struct SamplerRates {
    pub sampler: Sampler,
    pub alpha: RateFit,
    pub w: RateFit,
    pub s: RateFit,
}

#[derive(Clone, Debug)]
pub struct RateStudy {
    pub rows: Vec<RateRow>,
    pub fits: Vec<SamplerRates>,
}

/// `|E ΔG_ℓ|`, `V1` and `V2` over the configured levels for each sampler,
/// with `log_τ` slope fits.
pub fn rate_study(
    cfg: &RunConfig,
    problem: &Problem,
    exec: &Executor,
) -> anyhow::Result<RateStudy> {
    let rc = &cfg.experiments.rates;
    let tau = problem.hierarchy.tau;
    let root = StreamKey::root(cfg.seed);
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &sampler in &rc.samplers {
        let (mut levels, mut means, mut v1s, mut v2s) = (vec![], vec![], vec![], vec![]);
        for level in rc.levels.0.max(1)..=rc.levels.1 {
            let tag = sampler as u64;
            let (m1, m2) = rc.variance_samples;
            let var = level_difference(
                problem,
                sampler,
                level,
                m1,
                m2,
                root.child(RATES_VARIANCE).child(tag).child(level as u64),
                exec,
            )?;
            let (b1, b2) = rc.bias_samples;
            let bias = level_difference(
                problem,
                sampler,
                level,
                b1,
                b2,
                root.child(RATES_BIAS).child(tag).child(level as u64),
                exec,
            )?;
            info!(
                "{} level {level}: |mean| {:.3e} V1 {:.3e} V2 {:.3e}",
                sampler.name(),
                bias.mean.abs(),
                var.v1,
                var.v2
            );
            levels.push(level);
            means.push(bias.mean.abs());
            v1s.push(var.v1);
            v2s.push(var.v2);
            rows.push(RateRow {
                sampler: sampler.name(),
                level,
                abs_mean: bias.mean.abs(),
                mean_std_error: bias.std_error(),
                v1: var.v1,
                v2: var.v2,
                variance_m1: m1,
                variance_m2: m2,
                bias_m1: b1,
                bias_m2: b2,
            });
        }
        fits.push(SamplerRates {
            sampler,
            alpha: fit_rate(&levels, &means, tau)?,
            w: fit_rate(&levels, &v1s, tau)?,
            s: fit_rate(&levels, &v2s, tau)?,
        });
    }
    Ok(RateStudy { rows, fits })
}

#[derive(Clone, Debug, Serialize)]
pub struct ImportanceRow {
    pub experiment: u8,
    pub arm: &'static str,
    pub level: usize,
    pub m1: usize,
    pub m2: usize,
    pub mean: f64,
    pub v1: f64,
    pub v2: f64,
    pub estimator_variance: f64,
    /// Estimator variance over the squared pooled mean of both arms.
    pub squared_cov: f64,
    pub max_control: f64,
}

#[derive(Clone, Debug)]
pub struct ImportanceReport {
    pub rows: Vec<ImportanceRow>,
    /// No-IS over IS squared coefficient of variation at the largest inner count.
    pub inner_ratio: f64,
    /// The same at the largest `M2` of the outer experiment.
    pub outer_ratio: f64,
}

/// The configured control, with offline controls solved from a law of
/// `particles` particles.
fn control_for(cfg: &RunConfig, particles: usize, steps: usize) -> anyhow::Result<ControlField> {
    if cfg.control.source != ControlSource::Offline {
        return cfg.control_field();
    }
    let settings = ControlSettings {
        particles,
        steps,
        ..cfg.control.settings()
    };
    let off = offline_control(
        &cfg.model()?,
        &cfg.observable.build(),
        &settings,
        cfg.model.horizon,
        cfg.control_seed(),
    )?;
    info!(
        "control from P={particles} N={steps}: window [{:.2}, {:.2}], refinement discrepancy {:.2e}",
        off.grid.x_min, off.grid.x_max, off.refinement_discrepancy
    );
    Ok(off.field)
}

fn pooled_mean(a: &LevelStats, b: &LevelStats) -> f64 {
    let (wa, wb) = (1.0 / a.estimator_variance(), 1.0 / b.estimator_variance());
    if wa.is_finite() && wb.is_finite() {
        (wa * a.mean + wb * b.mean) / (wa + wb)
    } else {
        0.5 * (a.mean + b.mean)
    }
}

fn arm_rows(
    experiment: u8,
    plain: &LevelStats,
    tilted: &LevelStats,
    rows: &mut Vec<ImportanceRow>,
) -> f64 {
    let mean = pooled_mean(plain, tilted);
    for (arm, s) in [("plain", plain), ("is", tilted)] {
        rows.push(ImportanceRow {
            experiment,
            arm,
            level: s.level,
            m1: s.m1,
            m2: s.m2,
            mean: s.mean,
            v1: s.v1,
            v2: s.v2,
            estimator_variance: s.estimator_variance(),
            squared_cov: s.estimator_variance() / (mean * mean),
            max_control: s.max_control,
        });
    }
    plain.estimator_variance() / tilted.estimator_variance()
}

/// Level-difference estimators with and without the control. Experiment 1
/// fixes one law and sweeps the inner count; experiment 2 uses many laws and
/// sweeps `M2`. Both arms of a comparison share their random streams.
pub fn importance_experiments(
    cfg: &RunConfig,
    problem: &Problem,
    exec: &Executor,
) -> anyhow::Result<ImportanceReport> {
    let ic = &cfg.experiments.importance;
    let root = StreamKey::root(cfg.seed);
    let plain = problem.with_control(ControlField::zero());
    let mut rows = Vec::new();

    let tilted = problem.with_control(control_for(
        cfg,
        ic.inner_control_particles,
        ic.control_steps,
    )?);
    let mut inner_ratio = f64::NAN;
    for &m in &ic.inner_sweep {
        let key = root.child(IS_INNER);
        let a = level_difference(&plain, cfg.sampler, ic.level, 1, m, key, exec)?;
        let b = level_difference(&tilted, cfg.sampler, ic.level, 1, m, key, exec)?;
        inner_ratio = arm_rows(1, &a, &b, &mut rows);
        info!("experiment 1, M = {m}: ratio {inner_ratio:.3}");
    }

    let tilted = problem.with_control(control_for(
        cfg,
        ic.outer_control_particles,
        ic.control_steps,
    )?);
    let mut outer_ratio = f64::NAN;
    for &m2 in &ic.outer_sweep {
        let key = root.child(IS_OUTER).child(m2 as u64);
        let a = level_difference(
            &plain,
            cfg.sampler,
            ic.level,
            ic.outer_samples,
            m2,
            key,
            exec,
        )?;
        let b = level_difference(
            &tilted,
            cfg.sampler,
            ic.level,
            ic.outer_samples,
            m2,
            key,
            exec,
        )?;
        outer_ratio = arm_rows(2, &a, &b, &mut rows);
        info!("experiment 2, M2 = {m2}: ratio {outer_ratio:.3}");
    }
    Ok(ImportanceReport {
        rows,
        inner_ratio,
        outer_ratio,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Multilevel,
    SingleLevel,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Multilevel => "mlmc",
            Estimator::SingleLevel => "single",
        }
    }
}

/// Run one adaptive estimate. A run that exhausts the level cap returns its
/// partial report with `converged == false`.
pub fn estimate(
    cfg: &RunConfig,
    problem: &Problem,
    estimator: Estimator,
    tolerance: f64,
    seed: u64,
    exec: &Executor,
) -> anyhow::Result<MlmcReport> {
    let ac = cfg.adaptive(cfg.budget.with_tolerance(tolerance)?);
    let out = match estimator {
        Estimator::Multilevel => run_adaptive(problem, &ac, seed, exec),
        Estimator::SingleLevel => run_single_level(problem, &ac, seed, exec),
    };
    match out {
        Ok(r) => Ok(r),
        Err(Error::NotConverged { partial, .. }) => Ok(*partial),
        Err(e) => Err(e).context("adaptive estimator failed"),
    }
}

#[derive(Clone, Debug)]
pub struct Reference {
    pub value: f64,
    pub runs: [MlmcReport; 2],
    /// `|a - b|` in pooled standard errors.
    pub z: f64,
}

impl Reference {
    pub fn consistent(&self, max_z: f64) -> bool {
        self.z <= max_z
    }
}

/// Two multilevel runs at the reference tolerance on disjoint seeds, averaged.
pub fn reference(cfg: &RunConfig, problem: &Problem, exec: &Executor) -> anyhow::Result<Reference> {
    let sc = &cfg.experiments.sweep;
    let (sa, sb) = sc.reference_seeds;
    let a = estimate(
        cfg,
        problem,
        Estimator::Multilevel,
        sc.reference_tolerance,
        sa,
        exec,
    )?;
    let b = estimate(
        cfg,
        problem,
        Estimator::Multilevel,
        sc.reference_tolerance,
        sb,
        exec,
    )?;
    let pooled = (a.sample_variance + b.sample_variance).sqrt();
    let z = (a.estimate - b.estimate).abs() / pooled;
    info!(
        "reference: {:.6e} and {:.6e} ({z:.2} pooled SE)",
        a.estimate, b.estimate
    );
    Ok(Reference {
        value: 0.5 * (a.estimate + b.estimate),
        runs: [a, b],
        z,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub estimator: &'static str,
    pub tolerance: f64,
    pub run: usize,
    pub seed: u64,
    pub estimate: f64,
    pub reference: f64,
    /// `|estimate - reference| / |reference|`.
    pub relative_error: f64,
    pub absolute_error: f64,
    pub max_level: usize,
    pub cost: f64,
    pub total_cost: f64,
    pub wall_time: f64,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct ToleranceSummary {
    pub tolerance: f64,
    pub runs: usize,
    pub mean_cost: f64,
    /// Share of runs whose error is within the tolerance (relative or
    /// absolute, following the budget mode).
    pub within: f64,
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<ToleranceSummary>,
    /// Log-log fit of mean final-estimator cost against tolerance.
    pub cost_fit: Option<RateFit>,
}

pub fn run_seed(base: u64, tol_index: usize, run: usize) -> u64 {
    StreamKey::root(base)
        .child(SWEEP)
        .child(tol_index as u64)
        .child(run as u64)
        .raw()
}

/// Repeated adaptive runs at each tolerance against a fixed reference value.
pub fn sweep(
    cfg: &RunConfig,
    problem: &Problem,
    estimator: Estimator,
    reference: f64,
    exec: &Executor,
) -> anyhow::Result<Sweep> {
    let sc = &cfg.experiments.sweep;
    let relative = cfg.budget.mode == mldlmc_core::ToleranceMode::Relative;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (ti, &tol) in sc.tolerances.iter().enumerate() {
        let mut costs = 0.0;
        let mut hits = 0;
        for run in 0..sc.repeats {
            let seed = run_seed(cfg.seed, ti, run);
            let r = estimate(cfg, problem, estimator, tol, seed, exec)?;
            let abs_err = (r.estimate - reference).abs();
            let rel_err = abs_err / reference.abs();
            let err = if relative { rel_err } else { abs_err };
            hits += usize::from(err <= tol);
            costs += r.cost;
            rows.push(SweepRow {
                estimator: estimator.name(),
                tolerance: tol,
                run,
                seed,
                estimate: r.estimate,
                reference,
                relative_error: rel_err,
                absolute_error: abs_err,
                max_level: r.max_level,
                cost: r.cost,
                total_cost: r.total_cost,
                wall_time: r.wall_time,
                converged: r.converged,
            });
        }
        let s = ToleranceSummary {
            tolerance: tol,
            runs: sc.repeats,
            mean_cost: costs / sc.repeats as f64,
            within: hits as f64 / sc.repeats as f64,
        };
        info!(
            "{} tol {tol:.3e}: mean cost {:.3e}, {:.0}% within tolerance",
            estimator.name(),
            s.mean_cost,
            100.0 * s.within
        );
        summary.push(s);
    }
    let cost_fit = if summary.len() >= 2 {
        let x: Vec<f64> = summary.iter().map(|s| s.tolerance).collect();
        let y: Vec<f64> = summary.iter().map(|s| s.mean_cost).collect();
        Some(fit_loglog(&x, &y)?)
    } else {
        None
    };
    Ok(Sweep {
        rows,
        summary,
        cost_fit,
    })
}
