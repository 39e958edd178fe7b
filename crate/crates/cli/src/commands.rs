//! One function per subcommand. Each reads the effective configuration,
//! writes its CSV into `cfg.out` and prints a short summary.

use std::path::PathBuf;

use anyhow::Context;
use mldlmc_core::control::ControlSettings;
use mldlmc_core::{offline_control, LevelStats};
use serde::Serialize;

use crate::config::RunConfig;
use crate::experiments::{self, Estimator};
use crate::output::{self, IMPORTANCE_CSV, RATES_CSV, REPORT_CSV, SWEEP_CSV};

pub const CONTROL_FILE: &str = "control.bin";

/// Solve the offline control and save it. Returns the file written.
pub fn solve_control(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let settings: ControlSettings = cfg.control.settings();
    let off = offline_control(
        &cfg.model()?,
        &cfg.observable.build(),
        &settings,
        cfg.model.horizon,
        cfg.control_seed(),
    )?;
    let path = cfg
        .control
        .path
        .clone()
        .unwrap_or_else(|| cfg.out.join(CONTROL_FILE));
    if let Some(dir) = path.parent() {
        output::prepare_dir(dir)?;
    }
    if off.field.is_zero() {
        println!("observable gives a flat value function; control is identically zero");
    }
    off.field
        .save(&path)
        .with_context(|| format!("saving {}", path.display()))?;
    println!(
        "control: grid [{:.3}, {:.3}] with {} intervals, {} widenings, refinement discrepancy {:.2e}",
        off.grid.x_min, off.grid.x_max, off.grid.intervals, off.widenings, off.refinement_discrepancy
    );
    println!("wrote {}", path.display());
    Ok(path)
}

pub fn rates(cfg: &RunConfig) -> anyhow::Result<experiments::RateStudy> {
    let exec = cfg.executor()?;
    let problem = cfg.problem(cfg.control_field()?)?;
    let study = experiments::rate_study(cfg, &problem, &exec)?;
    output::write_csv(&cfg.out.join(RATES_CSV), &study.rows)?;
    for f in &study.fits {
        println!(
            "{:<10} alpha {:.3}  w {:.3}  s {:.3}",
            f.sampler.name(),
            f.alpha.rate(),
            f.w.rate(),
            f.s.rate()
        );
    }
    Ok(study)
}

pub fn is_experiments(cfg: &RunConfig) -> anyhow::Result<experiments::ImportanceReport> {
    let exec = cfg.executor()?;
    let problem = cfg.problem(mldlmc_core::ControlField::zero())?;
    let rep = experiments::importance_experiments(cfg, &problem, &exec)?;
    output::write_csv(&cfg.out.join(IMPORTANCE_CSV), &rep.rows)?;
    println!(
        "experiment 1 squared CoV ratio (no IS / IS): {:.3}",
        rep.inner_ratio
    );
    println!(
        "experiment 2 squared CoV ratio (no IS / IS): {:.3}",
        rep.outer_ratio
    );
    Ok(rep)
}

#[derive(Serialize)]
struct ReportRow {
    level: usize,
    m1: usize,
    m2: usize,
    mean: f64,
    v1: f64,
    v2: f64,
    cost: f64,
    wall_time: f64,
}

impl From<&LevelStats> for ReportRow {
    fn from(s: &LevelStats) -> Self {
        ReportRow {
            level: s.level,
            m1: s.m1,
            m2: s.m2,
            mean: s.mean,
            v1: s.v1,
            v2: s.v2,
            cost: s.cost,
            wall_time: s.wall_time,
        }
    }
}

pub fn adaptive(cfg: &RunConfig) -> anyhow::Result<mldlmc_core::MlmcReport> {
    let exec = cfg.executor()?;
    let problem = cfg.problem(cfg.control_field()?)?;
    let budget = cfg.budget.build()?;
    let r = experiments::estimate(
        cfg,
        &problem,
        Estimator::Multilevel,
        budget.tolerance,
        cfg.seed,
        &exec,
    )?;
    let rows: Vec<ReportRow> = r.levels.iter().map(ReportRow::from).collect();
    output::write_csv(&cfg.out.join(REPORT_CSV), &rows)?;
    println!(
        "estimate {:.6e}  L {}  bias {:.2e}  std error {:.2e}  cost {:.3e}  total cost {:.3e}  {:.1}s{}",
        r.estimate,
        r.max_level,
        r.bias,
        r.sample_variance.sqrt(),
        r.cost,
        r.total_cost,
        r.wall_time,
        if r.converged { "" } else { "  (level cap reached)" }
    );
    if !r.converged {
        anyhow::bail!(mldlmc_core::Error::NotConverged {
            max_level: r.max_level,
            partial: Box::new(r),
        });
    }
    Ok(r)
}

/// Adaptive sweep with the multilevel estimator (`adaptive-sweep`) or the
/// single-level baseline (`baseline`).
pub fn sweep(cfg: &RunConfig, estimator: Estimator) -> anyhow::Result<experiments::Sweep> {
    let exec = cfg.executor()?;
    let problem = cfg.problem(cfg.control_field()?)?;
    let reference = match cfg.experiments.sweep.reference {
        Some(v) => v,
        None => {
            let r = experiments::reference(cfg, &problem, &exec)?;
            println!(
                "reference {:.6e} from two runs at tolerance {} ({:.2} pooled SE apart)",
                r.value, cfg.experiments.sweep.reference_tolerance, r.z
            );
            r.value
        }
    };
    let s = experiments::sweep(cfg, &problem, estimator, reference, &exec)?;
    output::write_csv(&cfg.out.join(SWEEP_CSV), &s.rows)?;
    for t in &s.summary {
        println!(
            "{} tol {:.3e}: mean cost {:.3e}, {:.0}% of {} runs within tolerance",
            estimator.name(),
            t.tolerance,
            t.mean_cost,
            100.0 * t.within,
            t.runs
        );
    }
    if let Some(f) = &s.cost_fit {
        println!("cost slope {:.3}", f.slope);
    }
    Ok(s)
}
