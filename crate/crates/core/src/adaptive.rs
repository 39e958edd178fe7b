//! Adaptive multilevel driver: grows the finest level until the extrapolated
//! bias meets its share of the tolerance, with sample counts from the
//! cost-optimal split of the statistical error.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    dlmc, level_difference, level_value, work_units, Executor, LevelStats, Problem, Sampler,
};
use crate::rng::StreamKey;
use crate::stats::two_sided_quantile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToleranceMode {
    /// Errors measured against `TOL · |Ḡ|`.
    Relative,
    /// `Ḡ` frozen to 1.
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub tolerance: f64,
    pub mode: ToleranceMode,
    /// Bias share of the tolerance.
    pub theta: f64,
    /// Confidence parameter; the statistical error is `C_ν` standard deviations.
    pub nu: f64,
}

impl ErrorBudget {
    pub fn relative(tolerance: f64) -> Self {
        ErrorBudget {
            tolerance,
            mode: ToleranceMode::Relative,
            theta: 0.5,
            nu: 0.05,
        }
    }

    pub fn absolute(tolerance: f64) -> Self {
        ErrorBudget {
            mode: ToleranceMode::Absolute,
            ..Self::relative(tolerance)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::invalid("theta must lie in (0, 1)"));
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(Error::invalid("nu must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn c_nu(&self) -> f64 {
        two_sided_quantile(self.nu)
    }

    /// `|Ḡ|` in relative mode, 1 in absolute mode.
    pub fn scale(&self, gbar: f64) -> Result<f64> {
        match self.mode {
            ToleranceMode::Absolute => Ok(1.0),
            ToleranceMode::Relative if gbar == 0.0 || !gbar.is_finite() => Err(Error::invalid(
                format!("relative tolerance undefined for Ḡ = {gbar}"),
            )),
            ToleranceMode::Relative => Ok(gbar.abs()),
        }
    }

    pub fn bias_target(&self, gbar: f64) -> Result<f64> {
        Ok(self.theta * self.tolerance * self.scale(gbar)?)
    }

    pub fn variance_target(&self, gbar: f64) -> Result<f64> {
        let e = (1.0 - self.theta) * self.tolerance * self.scale(gbar)? / self.c_nu();
        Ok(e * e)
    }
}

/// Decay rates of the bias (`α̃`), `V1` (`w̃`) and `V2` (`s̃`) in powers of `τ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub alpha: f64,
    pub w: f64,
    pub s: f64,
}

impl RateConstants {
    pub fn antithetic() -> Self {
        RateConstants {
            alpha: 1.0,
            w: 2.0,
            s: 2.0,
        }
    }

    pub fn naive() -> Self {
        RateConstants {
            alpha: 1.0,
            w: 1.0,
            s: 1.0,
        }
    }

    pub fn for_sampler(sampler: Sampler) -> Self {
        match sampler {
            Sampler::Naive => Self::naive(),
            Sampler::Antithetic => Self::antithetic(),
        }
    }
}

/// Sample counts `(M1, M2)` for the three kinds of pilot run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PilotSizes {
    /// Initial `Ḡ` and level-0 variances.
    pub initial: (usize, usize),
    /// Variance estimation at a new level.
    pub variance: (usize, usize),
    /// Floor on the bias-estimation counts.
    pub bias_floor: (usize, usize),
}

impl Default for PilotSizes {
    fn default() -> Self {
        PilotSizes {
            initial: (1000, 100),
            variance: (25, 1000),
            bias_floor: (100, 50),
        }
    }
}

impl PilotSizes {
    /// Smaller inner variance pilot used for rare-event observables.
    pub fn rare_event() -> Self {
        PilotSizes {
            variance: (25, 100),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.initial;
        let (c, d) = self.variance;
        let (e, f) = self.bias_floor;
        if a < 2 || b < 2 || c < 2 || d < 2 || e < 1 || f < 1 {
            return Err(Error::invalid(
                "pilot counts must be >= 2 where variances are estimated",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub sampler: Sampler,
    pub budget: ErrorBudget,
    pub pilots: PilotSizes,
    pub rates: RateConstants,
    pub max_level: usize,
    /// Replace variance pilots by extrapolation beyond level 3.
    pub extrapolate: bool,
}

impl AdaptiveConfig {
    pub fn new(sampler: Sampler, budget: ErrorBudget) -> Self {
        AdaptiveConfig {
            sampler,
            budget,
            pilots: PilotSizes::default(),
            rates: RateConstants::for_sampler(sampler),
            max_level: 12,
            extrapolate: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelAllocation {
    pub m1: usize,
    pub m2: usize,
    /// Continuous optimum of `M1`.
    pub m1_opt: f64,
    /// Continuous optimum of `M1 M2`.
    pub total_opt: f64,
}

/// Integer sample counts minimizing `Σ M1 P²N + M1 M2 P N` subject to
/// `C² Σ (V1/M1 + V2/(M1 M2)) = ((1-θ) TOL |Ḡ|)²`. Entries are `(V1, V2, P, N)`.
pub fn optimal_allocation(
    levels: &[(f64, f64, usize, usize)],
    budget: &ErrorBudget,
    gbar: f64,
) -> Result<Vec<LevelAllocation>> {
    budget.validate()?;
    if levels.iter().any(|&(v1, v2, p, n)| {
        !(v1 >= 0.0) || !(v2 >= 0.0) || !v1.is_finite() || !v2.is_finite() || p == 0 || n == 0
    }) {
        return Err(Error::invalid(
            "variances must be finite and >= 0, P and N >= 1",
        ));
    }
    let a = 1.0 / budget.variance_target(gbar)?;
    let sum: f64 = levels
        .iter()
        .map(|&(v1, v2, p, n)| {
            let (p, n) = (p as f64, n as f64);
            (p * n).sqrt() * ((v1 * p).sqrt() + v2.sqrt())
        })
        .sum();
    Ok(levels
        .iter()
        .map(|&(v1, v2, p, n)| {
            let (p, n) = (p as f64, n as f64);
            let m1_opt = a * v1.sqrt() / (p * p * n).sqrt() * sum;
            let total_opt = a * v2.sqrt() / (p * n).sqrt() * sum;
            let m1 = (m1_opt.ceil() as usize).max(1);
            let m2 = ((total_opt / m1 as f64).ceil() as usize).max(1);
            LevelAllocation {
                m1,
                m2,
                m1_opt,
                total_opt,
            }
        })
        .collect())
}

/// Richardson bias `|E ΔG_{ℓ+1}| / (1 - τ^-α)`, raised to the discounted
/// prior estimates in `history` (oldest first; the last two are used).
pub fn bias_estimate(diff_mean: f64, tau: usize, alpha: f64, history: &[f64]) -> f64 {
    let t = (tau as f64).powf(alpha);
    let mut bias = diff_mean.abs() / (1.0 - 1.0 / t);
    let mut discount = t;
    for prior in history.iter().rev().take(2) {
        bias = bias.max(prior / discount);
        discount *= t;
    }
    bias
}

/// Extrapolated `(V1_ℓ, V2_ℓ)` from histories indexed by level.
pub fn extrapolate_variances(
    v1: &[f64],
    v2: &[f64],
    tau: usize,
    w: f64,
    s: f64,
    level: usize,
) -> Result<(f64, f64)> {
    if level <= 3 || v1.len() < level || v2.len() < level {
        return Err(Error::invalid(format!(
            "variance extrapolation at level {level} needs levels {}..{level} measured and level > 3",
            level.saturating_sub(2)
        )));
    }
    let t = tau as f64;
    let pick = |h: &[f64], r: f64| (h[level - 1] / t.powf(r)).max(h[level - 2] / t.powf(2.0 * r));
    Ok((pick(v1, w), pick(v2, s)))
}

/// One pass of the adaptive loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub level: usize,
    pub gbar: f64,
    pub bias: f64,
    pub bias_target: f64,
    pub variance: f64,
    pub variance_target: f64,
    pub allocations: Vec<(usize, usize)>,
    pub extrapolated: bool,
    /// Counts of the level `L+1` bias run, taken from the level-`L` allocation.
    pub bias_counts: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlmcReport {
    pub estimate: f64,
    pub levels: Vec<LevelStats>,
    /// Finest level `L`.
    pub max_level: usize,
    pub bias: f64,
    /// Variance predicted from the variance estimates used for allocation.
    pub variance: f64,
    /// Variance from the sample moments of the final runs.
    pub sample_variance: f64,
    /// `C_ν` times the predicted standard deviation.
    pub statistical_error: f64,
    /// Work units of the final estimator.
    pub cost: f64,
    /// Work units of every estimator call, pilots included.
    pub total_cost: f64,
    pub wall_time: f64,
    pub rates: RateConstants,
    pub budget: ErrorBudget,
    pub converged: bool,
    pub iterations: Vec<IterationLog>,
}

const PILOT: u64 = 1;
const VARIANCE: u64 = 2;
const BIAS: u64 = 3;
const ESTIMATE: u64 = 4;

fn stream(seed: u64, purpose: u64, level: usize, round: usize) -> StreamKey {
    StreamKey::root(seed)
        .child(purpose)
        .child(level as u64)
        .child(round as u64)
}

fn predicted_variance(vs: &[(f64, f64)], alloc: &[LevelAllocation]) -> f64 {
    vs.iter()
        .zip(alloc)
        .map(|(&(v1, v2), a)| v1 / a.m1 as f64 + v2 / (a.m1 * a.m2) as f64)
        .sum()
}

/// Adaptive multilevel DLMC with the problem's control.
pub fn run_adaptive(
    problem: &Problem,
    config: &AdaptiveConfig,
    seed: u64,
    exec: &Executor,
) -> Result<MlmcReport> {
    let budget = &config.budget;
    budget.validate()?;
    config.pilots.validate()?;
    if !(config.rates.alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    let start = Instant::now();
    let h = problem.hierarchy;
    let sampler = config.sampler;
    let mut total_cost = 0.0;

    let (pm1, pm2) = config.pilots.initial;
    let pilot = level_difference(
        problem,
        sampler,
        0,
        pm1,
        pm2,
        stream(seed, PILOT, 0, 0),
        exec,
    )?;
    total_cost += pilot.cost;
    let mut gbar = pilot.mean;
    budget.scale(gbar)?;
    let mut v1 = vec![pilot.v1];
    let mut v2 = vec![pilot.v2];
    let mut biases: Vec<f64> = Vec::new();
    let mut iterations = Vec::new();
    let mut level = 1;

    loop {
        let extrapolated = config.extrapolate && level > 3;
        let (a, b) = if extrapolated {
            extrapolate_variances(&v1, &v2, h.tau, config.rates.w, config.rates.s, level)?
        } else {
            let (m1, m2) = config.pilots.variance;
            let s = level_difference(
                problem,
                sampler,
                level,
                m1,
                m2,
                stream(seed, VARIANCE, level, 0),
                exec,
            )?;
            total_cost += s.cost;
            (s.v1, s.v2)
        };
        v1.push(a);
        v2.push(b);

        let inputs: Vec<(f64, f64, usize, usize)> = (0..=level)
            .map(|l| (v1[l], v2[l], h.particles(l), h.steps(l)))
            .collect();
        let alloc = optimal_allocation(&inputs, budget, gbar)?;

        let top = alloc[level];
        let bias_counts = (
            top.m1.max(config.pilots.bias_floor.0),
            top.m2.max(config.pilots.bias_floor.1),
        );
        let next = level_difference(
            problem,
            sampler,
            level + 1,
            bias_counts.0,
            bias_counts.1,
            stream(seed, BIAS, level + 1, 0),
            exec,
        )?;
        total_cost += next.cost;
        let history = if level > 2 {
            &biases[level - 3..]
        } else {
            &[][..]
        };
        let bias = bias_estimate(next.mean, h.tau, config.rates.alpha, history);
        biases.push(bias);

        let levels: Vec<LevelStats> = (0..=level)
            .map(|l| {
                level_difference(
                    problem,
                    sampler,
                    l,
                    alloc[l].m1,
                    alloc[l].m2,
                    stream(seed, ESTIMATE, l, level),
                    exec,
                )
            })
            .collect::<Result<_>>()?;
        let estimate: f64 = levels.iter().map(|s| s.mean).sum();
        let cost: f64 = levels.iter().map(|s| s.cost).sum();
        total_cost += cost;
        if budget.mode == ToleranceMode::Relative {
            gbar = estimate;
        }
        let vs: Vec<(f64, f64)> = v1.iter().copied().zip(v2.iter().copied()).collect();
        let variance = predicted_variance(&vs, &alloc);
        let bias_target = budget.bias_target(gbar)?;
        let log = IterationLog {
            level,
            gbar,
            bias,
            bias_target,
            variance,
            variance_target: budget.variance_target(gbar)?,
            allocations: alloc.iter().map(|a| (a.m1, a.m2)).collect(),
            extrapolated,
            bias_counts,
        };
        log::info!(
            "L={level} Ḡ={gbar:.6e} bias={bias:.3e} target={bias_target:.3e} var={variance:.3e} M={:?}",
            log.allocations
        );
        iterations.push(log);

        let converged = bias <= bias_target;
        let report = MlmcReport {
            estimate,
            sample_variance: levels.iter().map(LevelStats::mean_variance).sum(),
            levels,
            max_level: level,
            bias,
            variance,
            statistical_error: budget.c_nu() * variance.sqrt(),
            cost,
            total_cost,
            wall_time: start.elapsed().as_secs_f64(),
            rates: config.rates,
            budget: *budget,
            converged,
            iterations: iterations.clone(),
        };
        if converged {
            return Ok(report);
        }
        if level >= config.max_level.min(h.max_level) {
            return Err(Error::NotConverged {
                max_level: level,
                partial: Box::new(report),
            });
        }
        level += 1;
    }
}

/// Single-level DLMC: the level is the first whose extrapolated bias meets
/// the bias target, the counts follow the one-level allocation.
pub fn run_single_level(
    problem: &Problem,
    config: &AdaptiveConfig,
    seed: u64,
    exec: &Executor,
) -> Result<MlmcReport> {
    let budget = &config.budget;
    budget.validate()?;
    config.pilots.validate()?;
    let start = Instant::now();
    let h = problem.hierarchy;
    let mut total_cost = 0.0;

    let (pm1, pm2) = config.pilots.initial;
    let pilot = level_value(problem, 0, pm1, pm2, stream(seed, PILOT, 0, 0), exec)?;
    total_cost += pilot.cost;
    let mut gbar = pilot.mean;
    budget.scale(gbar)?;
    let mut biases: Vec<f64> = Vec::new();
    let mut iterations = Vec::new();
    let mut level = 0;

    loop {
        let (v1, v2) = if level == 0 {
            (pilot.v1, pilot.v2)
        } else {
            let (m1, m2) = config.pilots.variance;
            let s = level_value(
                problem,
                level,
                m1,
                m2,
                stream(seed, VARIANCE, level, 0),
                exec,
            )?;
            total_cost += s.cost;
            (s.v1, s.v2)
        };
        let (p, n) = (h.particles(level), h.steps(level));
        let alloc = optimal_allocation(&[(v1, v2, p, n)], budget, gbar)?[0];

        let bias_counts = (
            alloc.m1.max(config.pilots.bias_floor.0),
            alloc.m2.max(config.pilots.bias_floor.1),
        );
        let next = level_difference(
            problem,
            config.sampler,
            level + 1,
            bias_counts.0,
            bias_counts.1,
            stream(seed, BIAS, level + 1, 0),
            exec,
        )?;
        total_cost += next.cost;
        let history = if level > 2 {
            &biases[level - 3..]
        } else {
            &[][..]
        };
        let bias = bias_estimate(next.mean, h.tau, config.rates.alpha, history);
        biases.push(bias);

        let mut stats = dlmc(
            problem,
            p,
            n,
            alloc.m1,
            alloc.m2,
            stream(seed, ESTIMATE, level, 0),
            exec,
        )?;
        stats.level = level;
        total_cost += stats.cost;
        if budget.mode == ToleranceMode::Relative {
            gbar = stats.mean;
        }
        let variance = v1 / alloc.m1 as f64 + v2 / (alloc.m1 * alloc.m2) as f64;
        let bias_target = budget.bias_target(gbar)?;
        iterations.push(IterationLog {
            level,
            gbar,
            bias,
            bias_target,
            variance,
            variance_target: budget.variance_target(gbar)?,
            allocations: vec![(alloc.m1, alloc.m2)],
            extrapolated: false,
            bias_counts,
        });
        log::info!("single level {level}: Ḡ={gbar:.6e} bias={bias:.3e} target={bias_target:.3e}");

        let converged = bias <= bias_target;
        let report = MlmcReport {
            estimate: stats.mean,
            sample_variance: stats.mean_variance(),
            cost: work_units(p, n, alloc.m1, alloc.m2),
            levels: vec![stats],
            max_level: level,
            bias,
            variance,
            statistical_error: budget.c_nu() * variance.sqrt(),
            total_cost,
            wall_time: start.elapsed().as_secs_f64(),
            rates: config.rates,
            budget: *budget,
            converged,
            iterations: iterations.clone(),
        };
        if converged {
            return Ok(report);
        }
        if level >= config.max_level.min(h.max_level) {
            return Err(Error::NotConverged {
                max_level: level,
                partial: Box::new(report),
            });
        }
        level += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn richardson_factor() {
        assert!((bias_estimate(0.01, 2, 1.0, &[]) - 0.02).abs() < 1e-15);
        assert_eq!(bias_estimate(0.0, 2, 1.0, &[]), 0.0);
    }

    #[test]
    fn history_can_dominate() {
        // extrapolation gives 0.02, discounted priors 0.04 and 0.0025
        let b = bias_estimate(0.01, 2, 1.0, &[0.01, 0.08]);
        assert!((b - 0.04).abs() < 1e-15);
    }

    #[test]
    fn variance_extrapolation() {
        let v1 = [9.0, 9.0, 2.0, 0.4];
        let v2 = [9.0, 9.0, 1.0, 0.5];
        let (a, b) = extrapolate_variances(&v1, &v2, 2, 2.0, 1.0, 4).unwrap();
        assert!((a - 0.125).abs() < 1e-15);
        assert!((b - 0.25).abs() < 1e-15);
        assert!(extrapolate_variances(&v1, &v2, 2, 2.0, 1.0, 3).is_err());
        assert!(extrapolate_variances(&v1[..3], &v2, 2, 2.0, 1.0, 4).is_err());
    }

    #[test]
    fn single_level_without_inner_variance_is_classic_mc() {
        let budget = ErrorBudget::relative(0.05);
        let (v1, gbar) = (0.7, 0.3);
        let a = optimal_allocation(&[(v1, 0.0, 5, 4)], &budget, gbar).unwrap()[0];
        let c = two_sided_quantile(0.05);
        let expect = (c * c * v1 / (0.25 * 0.05 * 0.05 * gbar * gbar)).ceil() as usize;
        assert_eq!((a.m1, a.m2), (expect, 1));
    }

    #[test]
    fn doubling_gbar_quarters_counts() {
        let budget = ErrorBudget::relative(0.1);
        let lv = [(0.3, 2.0, 5, 4), (0.01, 0.2, 10, 8)];
        let a = optimal_allocation(&lv, &budget, 0.2).unwrap();
        let b = optimal_allocation(&lv, &budget, 0.4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.m1_opt / y.m1_opt - 4.0).abs() < 1e-12);
        }
        assert!(optimal_allocation(&lv, &budget, 0.0).is_err());
        assert!(optimal_allocation(&lv, &ErrorBudget::absolute(0.1), 0.0).is_ok());
    }

    proptest! {
        #[test]
        fn allocation_meets_variance_target(
            v in proptest::collection::vec((1e-8f64..1.0, 1e-8f64..10.0), 1..6),
            tol in 1e-3f64..0.3,
            gbar in 1e-3f64..1.0,
        ) {
            let budget = ErrorBudget::relative(tol);
            let lv: Vec<_> = v.iter().enumerate()
                .map(|(l, &(a, b))| (a, b, 5 << l, 4 << l))
                .collect();
            let alloc = optimal_allocation(&lv, &budget, gbar).unwrap();
            let var: f64 = lv.iter().zip(&alloc)
                .map(|(&(a, b, _, _), m)| a / m.m1 as f64 + b / (m.m1 * m.m2) as f64)
                .sum();
            prop_assert!(var <= budget.variance_target(gbar).unwrap() * (1.0 + 1e-9));
            prop_assert!(alloc.iter().all(|m| m.m1 >= 1 && m.m2 >= 1));
        }

        #[test]
        fn robust_bias_never_below_discounted_history(
            d in -1.0f64..1.0,
            h in proptest::collection::vec(0.0f64..1.0, 0..4),
            alpha in 0.5f64..2.0,
        ) {
            let b = bias_estimate(d, 2, alpha, &h);
            prop_assert!(b >= d.abs() / (1.0 - 2f64.powf(-alpha)) * (1.0 - 1e-12));
            if let Some(last) = h.last() {
                prop_assert!(b >= last / 2f64.powf(alpha));
            }
        }
    }
}
