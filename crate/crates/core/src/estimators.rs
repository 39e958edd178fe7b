//! Double loop estimators: single-level DLMC and the naive and antithetic
//! level-difference samplers, all with importance sampling.
//!
//! Outer sample `i` of a call reads the key `stream.child(i)`, which fixes its
//! particle sub-streams and its decoupled-path streams. Results are therefore
//! independent of how outer samples are spread over workers.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::decoupled::{advance_path, WienerPath};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Observable};
use crate::particles::{simulate_particle_system, EmpiricalLaw};
use crate::rng::{RandomBlock, StreamKey};
use crate::stats::RunningStats;

/// Geometric level sequence `P_ℓ = P0 τ^ℓ`, `N_ℓ = N0 τ^ℓ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hierarchy {
    pub p0: usize,
    pub n0: usize,
    pub tau: usize,
    pub max_level: usize,
}

impl Default for Hierarchy {
    fn default() -> Self {
        Hierarchy {
            p0: 5,
            n0: 4,
            tau: 2,
            max_level: 12,
        }
    }
}

impl Hierarchy {
    pub fn validate(&self) -> Result<()> {
        if self.tau < 2 || self.p0 == 0 || self.n0 == 0 {
            return Err(Error::invalid(
                "hierarchy needs tau >= 2, P0 >= 1 and N0 >= 1",
            ));
        }
        Ok(())
    }

    pub fn particles(&self, level: usize) -> usize {
        self.p0 * self.tau.pow(level as u32)
    }

    pub fn steps(&self, level: usize) -> usize {
        self.n0 * self.tau.pow(level as u32)
    }

    /// Work units of `M1` outer and `M1 M2` inner samples at `level`.
    pub fn cost(&self, level: usize, m1: usize, m2: usize) -> f64 {
        work_units(self.particles(level), self.steps(level), m1, m2)
    }
}

/// `M1 P² N + M1 M2 P N`.
pub fn work_units(particles: usize, steps: usize, m1: usize, m2: usize) -> f64 {
    let (p, n) = (particles as f64, steps as f64);
    m1 as f64 * p * p * n + (m1 * m2) as f64 * p * n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Naive,
    Antithetic,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::Naive => "naive",
            Sampler::Antithetic => "antithetic",
        }
    }
}

/// Everything a level estimator needs besides sample counts and seeds.
#[derive(Clone)]
pub struct Problem {
    pub model: ModelSpec,
    pub observable: Observable,
    pub control: ControlField,
    pub hierarchy: Hierarchy,
    pub horizon: f64,
}

impl Problem {
    pub fn new(
        model: ModelSpec,
        observable: Observable,
        control: ControlField,
        hierarchy: Hierarchy,
        horizon: f64,
    ) -> Result<Self> {
        hierarchy.validate()?;
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        Ok(Problem {
            model,
            observable,
            control,
            hierarchy,
            horizon,
        })
    }

    pub fn with_control(&self, control: ControlField) -> Self {
        Problem {
            control,
            ..self.clone()
        }
    }
}

/// Outer-loop worker pool. Results come back in index order.
#[derive(Clone)]
pub struct Executor {
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl Executor {
    pub fn serial() -> Self {
        Executor { pool: None }
    }

    /// `workers = 0` uses one worker per core.
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 1 {
            return Ok(Self::serial());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
        Ok(Executor {
            pool: Some(Arc::new(pool)),
        })
    }

    pub fn workers(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::serial()
    }
}

/// Sample statistics of one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub m1: usize,
    pub m2: usize,
    /// Mean of `ΔG_ℓ` (of `G_0` at level 0).
    pub mean: f64,
    /// Variance of the inner conditional mean across laws.
    pub v1: f64,
    /// Mean inner variance.
    pub v2: f64,
    pub fine_mean: f64,
    pub coarse_mean: f64,
    pub cost: f64,
    pub wall_time: f64,
    /// Set when `M1 < 2` or `M2 < 2` left a component undefined (reported as 0).
    pub degenerate: bool,
    pub max_control: f64,
}

impl LevelStats {
    /// `V1/M1 + V2/(M1 M2)`.
    pub fn estimator_variance(&self) -> f64 {
        let m1 = self.m1 as f64;
        self.v1 / m1 + self.v2 / (m1 * self.m2 as f64)
    }

    /// Variance of `mean` from the spread of the inner means. `v1` already
    /// carries the `V2/M2` share, so this is `v1/M1`; with a single law it
    /// falls back to the inner spread `v2/M2`.
    pub fn mean_variance(&self) -> f64 {
        if self.m1 >= 2 {
            self.v1 / self.m1 as f64
        } else {
            self.v2 / self.m2 as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        self.mean_variance().sqrt()
    }

    /// Estimator variance over squared mean.
    pub fn squared_cov(&self) -> f64 {
        self.estimator_variance() / (self.mean * self.mean)
    }
}

#[derive(Clone, Copy, Debug)]
enum Coupling {
    Single,
    Naive,
    Antithetic,
}

struct OuterSample {
    mean: f64,
    variance: Option<f64>,
    fine_mean: f64,
    coarse_mean: f64,
    max_control: f64,
}

struct Scratch {
    state: Vec<f64>,
    drift: Vec<f64>,
    diff: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch {
            state: vec![0.0; d],
            drift: vec![0.0; d],
            diff: vec![0.0; d * d],
        }
    }
}

fn weighted_value(
    problem: &Problem,
    law: &EmpiricalLaw,
    path: &WienerPath,
    s: &mut Scratch,
    max_control: &mut f64,
) -> Result<f64> {
    let (log_l, z) = advance_path(
        &problem.model,
        law,
        &problem.control,
        path,
        &mut s.state,
        &mut s.drift,
        &mut s.diff,
    )?;
    *max_control = max_control.max(z);
    let g = problem.observable.eval(&s.state);
    Ok(if log_l == 0.0 { g } else { g * log_l.exp() })
}

#[allow(clippy::too_many_arguments)]
fn outer_sample(
    problem: &Problem,
    coupling: Coupling,
    particles: usize,
    steps: usize,
    coarse_particles: usize,
    coarse_steps: usize,
    m2: usize,
    key: StreamKey,
) -> Result<OuterSample> {
    let model = &problem.model;
    let horizon = problem.horizon;
    let block = RandomBlock::new(key, particles, steps);
    let fine_law = simulate_particle_system(model, particles, steps, horizon, &block)?;
    let coarse_laws: Vec<EmpiricalLaw> = match coupling {
        Coupling::Single => Vec::new(),
        Coupling::Naive => vec![simulate_particle_system(
            model,
            coarse_particles,
            coarse_steps,
            horizon,
            &block,
        )?],
        Coupling::Antithetic => (0..particles / coarse_particles)
            .map(|a| {
                let group = block.range(a * coarse_particles, coarse_particles);
                simulate_particle_system(model, coarse_particles, coarse_steps, horizon, &group)
            })
            .collect::<Result<_>>()?,
    };
    let factor = if coarse_laws.is_empty() {
        1
    } else {
        steps / coarse_steps
    };

    let d = model.dim();
    let mut path = WienerPath {
        x0: vec![0.0; d],
        xi: 0.0,
        increments: vec![0.0; steps * d],
        steps,
        horizon,
    };
    let mut coarse_path = path.clone();
    let mut scratch = Scratch::new(d);
    let mut diffs = RunningStats::new();
    let (mut fine_sum, mut coarse_sum, mut max_control) = (0.0, 0.0, 0.0f64);
    for j in 0..m2 {
        path.redraw(model, &mut block.path_stream(j));
        let fine = weighted_value(problem, &fine_law, &path, &mut scratch, &mut max_control)?;
        let coarse = if coarse_laws.is_empty() {
            0.0
        } else {
            path.coarsen_into(factor, &mut coarse_path)?;
            let mut acc = 0.0;
            for law in &coarse_laws {
                acc += weighted_value(problem, law, &coarse_path, &mut scratch, &mut max_control)?;
            }
            acc / coarse_laws.len() as f64
        };
        fine_sum += fine;
        coarse_sum += coarse;
        diffs.push(fine - coarse);
    }
    Ok(OuterSample {
        mean: diffs.mean(),
        variance: diffs.variance(),
        fine_mean: fine_sum / m2 as f64,
        coarse_mean: coarse_sum / m2 as f64,
        max_control,
    })
}

#[allow(clippy::too_many_arguments)]
fn run(
    problem: &Problem,
    coupling: Coupling,
    level: usize,
    (particles, steps): (usize, usize),
    (coarse_particles, coarse_steps): (usize, usize),
    m1: usize,
    m2: usize,
    stream: StreamKey,
    exec: &Executor,
) -> Result<LevelStats> {
    if m1 == 0 || m2 == 0 {
        return Err(Error::invalid("sample counts must be at least 1"));
    }
    let start = Instant::now();
    let samples = exec.map(m1, |i| {
        outer_sample(
            problem,
            coupling,
            particles,
            steps,
            coarse_particles,
            coarse_steps,
            m2,
            stream.child(i as u64),
        )
    });
    let mut outer = RunningStats::new();
    let (mut v2_sum, mut fine, mut coarse, mut max_control) = (0.0, 0.0, 0.0, 0.0f64);
    let mut degenerate = m1 < 2;
    for s in samples {
        let s = s?;
        outer.push(s.mean);
        match s.variance {
            Some(v) => v2_sum += v,
            None => degenerate = true,
        }
        fine += s.fine_mean;
        coarse += s.coarse_mean;
        max_control = max_control.max(s.max_control);
    }
    let m1f = m1 as f64;
    Ok(LevelStats {
        level,
        m1,
        m2,
        mean: outer.mean(),
        v1: outer.variance().unwrap_or(0.0),
        v2: if m2 < 2 { 0.0 } else { v2_sum / m1f },
        fine_mean: fine / m1f,
        coarse_mean: coarse / m1f,
        cost: work_units(particles, steps, m1, m2),
        wall_time: start.elapsed().as_secs_f64(),
        degenerate,
        max_control,
    })
}

/// Single-level DLMC at `(P, N)`: `M1` laws, `M2` controlled paths per law.
pub fn dlmc(
    problem: &Problem,
    particles: usize,
    steps: usize,
    m1: usize,
    m2: usize,
    stream: StreamKey,
    exec: &Executor,
) -> Result<LevelStats> {
    run(
        problem,
        Coupling::Single,
        0,
        (particles, steps),
        (0, 0),
        m1,
        m2,
        stream,
        exec,
    )
}

/// `G_ℓ` alone at hierarchy level `level`.
pub fn level_value(
    problem: &Problem,
    level: usize,
    m1: usize,
    m2: usize,
    stream: StreamKey,
    exec: &Executor,
) -> Result<LevelStats> {
    let h = &problem.hierarchy;
    let mut stats = dlmc(
        problem,
        h.particles(level),
        h.steps(level),
        m1,
        m2,
        stream,
        exec,
    )?;
    stats.level = level;
    Ok(stats)
}

/// `ΔG_ℓ` with the chosen coupling; level 0 is plain DLMC of `G_0`.
pub fn level_difference(
    problem: &Problem,
    sampler: Sampler,
    level: usize,
    m1: usize,
    m2: usize,
    stream: StreamKey,
    exec: &Executor,
) -> Result<LevelStats> {
    if level == 0 {
        return level_value(problem, 0, m1, m2, stream, exec);
    }
    let h = &problem.hierarchy;
    let coupling = match sampler {
        Sampler::Naive => Coupling::Naive,
        Sampler::Antithetic => Coupling::Antithetic,
    };
    run(
        problem,
        coupling,
        level,
        (h.particles(level), h.steps(level)),
        (h.particles(level - 1), h.steps(level - 1)),
        m1,
        m2,
        stream,
        exec,
    )
}

pub fn level_difference_naive(
    problem: &Problem,
    level: usize,
    m1: usize,
    m2: usize,
    stream: StreamKey,
    exec: &Executor,
) -> Result<LevelStats> {
    require_positive_level(level)?;
    level_difference(problem, Sampler::Naive, level, m1, m2, stream, exec)
}

pub fn level_difference_antithetic(
    problem: &Problem,
    level: usize,
    m1: usize,
    m2: usize,
    stream: StreamKey,
    exec: &Executor,
) -> Result<LevelStats> {
    require_positive_level(level)?;
    level_difference(problem, Sampler::Antithetic, level, m1, m2, stream, exec)
}

fn require_positive_level(level: usize) -> Result<()> {
    if level == 0 {
        return Err(Error::invalid("level differences start at level 1"));
    }
    Ok(())
}

/// `(V1, V2)` of `ΔG_ℓ` from `M̃1 × M̃2` samples.
pub fn estimate_variances(
    problem: &Problem,
    sampler: Sampler,
    level: usize,
    m1: usize,
    m2: usize,
    stream: StreamKey,
    exec: &Executor,
) -> Result<(f64, f64)> {
    if m1 < 2 || m2 < 2 {
        return Err(Error::invalid(
            "variance estimation needs M1 >= 2 and M2 >= 2",
        ));
    }
    let s = level_difference(problem, sampler, level, m1, m2, stream, exec)?;
    Ok((s.v1, s.v2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{cos_observable, kuramoto_model, CoefficientLaw, InitialLaw, Kernel};

    fn kuramoto_problem() -> Problem {
        Problem::new(
            kuramoto_model(0.4, 0.0, 0.2, -0.2, 0.2).unwrap(),
            cos_observable(),
            ControlField::zero(),
            Hierarchy::default(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn hierarchy_defaults() {
        let h = Hierarchy::default();
        assert_eq!((h.particles(3), h.steps(3)), (40, 32));
        assert_eq!(h.cost(0, 2, 3), 2.0 * 25.0 * 4.0 + 6.0 * 5.0 * 4.0);
    }

    #[test]
    fn constant_observable_is_exact() {
        let mut p = kuramoto_problem();
        p.observable = Observable::constant(0.3);
        let s = dlmc(&p, 8, 4, 5, 7, StreamKey::root(1), &Executor::serial()).unwrap();
        assert_eq!(s.mean, 0.3);
        assert_eq!((s.v1, s.v2), (0.0, 0.0));
        let d = level_difference(
            &p,
            Sampler::Antithetic,
            2,
            3,
            3,
            StreamKey::root(1),
            &Executor::serial(),
        )
        .unwrap();
        assert_eq!(d.mean, 0.0);
    }

    #[test]
    fn single_sample_is_flagged() {
        let p = kuramoto_problem();
        let s = dlmc(&p, 8, 4, 1, 1, StreamKey::root(2), &Executor::serial()).unwrap();
        assert!(s.degenerate);
        assert_eq!((s.v1, s.v2), (0.0, 0.0));
        assert!(estimate_variances(
            &p,
            Sampler::Naive,
            1,
            1,
            5,
            StreamKey::root(2),
            &Executor::serial()
        )
        .is_err());
    }

    #[test]
    fn deterministic_dynamics_have_no_variance() {
        let m = ModelSpec::additive_1d(
            "ode",
            0.0,
            Kernel::SineDifference,
            InitialLaw::PointMass(vec![0.3]),
            CoefficientLaw::Constant(0.0),
        )
        .unwrap();
        let mut p = kuramoto_problem();
        p.model = m;
        for sampler in [Sampler::Naive, Sampler::Antithetic] {
            let s = level_difference(
                &p,
                sampler,
                2,
                4,
                4,
                StreamKey::root(3),
                &Executor::serial(),
            )
            .unwrap();
            assert_eq!((s.v1, s.v2), (0.0, 0.0));
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let p = kuramoto_problem();
        let a = level_difference(
            &p,
            Sampler::Antithetic,
            2,
            6,
            20,
            StreamKey::root(4),
            &Executor::serial(),
        )
        .unwrap();
        let b = level_difference(
            &p,
            Sampler::Antithetic,
            2,
            6,
            20,
            StreamKey::root(4),
            &Executor::new(3).unwrap(),
        )
        .unwrap();
        assert_eq!((a.mean, a.v1, a.v2), (b.mean, b.v1, b.v2));
    }

    #[test]
    fn level_zero_matches_dlmc() {
        let p = kuramoto_problem();
        let a = level_difference(
            &p,
            Sampler::Naive,
            0,
            4,
            4,
            StreamKey::root(5),
            &Executor::serial(),
        )
        .unwrap();
        let b = dlmc(&p, 5, 4, 4, 4, StreamKey::root(5), &Executor::serial()).unwrap();
        assert_eq!(a.mean, b.mean);
        assert!(
            level_difference_naive(&p, 0, 2, 2, StreamKey::root(5), &Executor::serial()).is_err()
        );
    }
}
