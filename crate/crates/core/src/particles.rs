//! Interacting particle system and its empirical law `μ^{P|N}`.

use crate::error::{Error, Result};
use crate::model::{Kernel, ModelSpec};
use crate::rng::{coarsen_increments, fill_increments, RandomBlock};

/// Which interaction kernel of the model an average refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelSlot {
    /// `κ1`, feeding the drift.
    Drift,
    /// `κ2`, feeding the diffusion.
    Diffusion,
}

/// Per-slice precomputation that lets a kernel average be evaluated without a
/// pass over the particles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum SliceSummary {
    Zero,
    /// `sin(x - y)` averages to `sin x · mean cos y - cos x · mean sin y`.
    Sine {
        mean_cos: f64,
        mean_sin: f64,
    },
    Direct,
}

impl Kernel {
    pub(crate) fn summarize(&self, slice: &[f64], dim: usize) -> SliceSummary {
        match self {
            Kernel::Zero => SliceSummary::Zero,
            Kernel::SineDifference => {
                let (mut c, mut s) = (0.0, 0.0);
                for y in slice.chunks_exact(dim) {
                    let (sy, cy) = y[0].sin_cos();
                    c += cy;
                    s += sy;
                }
                let p = (slice.len() / dim) as f64;
                SliceSummary::Sine {
                    mean_cos: c / p,
                    mean_sin: s / p,
                }
            }
            Kernel::Custom(_) => SliceSummary::Direct,
        }
    }

    #[inline]
    pub(crate) fn average_with(
        &self,
        summary: &SliceSummary,
        x: &[f64],
        slice: &[f64],
        dim: usize,
    ) -> f64 {
        match *summary {
            SliceSummary::Zero => 0.0,
            SliceSummary::Sine { mean_cos, mean_sin } => {
                let (sx, cx) = x[0].sin_cos();
                sx * mean_cos - cx * mean_sin
            }
            SliceSummary::Direct => self.average_direct(x, slice, dim),
        }
    }

    /// `(1/P) Σ_j κ(x, y_j)` by explicit summation.
    pub(crate) fn average_direct(&self, x: &[f64], slice: &[f64], dim: usize) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let p = slice.len() / dim;
        slice
            .chunks_exact(dim)
            .map(|y| self.eval(x, y))
            .sum::<f64>()
            / p as f64
    }
}

/// `(1/P) Σ_j κ(x, X_j)` over a `P × d` state slice, summed term by term.
pub fn kernel_average(model: &ModelSpec, which: KernelSlot, x: &[f64], slice: &[f64]) -> f64 {
    let kernel = match which {
        KernelSlot::Drift => model.kernel1(),
        KernelSlot::Diffusion => model.kernel2(),
    };
    kernel.average_direct(x, slice, model.dim())
}

/// Particle trajectories on the uniform grid `t_n = nT/N`.
#[derive(Clone, Debug)]
pub struct EmpiricalLaw {
    num_particles: usize,
    num_steps: usize,
    horizon: f64,
    dim: usize,
    /// `(N+1) × P × d`, row-major.
    states: Vec<f64>,
    xi: Vec<f64>,
    kernel1: Kernel,
    kernel2: Kernel,
    summary1: Vec<SliceSummary>,
    summary2: Vec<SliceSummary>,
}

impl EmpiricalLaw {
    pub fn num_particles(&self) -> usize {
        self.num_particles
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.num_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Particle states at `t_n`, borrowed from the trajectory.
    pub fn law_lookup(&self, n: usize) -> Result<&[f64]> {
        if n > self.num_steps {
            return Err(Error::OutOfRange {
                index: n,
                max: self.num_steps,
            });
        }
        Ok(self.slice(n))
    }

    #[inline]
    pub(crate) fn slice(&self, n: usize) -> &[f64] {
        let w = self.num_particles * self.dim;
        &self.states[n * w..(n + 1) * w]
    }

    /// Kernel average against the slice at `t_n`, using the cached slice
    /// summary when the kernel admits one.
    #[inline]
    pub fn average(&self, which: KernelSlot, n: usize, x: &[f64]) -> f64 {
        match which {
            KernelSlot::Drift => {
                self.kernel1
                    .average_with(&self.summary1[n], x, self.slice(n), self.dim)
            }
            KernelSlot::Diffusion => {
                self.kernel2
                    .average_with(&self.summary2[n], x, self.slice(n), self.dim)
            }
        }
    }

    /// CSV dump: one row per time, one column per particle coordinate.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for p in 0..self.num_particles {
            for k in 0..self.dim {
                write!(w, ",x{p}_{k}")?;
            }
        }
        writeln!(w)?;
        for n in 0..=self.num_steps {
            write!(w, "{}", self.time(n))?;
            for v in self.slice(n) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Explicit randomness for a particle system: initial states (`P × d`),
/// coefficients (`P`) and Wiener increments (`P × N × d`, particle-major).
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleDraws {
    pub initial: Vec<f64>,
    pub xi: Vec<f64>,
    pub increments: Vec<f64>,
}

impl ParticleDraws {
    /// Materialize the draws of every sub-stream in `block` at `num_steps`
    /// resolution. Each sub-stream yields, in order: the initial state, the
    /// coefficient, then `fine_steps · d` standard normals.
    pub fn from_block(
        model: &ModelSpec,
        block: &RandomBlock,
        num_steps: usize,
        horizon: f64,
    ) -> Result<Self> {
        let d = model.dim();
        let fine = block.fine_steps();
        if num_steps == 0 || !fine.is_multiple_of(num_steps) {
            return Err(Error::Resolution(format!(
                "{num_steps} steps cannot be read from a block generated at {fine} steps"
            )));
        }
        let factor = fine / num_steps;
        let p_count = block.len();
        let mut initial = vec![0.0; p_count * d];
        let mut xi = vec![0.0; p_count];
        let mut increments = vec![0.0; p_count * num_steps * d];
        let mut fine_buf = vec![0.0; fine * d];
        let dt_fine = horizon / fine as f64;
        for p in 0..p_count {
            let mut rng = block.particle_stream(p);
            model.sample_initial(&mut rng, &mut initial[p * d..(p + 1) * d]);
            xi[p] = model.sample_coefficient(&mut rng);
            fill_increments(&mut rng, dt_fine, &mut fine_buf);
            let out = &mut increments[p * num_steps * d..(p + 1) * num_steps * d];
            if factor == 1 {
                out.copy_from_slice(&fine_buf);
            } else {
                coarsen_increments(&fine_buf, d, factor, out);
            }
        }
        Ok(ParticleDraws {
            initial,
            xi,
            increments,
        })
    }
}

/// Simulate `P` particles for `N` Euler-Maruyama steps on `[0, T]`, particle
/// `p` reading sub-stream `p` of `randomness`.
pub fn simulate_particle_system(
    model: &ModelSpec,
    num_particles: usize,
    num_steps: usize,
    horizon: f64,
    randomness: &RandomBlock,
) -> Result<EmpiricalLaw> {
    if num_particles == 0 || num_steps == 0 {
        return Err(Error::invalid("need at least one particle and one step"));
    }
    if randomness.len() < num_particles {
        return Err(Error::invalid(format!(
            "{} sub-streams cannot drive {num_particles} particles",
            randomness.len()
        )));
    }
    let block = randomness.range(0, num_particles);
    let draws = ParticleDraws::from_block(model, &block, num_steps, horizon)?;
    simulate_from_draws(model, num_steps, horizon, &draws)
}

/// Euler-Maruyama particle system driven by explicit draws.
pub fn simulate_from_draws(
    model: &ModelSpec,
    num_steps: usize,
    horizon: f64,
    draws: &ParticleDraws,
) -> Result<EmpiricalLaw> {
    let d = model.dim();
    let p_count = draws.xi.len();
    if p_count == 0 || num_steps == 0 || !(horizon > 0.0) {
        return Err(Error::invalid("need P >= 1, N >= 1 and T > 0"));
    }
    if draws.initial.len() != p_count * d || draws.increments.len() != p_count * num_steps * d {
        return Err(Error::invalid("draw arrays do not match P, N and d"));
    }
    let w = p_count * d;
    let dt = horizon / num_steps as f64;
    let mut states = vec![0.0; (num_steps + 1) * w];
    states[..w].copy_from_slice(&draws.initial);
    let kernel1 = model.kernel1().clone();
    let kernel2 = model.kernel2().clone();
    let mut summary1 = Vec::with_capacity(num_steps + 1);
    let mut summary2 = Vec::with_capacity(num_steps + 1);
    let mut drift = vec![0.0; d];
    let mut diff = vec![0.0; d * d];

    for n in 0..num_steps {
        let (done, rest) = states.split_at_mut((n + 1) * w);
        let cur = &done[n * w..];
        let next = &mut rest[..w];
        let s1 = kernel1.summarize(cur, d);
        let s2 = kernel2.summarize(cur, d);
        for p in 0..p_count {
            let x = &cur[p * d..(p + 1) * d];
            let k1 = kernel1.average_with(&s1, x, cur, d);
            let k2 = kernel2.average_with(&s2, x, cur, d);
            model.drift(x, k1, draws.xi[p], &mut drift);
            model.diffusion(x, k2, &mut diff);
            let dw = &draws.increments[(p * num_steps + n) * d..(p * num_steps + n + 1) * d];
            for i in 0..d {
                let mut v = x[i] + drift[i] * dt;
                for k in 0..d {
                    v += diff[i * d + k] * dw[k];
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        step: n + 1,
                        what: "particle",
                        index: p,
                    });
                }
                next[p * d + i] = v;
            }
        }
        summary1.push(s1);
        summary2.push(s2);
    }
    let last = &states[num_steps * w..];
    summary1.push(kernel1.summarize(last, d));
    summary2.push(kernel2.summarize(last, d));

    Ok(EmpiricalLaw {
        num_particles: p_count,
        num_steps,
        horizon,
        dim: d,
        states,
        xi: draws.xi.clone(),
        kernel1,
        kernel2,
        summary1,
        summary2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{kuramoto_model, CoefficientLaw, InitialLaw};
    use crate::rng::StreamKey;
    use std::f64::consts::FRAC_PI_2;

    fn deterministic_kuramoto() -> ModelSpec {
        ModelSpec::additive_1d(
            "kuramoto-ode",
            0.0,
            Kernel::SineDifference,
            InitialLaw::PointMass(vec![0.0]),
            CoefficientLaw::Constant(0.0),
        )
        .unwrap()
    }

    fn draws(initial: Vec<f64>, xi: Vec<f64>, n: usize) -> ParticleDraws {
        let p = xi.len();
        ParticleDraws {
            initial,
            xi,
            increments: vec![0.0; p * n],
        }
    }

    #[test]
    fn single_particle_single_step() {
        let m = deterministic_kuramoto();
        let law = simulate_from_draws(&m, 1, 1.0, &draws(vec![0.5], vec![0.1], 1)).unwrap();
        assert!((law.law_lookup(1).unwrap()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn two_particles_single_step() {
        let m = deterministic_kuramoto();
        let law = simulate_from_draws(&m, 1, 1.0, &draws(vec![0.0, FRAC_PI_2], vec![0.0, 0.0], 1))
            .unwrap();
        let end = law.law_lookup(1).unwrap();
        assert!((end[0] + 0.5).abs() < 1e-15, "{end:?}");
        assert!((end[1] - (FRAC_PI_2 + 0.5)).abs() < 1e-15, "{end:?}");
    }

    #[test]
    fn kernel_average_examples() {
        let m = kuramoto_model(0.4, 0.0, 0.2, -0.2, 0.2).unwrap();
        assert_eq!(
            kernel_average(&m, KernelSlot::Drift, &[0.7], &[0.7, 0.7, 0.7]),
            0.0
        );
        assert_eq!(
            kernel_average(&m, KernelSlot::Diffusion, &[0.7], &[0.1, 2.0]),
            0.0
        );
        let v = kernel_average(&m, KernelSlot::Drift, &[0.0], &[FRAC_PI_2, -FRAC_PI_2]);
        assert!(v.abs() < 1e-16);
        let v = kernel_average(&m, KernelSlot::Drift, &[0.0], &[0.0, FRAC_PI_2]);
        assert!((v + 0.5).abs() < 1e-15);
    }

    #[test]
    fn summary_route_matches_direct_sum() {
        let m = kuramoto_model(0.4, 0.0, 0.2, -0.2, 0.2).unwrap();
        let block = RandomBlock::new(StreamKey::root(5), 40, 32);
        let law = simulate_particle_system(&m, 40, 32, 1.0, &block).unwrap();
        for n in [0, 7, 32] {
            for x in [-2.0, 0.1, 1.9] {
                let fast = law.average(KernelSlot::Drift, n, &[x]);
                let slow = kernel_average(&m, KernelSlot::Drift, &[x], law.slice(n));
                assert!((fast - slow).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn lookup_bounds() {
        let m = kuramoto_model(0.4, 0.0, 0.2, -0.2, 0.2).unwrap();
        let block = RandomBlock::new(StreamKey::root(1), 5, 4);
        let law = simulate_particle_system(&m, 5, 4, 1.0, &block).unwrap();
        let init = ParticleDraws::from_block(&m, &block, 4, 1.0)
            .unwrap()
            .initial;
        assert_eq!(law.law_lookup(0).unwrap(), &init[..]);
        assert_eq!(law.law_lookup(4).unwrap().len(), 5);
        assert!(matches!(law.law_lookup(5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn fixed_point_without_drift_or_noise() {
        let m = deterministic_kuramoto();
        let block = RandomBlock::new(StreamKey::root(2), 6, 8);
        let law = simulate_particle_system(&m, 6, 8, 1.0, &block).unwrap();
        for n in 0..=8 {
            assert_eq!(law.law_lookup(n).unwrap(), law.law_lookup(0).unwrap());
        }
    }

    #[test]
    fn sub_streams_reproduce_standalone_run() {
        let m = kuramoto_model(0.4, 0.0, 0.2, -0.2, 0.2).unwrap();
        let block = RandomBlock::new(StreamKey::root(77), 20, 16);
        let half = block.range(10, 10);
        let a = simulate_particle_system(&m, 10, 16, 1.0, &half).unwrap();
        let b = simulate_particle_system(&m, 10, 16, 1.0, &block.range(10, 10)).unwrap();
        assert_eq!(a.states(), b.states());
        // coarse resolution from the same block
        let c = simulate_particle_system(&m, 10, 8, 1.0, &half).unwrap();
        let d = simulate_particle_system(&m, 10, 8, 1.0, &block.range(10, 10)).unwrap();
        assert_eq!(c.states(), d.states());
    }

    #[test]
    fn rejects_incompatible_resolution() {
        let m = kuramoto_model(0.4, 0.0, 0.2, -0.2, 0.2).unwrap();
        let block = RandomBlock::new(StreamKey::root(1), 4, 8);
        assert!(matches!(
            simulate_particle_system(&m, 4, 3, 1.0, &block),
            Err(Error::Resolution(_))
        ));
        assert!(simulate_particle_system(&m, 5, 8, 1.0, &block).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        let m = ModelSpec::new(
            "explode",
            1,
            std::sync::Arc::new(|x: &[f64], _k: f64, _xi: f64, out: &mut [f64]| {
                out[0] = x[0] * x[0] * 1e200
            }),
            std::sync::Arc::new(|_x: &[f64], _k: f64, out: &mut [f64]| out[0] = 0.0),
            Kernel::Zero,
            Kernel::Zero,
            InitialLaw::PointMass(vec![1e100]),
            CoefficientLaw::Constant(0.0),
        )
        .unwrap();
        let err = simulate_from_draws(&m, 2, 1.0, &draws(vec![1e100], vec![0.0], 2)).unwrap_err();
        assert!(matches!(
            err,
            Error::NonFinite {
                step: 1,
                index: 0,
                ..
            }
        ));
    }
}
