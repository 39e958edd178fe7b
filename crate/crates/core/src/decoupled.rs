//! Decoupled paths: one process driven by a frozen empirical law, optionally
//! tilted by an importance sampling control.
//!
//! Under the tilted measure the path follows
//! `X̄_{n+1} = X̄_n + (b + σ ζ(t_n, X̄_n)) Δt + σ ΔW_n` and carries the
//! likelihood `L = Π exp(-½ ζ² Δt - ζ ΔW_n)`, which is exact for Gaussian
//! increments, so `E[G(X̄) L]` under the tilt equals `E[G(X̄)]` untilted.

use rand::RngCore;

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::particles::{EmpiricalLaw, KernelSlot};
use crate::rng::{coarsen_increments, fill_increments};

/// Randomness `ω̄` of one decoupled path: initial state, coefficient and
/// Wiener increments (`steps × dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct WienerPath {
    pub x0: Vec<f64>,
    pub xi: f64,
    pub increments: Vec<f64>,
    pub steps: usize,
    pub horizon: f64,
}

impl WienerPath {
    /// Draws in order: initial state, coefficient, `steps · d` normals.
    pub fn sample<R: RngCore + ?Sized>(
        model: &ModelSpec,
        rng: &mut R,
        steps: usize,
        horizon: f64,
    ) -> Self {
        let d = model.dim();
        let mut x0 = vec![0.0; d];
        model.sample_initial(rng, &mut x0);
        let xi = model.sample_coefficient(rng);
        let mut increments = vec![0.0; steps * d];
        fill_increments(rng, horizon / steps as f64, &mut increments);
        WienerPath {
            x0,
            xi,
            increments,
            steps,
            horizon,
        }
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Redraw in place from `rng`, keeping the resolution.
    pub(crate) fn redraw<R: RngCore + ?Sized>(&mut self, model: &ModelSpec, rng: &mut R) {
        model.sample_initial(rng, &mut self.x0);
        self.xi = model.sample_coefficient(rng);
        fill_increments(rng, self.horizon / self.steps as f64, &mut self.increments);
    }

    /// Same path at `steps / factor` resolution.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let mut out = WienerPath {
            x0: self.x0.clone(),
            xi: self.xi,
            increments: Vec::new(),
            steps: 0,
            horizon: self.horizon,
        };
        self.coarsen_into(factor, &mut out)?;
        Ok(out)
    }

    pub fn coarsen_into(&self, factor: usize, out: &mut WienerPath) -> Result<()> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::Resolution(format!(
                "{} steps cannot be coarsened by {factor}",
                self.steps
            )));
        }
        let d = self.dim();
        out.x0.clone_from(&self.x0);
        out.xi = self.xi;
        out.horizon = self.horizon;
        out.steps = self.steps / factor;
        out.increments.resize(out.steps * d, 0.0);
        coarsen_increments(&self.increments, d, factor, &mut out.increments);
        Ok(())
    }
}

/// Terminal state and likelihood of a decoupled path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathOutcome {
    pub terminal: Vec<f64>,
    pub log_likelihood: f64,
    /// Largest `|ζ|` met along the path.
    pub max_control: f64,
}

impl PathOutcome {
    pub fn likelihood(&self) -> f64 {
        self.log_likelihood.exp()
    }
}

/// Euler-Maruyama on the law's grid, writing the terminal state to `state`.
/// Returns `(log L, max |ζ|)`.
pub(crate) fn advance_path(
    model: &ModelSpec,
    law: &EmpiricalLaw,
    control: &ControlField,
    path: &WienerPath,
    state: &mut [f64],
    drift: &mut [f64],
    diff: &mut [f64],
) -> Result<(f64, f64)> {
    let d = model.dim();
    let steps = law.num_steps();
    let dt = law.dt();
    let tilted = !control.is_zero();
    state.copy_from_slice(&path.x0);
    let (mut log_l, mut max_z) = (0.0f64, 0.0f64);
    for n in 0..steps {
        let k1 = law.average(KernelSlot::Drift, n, state);
        let k2 = law.average(KernelSlot::Diffusion, n, state);
        model.drift(state, k1, path.xi, drift);
        model.diffusion(state, k2, diff);
        let dw = &path.increments[n * d..(n + 1) * d];
        if tilted {
            let z = control.eval(n as f64 * dt, state[0]);
            let s = diff[0];
            log_l -= 0.5 * z * z * dt + z * dw[0];
            max_z = max_z.max(z.abs());
            state[0] += (drift[0] + s * z) * dt + s * dw[0];
        } else {
            for i in 0..d {
                let mut v = drift[i] * dt;
                for k in 0..d {
                    v += diff[i * d + k] * dw[k];
                }
                drift[i] = v;
            }
            for (x, v) in state.iter_mut().zip(drift.iter()) {
                *x += v;
            }
        }
        if let Some(i) = state.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: n + 1,
                what: "decoupled path",
                index: i,
            });
        }
    }
    Ok((log_l, max_z))
}

fn check_path(
    model: &ModelSpec,
    law: &EmpiricalLaw,
    control: &ControlField,
    path: &WienerPath,
) -> Result<()> {
    if path.dim() != model.dim() || law.dim() != model.dim() {
        return Err(Error::invalid("path, law and model dimensions differ"));
    }
    if path.steps != law.num_steps() {
        return Err(Error::Resolution(format!(
            "path has {} steps, law has {}",
            path.steps,
            law.num_steps()
        )));
    }
    if (path.horizon - law.horizon()).abs() > 1e-12 * law.horizon() {
        return Err(Error::invalid("path and law use different horizons"));
    }
    if !control.is_zero() && model.dim() != 1 {
        return Err(Error::invalid("a non-zero control needs d = 1"));
    }
    Ok(())
}

/// Simulate one decoupled path under `law` with the control applied.
pub fn simulate_decoupled_path(
    model: &ModelSpec,
    law: &EmpiricalLaw,
    control: &ControlField,
    path: &WienerPath,
) -> Result<PathOutcome> {
    check_path(model, law, control, path)?;
    let d = model.dim();
    let mut terminal = vec![0.0; d];
    let (mut drift, mut diff) = (vec![0.0; d], vec![0.0; d * d]);
    let (log_likelihood, max_control) = advance_path(
        model,
        law,
        control,
        path,
        &mut terminal,
        &mut drift,
        &mut diff,
    )?;
    Ok(PathOutcome {
        terminal,
        log_likelihood,
        max_control,
    })
}

/// Run the same `ω̄` under a fine law and a coarse law. `path` is at the fine
/// resolution and is block-summed for the coarse run.
pub fn coupled_pair(
    model: &ModelSpec,
    fine_law: &EmpiricalLaw,
    coarse_law: &EmpiricalLaw,
    control: &ControlField,
    path: &WienerPath,
) -> Result<(PathOutcome, PathOutcome)> {
    let (nf, nc) = (fine_law.num_steps(), coarse_law.num_steps());
    if nc == 0 || nf % nc != 0 {
        return Err(Error::Resolution(format!(
            "fine grid of {nf} steps does not nest a coarse grid of {nc}"
        )));
    }
    let fine = simulate_decoupled_path(model, fine_law, control, path)?;
    let coarse_path = path.coarsen(nf / nc)?;
    let coarse = simulate_decoupled_path(model, coarse_law, control, &coarse_path)?;
    Ok((fine, coarse))
}
