//! Importance sampling control from the linear Kolmogorov backward equation.
//!
//! For a frozen empirical law the value function `v` solves
//!
//! ```text
//! ∂t v + b(x, κ̄1) ∂x v + ½ σ²(x, κ̄2) ∂xx v = 0,   v(T, x) = |G(x)|
//! ```
//!
//! and the variance-minimizing tilt is `ζ = σ ∂x log v`. Only `d = 1` is
//! supported. The equation is stepped backward with implicit Euler on the
//! law's time grid, central differences in space and homogeneous Neumann
//! boundaries, one tridiagonal solve per step.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{default_window, ModelSpec, Observable};
use crate::particles::{simulate_particle_system, EmpiricalLaw, KernelSlot};
use crate::rng::{RandomBlock, StreamKey};

pub const DEFAULT_INTERVALS: usize = 2000;
pub const DEFAULT_FLOOR_REL: f64 = 1e-12;

/// Uniform grid of `intervals + 1` nodes on `[x_min, x_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub intervals: usize,
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, intervals: usize) -> Result<Self> {
        if !(x_min < x_max) || intervals < 2 || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::invalid(format!(
                "bad spatial grid [{x_min}, {x_max}] with {intervals} intervals"
            )));
        }
        Ok(SpatialGrid {
            x_min,
            x_max,
            intervals,
        })
    }

    /// `[-π-4, K+4]` (or `[-π-4, π+4]` without a threshold), default resolution.
    pub fn default_for(observable: &Observable) -> Self {
        let (a, b) = default_window(observable);
        SpatialGrid {
            x_min: a,
            x_max: b,
            intervals: DEFAULT_INTERVALS,
        }
    }

    pub fn nodes(&self) -> usize {
        self.intervals + 1
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / self.intervals as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.h()
    }

    pub fn refined(&self) -> Self {
        SpatialGrid {
            intervals: 2 * self.intervals,
            ..*self
        }
    }

    /// Extend both ends by `margin` keeping the spacing.
    pub fn widened(&self, margin: f64) -> Self {
        let h = self.h();
        let extra = (margin / h).ceil() as usize;
        SpatialGrid {
            x_min: self.x_min - extra as f64 * h,
            x_max: self.x_max + extra as f64 * h,
            intervals: self.intervals + 2 * extra,
        }
    }
}

/// `v(t_n, x_j)` on the law's time grid.
#[derive(Clone, Debug)]
pub struct ValueGrid {
    pub grid: SpatialGrid,
    pub horizon: f64,
    pub num_steps: usize,
    /// `(N+1) × (J+1)`, row `n` at time `t_n`.
    pub values: Vec<f64>,
}

impl ValueGrid {
    pub fn row(&self, n: usize) -> &[f64] {
        let w = self.grid.nodes();
        &self.values[n * w..(n + 1) * w]
    }

    /// Linear interpolation of `v(t_n, ·)` at `x`.
    pub fn at(&self, n: usize, x: f64) -> f64 {
        interp_row(self.row(n), &self.grid, x)
    }
}

fn interp_row(row: &[f64], grid: &SpatialGrid, x: f64) -> f64 {
    let s = ((x - grid.x_min) / grid.h()).clamp(0.0, grid.intervals as f64);
    let j = (s as usize).min(grid.intervals - 1);
    let f = s - j as f64;
    row[j] * (1.0 - f) + row[j + 1] * f
}

/// Thomas algorithm; `lower[0]` and `upper[n-1]` are ignored.
pub(crate) fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
    scratch: &mut [f64],
    out: &mut [f64],
) {
    let n = diag.len();
    let mut denom = diag[0];
    scratch[0] = upper[0] / denom;
    out[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * scratch[i - 1];
        scratch[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        out[i] = (rhs[i] - lower[i] * out[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        out[i] -= scratch[i] * out[i + 1];
    }
}

fn require_1d(model: &ModelSpec) -> Result<()> {
    if model.dim() != 1 {
        return Err(Error::invalid("the control solver supports d = 1 only"));
    }
    Ok(())
}

/// Backward-in-time finite-difference solution of the KBE for `v`.
pub fn solve_kbe(
    model: &ModelSpec,
    law: &EmpiricalLaw,
    observable: &Observable,
    grid: &SpatialGrid,
) -> Result<ValueGrid> {
    require_1d(model)?;
    let nodes = grid.nodes();
    let steps = law.num_steps();
    let h = grid.h();
    let dt = law.dt();
    let xi = model.coefficient_law().mean();

    let terminal: Vec<f64> = (0..nodes)
        .map(|j| observable.eval(&[grid.node(j)]).abs())
        .collect();
    if terminal.iter().all(|&g| g == 0.0) {
        return Err(Error::invalid("|G| vanishes on the whole grid"));
    }

    let mut values = vec![0.0; (steps + 1) * nodes];
    values[steps * nodes..].copy_from_slice(&terminal);

    let (mut lower, mut diag, mut upper) = (vec![0.0; nodes], vec![0.0; nodes], vec![0.0; nodes]);
    let mut scratch = vec![0.0; nodes];
    let mut b = [0.0];
    let mut s = [0.0];
    for n in (0..steps).rev() {
        for j in 0..nodes {
            let x = [grid.node(j)];
            model.drift(&x, law.average(KernelSlot::Drift, n, &x), xi, &mut b);
            model.diffusion(&x, law.average(KernelSlot::Diffusion, n, &x), &mut s);
            let a = s[0] * s[0];
            let conv = dt * b[0] / (2.0 * h);
            let diff = dt * a / (2.0 * h * h);
            if j == 0 {
                diag[j] = 1.0 + 2.0 * diff;
                upper[j] = -2.0 * diff;
            } else if j == nodes - 1 {
                lower[j] = -2.0 * diff;
                diag[j] = 1.0 + 2.0 * diff;
            } else {
                lower[j] = conv - diff;
                diag[j] = 1.0 + 2.0 * diff;
                upper[j] = -conv - diff;
            }
        }
        let (head, tail) = values.split_at_mut((n + 1) * nodes);
        let rhs = &tail[..nodes];
        let out = &mut head[n * nodes..];
        solve_tridiagonal(&lower, &diag, &upper, rhs, &mut scratch, out);
        if let Some(j) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: n,
                what: "value node",
                index: j,
            });
        }
    }
    Ok(ValueGrid {
        grid: *grid,
        horizon: law.horizon(),
        num_steps: steps,
        values,
    })
}

/// Largest `|v_J(0,x) - v_2J(0,x)|` over the coarse nodes, relative to `max |v_J(0,·)|`.
pub fn refinement_discrepancy(
    model: &ModelSpec,
    law: &EmpiricalLaw,
    observable: &Observable,
    grid: &SpatialGrid,
) -> Result<f64> {
    let coarse = solve_kbe(model, law, observable, grid)?;
    let fine = solve_kbe(model, law, observable, &grid.refined())?;
    let (c, f) = (coarse.row(0), fine.row(0));
    let scale = c
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    Ok(c.iter()
        .enumerate()
        .map(|(j, v)| (v - f[2 * j]).abs())
        .fold(0.0, f64::max)
        / scale)
}

/// [`solve_kbe`] that fails when the `J` and `2J` solutions disagree by more
/// than `tolerance` (relative).
pub fn solve_kbe_verified(
    model: &ModelSpec,
    law: &EmpiricalLaw,
    observable: &Observable,
    grid: &SpatialGrid,
    tolerance: f64,
) -> Result<ValueGrid> {
    let discrepancy = refinement_discrepancy(model, law, observable, grid)?;
    if discrepancy > tolerance {
        return Err(Error::GridUnresolved {
            discrepancy,
            tolerance,
        });
    }
    solve_kbe(model, law, observable, grid)
}

/// Widen `grid` in steps of 2 until `v(0,·)` on `[bulk.0, bulk.1]` moves by
/// less than `rel_tol` relative. Returns the grid and the number of widenings.
pub fn widen_until_insensitive(
    model: &ModelSpec,
    law: &EmpiricalLaw,
    observable: &Observable,
    grid: &SpatialGrid,
    bulk: (f64, f64),
    rel_tol: f64,
) -> Result<(SpatialGrid, usize)> {
    let mut current = *grid;
    let mut v = solve_kbe(model, law, observable, &current)?;
    for widenings in 0..8 {
        let wider = current.widened(2.0);
        let vw = solve_kbe(model, law, observable, &wider)?;
        let h = current.h();
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        let mut x = bulk.0.max(current.x_min);
        while x <= bulk.1.min(current.x_max) {
            let a = v.at(0, x);
            diff = diff.max((a - vw.at(0, x)).abs());
            scale = scale.max(a.abs());
            x += h;
        }
        if diff <= rel_tol * scale.max(f64::MIN_POSITIVE) {
            return Ok((current, widenings));
        }
        current = wider;
        v = vw;
    }
    Ok((current, 8))
}

#[derive(Clone, Debug)]
struct FieldData {
    grid: SpatialGrid,
    horizon: f64,
    num_steps: usize,
    values: Vec<f64>,
}

/// Space-time control `ζ(t, x)`, bilinear in `(t, x)` and clamped to the edge
/// values outside the grid. The data-less field is `ζ ≡ 0` in any dimension.
#[derive(Clone, Debug)]
pub struct ControlField {
    data: Option<FieldData>,
    zero: bool,
}

impl ControlField {
    pub fn zero() -> Self {
        ControlField {
            data: None,
            zero: true,
        }
    }

    pub fn from_parts(
        horizon: f64,
        num_steps: usize,
        grid: SpatialGrid,
        values: Vec<f64>,
    ) -> Result<Self> {
        SpatialGrid::new(grid.x_min, grid.x_max, grid.intervals)?;
        if !(horizon > 0.0) || num_steps == 0 {
            return Err(Error::invalid("control needs T > 0 and at least one step"));
        }
        if values.len() != (num_steps + 1) * grid.nodes() {
            return Err(Error::invalid("control values do not match the grids"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("control values must be finite"));
        }
        let zero = values.iter().all(|&v| v == 0.0);
        Ok(ControlField {
            data: Some(FieldData {
                grid,
                horizon,
                num_steps,
                values,
            }),
            zero,
        })
    }

    /// True when `ζ ≡ 0`; paths then carry likelihood exactly 1.
    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn grid(&self) -> Option<&SpatialGrid> {
        self.data.as_ref().map(|d| &d.grid)
    }

    pub fn num_steps(&self) -> Option<usize> {
        self.data.as_ref().map(|d| d.num_steps)
    }

    pub fn values(&self) -> &[f64] {
        self.data.as_ref().map_or(&[], |d| &d.values)
    }

    /// `ζ(t_n, x_j)` at grid nodes.
    pub fn node_value(&self, n: usize, j: usize) -> f64 {
        match &self.data {
            Some(d) => d.values[n * d.grid.nodes() + j],
            None => 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let Some(d) = &self.data else { return 0.0 };
        if self.zero {
            return 0.0;
        }
        let w = d.grid.nodes();
        let st = (t / d.horizon * d.num_steps as f64).clamp(0.0, d.num_steps as f64);
        let n = (st as usize).min(d.num_steps - 1);
        let ft = st - n as f64;
        let lo = interp_row(&d.values[n * w..(n + 1) * w], &d.grid, x);
        if ft == 0.0 {
            return lo;
        }
        let hi = interp_row(&d.values[(n + 1) * w..(n + 2) * w], &d.grid, x);
        lo + ft * (hi - lo)
    }

    /// Flat little-endian file: `T: f64, N: u64, x_min: f64, x_max: f64,
    /// J: u64`, then `(N+1)(J+1)` row-major `f64` values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self
            .data
            .as_ref()
            .ok_or_else(|| Error::Format("the data-less zero field has no grid to save".into()))?;
        w.write_all(&d.horizon.to_le_bytes())?;
        w.write_all(&(d.num_steps as u64).to_le_bytes())?;
        w.write_all(&d.grid.x_min.to_le_bytes())?;
        w.write_all(&d.grid.x_max.to_le_bytes())?;
        w.write_all(&(d.grid.intervals as u64).to_le_bytes())?;
        for v in &d.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut buf)
                .map_err(|e| Error::Format(format!("truncated control file: {e}")))?;
            Ok(buf)
        };
        let horizon = f64::from_le_bytes(next(&mut r)?);
        let num_steps = u64::from_le_bytes(next(&mut r)?) as usize;
        let x_min = f64::from_le_bytes(next(&mut r)?);
        let x_max = f64::from_le_bytes(next(&mut r)?);
        let intervals = u64::from_le_bytes(next(&mut r)?) as usize;
        let count = num_steps
            .checked_add(1)
            .and_then(|a| a.checked_mul(intervals.checked_add(1)?))
            .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
        let mut values = Vec::with_capacity(count.min(1 << 26));
        for _ in 0..count {
            values.push(f64::from_le_bytes(next(&mut r)?));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after control values".into()));
        }
        let grid = SpatialGrid::new(x_min, x_max, intervals)?;
        Self::from_parts(horizon, num_steps, grid, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

const FLAT_LOG_SPREAD: f64 = 1e-10;

/// `ζ(t_n, x_j) = σ(x_j, κ̄2) · ∂x log max(v, floor)`, central differences
/// inside, one-sided at the edges.
pub fn control_from_value(
    model: &ModelSpec,
    law: &EmpiricalLaw,
    values: &ValueGrid,
    floor: f64,
) -> Result<ControlField> {
    require_1d(model)?;
    if !(floor > 0.0) {
        return Err(Error::invalid("value floor must be positive"));
    }
    if values.num_steps != law.num_steps() {
        return Err(Error::Resolution(
            "value grid and law use different time grids".into(),
        ));
    }
    if values.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("value grid holds non-finite entries"));
    }
    let grid = values.grid;
    let nodes = grid.nodes();
    let h = grid.h();
    let mut out = vec![0.0; values.values.len()];
    let mut logv = vec![0.0; nodes];
    let mut s = [0.0];
    for n in 0..=values.num_steps {
        for (l, v) in logv.iter_mut().zip(values.row(n)) {
            *l = v.max(floor).ln();
        }
        let (lo, hi) = logv
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &l| {
                (a.min(l), b.max(l))
            });
        // A row flat up to rounding (constant observable) carries no control.
        if hi - lo <= FLAT_LOG_SPREAD {
            continue;
        }
        for j in 0..nodes {
            let grad = if j == 0 {
                (logv[1] - logv[0]) / h
            } else if j == nodes - 1 {
                (logv[j] - logv[j - 1]) / h
            } else {
                (logv[j + 1] - logv[j - 1]) / (2.0 * h)
            };
            let x = [grid.node(j)];
            model.diffusion(&x, law.average(KernelSlot::Diffusion, n, &x), &mut s);
            out[n * nodes + j] = s[0] * grad;
        }
    }
    ControlField::from_parts(values.horizon, values.num_steps, grid, out)
}

/// Settings for the offline control solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSettings {
    pub particles: usize,
    pub steps: usize,
    pub intervals: usize,
    pub floor_rel: f64,
    /// Explicit `[x_min, x_max]`; defaults to the observable's window.
    pub window: Option<(f64, f64)>,
    pub auto_widen: bool,
}

impl Default for ControlSettings {
    fn default() -> Self {
        ControlSettings {
            particles: 1000,
            steps: 100,
            intervals: DEFAULT_INTERVALS,
            floor_rel: DEFAULT_FLOOR_REL,
            window: None,
            auto_widen: true,
        }
    }
}

/// Control plus solver diagnostics.
#[derive(Clone, Debug)]
pub struct OfflineControl {
    pub field: ControlField,
    pub grid: SpatialGrid,
    pub widenings: usize,
    /// Relative `J` vs `2J` disagreement of `v(0,·)`.
    pub refinement_discrepancy: f64,
}

/// Simulate one `(P̄, N̄)` law, solve the KBE on it and return the control
/// used at every level.
pub fn offline_control(
    model: &ModelSpec,
    observable: &Observable,
    settings: &ControlSettings,
    horizon: f64,
    seed: u64,
) -> Result<OfflineControl> {
    require_1d(model)?;
    let block = RandomBlock::new(
        StreamKey::root(seed).child(0x0ff1_13e0),
        settings.particles,
        settings.steps,
    );
    let law = simulate_particle_system(model, settings.particles, settings.steps, horizon, &block)?;
    let mut grid = match settings.window {
        Some((a, b)) => SpatialGrid::new(a, b, settings.intervals)?,
        None => {
            let g = SpatialGrid::default_for(observable);
            SpatialGrid::new(g.x_min, g.x_max, settings.intervals)?
        }
    };
    let mut widenings = 0;
    if settings.auto_widen {
        let (a, b) = default_window(observable);
        (grid, widenings) =
            widen_until_insensitive(model, &law, observable, &grid, (a + 4.0, b - 4.0), 1e-6)?;
    }
    let values = solve_kbe(model, &law, observable, &grid)?;
    let refinement_discrepancy = refinement_discrepancy(model, &law, observable, &grid)?;
    if refinement_discrepancy > 1e-3 {
        log::warn!("control grid refinement discrepancy {refinement_discrepancy:.2e}");
    }
    let gmax = (0..grid.nodes())
        .map(|j| observable.eval(&[grid.node(j)]).abs())
        .fold(0.0, f64::max);
    let field = control_from_value(model, &law, &values, settings.floor_rel * gmax)?;
    Ok(OfflineControl {
        field,
        grid,
        widenings,
        refinement_discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{kuramoto_model, psi_observable, CoefficientLaw, InitialLaw, Kernel};

    fn brownian(sigma: f64) -> ModelSpec {
        ModelSpec::additive_1d(
            "brownian",
            sigma,
            Kernel::Zero,
            InitialLaw::PointMass(vec![0.0]),
            CoefficientLaw::Constant(0.0),
        )
        .unwrap()
    }

    fn law_for(model: &ModelSpec, steps: usize) -> EmpiricalLaw {
        let block = RandomBlock::new(StreamKey::root(1), 1, steps);
        simulate_particle_system(model, 1, steps, 1.0, &block).unwrap()
    }

    #[test]
    fn thomas_solves_small_system() {
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] -> x = [1 1 1]
        let mut scratch = [0.0; 3];
        let mut out = [0.0; 3];
        solve_tridiagonal(
            &[0.0, -1.0, -1.0],
            &[2.0, 2.0, 2.0],
            &[-1.0, -1.0, 0.0],
            &[1.0, 0.0, 1.0],
            &mut scratch,
            &mut out,
        );
        for v in out {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn transport_free_equation_keeps_terminal_data() {
        let m = brownian(0.0);
        let law = law_for(&m, 10);
        let g = psi_observable(1.0);
        let grid = SpatialGrid::new(-3.0, 3.0, 300).unwrap();
        let v = solve_kbe(&m, &law, &g, &grid).unwrap();
        for n in 0..=10 {
            for j in 0..grid.nodes() {
                assert_eq!(v.row(n)[j], g.eval(&[grid.node(j)]));
            }
        }
    }

    #[test]
    fn constants_are_preserved() {
        let m = kuramoto_model(0.4, 0.0, 0.2, -0.2, 0.2).unwrap();
        let block = RandomBlock::new(StreamKey::root(3), 50, 20);
        let law = simulate_particle_system(&m, 50, 20, 1.0, &block).unwrap();
        let g = Observable::constant(0.7);
        let grid = SpatialGrid::new(-7.0, 7.0, 500).unwrap();
        let v = solve_kbe(&m, &law, &g, &grid).unwrap();
        for x in &v.values {
            assert!((x - 0.7).abs() < 1e-13, "{x}");
        }
        let z = control_from_value(&m, &law, &v, 1e-12).unwrap();
        assert!(z.values().iter().all(|&c| c.abs() < 1e-10));
    }

    #[test]
    fn heat_semigroup_closed_form() {
        let sigma = 0.4;
        let m = brownian(sigma);
        let law = law_for(&m, 100);
        // shifted so that |G| = G
        let g = Observable::new("2+cos", None, |x| 2.0 + x[0].cos());
        let grid = SpatialGrid::default_for(&crate::model::cos_observable());
        let v = solve_kbe(&m, &law, &g, &grid).unwrap();
        for x in [0.0, 0.5, -1.0] {
            let exact = 2.0 + f64::cos(x) * (-sigma * sigma / 2.0).exp();
            assert!((v.at(0, x) - exact).abs() < 1e-3);
        }
    }

    #[test]
    fn exponential_value_gives_constant_control() {
        let sigma = 0.3;
        let a = 0.8;
        let m = brownian(sigma);
        let law = law_for(&m, 4);
        let grid = SpatialGrid::new(-2.0, 2.0, 40).unwrap();
        let values: Vec<f64> = (0..5)
            .flat_map(|_| (0..grid.nodes()).map(|j| (a * grid.node(j)).exp()))
            .collect();
        let vg = ValueGrid {
            grid,
            horizon: 1.0,
            num_steps: 4,
            values,
        };
        let z = control_from_value(&m, &law, &vg, 1e-300).unwrap();
        for n in 0..=4 {
            for j in 0..grid.nodes() {
                assert!((z.node_value(n, j) - sigma * a).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn floored_region_is_flat() {
        let m = brownian(0.5);
        let law = law_for(&m, 2);
        let grid = SpatialGrid::new(-1.0, 1.0, 20).unwrap();
        let values = vec![1e-30; 3 * grid.nodes()];
        let vg = ValueGrid {
            grid,
            horizon: 1.0,
            num_steps: 2,
            values,
        };
        let z = control_from_value(&m, &law, &vg, 1e-12).unwrap();
        assert!(z.is_zero());
    }

    #[test]
    fn bilinear_evaluation_and_clamping() {
        let grid = SpatialGrid::new(0.0, 2.0, 2).unwrap();
        // rows t=0: [0, 1, 2], t=1: [10, 11, 12]
        let f =
            ControlField::from_parts(1.0, 1, grid, vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]).unwrap();
        assert_eq!(f.eval(0.0, 0.5), 0.5);
        assert_eq!(f.eval(0.5, 1.0), 6.0);
        assert_eq!(f.eval(0.0, -5.0), 0.0);
        assert_eq!(f.eval(1.0, 9.0), 12.0);
        assert_eq!(f.eval(2.0, 1.0), 11.0);
        assert_eq!(ControlField::zero().eval(0.3, 1.0), 0.0);
    }

    #[test]
    fn file_round_trip() {
        let grid = SpatialGrid::new(-1.0, 3.0, 3).unwrap();
        let values: Vec<f64> = (0..12).map(|i| i as f64 * 0.25 - 1.0).collect();
        let f = ControlField::from_parts(2.0, 2, grid, values.clone()).unwrap();
        let mut bytes = Vec::new();
        f.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 40 + 8 * 12);
        let g = ControlField::read_from(&bytes[..]).unwrap();
        assert_eq!(g.values(), &values[..]);
        assert_eq!(g.grid(), Some(&grid));
        assert!(ControlField::read_from(&bytes[..bytes.len() - 1]).is_err());
        assert!(ControlField::zero().write_to(Vec::new()).is_err());
    }

    #[test]
    fn unresolved_grid_is_diagnosed() {
        let m = brownian(0.05);
        let law = law_for(&m, 20);
        let g = psi_observable(0.0);
        let coarse = SpatialGrid::new(-3.0, 3.0, 6).unwrap();
        assert!(matches!(
            solve_kbe_verified(&m, &law, &g, &coarse, 1e-4),
            Err(Error::GridUnresolved { .. })
        ));
    }

    #[test]
    fn zero_observable_is_rejected() {
        let m = brownian(0.4);
        let law = law_for(&m, 4);
        let grid = SpatialGrid::new(-1.0, 1.0, 10).unwrap();
        assert!(solve_kbe(&m, &law, &Observable::constant(0.0), &grid).is_err());
    }
}
