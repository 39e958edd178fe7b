//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mldlmc_core::control::ControlSettings;
use mldlmc_core::estimators::Problem;
use mldlmc_core::{
    cos_observable, kuramoto_model, offline_control, psi_observable, AdaptiveConfig, ControlField,
    ErrorBudget, Executor, Hierarchy, ModelSpec, Observable, PilotSizes, RateConstants, Sampler,
    ToleranceMode,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub observable: ObservableConfig,
    pub hierarchy: Hierarchy,
    pub sampler: Sampler,
    pub budget: BudgetConfig,
    /// Pilot sample sizes; the rare-event defaults apply to `psi`.
    pub pilots: Option<PilotSizes>,
    /// Rate constants; defaults follow the sampler, with `s = 1` for `psi`.
    pub rates: Option<RateConstants>,
    pub control: ControlConfig,
    pub experiments: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            workers: 1,
            out: PathBuf::from("out"),
            model: ModelConfig::default(),
            observable: ObservableConfig::default(),
            hierarchy: Hierarchy::default(),
            sampler: Sampler::Antithetic,
            budget: BudgetConfig::default(),
            pilots: None,
            rates: None,
            control: ControlConfig::default(),
            experiments: ExperimentConfig::default(),
        }
    }
}

/// Kuramoto parameters. `x0_variance` is a variance, not a standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub sigma: f64,
    pub x0_mean: f64,
    pub x0_variance: f64,
    pub xi_low: f64,
    pub xi_high: f64,
    pub horizon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sigma: 0.4,
            x0_mean: 0.0,
            x0_variance: 0.2,
            xi_low: -0.2,
            xi_high: 0.2,
            horizon: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObservableConfig {
    Cos,
    /// `Ψ(x - k)`.
    Psi {
        k: f64,
    },
    Constant {
        value: f64,
    },
}

impl Default for ObservableConfig {
    fn default() -> Self {
        ObservableConfig::Psi { k: 2.5 }
    }
}

impl ObservableConfig {
    pub fn build(&self) -> Observable {
        match *self {
            ObservableConfig::Cos => cos_observable(),
            ObservableConfig::Psi { k } => psi_observable(k),
            ObservableConfig::Constant { value } => Observable::constant(value),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub tolerance: f64,
    /// `relative` (TOL_r) or `absolute` (TOL).
    pub mode: ToleranceMode,
    pub theta: f64,
    pub nu: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            tolerance: 0.05,
            mode: ToleranceMode::Relative,
            theta: 0.5,
            nu: 0.05,
        }
    }
}

impl BudgetConfig {
    pub fn build(&self) -> anyhow::Result<ErrorBudget> {
        self.with_tolerance(self.tolerance)
    }

    /// Same budget at another tolerance.
    pub fn with_tolerance(&self, tolerance: f64) -> anyhow::Result<ErrorBudget> {
        let b = ErrorBudget {
            tolerance,
            mode: self.mode,
            theta: self.theta,
            nu: self.nu,
        };
        b.validate()?;
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// `offline`, `zero`, or `file`.
    pub source: ControlSource,
    pub path: Option<PathBuf>,
    pub particles: usize,
    pub steps: usize,
    pub intervals: usize,
    pub floor_rel: f64,
    pub window: Option<(f64, f64)>,
    pub auto_widen: bool,
    /// Seed of the offline law; the run seed when absent.
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlSource {
    Offline,
    Zero,
    File,
}

impl Default for ControlConfig {
    fn default() -> Self {
        let s = ControlSettings::default();
        ControlConfig {
            source: ControlSource::Offline,
            path: None,
            particles: s.particles,
            steps: s.steps,
            intervals: s.intervals,
            floor_rel: s.floor_rel,
            window: s.window,
            auto_widen: s.auto_widen,
            seed: None,
        }
    }
}

impl ControlConfig {
    pub fn settings(&self) -> ControlSettings {
        ControlSettings {
            particles: self.particles,
            steps: self.steps,
            intervals: self.intervals,
            floor_rel: self.floor_rel,
            window: self.window,
            auto_widen: self.auto_widen,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rates: RatesConfig,
    pub importance: ImportanceConfig,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub samplers: Vec<Sampler>,
    pub levels: (usize, usize),
    /// `(M1, M2)` for `V1`, `V2`.
    pub variance_samples: (usize, usize),
    /// `(M1, M2)` for `|E ΔG|`.
    pub bias_samples: (usize, usize),
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig {
            samplers: vec![Sampler::Antithetic, Sampler::Naive],
            levels: (1, 5),
            variance_samples: (100, 10_000),
            bias_samples: (1000, 1000),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceConfig {
    pub level: usize,
    /// Inner counts swept with a single law.
    pub inner_sweep: Vec<usize>,
    pub inner_control_particles: usize,
    pub outer_samples: usize,
    /// `M2` values swept with `outer_samples` laws.
    pub outer_sweep: Vec<usize>,
    pub outer_control_particles: usize,
    pub control_steps: usize,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            level: 3,
            inner_sweep: vec![100, 1000, 10_000, 100_000],
            inner_control_particles: 200,
            outer_samples: 1000,
            outer_sweep: vec![10, 30, 100],
            outer_control_particles: 1000,
            control_steps: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub tolerances: Vec<f64>,
    pub repeats: usize,
    /// Known value of the quantity; computed when absent.
    pub reference: Option<f64>,
    pub reference_tolerance: f64,
    /// Seeds of the two independent reference runs.
    pub reference_seeds: (u64, u64),
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            tolerances: vec![0.2, 0.1, 0.05, 0.025],
            repeats: 20,
            reference: None,
            reference_tolerance: 0.01,
            reference_seeds: (1_000_001, 1_000_002),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.budget.build()?;
        self.hierarchy.validate()?;
        let m = &self.model;
        if !(m.sigma > 0.0 && m.horizon > 0.0 && m.x0_variance >= 0.0 && m.xi_low <= m.xi_high) {
            bail!("model needs sigma > 0, horizon > 0, x0_variance >= 0 and xi_low <= xi_high");
        }
        let c = &self.control;
        if c.particles == 0 || c.steps == 0 || c.intervals < 2 {
            bail!("control needs particles, steps >= 1 and intervals >= 2");
        }
        if c.source == ControlSource::File && c.path.is_none() {
            bail!("control.source = \"file\" needs control.path");
        }
        let r = &self.experiments.rates;
        if r.levels.0 > r.levels.1 || r.levels.1 > self.hierarchy.max_level {
            bail!("rate levels must satisfy first <= last <= hierarchy.max_level");
        }
        let counts = [
            r.variance_samples.0,
            r.variance_samples.1,
            r.bias_samples.0,
            r.bias_samples.1,
        ];
        if counts.iter().any(|&n| n < 2) {
            bail!("rate sample counts must be at least 2");
        }
        let s = &self.experiments.sweep;
        if s.tolerances.iter().any(|&t| !(t > 0.0))
            || !(s.reference_tolerance > 0.0)
            || s.repeats == 0
        {
            bail!("sweep tolerances must be positive and repeats >= 1");
        }
        Ok(())
    }

    pub fn model(&self) -> anyhow::Result<ModelSpec> {
        let m = &self.model;
        Ok(kuramoto_model(
            m.sigma,
            m.x0_mean,
            m.x0_variance,
            m.xi_low,
            m.xi_high,
        )?)
    }

    pub fn executor(&self) -> anyhow::Result<Executor> {
        Ok(Executor::new(self.workers)?)
    }

    pub fn control_seed(&self) -> u64 {
        self.control.seed.unwrap_or(self.seed)
    }

    /// The control named by the config; offline controls are solved here.
    pub fn control_field(&self) -> anyhow::Result<ControlField> {
        match self.control.source {
            ControlSource::Zero => Ok(ControlField::zero()),
            ControlSource::File => {
                let path = self.control.path.as_ref().expect("validated");
                ControlField::load(path)
                    .with_context(|| format!("loading control {}", path.display()))
            }
            ControlSource::Offline => {
                let off = offline_control(
                    &self.model()?,
                    &self.observable.build(),
                    &self.control.settings(),
                    self.model.horizon,
                    self.control_seed(),
                )?;
                Ok(off.field)
            }
        }
    }

    pub fn problem(&self, control: ControlField) -> anyhow::Result<Problem> {
        Ok(Problem::new(
            self.model()?,
            self.observable.build(),
            control,
            self.hierarchy,
            self.model.horizon,
        )?)
    }

    pub fn adaptive(&self, budget: ErrorBudget) -> AdaptiveConfig {
        let mut cfg = AdaptiveConfig::new(self.sampler, budget);
        let rare = matches!(self.observable, ObservableConfig::Psi { .. });
        cfg.pilots = self.pilots.unwrap_or(if rare {
            PilotSizes::rare_event()
        } else {
            PilotSizes::default()
        });
        cfg.max_level = self.hierarchy.max_level;
        cfg.rates = self.rates.unwrap_or_else(|| {
            let mut r = RateConstants::for_sampler(self.sampler);
            if rare {
                r.s = r.s.min(1.0);
            }
            r
        });
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 9\n[observable]\nkind = \"cos\"\n[budget]\ntolerance = 0.1\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.observable, ObservableConfig::Cos);
        assert_eq!(cfg.model, ModelConfig::default());
    }

    #[test]
    fn budget_mode_and_range_are_checked() {
        let abs =
            RunConfig::from_toml("[budget]\nmode = \"absolute\"\ntolerance = 0.01\n").unwrap();
        assert_eq!(abs.budget.build().unwrap().mode, ToleranceMode::Absolute);
        assert!(RunConfig::from_toml("[budget]\nmode = \"both\"\n").is_err());
        assert!(RunConfig::from_toml("[budget]\ntolerance = -1.0\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sead = 3\n").is_err());
    }
}
