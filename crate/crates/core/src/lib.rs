//! Multilevel double loop Monte Carlo (MLDLMC) estimation of rare-event
//! expectations `E[G(X(T))]` for McKean-Vlasov SDEs.
//!
//! The law of the process is approximated by an interacting particle system
//! ([`particles`]). A realized empirical law is frozen into a decoupled SDE
//! ([`decoupled`]) whose paths are tilted by an importance sampling control
//! obtained from a Kolmogorov backward equation ([`control`]). Level
//! differences are estimated with naive or antithetic couplings
//! ([`estimators`]) and combined by an adaptive multilevel driver
//! ([`adaptive`]).

pub mod adaptive;
pub mod control;
pub mod decoupled;
pub mod error;
pub mod estimators;
pub mod model;
pub mod particles;
pub mod rates;
pub mod rng;
pub mod stats;

pub use adaptive::{
    bias_estimate, extrapolate_variances, optimal_allocation, run_adaptive, run_single_level,
    AdaptiveConfig, ErrorBudget, IterationLog, LevelAllocation, MlmcReport, PilotSizes,
    RateConstants, ToleranceMode,
};
pub use control::{
    control_from_value, offline_control, solve_kbe, ControlField, SpatialGrid, ValueGrid,
};
pub use decoupled::{coupled_pair, simulate_decoupled_path, PathOutcome, WienerPath};
pub use error::{Error, Result};
pub use estimators::{
    dlmc, estimate_variances, level_difference, level_difference_antithetic,
    level_difference_naive, Executor, Hierarchy, LevelStats, Sampler,
};
pub use model::{cos_observable, kuramoto_model, psi_observable, Kernel, ModelSpec, Observable};
pub use particles::{kernel_average, simulate_particle_system, EmpiricalLaw, KernelSlot};
pub use rates::{fit_rate, RateFit};
pub use rng::{RandomBlock, StreamKey};
