//! Shared fixtures for the criterion benches.

use mldlmc_core::control::ControlSettings;
use mldlmc_core::estimators::Problem;
use mldlmc_core::{
    kuramoto_model, offline_control, psi_observable, ControlField, Hierarchy, ModelSpec,
};

pub fn kuramoto() -> ModelSpec {
    kuramoto_model(0.4, 0.0, 0.2, -0.2, 0.2).expect("valid parameters")
}

/// Rare-event problem at threshold `k`, with the offline control when `tilted`.
pub fn rare_event(k: f64, tilted: bool) -> Problem {
    let model = kuramoto();
    let obs = psi_observable(k);
    let control = if tilted {
        let settings = ControlSettings {
            particles: 200,
            ..Default::default()
        };
        offline_control(&model, &obs, &settings, 1.0, 1)
            .expect("control solve")
            .field
    } else {
        ControlField::zero()
    };
    Problem::new(model, obs, control, Hierarchy::default(), 1.0).expect("valid problem")
}
