//! McKean-Vlasov problem instances and observables.
//!
//! A [`ModelSpec`] describes
//!
//! ```text
//! dX = b(X, ∫κ1(X, y) μ_t(dy), ξ) dt + σ(X, ∫κ2(X, y) μ_t(dy)) dW,   X(0) ~ μ0
//! ```
//!
//! where `ξ` is a static random coefficient drawn once per particle or path.
//! Drift and diffusion only see the law through the scalar kernel averages.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `b(x, κ̄1, ξ) -> out`.
pub type DriftFn = dyn Fn(&[f64], f64, f64, &mut [f64]) + Send + Sync;
/// `σ(x, κ̄2) -> out`, a `d × d` row-major matrix.
pub type DiffusionFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
pub type KernelFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// Pairwise interaction kernel.
#[derive(Clone)]
pub enum Kernel {
    Zero,
    /// `κ(x, y) = sin(x₀ - y₀)`.
    SineDifference,
    Custom(Arc<KernelFn>),
}

impl Kernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::SineDifference => (x[0] - y[0]).sin(),
            Kernel::Custom(f) => f(x, y),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Kernel::Zero)
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Zero => write!(f, "Zero"),
            Kernel::SineDifference => write!(f, "SineDifference"),
            Kernel::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Law of the initial state `μ0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw {
    PointMass(Vec<f64>),
    /// Independent normal coordinates with the given mean and *variance*.
    Normal {
        mean: f64,
        variance: f64,
    },
}

/// Law of the static per-particle coefficient `ξ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientLaw {
    Constant(f64),
    Uniform { low: f64, high: f64 },
}

impl CoefficientLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            CoefficientLaw::Constant(c) => c,
            CoefficientLaw::Uniform { low, high } => 0.5 * (low + high),
        }
    }
}

/// One McKean-Vlasov SDE. Immutable and cheap to clone.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim: usize,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    kernel1: Kernel,
    kernel2: Kernel,
    initial: InitialLaw,
    coefficient: CoefficientLaw,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("kernel1", &self.kernel1)
            .field("kernel2", &self.kernel2)
            .field("initial", &self.initial)
            .field("coefficient", &self.coefficient)
            .finish()
    }
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        drift: Arc<DriftFn>,
        diffusion: Arc<DiffusionFn>,
        kernel1: Kernel,
        kernel2: Kernel,
        initial: InitialLaw,
        coefficient: CoefficientLaw,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        match &initial {
            InitialLaw::PointMass(x) if x.len() != dim => {
                return Err(Error::invalid("initial point has wrong dimension"))
            }
            InitialLaw::Normal { variance, .. } if !(*variance >= 0.0) => {
                return Err(Error::invalid("initial variance must be non-negative"))
            }
            _ => {}
        }
        if let CoefficientLaw::Uniform { low, high } = coefficient {
            if !(low <= high) {
                return Err(Error::invalid("coefficient law needs low <= high"));
            }
        }
        Ok(ModelSpec {
            name: name.into(),
            dim,
            drift,
            diffusion,
            kernel1,
            kernel2,
            initial,
            coefficient,
        })
    }

    /// One-dimensional model with drift `ξ + κ̄1` and constant diffusion.
    /// With `Kernel::SineDifference` this is the Kuramoto family; with
    /// `Kernel::Zero` and `ξ ≡ 0` it is scaled Brownian motion.
    pub fn additive_1d(
        name: impl Into<String>,
        sigma: f64,
        kernel: Kernel,
        initial: InitialLaw,
        coefficient: CoefficientLaw,
    ) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("diffusion must be finite and non-negative"));
        }
        Self::new(
            name,
            1,
            Arc::new(|_x: &[f64], k1: f64, xi: f64, out: &mut [f64]| out[0] = xi + k1),
            Arc::new(move |_x: &[f64], _k2: f64, out: &mut [f64]| out[0] = sigma),
            kernel,
            Kernel::Zero,
            initial,
            coefficient,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kernel1(&self) -> &Kernel {
        &self.kernel1
    }

    pub fn kernel2(&self) -> &Kernel {
        &self.kernel2
    }

    pub fn initial_law(&self) -> &InitialLaw {
        &self.initial
    }

    pub fn coefficient_law(&self) -> CoefficientLaw {
        self.coefficient
    }

    #[inline]
    pub fn drift(&self, x: &[f64], kbar1: f64, xi: f64, out: &mut [f64]) {
        (self.drift)(x, kbar1, xi, out)
    }

    #[inline]
    pub fn diffusion(&self, x: &[f64], kbar2: f64, out: &mut [f64]) {
        (self.diffusion)(x, kbar2, out)
    }

    pub fn sample_initial<R: RngCore + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.initial {
            InitialLaw::PointMass(x) => out.copy_from_slice(x),
            InitialLaw::Normal { mean, variance } => {
                let normal = Normal::new(*mean, variance.sqrt()).expect("validated variance");
                for v in out.iter_mut() {
                    *v = normal.sample(rng);
                }
            }
        }
    }

    pub fn sample_coefficient<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.coefficient {
            CoefficientLaw::Constant(c) => c,
            CoefficientLaw::Uniform { low, high } if low < high => Uniform::new(low, high)
                .expect("validated bounds")
                .sample(rng),
            CoefficientLaw::Uniform { low, .. } => {
                // degenerate interval still consumes a draw so streams stay aligned
                let _: f64 = rng.random();
                low
            }
        }
    }
}

/// Fully connected Kuramoto model
/// `dX_p = (ξ_p + (1/P) Σ_q sin(X_p - X_q)) dt + σ dW_p`,
/// `X_p(0) ~ N(x0_mean, x0_variance)`, `ξ_p ~ U(xi_low, xi_high)`.
pub fn kuramoto_model(
    sigma: f64,
    x0_mean: f64,
    x0_variance: f64,
    xi_low: f64,
    xi_high: f64,
) -> Result<ModelSpec> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    ModelSpec::additive_1d(
        "kuramoto",
        sigma,
        Kernel::SineDifference,
        InitialLaw::Normal {
            mean: x0_mean,
            variance: x0_variance,
        },
        CoefficientLaw::Uniform {
            low: xi_low,
            high: xi_high,
        },
    )
}

/// Observable `G: R^d -> R`.
#[derive(Clone)]
pub struct Observable {
    name: String,
    threshold: Option<f64>,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("name", &self.name)
            .field("threshold", &self.threshold)
            .finish()
    }
}

impl Observable {
    pub fn new(
        name: impl Into<String>,
        threshold: Option<f64>,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Observable {
            name: name.into(),
            threshold,
            eval: Arc::new(eval),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), None, move |_| c)
    }

    /// `λ·G`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let inner = self.eval.clone();
        Observable {
            name: format!("{lambda}*{}", self.name),
            threshold: self.threshold,
            eval: Arc::new(move |x| lambda * inner(x)),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }
}

/// Piecewise-linear ramp: 0 below -1/2, `1/2 + x` in between, 1 above 1/2.
#[inline]
pub fn psi(x: f64) -> f64 {
    (0.5 + x).clamp(0.0, 1.0)
}

/// Rare-event observable `x ↦ Ψ(x₀ - K)`.
pub fn psi_observable(k: f64) -> Observable {
    Observable::new(format!("psi(x-{k})"), Some(k), move |x| psi(x[0] - k))
}

/// Smooth observable `x ↦ cos(x₀)`.
pub fn cos_observable() -> Observable {
    Observable::new("cos", None, |x| x[0].cos())
}

/// Default spatial window used by the control solver for this observable.
pub(crate) fn default_window(observable: &Observable) -> (f64, f64) {
    let right = observable.threshold().unwrap_or(PI);
    (-PI - 4.0, right + 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn kuramoto() -> ModelSpec {
        kuramoto_model(0.4, 0.0, 0.2, -0.2, 0.2).unwrap()
    }

    #[test]
    fn kernel_is_sine_of_difference() {
        let m = kuramoto();
        let v = m.kernel1().eval(&[0.3], &[0.1]);
        assert!((v - 0.2f64.sin()).abs() < 1e-15);
        assert!((v - 0.19867).abs() < 1e-5);
        assert!(m.kernel2().is_zero());
    }

    #[test]
    fn drift_with_vanishing_interaction_is_xi() {
        let m = kuramoto();
        let mut out = [0.0];
        // all particles at x: κ̄1 = sin(0) = 0
        let k1 = m.kernel1().eval(&[1.2], &[1.2]);
        m.drift(&[1.2], k1, 0.13, &mut out);
        assert_eq!(out[0], 0.13);
        m.diffusion(&[1.2], 0.0, &mut out);
        assert_eq!(out[0], 0.4);
    }

    #[test]
    fn rejects_non_positive_sigma() {
        assert!(kuramoto_model(0.0, 0.0, 0.2, -0.2, 0.2).is_err());
        assert!(kuramoto_model(-1.0, 0.0, 0.2, -0.2, 0.2).is_err());
        assert!(kuramoto_model(0.4, 0.0, 0.2, 0.3, 0.2).is_err());
    }

    #[test]
    fn psi_branches() {
        let g = psi_observable(2.5);
        assert_eq!(g.eval(&[2.5]), 0.5);
        assert_eq!(g.eval(&[1.0]), 0.0);
        assert_eq!(psi_observable(0.0).eval(&[10.0]), 1.0);
        assert_eq!(g.threshold(), Some(2.5));
    }

    #[test]
    fn cos_values() {
        let g = cos_observable();
        assert_eq!(g.eval(&[0.0]), 1.0);
        assert_eq!(g.eval(&[PI]), -1.0);
        assert!((g.eval(&[1.0]) - 0.540_302_305_868_139_8).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_pure() {
        let m = kuramoto();
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (mut xa, mut xb) = ([0.0], [0.0]);
        m.sample_initial(&mut a, &mut xa);
        m.sample_initial(&mut b, &mut xb);
        assert_eq!(xa, xb);
        assert_eq!(m.sample_coefficient(&mut a), m.sample_coefficient(&mut b));
    }

    #[test]
    fn initial_law_uses_variance() {
        let m = kuramoto();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let mut x = [0.0];
        let mut s2 = 0.0;
        for _ in 0..n {
            m.sample_initial(&mut rng, &mut x);
            s2 += x[0] * x[0];
        }
        let var = s2 / n as f64;
        assert!((var - 0.2).abs() < 0.005, "sample variance {var}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn psi_is_monotone_and_one_lipschitz(a in -5.0f64..5.0, b in -5.0f64..5.0) {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assert!(psi(lo) <= psi(hi));
                prop_assert!(psi(hi) - psi(lo) <= hi - lo + 1e-15);
                prop_assert!((0.0..=1.0).contains(&psi(a)));
            }

            #[test]
            fn sine_kernel_is_translation_invariant(x in -4.0f64..4.0, y in -4.0f64..4.0, c in -3.0f64..3.0) {
                let k = Kernel::SineDifference;
                prop_assert!((k.eval(&[x], &[y]) - k.eval(&[x + c], &[y + c])).abs() < 1e-12);
            }
        }
    }
}
