//! Seeded perturbations of case data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Source of standard normal draws.
pub trait NormalSource {
    fn next_normal(&mut self) -> f64;
}

/// Box–Muller on ChaCha8, which is counter based and gives the same stream
/// on every platform.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }
}

impl NormalSource for GaussianStream {
    fn next_normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        // u1 in (0, 1] keeps the log finite
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = std::f64::consts::TAU * u2;
        self.spare = Some(r * a.sin());
        r * a.cos()
    }
}

/// Test hook: every draw returns the same value.
#[derive(Debug, Clone, Copy)]
pub struct ConstantNormal(pub f64);

impl NormalSource for ConstantNormal {
    fn next_normal(&mut self) -> f64 {
        self.0
    }
}

/// `c ∘ (0.99 + 0.02 ξ)`.
pub fn perturb_costs(costs: &[f64], source: &mut impl NormalSource) -> Vec<f64> {
    costs.iter().map(|c| c * (0.99 + 0.02 * source.next_normal())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLoads {
    pub loads: Vec<f64>,
    pub factors: Vec<f64>,
    /// Indices whose scale factor came out negative. They are kept.
    pub negative: Vec<usize>,
}

/// Scales each load by `ω + (ω' − ω) ξ` with one draw per entry.
pub fn randomize_loads(loads: &[f64], omega: f64, omega_prime: f64, source: &mut impl NormalSource) -> ScaledLoads {
    assert!(omega <= omega_prime, "need omega <= omega', got {omega} > {omega_prime}");
    let factors: Vec<f64> = loads
        .iter()
        .map(|_| omega + (omega_prime - omega) * source.next_normal())
        .collect();
    ScaledLoads {
        loads: loads.iter().zip(&factors).map(|(l, f)| l * f).collect(),
        negative: factors
            .iter()
            .enumerate()
            .filter(|(_, f)| **f < 0.0)
            .map(|(i, _)| i)
            .collect(),
        factors,
    }
}

/// Load-scaling intervals `(ω, ω')` applied at successive change points.
pub const CHANGE_POINTS: [(f64, f64); 5] = [(0.70, 1.30), (0.80, 1.20), (0.85, 1.15), (0.75, 1.20), (0.95, 1.05)];
