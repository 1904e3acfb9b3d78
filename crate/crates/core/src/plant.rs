//! Stochastic surrogate plant: the clamped linear model plus bounded
//! uniform residual noise.

use nalgebra::Vector4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::types::{ControlInput, DynamicsModel, NoiseModel, TrafficState};

/// Single-owner stepper; the generator advances exactly four draws per step,
/// in DF, DS, AF, AS order.
#[derive(Debug, Clone)]
pub struct PlantStepper {
    model: DynamicsModel,
    noise: NoiseModel,
    rng: ChaCha8Rng,
}

impl PlantStepper {
    /// Seeds the generator from `noise.seed()`.
    pub fn new(model: DynamicsModel, noise: NoiseModel) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(noise.seed());
        PlantStepper { model, noise, rng }
    }

    pub fn model(&self) -> &DynamicsModel {
        &self.model
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Draws one residual vector `w` with `w[i] ∈ [lo[i], hi[i]]`.
    pub fn sample_noise(&mut self) -> Vector4<f64> {
        let lo = self.noise.lo();
        let hi = self.noise.hi();
        let mut w = Vector4::zeros();
        for i in 0..4 {
            let r: f64 = self.rng.gen();
            w[i] = (lo[i] + (hi[i] - lo[i]) * r).clamp(lo[i], hi[i]);
        }
        w
    }

    /// `clamp(A x + B u + w, 0)`.
    pub fn step(&mut self, state: &TrafficState, input: &ControlInput) -> TrafficState {
        let w = self.sample_noise();
        TrafficState::clamped(self.model.predict(state, input) + w)
    }

    /// Iterated [`step`](Self::step); one state per input.
    pub fn rollout(&mut self, x_init: &TrafficState, inputs: &[ControlInput]) -> Vec<TrafficState> {
        let mut out = Vec::with_capacity(inputs.len());
        let mut x = *x_init;
        for u in inputs {
            x = self.step(&x, u);
            out.push(x);
        }
        out
    }
}
