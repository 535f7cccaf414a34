use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// SGD with classical momentum: `v <- mu v - lr g; p <- p + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState<S> {
    pub momentum: S,
    velocity: Vec<Tensor<S>>,
    /// Completed epochs.
    pub epoch: u64,
}

impl<S: Scalar> SgdState<S> {
    pub fn new(params: &ParamSet<S>, momentum: S) -> Self {
        Self {
            momentum,
            velocity: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
            epoch: 0,
        }
    }

    pub fn velocity(&self) -> &[Tensor<S>] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.velocity
    }

    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &[Tensor<S>], lr: S) {
        debug_assert!(lr > S::zero(), "learning rate must be positive");
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        assert_eq!(params.len(), self.velocity.len(), "one velocity per parameter");
        let mu = self.momentum;
        for ((p, g), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.velocity.iter_mut())
        {
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            for ((pi, &gi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(v.data_mut().iter_mut())
            {
                *vi = mu * *vi - lr * gi;
                *pi += *vi;
            }
        }
    }
}

/// Constant, then linear decay to a floor, then the floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    /// Last epoch at the base rate.
    pub hold_until: u32,
    pub floor: f64,
    /// First epoch at the floor rate.
    pub floor_at: u32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 1e-3,
            hold_until: 600,
            floor: 1e-5,
            floor_at: 1200,
        }
    }
}

impl LrSchedule {
    /// Same shape as the default, with the hold and decay phases placed at
    /// 40% and 80% of a shorter run.
    pub fn compressed(base: f64, floor: f64, epochs: u32) -> Self {
        let hold_until = (epochs * 2 / 5).max(1);
        let floor_at = (epochs * 4 / 5).max(hold_until + 1);
        Self {
            base,
            hold_until,
            floor,
            floor_at,
        }
    }

    /// Rate for a 1-based epoch.
    pub fn rate(&self, epoch: u32) -> f64 {
        if epoch <= self.hold_until {
            self.base
        } else if epoch >= self.floor_at {
            self.floor
        } else {
            let span = (self.floor_at - self.hold_until) as f64;
            let t = (epoch - self.hold_until) as f64 / span;
            self.base + (self.floor - self.base) * t
        }
    }
}
