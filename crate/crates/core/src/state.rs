//! Mutable iterate `(θ_k, v_k)` with update counters.

use crate::Vector;

#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub theta: Vector,
    pub v: Vector,
    /// Number of committed updates, `theta_updates + v_updates`.
    pub iter: usize,
    pub theta_updates: usize,
    pub v_updates: usize,
}

impl IterateState {
    pub fn new(theta: Vector, v: Vector) -> Self {
        Self {
            theta,
            v,
            iter: 0,
            theta_updates: 0,
            v_updates: 0,
        }
    }

    pub fn commit_theta(&mut self, theta: Vector) {
        self.theta = theta;
        self.theta_updates += 1;
        self.iter += 1;
    }

    pub fn commit_v(&mut self, v: Vector) {
        self.v = v;
        self.v_updates += 1;
        self.iter += 1;
    }
}
