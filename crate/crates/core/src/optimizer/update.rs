//! First-order parameter updates.

use super::config::OptimizerKind;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Moment estimates carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    m: [f64; 6],
    v: [f64; 6],
    t: u32,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, weight_decay: f64) -> Self {
        Self {
            kind,
            weight_decay,
            m: [0.0; 6],
            v: [0.0; 6],
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }
}

/// One descent step on the free parameters. The caller projects afterwards.
pub fn update_step(phi: &mut [f64; 6], grad: &[f64; 6], state: &mut OptimizerState, lr: f64) {
    state.t += 1;
    match state.kind {
        OptimizerKind::Sgd => {
            for (p, g) in phi.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam | OptimizerKind::AdamW => {
            if state.kind == OptimizerKind::AdamW {
                // Decoupled decay, applied before the moment step.
                for p in phi.iter_mut() {
                    *p -= lr * state.weight_decay * *p;
                }
            }
            let t = state.t as i32;
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            for i in 0..6 {
                state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * grad[i];
                state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                let m_hat = state.m[i] / c1;
                let v_hat = state.v[i] / c2;
                phi[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}
