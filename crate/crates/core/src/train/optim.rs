use std::f64::consts::PI;

use super::config::Schedule;

/// `p ← p − lr·g` on the entries selected by `mask`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64, mask: &[bool]) {
    for ((p, &g), &m) in params.iter_mut().zip(grads).zip(mask) {
        if m {
            *p -= lr * g;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta_m: f64,
    pub beta_v: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta_m: 0.9,
            beta_v: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; masked entries keep their moments at zero.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64, mask: &[bool]) {
    state.t += 1;
    let t = state.t as i32;
    let c_m = 1.0 - state.beta_m.powi(t);
    let c_v = 1.0 - state.beta_v.powi(t);
    for i in 0..params.len() {
        if !mask[i] {
            continue;
        }
        let g = grads[i];
        state.m[i] = state.beta_m * state.m[i] + (1.0 - state.beta_m) * g;
        state.v[i] = state.beta_v * state.v[i] + (1.0 - state.beta_v) * g * g;
        let m_hat = state.m[i] / c_m;
        let v_hat = state.v[i] / c_v;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

pub fn lr_at(schedule: &Schedule, lr0: f64, epoch: usize, total_epochs: usize) -> f64 {
    match *schedule {
        Schedule::Constant => lr0,
        Schedule::Cosine => {
            let frac = if total_epochs == 0 {
                0.0
            } else {
                epoch as f64 / total_epochs as f64
            };
            lr0 * 0.5 * (1.0 + (PI * frac).cos())
        }
        Schedule::Step { every, factor } => lr0 * factor.powi((epoch / every) as i32),
    }
}

/// Rescales `grads` (masked entries only) to global norm at most `max_norm`.
/// Returns whether clipping happened.
pub fn clip_global_norm(grads: &mut [f64], mask: &[bool], max_norm: f64) -> bool {
    let norm = grads
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(g, _)| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= k);
        true
    } else {
        false
    }
}
