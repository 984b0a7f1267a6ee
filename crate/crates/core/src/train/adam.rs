//! Adam with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::net::params::NetParams;
use crate::train::backward::GradientSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment accumulators, one pair per parameter tensor, in the
/// flat tensor order of [`NetParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &NetParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.data.len()])
            .collect();
        Self {
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            lr,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub(crate) fn from_parts(
        lr: f64,
        step: u64,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    ) -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            lr,
            step,
            first,
            second,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }
}

/// One Adam step. Frozen tensors are left untouched.
pub fn adam_update(
    params: &mut NetParams,
    grads: &GradientSet,
    state: &mut AdamState,
) -> Result<()> {
    if !params.same_layout(grads.as_params()) {
        return Err(Error::dim("gradient layout does not match parameters"));
    }
    let views = params.tensors_mut();
    if views.len() != state.first.len()
        || views
            .iter()
            .zip(&state.first)
            .any(|(v, m)| v.data.len() != m.len())
    {
        return Err(Error::dim("optimizer state does not match parameters"));
    }
    state.step += 1;
    let k = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(k);
    let c2 = 1.0 - state.beta2.powi(k);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.lr);
    for (((view, g), m), v) in views
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        if !view.trainable {
            continue;
        }
        for (((theta, &gi), mi), vi) in view
            .data
            .iter_mut()
            .zip(g.data)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::NetConfig;

    fn tiny() -> NetParams {
        NetParams::init(NetConfig::new(2, 2).with_stages(1).with_channels(1), 3).unwrap()
    }

    fn filled_grads(p: &NetParams, value: f64) -> GradientSet {
        let mut inner = p.zeros_like();
        for t in inner.tensors_mut() {
            t.data.fill(value);
        }
        GradientSet(inner)
    }

    #[test]
    fn zero_gradient_leaves_params_bit_identical() {
        let mut p = tiny();
        let before = p.clone();
        let mut st = AdamState::new(&p, 1e-3);
        for _ in 0..3 {
            {
                let g = GradientSet::zeros_like(&p);
                adam_update(&mut p, &g, &mut st)
            }
            .unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step(), 3);
    }

    #[test]
    fn first_step_hand_evaluation() {
        let mut p = tiny();
        let before = p.stage(0).step;
        let mut st = AdamState::new(&p, 0.01);
        {
            let g = filled_grads(&p, 1.0);
            adam_update(&mut p, &g, &mut st)
        }
        .unwrap();
        assert!((st.first_moments()[0][0] - 0.1).abs() < 1e-15);
        assert!((st.second_moments()[0][0] - 0.001).abs() < 1e-15);
        let delta = p.stage(0).step - before;
        assert!((delta - (-0.01 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_sign_times_lr() {
        for g in [1.0, 10.0, 100.0, -1.0, -10.0, -100.0] {
            let mut p = tiny();
            let before = p.clone();
            let mut st = AdamState::new(&p, 0.01);
            {
                let g = filled_grads(&p, g);
                adam_update(&mut p, &g, &mut st)
            }
            .unwrap();
            for (a, b) in p.tensors().iter().zip(before.tensors()) {
                if !a.trainable {
                    continue;
                }
                for (x, y) in a.data.iter().zip(b.data) {
                    let delta = x - y;
                    assert!((delta + 0.01 * g.signum()).abs() <= 1e-6 * 0.01);
                }
            }
        }
    }

    #[test]
    fn scale_invariance_of_first_step() {
        let mut p1 = tiny();
        let mut p10 = tiny();
        let before = p1.stage(0).step;
        let mut s1 = AdamState::new(&p1, 0.01);
        let mut s10 = AdamState::new(&p10, 0.01);
        {
            let g = filled_grads(&p1, 2.0);
            adam_update(&mut p1, &g, &mut s1)
        }
        .unwrap();
        {
            let g = filled_grads(&p10, 20.0);
            adam_update(&mut p10, &g, &mut s10)
        }
        .unwrap();
        let d1 = p1.stage(0).step - before;
        let d10 = p10.stage(0).step - before;
        assert!(((d1 - d10) / d1).abs() < 1e-5);
    }

    #[test]
    fn second_moments_stay_nonnegative() {
        let mut p = tiny();
        let mut st = AdamState::new(&p, 1e-3);
        for (i, g) in [1.0, -5.0, 0.25, -0.01].iter().enumerate() {
            {
                let g = filled_grads(&p, *g);
                adam_update(&mut p, &g, &mut st)
            }
            .unwrap();
            assert_eq!(st.step(), i as u64 + 1);
            assert!(st.second_moments().iter().flatten().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn layout_mismatch_rejected() {
        let mut p = tiny();
        let other =
            NetParams::init(NetConfig::new(2, 2).with_stages(2).with_channels(1), 3).unwrap();
        let mut st = AdamState::new(&p, 1e-3);
        assert!(adam_update(&mut p, &GradientSet::zeros_like(&other), &mut st).is_err());
    }
}
