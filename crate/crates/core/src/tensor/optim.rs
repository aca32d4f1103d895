use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, ShapeError, Tensor};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    first: Tensor,
    second: Tensor,
    steps: u64,
}

/// Moment estimates for every parameter that has received a gradient.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<Moments>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, step: 0, moments: Vec::new() }
    }

    /// Number of completed updates.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Scales all gradients by `max_norm / g` when their global 2-norm `g`
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.global_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

/// One bias-corrected Adam update. Parameters without a gradient, or that
/// are frozen, are left untouched.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<(), ShapeError> {
    for (id, g) in grads.iter() {
        let p = params.get(id);
        if p.value.shape() != g.shape() {
            return Err(ShapeError { shape: p.value.shape().to_vec(), expected: p.value.len(), actual: g.len() });
        }
    }
    if state.moments.len() < params.len() {
        state.moments.resize(params.len(), None);
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    for (id, g) in grads.iter() {
        let p = params.get(id);
        if !p.requires_grad {
            continue;
        }
        let shape = p.value.shape().to_vec();
        let m = state.moments[id.index()].get_or_insert_with(|| Moments {
            first: Tensor::zeros(&shape),
            second: Tensor::zeros(&shape),
            steps: 0,
        });
        m.steps += 1;
        let c1 = 1.0 - libm::pow(beta1, m.steps as f64);
        let c2 = 1.0 - libm::pow(beta2, m.steps as f64);
        let value = params.value_mut(id).data_mut();
        let (first, second) = (m.first.data_mut(), m.second.data_mut());
        for (k, &gk) in g.data().iter().enumerate() {
            first[k] = beta1 * first[k] + (1.0 - beta1) * gk;
            second[k] = beta2 * second[k] + (1.0 - beta2) * gk * gk;
            let m_hat = first[k] / c1;
            let v_hat = second[k] / c2;
            value[k] -= lr * m_hat / (math::sqrt(v_hat) + eps);
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Mode, Tape};
    use alloc::vec;
    use proptest::prelude::*;

    fn one_param(v: Vec<f64>) -> (ParamStore, crate::tensor::ParamId) {
        let mut ps = ParamStore::new();
        let id = ps.add("p", Tensor::vector(v), true);
        (ps, id)
    }

    #[test]
    fn clip_leaves_small_gradients() {
        let (_, id) = one_param(vec![0.0, 0.0]);
        let mut g = Gradients::zeroed(1);
        g.set(id, Tensor::vector(vec![0.3, 0.4]));
        let norm = clip_global_norm(&mut g, 1.0);
        assert!((norm - 0.5).abs() < 1e-15);
        assert_eq!(g.get(id).unwrap().data(), &[0.3, 0.4]);
    }

    #[test]
    fn clip_rescales_large_gradients() {
        let (_, id) = one_param(vec![0.0, 0.0]);
        let mut g = Gradients::zeroed(1);
        g.set(id, Tensor::vector(vec![3.0, 4.0]));
        clip_global_norm(&mut g, 1.0);
        let d = g.get(id).unwrap().data();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clip_empty_is_noop() {
        let mut g = Gradients::zeroed(0);
        assert_eq!(clip_global_norm(&mut g, 1.0), 0.0);
    }

    proptest! {
        #[test]
        fn clipped_norm_never_exceeds_max(
            vals in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 1..6), 1..5),
            max in 0.01f64..10.0,
        ) {
            let mut ps = ParamStore::new();
            let mut g = Gradients::zeroed(vals.len());
            for (k, v) in vals.iter().enumerate() {
                let id = ps.add(alloc::format!("p{k}"), Tensor::vector(v.clone()), true);
                g.set(id, Tensor::vector(v.clone()));
            }
            let before = g.global_norm();
            clip_global_norm(&mut g, max);
            let after = g.global_norm();
            prop_assert!(after <= max * (1.0 + 1e-12));
            if before <= max {
                prop_assert_eq!(before, after);
            }
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut ps, id) = one_param(vec![0.0]);
        let mut g = Gradients::zeroed(1);
        g.set(id, Tensor::vector(vec![1.0]));
        let mut st = AdamState::new(AdamConfig::default());
        adam_step(&mut ps, &g, &mut st).unwrap();
        assert!((ps.value(id).data()[0] + 0.001).abs() < 1e-10);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let (mut ps, id) = one_param(vec![0.5]);
        let mut st = AdamState::new(AdamConfig::default());
        let mut g = Gradients::zeroed(1);
        g.set(id, Tensor::vector(vec![1.0]));
        adam_step(&mut ps, &g, &mut st).unwrap();
        let m1 = st.moments[0].as_ref().unwrap().first.data()[0];
        let v1 = st.moments[0].as_ref().unwrap().second.data()[0];
        g.set(id, Tensor::vector(vec![0.0]));
        adam_step(&mut ps, &g, &mut st).unwrap();
        let m = st.moments[0].as_ref().unwrap();
        assert!((m.first.data()[0] - 0.9 * m1).abs() < 1e-15);
        assert!((m.second.data()[0] - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_fresh_parameter() {
        let (mut ps, id) = one_param(vec![0.25]);
        let mut st = AdamState::new(AdamConfig::default());
        let mut z = Gradients::zeroed(1);
        z.set(id, Tensor::vector(vec![0.0]));
        for _ in 0..10 {
            adam_step(&mut ps, &z, &mut st).unwrap();
        }
        assert_eq!(ps.value(id).data()[0], 0.25);
        assert_eq!(st.step(), 10);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (mut ps, id) = one_param(vec![0.0, 1.0]);
        let mut g = Gradients::zeroed(1);
        g.set(id, Tensor::vector(vec![1.0]));
        let mut st = AdamState::new(AdamConfig::default());
        assert!(adam_step(&mut ps, &g, &mut st).is_err());
    }

    #[test]
    fn converges_on_quadratic() {
        let (mut ps, id) = one_param(vec![0.0]);
        let mut st = AdamState::new(AdamConfig::default());
        let mut steps = 0;
        for _ in 0..10_000 {
            let grads = {
                let mut tape = Tape::new(&ps, Mode::Train, 0);
                let p = tape.param(id);
                let three = tape.constant(Tensor::vector(vec![3.0]));
                let d = tape.sub(p, three);
                let sq = tape.mul(d, d);
                let loss = tape.sum(sq);
                tape.backward(loss).unwrap()
            };
            adam_step(&mut ps, &grads, &mut st).unwrap();
            steps += 1;
            if (ps.value(id).data()[0] - 3.0).abs() < 0.01 {
                break;
            }
        }
        assert!((ps.value(id).data()[0] - 3.0).abs() < 0.01, "stalled after {steps} steps");
    }
}
