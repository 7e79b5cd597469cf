use crate::nn::{Gradients, ParameterSet};

/// Momentum buffers plus the number of completed iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Gradients,
    pub iteration: u64,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet) -> Self {
        OptimizerState {
            velocity: Gradients::zeros_like(params),
            iteration: 0,
        }
    }
}

/// Rescales `grads` to global norm `max_norm` when it is larger. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale((max_norm / norm) as f32);
    }
    norm
}

/// `v ← m·v + g + wd·θ` (decay on conv weights only), `θ ← θ − lr·v`, restricted to
/// parameters accepted by `update`.
pub fn sgd_update(
    params: &mut ParameterSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    update: impl Fn(&str) -> bool,
) {
    let (lr, m, wd) = (lr as f32, momentum as f32, weight_decay as f32);
    for ((p, g), v) in params.iter_mut().zip(grads.iter()).zip(state.velocity.iter_mut()) {
        if !update(&p.name) {
            continue;
        }
        let decay = if p.kind.decays() { wd } else { 0.0 };
        for ((theta, &gi), vi) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = m * *vi + gi + decay * *theta;
            *theta -= lr * *vi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NetworkConfig, Networks};
    use crate::nn::ParamKind;
    use rand::SeedableRng;

    fn params() -> ParameterSet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        Networks::init(&NetworkConfig::default(), &mut rng).unwrap().1
    }

    #[test]
    fn zero_gradient_step_only_decays_conv_weights() {
        let before = params();
        let mut after = before.clone();
        let mut state = OptimizerState::new(&after);
        let (lr, wd) = (0.01, 5e-4);
        sgd_update(&mut after, &Gradients::zeros_like(&before), &mut state, lr, 0.9, wd, |_| true);
        for (a, b) in after.iter().zip(before.iter()) {
            let factor = if b.kind == ParamKind::ConvWeight { 1.0 - (lr * wd) as f32 } else { 1.0 };
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y * factor).abs() <= 1e-7 * y.abs().max(1.0), "{}", a.name);
            }
        }
    }

    #[test]
    fn normalization_parameters_never_decay() {
        let p = params();
        for q in p.iter() {
            let is_norm = q.name.contains(".gn.") || q.name.contains(".ln.");
            if is_norm {
                assert!(!q.kind.decays(), "{}", q.name);
            }
            if q.name.ends_with(".weight") {
                assert!(q.kind.decays(), "{}", q.name);
            }
        }
    }

    #[test]
    fn filter_freezes_parameters() {
        let before = params();
        let mut after = before.clone();
        let mut grads = Gradients::zeros_like(&before);
        grads.iter_mut().for_each(|g| g.fill(1.0));
        let mut state = OptimizerState::new(&after);
        sgd_update(&mut after, &grads, &mut state, 0.1, 0.9, 0.0, |n| n.starts_with("seg."));
        for (a, b) in after.iter().zip(before.iter()) {
            assert_eq!(a.data == b.data, !a.name.starts_with("seg."), "{}", a.name);
        }
    }

    #[test]
    fn clipping_caps_the_norm() {
        let p = params();
        let mut g = Gradients::zeros_like(&p);
        g.iter_mut().for_each(|s| s.fill(1.0));
        let before = clip_global_norm(&mut g, 10.0);
        assert!(before > 10.0);
        assert!((g.global_norm() - 10.0).abs() < 1e-3);
    }
}
