use super::{Gradients, NnError, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 2e-4, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments shaped like `blocks`.
    pub fn new(config: AdamConfig, blocks: &[&[T]]) -> Self {
        let zeros = || blocks.iter().map(|b| vec![T::zero(); b.len()]).collect::<Vec<_>>();
        AdamState { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.second
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
) -> Result<(), NnError> {
    let shapes_ok = params.len() == grads.blocks.len()
        && params.len() == state.first.len()
        && params
            .iter()
            .zip(&grads.blocks)
            .zip(&state.first)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_ok {
        return Err(NnError::ShapeMismatch("parameters, gradients and moments disagree".into()));
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = T::lit(c.beta1);
    let b2 = T::lit(c.beta2);
    let one = T::one();
    let correction1 = T::lit(1.0 - c.beta1.powi(t));
    let correction2 = T::lit(1.0 - c.beta2.powi(t));
    let lr = T::lit(c.learning_rate);
    let eps = T::lit(c.epsilon);
    for (bi, (block, g)) in params.iter_mut().zip(&grads.blocks).enumerate() {
        let m = &mut state.first[bi];
        let v = &mut state.second[bi];
        let mut finite = true;
        for i in 0..block.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            block[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            finite &= block[i].is_finite();
        }
        if !finite {
            return Err(NnError::NonFinite(bi));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads(v: Vec<Vec<f64>>) -> Gradients<f64> {
        Gradients { blocks: v }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut state = AdamState::new(AdamConfig::default(), &[&p]);
        adam_step(&mut [&mut p[..]], &grads(vec![vec![0.0; 3]]), &mut state).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m = (1-b1) g, v = (1-b2) g^2; bias correction restores g and g^2,
        // so the step is lr * g / (|g| + eps).
        let cfg = AdamConfig { learning_rate: 0.01, beta1: 0.9, beta2: 0.99, epsilon: 1e-8 };
        let g = [0.5, -4.0, 1e-3];
        let mut p = vec![0.0; 3];
        let mut state = AdamState::new(cfg, &[&p]);
        adam_step(&mut [&mut p[..]], &grads(vec![g.to_vec()]), &mut state).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-12, "{pi} vs {expected}");
        }
        assert!((state.first_moments()[0][1] - (-0.4)).abs() < 1e-12);
        assert!((state.second_moments()[0][1] - 0.16).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![0.3f32, 0.1];
            let mut state = AdamState::new(AdamConfig::default(), &[&p]);
            for k in 0..5 {
                let g = Gradients { blocks: vec![vec![0.1 * k as f32, -0.2]] };
                adam_step(&mut [&mut p[..]], &g, &mut state).unwrap();
            }
            (p, state)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let mut p = vec![0.0f64; 2];
        let mut state = AdamState::new(AdamConfig::default(), &[&p]);
        assert!(matches!(
            adam_step(&mut [&mut p[..]], &grads(vec![vec![0.0; 3]]), &mut state),
            Err(NnError::ShapeMismatch(_))
        ));
        let mut q = vec![f64::MAX, 0.0];
        let mut state = AdamState::new(AdamConfig { learning_rate: -f64::MAX, ..Default::default() }, &[&q]);
        assert_eq!(adam_step(&mut [&mut q[..]], &grads(vec![vec![1.0, 0.0]]), &mut state), Err(NnError::NonFinite(0)));
    }
}
