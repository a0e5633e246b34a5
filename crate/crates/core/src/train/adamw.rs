//! Adaptive-moment optimizer with decoupled weight decay.

use crate::error::{Error, Result};

/// First-moment decay.
pub const ADAM_BETA1: f64 = 0.9;
/// Second-moment decay.
pub const ADAM_BETA2: f64 = 0.999;
/// Denominator stabilizer.
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter moment estimates plus the update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One update: bias-corrected adaptive moments, then decoupled decay
/// `p -= lr*decay*p` applied separately from the gradient-driven step.
pub fn optimizer_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer buffers disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient("optimizer step".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= learning_rate * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * params[i]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_leaves_params_alone() {
        let mut p = vec![1.5, -2.0, 0.25];
        let g = vec![0.0; 3];
        let mut st = OptimizerState::new(3);
        optimizer_step(&mut p, &g, &mut st, 0.1, 0.0).unwrap();
        assert_eq!(p, vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn three_steps_match_hand_computed_trajectory() {
        // Single scalar, constant gradient 2, lr 0.1, no decay. The oracle
        // below recomputes the update rule from its defining formulas.
        let lr = 0.1;
        let g = 2.0;
        let mut p = vec![1.0];
        let mut st = OptimizerState::new(1);

        let mut m = 0.0f64;
        let mut v = 0.0f64;
        let mut expected = 1.0f64;
        for t in 1..=3 {
            optimizer_step(&mut p, &[g], &mut st, lr, 0.0).unwrap();

            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            expected -= lr * m_hat / (v_hat.sqrt() + 1e-8);
            assert!(
                (p[0] - expected).abs() < 1e-15,
                "step {t}: {} vs {expected}",
                p[0]
            );
        }
        // With a constant gradient the first update is very close to -lr.
        assert!((p[0] - (1.0 - 3.0 * lr)).abs() < 1e-3);
    }

    #[test]
    fn pure_decay_shrinks_by_the_decoupled_factor() {
        let mut p = vec![2.0, -4.0];
        let g = vec![0.0; 2];
        let mut st = OptimizerState::new(2);
        let (lr, wd) = (0.05, 0.1);
        optimizer_step(&mut p, &g, &mut st, lr, wd).unwrap();
        assert!((p[0] - 2.0 * (1.0 - lr * wd)).abs() < 1e-15);
        assert!((p[1] - -4.0 * (1.0 - lr * wd)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = vec![1.0];
        let mut st = OptimizerState::new(1);
        assert!(matches!(
            optimizer_step(&mut p, &[f64::NAN], &mut st, 0.1, 0.0),
            Err(Error::NonFiniteGradient(_))
        ));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn step_counter_tracks_updates() {
        let mut p = vec![1.0];
        let mut st = OptimizerState::new(1);
        for _ in 0..5 {
            optimizer_step(&mut p, &[0.3], &mut st, 0.01, 0.0).unwrap();
        }
        assert_eq!(st.step_count(), 5);
    }
}
