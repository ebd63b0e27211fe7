use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
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

/// First/second moment estimates mirroring a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        AdamState { config, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// One bias-corrected Adam update. Nothing is modified when an error is
/// returned.
pub fn adam_step(params: &mut ParamStore, grads: &ParamStore, state: &mut AdamState) -> Result<()> {
    params.check_aligned(grads)?;
    params.check_aligned(&state.m)?;
    params.check_aligned(&state.v)?;
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(name.clone()));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let p = p.data_mut();
        let (m, v) = (m.data_mut(), v.data_mut());
        for (k, &gk) in g.data().iter().enumerate() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
            v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::from_vec(&[1], vec![v]).unwrap()).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op_on_parameters() {
        let mut p = scalar(0.7);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &scalar(0.0), &mut s).unwrap();
        assert_eq!(p, scalar(0.7));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        // m̂ = g, v̂ = g², so Δ = -lr · g / (|g| + ε)
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &scalar(1.0), &mut s).unwrap();
        let expected = -0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p.get("x").unwrap().data()[0] - expected).abs() < 1e-15);
        adam_step(&mut p, &scalar(1.0), &mut s).unwrap();
        assert!((p.get("x").unwrap().data()[0] - 2.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_nan_and_misaligned() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(matches!(adam_step(&mut p, &scalar(f64::NAN), &mut s), Err(Error::NonFiniteGradient(_))));
        assert_eq!(s.step, 0);
        let mut other = ParamStore::new();
        other.insert("y", Tensor::zeros(&[1])).unwrap();
        assert!(matches!(adam_step(&mut p, &other, &mut s), Err(Error::ShapeMismatch(_))));
    }
}
