use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: BTreeMap<String, Vec<f64>>,
    pub second_moment: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params.iter().map(|(k, t)| (k.clone(), vec![0.0; t.numel()])).collect();
        Self {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One update. Parameters without an entry in `grads` see a zero
    /// gradient.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<(), NumericsError> {
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; p.numel()]);
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; p.numel()]);
            if m.len() != p.numel() || v.len() != p.numel() {
                return Err(NumericsError::StateMismatch {
                    name: name.clone(),
                    expected: p.numel(),
                    got: m.len(),
                });
            }
            let g = grads.get(name).map(|t| t.data());
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(x: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(x));
        p
    }

    fn grad(name: &str, g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = scalar_params(1.5);
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &grad("x", 3.0), 0.0).unwrap();
        assert_eq!(p.get("x").unwrap().item(), 1.5);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn positive_gradient_decreases_param() {
        let mut p = scalar_params(0.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &grad("x", 0.2), 0.01).unwrap();
        assert!(p.get("x").unwrap().item() < 0.0);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut p = scalar_params(1.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let x = p.get("x").unwrap().item();
            st.step(&mut p, &grad("x", 2.0 * x), 0.1).unwrap();
            let now = p.get("x").unwrap().item().abs();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn missing_gradient_is_zero() {
        let mut p = scalar_params(2.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &BTreeMap::new(), 0.1).unwrap();
        assert_eq!(p.get("x").unwrap().item(), 2.0);
    }
}
