use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::nn::{Gradients, Matrix, ParamStore};

/// Warmup then inverse-square-root decay:
/// `factor · d^-0.5 · min(step^-0.5, step · warmup^-1.5)` for 1-based `step`.
pub fn noam_lr(step: u64, d_model: usize, warmup: u64, factor: f64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    factor * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: HashMap<String, Matrix>,
    v: HashMap<String, Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates every trainable tensor that has a gradient; frozen tensors are
    /// never written.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            let (r, c) = g.shape();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(r, c));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(r, c));
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.value.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_peaks_at_warmup() {
        let lr = |s| noam_lr(s, 64, 10, 1.0);
        assert!(lr(5) < lr(10));
        assert!(lr(20) < lr(10));
        assert!((lr(10) - 64f64.powf(-0.5) * 10f64.powf(-0.5)).abs() < 1e-15);
        assert!((lr(1) - 0.125 * 10f64.powf(-1.5)).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = ParamStore::new();
        p.insert("w", Matrix::from_vec(1, 2, vec![1.0, 1.0]));
        p.insert("frozen", Matrix::from_vec(1, 1, vec![5.0]));
        p.set_trainable("frozen", false);
        let mut g = Gradients::new();
        g.insert("w".into(), Matrix::from_vec(1, 2, vec![0.3, -2.0]));
        g.insert("frozen".into(), Matrix::from_vec(1, 1, vec![1.0]));
        Adam::new(AdamConfig::default()).step(&mut p, &g, 0.1);
        let w = &p.get("w").unwrap().value.data;
        assert!((w[0] - 0.9).abs() < 1e-8 && (w[1] - 1.1).abs() < 1e-8);
        assert_eq!(p.get("frozen").unwrap().value.data[0], 5.0);
    }
}
