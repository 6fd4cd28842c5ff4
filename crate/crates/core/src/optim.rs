use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::Network;
use crate::tensor::Float;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999 }
    }
}

/// Adam with bias correction. Moments are stored per parameter in the
/// network's visiting order.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub steps: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, steps: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step<N: Network<T> + ?Sized>(&mut self, net: &mut N) {
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2 } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = (1.0 - beta2.powi(t)).sqrt();
        let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
        let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - beta1), T::from_f64_lossy(1.0 - beta2));
        let step_size = T::from_f64_lossy(lr / c1);
        let inv_c2 = T::from_f64_lossy(1.0 / c2);
        let eps = T::from_f64_lossy(ADAM_EPS);
        let fresh = self.m.is_empty();
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        net.visit_params(&mut |_, p| {
            if fresh {
                ms.push(vec![T::zero(); p.len()]);
                vs.push(vec![T::zero(); p.len()]);
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            for (((w, &g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *w = *w - step_size * *m / ((*v).sqrt() * inv_c2 + eps);
            }
            idx += 1;
        });
    }

    /// Moments paired with parameter names, for serialization.
    pub fn named_state<N: Network<T> + ?Sized>(&self, net: &mut N) -> Vec<(String, &[T], &[T])> {
        let names = net.param_names();
        if self.m.is_empty() {
            return Vec::new();
        }
        names
            .into_iter()
            .zip(self.m.iter().zip(&self.v))
            .map(|(n, (m, v))| (n, m.as_slice(), v.as_slice()))
            .collect()
    }

    /// Restore moments; `state` maps parameter names to `(m, v)`.
    pub fn restore<N: Network<T> + ?Sized>(
        &mut self,
        net: &mut N,
        steps: u64,
        mut state: impl FnMut(&str) -> Option<(Vec<T>, Vec<T>)>,
    ) -> Result<()> {
        self.steps = steps;
        self.m.clear();
        self.v.clear();
        if steps == 0 {
            return Ok(());
        }
        let mut missing = None;
        let (ms, vs) = (&mut self.m, &mut self.v);
        net.visit_params(&mut |name, p| match state(&name) {
            Some((m, v)) if m.len() == p.len() && v.len() == p.len() => {
                ms.push(m);
                vs.push(v);
            }
            _ => {
                missing.get_or_insert(name);
            }
        });
        match missing {
            Some(name) => Err(Error::CheckpointMismatch(format!("optimizer state for {name} missing or misshaped"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Param;

    struct One(Param<f64>);

    impl Network<f64> for One {
        fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Param<f64>)) {
            f("w".into(), &mut self.0);
        }
        fn visit_buffers(&mut self, _: &mut dyn FnMut(String, &mut Vec<f64>)) {}
        fn set_train(&mut self, _: bool) {}
        fn is_train(&self) -> bool {
            true
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut net = One(Param::filled(vec![3], 1.0));
        net.0.grad = vec![0.5, -2.0, 0.0];
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut net);
        // With bias correction the first update is lr * g / (|g| + eps').
        assert!((net.0.value[0] - (1.0 - 2e-4)).abs() < 1e-10);
        assert!((net.0.value[1] - (1.0 + 2e-4)).abs() < 1e-10);
        assert_eq!(net.0.value[2], 1.0);
    }

    #[test]
    fn matches_reference_recursion() {
        let cfg = AdamConfig { lr: 0.01, beta1: 0.5, beta2: 0.999 };
        let mut net = One(Param::filled(vec![1], 0.3));
        let mut opt = Adam::new(cfg);
        let (mut w, mut m, mut v) = (0.3f64, 0.0, 0.0);
        for t in 1..=20 {
            let g = 2.0 * w - 0.1 * t as f64;
            net.0.grad = vec![g];
            opt.step(&mut net);
            m = 0.5 * m + 0.5 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.5f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.01 * mh / (vh.sqrt() + ADAM_EPS);
            assert!((net.0.value[0] - w).abs() < 1e-9, "step {t}");
        }
    }

    #[test]
    fn restore_round_trips() {
        let mut net = One(Param::filled(vec![2], 0.0));
        net.0.grad = vec![1.0, 2.0];
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut net);
        let saved: Vec<(String, Vec<f64>, Vec<f64>)> =
            opt.named_state(&mut net).into_iter().map(|(n, m, v)| (n, m.to_vec(), v.to_vec())).collect();
        let mut other = Adam::new(AdamConfig::default());
        other
            .restore(&mut net, 1, |name| saved.iter().find(|s| s.0 == name).map(|s| (s.1.clone(), s.2.clone())))
            .unwrap();
        assert_eq!((other.m.clone(), other.v.clone(), other.steps), (opt.m.clone(), opt.v.clone(), 1));
        assert!(other.restore(&mut net, 1, |_| None).is_err());
    }
}
