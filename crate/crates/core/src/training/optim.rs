use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamStore;

/// Optimizer, annealing, decay and stopping settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub initial_lr: f64,
    /// Gradients are clipped elementwise to `[-clip, clip]`.
    pub clip: f64,
    pub decay_rate: f64,
    /// Validations without improvement before the learning rate decays.
    pub decay_patience: usize,
    /// Minimum decrease of the validation loss that counts as improvement.
    pub improvement: f64,
    pub stop_lr: f64,
    pub batch_size: usize,
    pub kl_anneal_steps: u64,
    pub bow_weight: f64,
    pub gmm_kl_samples: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: Option<usize>,
    pub max_steps: Option<u64>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            clip: 1.0,
            decay_rate: 0.75,
            decay_patience: 3,
            improvement: 1e-4,
            stop_lr: 1e-7,
            batch_size: 30,
            kl_anneal_steps: 40_000,
            bow_weight: 1.0,
            gmm_kl_samples: 16,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: None,
            max_steps: None,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.decay_rate > 0.0 && self.decay_rate < 1.0) {
            return bad("decay_rate must lie in (0, 1)");
        }
        if !(self.stop_lr < self.initial_lr) || self.initial_lr <= 0.0 {
            return bad("need 0 < stop_lr < initial_lr");
        }
        if self.batch_size == 0 || self.gmm_kl_samples == 0 || self.decay_patience == 0 {
            return bad("batch_size, gmm_kl_samples and decay_patience must be positive");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        Ok(())
    }
}

/// Validation-driven learning-rate decay with early stopping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub best: Option<f64>,
    pub bad_checks: usize,
    pub decays: usize,
    rate: f64,
    patience: usize,
    improvement: f64,
    stop_lr: f64,
}

impl PlateauScheduler {
    pub fn new(schedule: &TrainSchedule) -> Self {
        Self {
            lr: schedule.initial_lr,
            best: None,
            bad_checks: 0,
            decays: 0,
            rate: schedule.decay_rate,
            patience: schedule.decay_patience,
            improvement: schedule.improvement,
            stop_lr: schedule.stop_lr,
        }
    }

    /// Records one validation loss; returns the new rate and whether
    /// training should stop.
    pub fn update(&mut self, validation_loss: f64) -> (f64, bool) {
        match self.best {
            Some(best) if best - validation_loss < self.improvement => {
                self.bad_checks += 1;
                if self.bad_checks >= self.patience {
                    self.lr *= self.rate;
                    self.decays += 1;
                    self.bad_checks = 0;
                }
            }
            _ => {
                self.best = Some(validation_loss);
                self.bad_checks = 0;
            }
        }
        (self.lr, self.lr < self.stop_lr)
    }
}

/// Adam moments plus the number of applied updates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub updates: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    clip: f64,
}

impl Adam {
    pub fn new(schedule: &TrainSchedule) -> Self {
        Self {
            updates: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            beta1: schedule.beta1,
            beta2: schedule.beta2,
            epsilon: schedule.epsilon,
            clip: schedule.clip,
        }
    }

    /// Clips the gradients elementwise and applies one update at `lr`.
    /// Returns `false`, leaving everything untouched, when any gradient is
    /// not finite.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<bool> {
        let mut clipped = Vec::new();
        for (name, var) in params.iter() {
            if let Some(g) = grads.get(var.as_tensor()) {
                let total = g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                if !total.is_finite() {
                    log::warn!("non-finite gradient for {name}; skipping update");
                    return Ok(false);
                }
                clipped.push((name.clone(), var, g.detach().clamp(-self.clip, self.clip)?));
            }
        }
        self.updates += 1;
        let t = self.updates as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, var, g) in clipped {
            let m = match self.m.get(&name) {
                Some(m) => ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?,
                None => (&g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(&name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let denom = ((&v / bc2)?.sqrt()? + self.epsilon)?;
            let delta = (((&m / bc1)? / denom)? * lr)?;
            var.set(&(var.as_tensor() - delta)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name, v);
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use candle_core::Device;

    #[test]
    fn patience_and_decay() {
        let mut s = PlateauScheduler::new(&TrainSchedule::default());
        for v in [5.0, 4.0, 3.0, 2.0] {
            assert_eq!(s.update(v), (1e-3, false));
        }
        let mut s = PlateauScheduler::new(&TrainSchedule::default());
        s.update(1.0);
        for _ in 0..4 {
            s.update(1.0);
        }
        assert_eq!(s.decays, 1);
        assert!((s.lr - 7.5e-4).abs() < 1e-18);
    }

    #[test]
    fn stops_after_thirty_three_decays() {
        let mut s = PlateauScheduler::new(&TrainSchedule::default());
        s.update(1.0);
        let mut stopped = false;
        while !stopped {
            stopped = s.update(1.0).1;
            if s.decays < 33 {
                assert!(!stopped);
            }
        }
        assert_eq!(s.decays, 33);
    }

    #[test]
    fn small_improvements_do_not_count() {
        let mut s = PlateauScheduler::new(&TrainSchedule::default());
        s.update(1.0);
        for i in 1..=3 {
            s.update(1.0 - 0.00003 * i as f64);
        }
        assert_eq!(s.decays, 1);
    }

    fn store_with(values: &[f64]) -> ParamStore {
        let mut store = ParamStore::new(DType::F64, Device::Cpu);
        let mut rng = seeded(0);
        store.uniform("w", &[values.len()], 0.1, &mut rng).unwrap();
        store.get("w").unwrap().set(&Tensor::new(values, &Device::Cpu).unwrap()).unwrap();
        store
    }

    fn grads_for(store: &ParamStore, f: impl Fn(&Tensor) -> Tensor) -> GradStore {
        f(store.get("w").unwrap().as_tensor()).backward().unwrap()
    }

    fn values(store: &ParamStore) -> Vec<f64> {
        store.get("w").unwrap().as_tensor().to_vec1().unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let store = store_with(&[0.5, -0.25]);
        let mut adam = Adam::new(&TrainSchedule::default());
        let grads = grads_for(&store, |w| (w * 0.0).unwrap().sum_all().unwrap());
        assert!(adam.step(&store, &grads, 1e-3).unwrap());
        assert_eq!(values(&store), vec![0.5, -0.25]);
    }

    #[test]
    fn clipping_bounds_the_update_input() {
        let a = store_with(&[0.0]);
        let b = store_with(&[0.0]);
        let (mut oa, mut ob) = (Adam::new(&TrainSchedule::default()), Adam::new(&TrainSchedule::default()));
        oa.step(&a, &grads_for(&a, |w| (w * 5.0).unwrap().sum_all().unwrap()), 0.1).unwrap();
        ob.step(&b, &grads_for(&b, |w| (w * 1.0).unwrap().sum_all().unwrap()), 0.1).unwrap();
        assert_eq!(values(&a), values(&b));
        let m: Vec<f64> = oa.m["w"].to_vec1().unwrap();
        assert!((m[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let store = store_with(&[1.0]);
        let mut adam = Adam::new(&TrainSchedule::default());
        let grads = grads_for(&store, |w| (w * f64::NAN).unwrap().sum_all().unwrap());
        assert!(!adam.step(&store, &grads, 1e-3).unwrap());
        assert_eq!(adam.updates, 0);
        assert_eq!(values(&store), vec![1.0]);
    }

    #[test]
    fn quadratic_fit_decreases() {
        let target = Tensor::new(&[1.0f64, -2.0, 0.5, 3.0], &Device::Cpu).unwrap();
        let store = store_with(&[0.0; 4]);
        let mut adam = Adam::new(&TrainSchedule::default());
        let loss = |w: &Tensor| (w - &target).unwrap().sqr().unwrap().sum_all().unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let l = loss(store.get("w").unwrap().as_tensor());
            let value: f64 = l.to_scalar().unwrap();
            assert!(value < last);
            last = value;
            adam.step(&store, &l.backward().unwrap(), 0.05).unwrap();
        }
    }
}
