//! Learning-rate schedule and the AdamW optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Grads, Param, ParamId};

/// Linear warmup followed by cosine decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub final_lr: f64,
}

impl Schedule {
    pub fn new(peak_lr: f64, warmup_ratio: f64, total_steps: usize, final_lr: f64) -> Result<Self> {
        let s = Schedule {
            peak_lr,
            warmup_ratio,
            total_steps,
            final_lr,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::InvalidConfig(format!(
                "warmup_ratio must be in [0, 1) (got {})",
                self.warmup_ratio
            )));
        }
        if !(self.peak_lr >= 0.0 && self.final_lr >= 0.0 && self.final_lr <= self.peak_lr) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= final_lr <= peak_lr (got {}, {})",
                self.final_lr, self.peak_lr
            )));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        // Guard against products like 0.08 * n landing a hair above an integer.
        let exact = self.warmup_ratio * self.total_steps as f64;
        (exact - 1e-9).ceil().max(0.0) as usize
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let warmup = self.warmup_steps();
        if step >= self.total_steps {
            return self.final_lr;
        }
        if step < warmup {
            return self.peak_lr * step as f64 / warmup as f64;
        }
        let progress = (step - warmup) as f64 / (self.total_steps - warmup) as f64;
        self.final_lr
            + (self.peak_lr - self.final_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moments for trainable parameters only, plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    lr_scale: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &[Param], selector: &[ParamId]) -> Self {
        let mut moments: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; params.len()];
        for &id in selector {
            let n = params[id.0].numel();
            moments[id.0] = Some((vec![0.0; n], vec![0.0; n]));
        }
        OptimizerState {
            config,
            step: 0,
            lr_scale: vec![1.0; params.len()],
            moments,
        }
    }

    /// Multiplies the learning rate (and with it the decay) of one parameter.
    pub fn set_lr_scale(&mut self, id: ParamId, scale: f64) {
        self.lr_scale[id.0] = scale;
    }

    pub fn has_state(&self, id: ParamId) -> bool {
        self.moments[id.0].is_some()
    }

    pub fn moments(&self, id: ParamId) -> Option<(&[f64], &[f64])> {
        self.moments[id.0].as_ref().map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// Number of parameter tensors holding optimizer state.
    pub fn tracked(&self) -> usize {
        self.moments.iter().flatten().count()
    }

    /// One decoupled-weight-decay Adam update. Nothing is modified if any
    /// gradient entry is non-finite.
    pub fn step(&mut self, params: &mut [Param], grads: &Grads, lr: f64) -> Result<()> {
        if grads.slots.len() != self.moments.len() || params.len() != self.moments.len() {
            return Err(Error::Shape("optimizer, parameters and gradients disagree".into()));
        }
        for (i, (slot, st)) in grads.slots.iter().zip(&self.moments).enumerate() {
            if slot.is_some() != st.is_some() {
                return Err(Error::Contract(format!(
                    "gradient/optimizer-state mismatch for {}",
                    params[i].name
                )));
            }
            if let Some(g) = slot {
                if let Some((index, &value)) = g.iter().enumerate().find(|(_, x)| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient {
                        param: params[i].name.clone(),
                        index,
                        value,
                    });
                }
            }
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2_sqrt = (1.0 - beta2.powi(t)).sqrt();
        for (((p, st), g), &scale) in params.iter_mut().zip(&mut self.moments).zip(&grads.slots).zip(&self.lr_scale) {
            let (Some((m, v)), Some(g)) = (st.as_mut(), g.as_ref()) else {
                continue;
            };
            let lr = lr * scale;
            let step_size = lr / bc1;
            for (((w, m), v), &g) in p.data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *w *= 1.0 - lr * weight_decay;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let denom = v.sqrt() / bc2_sqrt + epsilon;
                *w -= step_size * *m / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Role;

    fn scalar(x: f64) -> Vec<Param> {
        vec![Param {
            name: "w".into(),
            role: Role::Shared,
            frozen: false,
            shape: vec![1],
            data: vec![x],
        }]
    }

    #[test]
    fn schedule_endpoints() {
        let s = Schedule::new(3e-4, 0.08, 100, 0.0).unwrap();
        assert_eq!(s.warmup_steps(), 8);
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(8), 3e-4);
        assert_eq!(s.lr_at(100), 0.0);
        assert_eq!(s.lr_at(250), 0.0);
        assert!((s.lr_at(4) - 1.5e-4).abs() < 1e-18);
    }

    #[test]
    fn schedule_rejects_bad_ratio() {
        assert!(Schedule::new(1e-3, 1.0, 10, 0.0).is_err());
        assert!(Schedule::new(1e-3, 0.1, 10, 2e-3).is_err());
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut p = scalar(0.75);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, &p, &[ParamId(0)]);
        let g = Grads::new(&p, &[true]);
        for _ in 0..5 {
            st.step(&mut p, &g, 1e-2).unwrap();
        }
        assert_eq!(p[0].data[0], 0.75);
    }

    #[test]
    fn untracked_params_untouched() {
        let mut p = scalar(0.5);
        p.push(p[0].clone());
        let mut st = OptimizerState::new(AdamWConfig::default(), &p, &[ParamId(1)]);
        let mut g = Grads::new(&p, &[false, true]);
        g.slot_mut(ParamId(1)).unwrap()[0] = 1.0;
        st.step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p[0].data[0].to_bits(), 0.5f64.to_bits());
        assert_ne!(p[1].data[0], 0.5);
        assert_eq!(st.tracked(), 1);
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut p = scalar(0.5);
        let mut st = OptimizerState::new(AdamWConfig::default(), &p, &[ParamId(0)]);
        let mut g = Grads::new(&p, &[true]);
        g.slot_mut(ParamId(0)).unwrap()[0] = f64::NAN;
        let err = st.step(&mut p, &g, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 0, .. }));
        assert_eq!(p[0].data[0], 0.5);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn lr_scale_matches_a_larger_learning_rate() {
        let mut a = scalar(0.3);
        let mut b = scalar(0.3);
        let mut sa = OptimizerState::new(AdamWConfig::default(), &a, &[ParamId(0)]);
        let mut sb = OptimizerState::new(AdamWConfig::default(), &b, &[ParamId(0)]);
        sb.set_lr_scale(ParamId(0), 4.0);
        let mut g = Grads::new(&a, &[true]);
        for x in [0.2, -0.7, 1.5] {
            g.slot_mut(ParamId(0)).unwrap()[0] = x;
            sa.step(&mut a, &g, 4e-3).unwrap();
            sb.step(&mut b, &g, 1e-3).unwrap();
        }
        assert_eq!(a[0].data[0], b[0].data[0]);
    }
}
