use serde::{Deserialize, Serialize};

use super::{NnError, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm above which gradients are rescaled. `None` disables clipping.
    pub gradient_clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            gradient_clip_norm: Some(5.0),
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            gradient_clip_norm: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(NnError::Config(format!(
                "adam betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(NnError::Config("epsilon must be positive".into()));
        }
        if let Some(c) = self.gradient_clip_norm {
            if !(c > 0.0) {
                return Err(NnError::Config(format!("gradient_clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Optimiser state for one model. Moment buffers are sized lazily on the
/// first step and then tied to that parameter count.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self, NnError> {
        config.validate()?;
        Ok(Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update to `params` using `grads` of the same shape.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<(), NnError> {
        let grad_slices = grads.param_slices();
        let mut param_slices = params.param_slices_mut();
        if grad_slices.len() != param_slices.len() {
            return Err(NnError::Shape("parameter/gradient slice count differs".into()));
        }
        for (p, g) in param_slices.iter().zip(&grad_slices) {
            if p.len() != g.len() {
                return Err(NnError::Shape(format!(
                    "parameter slice of {} vs gradient slice of {}",
                    p.len(),
                    g.len()
                )));
            }
        }
        let total: usize = grad_slices.iter().map(|s| s.len()).sum();

        let mut sq = 0.0;
        let mut index = 0;
        for g in &grad_slices {
            for &x in g.iter() {
                if !x.is_finite() {
                    return Err(NnError::NonFiniteGradient { index });
                }
                sq += x * x;
                index += 1;
            }
        }
        let scale = match self.config.gradient_clip_norm {
            Some(max) => {
                let norm = sq.sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.t += 1;
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in param_slices.iter_mut().zip(&grad_slices) {
                    for (pi, &gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= lr * (gi * scale);
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = vec![0.0; total];
                    self.v = vec![0.0; total];
                } else if self.m.len() != total {
                    return Err(NnError::Shape(format!(
                        "optimizer state sized for {} parameters, got {total}",
                        self.m.len()
                    )));
                }
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.epsilon);
                let t = self.t as i32;
                let bc1 = 1.0 - b1.powi(t);
                let bc2 = 1.0 - b2.powi(t);
                let mut k = 0;
                for (p, g) in param_slices.iter_mut().zip(&grad_slices) {
                    for (pi, &gi) in p.iter_mut().zip(g.iter()) {
                        let g = gi * scale;
                        let m = b1 * self.m[k] + (1.0 - b1) * g;
                        let v = b2 * self.v[k] + (1.0 - b2) * g * g;
                        self.m[k] = m;
                        self.v[k] = v;
                        let m_hat = m / bc1;
                        let v_hat = v / bc2;
                        *pi -= lr * m_hat / (v_hat.sqrt() + eps);
                        k += 1;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn param_slices(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1)).unwrap();
        let mut p = Flat(vec![1.0]);
        opt.step(&mut p, &Flat(vec![2.0])).unwrap();
        assert!((p.0[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = OptimizerConfig {
            gradient_clip_norm: None,
            ..OptimizerConfig::default()
        };
        let lr = cfg.learning_rate;
        let mut opt = Optimizer::new(cfg).unwrap();
        let mut p = Flat(vec![0.0; 5]);
        opt.step(&mut p, &Flat(vec![1.0; 5])).unwrap();
        for x in &p.0 {
            assert!((x.abs() - lr).abs() < 1e-6, "{x}");
        }
    }

    #[test]
    fn clipping_scales_gradient() {
        let mut cfg = OptimizerConfig::sgd(1.0);
        cfg.gradient_clip_norm = Some(1.0);
        let mut opt = Optimizer::new(cfg).unwrap();
        let mut p = Flat(vec![0.0, 0.0]);
        // ‖g‖ = 10
        opt.step(&mut p, &Flat(vec![6.0, 8.0])).unwrap();
        assert!((p.0[0] + 0.6).abs() < 1e-12);
        assert!((p.0[1] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_is_identity() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let cfg = OptimizerConfig {
                kind,
                ..OptimizerConfig::default()
            };
            let mut opt = Optimizer::new(cfg).unwrap();
            let mut p = Flat(vec![0.3, -1.7, 2.5]);
            let before = p.0.clone();
            for _ in 0..3 {
                opt.step(&mut p, &Flat(vec![0.0; 3])).unwrap();
            }
            assert_eq!(p.0, before);
        }
    }

    #[test]
    fn nan_gradient_rejected() {
        let mut opt = Optimizer::new(OptimizerConfig::default()).unwrap();
        let mut p = Flat(vec![0.0, 0.0]);
        let err = opt.step(&mut p, &Flat(vec![0.0, f64::NAN])).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient { index: 1 }));
    }

    #[test]
    fn config_validation() {
        let mut cfg = OptimizerConfig::default();
        cfg.learning_rate = 0.0;
        assert!(Optimizer::new(cfg.clone()).is_err());
        cfg.learning_rate = 0.01;
        cfg.beta1 = 1.0;
        assert!(Optimizer::new(cfg).is_err());
    }
}
