use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    dot, scaled_uniform, seeded_rng, tanh_derivative, Matrix, NnError, Optimizer, OptimizerConfig, Parameters,
};

/// One-hidden-layer perceptron: tanh hidden layer, linear scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_size: usize,
    pub hidden_size: usize,
    /// hidden × input
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Gradients share the model layout.
pub type MlpGrads = MlpModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_size: 10,
            epochs: 100,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            seed: 42,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.hidden_size == 0 {
            return Err(NnError::Config("mlp hidden_size must be ≥ 1".into()));
        }
        if self.epochs == 0 {
            return Err(NnError::Config("mlp epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("mlp batch_size must be ≥ 1".into()));
        }
        self.optimizer.validate()
    }
}

impl Parameters for MlpModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.w1.as_slice(), &self.b1, &self.w2, std::slice::from_ref(&self.b2)]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_mut_slice(),
            &mut self.b1,
            &mut self.w2,
            std::slice::from_mut(&mut self.b2),
        ]
    }
}

impl MlpModel {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            w1: Matrix::zeros(hidden_size, input_size),
            b1: vec![0.0; hidden_size],
            w2: vec![0.0; hidden_size],
            b2: 0.0,
        }
    }

    pub fn init(input_size: usize, hidden_size: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let w1 = Matrix::from_fn(hidden_size, input_size, |_, _| scaled_uniform(&mut rng, input_size));
        let w2 = (0..hidden_size)
            .map(|_| scaled_uniform(&mut rng, hidden_size))
            .collect();
        Self {
            input_size,
            hidden_size,
            w1,
            b1: vec![0.0; hidden_size],
            w2,
            b2: 0.0,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_size {
            return Err(NnError::Shape(format!(
                "mlp expects {} inputs, got {}",
                self.input_size,
                x.len()
            )));
        }
        Ok(())
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden_size];
        self.w1.matvec_into(x, &mut h);
        for (hi, b) in h.iter_mut().zip(&self.b1) {
            *hi = (*hi + b).tanh();
        }
        h
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, NnError> {
        self.check_input(x)?;
        Ok(dot(&self.w2, &self.hidden(x)) + self.b2)
    }

    /// Mean-squared-error loss over a batch and its gradient.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[f64]) -> Result<(f64, MlpGrads), NnError> {
        if xs.len() != ys.len() {
            return Err(NnError::Length {
                left: xs.len(),
                right: ys.len(),
            });
        }
        if xs.is_empty() {
            return Err(NnError::Empty);
        }
        let n = xs.len() as f64;
        let mut grads = MlpModel::zeros(self.input_size, self.hidden_size);
        let mut loss = 0.0;
        let mut dh = vec![0.0; self.hidden_size];
        for (x, &y) in xs.iter().zip(ys) {
            self.check_input(x)?;
            let h = self.hidden(x);
            let pred = dot(&self.w2, &h) + self.b2;
            let diff = pred - y;
            loss += diff * diff;
            let dpred = 2.0 * diff / n;
            grads.b2 += dpred;
            for k in 0..self.hidden_size {
                grads.w2[k] += dpred * h[k];
                dh[k] = dpred * self.w2[k] * tanh_derivative(h[k]);
                grads.b1[k] += dh[k];
            }
            grads.w1.add_outer(&dh, x);
        }
        Ok((loss / n, grads))
    }
}

/// Trains an [`MlpModel`] by mini-batch gradient descent on MSE.
///
/// Returns the model and the mean training loss of each epoch.
pub fn mlp_train(inputs: &[Vec<f64>], targets: &[f64], config: &MlpConfig) -> Result<(MlpModel, Vec<f64>), NnError> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(NnError::Empty);
    }
    if inputs.len() != targets.len() {
        return Err(NnError::Length {
            left: inputs.len(),
            right: targets.len(),
        });
    }
    let input_size = inputs[0].len();
    if let Some(bad) = inputs.iter().position(|x| x.len() != input_size) {
        return Err(NnError::Shape(format!(
            "sample {bad} has {} inputs, expected {input_size}",
            inputs[bad].len()
        )));
    }

    let mut model = MlpModel::init(input_size, config.hidden_size, config.seed);
    let mut optimizer = Optimizer::new(config.optimizer.clone())?;
    let mut rng = seeded_rng(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let xs: Vec<&[f64]> = idx.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            let (loss, grads) = model.loss_and_grad(&xs, &ys)?;
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, batch });
            }
            epoch_loss += loss * idx.len() as f64;
            optimizer.step(&mut model, &grads)?;
        }
        history.push(epoch_loss / inputs.len() as f64);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::Rng;

    #[test]
    fn zero_weights_output_bias() {
        let mut m = MlpModel::zeros(3, 4);
        m.b2 = 0.75;
        assert_eq!(m.forward(&[1.0, -2.0, 9.0]).unwrap(), 0.75);
    }

    #[test]
    fn gradient_check_random_instance() {
        let model = MlpModel::init(3, 4, 7);
        let mut rng = seeded_rng(3);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let report = grad_check(
            |flat| {
                let mut m = model.clone();
                m.set_flat(flat).unwrap();
                let (l, g) = m.loss_and_grad(&refs, &ys).unwrap();
                (l, g.to_flat())
            },
            &model.to_flat(),
            1e-5,
        );
        assert!(report.max_relative_error < 1e-4, "{}", report.max_relative_error);
    }

    #[test]
    fn learns_window_mean() {
        let mut rng = seeded_rng(42);
        let xs: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.iter().sum::<f64>() / 4.0).collect();
        let cfg = MlpConfig {
            epochs: 500,
            seed: 42,
            ..MlpConfig::default()
        };
        let (model, history) = mlp_train(&xs, &ys, &cfg).unwrap();
        assert!(history.iter().all(|l| l.is_finite()));
        assert!(history.last().unwrap() < history.first().unwrap());
        let preds: Vec<f64> = xs.iter().map(|x| model.forward(x).unwrap()).collect();
        let rmse = (preds.iter().zip(&ys).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
        assert!(rmse < 0.05, "train rmse {rmse}");
    }

    #[test]
    fn training_is_deterministic() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 30.0, 1.0]).collect();
        let ys: Vec<f64> = (0..30).map(|i| (i as f64 / 10.0).sin()).collect();
        let cfg = MlpConfig {
            epochs: 20,
            ..MlpConfig::default()
        };
        let a = mlp_train(&xs, &ys, &cfg).unwrap();
        let b = mlp_train(&xs, &ys, &cfg).unwrap();
        assert_eq!(a.0.fingerprint(), b.0.fingerprint());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let xs = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(mlp_train(&xs, &[0.0, 1.0], &MlpConfig::default()).is_err());
        assert!(MlpModel::zeros(2, 3).forward(&[1.0]).is_err());
    }
}
