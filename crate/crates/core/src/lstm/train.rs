use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::nn::{seeded_rng, Matrix, Optimizer, OptimizerConfig};

use super::cell::{lstm_backward_accumulate, lstm_forward};
use super::{LstmError, LstmParams};

/// Supervised sequence-to-scalar samples.
pub trait SequenceSet {
    fn len(&self) -> usize;
    fn sequence(&self, index: usize) -> &Matrix;
    fn target(&self, index: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Owned samples; sequences may differ in length but not in width.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceData {
    pub inputs: Vec<Matrix>,
    pub targets: Vec<f64>,
}

impl SequenceData {
    pub fn push(&mut self, sequence: Matrix, target: f64) {
        self.inputs.push(sequence);
        self.targets.push(target);
    }
}

impl SequenceSet for SequenceData {
    fn len(&self) -> usize {
        self.inputs.len()
    }
    fn sequence(&self, index: usize) -> &Matrix {
        &self.inputs[index]
    }
    fn target(&self, index: usize) -> f64 {
        self.targets[index]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmTrainConfig {
    pub hidden_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Stop when the epoch loss has not improved for this many epochs.
    pub early_stop_patience: Option<usize>,
}

impl Default for LstmTrainConfig {
    fn default() -> Self {
        Self {
            hidden_size: 20,
            epochs: 100,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            seed: 42,
            early_stop_patience: None,
        }
    }
}

impl LstmTrainConfig {
    pub fn validate(&self) -> Result<(), LstmError> {
        if self.hidden_size == 0 {
            return Err(LstmError::Config("hidden_size must be ≥ 1".into()));
        }
        if self.epochs == 0 {
            return Err(LstmError::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(LstmError::Config("batch_size must be ≥ 1".into()));
        }
        if self.early_stop_patience == Some(0) {
            return Err(LstmError::Config("early_stop_patience must be ≥ 1".into()));
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

/// Mini-batch training on mean squared error.
///
/// Samples are reshuffled every epoch from a PRNG derived from `config.seed`,
/// so two calls with the same inputs return bit-identical parameters. The
/// returned history holds the mean per-sample training loss of each epoch.
pub fn lstm_train<D: SequenceSet + ?Sized>(
    data: &D,
    config: &LstmTrainConfig,
) -> Result<(LstmParams, Vec<f64>), LstmError> {
    config.validate()?;
    if data.is_empty() {
        return Err(LstmError::EmptyDataset);
    }
    let input_size = data.sequence(0).cols();
    for i in 0..data.len() {
        let s = data.sequence(i);
        if s.cols() != input_size {
            return Err(LstmError::Shape(format!(
                "sample {i} has {} features, expected {input_size}",
                s.cols()
            )));
        }
        if s.rows() == 0 {
            return Err(LstmError::EmptySequence);
        }
        if !data.target(i).is_finite() || !s.is_finite() {
            return Err(LstmError::Shape(format!("sample {i} contains non-finite values")));
        }
    }

    let mut params = LstmParams::init(input_size, config.hidden_size, config.seed);
    let mut optimizer = Optimizer::new(config.optimizer.clone())?;
    let mut rng = seeded_rng(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = LstmParams::zeros(input_size, config.hidden_size);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            for g in crate::nn::Parameters::param_slices_mut(&mut grads) {
                g.fill(0.0);
            }
            let n = idx.len() as f64;
            let mut batch_loss = 0.0;
            for &i in idx {
                let (pred, cache) = lstm_forward(&params, data.sequence(i))?;
                let diff = pred - data.target(i);
                batch_loss += diff * diff;
                lstm_backward_accumulate(&params, &cache, 2.0 * diff / n, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(LstmError::NonFiniteLoss { epoch, batch });
            }
            epoch_loss += batch_loss;
            optimizer.step(&mut params, &grads)?;
        }
        let mean = epoch_loss / data.len() as f64;
        history.push(mean);
        if let Some(patience) = config.early_stop_patience {
            if mean < best {
                best = mean;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    log::debug!("early stop after epoch {epoch}");
                    break;
                }
            }
        }
    }
    Ok((params, history))
}
