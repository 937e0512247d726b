//! Single-layer LSTM regressor with a linear head on the last hidden state,
//! trained by full backpropagation through time.
//!
//! Gate layout: every gate `k ∈ {i, f, o, g}` has a weight matrix of shape
//! `hidden × (input + hidden)` acting on the concatenation `[x_t; h_{t-1}]`.
//!
//! ```text
//! i = σ(W_i z + b_i)   f = σ(W_f z + b_f)   o = σ(W_o z + b_o)   g = tanh(W_g z + b_g)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ŷ   = w_y · h_T + b_y
//! ```

mod cell;
mod check;
mod train;

pub use cell::{lstm_backward, lstm_forward, lstm_predict, lstm_predict_batch, LstmBackward, LstmCache};
pub use check::{gradient_suite, GradCase, GradientSuite};
pub use train::{lstm_train, LstmTrainConfig, SequenceData, SequenceSet};

use serde::{Deserialize, Serialize};

use crate::nn::{scaled_uniform, seeded_rng, Matrix, NnError, Parameters};

#[derive(Debug, thiserror::Error)]
pub enum LstmError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cache does not belong to these parameters: {0}")]
    StaleCache(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Trainable LSTM parameters plus the regression head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub w_g: Matrix,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_g: Vec<f64>,
    pub w_y: Vec<f64>,
    pub b_y: f64,
}

/// Gradients share the parameter layout.
pub type LstmGrads = LstmParams;

impl LstmParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let width = input_size + hidden_size;
        Self {
            input_size,
            hidden_size,
            w_i: Matrix::zeros(hidden_size, width),
            w_f: Matrix::zeros(hidden_size, width),
            w_o: Matrix::zeros(hidden_size, width),
            w_g: Matrix::zeros(hidden_size, width),
            b_i: vec![0.0; hidden_size],
            b_f: vec![0.0; hidden_size],
            b_o: vec![0.0; hidden_size],
            b_g: vec![0.0; hidden_size],
            w_y: vec![0.0; hidden_size],
            b_y: 0.0,
        }
    }

    /// Scaled-uniform weights, forget bias 1, other biases 0.
    pub fn init(input_size: usize, hidden_size: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let width = input_size + hidden_size;
        let mut p = Self::zeros(input_size, hidden_size);
        for w in [&mut p.w_i, &mut p.w_f, &mut p.w_o, &mut p.w_g] {
            for x in w.as_mut_slice() {
                *x = scaled_uniform(&mut rng, width);
            }
        }
        for x in &mut p.w_y {
            *x = scaled_uniform(&mut rng, hidden_size);
        }
        p.b_f.fill(1.0);
        p
    }

    pub fn width(&self) -> usize {
        self.input_size + self.hidden_size
    }

    pub fn validate(&self) -> Result<(), LstmError> {
        let (h, w) = (self.hidden_size, self.width());
        for (name, m) in [
            ("w_i", &self.w_i),
            ("w_f", &self.w_f),
            ("w_o", &self.w_o),
            ("w_g", &self.w_g),
        ] {
            if m.shape() != (h, w) {
                return Err(LstmError::Shape(format!(
                    "{name} is {:?}, expected ({h}, {w})",
                    m.shape()
                )));
            }
        }
        for (name, b) in [
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
            ("b_g", &self.b_g),
            ("w_y", &self.w_y),
        ] {
            if b.len() != h {
                return Err(LstmError::Shape(format!("{name} has length {}, expected {h}", b.len())));
            }
        }
        if !self.all_finite() {
            return Err(LstmError::Shape("parameters contain non-finite values".into()));
        }
        Ok(())
    }
}

impl Parameters for LstmParams {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.w_i.as_slice(),
            self.w_f.as_slice(),
            self.w_o.as_slice(),
            self.w_g.as_slice(),
            &self.b_i,
            &self.b_f,
            &self.b_o,
            &self.b_g,
            &self.w_y,
            std::slice::from_ref(&self.b_y),
        ]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_i.as_mut_slice(),
            self.w_f.as_mut_slice(),
            self.w_o.as_mut_slice(),
            self.w_g.as_mut_slice(),
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_g,
            &mut self.w_y,
            std::slice::from_mut(&mut self.b_y),
        ]
    }
}
