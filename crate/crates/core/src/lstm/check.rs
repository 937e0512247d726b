//! Randomized finite-difference checks of the LSTM and MLP gradients.

use rand::Rng;
use serde::Serialize;

use super::{lstm_backward, lstm_forward, LstmParams};
use crate::nn::{grad_check, seeded_rng, Matrix, MlpModel, Parameters};

const EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCase {
    pub model: &'static str,
    pub inputs: usize,
    pub hidden: usize,
    /// Sequence length for the LSTM, batch size for the MLP.
    pub steps: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientSuite {
    pub cases: Vec<GradCase>,
    pub max_relative_error: f64,
}

impl GradientSuite {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

fn lstm_case(rng: &mut crate::nn::Rng64) -> GradCase {
    let (f, h, t) = (
        rng.random_range(1..=5),
        rng.random_range(1..=8),
        rng.random_range(1..=10),
    );
    let mut p = LstmParams::zeros(f, h);
    let flat: Vec<f64> = (0..p.to_flat().len()).map(|_| rng.random_range(-0.8..0.8)).collect();
    p.set_flat(&flat).unwrap();
    let seq = Matrix::from_fn(t, f, |_, _| rng.random_range(-1.0..1.0));
    let target: f64 = rng.random_range(-1.0..1.0);
    let report = grad_check(
        |w| {
            let mut q = p.clone();
            q.set_flat(w).unwrap();
            let (pred, cache) = lstm_forward(&q, &seq).unwrap();
            let d = pred - target;
            let g = lstm_backward(&q, &cache, 2.0 * d).unwrap();
            (d * d, g.params.to_flat())
        },
        &flat,
        EPS,
    );
    GradCase {
        model: "lstm",
        inputs: f,
        hidden: h,
        steps: t,
        max_relative_error: report.max_relative_error,
    }
}

fn mlp_case(rng: &mut crate::nn::Rng64) -> GradCase {
    let (f, h, n) = (
        rng.random_range(1..=10),
        rng.random_range(1..=8),
        rng.random_range(1..=6),
    );
    let model = MlpModel::init(f, h, rng.random());
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..f).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let report = grad_check(
        |w| {
            let mut m = model.clone();
            m.set_flat(w).unwrap();
            let (l, g) = m.loss_and_grad(&refs, &ys).unwrap();
            (l, g.to_flat())
        },
        &model.to_flat(),
        EPS,
    );
    GradCase {
        model: "mlp",
        inputs: f,
        hidden: h,
        steps: n,
        max_relative_error: report.max_relative_error,
    }
}

/// `instances` random LSTM problems (F ≤ 5, H ≤ 8, T ≤ 10) and as many MLP
/// problems, all drawn from `seed`.
pub fn gradient_suite(seed: u64, instances: usize) -> GradientSuite {
    let mut rng = seeded_rng(seed);
    let mut cases = Vec::with_capacity(2 * instances);
    for _ in 0..instances {
        cases.push(lstm_case(&mut rng));
        cases.push(mlp_case(&mut rng));
    }
    let max_relative_error = cases.iter().map(|c| c.max_relative_error).fold(0.0, f64::max);
    GradientSuite {
        cases,
        max_relative_error,
    }
}
