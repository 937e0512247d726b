use crate::nn::{dot, sigmoid, sigmoid_derivative, tanh_derivative, Matrix, Parameters};

use super::{LstmError, LstmGrads, LstmParams};

/// Activations retained by [`lstm_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    input_size: usize,
    hidden_size: usize,
    steps: usize,
    params_fingerprint: u64,
    /// `[x_t; h_{t-1}]` per step, `steps × width`.
    z: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    /// Cell states `c_0 .. c_T`, `(steps + 1) × hidden`.
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h_last: Vec<f64>,
}

impl LstmCache {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Final hidden state `h_T`.
    pub fn last_hidden(&self) -> &[f64] {
        &self.h_last
    }

    /// Cell state after step `t` (`t = 0` is the zero initial state).
    pub fn cell_state(&self, t: usize) -> &[f64] {
        let h = self.hidden_size;
        &self.c[t * h..(t + 1) * h]
    }
}

/// Gradients of the loss with respect to parameters and inputs.
#[derive(Debug, Clone)]
pub struct LstmBackward {
    pub params: LstmGrads,
    /// `steps × input_size`
    pub inputs: Matrix,
}

fn check_sequence(params: &LstmParams, sequence: &Matrix) -> Result<(), LstmError> {
    if sequence.rows() == 0 {
        return Err(LstmError::EmptySequence);
    }
    if sequence.cols() != params.input_size {
        return Err(LstmError::Shape(format!(
            "sequence has {} features, model expects {}",
            sequence.cols(),
            params.input_size
        )));
    }
    Ok(())
}

/// Runs the recurrence over `sequence` (`T × input_size`) from zero state.
pub fn lstm_forward(params: &LstmParams, sequence: &Matrix) -> Result<(f64, LstmCache), LstmError> {
    check_sequence(params, sequence)?;
    let (n_in, n_h) = (params.input_size, params.hidden_size);
    let width = n_in + n_h;
    let steps = sequence.rows();

    let mut cache = LstmCache {
        input_size: n_in,
        hidden_size: n_h,
        steps,
        params_fingerprint: params.fingerprint(),
        z: vec![0.0; steps * width],
        i: vec![0.0; steps * n_h],
        f: vec![0.0; steps * n_h],
        o: vec![0.0; steps * n_h],
        g: vec![0.0; steps * n_h],
        c: vec![0.0; (steps + 1) * n_h],
        tanh_c: vec![0.0; steps * n_h],
        h_last: vec![0.0; n_h],
    };

    let mut h = vec![0.0; n_h];
    for t in 0..steps {
        let z = &mut cache.z[t * width..(t + 1) * width];
        z[..n_in].copy_from_slice(sequence.row(t));
        z[n_in..].copy_from_slice(&h);
        let z = &cache.z[t * width..(t + 1) * width];
        let span = t * n_h..(t + 1) * n_h;
        for k in 0..n_h {
            let ig = sigmoid(dot(params.w_i.row(k), z) + params.b_i[k]);
            let fg = sigmoid(dot(params.w_f.row(k), z) + params.b_f[k]);
            let og = sigmoid(dot(params.w_o.row(k), z) + params.b_o[k]);
            let gg = (dot(params.w_g.row(k), z) + params.b_g[k]).tanh();
            let c_prev = cache.c[t * n_h + k];
            let c = fg * c_prev + ig * gg;
            let tc = c.tanh();
            let idx = span.start + k;
            cache.i[idx] = ig;
            cache.f[idx] = fg;
            cache.o[idx] = og;
            cache.g[idx] = gg;
            cache.c[(t + 1) * n_h + k] = c;
            cache.tanh_c[idx] = tc;
            h[k] = og * tc;
        }
    }
    let prediction = dot(&params.w_y, &h) + params.b_y;
    cache.h_last = h;
    Ok((prediction, cache))
}

/// Backpropagation through every step of `cache`, given `∂L/∂ŷ`.
pub fn lstm_backward(params: &LstmParams, cache: &LstmCache, loss_grad: f64) -> Result<LstmBackward, LstmError> {
    let mut grads = LstmParams::zeros(params.input_size, params.hidden_size);
    let inputs = lstm_backward_accumulate(params, cache, loss_grad, &mut grads)?;
    Ok(LstmBackward { params: grads, inputs })
}

/// Like [`lstm_backward`] but adds parameter gradients into `grads`.
pub(crate) fn lstm_backward_accumulate(
    params: &LstmParams,
    cache: &LstmCache,
    loss_grad: f64,
    grads: &mut LstmGrads,
) -> Result<Matrix, LstmError> {
    if cache.input_size != params.input_size || cache.hidden_size != params.hidden_size {
        return Err(LstmError::StaleCache(format!(
            "cache sized ({}, {}), params sized ({}, {})",
            cache.input_size, cache.hidden_size, params.input_size, params.hidden_size
        )));
    }
    if cache.params_fingerprint != params.fingerprint() {
        return Err(LstmError::StaleCache(
            "parameters changed since the forward pass".into(),
        ));
    }
    if grads.input_size != params.input_size || grads.hidden_size != params.hidden_size {
        return Err(LstmError::Shape("gradient buffer has wrong sizes".into()));
    }
    let (n_in, n_h) = (params.input_size, params.hidden_size);
    let width = n_in + n_h;
    let steps = cache.steps;

    grads.b_y += loss_grad;
    let mut dh = vec![0.0; n_h];
    for k in 0..n_h {
        grads.w_y[k] += loss_grad * cache.h_last[k];
        dh[k] = loss_grad * params.w_y[k];
    }
    let mut dc = vec![0.0; n_h];
    let mut da_i = vec![0.0; n_h];
    let mut da_f = vec![0.0; n_h];
    let mut da_o = vec![0.0; n_h];
    let mut da_g = vec![0.0; n_h];
    let mut dz = vec![0.0; width];
    let mut d_inputs = Matrix::zeros(steps, n_in);

    for t in (0..steps).rev() {
        let base = t * n_h;
        for k in 0..n_h {
            let idx = base + k;
            let (ig, fg, og, gg) = (cache.i[idx], cache.f[idx], cache.o[idx], cache.g[idx]);
            let tc = cache.tanh_c[idx];
            let c_prev = cache.c[base + k];
            let d_o = dh[k] * tc;
            let dct = dc[k] + dh[k] * og * tanh_derivative(tc);
            da_i[k] = dct * gg * sigmoid_derivative(ig);
            da_f[k] = dct * c_prev * sigmoid_derivative(fg);
            da_o[k] = d_o * sigmoid_derivative(og);
            da_g[k] = dct * ig * tanh_derivative(gg);
            dc[k] = dct * fg;
        }
        let z = &cache.z[t * width..(t + 1) * width];
        dz.fill(0.0);
        for (w, dw, db, da) in [
            (&params.w_i, &mut grads.w_i, &mut grads.b_i, &da_i),
            (&params.w_f, &mut grads.w_f, &mut grads.b_f, &da_f),
            (&params.w_o, &mut grads.w_o, &mut grads.b_o, &da_o),
            (&params.w_g, &mut grads.w_g, &mut grads.b_g, &da_g),
        ] {
            dw.add_outer(da, z);
            for (b, d) in db.iter_mut().zip(da.iter()) {
                *b += d;
            }
            w.add_matvec_transposed(da, &mut dz);
        }
        d_inputs.row_mut(t).copy_from_slice(&dz[..n_in]);
        dh.copy_from_slice(&dz[n_in..]);
    }
    Ok(d_inputs)
}

/// Forward pass without retaining activations.
pub fn lstm_predict(params: &LstmParams, sequence: &Matrix) -> Result<f64, LstmError> {
    check_sequence(params, sequence)?;
    let (n_in, n_h) = (params.input_size, params.hidden_size);
    let mut z = vec![0.0; n_in + n_h];
    let mut h = vec![0.0; n_h];
    let mut c = vec![0.0; n_h];
    for t in 0..sequence.rows() {
        z[..n_in].copy_from_slice(sequence.row(t));
        z[n_in..].copy_from_slice(&h);
        for k in 0..n_h {
            let ig = sigmoid(dot(params.w_i.row(k), &z) + params.b_i[k]);
            let fg = sigmoid(dot(params.w_f.row(k), &z) + params.b_f[k]);
            let og = sigmoid(dot(params.w_o.row(k), &z) + params.b_o[k]);
            let gg = (dot(params.w_g.row(k), &z) + params.b_g[k]).tanh();
            c[k] = fg * c[k] + ig * gg;
            h[k] = og * c[k].tanh();
        }
    }
    Ok(dot(&params.w_y, &h) + params.b_y)
}

/// Predictions for several sequences, in input order.
pub fn lstm_predict_batch(params: &LstmParams, sequences: &[Matrix]) -> Result<Vec<f64>, LstmError> {
    sequences.iter().map(|s| lstm_predict(params, s)).collect()
}
