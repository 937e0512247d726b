use super::Matrix;

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// σ′ expressed through the activation value `s = σ(x)`.
#[inline]
pub fn sigmoid_derivative(s: f64) -> f64 {
    s * (1.0 - s)
}

/// tanh′ expressed through the activation value `t = tanh(x)`.
#[inline]
pub fn tanh_derivative(t: f64) -> f64 {
    1.0 - t * t
}

pub fn sigmoid_matrix(m: &Matrix) -> Matrix {
    m.map(sigmoid)
}

pub fn tanh_matrix(m: &Matrix) -> Matrix {
    m.map(f64::tanh)
}
