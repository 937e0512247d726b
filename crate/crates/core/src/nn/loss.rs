use super::NnError;

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if pred.len() != target.len() {
        return Err(NnError::Length {
            left: pred.len(),
            right: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(NnError::Empty);
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let (l, g) = mse_loss(&[1.0, -2.0], &[1.0, -2.0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hand_value() {
        let (l, g) = mse_loss(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(l, 12.5);
        assert_eq!(g, vec![-3.0, -4.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pred = [0.3, -1.2, 2.0];
        let target = [0.1, 0.4, -0.5];
        let (_, g) = mse_loss(&pred, &target).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut p = pred;
            p[i] += h;
            let up = mse_loss(&p, &target).unwrap().0;
            p[i] -= 2.0 * h;
            let down = mse_loss(&p, &target).unwrap().0;
            assert!(((up - down) / (2.0 * h) - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(mse_loss(&[1.0], &[1.0, 2.0]), Err(NnError::Length { .. })));
        assert!(matches!(mse_loss(&[], &[]), Err(NnError::Empty)));
    }
}
