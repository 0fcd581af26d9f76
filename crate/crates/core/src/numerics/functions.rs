use super::{NumericsError, Tensor};

/// Logistic sigmoid `1 / (1 + exp(-z))`, evaluated through `exp(-|z|)`.
pub fn logistic(z: f64) -> Result<f64, NumericsError> {
    if !z.is_finite() {
        return Err(NumericsError::InvalidArgument(format!(
            "logistic of non-finite value {z}"
        )));
    }
    Ok(sigmoid(z))
}

/// Infallible sigmoid for internal use; callers guarantee finiteness.
pub(crate) fn sigmoid(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    if z >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

/// `ln σ(z) = -softplus(-z)`, stable for large `|z|`.
pub(crate) fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub(crate) fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - log_z;
    }
}

pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise log-softmax over the last axis.
pub fn log_softmax(logits: &Tensor) -> Result<Tensor, NumericsError> {
    if logits.shape().last().copied().unwrap_or(1) == 0 || logits.is_empty() {
        return Err(NumericsError::EmptyAxis);
    }
    let cols = logits.cols();
    let mut out = Tensor::zeros(logits.shape());
    for (src, dst) in logits
        .data()
        .chunks(cols)
        .zip(out.data_mut().chunks_mut(cols))
    {
        log_softmax_row(src, dst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_reference_points() {
        assert_eq!(logistic(0.0).unwrap(), 0.5);
        assert!((logistic(3f64.ln()).unwrap() - 0.75).abs() < 1e-15);
        // 1 / (1 + e^-1.5) = 0.8175744761936437 (mpmath, 30 digits)
        assert!((logistic(1.5).unwrap() - 0.817_574_476_193_643_7).abs() < 1e-15);
    }

    #[test]
    fn logistic_extremes_are_stable() {
        assert_eq!(logistic(700.0).unwrap(), 1.0);
        let tiny = logistic(-700.0).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-300);
        assert!(logistic(f64::NAN).is_err());
        assert!(logistic(f64::INFINITY).is_err());
    }

    #[test]
    fn log_sigmoid_matches_naive_in_safe_range() {
        for z in [-20.0, -3.0, -0.1, 0.0, 0.7, 5.0, 30.0] {
            let naive = (1.0 / (1.0 + (-z as f64).exp())).ln();
            assert!((log_sigmoid(z) - naive).abs() < 1e-14, "z = {z}");
        }
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_uniform() {
        let t = log_softmax(&Tensor::vector(vec![0.0; 4])).unwrap();
        for v in t.data() {
            assert!((v - 0.25f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn log_softmax_empty_axis_errors() {
        let t = Tensor::zeros(&[3, 0]);
        assert!(matches!(log_softmax(&t), Err(NumericsError::EmptyAxis)));
    }
}
