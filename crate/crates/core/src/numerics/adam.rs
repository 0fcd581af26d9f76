use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for an ordered list of parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            hyper,
            first: zeros.clone(),
            second: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update at learning rate `lr`.
    ///
    /// `lr` is passed explicitly so that schedules can vary it per step;
    /// [`AdamState::step`] uses the configured rate.
    pub fn step_with_lr(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        lr: f64,
    ) -> Result<(), NumericsError> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if !p.same_shape(g) || !p.same_shape(m) {
                return Err(NumericsError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let AdamHyper {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), NumericsError> {
        let lr = self.hyper.lr;
        self.step_with_lr(params, grads, lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0, 3.5])];
        let before = params.clone();
        let mut st = AdamState::new(AdamHyper::default(), &params);
        st.step(&mut params, &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(params, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, 0.5, -7.0] {
            let mut params = vec![Tensor::scalar(0.0)];
            let mut st = AdamState::new(AdamHyper::with_lr(0.01), &params);
            st.step(&mut params, &[Tensor::scalar(g)]).unwrap();
            let moved = params[0].item();
            assert!((moved.abs() - 0.01).abs() < 1e-7, "g={g} moved={moved}");
            assert_eq!(moved.signum(), -g.signum());
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(AdamHyper::default(), &params);
        assert!(st.step(&mut params, &[Tensor::zeros(&[3])]).is_err());
    }

    #[test]
    fn ten_step_quadratic_trace() {
        // f(w) = (w - 2)^2 from w = 0, lr = 0.1; reference recurrence
        // recomputed independently below in closed scalar form.
        let mut params = vec![Tensor::scalar(0.0)];
        let mut st = AdamState::new(AdamHyper::with_lr(0.1), &params);
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * (params[0].item() - 2.0);
            st.step(&mut params, &[Tensor::scalar(g)]).unwrap();

            let gr = 2.0 * (w - 2.0);
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((params[0].item() - w).abs() < 1e-12, "step {t}");
        }
        // frozen values from a standalone script of the same recurrence
        assert!((w - 0.975_413_162_174_641_4).abs() < 1e-9, "w = {w}");
    }
}
