//! Trainable parameters and the Adam / RAdam optimizer.

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<F = f32> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Option<Tensor<F>>,
    pub frozen: bool,
}

impl<F: Real> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
            frozen: false,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn cast<G: Real>(&self) -> Parameter<G> {
        Parameter {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.as_ref().map(Tensor::cast),
            frozen: self.frozen,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<F> {
    pub name: String,
    pub first: Vec<F>,
    pub second: Vec<F>,
}

/// Adam with optional variance rectification (RAdam).
///
/// With `rectify`, the adaptive step is scaled by the rectification term once
/// the approximated SMA length exceeds 5; before that the update is the
/// bias-corrected momentum alone. No weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F = f32> {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub rectify: bool,
    pub moments: Vec<Moments<F>>,
}

impl<F: Real> OptimizerState<F> {
    pub fn radam(learning_rate: f64) -> Self {
        Self {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            rectify: true,
            moments: Vec::new(),
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            rectify: false,
            ..Self::radam(learning_rate)
        }
    }

    /// Step size multiplier applied to `m̂ / (sqrt(v̂) + eps)`; `None` means the
    /// unrectified momentum update is used at step `t`.
    pub fn rectification(&self, t: u64) -> Option<f64> {
        if !self.rectify {
            return Some(1.0);
        }
        let b2t = self.beta2.powf(t as f64);
        let rho_inf = 2.0 / (1.0 - self.beta2) - 1.0;
        let rho_t = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
        if rho_t > 5.0 {
            Some(
                ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        }
    }

    /// One update over `params`; gradients are cleared afterwards.
    pub fn step<'p>(&mut self, params: impl IntoIterator<Item = &'p mut Parameter<F>>) -> Result<()> {
        let mut params: Vec<&mut Parameter<F>> = params.into_iter().collect();
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    name: p.name.clone(),
                    first: vec![F::zero(); p.numel()],
                    second: vec![F::zero(); p.numel()],
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.moments) {
            if p.name != m.name || p.numel() != m.first.len() {
                return Err(Error::contract(format!(
                    "parameter {} does not match optimizer slot {}",
                    p.name, m.name
                )));
            }
            if p.frozen {
                continue;
            }
            match &p.grad {
                None => {
                    return Err(Error::contract(format!("missing gradient for {}", p.name)))
                }
                Some(g) if g.shape() != p.value.shape() => {
                    return Err(Error::shape("optimizer_step", p.value.shape(), g.shape()))
                }
                Some(_) => {}
            }
        }

        self.step += 1;
        let t = self.step;
        let bc1 = 1.0 - self.beta1.powf(t as f64);
        let bc2 = 1.0 - self.beta2.powf(t as f64);
        let rect = self.rectification(t);
        let (b1, b2) = (F::from_f64(self.beta1), F::from_f64(self.beta2));
        let (one_b1, one_b2) = (F::from_f64(1.0 - self.beta1), F::from_f64(1.0 - self.beta2));
        let eps = F::from_f64(self.epsilon);

        for (p, m) in params.iter_mut().zip(self.moments.iter_mut()) {
            let grad = p.grad.take();
            if p.frozen {
                continue;
            }
            let grad = grad.expect("checked above");
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let gi = grad.data()[i];
                m.first[i] = b1 * m.first[i] + one_b1 * gi;
                m.second[i] = b2 * m.second[i] + one_b2 * gi * gi;
                let m_hat = m.first[i] / F::from_f64(bc1);
                let update = match rect {
                    Some(r) => {
                        let v_hat = (m.second[i] / F::from_f64(bc2)).sqrt();
                        F::from_f64(self.learning_rate * r) * m_hat / (v_hat + eps)
                    }
                    None => F::from_f64(self.learning_rate) * m_hat,
                };
                w[i] = w[i] - update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64) -> Parameter<f64> {
        let mut p = Parameter::new("w", Tensor::scalar(v));
        p.grad = Some(Tensor::scalar(1.0));
        p
    }

    #[test]
    fn single_adam_step_moves_by_lr() {
        let mut p = param(0.0);
        let mut opt = OptimizerState::adam(0.1);
        opt.step([&mut p]).unwrap();
        assert!((p.value.data()[0] + 0.1).abs() < 1e-6);
        assert!(p.grad.is_none());
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn radam_first_steps_are_unrectified() {
        let opt = OptimizerState::<f32>::radam(1e-3);
        assert!(opt.rectification(1).is_none());
        assert!(opt.rectification(5).is_none());
        let r = opt.rectification(1000).unwrap();
        assert!(r > 0.0 && r < 1.0);
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut p = param(0.75);
        p.frozen = true;
        let before = p.value.clone();
        let mut opt = OptimizerState::radam(0.5);
        opt.step([&mut p]).unwrap();
        assert_eq!(p.value, before);
        assert!(p.grad.is_none());
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = param(1.5);
        p.grad = Some(Tensor::scalar(0.0));
        let mut opt = OptimizerState::adam(0.1);
        for _ in 0..3 {
            p.grad = Some(Tensor::scalar(0.0));
            opt.step([&mut p]).unwrap();
        }
        assert_eq!(p.value.data()[0], 1.5);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut p = param(0.0);
        p.grad = None;
        let mut opt = OptimizerState::adam(0.1);
        assert!(matches!(opt.step([&mut p]), Err(Error::Contract(_))));
        assert_eq!(opt.step, 0);
    }
}
