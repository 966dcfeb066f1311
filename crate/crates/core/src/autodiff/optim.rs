//! First-order optimizers over named parameter lists.
//!
//! Parameters are updated in place; the caller supplies matching slices of
//! parameter tensors and gradients in a stable order across steps.

use super::AutodiffError;
use ndarray::Array2;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are keyed by position in the
/// parameter slice, which must stay stable across steps.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    moments: Vec<(Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut [&mut Array2<f64>],
        grads: &[Array2<f64>],
    ) -> Result<(), AutodiffError> {
        check_shapes(params, grads)?;
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (Array2::zeros(p.dim()), Array2::zeros(p.dim())))
                .collect();
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            ndarray::Zip::from(&mut **p)
                .and(g)
                .and(&mut *m)
                .and(&mut *v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                });
        }
        Ok(())
    }
}

/// Plain gradient descent.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(
        &mut self,
        params: &mut [&mut Array2<f64>],
        grads: &[Array2<f64>],
    ) -> Result<(), AutodiffError> {
        check_shapes(params, grads)?;
        for (p, g) in params.iter_mut().zip(grads) {
            **p -= &(g * self.lr);
        }
        Ok(())
    }
}

/// Optimizer selected by configuration.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam(Adam::new(AdamConfig {
            lr,
            ..AdamConfig::default()
        }))
    }

    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd(Sgd { lr })
    }

    pub fn step(
        &mut self,
        params: &mut [&mut Array2<f64>],
        grads: &[Array2<f64>],
    ) -> Result<(), AutodiffError> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads),
            Optimizer::Sgd(s) => s.step(params, grads),
        }
    }
}

fn check_shapes(
    params: &[&mut Array2<f64>],
    grads: &[Array2<f64>],
) -> Result<(), AutodiffError> {
    if params.len() != grads.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "optimizer",
            detail: format!("{} params vs {} grads", params.len(), grads.len()),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.dim() != g.dim() {
            return Err(AutodiffError::ShapeMismatch {
                op: "optimizer",
                detail: format!("param {:?} vs grad {:?}", p.dim(), g.dim()),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = array![[1.0, -2.0]];
        let g = Array2::zeros((1, 2));
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut [&mut p], &[g]).unwrap();
        assert_eq!(p, array![[1.0, -2.0]]);
    }

    #[test]
    fn first_adam_step_magnitude_is_close_to_lr() {
        // Bias-corrected first step with constant gradient 1:
        // m_hat = 1, v_hat = 1, delta = lr / (1 + eps).
        let mut p = array![[0.0]];
        let g = array![[1.0]];
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut [&mut p], &[g]).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert_abs_diff_eq!(p[[0, 0]], expected, epsilon = 1e-15);
    }

    #[test]
    fn two_steps_equal_a_resumed_sequence() {
        let g1 = array![[0.3, -1.0]];
        let g2 = array![[-0.2, 0.5]];

        let mut p_a = array![[1.0, 1.0]];
        let mut opt_a = Adam::new(AdamConfig::default());
        opt_a.step(&mut [&mut p_a], std::slice::from_ref(&g1)).unwrap();
        opt_a.step(&mut [&mut p_a], std::slice::from_ref(&g2)).unwrap();

        let mut p_b = array![[1.0, 1.0]];
        let mut opt_b = Adam::new(AdamConfig::default());
        opt_b.step(&mut [&mut p_b], std::slice::from_ref(&g1)).unwrap();
        let mut resumed = opt_b.clone();
        resumed.step(&mut [&mut p_b], std::slice::from_ref(&g2)).unwrap();

        assert_eq!(p_a, p_b);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut p = array![[0.0]];
        let g = array![[1.0, 2.0]];
        let mut opt = Adam::new(AdamConfig::default());
        assert!(opt.step(&mut [&mut p], &[g]).is_err());
    }
}
