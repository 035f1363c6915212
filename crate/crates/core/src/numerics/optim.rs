use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum SGD; weight decay enters as an L2 term added to the gradient.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
        check_aligned(params, grads)?;
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        check_aligned(params, &self.velocity)?;
        let SgdConfig {
            lr,
            momentum,
            weight_decay,
        } = self.config;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let pd = p.data_mut();
            for ((w, &gv), vel) in pd.iter_mut().zip(g.data()).zip(v.data_mut()) {
                let d = gv + weight_decay * *w;
                *vel = momentum * *vel + d;
                *w -= lr * *vel;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
        check_aligned(params, grads)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        check_aligned(params, &self.m)?;
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

fn check_aligned(params: &[&mut Tensor], other: &[Tensor]) -> Result<(), TensorError> {
    if params.len() != other.len() {
        return Err(TensorError::ShapeMismatch {
            op: "optimizer",
            left: vec![params.len()],
            right: vec![other.len()],
        });
    }
    for (p, o) in params.iter().zip(other) {
        if p.shape() != o.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "optimizer",
                left: p.shape().to_vec(),
                right: o.shape().to_vec(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let p0 = Tensor::from_fn(&[3], |i| i as f64 + 0.5);
        let mut p = p0.clone();
        let g = vec![Tensor::zeros(&[3])];
        let mut sgd = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 0.0 });
        sgd.step(&mut [&mut p], &g).unwrap();
        assert_eq!(p, p0);
        let mut adam = Adam::new(AdamConfig::with_lr(0.01));
        adam.step(&mut [&mut p], &g).unwrap();
        assert_eq!(p, p0);
    }

    #[test]
    fn sgd_gradient_flow_step() {
        let p0 = Tensor::from_fn(&[4], |i| i as f64 - 1.5);
        let mut p = p0.clone();
        let mut sgd = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 });
        sgd.step(&mut [&mut p], &[p0.clone()]).unwrap();
        for (a, b) in p.data().iter().zip(p0.data()) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        for &g in &[1e-3, 0.5, 40.0, -7.0] {
            let mut p = Tensor::scalar(1.0);
            let mut adam = Adam::new(AdamConfig::with_lr(0.01));
            adam.step(&mut [&mut p], &[Tensor::scalar(g)]).unwrap();
            let delta = 1.0 - p.data()[0];
            assert!((delta.abs() - 0.01).abs() < 1e-6, "g={g} delta={delta}");
            assert_eq!(delta.signum(), g.signum());
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut sgd = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 });
        assert!(sgd.step(&mut [&mut p], &[Tensor::zeros(&[3])]).is_err());
    }
}
