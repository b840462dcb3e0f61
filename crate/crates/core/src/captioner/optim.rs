use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Adaptive-moment optimizer with bias correction and no weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, shapes: &[&Tensor]) -> Result<Self> {
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !(cfg.learning_rate >= 0.0) || !ok(cfg.beta1) || !ok(cfg.beta2) || !(cfg.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {cfg:?}")));
        }
        let zeros = || shapes.iter().map(|t| Tensor::zeros(t.dims())).collect::<Vec<_>>();
        Ok(Adam {
            cfg,
            step: 0,
            first: zeros(),
            second: zeros(),
        })
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Update `params[i]` with `grads[i]`; a missing gradient counts as zero.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Option<&[f64]>]) {
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.cfg;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = p.data_mut();
            let g = grads[i];
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
