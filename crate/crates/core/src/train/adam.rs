use msa_autodiff::{ParamSet, Real, Tensor};

use super::config::AdamConfig;

/// Adam with bias correction; weight decay is added to the gradient.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    cfg: AdamConfig,
    step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(cfg: AdamConfig, params: &ParamSet<F>) -> Self {
        let zeros: Vec<Tensor<F>> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape().to_vec())).collect();
        Adam {
            cfg,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently stored in `params`.
    pub fn step(&mut self, params: &mut ParamSet<F>) {
        self.step += 1;
        let c = |v: f64| F::from_f64_lossy(v);
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bias1 = c(1.0 - b1.powi(self.step as i32));
        let bias2 = c(1.0 - b2.powi(self.step as i32));
        let (lr, eps, wd) = (c(self.cfg.lr), c(self.cfg.eps), c(self.cfg.weight_decay));
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let grad = params.grad(id).data().to_vec();
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            let value = params.value_mut(id).data_mut();
            for i in 0..value.len() {
                let g = grad[i] + wd * value[i];
                m[i] = c(b1) * m[i] + c(1.0 - b1) * g;
                v[i] = c(b2) * v[i] + c(1.0 - b2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
