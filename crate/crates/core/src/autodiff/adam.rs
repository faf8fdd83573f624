use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam over every parameter of a [`ParamStore`].
///
/// A step whose gradients contain a NaN or infinity is dropped: parameters
/// and moments stay as they were and [`Adam::skipped`] is incremented.
/// Gradients are cleared after every call to [`Adam::step`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
    skipped: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, m: Vec::new(), v: Vec::new(), steps: 0, skipped: 0 }
    }

    pub fn with_lr(lr: f64) -> Self {
        Self::new(AdamConfig { lr, ..AdamConfig::default() })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Returns whether the update was applied.
    pub fn step(&mut self, store: &mut ParamStore) -> bool {
        if !store.grads_finite() {
            self.skipped += 1;
            store.zero_grad();
            return false;
        }
        if self.m.len() != store.len() {
            self.m = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let vals = p.value.data_mut();
            for i in 0..vals.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                vals[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        true
    }
}
