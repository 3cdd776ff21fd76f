use super::{DenseArray, ParamStore};

/// Adam with a linear learning-rate ramp over the first `warmup_steps`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<DenseArray>,
    v: Vec<DenseArray>,
}

impl Adam {
    pub fn new(store: &ParamStore, base_lr: f64, warmup_steps: u64) -> Self {
        let zeros = |p: &super::Parameter| DenseArray::zeros(p.value.shape());
        Self {
            base_lr,
            warmup_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: store.iter().map(zeros).collect(),
            v: store.iter().map(zeros).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Rate used by the next call to [`Adam::step`].
    pub fn effective_lr(&self) -> f64 {
        if self.warmup_steps == 0 || self.step >= self.warmup_steps {
            self.base_lr
        } else {
            self.base_lr * self.step as f64 / self.warmup_steps as f64
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        let lr = self.effective_lr();
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        self.step += 1;
    }
}
