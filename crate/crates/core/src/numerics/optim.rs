use super::params::{Gradients, ParamStore};
use super::tape::Matrix;

/// Adam with decoupled weight decay. Decay applies to rank-2 weights only;
/// biases, gains and shifts are left alone.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamW {
    pub fn new(store: &ParamStore, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Matrix> = store.ids().map(|id| Matrix::zeros(store.value(id).dim())).collect();
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            second: zeros.clone(),
            first: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for (id, g) in grads.iter() {
            let i = id.index();
            let decay = if store.shape(id).len() == 2 { self.weight_decay } else { 0.0 };
            self.first[i].zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            self.second[i].zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let p = store.value_mut(id);
            ndarray::Zip::from(p)
                .and(&self.first[i])
                .and(&self.second[i])
                .for_each(|p, &m, &v| {
                    *p -= lr * decay * *p;
                    *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                });
        }
    }
}
