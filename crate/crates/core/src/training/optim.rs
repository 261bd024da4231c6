use crate::nn::{Grads, Matrix, ParamStore};

/// AdamW with decoupled weight decay, `p *= 1 - lr * wd` before the Adam step.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| Matrix::zeros(store.get(id).raw_dim()))
                .collect::<Vec<_>>()
        };
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Updates the parameters whose `trainable` flag is set; the others and
    /// their moments are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64, trainable: &[bool]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - lr * self.weight_decay;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            if !trainable[i] {
                continue;
            }
            let g = grads.get(id);
            let p = store.get_mut(id);
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            ndarray::Zip::from(p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *p *= decay;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

/// Global L2 norm over the selected gradients.
pub fn global_norm(grads: &Grads, trainable: &[bool]) -> f64 {
    (0..grads.len())
        .filter(|&i| trainable[i])
        .map(|i| grads.values_at(i).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales the selected gradients so their global norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, trainable: &[bool], max_norm: f64) -> f64 {
    let norm = global_norm(grads, trainable);
    if norm > max_norm {
        let s = max_norm / norm;
        for i in (0..grads.len()).filter(|&i| trainable[i]) {
            *grads.values_at_mut(i) *= s;
        }
    }
    norm
}
