use crate::tensor::{ParamStore, Tensor};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies the accumulated gradients in `store` to its unfrozen parameters.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let p = store.get_mut(id);
            if p.frozen {
                continue;
            }
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(&[1.0, -2.0, 0.5]));
        store.get_mut(id).grad = Tensor::row_vector(&[3.0, -0.1, 0.0]);
        let mut adam = Adam::new(0.01);
        adam.step(&mut store);
        let w = &store.get(id).value;
        assert!((w.get(0, 0) - 0.99).abs() < 1e-9);
        assert!((w.get(0, 1) + 1.99).abs() < 1e-9);
        assert_eq!(w.get(0, 2), 0.5);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(&[1.0]));
        store.get_mut(id).frozen = true;
        store.get_mut(id).grad = Tensor::row_vector(&[1.0]);
        Adam::new(0.1).step(&mut store);
        assert_eq!(store.get(id).value.get(0, 0), 1.0);
    }
}
