//! Parameter update rules.

use serde::{Deserialize, Serialize};

use super::tape::{Mat, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Adam (or plain SGD) over one [`ParamStore`], optionally restricted to a
/// parameter group.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Mat>,
    second: Vec<Mat>,
    steps: Vec<u32>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store
            .ids()
            .map(|id| Mat::zeros(store.value(id).dim()))
            .collect();
        Self {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: zeros.clone(),
            second: zeros,
            steps: vec![0; store.len()],
        }
    }

    /// Apply one step with learning rate `lr` to every parameter whose group
    /// passes `select`, then clear those gradients.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, select: impl Fn(u8) -> bool) {
        let ids: Vec<_> = store.ids().filter(|&id| select(store.group(id))).collect();
        for id in ids {
            let i = id.0;
            let g = std::mem::take(&mut store.grads_mut()[i]);
            match self.kind {
                OptimizerKind::Sgd => store.value_mut(id).scaled_add(-lr, &g),
                OptimizerKind::Adam => {
                    self.steps[i] += 1;
                    let t = self.steps[i] as i32;
                    let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                    let c1 = 1.0 - b1.powi(t);
                    let c2 = 1.0 - b2.powi(t);
                    let p = store.value_mut(id);
                    ndarray::Zip::from(p)
                        .and(&mut self.first[i])
                        .and(&mut self.second[i])
                        .and(&g)
                        .for_each(|p, m, v, &g| {
                            *m = b1 * *m + (1.0 - b1) * g;
                            *v = b2 * *v + (1.0 - b2) * g * g;
                            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                        });
                }
            }
            store.grads_mut()[i] = g;
        }
        for id in store
            .ids()
            .filter(|&id| select(store.group(id)))
            .collect::<Vec<_>>()
        {
            store.zero_grad_of(id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store_with_grad(g: Mat) -> ParamStore {
        let mut store = ParamStore::new();
        let id = store.add("w", 0, array![[1.0, -1.0]]);
        store.add_grad(id, &g);
        store
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = store_with_grad(Mat::zeros((1, 2)));
        let mut opt = Optimizer::new(OptimizerKind::Adam, &store);
        opt.step(&mut store, 0.1, |_| true);
        assert_eq!(
            store.value(super::super::tape::ParamId(0)),
            &array![[1.0, -1.0]]
        );
    }

    #[test]
    fn first_step_opposes_gradient() {
        let mut store = store_with_grad(array![[0.5, -2.0]]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, &store);
        opt.step(&mut store, 0.1, |_| true);
        let w = store.value(super::super::tape::ParamId(0));
        assert!(w[[0, 0]] < 1.0 && w[[0, 1]] > -1.0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut store = store_with_grad(array![[0.3, 0.7]]);
            let mut opt = Optimizer::new(OptimizerKind::Adam, &store);
            for _ in 0..5 {
                store.add_grad(super::super::tape::ParamId(0), &array![[0.3, -0.1]]);
                opt.step(&mut store, 0.01, |_| true);
            }
            store.value(super::super::tape::ParamId(0)).clone()
        };
        assert_eq!(run(), run());
    }
}
