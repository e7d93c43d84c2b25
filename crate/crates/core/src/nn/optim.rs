use super::params::ParamStore;
use super::tape::{Gradients, Mat};

/// Dense gradient accumulator matching a [`ParamStore`] layout.
#[derive(Debug, Clone)]
pub struct GradAccum {
    pub grads: Vec<Mat>,
}

impl GradAccum {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradAccum {
            grads: store.ids().map(|id| Mat::zeros(store.get(id).dim())).collect(),
        }
    }

    pub fn add(&mut self, g: &Gradients, weight: f64) {
        for (dst, src) in self.grads.iter_mut().zip(g.by_param.iter()) {
            if let Some(src) = src {
                dst.scaled_add(weight, src);
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients are rescaled when their global norm exceeds this value.
    pub clip_norm: Option<f64>,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.ids().map(|id| Mat::zeros(store.get(id).dim())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, acc: &GradAccum) {
        self.t += 1;
        let clip = match self.clip_norm {
            Some(c) => {
                let n = acc.global_norm();
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = &acc.grads[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * clip;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Graph;
    use ndarray::array;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::default();
        let w = store.add("w", array![[3.0, -2.0]]);
        let mut opt = Adam::new(&store, 0.1);
        opt.clip_norm = None;
        let target = array![[0.5, 0.25]];
        for _ in 0..500 {
            let mut g = Graph::new(&store);
            let p = g.param(w);
            let l = g.mse(p, &target);
            let grads = g.backward(l);
            let mut acc = GradAccum::zeros_like(&store);
            acc.add(&grads, 1.0);
            opt.step(&mut store, &acc);
        }
        let v = store.get(w);
        assert!((v[[0, 0]] - 0.5).abs() < 1e-3 && (v[[0, 1]] - 0.25).abs() < 1e-3);
    }
}
