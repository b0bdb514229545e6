use serde::{Deserialize, Serialize};

use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tape::Gradients;
use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction over the trainable entries of a store.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub step: u64,
    /// First and second moments, `None` for frozen parameters.
    pub moments: Vec<Option<(Tensor<F>, Tensor<F>)>>,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let moments = store
            .iter()
            .map(|(_, p)| {
                p.trainable
                    .then(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())))
            })
            .collect();
        Adam {
            config,
            step: 0,
            moments,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>) {
        self.apply(store, grads.params());
    }

    /// One update from per-parameter gradients indexed by registry
    /// position (`None` = no gradient).
    pub fn apply(&mut self, store: &mut ParamStore<F>, grads: &[Option<Tensor<F>>]) {
        self.step += 1;
        let c = self.config;
        let b1 = F::lit(c.beta1);
        let b2 = F::lit(c.beta2);
        let bc1 = F::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = F::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = F::lit(c.lr);
        let eps = F::lit(c.eps);
        for (idx, slot) in self.moments.iter_mut().enumerate() {
            let Some((m, v)) = slot else { continue };
            let id = ParamId(idx);
            let Some(g) = grads.get(idx).and_then(Option::as_ref) else { continue };
            let w = store.value_mut(id).data_mut();
            for (((w, m), v), &g) in w
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *w = *w - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::Tape;

    #[test]
    fn minimises_a_quadratic_and_skips_frozen() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::from_f64(&[2], &[3.0, -2.0]).unwrap(), true);
        let k = store.add("k", Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap(), false);
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &store);
        for _ in 0..2000 {
            let grads = {
                let mut tape = Tape::with_params(&store);
                let a = tape.param(x);
                let b = tape.param(k);
                let d = tape.sub(a, b).unwrap();
                let sq = tape.mul(d, d).unwrap();
                let s = tape.sum(sq);
                tape.backward(s).unwrap()
            };
            adam.step(&mut store, &grads);
        }
        for &v in store.value(x).data() {
            assert!((v - 1.0).abs() < 1e-3);
        }
        assert_eq!(store.value(k).data(), &[1.0, 1.0]);
    }
}
