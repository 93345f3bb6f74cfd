//! First-order update rules applied to the gradients held in a [`ParameterStore`].

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::params::ParameterStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adagrad,
    Adam,
}

const ADAGRAD_EPS: f64 = 1e-10;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    /// Adagrad: squared-gradient sums. Adam: first moments.
    first: Vec<Tensor>,
    /// Adam second moments.
    second: Vec<Tensor>,
    steps: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParameterStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Optimizer {
            kind,
            lr,
            first: zeros(),
            second: match kind {
                OptimizerKind::Adam => zeros(),
                OptimizerKind::Adagrad => Vec::new(),
            },
            steps: 0,
        }
    }

    /// One update of every trainable parameter from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParameterStore) {
        self.steps += 1;
        let lr = self.lr;
        let bias1 = 1.0 - libm::pow(ADAM_BETA1, self.steps as f64);
        let bias2 = 1.0 - libm::pow(ADAM_BETA2, self.steps as f64);
        for (k, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            match self.kind {
                OptimizerKind::Adagrad => {
                    let acc = self.first[k].data_mut();
                    for ((w, &g), a) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(acc) {
                        *a += g * g;
                        *w -= lr * g / (libm::sqrt(*a) + ADAGRAD_EPS);
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.first[k].data_mut();
                    let v = self.second[k].data_mut();
                    for (((w, &g), m), v) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(p.grad.data())
                        .zip(m)
                        .zip(v)
                    {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let mh = *m / bias1;
                        let vh = *v / bias2;
                        *w -= lr * mh / (libm::sqrt(vh) + ADAM_EPS);
                    }
                }
            }
        }
    }
}
