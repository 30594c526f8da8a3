//! One-hidden-layer ReLU network with a softmax output.
//!
//! Mini-batch SGD (batch 32, momentum 0.9) on mean cross-entropy plus
//! `mlp_l2 / 2 · ‖W‖²`. After each epoch the full-pass loss is compared with
//! the previous one; an epoch that increased it is rolled back and the
//! learning rate halved.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::{softmax_in_place, HyperParams};
use crate::seed;

pub const BATCH_SIZE: usize = 32;
pub const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `d × h`
    pub(crate) w1: Array2<f64>,
    pub(crate) b1: Array1<f64>,
    /// `h × ℓ`
    pub(crate) w2: Array2<f64>,
    pub(crate) b2: Array1<f64>,
}

struct Velocity {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl Mlp {
    fn init(dim: usize, hidden: usize, classes: usize, rng: &mut seed::Rng) -> Self {
        let mut he = |fan_in: usize, shape: (usize, usize)| {
            let scale = (2.0 / fan_in as f64).sqrt();
            Array2::from_shape_simple_fn(shape, || {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
        };
        let w1 = he(dim, (dim, hidden));
        let w2 = he(hidden, (hidden, classes));
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(classes),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut hidden = x.dot(&self.w1) + &self.b1;
        hidden.mapv_inplace(|v| v.max(0.0));
        let mut out = (hidden.dot(&self.w2) + &self.b2).as_standard_layout().into_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            softmax_in_place(row.as_slice_mut().expect("contiguous"));
        }
        (hidden, out)
    }

    fn l2_term(&self, l2: f64) -> f64 {
        let sq = self.w1.iter().map(|w| w * w).sum::<f64>()
            + self.w2.iter().map(|w| w * w).sum::<f64>();
        0.5 * l2 * sq
    }

    /// Full-pass regularized loss.
    pub fn loss(&self, x: &Array2<f64>, y: &[usize], l2: f64) -> f64 {
        let (_, probs) = self.forward(x);
        let ce: f64 = probs
            .axis_iter(Axis(0))
            .zip(y)
            .map(|(p, &label)| -p[label].max(f64::MIN_POSITIVE).ln())
            .sum();
        ce / x.nrows() as f64 + self.l2_term(l2)
    }

    fn sgd_step(&mut self, xb: &Array2<f64>, yb: &[usize], lr: f64, l2: f64, v: &mut Velocity) {
        let (hidden, mut dz) = self.forward(xb);
        for (mut row, &label) in dz.axis_iter_mut(Axis(0)).zip(yb) {
            row[label] -= 1.0;
        }
        dz /= xb.nrows() as f64;
        let gw2 = hidden.t().dot(&dz) + &(&self.w2 * l2);
        let gb2 = dz.sum_axis(Axis(0));
        let mut dh = dz.dot(&self.w2.t());
        dh.zip_mut_with(&hidden, |d, &h| {
            if h <= 0.0 {
                *d = 0.0;
            }
        });
        let gw1 = xb.t().dot(&dh) + &(&self.w1 * l2);
        let gb1 = dh.sum_axis(Axis(0));

        v.w1 = &v.w1 * MOMENTUM - &(gw1 * lr);
        v.b1 = &v.b1 * MOMENTUM - &(gb1 * lr);
        v.w2 = &v.w2 * MOMENTUM - &(gw2 * lr);
        v.b2 = &v.b2 * MOMENTUM - &(gb2 * lr);
        self.w1 += &v.w1;
        self.b1 += &v.b1;
        self.w2 += &v.w2;
        self.b2 += &v.b2;
    }

    /// Returns the model and the full-pass loss after each epoch (first
    /// entry at initialization).
    pub(crate) fn fit(
        x: &Array2<f64>,
        y: &[usize],
        num_classes: usize,
        params: &HyperParams,
        seed: u64,
    ) -> (Self, Vec<f64>) {
        let mut rng = seed::rng(seed);
        let mut model = Self::init(x.ncols(), params.mlp_hidden, num_classes, &mut rng);
        let zero_velocity = |m: &Mlp| Velocity {
            w1: Array2::zeros(m.w1.raw_dim()),
            b1: Array1::zeros(m.b1.raw_dim()),
            w2: Array2::zeros(m.w2.raw_dim()),
            b2: Array1::zeros(m.b2.raw_dim()),
        };
        let mut velocity = zero_velocity(&model);
        let l2 = params.mlp_l2;
        let mut lr = params.mlp_learning_rate;
        let mut loss = model.loss(x, y, l2);
        let mut history = vec![loss];
        let mut order: Vec<usize> = (0..x.nrows()).collect();

        for _ in 0..params.mlp_epochs {
            let snapshot = model.clone();
            order.shuffle(&mut rng);
            for batch in order.chunks(BATCH_SIZE) {
                let xb = x.select(Axis(0), batch);
                let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
                model.sgd_step(&xb, &yb, lr, l2, &mut velocity);
            }
            let new_loss = model.loss(x, y, l2);
            if new_loss.is_finite() && new_loss <= loss {
                loss = new_loss;
            } else {
                model = snapshot;
                velocity = zero_velocity(&model);
                lr /= 2.0;
            }
            history.push(loss);
        }
        (model, history)
    }

    pub fn hidden_size(&self) -> usize {
        self.b1.len()
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut h: Vec<f64> = self.b1.to_vec();
        for (xi, w_row) in x.iter().zip(self.w1.axis_iter(Axis(0))) {
            if *xi != 0.0 {
                for (hj, w) in h.iter_mut().zip(w_row) {
                    *hj += xi * w;
                }
            }
        }
        let mut z: Vec<f64> = self.b2.to_vec();
        for (hj, w_row) in h.iter().zip(self.w2.axis_iter(Axis(0))) {
            let a = hj.max(0.0);
            if a != 0.0 {
                for (zk, w) in z.iter_mut().zip(w_row) {
                    *zk += a * w;
                }
            }
        }
        softmax_in_place(&mut z);
        z
    }
}

/// Trains and returns the per-epoch loss history; exposed for convergence
/// checks.
pub fn fit_with_history(
    x: &Array2<f64>,
    y: &[usize],
    num_classes: usize,
    params: &HyperParams,
    seed: u64,
) -> (Mlp, Vec<f64>) {
    Mlp::fit(x, y, num_classes, params, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_is_monotone_and_predictions_valid() {
        let x = Array2::from_shape_fn((64, 4), |(i, j)| ((i * 13 + j * 5) % 9) as f64 / 8.0);
        let y: Vec<usize> = (0..64).map(|i| usize::from(x[[i, 0]] + x[[i, 1]] > 1.0)).collect();
        let params = HyperParams {
            mlp_hidden: 16,
            mlp_epochs: 30,
            mlp_learning_rate: 0.05,
            ..HyperParams::default()
        };
        let (m, hist) = fit_with_history(&x, &y, 2, &params, 3);
        assert!(hist.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        assert!(hist.last().unwrap() < &hist[0]);
        let p = m.predict(&[0.2, 0.9, 0.1, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn predict_matches_batched_forward() {
        let x = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64 - j as f64) / 4.0);
        let m = Mlp::init(5, 7, 3, &mut seed::rng(1));
        let (_, batch) = m.forward(&x);
        for (i, row) in batch.axis_iter(Axis(0)).enumerate() {
            let single = m.predict(x.row(i).as_slice().unwrap());
            for (a, b) in single.iter().zip(row) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
