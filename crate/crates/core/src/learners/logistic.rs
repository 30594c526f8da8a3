//! Multinomial logistic regression trained by full-batch gradient descent.
//!
//! The step size starts at 1 and is halved whenever a step would increase
//! the regularized loss; rejected steps are not applied, so the loss
//! sequence is non-increasing. Training stops at a gradient norm below
//! [`GRADIENT_TOLERANCE`] or after `lr_epochs` accepted steps.

use ndarray::{Array1, Array2, Axis};

use super::{softmax_in_place, HyperParams};

pub const GRADIENT_TOLERANCE: f64 = 1e-6;
const MIN_STEP: f64 = 1e-12;
const STEP_GROWTH: f64 = 1.25;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    /// `ℓ × d` weights.
    pub(crate) weights: Array2<f64>,
    pub(crate) bias: Array1<f64>,
}

/// Mean cross-entropy plus `l2 / 2 · ‖W‖²`, and its gradient with respect
/// to the weights and the bias.
pub fn loss_and_gradient(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    x: &Array2<f64>,
    y: &[usize],
    l2: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mut probs = (x.dot(&weights.t()) + bias).as_standard_layout().into_owned();
    let mut loss = 0.0;
    for (mut row, &label) in probs.axis_iter_mut(Axis(0)).zip(y) {
        let z = row.as_slice_mut().expect("contiguous logits");
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[label];
        softmax_in_place(z);
        z[label] -= 1.0;
    }
    // probs now holds (P - Y)
    probs /= n;
    loss = loss / n + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    let grad_w = probs.t().dot(x) + &(weights * l2);
    let grad_b = probs.sum_axis(Axis(0));
    (loss, grad_w, grad_b)
}

impl LogisticRegression {
    /// Returns the model and the loss after each accepted step (the first
    /// entry is the loss at initialization).
    pub(crate) fn fit(
        x: &Array2<f64>,
        y: &[usize],
        num_classes: usize,
        params: &HyperParams,
    ) -> (Self, Vec<f64>) {
        let mut weights = Array2::<f64>::zeros((num_classes, x.ncols()));
        let mut bias = Array1::<f64>::zeros(num_classes);
        let l2 = params.lr_l2;
        let (mut loss, mut gw, mut gb) = loss_and_gradient(&weights, &bias, x, y, l2);
        let mut history = vec![loss];
        let mut step = 1.0;

        for _ in 0..params.lr_epochs {
            let norm = (gw.iter().map(|g| g * g).sum::<f64>()
                + gb.iter().map(|g| g * g).sum::<f64>())
            .sqrt();
            if norm < GRADIENT_TOLERANCE {
                break;
            }
            let mut accepted = false;
            while step >= MIN_STEP {
                let cand_w = &weights - &(&gw * step);
                let cand_b = &bias - &(&gb * step);
                let (cand_loss, cgw, cgb) = loss_and_gradient(&cand_w, &cand_b, x, y, l2);
                if cand_loss <= loss {
                    weights = cand_w;
                    bias = cand_b;
                    loss = cand_loss;
                    gw = cgw;
                    gb = cgb;
                    accepted = true;
                    step *= STEP_GROWTH;
                    break;
                }
                step /= 2.0;
            }
            if !accepted {
                break;
            }
            history.push(loss);
        }
        (Self { weights, bias }, history)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = self
            .weights
            .axis_iter(Axis(0))
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect();
        softmax_in_place(&mut z);
        z
    }
}

/// Trains and returns the per-step loss history; exposed for convergence
/// checks.
pub fn fit_with_history(
    x: &Array2<f64>,
    y: &[usize],
    num_classes: usize,
    params: &HyperParams,
) -> (LogisticRegression, Vec<f64>) {
    LogisticRegression::fit(x, y, num_classes, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_history_is_non_increasing() {
        let x = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 31 + j * 17) % 11) as f64 / 10.0);
        let y: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let (_, hist) = fit_with_history(&x, &y, 3, &HyperParams::default());
        assert!(hist.len() > 1);
        assert!(hist.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let x = Array2::from_shape_fn((5, 2), |(i, j)| (i + j) as f64);
        let y = vec![0, 1, 2, 0, 1];
        let (loss, _, gb) =
            loss_and_gradient(&Array2::zeros((3, 2)), &Array1::zeros(3), &x, &y, 0.5);
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        // class frequencies 2/5, 2/5, 1/5 against uniform 1/3
        assert!((gb[2] - (1.0 / 3.0 - 0.2)).abs() < 1e-12);
    }

    #[test]
    fn single_feature_input() {
        let x = Array2::from_shape_fn((6, 1), |(i, _)| i as f64 / 5.0);
        let y = vec![0, 0, 0, 1, 1, 1];
        let (m, _) = fit_with_history(&x, &y, 2, &HyperParams::default());
        assert!(m.predict(&[1.0])[1] > m.predict(&[0.0])[1]);
    }
}
