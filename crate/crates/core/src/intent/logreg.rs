use super::model::{softmax, Tensor, TrainError};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct LogRegHyper {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
}

impl Default for LogRegHyper {
    fn default() -> Self {
        LogRegHyper {
            learning_rate: 0.2,
            l2: 1e-4,
            epochs: 300,
        }
    }
}

/// Multinomial softmax regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LogRegModel {
    pub hyperparameters: LogRegHyper,
    /// Shape `[K, D]`.
    pub weights: Tensor,
    /// Shape `[K]`.
    pub bias: Tensor,
}

impl LogRegModel {
    pub fn zeros(k: usize, d: usize, hyper: LogRegHyper) -> Self {
        LogRegModel {
            hyperparameters: hyper,
            weights: Tensor::zeros(&[k, d]),
            bias: Tensor::zeros(&[k]),
        }
    }

    fn k(&self) -> usize {
        self.bias.data.len()
    }

    fn d(&self) -> usize {
        self.weights.shape.get(1).copied().unwrap_or(0)
    }

    pub fn check_shapes(&self, d: usize, k: usize) -> Result<(), String> {
        if self.weights.shape != [k, d] || self.bias.shape != [k] || !self.weights.is_consistent() || !self.bias.is_consistent() {
            return Err(format!(
                "logistic regression expects weights [{k}, {d}] and bias [{k}], found {:?} and {:?}",
                self.weights.shape, self.bias.shape
            ));
        }
        Ok(())
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d();
        (0..self.k())
            .map(|c| {
                let row = &self.weights.data[c * d..(c + 1) * d];
                self.bias.data[c]
                    + row
                        .iter()
                        .zip(x)
                        .filter(|(_, &xi)| xi != 0.0)
                        .map(|(w, xi)| w * xi)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.logits(x);
        softmax(&mut z);
        z
    }

    /// Mean cross-entropy plus `l2 / 2 * |W|^2`, with gradients for `W` and `b`.
    pub fn loss_and_grad(&self, x: &[Vec<f64>], y: &[usize]) -> (f64, Vec<f64>, Vec<f64>) {
        let (k, d) = (self.k(), self.d());
        let n = x.len() as f64;
        let l2 = self.hyperparameters.l2;
        let mut gw = vec![0.0; k * d];
        let mut gb = vec![0.0; k];
        let mut loss = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let z = self.logits(xi);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - z[yi];
            let p: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
            for c in 0..k {
                let r = p[c] - if c == yi { 1.0 } else { 0.0 };
                gb[c] += r;
                let row = &mut gw[c * d..(c + 1) * d];
                for (g, &v) in row.iter_mut().zip(xi) {
                    if v != 0.0 {
                        *g += r * v;
                    }
                }
            }
        }
        loss /= n;
        loss += 0.5 * l2 * self.weights.data.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in gw.iter_mut().zip(&self.weights.data) {
            *g = *g / n + l2 * w;
        }
        for g in gb.iter_mut() {
            *g /= n;
        }
        (loss, gw, gb)
    }
}

/// Full-batch gradient descent from zero weights. Returns the model and the
/// loss before each epoch's update.
pub fn train_logreg(
    x: &[Vec<f64>],
    y: &[usize],
    k: usize,
    hyper: &LogRegHyper,
) -> Result<(LogRegModel, Vec<f64>), TrainError> {
    if x.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if !(hyper.learning_rate > 0.0) || !(hyper.l2 >= 0.0) {
        return Err(TrainError::Hyper(format!(
            "learningRate must be > 0 and l2 >= 0 (got {} and {})",
            hyper.learning_rate, hyper.l2
        )));
    }
    let mut m = LogRegModel::zeros(k, x[0].len(), hyper.clone());
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut last_finite = f64::NAN;
    for epoch in 0..hyper.epochs {
        let (loss, gw, gb) = m.loss_and_grad(x, y);
        if !loss.is_finite() {
            return Err(TrainError::Diverged { epoch, last_finite });
        }
        last_finite = loss;
        history.push(loss);
        for (w, g) in m.weights.data.iter_mut().zip(gw) {
            *w -= hyper.learning_rate * g;
        }
        for (b, g) in m.bias.data.iter_mut().zip(gb) {
            *b -= hyper.learning_rate * g;
        }
    }
    Ok((m, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_toy_set() {
        let x: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let s = if i < 10 { 1.0 } else { -1.0 };
                vec![s * (1.0 + i as f64 * 0.1), 0.5]
            })
            .collect();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let (m, _) = train_logreg(&x, &y, 2, &LogRegHyper::default()).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| {
                let p = m.predict_proba(xi);
                usize::from(p[1] > p[0]) == yi
            })
            .count();
        assert_eq!(correct, 20);
    }

    fn fd_check(m: &LogRegModel, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let (_, gw, gb) = m.loss_and_grad(x, y);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let mut check = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        };
        for i in 0..m.weights.data.len() {
            let (mut a, mut b) = (m.clone(), m.clone());
            a.weights.data[i] += h;
            b.weights.data[i] -= h;
            check(gw[i], a.loss_and_grad(x, y).0, b.loss_and_grad(x, y).0);
        }
        for i in 0..m.bias.data.len() {
            let (mut a, mut b) = (m.clone(), m.clone());
            a.bias.data[i] += h;
            b.bias.data[i] -= h;
            check(gb[i], a.loss_and_grad(x, y).0, b.loss_and_grad(x, y).0);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..10).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let hyper = LogRegHyper {
            l2: 0.1,
            ..LogRegHyper::default()
        };
        let zero = LogRegModel::zeros(3, 6, hyper);
        assert!(fd_check(&zero, &x, &y) < 1e-5);
        let mut random = zero.clone();
        for w in random.weights.data.iter_mut().chain(random.bias.data.iter_mut()) {
            *w = rng.gen_range(-1.0..1.0);
        }
        assert!(fd_check(&random, &x, &y) < 1e-5);
    }

    #[test]
    fn diverges_on_huge_learning_rate() {
        let x = vec![vec![1e200, -1e200], vec![-1e200, 1e200]];
        let hyper = LogRegHyper {
            learning_rate: 1e100,
            l2: 0.0,
            epochs: 5,
        };
        assert!(matches!(
            train_logreg(&x, &[0, 1], 2, &hyper),
            Err(TrainError::Diverged { .. })
        ));
    }
}
