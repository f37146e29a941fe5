use super::model::{softmax, Tensor, TrainError};
use crate::encoding::TOKEN_DIM;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type Step = [f64; TOKEN_DIM];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct LstmHyper {
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for LstmHyper {
    fn default() -> Self {
        LstmHyper {
            hidden_size: 32,
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 32,
        }
    }
}

/// Single-layer LSTM over one-hot tokens; the final hidden state feeds an
/// affine softmax layer. Gate blocks in `w` and `b` are ordered input, forget,
/// output, candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LstmModel {
    pub hyperparameters: LstmHyper,
    /// Shape `[4H, I + H]`, acting on `[x_t; h_{t-1}]`.
    pub w: Tensor,
    /// Shape `[4H]`.
    pub b: Tensor,
    /// Shape `[K, H]`.
    pub w_out: Tensor,
    /// Shape `[K]`.
    pub b_out: Tensor,
}

/// Gradients with the same layout as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl LstmGrads {
    fn zeros_like(m: &LstmModel) -> Self {
        LstmGrads {
            w: vec![0.0; m.w.data.len()],
            b: vec![0.0; m.b.data.len()],
            w_out: vec![0.0; m.w_out.data.len()],
            b_out: vec![0.0; m.b_out.data.len()],
        }
    }

    fn add(&mut self, o: &LstmGrads) {
        for (a, b) in [
            (&mut self.w, &o.w),
            (&mut self.b, &o.b),
            (&mut self.w_out, &o.w_out),
            (&mut self.b_out, &o.b_out),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, s: f64) {
        for v in [&mut self.w, &mut self.b, &mut self.w_out, &mut self.b_out] {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        [&self.w, &self.b, &self.w_out, &self.b_out]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct StepCache {
    xh: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmModel {
    /// Uniform `[-1/sqrt(H), 1/sqrt(H)]` weights, zero biases except a forget bias of 1.
    pub fn init(classes: usize, hyper: LstmHyper, seed: u64) -> Self {
        let h = hyper.hidden_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (h as f64).sqrt();
        let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let w = uniform(4 * h * (TOKEN_DIM + h));
        let w_out = uniform(classes * h);
        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        LstmModel {
            hyperparameters: hyper,
            w: Tensor {
                shape: vec![4 * h, TOKEN_DIM + h],
                data: w,
            },
            b: Tensor { shape: vec![4 * h], data: b },
            w_out: Tensor {
                shape: vec![classes, h],
                data: w_out,
            },
            b_out: Tensor::zeros(&[classes]),
        }
    }

    fn hidden(&self) -> usize {
        self.hyperparameters.hidden_size
    }

    fn classes(&self) -> usize {
        self.b_out.data.len()
    }

    pub fn check_shapes(&self, input: usize, k: usize) -> Result<(), String> {
        let h = self.hidden();
        let ok = self.w.shape == [4 * h, input + h]
            && self.b.shape == [4 * h]
            && self.w_out.shape == [k, h]
            && self.b_out.shape == [k]
            && [&self.w, &self.b, &self.w_out, &self.b_out].iter().all(|t| t.is_consistent());
        if ok {
            Ok(())
        } else {
            Err(format!("LSTM parameter shapes do not match hidden size {h}, input {input}, {k} classes"))
        }
    }

    fn run(&self, seq: &[Step], keep: bool) -> (Vec<f64>, Vec<StepCache>) {
        let h = self.hidden();
        let cols = TOKEN_DIM + h;
        let mut hs = vec![0.0; h];
        let mut c = vec![0.0; h];
        let mut caches = Vec::with_capacity(if keep { seq.len() } else { 0 });
        let mut z = vec![0.0; 4 * h];
        for x in seq {
            let mut xh = Vec::with_capacity(cols);
            xh.extend_from_slice(x);
            xh.extend_from_slice(&hs);
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &self.w.data[r * cols..(r + 1) * cols];
                let mut s = self.b.data[r];
                for (wv, xv) in row.iter().zip(&xh) {
                    if *xv != 0.0 {
                        s += wv * xv;
                    }
                }
                *zr = s;
            }
            let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
            let o: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = z[3 * h..].iter().map(|&v| v.tanh()).collect();
            let c_prev = c.clone();
            for j in 0..h {
                c[j] = f[j] * c_prev[j] + i[j] * g[j];
            }
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            for j in 0..h {
                hs[j] = o[j] * tanh_c[j];
            }
            if keep {
                caches.push(StepCache {
                    xh,
                    i,
                    f,
                    o,
                    g,
                    c_prev,
                    tanh_c,
                });
            }
        }
        (hs, caches)
    }

    fn logits(&self, h_last: &[f64]) -> Vec<f64> {
        let h = self.hidden();
        (0..self.classes())
            .map(|k| {
                self.b_out.data[k]
                    + self.w_out.data[k * h..(k + 1) * h]
                        .iter()
                        .zip(h_last)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, seq: &[Step]) -> Vec<f64> {
        let (h_last, _) = self.run(seq, false);
        let mut z = self.logits(&h_last);
        softmax(&mut z);
        z
    }

    fn sample_loss(&self, seq: &[Step], y: usize) -> f64 {
        let (h_last, _) = self.run(seq, false);
        let z = self.logits(&h_last);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - z[y]
    }

    fn sample_grad(&self, seq: &[Step], y: usize) -> LstmGrads {
        let h = self.hidden();
        let cols = TOKEN_DIM + h;
        let k = self.classes();
        let (h_last, caches) = self.run(seq, true);
        let mut p = self.logits(&h_last);
        softmax(&mut p);
        p[y] -= 1.0;
        let mut gr = LstmGrads::zeros_like(self);
        let mut dh = vec![0.0; h];
        for c in 0..k {
            gr.b_out[c] = p[c];
            for j in 0..h {
                gr.w_out[c * h + j] = p[c] * h_last[j];
                dh[j] += self.w_out.data[c * h + j] * p[c];
            }
        }
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for st in caches.iter().rev() {
            for j in 0..h {
                let dout = dh[j] * st.tanh_c[j];
                dc[j] += dh[j] * st.o[j] * (1.0 - st.tanh_c[j] * st.tanh_c[j]);
                dz[j] = dc[j] * st.g[j] * st.i[j] * (1.0 - st.i[j]);
                dz[h + j] = dc[j] * st.c_prev[j] * st.f[j] * (1.0 - st.f[j]);
                dz[2 * h + j] = dout * st.o[j] * (1.0 - st.o[j]);
                dz[3 * h + j] = dc[j] * st.i[j] * (1.0 - st.g[j] * st.g[j]);
                dc[j] *= st.f[j];
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gr.b[r] += d;
                let wrow = &self.w.data[r * cols..(r + 1) * cols];
                let grow = &mut gr.w[r * cols..(r + 1) * cols];
                for (col, &xv) in st.xh.iter().enumerate() {
                    if xv != 0.0 {
                        grow[col] += d * xv;
                    }
                }
                for j in 0..h {
                    dh[j] += wrow[TOKEN_DIM + j] * d;
                }
            }
        }
        gr
    }

    /// Mean cross-entropy over a batch with its gradient. Per-sample work runs
    /// in parallel; the reduction is sequential so results do not depend on
    /// thread scheduling.
    pub fn loss_and_grad(&self, xs: &[&[Step]], ys: &[usize]) -> (f64, LstmGrads) {
        let parts: Vec<(f64, LstmGrads)> = xs
            .par_iter()
            .zip(ys.par_iter())
            .map(|(x, &y)| (self.sample_loss(x, y), self.sample_grad(x, y)))
            .collect();
        let mut total = LstmGrads::zeros_like(self);
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            total.add(g);
        }
        let n = xs.len() as f64;
        total.scale(1.0 / n);
        (loss / n, total)
    }

    pub fn mean_loss(&self, xs: &[&[Step]], ys: &[usize]) -> f64 {
        let losses: Vec<f64> = xs
            .par_iter()
            .zip(ys.par_iter())
            .map(|(x, &y)| self.sample_loss(x, y))
            .collect();
        losses.iter().sum::<f64>() / xs.len() as f64
    }

    fn params_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w.data, &mut self.b.data, &mut self.w_out.data, &mut self.b_out.data]
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &LstmModel) -> Self {
        let sizes = [model.w.data.len(), model.b.data.len(), model.w_out.data.len(), model.b_out.data.len()];
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut LstmModel, g: &LstmGrads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let grads = [&g.w, &g.b, &g.w_out, &g.b_out];
        for (slot, params) in model.params_mut().into_iter().enumerate() {
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for (idx, p) in params.iter_mut().enumerate() {
                let gi = grads[slot][idx];
                m[idx] = Self::BETA1 * m[idx] + (1.0 - Self::BETA1) * gi;
                v[idx] = Self::BETA2 * v[idx] + (1.0 - Self::BETA2) * gi * gi;
                *p -= lr * (m[idx] / c1) / ((v[idx] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Mini-batch training with Adam. Batches are drawn from a seeded shuffle
/// each epoch. Returns the model and the full training loss after each epoch.
pub fn train_lstm(
    xs: &[Vec<Step>],
    ys: &[usize],
    k: usize,
    hyper: &LstmHyper,
    seed: u64,
) -> Result<(LstmModel, Vec<f64>), TrainError> {
    if xs.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if hyper.hidden_size == 0 || hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) {
        return Err(TrainError::Hyper(
            "hiddenSize and batchSize must be at least 1 and learningRate positive".into(),
        ));
    }
    let mut model = LstmModel::init(k, hyper.clone(), seed);
    let mut adam = Adam::new(&model);
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let all: Vec<&[Step]> = xs.iter().map(|s| s.as_slice()).collect();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut last_finite = model.mean_loss(&all, ys);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(hyper.batch_size) {
            let bx: Vec<&[Step]> = chunk.iter().map(|&i| all[i]).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            let (loss, g) = model.loss_and_grad(&bx, &by);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, last_finite });
            }
            adam.step(&mut model, &g, hyper.learning_rate);
        }
        let loss = model.mean_loss(&all, ys);
        if !loss.is_finite() {
            return Err(TrainError::Diverged { epoch, last_finite });
        }
        last_finite = loss;
        history.push(loss);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_seq(rng: &mut ChaCha8Rng, len: usize) -> Vec<Step> {
        (0..len)
            .map(|_| {
                let mut s = [0.0; TOKEN_DIM];
                s[rng.gen_range(0..TOKEN_DIM)] = 1.0;
                s
            })
            .collect()
    }

    #[test]
    fn zero_model_is_uniform() {
        let mut m = LstmModel::init(4, LstmHyper::default(), 1);
        for p in m.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for len in [1, 5, 10] {
            let p = m.forward(&one_hot_seq(&mut rng, len));
            assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let hyper = LstmHyper {
            hidden_size: 4,
            ..LstmHyper::default()
        };
        let mut m = LstmModel::init(3, hyper, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for p in m.params_mut() {
            p.iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
        }
        let seqs: Vec<Vec<Step>> = (0..4).map(|_| one_hot_seq(&mut rng, 6)).collect();
        let xs: Vec<&[Step]> = seqs.iter().map(|s| s.as_slice()).collect();
        let ys = [0, 1, 2, 1];
        let analytic = m.loss_and_grad(&xs, &ys).1.flat();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut idx = 0;
        for slot in 0..4 {
            let len = m.clone().params_mut()[slot].len();
            for j in 0..len {
                let (mut a, mut b) = (m.clone(), m.clone());
                a.params_mut()[slot][j] += h;
                b.params_mut()[slot][j] -= h;
                let numeric = (a.mean_loss(&xs, &ys) - b.mean_loss(&xs, &ys)) / (2.0 * h);
                // Floor keeps roundoff on near-zero gradients from dominating.
                let rel = (analytic[idx] - numeric).abs() / analytic[idx].abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
                idx += 1;
            }
        }
        assert_eq!(idx, analytic.len());
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn learns_first_token_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<Vec<Step>> = (0..200).map(|_| one_hot_seq(&mut rng, 5)).collect();
        let ys: Vec<usize> = xs.iter().map(|s| usize::from(s[0][0] + s[0][1] + s[0][2] > 0.0)).collect();
        let hyper = LstmHyper {
            hidden_size: 8,
            epochs: 30,
            learning_rate: 0.02,
            batch_size: 16,
        };
        let (m, hist) = train_lstm(&xs, &ys, 2, &hyper, 3).unwrap();
        assert!(hist.last().unwrap() < &0.1, "{hist:?}");
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| {
                let p = m.forward(x);
                usize::from(p[1] > p[0]) == y
            })
            .count();
        assert_eq!(correct, 200);
    }

    #[test]
    fn seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<Vec<Step>> = (0..40).map(|_| one_hot_seq(&mut rng, 4)).collect();
        let ys: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let hyper = LstmHyper {
            hidden_size: 6,
            epochs: 3,
            ..LstmHyper::default()
        };
        let a = train_lstm(&xs, &ys, 2, &hyper, 1).unwrap();
        let b = train_lstm(&xs, &ys, 2, &hyper, 1).unwrap();
        assert_eq!(a, b);
    }
}
