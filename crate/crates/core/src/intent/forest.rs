use super::model::{Tensor, TrainError};
use crate::util::derive_seed;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct ForestHyper {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features considered per split; `None` means `round(sqrt(d))`.
    pub feature_subsample: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestHyper {
    fn default() -> Self {
        ForestHyper {
            trees: 100,
            max_depth: 8,
            min_leaf: 1,
            feature_subsample: None,
            bootstrap: true,
        }
    }
}

/// One CART tree as parallel node arrays. Leaves have `feature = -1`; an
/// internal node sends `x[feature] <= threshold` to `left`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i64>,
    pub threshold: Vec<f64>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// Shape `[nodes, K]`: class frequencies of the training samples at each node.
    pub value: Tensor,
}

impl Tree {
    fn leaf_of(&self, x: &[f64]) -> usize {
        let mut n = 0;
        while self.feature[n] >= 0 {
            n = if x[self.feature[n] as usize] <= self.threshold[n] {
                self.left[n]
            } else {
                self.right[n]
            };
        }
        n
    }

    pub fn predict_proba(&self, x: &[f64]) -> &[f64] {
        let k = self.value.shape[1];
        let n = self.leaf_of(x);
        &self.value.data[n * k..(n + 1) * k]
    }

    pub fn nodes(&self) -> usize {
        self.feature.len()
    }

    fn check(&self, d: usize, k: usize) -> Result<(), String> {
        let n = self.nodes();
        let lens = [self.threshold.len(), self.left.len(), self.right.len()];
        if n == 0 || lens.iter().any(|&l| l != n) || self.value.shape != [n, k] || !self.value.is_consistent() {
            return Err("tree arrays have inconsistent lengths".into());
        }
        for i in 0..n {
            let f = self.feature[i];
            if f >= 0 && (f as usize >= d || self.left[i] >= n || self.right[i] >= n || self.left[i] <= i || self.right[i] <= i) {
                return Err(format!("tree node {i} references an invalid feature or child"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ForestModel {
    pub hyperparameters: ForestHyper,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Mean of the per-tree leaf distributions.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let k = self.trees[0].value.shape[1];
        let mut out = vec![0.0; k];
        for t in &self.trees {
            for (o, p) in out.iter_mut().zip(t.predict_proba(x)) {
                *o += p;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub fn check_shapes(&self, d: usize, k: usize) -> Result<(), String> {
        if self.trees.is_empty() {
            return Err("forest has no trees".into());
        }
        self.trees.iter().try_for_each(|t| t.check(d, k))
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    k: usize,
    hyper: &'a ForestHyper,
    mtry: usize,
    tree: Tree,
}

fn gini_weighted(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    nf - counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / nf
}

impl Builder<'_> {
    fn push_node(&mut self, counts: &[usize], n: usize) -> usize {
        let id = self.tree.feature.len();
        self.tree.feature.push(-1);
        self.tree.threshold.push(0.0);
        self.tree.left.push(0);
        self.tree.right.push(0);
        self.tree
            .value
            .data
            .extend(counts.iter().map(|&c| c as f64 / n as f64));
        self.tree.value.shape[0] += 1;
        id
    }

    /// Best `(feature, threshold, weighted child impurity)` among `features`.
    fn best_split(&self, idx: &[usize], features: &[usize]) -> Option<(usize, f64, f64)> {
        let min_leaf = self.hyper.min_leaf.max(1);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for &f in features {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0usize; self.k];
            let mut right = vec![0usize; self.k];
            for &(_, c) in &pairs {
                right[c] += 1;
            }
            for pos in 1..pairs.len() {
                let c = pairs[pos - 1].1;
                left[c] += 1;
                right[c] -= 1;
                if pairs[pos - 1].0 == pairs[pos].0 || pos < min_leaf || pairs.len() - pos < min_leaf {
                    continue;
                }
                let score = gini_weighted(&left, pos) + gini_weighted(&right, pairs.len() - pos);
                if best.is_none_or(|b| score < b.2 - 1e-12) {
                    best = Some((f, 0.5 * (pairs[pos - 1].0 + pairs[pos].0), score));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let mut counts = vec![0usize; self.k];
        for &i in &idx {
            counts[self.y[i]] += 1;
        }
        let id = self.push_node(&counts, idx.len());
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.hyper.max_depth || pure || idx.len() < 2 * self.hyper.min_leaf.max(1) {
            return id;
        }
        let d = self.x[0].len();
        let features = sample(rng, d, self.mtry.min(d)).into_vec();
        let parent = gini_weighted(&counts, idx.len());
        let Some((f, thr, score)) = self.best_split(&idx, &features) else {
            return id;
        };
        if score >= parent - 1e-12 {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][f] <= thr);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.tree.feature[id] = f as i64;
        self.tree.threshold[id] = thr;
        self.tree.left[id] = left;
        self.tree.right[id] = right;
        id
    }
}

fn grow_tree(x: &[Vec<f64>], y: &[usize], k: usize, hyper: &ForestHyper, seed: u64) -> Tree {
    let d = x[0].len();
    let mtry = hyper
        .feature_subsample
        .unwrap_or_else(|| ((d as f64).sqrt().round() as usize).max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = if hyper.bootstrap {
        (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect()
    } else {
        (0..x.len()).collect()
    };
    let mut b = Builder {
        x,
        y,
        k,
        hyper,
        mtry,
        tree: Tree {
            feature: vec![],
            threshold: vec![],
            left: vec![],
            right: vec![],
            value: Tensor {
                shape: vec![0, k],
                data: vec![],
            },
        },
    };
    b.grow(idx, 0, &mut rng);
    b.tree
}

/// Bootstrap-aggregated CART trees with Gini splits and per-split feature
/// subsampling. Trees are grown in parallel from independent derived seeds.
pub fn train_forest(
    x: &[Vec<f64>],
    y: &[usize],
    k: usize,
    hyper: &ForestHyper,
    seed: u64,
) -> Result<ForestModel, TrainError> {
    if x.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if hyper.trees == 0 || hyper.feature_subsample == Some(0) {
        return Err(TrainError::Hyper("trees and featureSubsample must be at least 1".into()));
    }
    let trees = (0..hyper.trees)
        .into_par_iter()
        .map(|t| grow_tree(x, y, k, hyper, derive_seed(seed, &format!("tree/{t}"))))
        .collect();
    Ok(ForestModel {
        hyperparameters: hyper.clone(),
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump_data() -> (Vec<Vec<f64>>, Vec<usize>) {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64, if i < 20 { 0.0 } else { 1.0 }, (i % 3) as f64])
            .collect();
        let y = (0..40).map(|i| usize::from(i >= 20)).collect();
        (x, y)
    }

    #[test]
    fn stump_separates_perfectly() {
        let (x, y) = stump_data();
        let hyper = ForestHyper {
            trees: 1,
            max_depth: 1,
            min_leaf: 1,
            feature_subsample: Some(3),
            bootstrap: false,
        };
        let f = train_forest(&x, &y, 2, &hyper, 0).unwrap();
        assert_eq!(f.trees[0].nodes(), 3);
        assert_eq!(f.trees[0].feature[0], 1);
        assert_eq!(f.trees[0].threshold[0], 0.5);
        for (xi, &yi) in x.iter().zip(&y) {
            let p = f.predict_proba(xi);
            assert_eq!(p[yi], 1.0);
        }
    }

    #[test]
    fn gini_reference_values() {
        assert_eq!(gini_weighted(&[5, 5], 10), 5.0);
        assert_eq!(gini_weighted(&[10, 0], 10), 0.0);
        assert!((gini_weighted(&[1, 1, 1], 3) - 2.0).abs() < 1e-12);
    }

    fn reference_tree_eval(t: &Tree, node: usize, x: &[f64]) -> Vec<f64> {
        let k = t.value.shape[1];
        if t.feature[node] < 0 {
            return t.value.data[node * k..(node + 1) * k].to_vec();
        }
        let next = if x[t.feature[node] as usize] <= t.threshold[node] {
            t.left[node]
        } else {
            t.right[node]
        };
        reference_tree_eval(t, next, x)
    }

    #[test]
    fn ensemble_is_mean_of_trees() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Vec<f64>> = (0..300).map(|_| (0..6).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let y: Vec<usize> = x.iter().map(|r| usize::from(r[0] + r[1] > 1.0) + usize::from(r[2] > 0.7)).collect();
        let hyper = ForestHyper {
            trees: 15,
            max_depth: 4,
            ..ForestHyper::default()
        };
        let f = train_forest(&x, &y, 3, &hyper, 4).unwrap();
        f.check_shapes(6, 3).unwrap();
        for xi in x.iter().take(100) {
            let mut mean = vec![0.0; 3];
            for t in &f.trees {
                for (m, p) in mean.iter_mut().zip(reference_tree_eval(t, 0, xi)) {
                    *m += p / f.trees.len() as f64;
                }
            }
            let got = f.predict_proba(xi);
            for (a, b) in got.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn seed_deterministic() {
        let (x, y) = stump_data();
        let hyper = ForestHyper {
            trees: 5,
            ..ForestHyper::default()
        };
        assert_eq!(train_forest(&x, &y, 2, &hyper, 1).unwrap(), train_forest(&x, &y, 2, &hyper, 1).unwrap());
    }
}
