//! Random-forest classifier used by the evaluation stage: Gini-split trees
//! over bootstrap samples with per-node feature subsampling.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 100,
            max_depth: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        prob: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn prob(&self, row: ndarray::ArrayView1<f64>) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { prob } => return *prob,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TreeEnsemble {
    roots: Vec<Node>,
    pub n_features: usize,
    /// Normalized Gini-decrease importance per feature column; sums to one
    /// unless no tree found any split.
    pub impurity_importance: Vec<f64>,
    /// True when the training labels were all identical; predictions are
    /// then the constant class and importances are all zero.
    pub degenerate: bool,
}

fn gini(pos: f64, total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    y: &'a [u8],
    max_depth: usize,
    mtry: usize,
    n_bootstrap: f64,
    importance: Vec<f64>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> Node {
        let total = rows.len() as f64;
        let pos = rows.iter().filter(|&&i| self.y[i] == 1).count() as f64;
        let node_gini = gini(pos, total);
        if depth >= self.max_depth || rows.len() < 2 || node_gini == 0.0 {
            return Node::Leaf { prob: pos / total };
        }

        let d = self.x.ncols();
        let feats = crate::util::shuffled_indices(d, rng);
        let mut best: Option<(usize, f64, f64)> = None; // feature, threshold, decrease
        let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(rows.len());
        for &f in feats.iter().take(self.mtry) {
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (self.x[[i, f]], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left_pos = 0.0;
            let mut left_n = 0.0;
            for w in 0..pairs.len() - 1 {
                left_pos += (pairs[w].1 == 1) as u8 as f64;
                left_n += 1.0;
                if pairs[w].0 == pairs[w + 1].0 {
                    continue;
                }
                let right_n = total - left_n;
                let right_pos = pos - left_pos;
                let weighted = (left_n * gini(left_pos, left_n)
                    + right_n * gini(right_pos, right_n))
                    / total;
                let decrease = node_gini - weighted;
                if decrease > 1e-12 && best.map_or(true, |(_, _, b)| decrease > b) {
                    let threshold = 0.5 * (pairs[w].0 + pairs[w + 1].0);
                    best = Some((f, threshold, decrease));
                }
            }
        }

        let Some((feature, threshold, decrease)) = best else {
            return Node::Leaf { prob: pos / total };
        };
        self.importance[feature] += (total / self.n_bootstrap) * decrease;
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| self.x[[i, feature]] <= threshold);
        let left = Box::new(self.grow(left_rows, depth + 1, rng));
        let right = Box::new(self.grow(right_rows, depth + 1, rng));
        Node::Split {
            feature,
            threshold,
            left,
            right,
        }
    }
}

/// Fit a random forest on an encoded feature matrix and binary labels.
///
/// Each tree sees a bootstrap sample of the rows and considers
/// ceil(sqrt(d)) randomly chosen features per node. A degenerate (single
/// class) target yields a constant predictor flagged on the ensemble rather
/// than an error, so callers can decide how to report it.
pub fn fit_forest(x: &Array2<f64>, y: &[u8], config: &ForestConfig) -> Result<TreeEnsemble, EvalError> {
    let n = x.nrows();
    if n == 0 {
        return Err(EvalError::TooFewRows {
            got: 0,
            need: 1,
            what: "forest training set".into(),
        });
    }
    if y.len() != n {
        return Err(EvalError::Shape(format!(
            "labels ({}) do not match rows ({n})",
            y.len()
        )));
    }
    if config.trees == 0 {
        return Err(EvalError::Config("forest needs at least one tree".into()));
    }
    let d = x.ncols();
    let degenerate = y.iter().all(|&v| v == y[0]);
    let mtry = (d as f64).sqrt().ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut roots = Vec::with_capacity(config.trees);
    let mut importance = vec![0.0; d];
    for _ in 0..config.trees {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut builder = TreeBuilder {
            x,
            y,
            max_depth: config.max_depth,
            mtry: mtry.max(1),
            n_bootstrap: n as f64,
            importance: vec![0.0; d],
        };
        roots.push(builder.grow(rows, 0, &mut rng));
        for (acc, v) in importance.iter_mut().zip(builder.importance) {
            *acc += v;
        }
    }
    let total: f64 = importance.iter().sum();
    if total > 0.0 {
        for v in &mut importance {
            *v /= total;
        }
    }
    Ok(TreeEnsemble {
        roots,
        n_features: d,
        impurity_importance: importance,
        degenerate,
    })
}

impl TreeEnsemble {
    /// Mean leaf P(y = 1) across trees, one value per row.
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Vec<f64>, EvalError> {
        if x.ncols() != self.n_features {
            return Err(EvalError::Shape(format!(
                "expected {} feature columns, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        let inv = 1.0 / self.roots.len() as f64;
        Ok(x.rows()
            .into_iter()
            .map(|row| self.roots.iter().map(|t| t.prob(row)).sum::<f64>() * inv)
            .collect())
    }

    /// Hard labels at the 0.5 probability threshold (ties go positive).
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<u8>, EvalError> {
        Ok(self
            .predict_proba(x)?
            .into_iter()
            .map(|p| (p >= 0.5) as u8)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_dataset(n: usize, label: impl Fn(f64, f64) -> u8) -> (Array2<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..1.0));
        let y = (0..n).map(|i| label(x[[i, 0]], x[[i, 1]])).collect();
        (x, y)
    }

    #[test]
    fn learns_a_threshold_rule() {
        let (x, y) = grid_dataset(400, |a, _| (a > 0.5) as u8);
        let forest = fit_forest(&x, &y, &ForestConfig { trees: 25, max_depth: 6, seed: 1 }).unwrap();
        let pred = forest.predict(&x).unwrap();
        let acc = pred.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64;
        assert!(acc > 0.97, "train accuracy {acc}");
        // The informative feature dominates the importance mass.
        assert!(forest.impurity_importance[0] > 0.9);
        let sum: f64 = forest.impurity_importance.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn learns_xor_with_depth() {
        let (x, y) = grid_dataset(600, |a, b| ((a > 0.5) ^ (b > 0.5)) as u8);
        let forest = fit_forest(&x, &y, &ForestConfig { trees: 40, max_depth: 8, seed: 2 }).unwrap();
        let pred = forest.predict(&x).unwrap();
        let acc = pred.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64;
        assert!(acc > 0.9, "xor accuracy {acc}");
    }

    #[test]
    fn degenerate_target_is_flagged_constant() {
        let (x, _) = grid_dataset(50, |_, _| 0);
        let y = vec![1u8; 50];
        let forest = fit_forest(&x, &y, &ForestConfig::default()).unwrap();
        assert!(forest.degenerate);
        let pred = forest.predict(&x).unwrap();
        assert!(pred.iter().all(|&p| p == 1));
        assert!(forest.impurity_importance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = grid_dataset(200, |a, b| (a + b > 1.0) as u8);
        let cfg = ForestConfig { trees: 10, max_depth: 5, seed: 7 };
        let a = fit_forest(&x, &y, &cfg).unwrap();
        let b = fit_forest(&x, &y, &cfg).unwrap();
        assert_eq!(a.predict_proba(&x).unwrap(), b.predict_proba(&x).unwrap());
        assert_eq!(a.impurity_importance, b.impurity_importance);
    }

    #[test]
    fn probability_calibration_on_noisy_rule() {
        // 80/20 label noise around a threshold: probabilities should sit
        // between the extremes rather than saturate.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((800, 1), |_| rng.random_range(0.0..1.0));
        let y: Vec<u8> = (0..800)
            .map(|i| {
                let base = (x[[i, 0]] > 0.5) as u8;
                if rng.random_range(0.0..1.0) < 0.2 {
                    1 - base
                } else {
                    base
                }
            })
            .collect();
        let forest = fit_forest(&x, &y, &ForestConfig { trees: 50, max_depth: 4, seed: 3 }).unwrap();
        let probe = Array2::from_shape_fn((1, 1), |_| 0.9);
        let p = forest.predict_proba(&probe).unwrap()[0];
        assert!(p > 0.6 && p < 0.95, "p = {p}");
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let (x, y) = grid_dataset(20, |a, _| (a > 0.5) as u8);
        assert!(fit_forest(&x, &y[..10], &ForestConfig::default()).is_err());
        let forest = fit_forest(&x, &y, &ForestConfig { trees: 3, max_depth: 3, seed: 0 }).unwrap();
        let wrong = Array2::zeros((4, 5));
        assert!(forest.predict(&wrong).is_err());
    }
}
