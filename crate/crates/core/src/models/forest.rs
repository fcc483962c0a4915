//! Bagged CART regression forest.
//!
//! Trees are grown greedily on variance reduction with midpoint thresholds.
//! Each tree owns a seed derived from the master seed and its index, and trees
//! are collected in index order, so the forest is identical for any number of
//! worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelKind, Regressor};
use crate::dataset::{Dataset, Feature};
use crate::rng::{purpose, PortableRng};
use crate::Scalar;

pub const MIN_RF_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfHyperParams {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    /// Draw `n` rows with replacement per tree; otherwise every tree sees all rows.
    pub bootstrap: bool,
    /// Thread count for fitting; `None` uses the global pool. Never changes the result.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Default for RfHyperParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            min_samples_leaf: 5,
            max_depth: None,
            bootstrap: true,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode<F> {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: F,
        left: usize,
        right: usize,
    },
    Leaf {
        value: F,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree<F> {
    /// Root at index 0.
    pub nodes: Vec<TreeNode<F>>,
}

impl<F: Scalar> RegressionTree<F> {
    pub fn predict_row(&self, x: &[F]) -> F {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = F> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value } => Some(*value),
            TreeNode::Split { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn walk<F>(nodes: &[TreeNode<F>], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfModel<F> {
    pub features: Vec<Feature>,
    pub trees: Vec<RegressionTree<F>>,
    pub seed: u64,
    pub hyperparams: RfHyperParams,
    pub target_min: F,
    pub target_max: F,
}

impl<F: Scalar> RfModel<F> {
    pub fn tree_predictions(&self, x: &[F]) -> Vec<F> {
        self.trees.iter().map(|t| t.predict_row(x)).collect()
    }
}

/// Mean of `values`, clamped to their range so rounding can never leave it.
fn bounded_mean<F: Scalar>(values: impl Iterator<Item = F>) -> F {
    let mut sum = F::zero();
    let mut n = 0usize;
    let mut lo = F::infinity();
    let mut hi = F::neg_infinity();
    for v in values {
        sum = sum + v;
        n += 1;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        return lo;
    }
    (sum / F::from_usize_lossy(n)).max(lo).min(hi)
}

impl<F: Scalar> Regressor<F> for RfModel<F> {
    fn features(&self) -> &[Feature] {
        &self.features
    }

    fn predict_row(&self, x: &[F]) -> F {
        bounded_mean(self.trees.iter().map(|t| t.predict_row(x)))
    }
}

pub fn predict_rf<F: Scalar>(m: &RfModel<F>, t_ambient: F, rh: F) -> F {
    let x: Vec<F> = m
        .features
        .iter()
        .map(|f| match f {
            Feature::TAmbient => t_ambient,
            Feature::Rh => rh,
            _ => F::zero(),
        })
        .collect();
    m.predict_row(&x)
}

struct Split<F> {
    feature: usize,
    threshold: F,
}

struct TreeBuilder<'a, F> {
    data: &'a Dataset<F>,
    hp: &'a RfHyperParams,
    nodes: Vec<TreeNode<F>>,
    pairs: Vec<(F, F)>,
}

impl<'a, F: Scalar> TreeBuilder<'a, F> {
    fn leaf(&self, rows: &[usize]) -> TreeNode<F> {
        let y = self.data.targets();
        TreeNode::Leaf {
            value: bounded_mean(rows.iter().map(|&i| y[i])),
        }
    }

    /// Best variance-reducing split, or `None` when no split improves the node.
    /// Candidates are scanned by ascending feature index then ascending
    /// threshold and only a strictly better score replaces the incumbent.
    fn best_split(&mut self, rows: &[usize]) -> Option<Split<F>> {
        let min_leaf = self.hp.min_samples_leaf.max(1);
        let n = rows.len();
        if n < 2 * min_leaf {
            return None;
        }
        let y = self.data.targets();
        let total: F = rows.iter().map(|&i| y[i]).sum();
        let nf = F::from_usize_lossy(n);
        let mean = total / nf;
        let sse: F = rows.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum();
        // maximizing sum_l²/n_l + sum_r²/n_r is equivalent to minimizing child SSE
        let parent_score = total * total / nf;
        let min_gain = sse * F::lit(1e-12);

        let mut best: Option<(F, Split<F>)> = None;
        for feature in 0..self.data.n_features() {
            self.pairs.clear();
            self.pairs
                .extend(rows.iter().map(|&i| (self.data.row(i)[feature], y[i])));
            self.pairs
                .sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
            let mut left_sum = F::zero();
            for k in 1..n {
                left_sum = left_sum + self.pairs[k - 1].1;
                if k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let (a, b) = (self.pairs[k - 1].0, self.pairs[k].0);
                if a == b {
                    continue;
                }
                let kl = F::from_usize_lossy(k);
                let kr = F::from_usize_lossy(n - k);
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / kl + right_sum * right_sum / kr;
                if score - parent_score <= min_gain {
                    continue;
                }
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    let mut threshold = (a + b) / F::lit(2.0);
                    if !(threshold >= a && threshold < b) {
                        threshold = a;
                    }
                    best = Some((score, Split { feature, threshold }));
                }
            }
        }
        best.map(|(_, s)| s)
    }

    fn build(mut self, sample: Vec<usize>) -> RegressionTree<F> {
        // (node slot, rows, depth)
        let mut stack = vec![(0usize, sample, 0usize)];
        self.nodes.push(TreeNode::Leaf { value: F::zero() });
        let y = self.data.targets();
        while let Some((slot, rows, depth)) = stack.pop() {
            let first = y[rows[0]];
            let constant = rows.iter().all(|&i| y[i] == first);
            let depth_capped = self.hp.max_depth.is_some_and(|d| depth >= d);
            let split = if constant || depth_capped {
                None
            } else {
                self.best_split(&rows)
            };
            let Some(split) = split else {
                self.nodes[slot] = self.leaf(&rows);
                continue;
            };
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .iter()
                .partition(|&&i| self.data.row(i)[split.feature] <= split.threshold);
            let left = self.nodes.len();
            let right = left + 1;
            self.nodes.push(TreeNode::Leaf { value: F::zero() });
            self.nodes.push(TreeNode::Leaf { value: F::zero() });
            self.nodes[slot] = TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
            };
            stack.push((right, right_rows, depth + 1));
            stack.push((left, left_rows, depth + 1));
        }
        RegressionTree { nodes: self.nodes }
    }
}

fn fit_tree<F: Scalar>(
    data: &Dataset<F>,
    hp: &RfHyperParams,
    seed: u64,
    index: usize,
) -> RegressionTree<F> {
    let n = data.len();
    let sample: Vec<usize> = if hp.bootstrap {
        let mut rng = PortableRng::derived(seed, purpose::RF_TREE, &[index as u64]);
        (0..n).map(|_| rng.below(n as u64) as usize).collect()
    } else {
        (0..n).collect()
    };
    TreeBuilder {
        data,
        hp,
        nodes: Vec::new(),
        pairs: Vec::with_capacity(n),
    }
    .build(sample)
}

pub fn fit_rf<F: Scalar>(
    train: &Dataset<F>,
    seed: u64,
    hp: &RfHyperParams,
) -> Result<RfModel<F>, ModelError> {
    if train.len() < MIN_RF_ROWS {
        return Err(ModelError::TooFewRows {
            model: ModelKind::Rf,
            needed: MIN_RF_ROWS,
            got: train.len(),
        });
    }
    let grow = || -> Vec<RegressionTree<F>> {
        (0..hp.n_trees)
            .into_par_iter()
            .map(|i| fit_tree(train, hp, seed, i))
            .collect()
    };
    let trees = match hp.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| ModelError::Parse(format!("thread pool: {e}")))?
            .install(grow),
        None => grow(),
    };
    let y = train.targets();
    let target_min = y.iter().copied().fold(F::infinity(), F::min);
    let target_max = y.iter().copied().fold(F::neg_infinity(), F::max);
    Ok(RfModel {
        features: train.features().to_vec(),
        trees,
        seed,
        hyperparams: hp.clone(),
        target_min,
        target_max,
    })
}
