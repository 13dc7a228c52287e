//! CART regression trees, random forests and least-squares gradient boosting.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FitError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 4, min_leaf: 2 }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.max_depth == 0 || self.min_leaf == 0 {
            return Err(FitError::InvalidParams("max_depth and min_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

/// Flattened tree; node 0 is the root. `Split` sends `x[feature] <= threshold`
/// to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split(u16, f64, u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split(f, t, l, r) => i = if x[f as usize] <= t { l as usize } else { r as usize },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split(_, _, l, r) => 1 + go(nodes, l as usize).max(go(nodes, r as usize)),
            }
        }
        go(&self.nodes, 0)
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: TreeParams,
    n_features: usize,
    /// features examined per split; `n_features` means all
    max_features: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut Option<ChaCha8Rng>) -> u32 {
        let id = self.nodes.len() as u32;
        let n = idx.len() as f64;
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mean = sum / n;
        self.nodes.push(Node::Leaf(mean));

        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        if pure || depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(idx, sum, rng) else {
            return id;
        };
        let parent_score = sum * sum / n;
        let sumsq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        if !(best.score - parent_score > 1e-12 * (1.0 + sumsq)) {
            return id;
        }

        let (f, t) = (best.feature, best.threshold);
        let mid = partition_in_place(idx, |&i| self.x[i][f] <= t);
        let (left, right) = idx.split_at_mut(mid);
        let l = self.build(left, depth + 1, rng);
        let r = self.build(right, depth + 1, rng);
        self.nodes[id as usize] = Node::Split(f as u16, t, l, r);
        id
    }

    /// Maximises `Σ_child sum²/n`, equivalent to minimising the children's
    /// summed squared error. Ties keep the lowest feature, then the lowest
    /// threshold.
    fn best_split(&self, idx: &[usize], total: f64, rng: &mut Option<ChaCha8Rng>) -> Option<BestSplit> {
        let features: Vec<usize> = match rng {
            Some(rng) if self.max_features < self.n_features => {
                let mut f = sample(rng, self.n_features, self.max_features).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.n_features).collect(),
        };
        let min_leaf = self.params.min_leaf;
        let n = idx.len();
        let mut order: Vec<usize> = idx.to_vec();
        let mut best: Option<BestSplit> = None;
        for f in features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.y[order[k]];
                let nl = k + 1;
                let nr = n - nl;
                let (a, b) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if nl < min_leaf || nr < min_leaf || a == b {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64;
                if best.as_ref().is_none_or(|bs| score > bs.score) {
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit { feature: f, threshold, score });
                }
            }
        }
        best
    }
}

fn partition_in_place<T, F: Fn(&T) -> bool>(v: &mut [T], pred: F) -> usize {
    let mut store = 0;
    for i in 0..v.len() {
        if pred(&v[i]) {
            v.swap(store, i);
            store += 1;
        }
    }
    store
}

fn validate_xy(x: &[Vec<f64>], y: &[f64]) -> Result<usize, FitError> {
    if x.is_empty() || y.is_empty() {
        return Err(FitError::EmptyTrainingSet);
    }
    if x.len() != y.len() {
        return Err(FitError::InvalidInput(format!("{} rows but {} targets", x.len(), y.len())));
    }
    Ok(x[0].len())
}

fn grow(
    x: &[Vec<f64>],
    y: &[f64],
    idx: &mut [usize],
    params: TreeParams,
    max_features: usize,
    rng: &mut Option<ChaCha8Rng>,
) -> RegressionTree {
    let n_features = x[0].len();
    let mut b = Builder { x, y, params, n_features, max_features, nodes: Vec::new() };
    b.build(idx, 0, rng);
    RegressionTree { nodes: b.nodes }
}

/// Greedy CART with variance-reduction splits; leaves predict member means.
pub fn fit_cart(x: &[Vec<f64>], y: &[f64], params: &TreeParams) -> Result<RegressionTree, FitError> {
    params.validate()?;
    let p = validate_xy(x, y)?;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    Ok(grow(x, y, &mut idx, *params, p, &mut None))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    pub max_features: FeatureSubset,
}

/// Features tried at each split of a forest tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    /// Every feature, as in bagged CART.
    #[default]
    All,
    /// `ceil(p / 3)`, the classic regression-forest choice.
    Third,
    Count(usize),
}

impl FeatureSubset {
    pub fn size(self, p: usize) -> usize {
        match self {
            Self::All => p,
            Self::Third => p.div_ceil(3),
            Self::Count(n) => n.min(p),
        }
    }
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 50, max_depth: 5, min_leaf: 2, bootstrap: true, max_features: FeatureSubset::All }
    }
}

impl ForestParams {
    fn tree_params(&self) -> TreeParams {
        TreeParams { max_depth: self.max_depth, min_leaf: self.min_leaf }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.n_trees == 0 {
            return Err(FitError::InvalidParams("n_trees must be >= 1".into()));
        }
        if self.max_features == FeatureSubset::Count(0) {
            return Err(FitError::InvalidParams("max_features must be >= 1".into()));
        }
        self.tree_params().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<RegressionTree>,
}

impl Forest {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Bagged CART ensemble with per-split random feature subsets.
pub fn fit_random_forest(x: &[Vec<f64>], y: &[f64], params: &ForestParams, seed: u64) -> Result<Forest, FitError> {
    params.validate()?;
    let p = validate_xy(x, y)?;
    let n = x.len();
    let max_features = params.max_features.size(p);
    let mut trees = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let mut idx: Vec<usize> =
            if params.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
        let mut rng = Some(rng);
        trees.push(grow(x, y, &mut idx, params.tree_params(), max_features, &mut rng));
    }
    Ok(Forest { trees })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostParams {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self { n_stages: 50, learning_rate: 0.1, max_depth: 3, min_leaf: 1 }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate <= 1.0) {
            return Err(FitError::InvalidParams(format!("learning_rate {} outside [0, 1]", self.learning_rate)));
        }
        TreeParams { max_depth: self.max_depth, min_leaf: self.min_leaf }.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl BoostedTrees {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Stagewise least-squares boosting: start from the target mean and add a
/// shrunken depth-limited tree fitted to the current residuals per stage.
pub fn fit_gbr(x: &[Vec<f64>], y: &[f64], params: &BoostParams) -> Result<BoostedTrees, FitError> {
    params.validate()?;
    validate_xy(x, y)?;
    let base = y.iter().sum::<f64>() / y.len() as f64;
    let tp = TreeParams { max_depth: params.max_depth, min_leaf: params.min_leaf };
    let mut fitted = vec![base; y.len()];
    let mut trees = Vec::new();
    if params.learning_rate > 0.0 {
        for _ in 0..params.n_stages {
            let resid: Vec<f64> = y.iter().zip(&fitted).map(|(t, f)| t - f).collect();
            let tree = fit_cart(x, &resid, &tp)?;
            for (f, row) in fitted.iter_mut().zip(x) {
                *f += params.learning_rate * tree.predict(row);
            }
            trees.push(tree);
        }
    }
    Ok(BoostedTrees { base, learning_rate: params.learning_rate, trees })
}
