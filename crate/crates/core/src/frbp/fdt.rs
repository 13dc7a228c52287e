//! Fuzzy decision tree regression. Each internal node tests one feature and
//! has one child per fuzzy set of that feature; a sample reaches every child
//! with weight `parent weight × membership`.

use serde::{Deserialize, Serialize};

use super::partition::FuzzyPartition;
use super::rules::{FuzzyRule, SampleMemberships};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdtParams {
    pub max_depth: usize,
    /// Nodes lighter than this become leaves.
    pub min_mass: f64,
}

impl Default for FdtParams {
    fn default() -> Self {
        Self { max_depth: 6, min_mass: 1e-3 }
    }
}

/// `Split(partition slot, first child, child count)`; children are stored
/// contiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FdtNode {
    Leaf(f64),
    Split(u8, u32, u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyDecisionTree {
    pub nodes: Vec<FdtNode>,
    /// Partition slots ranked by gain at the root, best first.
    pub attribute_order: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cannot grow a fuzzy decision tree from an empty training set")]
pub struct EmptyTrainingSet;

/// Weighted sum of squares about the weighted mean, and the weighted mean.
fn weighted_ss(w: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mass: f64 = w.iter().sum();
    if mass <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let mean = w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / mass;
    let ss = w.iter().zip(y).map(|(a, b)| a * (b - mean).powi(2)).sum();
    (ss, mean, mass)
}

struct Grower<'a> {
    mu: &'a [SampleMemberships],
    y: &'a [f64],
    params: FdtParams,
    nodes: Vec<FdtNode>,
}

impl Grower<'_> {
    fn child_weights(&self, w: &[f64], slot: usize, k: usize) -> Vec<f64> {
        w.iter().zip(self.mu).map(|(wi, m)| wi * m[slot][k]).collect()
    }

    /// `SS(parent) − Σ_k SS(child_k)`; non-negative because the children's
    /// weights sum to the parent's and each child's SS is taken about its
    /// own optimal mean.
    fn gain(&self, w: &[f64], parent_ss: f64, slot: usize) -> f64 {
        let n_sets = self.mu[0][slot].len();
        let children: f64 = (0..n_sets).map(|k| weighted_ss(&self.child_weights(w, slot, k), self.y).0).sum();
        (parent_ss - children).max(0.0)
    }

    fn grow(&mut self, at: usize, w: Vec<f64>, depth: usize, used: &mut Vec<bool>, fallback: f64) {
        let (ss, mean, mass) = weighted_ss(&w, self.y);
        if mass <= 0.0 {
            self.nodes[at] = FdtNode::Leaf(fallback);
            return;
        }
        self.nodes[at] = FdtNode::Leaf(mean);
        if depth >= self.params.max_depth || mass < self.params.min_mass || ss <= 0.0 {
            return;
        }
        let mut best: Option<(usize, f64)> = None;
        for slot in 0..used.len() {
            if used[slot] {
                continue;
            }
            let g = self.gain(&w, ss, slot);
            if best.is_none_or(|(_, bg)| g > bg) {
                best = Some((slot, g));
            }
        }
        let Some((slot, g)) = best else { return };
        if !(g > 1e-12 * ss) {
            return;
        }
        let n_sets = self.mu[0][slot].len();
        let first = self.nodes.len();
        self.nodes.extend((0..n_sets).map(|_| FdtNode::Leaf(mean)));
        self.nodes[at] = FdtNode::Split(slot as u8, first as u32, n_sets as u8);
        used[slot] = true;
        for k in 0..n_sets {
            let cw = self.child_weights(&w, slot, k);
            self.grow(first + k, cw, depth + 1, used, mean);
        }
        used[slot] = false;
    }
}

/// Grows a tree from weighted samples given as per-feature memberships.
/// Gain is the weighted sum-of-squares reduction; growth stops at
/// `max_depth`, below `min_mass`, or when no unused attribute gains.
/// Children that receive no weight predict their parent's mean.
pub fn build_fdt(
    memberships: &[SampleMemberships],
    targets: &[f64],
    weights: &[f64],
    params: &FdtParams,
) -> Result<FuzzyDecisionTree, EmptyTrainingSet> {
    if memberships.is_empty() || weights.iter().sum::<f64>() <= 0.0 {
        return Err(EmptyTrainingSet);
    }
    let n_slots = memberships[0].len();
    let mut g = Grower { mu: memberships, y: targets, params: *params, nodes: vec![FdtNode::Leaf(0.0)] };

    let (ss, _, _) = weighted_ss(weights, targets);
    let gains: Vec<f64> = (0..n_slots).map(|s| g.gain(weights, ss, s)).collect();
    let mut attribute_order: Vec<usize> = (0..n_slots).collect();
    attribute_order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));

    let mut used = vec![false; n_slots];
    g.grow(0, weights.to_vec(), 0, &mut used, 0.0);
    Ok(FuzzyDecisionTree { nodes: g.nodes, attribute_order })
}

/// Places each rule at the cores of its antecedent sets with weight
/// `degree × support` and grows a tree on those points.
pub fn build_fdt_from_rules(
    rules: &[FuzzyRule],
    partitions: &[FuzzyPartition],
    params: &FdtParams,
) -> Result<FuzzyDecisionTree, EmptyTrainingSet> {
    let mu: Vec<SampleMemberships> = rules
        .iter()
        .map(|r| r.antecedent.iter().zip(partitions).map(|(&k, p)| p.memberships(p.cores()[k])).collect())
        .collect();
    let y: Vec<f64> = rules.iter().map(|r| r.consequent).collect();
    let w: Vec<f64> = rules.iter().map(|r| r.degree * r.support as f64).collect();
    build_fdt(&mu, &y, &w, params)
}

impl FuzzyDecisionTree {
    /// Path-weighted average of the leaves reached by `memberships`.
    pub fn predict_memberships(&self, memberships: &SampleMemberships) -> f64 {
        let (num, den) = self.walk(0, 1.0, memberships);
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    fn walk(&self, at: usize, weight: f64, mu: &SampleMemberships) -> (f64, f64) {
        match self.nodes[at] {
            FdtNode::Leaf(v) => (weight * v, weight),
            FdtNode::Split(slot, first, n) => {
                let (mut num, mut den) = (0.0, 0.0);
                for k in 0..n as usize {
                    let m = mu[slot as usize][k];
                    if m > 0.0 {
                        let (a, b) = self.walk(first as usize + k, weight * m, mu);
                        num += a;
                        den += b;
                    }
                }
                (num, den)
            }
        }
    }

    pub fn leaf_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            FdtNode::Leaf(v) => Some(*v),
            FdtNode::Split(..) => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn go(t: &FuzzyDecisionTree, at: usize) -> usize {
            match t.nodes[at] {
                FdtNode::Leaf(_) => 0,
                FdtNode::Split(_, first, n) => {
                    1 + (0..n as usize).map(|k| go(t, first as usize + k)).max().unwrap_or(0)
                }
            }
        }
        go(self, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frbp::partition::{assign_labels, hfp_partitions};
    use crate::frbp::rules::sample_memberships;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn parts3() -> Vec<FuzzyPartition> {
        (0..3)
            .map(|f| {
                let c = [0.0, 0.5, 1.0];
                assign_labels(hfp_partitions(&c, &c, f).remove(0))
            })
            .collect()
    }

    fn cohort(n: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> (Vec<SampleMemberships>, Vec<f64>) {
        let parts = parts3();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mu = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            mu.push(sample_memberships(&parts, &x));
            y.push(f(&x));
        }
        (mu, y)
    }

    #[test]
    fn constant_targets_single_leaf() {
        let (mu, _) = cohort(20, 1, |_| 0.0);
        let t = build_fdt(&mu, &[7.0; 20], &[1.0; 20], &FdtParams::default()).unwrap();
        assert_eq!(t.nodes, vec![FdtNode::Leaf(7.0)]);
    }

    #[test]
    fn single_factor_ranked_first() {
        let (mu, y) = cohort(60, 2, |x| 80.0 * x[2]);
        let t = build_fdt(&mu, &y, &vec![1.0; 60], &FdtParams::default()).unwrap();
        assert_eq!(t.attribute_order[0], 2);
        assert!(matches!(t.nodes[0], FdtNode::Split(2, _, _)));
    }

    #[test]
    fn depth_zero_is_global_mean() {
        let (mu, y) = cohort(30, 3, |x| x[0] * 10.0);
        let t = build_fdt(&mu, &y, &[1.0; 30], &FdtParams { max_depth: 0, ..Default::default() }).unwrap();
        let mean = y.iter().sum::<f64>() / 30.0;
        assert_eq!(t.nodes.len(), 1);
        assert!((t.predict_memberships(&mu[0]) - mean).abs() < 1e-12);
    }

    #[test]
    fn hand_built_convex_combination() {
        let t = FuzzyDecisionTree {
            nodes: vec![FdtNode::Split(0, 1, 2), FdtNode::Leaf(0.0), FdtNode::Leaf(100.0)],
            attribute_order: vec![0],
        };
        assert_eq!(t.predict_memberships(&vec![vec![0.25, 0.75]]), 75.0);
    }

    #[test]
    fn core_inputs_route_crisply_and_hull_holds() {
        let parts = parts3();
        let (mu, y) = cohort(80, 4, |x| 50.0 * x[0] + 30.0 * x[1] * x[1]);
        let t = build_fdt(&mu, &y, &[1.0; 80], &FdtParams::default()).unwrap();
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..1.5)).collect();
            let p = t.predict_memberships(&sample_memberships(&parts, &x));
            assert!(p >= lo - 1e-9 && p <= hi + 1e-9);
        }
        // at a core every membership vector is one-hot, so exactly one leaf is reached
        let core = sample_memberships(&parts, &[0.5, 1.0, 0.0]);
        let p = t.predict_memberships(&core);
        assert!(t.leaf_values().any(|v| v == p));
    }

    #[test]
    fn depth_bounded_and_attributes_once_per_path() {
        let (mu, y) = cohort(100, 6, |x| x[0] * 40.0 + x[1] * 20.0 + x[2] * 10.0);
        let t = build_fdt(&mu, &y, &vec![1.0; 100], &FdtParams { max_depth: 6, min_mass: 1e-3 }).unwrap();
        assert!(t.depth() <= 3);
        fn check(t: &FuzzyDecisionTree, at: usize, seen: &mut Vec<u8>) {
            if let FdtNode::Split(s, first, n) = t.nodes[at] {
                assert!(!seen.contains(&s));
                seen.push(s);
                for k in 0..n as u32 {
                    check(t, (first + k) as usize, seen);
                }
                seen.pop();
            }
        }
        check(&t, 0, &mut Vec::new());
    }

    #[test]
    fn empty_training_set() {
        assert_eq!(build_fdt(&[], &[], &[], &FdtParams::default()), Err(EmptyTrainingSet));
    }
}
