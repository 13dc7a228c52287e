//! One-dimensional fuzzy partitions: subtractive cluster centres, a
//! hierarchy of strong partitions built by merging adjacent sets, and the
//! selection of one partition per feature.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetShape {
    LeftShoulder,
    Triangle,
    RightShoulder,
}

/// Piecewise-linear membership function with breakpoints `a ≤ b ≤ c`; `b`
/// is the core. Shoulders hold membership 1 from the domain edge to `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzySet {
    pub label: String,
    pub shape: SetShape,
    pub params: [f64; 3],
}

impl FuzzySet {
    pub fn core(&self) -> f64 {
        self.params[1]
    }

    pub fn membership(&self, x: f64) -> f64 {
        let [a, b, c] = self.params;
        let rising = || {
            if x <= a {
                0.0
            } else if x >= b {
                1.0
            } else {
                (x - a) / (b - a)
            }
        };
        let falling = || {
            if x <= b {
                1.0
            } else if x >= c {
                0.0
            } else {
                (c - x) / (c - b)
            }
        };
        match self.shape {
            SetShape::LeftShoulder => falling(),
            SetShape::RightShoulder => rising(),
            SetShape::Triangle => {
                if x <= b {
                    rising()
                } else {
                    falling()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyPartition {
    pub feature_index: usize,
    pub sets: Vec<FuzzySet>,
    /// Membership-weighted within-set standard deviation of the sample.
    pub within_std: f64,
}

impl FuzzyPartition {
    pub fn memberships(&self, x: f64) -> Vec<f64> {
        self.sets.iter().map(|s| s.membership(x)).collect()
    }

    pub fn cores(&self) -> Vec<f64> {
        self.sets.iter().map(FuzzySet::core).collect()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.sets.iter().position(|s| s.label == label)
    }

    /// Domain covered by the shoulders' outer breakpoints.
    pub fn domain(&self) -> (f64, f64) {
        (self.sets[0].params[0], self.sets[self.sets.len() - 1].params[2])
    }
}

/// Constants of the potential-based centre search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    /// Neighbourhood radius on the min-max normalised domain.
    pub radius: f64,
    /// Ratio of the subtraction radius to `radius`.
    pub squash: f64,
    /// Stop once the best remaining potential falls below this fraction of
    /// the first centre's potential.
    pub accept_ratio: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { radius: 0.5, squash: 1.5, accept_ratio: 0.15 }
    }
}

/// Potential-based centre selection. Every point starts with potential
/// `Σ_j exp(−4/r_a² · (x_i − x_j)²)`; the highest-potential point becomes a
/// centre and its influence is subtracted with radius `squash · r_a`, until
/// the best remaining potential drops below `accept_ratio` of the first.
/// Distances are measured on the min-max normalised domain; centres are
/// returned sorted in the original units. Constant data yields one centre.
pub fn subtractive_centers(values: &[f64], params: &ClusterParams) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![lo];
    }
    let span = hi - lo;
    let z: Vec<f64> = values.iter().map(|v| (v - lo) / span).collect();
    let alpha = 4.0 / (params.radius * params.radius);
    let rb = params.squash * params.radius;
    let beta = 4.0 / (rb * rb);
    let mut potential: Vec<f64> =
        z.iter().map(|&zi| z.iter().map(|&zj| (-alpha * (zi - zj).powi(2)).exp()).sum()).collect();

    let argmax = |p: &[f64]| {
        p.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
    };
    let (first_idx, first) = argmax(&potential);
    let mut centers = vec![z[first_idx]];
    let (mut idx, mut best) = (first_idx, first);
    loop {
        let zc = z[idx];
        for (p, &zi) in potential.iter_mut().zip(&z) {
            *p -= best * (-beta * (zi - zc).powi(2)).exp();
        }
        (idx, best) = argmax(&potential);
        if best < params.accept_ratio * first || centers.len() >= values.len() {
            break;
        }
        centers.push(z[idx]);
    }
    let mut out: Vec<f64> = centers.iter().map(|c| lo + c * span).collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Builds the strong partition with the given strictly increasing cores over
/// `[lo, hi]`. Labels are left empty.
pub fn strong_partition(cores: &[f64], lo: f64, hi: f64) -> Vec<FuzzySet> {
    let m = cores.len();
    (0..m)
        .map(|j| {
            let (shape, params) = if j == 0 {
                (SetShape::LeftShoulder, [lo.min(cores[0]), cores[0], cores[1]])
            } else if j == m - 1 {
                (SetShape::RightShoulder, [cores[j - 1], cores[j], hi.max(cores[j])])
            } else {
                (SetShape::Triangle, [cores[j - 1], cores[j], cores[j + 1]])
            };
            FuzzySet { label: String::new(), shape, params }
        })
        .collect()
}

/// `sqrt(Σ_j Σ_i μ_ij (x_i − m_j)² / N)` with `m_j` the membership-weighted
/// mean of set `j`.
pub fn within_std(values: &[f64], sets: &[FuzzySet]) -> f64 {
    let mut total = 0.0;
    for s in sets {
        let mu: Vec<f64> = values.iter().map(|&x| s.membership(x)).collect();
        let w: f64 = mu.iter().sum();
        if w <= 0.0 {
            continue;
        }
        let m = mu.iter().zip(values).map(|(u, x)| u * x).sum::<f64>() / w;
        total += mu.iter().zip(values).map(|(u, x)| u * (x - m).powi(2)).sum::<f64>();
    }
    (total / values.len() as f64).sqrt()
}

pub const MAX_SETS: usize = 7;

/// The merge hierarchy from one set per centre down to two sets. Each step
/// merges the adjacent pair whose replacement by a single set (core at the
/// pair's membership-weighted data mean) gives the smallest `within_std`.
/// Only partitions of at most [`MAX_SETS`] sets are returned, largest first.
pub fn hfp_partitions(values: &[f64], centers: &[f64], feature_index: usize) -> Vec<FuzzyPartition> {
    assert!(centers.len() >= 2, "a partition hierarchy needs at least two centres");
    let lo = values.iter().copied().fold(centers[0], f64::min);
    let hi = values.iter().copied().fold(centers[centers.len() - 1], f64::max);
    let mut cores = centers.to_vec();
    let mut out = Vec::new();
    loop {
        let sets = strong_partition(&cores, lo, hi);
        let std = within_std(values, &sets);
        if cores.len() <= MAX_SETS {
            out.push(FuzzyPartition { feature_index, sets: sets.clone(), within_std: std });
        }
        if cores.len() == 2 {
            break;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for j in 0..cores.len() - 1 {
            let merged = merged_core(values, &sets, j);
            let mut next = cores.clone();
            next.splice(j..j + 2, [merged]);
            let s = within_std(values, &strong_partition(&next, lo, hi));
            if best.as_ref().is_none_or(|(b, _)| s < *b) {
                best = Some((s, next));
            }
        }
        cores = best.expect("at least one adjacent pair").1;
    }
    out
}

/// Weighted mean of the data under the summed memberships of sets `j` and
/// `j + 1`, kept strictly between the neighbouring cores.
fn merged_core(values: &[f64], sets: &[FuzzySet], j: usize) -> f64 {
    let (a, b) = (&sets[j], &sets[j + 1]);
    let (mut w, mut wx) = (0.0, 0.0);
    for &x in values {
        let u = a.membership(x) + b.membership(x);
        w += u;
        wx += u * x;
    }
    let mid = 0.5 * (a.core() + b.core());
    let m = if w > 0.0 { wx / w } else { mid };
    let left = if j > 0 { sets[j - 1].core() } else { f64::NEG_INFINITY };
    let right = if j + 2 < sets.len() { sets[j + 2].core() } else { f64::INFINITY };
    if m > left && m < right {
        m
    } else {
        mid
    }
}

/// Minimises `within_std + kappa · |sets|`; ties go to fewer sets.
pub fn select_partition(candidates: &[FuzzyPartition], kappa: f64) -> FuzzyPartition {
    let score = |p: &FuzzyPartition| p.within_std + kappa * p.sets.len() as f64;
    candidates
        .iter()
        .min_by(|a, b| score(a).total_cmp(&score(b)).then(a.sets.len().cmp(&b.sets.len())))
        .expect("candidates must be non-empty")
        .clone()
}

/// Ordinal linguistic labels for partitions of 2 to 7 sets.
pub fn label_ladder(n: usize) -> &'static [&'static str] {
    match n {
        2 => &["small", "high"],
        3 => &["small", "medium", "high"],
        4 => &["very small", "small", "high", "very high"],
        5 => &["very small", "small", "medium", "high", "very high"],
        6 => &["extremely small", "very small", "small", "high", "very high", "extremely high"],
        7 => &["extremely small", "very small", "small", "medium", "high", "very high", "extremely high"],
        _ => panic!("partitions have 2 to 7 sets, got {n}"),
    }
}

pub fn assign_labels(mut partition: FuzzyPartition) -> FuzzyPartition {
    let labels = label_ladder(partition.sets.len());
    for (s, l) in partition.sets.iter_mut().zip(labels) {
        s.label = l.to_string();
    }
    partition
}

/// Centres, hierarchy, selection and labelling for one feature sample.
/// When the centre search finds a single centre the domain ends serve as two
/// centres; a constant sample gets cores half a unit either side.
pub fn fit_partition(values: &[f64], feature_index: usize, cluster: &ClusterParams, kappa_frac: f64) -> FuzzyPartition {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut centers = subtractive_centers(values, cluster);
    if centers.len() < 2 {
        centers = if hi > lo { vec![lo, hi] } else { vec![lo - 0.5, lo + 0.5] };
    }
    let candidates = hfp_partitions(values, &centers, feature_index);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    assign_labels(select_partition(&candidates, kappa_frac * span))
}
