//! CART trees on weighted rows: Gini impurity, exhaustive split search with a
//! learned default branch for missing cells, and depth-first growth.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::FeatureMatrix;

/// Gains at or below this are treated as no improvement.
pub const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Gini impurity of a node from its weighted class totals.
pub fn gini_from_totals(w0: f64, w1: f64) -> Option<f64> {
    let w = w0 + w1;
    if w <= 0.0 {
        return None;
    }
    let (p0, p1) = (w0 / w, w1 / w);
    Some(1.0 - p0 * p0 - p1 * p1)
}

/// Gini impurity of a set of weighted labels; `None` when total weight is zero.
pub fn gini(labels: &[u8], weights: &[f64]) -> Option<f64> {
    let (mut w0, mut w1) = (0.0, 0.0);
    for (&y, &w) in labels.iter().zip(weights) {
        if y == 1 {
            w1 += w
        } else {
            w0 += w
        }
    }
    gini_from_totals(w0, w1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub missing_goes: Side,
    /// Weighted impurity decrease relative to the node.
    pub gain: f64,
}

impl Split {
    pub fn goes_left(&self, x: f64) -> bool {
        if x.is_nan() {
            self.missing_goes == Side::Left
        } else {
            x <= self.threshold
        }
    }
}

#[derive(Default)]
pub(crate) struct Scratch {
    present: Vec<(f64, u8, f64)>,
}

/// Exhaustive search over `features` and midpoints between consecutive
/// distinct values. `rows` holds (row index, weight) pairs; rows with zero
/// weight are ignored. Ties go to the lower feature, then the lower threshold.
pub fn best_split(
    matrix: &FeatureMatrix,
    rows: &[(usize, f64)],
    features: &[usize],
    min_samples_leaf: f64,
) -> Option<Split> {
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();
    best_split_with(matrix, rows, &features, min_samples_leaf, &mut Scratch::default())
}

pub(crate) fn best_split_with(
    matrix: &FeatureMatrix,
    rows: &[(usize, f64)],
    sorted_features: &[usize],
    min_samples_leaf: f64,
    scratch: &mut Scratch,
) -> Option<Split> {
    let labels = matrix.labels();
    if rows.iter().filter(|(_, w)| *w > 0.0).count() < 2 {
        return None;
    }
    let (mut t0, mut t1) = (0.0, 0.0);
    for &(r, w) in rows {
        if labels[r] == 1 {
            t1 += w
        } else {
            t0 += w
        }
    }
    let total = t0 + t1;
    let parent = gini_from_totals(t0, t1)?;

    let mut best: Option<(Split, f64, f64)> = None;
    for &f in sorted_features {
        let buf = &mut scratch.present;
        buf.clear();
        let (mut m0, mut m1) = (0.0, 0.0);
        for &(r, w) in rows {
            if w <= 0.0 {
                continue;
            }
            let x = matrix.get(r, f);
            let y = labels[r];
            if x.is_nan() {
                if y == 1 {
                    m1 += w
                } else {
                    m0 += w
                }
            } else {
                buf.push((x, y, w));
            }
        }
        if buf.len() < 2 {
            continue;
        }
        buf.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (p0, p1) = (t0 - m0, t1 - m1);
        let (mut l0, mut l1) = (0.0, 0.0);
        for k in 0..buf.len() - 1 {
            let (x, y, w) = buf[k];
            if y == 1 {
                l1 += w
            } else {
                l0 += w
            }
            let next = buf[k + 1].0;
            if x == next {
                continue;
            }
            let threshold = midpoint(x, next);
            let (r0, r1) = (p0 - l0, p1 - l1);
            for side in [Side::Left, Side::Right] {
                let (a0, a1, b0, b1) = match side {
                    Side::Left => (l0 + m0, l1 + m1, r0, r1),
                    Side::Right => (l0, l1, r0 + m0, r1 + m1),
                };
                let (wl, wr) = (a0 + a1, b0 + b1);
                if wl < min_samples_leaf || wr < min_samples_leaf || wl <= 0.0 || wr <= 0.0 {
                    continue;
                }
                let child = wl * gini_from_totals(a0, a1)? + wr * gini_from_totals(b0, b1)?;
                let gain = parent - child / total;
                if best.as_ref().is_none_or(|(b, _, _)| gain > b.gain) {
                    best = Some((Split { feature: f, threshold, missing_goes: side, gain }, wl, wr));
                }
            }
        }
        if m0 + m1 == 0.0 {
            // No missing rows here: route future missing cells to the heavier child.
            if let Some((s, wl, wr)) = best.as_mut() {
                if s.feature == f {
                    s.missing_goes = if *wl >= *wr { Side::Left } else { Side::Right };
                }
            }
        }
    }
    best.map(|(s, _, _)| s).filter(|s| s.gain > MIN_GAIN)
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b || !m.is_finite() {
        a
    } else {
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, missing_goes: Side, left: usize, right: usize },
    Leaf { positive_fraction: f64, n_effective: f64 },
}

/// Nodes stored flat; the root is node 0 and children are referenced by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        Tree { nodes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { positive_fraction, .. } => return *positive_fraction,
                Node::Split { feature, threshold, missing_goes, left, right } => {
                    let x = row[*feature];
                    let go_left = if x.is_nan() { *missing_goes == Side::Left } else { x <= *threshold };
                    i = if go_left { *left } else { *right };
                }
            }
        }
    }

    /// Depth in edges; a lone leaf has depth 0.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { positive_fraction, n_effective } => Some((*positive_fraction, *n_effective)),
            _ => None,
        })
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }

    pub(crate) fn validate(&self, width: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                Node::Split { feature, left, right, threshold, .. } => {
                    if *feature >= width || !threshold.is_finite() {
                        return Err(format!("node {i}: bad feature or threshold"));
                    }
                    if *left <= i || *right <= i || *left >= self.nodes.len() || *right >= self.nodes.len() {
                        return Err(format!("node {i}: bad child index"));
                    }
                }
                Node::Leaf { positive_fraction, .. } => {
                    if !(0.0..=1.0).contains(positive_fraction) {
                        return Err(format!("node {i}: positive_fraction out of range"));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: f64,
    pub features_per_split: usize,
    /// Leaf value when a tree receives no rows at all.
    pub prior: f64,
}

pub(crate) struct Grower<'a, R> {
    matrix: &'a FeatureMatrix,
    params: &'a GrowParams,
    rng: R,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    scratch: Scratch,
}

impl<'a, R: Rng> Grower<'a, R> {
    pub fn new(matrix: &'a FeatureMatrix, params: &'a GrowParams, rng: R) -> Self {
        Grower {
            matrix,
            params,
            rng,
            nodes: Vec::new(),
            importance: vec![0.0; matrix.width()],
            scratch: Scratch::default(),
        }
    }

    /// Grows a tree over (row, weight) pairs; returns it with its raw
    /// (unnormalized) importance contributions.
    pub fn grow(mut self, rows: Vec<(usize, f64)>) -> (Tree, Vec<f64>) {
        self.node(rows, 0);
        (Tree { nodes: self.nodes }, self.importance)
    }

    fn node(&mut self, rows: Vec<(usize, f64)>, depth: usize) -> usize {
        let labels = self.matrix.labels();
        let (mut w0, mut w1) = (0.0, 0.0);
        for &(r, w) in &rows {
            if labels[r] == 1 {
                w1 += w
            } else {
                w0 += w
            }
        }
        let total = w0 + w1;
        let id = self.nodes.len();
        let leaf = Node::Leaf {
            positive_fraction: if total > 0.0 { w1 / total } else { self.params.prior },
            n_effective: total,
        };
        self.nodes.push(leaf);

        let p = self.params;
        if depth >= p.max_depth || w0 == 0.0 || w1 == 0.0 || total < 2.0 * p.min_samples_leaf {
            return id;
        }
        let width = self.matrix.width();
        let mut features = index::sample(&mut self.rng, width, p.features_per_split.min(width)).into_vec();
        features.sort_unstable();
        let Some(split) = best_split_with(self.matrix, &rows, &features, p.min_samples_leaf, &mut self.scratch) else {
            return id;
        };
        self.importance[split.feature] += total * split.gain;
        let (left_rows, right_rows): (Vec<_>, Vec<_>) =
            rows.into_iter().partition(|&(r, _)| split.goes_left(self.matrix.get(r, split.feature)));
        let left = self.node(left_rows, depth + 1);
        let right = self.node(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            missing_goes: split.missing_goes,
            left,
            right,
        };
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::MISSING;
    use proptest::prelude::*;

    fn matrix(cols: usize, rows: &[(Vec<f64>, u8)]) -> FeatureMatrix {
        FeatureMatrix::from_rows((0..cols).map(|i| format!("f{i}")).collect(), rows.iter().cloned()).unwrap()
    }

    fn unit(n: usize) -> Vec<(usize, f64)> {
        (0..n).map(|i| (i, 1.0)).collect()
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[1, 1, 0, 0], &[1.0; 4]), Some(0.5));
        assert_eq!(gini(&[1, 1], &[1.0, 2.0]), Some(0.0));
        assert!((gini(&[1, 0], &[3.0, 1.0]).unwrap() - 0.375).abs() < 1e-15);
        assert_eq!(gini(&[1, 0], &[0.0, 0.0]), None);
    }

    #[test]
    fn four_point_split() {
        let m = matrix(1, &[(vec![1.0], 0), (vec![2.0], 0), (vec![3.0], 1), (vec![4.0], 1)]);
        let s = best_split(&m, &unit(4), &[0], 1.0).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 2.5);
        assert!((s.gain - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_feature_and_ties() {
        let m = matrix(
            3,
            &[(vec![7.0, 1.0, 1.0], 0), (vec![7.0, 2.0, 2.0], 0), (vec![7.0, 3.0, 3.0], 1), (vec![7.0, 4.0, 4.0], 1)],
        );
        assert_eq!(best_split(&m, &unit(4), &[0], 1.0), None);
        let s = best_split(&m, &unit(4), &[2, 1, 0], 1.0).unwrap();
        assert_eq!(s.feature, 1);
    }

    #[test]
    fn min_samples_leaf_blocks_small_children() {
        let m = matrix(1, &[(vec![1.0], 1), (vec![2.0], 0), (vec![3.0], 0), (vec![4.0], 0)]);
        let s = best_split(&m, &unit(4), &[0], 2.0).unwrap();
        assert_eq!(s.threshold, 2.5);
        assert_eq!(best_split(&m, &unit(4), &[0], 3.0), None);
    }

    #[test]
    fn missing_rows_follow_the_better_side() {
        let m = matrix(
            1,
            &[(vec![1.0], 0), (vec![2.0], 0), (vec![3.0], 1), (vec![4.0], 1), (vec![MISSING], 1), (vec![MISSING], 1)],
        );
        let s = best_split(&m, &unit(6), &[0], 1.0).unwrap();
        assert_eq!(s.threshold, 2.5);
        assert_eq!(s.missing_goes, Side::Right);
        assert!(s.goes_left(1.5) && !s.goes_left(MISSING));
    }

    #[test]
    fn missing_defaults_to_heavier_child_when_unseen() {
        let m = matrix(1, &[(vec![1.0], 0), (vec![2.0], 1), (vec![3.0], 1), (vec![4.0], 1)]);
        let s = best_split(&m, &unit(4), &[0], 1.0).unwrap();
        assert_eq!(s.threshold, 1.5);
        assert_eq!(s.missing_goes, Side::Right);
    }

    #[test]
    fn weights_act_as_replication() {
        let m = matrix(1, &[(vec![1.0], 0), (vec![2.0], 1), (vec![3.0], 1)]);
        let weighted = best_split(&m, &[(0, 2.0), (1, 1.0), (2, 1.0)], &[0], 1.0).unwrap();
        let rep = matrix(1, &[(vec![1.0], 0), (vec![1.0], 0), (vec![2.0], 1), (vec![3.0], 1)]);
        let replicated = best_split(&rep, &unit(4), &[0], 1.0).unwrap();
        assert_eq!(weighted.threshold, replicated.threshold);
        assert!((weighted.gain - replicated.gain).abs() < 1e-15);
    }

    /// Brute force: every feature, every midpoint, both missing sides,
    /// impurities recomputed from scratch over the partition.
    fn oracle(m: &FeatureMatrix, rows: &[(usize, f64)], min_leaf: f64) -> Option<(usize, f64, f64)> {
        let labels: Vec<u8> = rows.iter().map(|&(r, _)| m.labels()[r]).collect();
        let weights: Vec<f64> = rows.iter().map(|&(_, w)| w).collect();
        let parent = gini(&labels, &weights)?;
        let total: f64 = weights.iter().sum();
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..m.width() {
            let mut vals: Vec<f64> = rows.iter().map(|&(r, _)| m.get(r, f)).filter(|v| !v.is_nan()).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for pair in vals.windows(2) {
                let thr = (pair[0] + pair[1]) / 2.0;
                for missing_left in [true, false] {
                    let (mut ly, mut lw, mut ry, mut rw) = (vec![], vec![], vec![], vec![]);
                    for (i, &(r, w)) in rows.iter().enumerate() {
                        let x = m.get(r, f);
                        let left = if x.is_nan() { missing_left } else { x <= thr };
                        if left {
                            ly.push(labels[i]);
                            lw.push(w);
                        } else {
                            ry.push(labels[i]);
                            rw.push(w);
                        }
                    }
                    let (wl, wr): (f64, f64) = (lw.iter().sum(), rw.iter().sum());
                    if wl < min_leaf || wr < min_leaf {
                        continue;
                    }
                    let gain = parent - (wl * gini(&ly, &lw).unwrap() + wr * gini(&ry, &rw).unwrap()) / total;
                    if best.is_none_or(|b| gain > b.2) {
                        best = Some((f, thr, gain));
                    }
                }
            }
        }
        best.filter(|b| b.2 > 0.0)
    }

    fn dataset() -> impl Strategy<Value = (Vec<(Vec<f64>, u8)>, Vec<f64>, usize)> {
        (2usize..50, 1usize..=5).prop_flat_map(|(n, p)| {
            (
                prop::collection::vec(
                    (
                        prop::collection::vec(prop_oneof![8 => (0u8..6).prop_map(f64::from), 1 => Just(MISSING)], p),
                        0u8..2,
                    ),
                    n,
                ),
                // Dyadic weights keep child totals exact, as with bootstrap counts.
                prop::collection::vec((1u32..24).prop_map(|k| k as f64 / 8.0), n),
                Just(p),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((rows, weights, p) in dataset(), min_leaf in prop_oneof![Just(1.0), Just(2.0)]) {
            let m = matrix(p, &rows);
            let wr: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
            let feats: Vec<usize> = (0..p).collect();
            let got = best_split(&m, &wr, &feats, min_leaf);
            let want = oracle(&m, &wr, min_leaf);
            let got_gain = got.map_or(0.0, |s| s.gain);
            let want_gain = want.map_or(0.0, |w| w.2);
            prop_assert!((got_gain - want_gain).abs() < 1e-12, "got {got:?} want {want:?}");
        }
    }
}
