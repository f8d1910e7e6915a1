//! CART regression trees.
//!
//! Trees are grown depth-first on a weighted sample: bootstrap duplicates are
//! collapsed into per-row multiplicities, which gives the same splits and leaf
//! means as growing on the multiset directly. Every feature keeps its rows
//! presorted, so a split search is a single linear scan and a split is a
//! stable partition of each feature's segment.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

use super::{FeatureMatrix, ForestConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf(f64),
}

/// A fitted tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    /// Checks that children exist, point forward, and every node is reachable
    /// from exactly one parent.
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Argument("a tree needs at least one node".into()));
        }
        let mut parents = vec![0u32; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            match *node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature as usize >= n_features {
                        return Err(Error::Argument(format!(
                            "node {i} splits on feature {feature} of {n_features}"
                        )));
                    }
                    if threshold.is_nan() {
                        return Err(Error::Argument(format!("node {i} has a NaN threshold")));
                    }
                    for child in [left, right] {
                        let c = child as usize;
                        if c <= i || c >= nodes.len() {
                            return Err(Error::Argument(format!("node {i} has invalid child {child}")));
                        }
                        parents[c] += 1;
                    }
                }
                Node::Leaf(v) => {
                    if !v.is_finite() {
                        return Err(Error::Argument(format!("leaf {i} is not finite")));
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(Error::Argument("tree nodes do not form a single tree".into()));
        }
        Ok(RegressionTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = *node {
                depth[left as usize] = depth[i] + 1;
                depth[right as usize] = depth[i] + 1;
            }
        }
        depth.into_iter().max().unwrap_or(0)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }
}

/// Column-major copy of the training features with each column's row
/// indices sorted by value (ties by row index).
pub(crate) struct Presorted {
    pub n_rows: usize,
    pub n_cols: usize,
    pub columns: Vec<f64>,
    pub order: Vec<u32>,
}

impl Presorted {
    pub fn new(x: &FeatureMatrix) -> Self {
        let (n_rows, n_cols) = (x.n_rows(), x.n_cols());
        let mut columns = vec![0.0; n_rows * n_cols];
        for i in 0..n_rows {
            for (f, &v) in x.row(i).iter().enumerate() {
                columns[f * n_rows + i] = v;
            }
        }
        let mut order = Vec::with_capacity(n_rows * n_cols);
        for f in 0..n_cols {
            let col = &columns[f * n_rows..(f + 1) * n_rows];
            let mut ids: Vec<u32> = (0..n_rows as u32).collect();
            ids.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            order.extend(ids);
        }
        Presorted {
            n_rows,
            n_cols,
            columns,
            order,
        }
    }

    fn column(&self, f: usize) -> &[f64] {
        &self.columns[f * self.n_rows..(f + 1) * self.n_rows]
    }
}

/// Midpoint of two consecutive distinct values that still separates them.
pub(crate) fn split_threshold(below: f64, above: f64) -> f64 {
    let mid = below + (above - below) / 2.0;
    if mid >= above {
        below
    } else {
        mid
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Grows one tree on rows weighted by `counts` (bootstrap multiplicities).
pub(crate) fn grow(
    data: &Presorted,
    y: &[f64],
    counts: &[u32],
    config: &ForestConfig,
    rng: &mut StreamRng,
) -> RegressionTree {
    let n_rows = data.n_rows;
    let n_cols = data.n_cols;
    let in_bag = counts.iter().filter(|&&c| c > 0).count();

    // Per feature, the in-bag rows in sorted order. All features share the
    // same segment boundaries for every node.
    let mut order = Vec::with_capacity(in_bag * n_cols);
    for f in 0..n_cols {
        let all = &data.order[f * n_rows..(f + 1) * n_rows];
        order.extend(all.iter().copied().filter(|&id| counts[id as usize] > 0));
    }
    let mut goes_left = vec![false; n_rows];
    let mut scratch: Vec<u32> = Vec::with_capacity(in_bag);
    let min_leaf = config.min_leaf_size as u64;
    let max_features = config.max_features.min(n_cols);

    let mut nodes = vec![Node::Leaf(0.0)];
    let mut stack = vec![(0usize, 0usize, in_bag, 0usize)];
    while let Some((node, start, end, depth)) = stack.pop() {
        let rows = &order[start..end];
        let mut weight = 0u64;
        let mut sum = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &id in rows {
            let c = counts[id as usize];
            let v = y[id as usize];
            weight += u64::from(c);
            sum += f64::from(c) * v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let mean = sum / weight as f64;
        let depth_capped = config.max_depth.is_some_and(|d| depth >= d);
        if weight < 2 * min_leaf || depth_capped || lo == hi {
            nodes[node] = Node::Leaf(mean);
            continue;
        }

        let mut best: Option<Candidate> = None;
        for f in index::sample(rng, n_cols, max_features) {
            let column = data.column(f);
            let seg = &order[f * in_bag + start..f * in_bag + end];
            let (mut w_left, mut s_left) = (0u64, 0.0);
            for k in 0..seg.len() - 1 {
                let id = seg[k] as usize;
                let c = counts[id];
                w_left += u64::from(c);
                s_left += f64::from(c) * y[id];
                let (here, next) = (column[id], column[seg[k + 1] as usize]);
                if next <= here {
                    continue;
                }
                let w_right = weight - w_left;
                if w_left < min_leaf || w_right < min_leaf {
                    continue;
                }
                let s_right = sum - s_left;
                // Maximising this minimises the children's summed squared error.
                let score = s_left * s_left / w_left as f64 + s_right * s_right / w_right as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(Candidate {
                        feature: f,
                        threshold: split_threshold(here, next),
                        score,
                    });
                }
            }
        }

        let Some(split) = best else {
            nodes[node] = Node::Leaf(mean);
            continue;
        };
        let column = data.column(split.feature);
        let mut n_left = 0;
        for &id in &order[split.feature * in_bag + start..split.feature * in_bag + end] {
            let left = column[id as usize] <= split.threshold;
            goes_left[id as usize] = left;
            n_left += usize::from(left);
        }
        for f in 0..n_cols {
            let seg = &mut order[f * in_bag + start..f * in_bag + end];
            scratch.clear();
            let mut write = 0;
            for read in 0..seg.len() {
                let id = seg[read];
                if goes_left[id as usize] {
                    seg[write] = id;
                    write += 1;
                } else {
                    scratch.push(id);
                }
            }
            seg[write..].copy_from_slice(&scratch);
        }

        let left = nodes.len();
        nodes.push(Node::Leaf(0.0));
        nodes.push(Node::Leaf(0.0));
        nodes[node] = Node::Split {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: left as u32,
            right: left as u32 + 1,
        };
        stack.push((left + 1, start + n_left, end, depth + 1));
        stack.push((left, start, start + n_left, depth + 1));
    }
    RegressionTree { nodes }
}

/// Fits a single tree on the multiset of rows `sample_indices`.
pub fn fit_tree(
    x: &FeatureMatrix,
    y: &[f64],
    sample_indices: &[usize],
    config: &ForestConfig,
    rng: &mut StreamRng,
) -> Result<RegressionTree> {
    if x.n_rows() == 0 || y.is_empty() {
        return Err(Error::Argument("cannot fit a tree on empty data".into()));
    }
    if y.len() != x.n_rows() {
        return Err(Error::Argument(format!(
            "{} targets for {} feature rows",
            y.len(),
            x.n_rows()
        )));
    }
    if sample_indices.is_empty() {
        return Err(Error::Argument("sample index list is empty".into()));
    }
    config.validate(x.n_cols())?;
    let mut counts = vec![0u32; x.n_rows()];
    for &i in sample_indices {
        *counts
            .get_mut(i)
            .ok_or_else(|| Error::Argument(format!("sample index {i} out of range")))? += 1;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("targets must be finite".into()));
    }
    let data = Presorted::new(x);
    Ok(grow(&data, y, &counts, config, rng))
}
