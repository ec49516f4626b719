//! Regression trees and histogram-based greedy growth.

use rayon::prelude::*;

use super::bins::{BinSchema, BinnedMatrix, MISSING_BIN};
use super::GbdtParams;

/// Relative tolerance for split acceptance and gain ties. Candidates whose
/// gains differ by less than this (relative to the summed child/parent
/// scores) are treated as equal and the earlier one (lower feature, lower
/// threshold, missing-right before missing-left) wins.
pub const GAIN_REL_EPS: f64 = 1e-10;

/// Rows at or above which per-feature histograms are built in parallel.
const PARALLEL_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: u32,
        threshold: f64,
        default_left: bool,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

/// Flat node array; `nodes[0]` is the root and children always have larger
/// ids than their parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree { nodes: vec![TreeNode::Leaf { value }] }
    }

    /// Leaf value reached by `x`. `NaN` entries follow the default direction.
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, default_left, left, right } => {
                    let v = x[*feature as usize];
                    let go_left = if v.is_nan() { *default_left } else { v < *threshold };
                    i = if go_left { *left } else { *right } as usize;
                }
            }
        }
    }

    /// Leaf values for `LANES` rows walked in lockstep, which overlaps the
    /// dependent node loads of independent rows.
    #[inline]
    pub fn predict_lanes<const LANES: usize>(&self, xs: [&[f64]; LANES]) -> [f64; LANES] {
        let mut idx = [0u32; LANES];
        let mut out = [0.0; LANES];
        let mut live = LANES;
        while live > 0 {
            live = 0;
            for k in 0..LANES {
                match &self.nodes[idx[k] as usize] {
                    TreeNode::Leaf { value } => out[k] = *value,
                    TreeNode::Split { feature, threshold, default_left, left, right } => {
                        let v = xs[k][*feature as usize];
                        let go_left = if v.is_nan() { *default_left } else { v < *threshold };
                        idx[k] = if go_left { *left } else { *right };
                        live += 1;
                    }
                }
            }
        }
        out
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(t, *left as usize).max(walk(t, *right as usize))
                }
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    bin: usize,
    default_left: bool,
    gain: f64,
    scale: f64,
}

impl Candidate {
    fn beats(&self, best: &Candidate) -> bool {
        self.gain > best.gain + GAIN_REL_EPS * best.scale.max(self.scale)
    }
}

#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Gradient and hessian sums of the occupied bins, ascending by bin and
/// accumulated in row order, plus the missing-value bin. Hessians are all
/// one, so a hessian sum is the row count.
struct Histogram {
    occupied: Vec<(usize, f64, f64)>,
    missing: (f64, f64),
}

/// `node_grad[k]` is the gradient of the node's `k`-th row.
fn build_histogram(col: &[u16], rows: &[u32], node_grad: &[f64], n_bins: usize) -> Histogram {
    let mut missing = (0.0, 0u32);
    let mut occupied = Vec::new();
    if rows.len() >= n_bins {
        let mut bins = vec![(0.0, 0u32); n_bins];
        for (&r, &g) in rows.iter().zip(node_grad) {
            let b = col[r as usize];
            if b == MISSING_BIN {
                missing.0 += g;
                missing.1 += 1;
            } else {
                let slot = &mut bins[b as usize];
                slot.0 += g;
                slot.1 += 1;
            }
        }
        occupied.extend(
            bins.iter()
                .enumerate()
                .filter(|(_, s)| s.1 > 0)
                .map(|(b, s)| (b, s.0, f64::from(s.1))),
        );
    } else {
        // ordering by (bin, position) keeps row order within a bin, so sums
        // match the dense path
        let mut keyed: Vec<u64> = rows
            .iter()
            .enumerate()
            .map(|(k, &r)| (u64::from(col[r as usize]) << 32) | k as u64)
            .collect();
        keyed.sort_unstable();
        let mut run: Option<(u16, f64, u32)> = None;
        for key in keyed {
            let b = (key >> 32) as u16;
            let g = node_grad[key as u32 as usize];
            if b == MISSING_BIN {
                missing.0 += g;
                missing.1 += 1;
                continue;
            }
            match &mut run {
                Some((last, sg, n)) if *last == b => {
                    *sg += g;
                    *n += 1;
                }
                _ => {
                    if let Some((last, sg, n)) = run {
                        occupied.push((last as usize, sg, f64::from(n)));
                    }
                    run = Some((b, 0.0 + g, 1));
                }
            }
        }
        if let Some((last, sg, n)) = run {
            occupied.push((last as usize, sg, f64::from(n)));
        }
    }
    Histogram { occupied, missing: (missing.0, f64::from(missing.1)) }
}

struct NodeStats {
    g: f64,
    h: f64,
}

/// Scans thresholds in ascending order. Thresholds that fall between the
/// same pair of occupied bins induce the same partition; only the lowest of
/// them is evaluated.
fn best_feature_split(
    feature: usize,
    hist: &Histogram,
    n_thresholds: usize,
    node: &NodeStats,
    params: &GbdtParams,
) -> Option<Candidate> {
    if n_thresholds == 0 {
        return None;
    }
    let lambda = params.lambda;
    let parent = score(node.g, node.h, lambda);
    let (gm, hm) = hist.missing;
    let occ = &hist.occupied;

    // suffix sums give the right-hand side without subtracting from the total
    let mut suffix = vec![(0.0, 0.0); occ.len() + 1];
    for k in (0..occ.len()).rev() {
        suffix[k] = (suffix[k + 1].0 + occ[k].1, suffix[k + 1].1 + occ[k].2);
    }

    let mut best: Option<Candidate> = None;
    let mut consider = |bin: usize, gl: f64, hl: f64, gr: f64, hr: f64| {
        let directions: &[bool] = if hm > 0.0 { &[false, true] } else { &[hl >= hr] };
        for &default_left in directions {
            let (gl2, hl2, gr2, hr2) = if default_left {
                (gl + gm, hl + hm, gr, hr)
            } else {
                (gl, hl, gr + gm, hr + hm)
            };
            if hl2 <= 0.0 || hr2 <= 0.0 || hl2 < params.min_child_weight || hr2 < params.min_child_weight {
                continue;
            }
            let sl = score(gl2, hl2, lambda);
            let sr = score(gr2, hr2, lambda);
            let cand = Candidate {
                feature,
                bin,
                default_left,
                gain: 0.5 * (sl + sr - parent) - params.gamma,
                scale: sl + sr + parent,
            };
            if best.as_ref().is_none_or(|b| cand.beats(b)) {
                best = Some(cand);
            }
        }
    };

    if occ.first().is_none_or(|&(b, _, _)| b > 0) {
        consider(0, 0.0, 0.0, suffix[0].0, suffix[0].1);
    }
    let (mut gl, mut hl) = (0.0, 0.0);
    for (k, &(b, g, h)) in occ.iter().enumerate() {
        if b >= n_thresholds {
            break;
        }
        gl += g;
        hl += h;
        consider(b, gl, hl, suffix[k + 1].0, suffix[k + 1].1);
    }
    best.filter(|c| c.gain > GAIN_REL_EPS * c.scale)
}

fn node_sums(node_grad: &[f64]) -> NodeStats {
    let mut g = 0.0;
    for &x in node_grad {
        g += x;
    }
    NodeStats { g, h: node_grad.len() as f64 }
}

pub(crate) struct GrownTree {
    pub tree: Tree,
    /// (start, end, leaf value) ranges into the row permutation.
    pub leaves: Vec<(usize, usize, f64)>,
}

/// Grows one tree depth-first. `rows` must arrive in ascending order; it is
/// stably partitioned in place so every node's rows stay ascending.
pub(crate) fn grow_tree(
    binned: &BinnedMatrix,
    schema: &BinSchema,
    params: &GbdtParams,
    grad: &[f64],
    rows: &mut [u32],
) -> GrownTree {
    struct Pending {
        id: usize,
        start: usize,
        end: usize,
        depth: usize,
    }

    let n_features = binned.cols.len();
    let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf { value: 0.0 }];
    let mut leaves = Vec::new();
    let mut stack = vec![Pending { id: 0, start: 0, end: rows.len(), depth: 0 }];
    let mut scratch: Vec<u32> = Vec::with_capacity(rows.len());
    let mut node_grad: Vec<f64> = Vec::with_capacity(rows.len());

    while let Some(Pending { id, start, end, depth }) = stack.pop() {
        let node_rows = &rows[start..end];
        node_grad.clear();
        node_grad.extend(node_rows.iter().map(|&r| grad[r as usize]));
        let node_grad = &node_grad[..];
        let stats = node_sums(node_grad);
        let leaf_value = -stats.g / (stats.h + params.lambda);

        let split = if depth < params.max_depth && node_rows.len() >= 2 {
            let eval = |f: usize| {
                let n_thresholds = schema.thresholds(f).len();
                if n_thresholds == 0 {
                    return None;
                }
                let hist = build_histogram(&binned.cols[f], node_rows, node_grad, n_thresholds + 1);
                best_feature_split(f, &hist, n_thresholds, &stats, params)
            };
            let per_feature: Vec<Option<Candidate>> = if node_rows.len() >= PARALLEL_ROWS {
                (0..n_features).into_par_iter().map(eval).collect()
            } else {
                (0..n_features).map(eval).collect()
            };
            let mut best: Option<Candidate> = None;
            for c in per_feature.into_iter().flatten() {
                if best.as_ref().is_none_or(|b| c.beats(b)) {
                    best = Some(c);
                }
            }
            best
        } else {
            None
        };

        let Some(c) = split else {
            nodes[id] = TreeNode::Leaf { value: leaf_value };
            leaves.push((start, end, leaf_value));
            continue;
        };

        // stable partition
        let col = &binned.cols[c.feature];
        scratch.clear();
        let mut n_left = 0;
        for k in start..end {
            let r = rows[k];
            let b = col[r as usize];
            let left = if b == MISSING_BIN { c.default_left } else { (b as usize) <= c.bin };
            if left {
                rows[start + n_left] = r;
                n_left += 1;
            } else {
                scratch.push(r);
            }
        }
        rows[start + n_left..end].copy_from_slice(&scratch);

        let left_id = nodes.len();
        let right_id = left_id + 1;
        nodes.push(TreeNode::Leaf { value: 0.0 });
        nodes.push(TreeNode::Leaf { value: 0.0 });
        nodes[id] = TreeNode::Split {
            feature: c.feature as u32,
            threshold: schema.thresholds(c.feature)[c.bin],
            default_left: c.default_left,
            left: left_id as u32,
            right: right_id as u32,
        };
        let mid = start + n_left;
        stack.push(Pending { id: right_id, start: mid, end, depth: depth + 1 });
        stack.push(Pending { id: left_id, start, end: mid, depth: depth + 1 });
    }

    GrownTree { tree: Tree { nodes }, leaves }
}
