//! Confusion-driven label-tree learning.
//!
//! The label set is recursively partitioned into two meta-classes that are
//! easy to separate. At each node a multi-class forest is trained on half of
//! the node's samples and evaluated on the other half to produce a
//! soft confusion matrix (average predicted class probabilities per true
//! class). After symmetrization, the partition maximizing the within-part
//! confusion mass is selected, either by exact enumeration of all
//! 2^(n-1) - 1 candidate partitions or by a two-way spectral-clustering
//! relaxation on the normalized Laplacian.

use crate::error::{Error, Result};
use crate::forest::{train_forest, ForestConfig};
use crate::seed::derive_seed_from_ids;
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Row-stochastic matrix of average predicted class probabilities.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    /// `labels.len()` x `labels.len()`; entry (i, j) is the mean probability
    /// that an evaluation sample of class `labels[i]` is assigned to
    /// `labels[j]`.
    pub matrix: Array2<f64>,
    pub labels: Vec<u32>,
}

impl ConfusionMatrix {
    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.matrix.nrows() != n || self.matrix.ncols() != n {
            return Err(Error::NotSquare(self.matrix.nrows(), self.matrix.ncols()));
        }
        for (i, row) in self.matrix.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidPartition(format!(
                    "confusion row {i} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&v| !(0.0..=1.0 + 1e-12).contains(&v)) {
                return Err(Error::InvalidPartition(format!(
                    "confusion row {i} has entries outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Estimate the confusion matrix of the given samples.
///
/// The samples are split into two stratified halves; a multi-class forest
/// is trained on one half and its predicted distributions are averaged per
/// true class over the other half.
pub fn confusion_matrix(
    features: ArrayView2<'_, f64>,
    labels: &[u32],
    cfg: &ForestConfig,
    seed: u64,
) -> Result<ConfusionMatrix> {
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::DegenerateLabelSet(classes.len()));
    }

    let mut train_rows: Vec<usize> = Vec::new();
    let mut eval_rows: Vec<usize> = Vec::new();
    for &class in &classes {
        let mut members: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::InsufficientClassSamples { class, count: members.len() });
        }
        // The shuffle stream is derived from the member rows themselves, so
        // relabeling permutations leave the halving unchanged.
        let stream = derive_seed_from_ids(seed, "stratified-halving", &members);
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(stream));
        let half = members.len().div_ceil(2);
        train_rows.extend_from_slice(&members[..half]);
        eval_rows.extend_from_slice(&members[half..]);
    }

    let take = |rows: &[usize]| -> (Array2<f64>, Vec<u32>) {
        let sub = Array2::from_shape_fn((rows.len(), features.ncols()), |(r, c)| {
            features[(rows[r], c)]
        });
        let y = rows.iter().map(|&r| labels[r]).collect();
        (sub, y)
    };
    let (train_x, train_y) = take(&train_rows);
    let forest_cfg = ForestConfig {
        rng_seed: derive_seed_from_ids(seed, "confusion-forest", &train_rows),
        ..cfg.clone()
    };
    let forest = train_forest(train_x.view(), &train_y, &forest_cfg)?;

    let n = classes.len();
    let mut matrix = Array2::zeros((n, n));
    let mut counts = vec![0usize; n];
    let class_pos: std::collections::HashMap<u32, usize> =
        classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    for &row in &eval_rows {
        let proba = forest.predict_proba(
            features.row(row).as_slice().expect("contiguous row"),
        )?;
        let i = class_pos[&labels[row]];
        counts[i] += 1;
        // The forest's class order equals `classes` (both sorted).
        for (j, &p) in proba.iter().enumerate() {
            matrix[(i, j)] += p;
        }
    }
    for (i, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::InsufficientClassSamples { class: classes[i], count: 0 });
        }
        for j in 0..n {
            matrix[(i, j)] /= count as f64;
        }
    }
    let cm = ConfusionMatrix { matrix, labels: classes };
    cm.validate()?;
    Ok(cm)
}

/// Symmetrize a square matrix: (A + A^T) / 2.
pub fn symmetrize(a: &Array2<f64>) -> Result<Array2<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare(a.nrows(), a.ncols()));
    }
    Ok((a + &a.t()) / 2.0)
}

/// Partition quality: total within-part affinity, diagonal included.
pub fn partition_objective(
    abar: &Array2<f64>,
    left: &[usize],
    right: &[usize],
) -> Result<f64> {
    let n = abar.nrows();
    if abar.ncols() != n {
        return Err(Error::NotSquare(abar.nrows(), abar.ncols()));
    }
    if left.is_empty() || right.is_empty() {
        return Err(Error::InvalidPartition("both parts must be nonempty".into()));
    }
    let mut seen = vec![false; n];
    for &i in left.iter().chain(right) {
        if i >= n {
            return Err(Error::InvalidPartition(format!("index {i} out of range")));
        }
        if seen[i] {
            return Err(Error::InvalidPartition(format!("index {i} appears twice")));
        }
        seen[i] = true;
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::InvalidPartition("parts do not cover the label set".into()));
    }
    let block = |part: &[usize]| -> f64 {
        part.iter()
            .flat_map(|&i| part.iter().map(move |&j| abar[(i, j)]))
            .sum()
    };
    Ok(block(left) + block(right))
}

/// Partition search strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionMode {
    /// Enumerate all 2^(n-1) - 1 partitions.
    Exact,
    /// Two-way spectral clustering on the symmetrized affinity.
    Spectral,
    /// Exact for n <= 12 labels, spectral above.
    Auto,
}

/// Largest label count handled exactly in `Auto` mode (2047 candidates).
pub const EXACT_MODE_LIMIT: usize = 12;

/// All two-part partitions of `0..n`, each yielded once with part 0
/// containing index 0.
pub fn enumerate_partitions(n: usize) -> impl Iterator<Item = (Vec<usize>, Vec<usize>)> {
    assert!(n >= 2 && n <= 63, "enumeration limited to 2..=63 labels");
    (0..(1u64 << (n - 1)) - 1).map(move |mask| {
        let mut left = vec![0usize];
        let mut right = Vec::new();
        for i in 1..n {
            if mask >> (i - 1) & 1 == 1 {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        (left, right)
    })
}

/// Best label partition under the within-part affinity objective.
///
/// Returns `(left, right)` label lists with the left part containing the
/// smallest label. Ties in exact mode resolve to the lexicographically
/// smallest left part. Both modes are deterministic; `seed` is accepted for
/// interface stability but the current relaxation draws no randomness.
pub fn best_partition(
    abar: &Array2<f64>,
    labels: &[u32],
    mode: PartitionMode,
    seed: u64,
) -> Result<(Vec<u32>, Vec<u32>)> {
    let _ = seed;
    let n = labels.len();
    if n < 2 {
        return Err(Error::LabelSetTooSmall(n));
    }
    if abar.nrows() != n || abar.ncols() != n {
        return Err(Error::NotSquare(abar.nrows(), abar.ncols()));
    }
    let exact = match mode {
        PartitionMode::Exact => true,
        PartitionMode::Spectral => false,
        PartitionMode::Auto => n <= EXACT_MODE_LIMIT,
    };
    let (left_idx, right_idx) = if exact {
        exact_partition(abar, n)
    } else {
        spectral_partition(abar, n)
    };
    let to_labels = |idx: &[usize]| -> Vec<u32> {
        let mut v: Vec<u32> = idx.iter().map(|&i| labels[i]).collect();
        v.sort_unstable();
        v
    };
    let (mut left, mut right) = (to_labels(&left_idx), to_labels(&right_idx));
    if right.first() < left.first() {
        std::mem::swap(&mut left, &mut right);
    }
    Ok((left, right))
}

fn exact_partition(abar: &Array2<f64>, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    for (left, right) in enumerate_partitions(n) {
        let e = partition_objective(abar, &left, &right).expect("enumerated partition valid");
        let replace = match &best {
            None => true,
            Some((be, bl, _)) => e > *be || (e == *be && left < *bl),
        };
        if replace {
            best = Some((e, left, right));
        }
    }
    let (_, left, right) = best.expect("n >= 2 yields at least one partition");
    (left, right)
}

/// Two-way spectral relaxation of the within-part affinity objective.
///
/// Since the within-part mass equals the total mass minus twice the cut,
/// maximizing it is minimizing the plain cut; its relaxation is the second
/// eigenvector (Fiedler vector) of the unnormalized Laplacian D - Abar.
/// The candidate splits are the n-1 contiguous thresholds along the
/// eigenvector ordering — the 1-D two-means split is always one of them —
/// scored by the exact objective. Orderings from both the unnormalized and
/// the symmetric normalized Laplacian are scanned and the best split wins,
/// so clearly block-structured affinities and strongly unbalanced optima
/// are both recovered. Deterministic; every candidate has two nonempty
/// parts by construction.
fn spectral_partition(abar: &Array2<f64>, n: usize) -> (Vec<usize>, Vec<usize>) {
    let degrees: Vec<f64> = (0..n).map(|i| abar.row(i).sum().max(1e-12)).collect();
    let fiedler_order = |normalized: bool| -> Vec<usize> {
        let lap = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            if normalized {
                let norm = abar[(i, j)] / (degrees[i] * degrees[j]).sqrt();
                if i == j {
                    1.0 - norm
                } else {
                    -norm
                }
            } else if i == j {
                degrees[i] - abar[(i, j)]
            } else {
                -abar[(i, j)]
            }
        });
        let eig = nalgebra::SymmetricEigen::new(lap);
        let mut by_value: Vec<usize> = (0..n).collect();
        by_value.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let fiedler = eig.eigenvectors.column(by_value[1]);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| fiedler[a].total_cmp(&fiedler[b]));
        order
    };

    let objective = |left: &[usize], right: &[usize]| -> f64 {
        partition_objective(abar, left, right).expect("contiguous split is valid")
    };
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    for normalized in [false, true] {
        let order = fiedler_order(normalized);
        for split in 1..n {
            let left = order[..split].to_vec();
            let right = order[split..].to_vec();
            let e = objective(&left, &right);
            if best.as_ref().map(|(b, _, _)| e > *b).unwrap_or(true) {
                best = Some((e, left, right));
            }
        }
    }
    let (_, left, right) = best.expect("n >= 2 yields candidates");
    (left, right)
}

/// Binary tree over class labels: C - 1 split nodes, C leaves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeNode {
    Split {
        labels: Vec<u32>,
        left_labels: Vec<u32>,
        right_labels: Vec<u32>,
        left: usize,
        right: usize,
        /// Position in the pre-order sequence of split nodes (0-based).
        split_index: usize,
    },
    Leaf {
        label: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTree {
    /// Nodes in pre-order; `nodes[0]` is the root.
    pub nodes: Vec<TreeNode>,
}

impl LabelTree {
    pub fn num_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Split { .. }))
            .count()
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.len() - self.num_splits()
    }

    /// All class labels, sorted.
    pub fn classes(&self) -> Vec<u32> {
        match &self.nodes[0] {
            TreeNode::Split { labels, .. } => labels.clone(),
            TreeNode::Leaf { label } => vec![*label],
        }
    }

    /// Split nodes ordered by `split_index` (pre-order).
    pub fn split_nodes(&self) -> Vec<&TreeNode> {
        let mut splits: Vec<&TreeNode> = self
            .nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Split { .. }))
            .collect();
        splits.sort_by_key(|n| match n {
            TreeNode::Split { split_index, .. } => *split_index,
            TreeNode::Leaf { .. } => unreachable!(),
        });
        splits
    }

    /// Check the structural invariants: children form a disjoint nonempty
    /// cover of the parent, and counts are C - 1 splits / C leaves.
    pub fn validate(&self) -> Result<()> {
        let c = self.classes().len();
        if self.num_splits() + 1 != c || self.num_leaves() != c {
            return Err(Error::InvalidPartition(format!(
                "tree has {} splits and {} leaves for {c} classes",
                self.num_splits(),
                self.num_leaves()
            )));
        }
        for node in &self.nodes {
            if let TreeNode::Split { labels, left_labels, right_labels, left, right, .. } = node {
                let mut merged: Vec<u32> =
                    left_labels.iter().chain(right_labels).copied().collect();
                merged.sort_unstable();
                if left_labels.is_empty()
                    || right_labels.is_empty()
                    || &merged != labels
                    || left_labels.iter().any(|l| right_labels.contains(l))
                {
                    return Err(Error::InvalidPartition(format!(
                        "node children do not partition {labels:?}"
                    )));
                }
                let child_labels = |idx: usize| match &self.nodes[idx] {
                    TreeNode::Split { labels, .. } => labels.clone(),
                    TreeNode::Leaf { label } => vec![*label],
                };
                if child_labels(*left) != *left_labels || child_labels(*right) != *right_labels {
                    return Err(Error::InvalidPartition(
                        "child node label sets disagree with the split".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Human-readable text serialization.
    pub fn to_text(&self) -> String {
        let mut out = String::from("labeltree v1\n");
        out.push_str(&format!("nodes {}\n", self.nodes.len()));
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                TreeNode::Split { labels, left, right, split_index, .. } => {
                    let labels: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
                    out.push_str(&format!(
                        "node {id} split idx={split_index} labels={} left={left} right={right}\n",
                        labels.join(",")
                    ));
                }
                TreeNode::Leaf { label } => {
                    out.push_str(&format!("node {id} leaf label={label}\n"));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<LabelTree> {
        let bad = |msg: &str| Error::ModelFormat(format!("label tree: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some("labeltree v1") {
            return Err(bad("missing header"));
        }
        let count_line = lines.next().ok_or_else(|| bad("missing node count"))?;
        let count: usize = count_line
            .strip_prefix("nodes ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad node count"))?;
        let mut nodes = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| bad("truncated node list"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 3 || fields[0] != "node" {
                return Err(bad(&format!("bad node line {line:?}")));
            }
            let get = |key: &str| -> Result<&str> {
                fields
                    .iter()
                    .find_map(|f| f.strip_prefix(key))
                    .ok_or_else(|| bad(&format!("missing {key} in {line:?}")))
            };
            match fields[2] {
                "split" => {
                    let split_index: usize =
                        get("idx=")?.parse().map_err(|_| bad("bad idx"))?;
                    let labels: Vec<u32> = get("labels=")?
                        .split(',')
                        .map(|s| s.parse().map_err(|_| bad("bad label")))
                        .collect::<Result<_>>()?;
                    let left: usize = get("left=")?.parse().map_err(|_| bad("bad left"))?;
                    let right: usize = get("right=")?.parse().map_err(|_| bad("bad right"))?;
                    nodes.push(TreeNode::Split {
                        labels,
                        left_labels: Vec::new(),
                        right_labels: Vec::new(),
                        left,
                        right,
                        split_index,
                    });
                }
                "leaf" => {
                    let label: u32 = get("label=")?.parse().map_err(|_| bad("bad label"))?;
                    nodes.push(TreeNode::Leaf { label });
                }
                kind => return Err(bad(&format!("unknown node kind {kind:?}"))),
            }
        }
        // Reconstruct the child label sets from the leaves.
        let mut tree = LabelTree { nodes };
        let leaf_sets: Vec<Vec<u32>> = (0..tree.nodes.len())
            .map(|i| collect_leaf_labels(&tree.nodes, i))
            .collect();
        for (i, node) in tree.nodes.iter_mut().enumerate() {
            if let TreeNode::Split { left, right, left_labels, right_labels, .. } = node {
                *left_labels = leaf_sets[*left].clone();
                *right_labels = leaf_sets[*right].clone();
                let _ = i;
            }
        }
        tree.validate()?;
        Ok(tree)
    }
}

fn collect_leaf_labels(nodes: &[TreeNode], idx: usize) -> Vec<u32> {
    match &nodes[idx] {
        TreeNode::Leaf { label } => vec![*label],
        TreeNode::Split { left, right, .. } => {
            let mut v = collect_leaf_labels(nodes, *left);
            v.extend(collect_leaf_labels(nodes, *right));
            v.sort_unstable();
            v
        }
    }
}

/// Learn the full label tree by recursive confusion-driven partitioning.
pub fn build_label_tree(
    features: ArrayView2<'_, f64>,
    labels: &[u32],
    cfg: &ForestConfig,
    mode: PartitionMode,
    seed: u64,
) -> Result<LabelTree> {
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::DegenerateLabelSet(classes.len()));
    }
    let all_rows: Vec<usize> = (0..labels.len()).collect();
    let mut nodes = Vec::new();
    let mut split_counter = 0usize;
    build_node(
        features,
        labels,
        cfg,
        mode,
        seed,
        classes,
        all_rows,
        &mut nodes,
        &mut split_counter,
    )?;
    let tree = LabelTree { nodes };
    tree.validate()?;
    Ok(tree)
}

#[allow(clippy::too_many_arguments)]
fn build_node(
    features: ArrayView2<'_, f64>,
    labels: &[u32],
    cfg: &ForestConfig,
    mode: PartitionMode,
    seed: u64,
    node_labels: Vec<u32>,
    rows: Vec<usize>,
    nodes: &mut Vec<TreeNode>,
    split_counter: &mut usize,
) -> Result<usize> {
    if node_labels.len() == 1 {
        let id = nodes.len();
        nodes.push(TreeNode::Leaf { label: node_labels[0] });
        return Ok(id);
    }
    let annotate = |e: Error, labels: &[u32]| match e {
        wrapped @ Error::TreeNode { .. } => wrapped,
        other => Error::TreeNode { labels: labels.to_vec(), source: Box::new(other) },
    };

    // The node's stream depends only on which samples it holds.
    let node_seed = derive_seed_from_ids(seed, "tree-node", &rows);
    let sub = Array2::from_shape_fn((rows.len(), features.ncols()), |(r, c)| {
        features[(rows[r], c)]
    });
    let sub_labels: Vec<u32> = rows.iter().map(|&r| labels[r]).collect();
    let confusion = confusion_matrix(sub.view(), &sub_labels, cfg, node_seed)
        .map_err(|e| annotate(e, &node_labels))?;
    let abar = symmetrize(&confusion.matrix).map_err(|e| annotate(e, &node_labels))?;
    let (left_labels, right_labels) =
        best_partition(&abar, &confusion.labels, mode, node_seed)
            .map_err(|e| annotate(e, &node_labels))?;

    let id = nodes.len();
    let split_index = *split_counter;
    *split_counter += 1;
    nodes.push(TreeNode::Split {
        labels: node_labels.clone(),
        left_labels: left_labels.clone(),
        right_labels: right_labels.clone(),
        left: 0,
        right: 0,
        split_index,
    });
    let part_rows = |part: &[u32]| -> Vec<usize> {
        rows.iter().copied().filter(|&r| part.contains(&labels[r])).collect()
    };
    let left_id = build_node(
        features,
        labels,
        cfg,
        mode,
        seed,
        left_labels.clone(),
        part_rows(&left_labels),
        nodes,
        split_counter,
    )?;
    let right_id = build_node(
        features,
        labels,
        cfg,
        mode,
        seed,
        right_labels.clone(),
        part_rows(&right_labels),
        nodes,
        split_counter,
    )?;
    if let TreeNode::Split { left, right, .. } = &mut nodes[id] {
        *left = left_id;
        *right = right_id;
    }
    Ok(id)
}
