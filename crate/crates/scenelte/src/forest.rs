//! Probabilistic random forest.
//!
//! Bagged decision trees with axis-aligned Gini splits and class-histogram
//! leaves. `predict_proba` averages the leaf histograms over trees, which is
//! the probability support both the confusion matrices and the label-tree
//! embeddings are built on.
//!
//! Training is deterministic for a fixed `rng_seed`: every tree draws its
//! bootstrap sample and split-candidate features from its own counter-derived
//! ChaCha stream, so results do not depend on thread scheduling.
//!
//! # Serialized format
//!
//! A forest is stored as a little-endian binary record:
//!
//! ```text
//! magic "FRST" | version u32 | feature_dim u32 | n_classes u32
//! classes u32 x n_classes | n_trees u32
//! per tree: n_nodes u32, then per node:
//!   kind u8 (0 = split, 1 = leaf)
//!   split: feature u32, threshold f64, left u32, right u32
//!   leaf:  histogram f64 x n_classes
//! ```

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{Read, Write};

const FOREST_MAGIC: &[u8; 4] = b"FRST";
const FOREST_VERSION: u32 = 1;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ForestConfig {
    /// Number of trees.
    pub n_trees: usize,
    /// Maximum tree depth; `None` grows until purity or `min_leaf`.
    pub max_depth: Option<usize>,
    /// Minimum samples per leaf.
    pub min_leaf: usize,
    /// Candidate features per split; `None` uses ceil(sqrt(M)).
    pub features_per_split: Option<usize>,
    /// Draw a bootstrap resample per tree.
    pub bootstrap: bool,
    /// Additive smoothing for leaf histograms (0 = raw class frequencies).
    pub laplace_alpha: f64,
    pub rng_seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: None,
            min_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            laplace_alpha: 0.0,
            rng_seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::InvalidConfig("n_trees must be >= 1".into()));
        }
        if self.min_leaf < 1 {
            return Err(Error::InvalidConfig("min_leaf must be >= 1".into()));
        }
        if self.laplace_alpha < 0.0 {
            return Err(Error::InvalidConfig("laplace_alpha must be >= 0".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: u32,
        /// Samples with `x[feature] <= threshold` go left.
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Class histogram over the forest's ordered class list; sums to 1.
        hist: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_hist(&self, x: &[f64]) -> &[f64] {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { hist } => return hist,
                Node::Split { feature, threshold, left, right } => {
                    idx = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Ordered class labels; histogram entries align with this list.
    pub classes: Vec<u32>,
    pub feature_dim: usize,
}

/// Train a forest on row-major features and per-row labels.
pub fn train_forest(
    features: ArrayView2<'_, f64>,
    labels: &[u32],
    cfg: &ForestConfig,
) -> Result<Forest> {
    cfg.validate()?;
    let n = features.nrows();
    let m = features.ncols();
    if n != labels.len() {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
    }
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::DegenerateLabelSet(classes.len()));
    }
    let class_index: std::collections::HashMap<u32, usize> =
        classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let y: Vec<usize> = labels.iter().map(|l| class_index[l]).collect();
    let mtry = cfg
        .features_per_split
        .unwrap_or_else(|| (m as f64).sqrt().ceil() as usize)
        .clamp(1, m);

    let trees: Vec<Tree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &format!("tree/{t}")));
            let indices: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(features, &y, classes.len(), indices, mtry, cfg, &mut rng)
        })
        .collect();

    Ok(Forest { trees, classes, feature_dim: m })
}

fn grow_tree(
    features: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    indices: Vec<usize>,
    mtry: usize,
    cfg: &ForestConfig,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut nodes = Vec::new();
    // Worklist of (node slot, sample indices, depth); children are appended
    // and patched into their parent slot.
    let mut stack = vec![(usize::MAX, indices, 0usize, false)];
    while let Some((parent, idx, depth, is_right)) = stack.pop() {
        let slot = nodes.len();
        if parent != usize::MAX {
            if let Node::Split { left, right, .. } = &mut nodes[parent] {
                if is_right {
                    *right = slot as u32;
                } else {
                    *left = slot as u32;
                }
            }
        }
        let split = find_split(features, y, n_classes, &idx, mtry, cfg, rng, depth);
        match split {
            Some((feature, threshold)) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
                    .iter()
                    .partition(|&&i| features[(i, feature)] <= threshold);
                nodes.push(Node::Split {
                    feature: feature as u32,
                    threshold,
                    left: 0,
                    right: 0,
                });
                // Right first so the left subtree lands at slot + 1.
                stack.push((slot, right_idx, depth + 1, true));
                stack.push((slot, left_idx, depth + 1, false));
            }
            None => {
                nodes.push(Node::Leaf {
                    hist: leaf_histogram(y, &idx, n_classes, cfg.laplace_alpha),
                });
            }
        }
    }
    Tree { nodes }
}

fn leaf_histogram(y: &[usize], idx: &[usize], n_classes: usize, alpha: f64) -> Vec<f64> {
    let mut counts = vec![0.0f64; n_classes];
    for &i in idx {
        counts[y[i]] += 1.0;
    }
    let total = idx.len() as f64 + alpha * n_classes as f64;
    counts.iter().map(|c| (c + alpha) / total).collect()
}

/// Best (feature, threshold) by Gini impurity, or None if the node should
/// become a leaf. Ties resolve to the lowest feature index, then the lowest
/// threshold, via the ascending scan order.
#[allow(clippy::too_many_arguments)]
fn find_split(
    features: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    idx: &[usize],
    mtry: usize,
    cfg: &ForestConfig,
    rng: &mut ChaCha8Rng,
    depth: usize,
) -> Option<(usize, f64)> {
    let n = idx.len();
    if n < 2 * cfg.min_leaf || n < 2 {
        return None;
    }
    if let Some(max_depth) = cfg.max_depth {
        if depth >= max_depth {
            return None;
        }
    }
    let first = y[idx[0]];
    if idx.iter().all(|&i| y[i] == first) {
        return None;
    }

    let m = features.ncols();
    let mut candidates: Vec<usize> = (0..m).collect();
    candidates.shuffle(rng);
    candidates.truncate(mtry);
    candidates.sort_unstable();

    let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut left_counts = vec![0usize; n_classes];
    let mut right_counts = vec![0usize; n_classes];
    for &f in &candidates {
        pairs.clear();
        pairs.extend(idx.iter().map(|&i| (features[(i, f)], y[i])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        left_counts.iter_mut().for_each(|c| *c = 0);
        right_counts.iter_mut().for_each(|c| *c = 0);
        for &(_, c) in pairs.iter() {
            right_counts[c] += 1;
        }
        let mut ss_left = 0.0f64;
        let mut ss_right: f64 = right_counts.iter().map(|&c| (c * c) as f64).sum();

        for i in 1..n {
            let c = pairs[i - 1].1;
            // Move sample i-1 from right to left, updating both sums of
            // squared counts incrementally.
            ss_left += (2 * left_counts[c] + 1) as f64;
            ss_right -= (2 * right_counts[c] - 1) as f64;
            left_counts[c] += 1;
            right_counts[c] -= 1;

            if pairs[i - 1].0 == pairs[i].0 {
                continue;
            }
            if i < cfg.min_leaf || n - i < cfg.min_leaf {
                continue;
            }
            // Minimizing weighted Gini is equivalent to maximizing
            // ss_left/n_left + ss_right/n_right.
            let score = ss_left / i as f64 + ss_right / (n - i) as f64;
            let improves = match &best {
                None => true,
                Some((s, _, _)) => score > *s,
            };
            if improves {
                best = Some((score, f, pairs[i - 1].0));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

impl Forest {
    /// Class distribution for one sample: the average of the leaf
    /// histograms selected across all trees.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        let mut acc = vec![0.0f64; self.classes.len()];
        for tree in &self.trees {
            for (a, h) in acc.iter_mut().zip(tree.leaf_hist(x)) {
                *a += h;
            }
        }
        let inv = 1.0 / self.trees.len() as f64;
        for a in &mut acc {
            *a *= inv;
        }
        Ok(acc)
    }

    /// Most probable class label; ties resolve to the earlier class.
    pub fn predict(&self, x: &[f64]) -> Result<u32> {
        let proba = self.predict_proba(x)?;
        let mut best = 0usize;
        for (i, &p) in proba.iter().enumerate() {
            if p > proba[best] {
                best = i;
            }
        }
        Ok(self.classes[best])
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(FOREST_MAGIC)?;
        w.write_all(&FOREST_VERSION.to_le_bytes())?;
        w.write_all(&(self.feature_dim as u32).to_le_bytes())?;
        w.write_all(&(self.classes.len() as u32).to_le_bytes())?;
        for &c in &self.classes {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&(self.trees.len() as u32).to_le_bytes())?;
        for tree in &self.trees {
            w.write_all(&(tree.nodes.len() as u32).to_le_bytes())?;
            for node in &tree.nodes {
                match node {
                    Node::Split { feature, threshold, left, right } => {
                        w.write_all(&[0u8])?;
                        w.write_all(&feature.to_le_bytes())?;
                        w.write_all(&threshold.to_le_bytes())?;
                        w.write_all(&left.to_le_bytes())?;
                        w.write_all(&right.to_le_bytes())?;
                    }
                    Node::Leaf { hist } => {
                        w.write_all(&[1u8])?;
                        for &h in hist {
                            w.write_all(&h.to_le_bytes())?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Forest> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FOREST_MAGIC {
            return Err(Error::ModelFormat(format!("bad forest magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != FOREST_VERSION {
            return Err(Error::ModelFormat(format!("unsupported forest version {version}")));
        }
        let feature_dim = read_u32(r)? as usize;
        let n_classes = read_u32(r)? as usize;
        let mut classes = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            classes.push(read_u32(r)?);
        }
        let n_trees = read_u32(r)? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = read_u32(r)? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let mut kind = [0u8; 1];
                r.read_exact(&mut kind)?;
                match kind[0] {
                    0 => nodes.push(Node::Split {
                        feature: read_u32(r)?,
                        threshold: read_f64(r)?,
                        left: read_u32(r)?,
                        right: read_u32(r)?,
                    }),
                    1 => {
                        let mut hist = Vec::with_capacity(n_classes);
                        for _ in 0..n_classes {
                            hist.push(read_f64(r)?);
                        }
                        nodes.push(Node::Leaf { hist });
                    }
                    k => {
                        return Err(Error::ModelFormat(format!("bad node kind {k}")));
                    }
                }
            }
            trees.push(Tree { nodes });
        }
        Ok(Forest { trees, classes, feature_dim })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Forest> {
        Forest::read_from(&mut std::io::Cursor::new(bytes))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
