//! Label-tree embeddings.
//!
//! Each split node of a label tree carries a binary forest trained on all
//! samples whose labels fall in that node's label set (left part negative,
//! right part positive). A sample embeds as the concatenation of the
//! per-node (negative, positive) probabilities in pre-order:
//! Psi(x) = (psi_1^L, psi_1^R, ..., psi_{C-1}^L, psi_{C-1}^R), an
//! F = (C-1) x 2 vector. Embedding every column of a segment matrix yields
//! the F x T LTE image of a recording; six channels stack into the
//! P x F x T multi-channel image the networks consume.
//!
//! # Model file format
//!
//! `magic "LTEM" | version u32 | json_len u32 | json header | per split
//! node: blob_len u64 + forest record`. The JSON header carries the channel
//! tag and the label tree in its text form.

use crate::dsp::{Channel, SegmentMatrix};
use crate::error::{Error, Result};
use crate::forest::{train_forest, Forest, ForestConfig};
use crate::labeltree::{LabelTree, TreeNode};
use crate::seed::{derive_seed, derive_seed_from_ids};
use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};

const MODEL_MAGIC: &[u8; 4] = b"LTEM";
const MODEL_VERSION: u32 = 1;

/// Default time extent images are padded to (118 segments = 30 s).
pub const TARGET_T: usize = 118;

/// A label tree plus one binary forest per split node.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    pub tree: LabelTree,
    /// Indexed by `split_index`; classes are [0 (negative/left), 1 (positive/right)].
    pub node_classifiers: Vec<Forest>,
    pub channel: Channel,
}

/// F x T matrix of segment embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LteImage {
    pub values: Array2<f64>,
    pub channel: Channel,
}

impl LteImage {
    pub fn f_dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn t_dim(&self) -> usize {
        self.values.ncols()
    }
}

/// P x F x T tensor of the six stacked channel images.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelImage {
    pub values: Array3<f64>,
}

impl MultiChannelImage {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn f_dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn t_dim(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Train one binary forest per split node, on the whole sample set of that
/// node's label subset.
pub fn train_embedding_model(
    tree: &LabelTree,
    features: ArrayView2<'_, f64>,
    labels: &[u32],
    cfg: &ForestConfig,
    channel: Channel,
) -> Result<EmbeddingModel> {
    let splits = tree.split_nodes();
    let mut node_classifiers = Vec::with_capacity(splits.len());
    for node in splits {
        let (node_labels, left_labels, split_index) = match node {
            TreeNode::Split { labels, left_labels, split_index, .. } => {
                (labels, left_labels, *split_index)
            }
            TreeNode::Leaf { .. } => unreachable!("split_nodes yields splits"),
        };
        let rows: Vec<usize> = (0..labels.len())
            .filter(|&i| node_labels.contains(&labels[i]))
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyNodeSamples(node_labels.clone()));
        }
        let sub = Array2::from_shape_fn((rows.len(), features.ncols()), |(r, c)| {
            features[(rows[r], c)]
        });
        let binary: Vec<u32> = rows
            .iter()
            .map(|&r| u32::from(!left_labels.contains(&labels[r])))
            .collect();
        let node_cfg = ForestConfig {
            rng_seed: derive_seed(cfg.rng_seed, &format!("embed-node/{split_index}")),
            ..cfg.clone()
        };
        node_classifiers.push(train_forest(sub.view(), &binary, &node_cfg)?);
    }
    Ok(EmbeddingModel { tree: tree.clone(), node_classifiers, channel })
}

impl EmbeddingModel {
    /// Embedding dimensionality F = (C - 1) x 2.
    pub fn f_dim(&self) -> usize {
        self.node_classifiers.len() * 2
    }

    pub fn feature_dim(&self) -> usize {
        self.node_classifiers
            .first()
            .map(|f| f.feature_dim)
            .unwrap_or(0)
    }

    /// Map one segment feature vector into the meta-class likelihood space.
    pub fn embed_segment(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut psi = Vec::with_capacity(self.f_dim());
        for forest in &self.node_classifiers {
            let p = forest.predict_proba(x)?;
            psi.push(p[0]);
            psi.push(p[1]);
        }
        Ok(psi)
    }

    /// Embed every segment column into an F x T LTE image.
    pub fn lte_image(&self, seg: &SegmentMatrix) -> Result<LteImage> {
        if seg.channel != self.channel {
            return Err(Error::ChannelMismatch {
                expected: self.channel.tag(),
                got: seg.channel.tag(),
            });
        }
        if seg.feature_dim() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                got: seg.feature_dim(),
            });
        }
        let t = seg.num_segments();
        let mut values = Array2::zeros((self.f_dim(), t));
        let mut column = vec![0.0; seg.feature_dim()];
        for ti in 0..t {
            for (d, slot) in column.iter_mut().enumerate() {
                *slot = seg.values[(d, ti)];
            }
            let psi = self.embed_segment(&column)?;
            for (f, &v) in psi.iter().enumerate() {
                values[(f, ti)] = v;
            }
        }
        Ok(LteImage { values, channel: self.channel })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::json!({
            "channel": self.channel.tag(),
            "tree": self.tree.to_text(),
            "nodes": self.node_classifiers.len(),
        });
        let header_bytes = serde_json::to_vec(&header)?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for forest in &self.node_classifiers {
            let blob = forest.to_bytes();
            w.write_all(&(blob.len() as u64).to_le_bytes())?;
            w.write_all(&blob)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<EmbeddingModel> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::ModelFormat(format!("bad embedding model magic {magic:?}")));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!("unsupported model version {version}")));
        }
        r.read_exact(&mut u32buf)?;
        let header_len = u32::from_le_bytes(u32buf) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: serde_json::Value = serde_json::from_slice(&header_bytes)?;
        let channel = Channel::parse(
            header["channel"]
                .as_str()
                .ok_or_else(|| Error::ModelFormat("missing channel".into()))?,
        )?;
        let tree = LabelTree::from_text(
            header["tree"]
                .as_str()
                .ok_or_else(|| Error::ModelFormat("missing tree".into()))?,
        )?;
        let n_nodes = header["nodes"]
            .as_u64()
            .ok_or_else(|| Error::ModelFormat("missing node count".into()))?
            as usize;
        let mut node_classifiers = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let mut u64buf = [0u8; 8];
            r.read_exact(&mut u64buf)?;
            let len = u64::from_le_bytes(u64buf) as usize;
            let mut blob = vec![0u8; len];
            r.read_exact(&mut blob)?;
            node_classifiers.push(Forest::from_bytes(&blob)?);
        }
        if n_nodes != tree.num_splits() {
            return Err(Error::ModelFormat(format!(
                "model has {n_nodes} classifiers for {} split nodes",
                tree.num_splits()
            )));
        }
        Ok(EmbeddingModel { tree, node_classifiers, channel })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)
    }

    pub fn load(path: &std::path::Path) -> Result<EmbeddingModel> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        EmbeddingModel::read_from(&mut file)
    }
}

/// Row-wise arithmetic mean over time: the global F-vector of a recording.
pub fn average_pool(img: &LteImage) -> Array1<f64> {
    let t = img.t_dim() as f64;
    img.values.sum_axis(ndarray::Axis(1)) / t
}

/// Extend an image to `target_t` columns by cyclically repeating columns
/// 0, 1, ... after the original content.
pub fn circular_pad(img: &LteImage, target_t: usize) -> Result<LteImage> {
    let t = img.t_dim();
    if t > target_t {
        return Err(Error::ImageTooLong { got: t, target: target_t });
    }
    if t == target_t {
        return Ok(img.clone());
    }
    let mut values = Array2::zeros((img.f_dim(), target_t));
    for ti in 0..target_t {
        values.column_mut(ti).assign(&img.values.column(ti % t));
    }
    Ok(LteImage { values, channel: img.channel })
}

/// Stack the six channel images (canonical order) into a P x F x T tensor.
pub fn stack_channels(images: &[LteImage]) -> Result<MultiChannelImage> {
    if images.len() != Channel::ALL.len() {
        return Err(Error::ChannelStack(format!(
            "expected {} channel images, got {}",
            Channel::ALL.len(),
            images.len()
        )));
    }
    for (img, expected) in images.iter().zip(Channel::ALL.iter()) {
        if img.channel != *expected {
            return Err(Error::ChannelStack(format!(
                "channel order mismatch: expected {}, got {}",
                expected.tag(),
                img.channel.tag()
            )));
        }
    }
    let f = images[0].f_dim();
    let t = images[0].t_dim();
    for img in images {
        if img.f_dim() != f || img.t_dim() != t {
            return Err(Error::ChannelStack(format!(
                "shape mismatch: {}x{} vs {f}x{t}",
                img.f_dim(),
                img.t_dim()
            )));
        }
    }
    let mut values = Array3::zeros((images.len(), f, t));
    for (p, img) in images.iter().enumerate() {
        values.index_axis_mut(ndarray::Axis(0), p).assign(&img.values);
    }
    Ok(MultiChannelImage { values })
}

/// One recording's segments and class label.
#[derive(Debug, Clone)]
pub struct RecordingSegments {
    pub id: String,
    pub label: u32,
    pub segments: SegmentMatrix,
}

/// Cross-validated embeddings of a training set.
#[derive(Debug)]
pub struct CrossvalEmbeddings {
    /// Aligned with the input recordings.
    pub images: Vec<LteImage>,
    /// Fold assignment per recording (0-based).
    pub folds: Vec<usize>,
}

/// Embed every training recording without leaking its own segments into
/// the model that embeds it.
///
/// Recordings are split into `k` seeded stratified folds; the embeddings of
/// fold f come from a model trained on the segments of the other k-1 folds.
pub fn crossval_embed_training_set(
    tree: &LabelTree,
    recordings: &[RecordingSegments],
    k: usize,
    cfg: &ForestConfig,
    seed: u64,
) -> Result<CrossvalEmbeddings> {
    let n = recordings.len();
    if k < 2 || k > n {
        return Err(Error::InvalidConfig(format!(
            "descriptor folds must satisfy 2 <= k <= {n}, got {k}"
        )));
    }
    let mut classes: Vec<u32> = recordings.iter().map(|r| r.label).collect();
    classes.sort_unstable();
    classes.dedup();
    for &class in &classes {
        let count = recordings.iter().filter(|r| r.label == class).count();
        if count < k {
            log::warn!(
                "class {class} has only {count} recordings for {k}-fold descriptor extraction"
            );
        }
    }

    // Seeded stratified fold assignment.
    let mut folds = vec![0usize; n];
    for &class in &classes {
        let mut members: Vec<usize> =
            (0..n).filter(|&i| recordings[i].label == class).collect();
        let stream = derive_seed_from_ids(seed, "descriptor-folds", &members);
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(stream));
        for (pos, &rec) in members.iter().enumerate() {
            folds[rec] = pos % k;
        }
    }

    let mut images: Vec<Option<LteImage>> = (0..n).map(|_| None).collect();
    for fold in 0..k {
        let train_rows: Vec<usize> = (0..n).filter(|&i| folds[i] != fold).collect();
        let eval_rows: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
        if eval_rows.is_empty() {
            continue;
        }
        for &class in &classes {
            if !train_rows.iter().any(|&i| recordings[i].label == class) {
                return Err(Error::ClassMissingFromSplit(class.to_string()));
            }
        }
        // Segment-level training set: every segment inherits its
        // recording's label.
        let dim = recordings[train_rows[0]].segments.feature_dim();
        let total_segments: usize = train_rows
            .iter()
            .map(|&i| recordings[i].segments.num_segments())
            .sum();
        let mut features = Array2::zeros((total_segments, dim));
        let mut labels = Vec::with_capacity(total_segments);
        let mut row = 0usize;
        for &i in &train_rows {
            let seg = &recordings[i].segments;
            for t in 0..seg.num_segments() {
                for d in 0..dim {
                    features[(row, d)] = seg.values[(d, t)];
                }
                labels.push(recordings[i].label);
                row += 1;
            }
        }
        let fold_cfg = ForestConfig {
            rng_seed: derive_seed(cfg.rng_seed, &format!("descriptor-fold/{fold}")),
            ..cfg.clone()
        };
        let model = train_embedding_model(
            tree,
            features.view(),
            &labels,
            &fold_cfg,
            recordings[train_rows[0]].segments.channel,
        )?;
        for &i in &eval_rows {
            images[i] = Some(model.lte_image(&recordings[i].segments)?);
        }
    }
    Ok(CrossvalEmbeddings {
        images: images.into_iter().map(|i| i.expect("every fold embedded")).collect(),
        folds,
    })
}
