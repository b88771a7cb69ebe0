//! Experiment orchestration.
//!
//! `run_experiment` executes the full cross-validated protocol for one
//! system: per held-out fold, label trees and embedding models are trained
//! on the remaining folds (with cross-validated descriptor extraction for
//! the SVM systems), the fold is scored, and the per-class / overall
//! accuracies are aggregated. Completed folds are checkpointed as CSV
//! prediction files in the work directory and skipped on rerun.

use crate::cnn::{predict_cnn, train_cnn, PoolingMode};
use crate::dsp::{
    segment_features, segment_layout, spectral_subtract, AudioSignal, Channel, NoiseVariant,
    SegmentMatrix,
};
use crate::embed::{
    average_pool, circular_pad, crossval_embed_training_set, stack_channels,
    train_embedding_model, EmbeddingModel, LteImage, MultiChannelImage, RecordingSegments,
};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::kernelbase::{
    build_gram, gram_row, predict_svm, train_ovo_svm, tune_cost, FusionSpec,
};
use crate::labeltree::{build_label_tree, LabelTree};
use crate::pipeline::config::ExperimentConfig;
use crate::pipeline::manifest::{DatasetManifest, ManifestEntry};
use crate::pipeline::report::{evaluate, EvaluationReport, Prediction};
use crate::pipeline::tensor::TensorFile;
use crate::seed::derive_seed;
use ndarray::Array2;
use rayon::prelude::*;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

/// The seven runnable systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Lte1,
    Lte2,
    Lte3,
    LtePlus,
    CnnMax,
    CnnMean,
    CnnMix,
}

impl SystemKind {
    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Lte1 => "lte1",
            SystemKind::Lte2 => "lte2",
            SystemKind::Lte3 => "lte3",
            SystemKind::LtePlus => "lte+",
            SystemKind::CnnMax => "cnn-max",
            SystemKind::CnnMean => "cnn-mean",
            SystemKind::CnnMix => "cnn-mix",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lte1" => Ok(SystemKind::Lte1),
            "lte2" => Ok(SystemKind::Lte2),
            "lte3" => Ok(SystemKind::Lte3),
            "lte+" | "lteplus" | "lte-plus" => Ok(SystemKind::LtePlus),
            "cnn-max" => Ok(SystemKind::CnnMax),
            "cnn-mean" => Ok(SystemKind::CnnMean),
            "cnn-mix" => Ok(SystemKind::CnnMix),
            other => Err(Error::InvalidConfig(format!("unknown system {other:?}"))),
        }
    }

    /// Channels the system consumes, in canonical order.
    pub fn channels(&self) -> Vec<Channel> {
        match self {
            SystemKind::Lte1 => vec![Channel::RAW[0]],
            SystemKind::Lte2 => vec![Channel::RAW[1]],
            SystemKind::Lte3 => vec![Channel::RAW[2]],
            SystemKind::LtePlus => Channel::RAW.to_vec(),
            _ => Channel::ALL.to_vec(),
        }
    }

    pub fn is_cnn(&self) -> bool {
        matches!(self, SystemKind::CnnMax | SystemKind::CnnMean | SystemKind::CnnMix)
    }

    pub fn pooling(&self) -> Option<PoolingMode> {
        match self {
            SystemKind::CnnMax => Some(PoolingMode::Max),
            SystemKind::CnnMean => Some(PoolingMode::Mean),
            SystemKind::CnnMix => Some(PoolingMode::Mix),
            _ => None,
        }
    }
}

/// Consecutive samples at or above this level count as clipping.
const CLIP_LEVEL: f64 = 0.999;
const CLIP_RUN: usize = 8;

/// Load a recording, zero out non-finite samples, and report the segment
/// indices contaminated by non-finite or clipped content.
pub fn load_and_screen(path: &Path, resample: bool) -> Result<(AudioSignal, Vec<usize>)> {
    let (raw, rate) = crate::dsp::wav::read_wav_raw(path)?;
    let samples = if rate == crate::dsp::EXPECTED_SAMPLE_RATE {
        raw
    } else if resample {
        crate::dsp::wav::resample_linear(&raw, rate, crate::dsp::EXPECTED_SAMPLE_RATE)
    } else {
        return Err(Error::SampleRate {
            expected: crate::dsp::EXPECTED_SAMPLE_RATE,
            got: rate,
        });
    };
    let (clean, bad_segments) = screen_samples(samples, crate::dsp::EXPECTED_SAMPLE_RATE)?;
    Ok((AudioSignal::new(clean, crate::dsp::EXPECTED_SAMPLE_RATE)?, bad_segments))
}

/// Zero non-finite samples and map erroneous spans onto segment indices.
pub fn screen_samples(mut samples: Vec<f64>, sample_rate: u32) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut bad_samples: Vec<usize> = Vec::new();
    for (i, s) in samples.iter_mut().enumerate() {
        if !s.is_finite() {
            bad_samples.push(i);
            *s = 0.0;
        }
    }
    // Sustained full-scale runs indicate clipping.
    let mut run_start = None;
    for i in 0..=samples.len() {
        let clipped = i < samples.len() && samples[i].abs() >= CLIP_LEVEL;
        match (clipped, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(start)) => {
                if i - start >= CLIP_RUN {
                    bad_samples.extend(start..i);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    if bad_samples.is_empty() {
        return Ok((samples, Vec::new()));
    }
    bad_samples.sort_unstable();
    bad_samples.dedup();
    let layout = match segment_layout(samples.len(), sample_rate) {
        Ok(l) => l,
        // Too short for segments: nothing to flag at segment granularity.
        Err(_) => return Ok((samples, Vec::new())),
    };
    let mut bad_segments = Vec::new();
    for t in 0..layout.count {
        let lo = t * layout.seg_hop;
        let hi = lo + layout.seg_len;
        let hit = bad_samples.partition_point(|&i| i < lo) < bad_samples.partition_point(|&i| i < hi);
        if hit {
            bad_segments.push(t);
        }
    }
    Ok((samples, bad_segments))
}

/// Per-recording, per-channel segment matrices for one dataset.
pub struct FeatureStore {
    map: HashMap<(String, Channel), SegmentMatrix>,
    /// Class id per recording id.
    labels: HashMap<String, u32>,
}

impl FeatureStore {
    pub fn get(&self, id: &str, channel: Channel) -> Result<&SegmentMatrix> {
        self.map
            .get(&(id.to_string(), channel))
            .ok_or_else(|| Error::Manifest(format!("no features for {id}/{}", channel.tag())))
    }

    pub fn label(&self, id: &str) -> u32 {
        self.labels[id]
    }
}

fn feature_cache_path(workdir: &Path, id: &str, channel: Channel) -> PathBuf {
    workdir.join("features").join(format!("{id}.{}.lteb", channel.tag()))
}

/// Extract (or reload from the work directory) the segment matrices of
/// every manifest entry for the requested channels. Erroneous segments
/// (manifest-listed plus automatically detected) are dropped here.
pub fn build_feature_store(
    manifest: &DatasetManifest,
    channels: &[Channel],
    cfg: &ExperimentConfig,
    workdir: Option<&Path>,
) -> Result<FeatureStore> {
    if let Some(dir) = workdir {
        std::fs::create_dir_all(dir.join("features"))?;
    }
    let features: Vec<((String, Channel), SegmentMatrix)> = manifest
        .entries
        .par_iter()
        .map(|entry| extract_entry(entry, channels, cfg, workdir))
        .collect::<Result<Vec<Vec<((String, Channel), SegmentMatrix)>>>>()?
        .into_iter()
        .flatten()
        .collect();
    let labels = manifest
        .entries
        .iter()
        .map(|e| {
            (
                e.id.clone(),
                manifest.class_id(&e.label).expect("label in class list"),
            )
        })
        .collect();
    Ok(FeatureStore { map: features.into_iter().collect(), labels })
}

fn extract_entry(
    entry: &ManifestEntry,
    channels: &[Channel],
    cfg: &ExperimentConfig,
    workdir: Option<&Path>,
) -> Result<Vec<((String, Channel), SegmentMatrix)>> {
    let mut out = Vec::with_capacity(channels.len());
    let mut missing: Vec<Channel> = Vec::new();
    if let Some(dir) = workdir {
        for &channel in channels {
            let path = feature_cache_path(dir, &entry.id, channel);
            match TensorFile::load(&path) {
                Ok(tf) => out.push((
                    (entry.id.clone(), channel),
                    SegmentMatrix { values: tf.to_array2()?, channel },
                )),
                Err(_) => missing.push(channel),
            }
        }
    } else {
        missing = channels.to_vec();
    }
    if missing.is_empty() {
        return Ok(out);
    }

    let (signal, mut bad_segments) = load_and_screen(&entry.path, cfg.resample)?;
    bad_segments.extend(entry.drop_segments.iter().copied());
    bad_segments.sort_unstable();
    bad_segments.dedup();
    let denoised = if missing.iter().any(|c| c.variant == NoiseVariant::Denoised) {
        Some(spectral_subtract(&signal, &cfg.denoise)?)
    } else {
        None
    };
    for &channel in &missing {
        let source = match channel.variant {
            NoiseVariant::Raw => &signal,
            NoiseVariant::Denoised => denoised.as_ref().expect("denoised on demand"),
        };
        let mut seg = segment_features(source, channel)?;
        if !bad_segments.is_empty() {
            seg = seg.drop_segments(&bad_segments)?;
        }
        if let Some(dir) = workdir {
            let meta = serde_json::json!({
                "recording": entry.id,
                "label": entry.label,
                "channel": channel.tag(),
                "feature_dim": seg.feature_dim(),
                "segments": seg.num_segments(),
                "dropped_segments": bad_segments,
            });
            TensorFile::from_array2(&seg.values, meta)
                .save(&feature_cache_path(dir, &entry.id, channel))?;
        }
        out.push(((entry.id.clone(), channel), seg));
    }
    Ok(out)
}

/// Segment-level training set: all segments of the given entries, each
/// labeled with its recording's class.
fn segment_dataset(
    entries: &[&ManifestEntry],
    store: &FeatureStore,
    channel: Channel,
) -> Result<(Array2<f64>, Vec<u32>)> {
    let mut total = 0usize;
    let mut dim = 0usize;
    for e in entries {
        let seg = store.get(&e.id, channel)?;
        total += seg.num_segments();
        dim = seg.feature_dim();
    }
    let mut features = Array2::zeros((total, dim));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0usize;
    for e in entries {
        let seg = store.get(&e.id, channel)?;
        for t in 0..seg.num_segments() {
            for d in 0..dim {
                features[(row, d)] = seg.values[(d, t)];
            }
            labels.push(store.label(&e.id));
            row += 1;
        }
    }
    Ok((features, labels))
}

/// Label tree plus final embedding model for one channel of one fold.
struct ChannelModels {
    tree: LabelTree,
    model: EmbeddingModel,
}

fn train_channel_models(
    train: &[&ManifestEntry],
    store: &FeatureStore,
    channel: Channel,
    cfg: &ExperimentConfig,
    fold: u32,
    shared: Option<&LabelTree>,
) -> Result<ChannelModels> {
    let (features, labels) = segment_dataset(train, store, channel)?;
    let tag = channel.tag();
    let tree = match shared {
        Some(t) => t.clone(),
        None => {
            let forest_cfg = ForestConfig {
                rng_seed: derive_seed(cfg.seed, &format!("fold{fold}/{tag}/tree")),
                ..cfg.forest.clone()
            };
            build_label_tree(
                features.view(),
                &labels,
                &forest_cfg,
                cfg.tree_mode,
                derive_seed(cfg.seed, &format!("fold{fold}/{tag}/partition")),
            )?
        }
    };
    let embed_cfg = ForestConfig {
        rng_seed: derive_seed(cfg.seed, &format!("fold{fold}/{tag}/embed")),
        ..cfg.forest.clone()
    };
    let model = train_embedding_model(&tree, features.view(), &labels, &embed_cfg, channel)?;
    Ok(ChannelModels { tree, model })
}

fn recordings_for(
    entries: &[&ManifestEntry],
    store: &FeatureStore,
    channel: Channel,
) -> Result<Vec<RecordingSegments>> {
    entries
        .iter()
        .map(|e| {
            Ok(RecordingSegments {
                id: e.id.clone(),
                label: store.label(&e.id),
                segments: store.get(&e.id, channel)?.clone(),
            })
        })
        .collect()
}

fn svm_fold(
    manifest: &DatasetManifest,
    store: &FeatureStore,
    system: SystemKind,
    cfg: &ExperimentConfig,
    fold: u32,
) -> Result<Vec<Prediction>> {
    let (train, eval) = manifest.fold_split(fold);
    let channels = system.channels();

    let mut shared_tree: Option<LabelTree> = None;
    let mut train_descriptors: Vec<Vec<Vec<f64>>> = Vec::with_capacity(channels.len());
    let mut eval_descriptors: Vec<Vec<Vec<f64>>> = Vec::with_capacity(channels.len());
    for &channel in &channels {
        let models = train_channel_models(
            &train,
            store,
            channel,
            cfg,
            fold,
            shared_tree.as_ref(),
        )?;
        if cfg.shared_tree && shared_tree.is_none() {
            shared_tree = Some(models.tree.clone());
        }
        // Descriptor extraction for training instances is cross-validated
        // so no recording is embedded by classifiers that saw it.
        let train_recs = recordings_for(&train, store, channel)?;
        let k = cfg.descriptor_folds.min(train_recs.len());
        let embed_cfg = ForestConfig {
            rng_seed: derive_seed(cfg.seed, &format!("fold{fold}/{}/descriptor", channel.tag())),
            ..cfg.forest.clone()
        };
        let crossval = crossval_embed_training_set(
            &models.tree,
            &train_recs,
            k,
            &embed_cfg,
            derive_seed(cfg.seed, &format!("fold{fold}/{}/descriptor-folds", channel.tag())),
        )?;
        train_descriptors.push(
            crossval
                .images
                .iter()
                .map(|img| average_pool(img).to_vec())
                .collect(),
        );
        let eval_vecs = eval
            .iter()
            .map(|e| {
                let img = models.model.lte_image(store.get(&e.id, channel)?)?;
                Ok(average_pool(&img).to_vec())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        eval_descriptors.push(eval_vecs);
    }

    let spec = FusionSpec::from_training(&train_descriptors)?;
    let gram = build_gram(&train_descriptors, &spec)?;
    let train_labels: Vec<u32> = train.iter().map(|e| store.label(&e.id)).collect();
    let cost = tune_cost(
        &gram,
        &train_labels,
        &cfg.svm.cost_grid,
        cfg.svm.tune_folds,
        cfg.svm.tol,
        cfg.svm.max_iter,
        derive_seed(cfg.seed, &format!("fold{fold}/svm-tune")),
    )?;
    let model = train_ovo_svm(&gram, &train_labels, cost, cfg.svm.tol, cfg.svm.max_iter)?;

    eval.iter()
        .enumerate()
        .map(|(i, e)| {
            let probe: Vec<&[f64]> = eval_descriptors
                .iter()
                .map(|per_channel| per_channel[i].as_slice())
                .collect();
            let row = gram_row(&train_descriptors, &probe, &spec)?;
            let predicted = predict_svm(&model, &row)?;
            Ok(Prediction {
                id: e.id.clone(),
                truth: e.label.clone(),
                predicted: manifest.class_name(predicted).to_string(),
                fold,
            })
        })
        .collect()
}

/// Build the padded multi-channel image of one recording from per-channel
/// embedding models.
pub fn multi_channel_image(
    id: &str,
    store: &FeatureStore,
    models: &[EmbeddingModel],
    pad_t: usize,
) -> Result<MultiChannelImage> {
    let images: Vec<LteImage> = models
        .iter()
        .map(|m| {
            let seg = store.get(id, m.channel)?;
            circular_pad(&m.lte_image(seg)?, pad_t)
        })
        .collect::<Result<_>>()?;
    stack_channels(&images)
}

fn cnn_fold(
    manifest: &DatasetManifest,
    store: &FeatureStore,
    system: SystemKind,
    cfg: &ExperimentConfig,
    fold: u32,
) -> Result<Vec<Prediction>> {
    let (train, eval) = manifest.fold_split(fold);
    let channels = system.channels();

    let mut shared_tree: Option<LabelTree> = None;
    let mut models: Vec<EmbeddingModel> = Vec::with_capacity(channels.len());
    for &channel in &channels {
        let cm = train_channel_models(&train, store, channel, cfg, fold, shared_tree.as_ref())?;
        if cfg.shared_tree && shared_tree.is_none() {
            shared_tree = Some(cm.tree.clone());
        }
        models.push(cm.model);
    }

    let train_images: Vec<MultiChannelImage> = train
        .par_iter()
        .map(|e| multi_channel_image(&e.id, store, &models, cfg.pad_t))
        .collect::<Result<_>>()?;
    let train_labels: Vec<u32> = train.iter().map(|e| store.label(&e.id)).collect();

    let cnn_cfg = crate::cnn::CnnConfig {
        pooling: system.pooling().expect("cnn system"),
        rng_seed: derive_seed(cfg.seed, &format!("fold{fold}/cnn")),
        ..cfg.cnn.clone()
    };
    let (model, _losses) = train_cnn(&train_images, &train_labels, &cnn_cfg)?;

    eval.iter()
        .map(|e| {
            let image = multi_channel_image(&e.id, store, &models, cfg.pad_t)?;
            let (predicted, _) = predict_cnn(&model, &image)?;
            Ok(Prediction {
                id: e.id.clone(),
                truth: e.label.clone(),
                predicted: manifest.class_name(predicted).to_string(),
                fold,
            })
        })
        .collect()
}

fn checkpoint_path(workdir: &Path, system: SystemKind, fold: u32) -> PathBuf {
    workdir
        .join("preds")
        .join(system.name())
        .join(format!("fold{fold}.csv"))
}

fn load_checkpoint(path: &Path) -> Option<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return None;
        }
        out.push(Prediction {
            id: fields[0].to_string(),
            truth: fields[1].to_string(),
            predicted: fields[2].to_string(),
            fold: fields[3].parse().ok()?,
        });
    }
    Some(out)
}

fn save_checkpoint(path: &Path, preds: &[Prediction]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = String::from("id,truth,predicted,fold\n");
    for p in preds {
        text.push_str(&format!("{},{},{},{}\n", p.id, p.truth, p.predicted, p.fold));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Run the cross-validated protocol for one system over all folds.
pub fn run_experiment(
    manifest: &DatasetManifest,
    system: SystemKind,
    cfg: &ExperimentConfig,
    workdir: Option<&Path>,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    let store = build_feature_store(manifest, &system.channels(), cfg, workdir)?;
    let mut predictions = Vec::new();
    for fold in 1..=manifest.num_folds() {
        let checkpoint = workdir.map(|d| checkpoint_path(d, system, fold));
        if let Some(preds) = checkpoint.as_deref().and_then(load_checkpoint) {
            log::info!("fold {fold}: reusing checkpointed predictions");
            predictions.extend(preds);
            continue;
        }
        let fold_preds = if system.is_cnn() {
            cnn_fold(manifest, &store, system, cfg, fold)?
        } else {
            svm_fold(manifest, &store, system, cfg, fold)?
        };
        if let Some(path) = &checkpoint {
            save_checkpoint(path, &fold_preds)?;
        }
        predictions.extend(fold_preds);
    }
    evaluate(&predictions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn system_parsing_round_trips() {
        for s in [
            SystemKind::Lte1,
            SystemKind::Lte2,
            SystemKind::Lte3,
            SystemKind::LtePlus,
            SystemKind::CnnMax,
            SystemKind::CnnMean,
            SystemKind::CnnMix,
        ] {
            assert_eq!(SystemKind::parse(s.name()).unwrap(), s);
        }
        assert!(SystemKind::parse("gmm").is_err());
        assert_eq!(SystemKind::parse("LTE+").unwrap(), SystemKind::LtePlus);
    }

    #[test]
    fn system_channel_sets() {
        assert_eq!(SystemKind::Lte1.channels().len(), 1);
        assert_eq!(SystemKind::LtePlus.channels().len(), 3);
        assert_eq!(SystemKind::CnnMix.channels().len(), 6);
        assert!(SystemKind::CnnMix.is_cnn());
        assert!(!SystemKind::LtePlus.is_cnn());
    }

    #[test]
    fn screening_flags_nonfinite_and_clipped_segments() {
        let fs = 44_100u32;
        let n = 2 * fs as usize; // 2 s -> 6 segments
        let mut samples = vec![0.01f64; n];
        // Non-finite sample inside segment 2's span only.
        samples[fs as usize + 8000] = f64::NAN; // 1.18 s
        // Clipped run inside the last segment's span.
        let clip_at = (1.6 * fs as f64) as usize;
        for s in samples.iter_mut().skip(clip_at).take(32) {
            *s = 1.0;
        }
        let (clean, bad) = screen_samples(samples, fs).unwrap();
        assert!(clean.iter().all(|x| x.is_finite()));
        // 1.18 s lies in segments with span covering it: t*0.25 <= 1.18 < t*0.25+0.5.
        assert!(bad.contains(&3));
        assert!(bad.contains(&4));
        // The clipped run at 1.6 s hits the trailing segments.
        assert!(bad.contains(&5));
        // Short clipped runs are tolerated.
        let mut ok = vec![0.5f64; n];
        ok[100] = 1.0;
        let (_, bad) = screen_samples(ok, fs).unwrap();
        assert!(bad.is_empty());
    }

    #[test]
    fn checkpoints_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds").join("x").join("fold1.csv");
        let preds = vec![Prediction {
            id: "r1".into(),
            truth: "park".into(),
            predicted: "bus".into(),
            fold: 1,
        }];
        save_checkpoint(&path, &preds).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].id, "r1");
        assert_eq!(back[0].predicted, "bus");
    }
}
