//! Persistable end-to-end scene classifiers.
//!
//! A trained system is stored as a model directory:
//!
//! * SVM systems — `model.txt` (structured text header: channels, classes,
//!   cost, mean distances, one line per pairwise machine), `coef.bin`
//!   (binary dual coefficients), one `embed_<channel>.ltem` per channel,
//!   and one `descriptors_<channel>.lteb` tensor of the training
//!   descriptors the kernel rows are computed against.
//! * CNN systems — `cnn.lcnn`, per-channel `embed_<channel>.ltem`, and
//!   `meta.json`.

use crate::cnn::{predict_cnn, train_cnn, CnnModel};
use crate::dsp::{AudioSignal, Channel, NoiseVariant, SegmentMatrix};
use crate::embed::{average_pool, train_embedding_model, EmbeddingModel};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::kernelbase::{
    build_gram, gram_row, predict_svm, train_ovo_svm, tune_cost, FusionSpec, PairMachine,
    SvmModel,
};
use crate::labeltree::build_label_tree;
use crate::pipeline::config::ExperimentConfig;
use crate::pipeline::experiment::{
    build_feature_store, multi_channel_image, FeatureStore, SystemKind,
};
use crate::pipeline::manifest::{DatasetManifest, ManifestEntry};
use crate::pipeline::tensor::{TensorData, TensorFile};
use crate::seed::derive_seed;
use ndarray::Array2;
use std::io::{Read, Write};
use std::path::Path;

/// One-vs-one chi-square SVM over average-pooled embeddings.
pub struct SceneSvmModel {
    pub channels: Vec<Channel>,
    pub class_names: Vec<String>,
    pub embedding_models: Vec<EmbeddingModel>,
    pub spec: FusionSpec,
    /// Per channel, per training instance.
    pub train_descriptors: Vec<Vec<Vec<f64>>>,
    pub svm: SvmModel,
    pub resample: bool,
    pub denoise: crate::dsp::DenoiseConfig,
}

impl SceneSvmModel {
    /// Train on every manifest entry (no held-out fold); fold-aware
    /// evaluation lives in `run_experiment`.
    pub fn train(
        manifest: &DatasetManifest,
        system: SystemKind,
        cfg: &ExperimentConfig,
        workdir: Option<&Path>,
    ) -> Result<SceneSvmModel> {
        if system.is_cnn() {
            return Err(Error::InvalidConfig(format!(
                "{} is not an SVM system",
                system.name()
            )));
        }
        let channels = system.channels();
        let store = build_feature_store(manifest, &channels, cfg, workdir)?;
        let entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();

        let mut embedding_models = Vec::new();
        let mut train_descriptors = Vec::new();
        for &channel in &channels {
            let (features, labels) = segment_dataset(&entries, &store, channel)?;
            let tree_cfg = ForestConfig {
                rng_seed: derive_seed(cfg.seed, &format!("final/{}/tree", channel.tag())),
                ..cfg.forest.clone()
            };
            let tree = build_label_tree(
                features.view(),
                &labels,
                &tree_cfg,
                cfg.tree_mode,
                derive_seed(cfg.seed, &format!("final/{}/partition", channel.tag())),
            )?;
            let embed_cfg = ForestConfig {
                rng_seed: derive_seed(cfg.seed, &format!("final/{}/embed", channel.tag())),
                ..cfg.forest.clone()
            };
            let model =
                train_embedding_model(&tree, features.view(), &labels, &embed_cfg, channel)?;
            let descriptors: Vec<Vec<f64>> = entries
                .iter()
                .map(|e| {
                    let img = model.lte_image(store.get(&e.id, channel)?)?;
                    Ok(average_pool(&img).to_vec())
                })
                .collect::<Result<_>>()?;
            embedding_models.push(model);
            train_descriptors.push(descriptors);
        }

        let spec = FusionSpec::from_training(&train_descriptors)?;
        let gram = build_gram(&train_descriptors, &spec)?;
        let labels: Vec<u32> = entries.iter().map(|e| store.label(&e.id)).collect();
        let cost = tune_cost(
            &gram,
            &labels,
            &cfg.svm.cost_grid,
            cfg.svm.tune_folds,
            cfg.svm.tol,
            cfg.svm.max_iter,
            derive_seed(cfg.seed, "final/svm-tune"),
        )?;
        let svm = train_ovo_svm(&gram, &labels, cost, cfg.svm.tol, cfg.svm.max_iter)?;
        Ok(SceneSvmModel {
            channels,
            class_names: manifest.classes.clone(),
            embedding_models,
            spec,
            train_descriptors,
            svm,
            resample: cfg.resample,
            denoise: cfg.denoise.clone(),
        })
    }

    /// Classify one audio signal end to end.
    pub fn predict_signal(&self, signal: &AudioSignal) -> Result<String> {
        let denoised = if self.channels.iter().any(|c| c.variant == NoiseVariant::Denoised) {
            Some(crate::dsp::spectral_subtract(signal, &self.denoise)?)
        } else {
            None
        };
        let mut probe: Vec<Vec<f64>> = Vec::with_capacity(self.channels.len());
        for (channel, model) in self.channels.iter().zip(&self.embedding_models) {
            let source = match channel.variant {
                NoiseVariant::Raw => signal,
                NoiseVariant::Denoised => denoised.as_ref().expect("denoised prepared"),
            };
            let seg = crate::dsp::segment_features(source, *channel)?;
            probe.push(average_pool(&model.lte_image(&seg)?).to_vec());
        }
        let refs: Vec<&[f64]> = probe.iter().map(|v| v.as_slice()).collect();
        let row = gram_row(&self.train_descriptors, &refs, &self.spec)?;
        let class = predict_svm(&self.svm, &row)?;
        Ok(self.class_names[class as usize].clone())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut text = String::from("scene-svm v1\n");
        text.push_str(&format!(
            "channels: {}\n",
            self.channels.iter().map(|c| c.tag()).collect::<Vec<_>>().join(",")
        ));
        text.push_str(&format!("classes: {}\n", self.class_names.join(",")));
        text.push_str(&format!("cost: {}\n", self.svm.cost));
        text.push_str(&format!(
            "mean_distances: {}\n",
            self.spec
                .mean_distances
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        text.push_str(&format!("resample: {}\n", self.resample));
        text.push_str(&format!(
            "denoise: fft_len={} min_window={} bias_comp={} floor_beta={}\n",
            self.denoise.fft_len,
            self.denoise.min_window,
            self.denoise.bias_comp,
            self.denoise.floor_beta
        ));
        text.push_str(&format!("machines: {}\n", self.svm.machines.len()));
        for m in &self.svm.machines {
            text.push_str(&format!(
                "machine positive={} negative={} supports={} bias={}\n",
                m.positive,
                m.negative,
                m.support.len(),
                m.bias
            ));
        }
        std::fs::write(dir.join("model.txt"), text)?;

        let mut coef = Vec::new();
        for m in &self.svm.machines {
            for (&idx, &c) in m.support.iter().zip(&m.coef) {
                coef.write_all(&(idx as u32).to_le_bytes())?;
                coef.write_all(&c.to_le_bytes())?;
            }
        }
        std::fs::write(dir.join("coef.bin"), coef)?;

        for (channel, model) in self.channels.iter().zip(&self.embedding_models) {
            model.save(&dir.join(format!("embed_{}.ltem", channel.tag())))?;
        }
        for (channel, descriptors) in self.channels.iter().zip(&self.train_descriptors) {
            let n = descriptors.len();
            let f = descriptors.first().map(|d| d.len()).unwrap_or(0);
            let flat: Vec<f64> = descriptors.iter().flatten().copied().collect();
            TensorFile::new(
                vec![n, f],
                TensorData::F64(flat),
                serde_json::json!({"channel": channel.tag(), "kind": "train-descriptors"}),
            )?
            .save(&dir.join(format!("descriptors_{}.lteb", channel.tag())))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<SceneSvmModel> {
        let text = std::fs::read_to_string(dir.join("model.txt"))?;
        let mut lines = text.lines();
        if lines.next() != Some("scene-svm v1") {
            return Err(Error::ModelFormat("bad scene-svm header".into()));
        }
        let mut field = |prefix: &str| -> Result<String> {
            lines
                .next()
                .and_then(|l| l.strip_prefix(prefix))
                .map(|s| s.trim().to_string())
                .ok_or_else(|| Error::ModelFormat(format!("missing field {prefix:?}")))
        };
        let channels: Vec<Channel> = field("channels:")?
            .split(',')
            .map(Channel::parse)
            .collect::<Result<_>>()?;
        let class_names: Vec<String> =
            field("classes:")?.split(',').map(str::to_string).collect();
        let cost: f64 = field("cost:")?
            .parse()
            .map_err(|_| Error::ModelFormat("bad cost".into()))?;
        let mean_distances: Vec<f64> = field("mean_distances:")?
            .split(',')
            .map(|s| s.parse().map_err(|_| Error::ModelFormat("bad mean distance".into())))
            .collect::<Result<_>>()?;
        let resample: bool = field("resample:")?
            .parse()
            .map_err(|_| Error::ModelFormat("bad resample flag".into()))?;
        let denoise_line = field("denoise:")?;
        let denoise = parse_denoise_line(&denoise_line)?;
        let n_machines: usize = field("machines:")?
            .parse()
            .map_err(|_| Error::ModelFormat("bad machine count".into()))?;
        let mut machine_meta = Vec::with_capacity(n_machines);
        for _ in 0..n_machines {
            let line = lines
                .next()
                .ok_or_else(|| Error::ModelFormat("truncated machine list".into()))?;
            machine_meta.push(parse_machine_line(line)?);
        }

        let coef_bytes = std::fs::read(dir.join("coef.bin"))?;
        let mut cursor = std::io::Cursor::new(&coef_bytes);
        let mut machines = Vec::with_capacity(n_machines);
        for (positive, negative, supports, bias) in machine_meta {
            let mut support = Vec::with_capacity(supports);
            let mut coef = Vec::with_capacity(supports);
            for _ in 0..supports {
                let mut u32buf = [0u8; 4];
                cursor.read_exact(&mut u32buf)?;
                support.push(u32::from_le_bytes(u32buf) as usize);
                let mut f64buf = [0u8; 8];
                cursor.read_exact(&mut f64buf)?;
                coef.push(f64::from_le_bytes(f64buf));
            }
            machines.push(PairMachine { positive, negative, support, coef, bias });
        }

        let mut embedding_models = Vec::new();
        let mut train_descriptors = Vec::new();
        for channel in &channels {
            embedding_models.push(EmbeddingModel::load(
                &dir.join(format!("embed_{}.ltem", channel.tag())),
            )?);
            let tf = TensorFile::load(&dir.join(format!("descriptors_{}.lteb", channel.tag())))?;
            let arr = tf.to_array2()?;
            train_descriptors.push(arr.rows().into_iter().map(|r| r.to_vec()).collect());
        }
        let classes: Vec<u32> = (0..class_names.len() as u32).collect();
        Ok(SceneSvmModel {
            channels,
            class_names,
            embedding_models,
            spec: FusionSpec::new(mean_distances)?,
            train_descriptors,
            svm: SvmModel { classes, machines, cost },
            resample,
            denoise,
        })
    }
}

fn parse_denoise_line(line: &str) -> Result<crate::dsp::DenoiseConfig> {
    let mut fft_len = None;
    let mut min_window = None;
    let mut bias_comp = None;
    let mut floor_beta = None;
    for part in line.split_whitespace() {
        if let Some((k, v)) = part.split_once('=') {
            match k {
                "fft_len" => fft_len = v.parse().ok(),
                "min_window" => min_window = v.parse().ok(),
                "bias_comp" => bias_comp = v.parse().ok(),
                "floor_beta" => floor_beta = v.parse().ok(),
                _ => {}
            }
        }
    }
    match (fft_len, min_window, bias_comp, floor_beta) {
        (Some(f), Some(m), Some(b), Some(fb)) => crate::dsp::DenoiseConfig::new(f, m, b, fb),
        _ => Err(Error::ModelFormat("bad denoise line".into())),
    }
}

fn parse_machine_line(line: &str) -> Result<(u32, u32, usize, f64)> {
    let bad = || Error::ModelFormat(format!("bad machine line {line:?}"));
    let mut positive = None;
    let mut negative = None;
    let mut supports = None;
    let mut bias = None;
    for part in line.split_whitespace().skip(1) {
        let (k, v) = part.split_once('=').ok_or_else(bad)?;
        match k {
            "positive" => positive = v.parse().ok(),
            "negative" => negative = v.parse().ok(),
            "supports" => supports = v.parse().ok(),
            "bias" => bias = v.parse().ok(),
            _ => {}
        }
    }
    Ok((
        positive.ok_or_else(bad)?,
        negative.ok_or_else(bad)?,
        supports.ok_or_else(bad)?,
        bias.ok_or_else(bad)?,
    ))
}

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
        let seg: &SegmentMatrix = store.get(&e.id, channel)?;
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

/// Multi-channel 1-X pooling network plus its per-channel embedders.
pub struct SceneCnnModel {
    pub cnn: CnnModel,
    pub embedding_models: Vec<EmbeddingModel>,
    pub class_names: Vec<String>,
    pub pad_t: usize,
    pub resample: bool,
    pub denoise: crate::dsp::DenoiseConfig,
}

impl SceneCnnModel {
    /// Train on every manifest entry; returns the model and the per-epoch
    /// training loss curve.
    pub fn train(
        manifest: &DatasetManifest,
        system: SystemKind,
        cfg: &ExperimentConfig,
        workdir: Option<&Path>,
    ) -> Result<(SceneCnnModel, Vec<f64>)> {
        let pooling = system
            .pooling()
            .ok_or_else(|| Error::InvalidConfig(format!("{} is not a CNN system", system.name())))?;
        let channels = system.channels();
        let store = build_feature_store(manifest, &channels, cfg, workdir)?;
        let entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();

        let mut embedding_models = Vec::new();
        for &channel in &channels {
            let (features, labels) = segment_dataset(&entries, &store, channel)?;
            let tree_cfg = ForestConfig {
                rng_seed: derive_seed(cfg.seed, &format!("final/{}/tree", channel.tag())),
                ..cfg.forest.clone()
            };
            let tree = build_label_tree(
                features.view(),
                &labels,
                &tree_cfg,
                cfg.tree_mode,
                derive_seed(cfg.seed, &format!("final/{}/partition", channel.tag())),
            )?;
            let embed_cfg = ForestConfig {
                rng_seed: derive_seed(cfg.seed, &format!("final/{}/embed", channel.tag())),
                ..cfg.forest.clone()
            };
            embedding_models.push(train_embedding_model(
                &tree,
                features.view(),
                &labels,
                &embed_cfg,
                channel,
            )?);
        }

        let images: Vec<_> = entries
            .iter()
            .map(|e| multi_channel_image(&e.id, &store, &embedding_models, cfg.pad_t))
            .collect::<Result<_>>()?;
        let labels: Vec<u32> = entries.iter().map(|e| store.label(&e.id)).collect();
        let cnn_cfg = crate::cnn::CnnConfig {
            pooling,
            rng_seed: derive_seed(cfg.seed, "final/cnn"),
            ..cfg.cnn.clone()
        };
        let (cnn, losses) = train_cnn(&images, &labels, &cnn_cfg)?;
        Ok((
            SceneCnnModel {
                cnn,
                embedding_models,
                class_names: manifest.classes.clone(),
                pad_t: cfg.pad_t,
                resample: cfg.resample,
                denoise: cfg.denoise.clone(),
            },
            losses,
        ))
    }

    pub fn predict_signal(&self, signal: &AudioSignal) -> Result<(String, Vec<f64>)> {
        let denoised = if self
            .embedding_models
            .iter()
            .any(|m| m.channel.variant == NoiseVariant::Denoised)
        {
            Some(crate::dsp::spectral_subtract(signal, &self.denoise)?)
        } else {
            None
        };
        let images: Vec<crate::embed::LteImage> = self
            .embedding_models
            .iter()
            .map(|model| {
                let source = match model.channel.variant {
                    NoiseVariant::Raw => signal,
                    NoiseVariant::Denoised => denoised.as_ref().expect("denoised prepared"),
                };
                let seg = crate::dsp::segment_features(source, model.channel)?;
                crate::embed::circular_pad(&model.lte_image(&seg)?, self.pad_t)
            })
            .collect::<Result<_>>()?;
        let stacked = crate::embed::stack_channels(&images)?;
        let (class, probs) = predict_cnn(&self.cnn, &stacked)?;
        Ok((self.class_names[class as usize].clone(), probs))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.cnn.save(&dir.join("cnn.lcnn"))?;
        for model in &self.embedding_models {
            model.save(&dir.join(format!("embed_{}.ltem", model.channel.tag())))?;
        }
        let meta = serde_json::json!({
            "classes": self.class_names,
            "pad_t": self.pad_t,
            "resample": self.resample,
            "channels": self.embedding_models.iter().map(|m| m.channel.tag()).collect::<Vec<_>>(),
            "denoise": self.denoise,
        });
        std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<SceneCnnModel> {
        let meta: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
        let class_names: Vec<String> = serde_json::from_value(meta["classes"].clone())?;
        let pad_t = meta["pad_t"]
            .as_u64()
            .ok_or_else(|| Error::ModelFormat("missing pad_t".into()))? as usize;
        let resample = meta["resample"].as_bool().unwrap_or(false);
        let channel_tags: Vec<String> = serde_json::from_value(meta["channels"].clone())?;
        let denoise: crate::dsp::DenoiseConfig = serde_json::from_value(meta["denoise"].clone())?;
        let cnn = CnnModel::load(&dir.join("cnn.lcnn"))?;
        let embedding_models = channel_tags
            .iter()
            .map(|tag| EmbeddingModel::load(&dir.join(format!("embed_{tag}.ltem"))))
            .collect::<Result<_>>()?;
        Ok(SceneCnnModel { cnn, embedding_models, class_names, pad_t, resample, denoise })
    }
}
