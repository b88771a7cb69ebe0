//! Command-line interface to the scene-classification pipeline.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use scenelte::dsp::{self, Channel};
use scenelte::embed::EmbeddingModel;
use scenelte::labeltree::{build_label_tree, LabelTree, PartitionMode};
use scenelte::pipeline::scene_models::{SceneCnnModel, SceneSvmModel};
use scenelte::pipeline::{self, ExperimentConfig, SynthConfig, SystemKind, TensorFile};
use scenelte::seed::derive_seed;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "scenelte",
    about = "Acoustic scene classification with label tree embedding images and 1-X pooling networks",
    version
)]
struct Cli {
    /// Master experiment seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Force single-threaded execution for bit-reproducible runs.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene corpus with paired classes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        classes: usize,
        #[arg(long = "per-class", default_value_t = 20)]
        per_class: usize,
        /// Recording length in seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 4)]
        folds: u32,
    },
    /// Extract segment-feature tensors for every recording.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Channel tag (e.g. gtcc-raw), comma list, or "all".
        #[arg(long, default_value = "all")]
        channel: String,
        /// Resample non-44.1 kHz input instead of rejecting it.
        #[arg(long)]
        resample: bool,
    },
    /// Subtract the stationary background-noise spectrum from a WAV file.
    Denoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        resample: bool,
    },
    /// Learn a label tree from one channel's segment features.
    Tree {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        channel: String,
        #[arg(long)]
        out: PathBuf,
        /// exact | spectral | auto
        #[arg(long, default_value = "auto")]
        mode: String,
        #[arg(long)]
        resample: bool,
    },
    /// Train one channel's embedding model (label tree + binary forests).
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        channel: String,
        /// Reuse a previously built label tree instead of learning one.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resample: bool,
    },
    /// Produce LTE images (and the stacked multi-channel tensor when all
    /// six channel models are present).
    Image {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory containing embed_<channel>.ltem models.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Circularly pad images to this many segments.
        #[arg(long, default_value_t = 118)]
        pad: usize,
        #[arg(long)]
        resample: bool,
    },
    /// Train a chi-square kernel SVM system on the whole manifest.
    TrainSvm {
        #[arg(long)]
        manifest: PathBuf,
        /// lte1 | lte2 | lte3 | lte+
        #[arg(long, default_value = "lte+")]
        system: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workdir: Option<PathBuf>,
    },
    /// Train a 1-X pooling network system on the whole manifest.
    TrainCnn {
        #[arg(long)]
        manifest: PathBuf,
        /// cnn-max | cnn-mean | cnn-mix
        #[arg(long, default_value = "cnn-mix")]
        system: String,
        #[arg(long)]
        out: PathBuf,
        /// Write the per-epoch training loss curve.
        #[arg(long = "loss-csv")]
        loss_csv: Option<PathBuf>,
        #[arg(long)]
        workdir: Option<PathBuf>,
    },
    /// Run the cross-validated experiment protocol for one system.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        system: String,
        /// Cache features and per-fold predictions here (resumable).
        #[arg(long)]
        workdir: Option<PathBuf>,
        /// Write <prefix>.csv and <prefix>.txt reports.
        #[arg(long = "report-out")]
        report_out: Option<PathBuf>,
    },
    /// Re-render a stored report CSV (validates it against its own
    /// confusion matrix).
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();

    let threads = if cli.deterministic { Some(1) } else { cli.jobs };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool already initialized")?;
    }

    let mut cfg = match &cli.config {
        Some(path) => {
            ExperimentConfig::load(path).with_context(|| format!("loading config {path:?}"))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = ExperimentConfig {
            forest: scenelte::forest::ForestConfig { rng_seed: seed, ..cfg.forest },
            cnn: scenelte::cnn::CnnConfig { rng_seed: seed, ..cfg.cnn },
            seed,
            ..cfg
        };
    }

    match cli.command {
        Command::Synth { out, classes, per_class, duration, folds } => {
            let synth = SynthConfig {
                classes,
                per_class,
                duration,
                folds,
                seed: derive_seed(cfg.seed, "synth"),
                ..SynthConfig::default()
            };
            let manifest = pipeline::synth_corpus(&synth, &out)?;
            println!("wrote corpus manifest {}", manifest.display());
        }
        Command::Features { manifest, out, channel, resample } => {
            let manifest = pipeline::ingest_dataset(&manifest)?;
            let channels = parse_channels(&channel)?;
            let cfg = ExperimentConfig { resample: resample || cfg.resample, ..cfg };
            pipeline::build_feature_store(&manifest, &channels, &cfg, Some(&out))?;
            println!(
                "extracted {} channel(s) for {} recordings into {}",
                channels.len(),
                manifest.entries.len(),
                out.display()
            );
        }
        Command::Denoise { input, output, resample } => {
            let signal = dsp::wav::read_wav(&input, resample || cfg.resample)?;
            let clean = dsp::spectral_subtract(&signal, &cfg.denoise)?;
            ensure_parent(&output)?;
            dsp::wav::write_wav_i16(&output, &clean)?;
            println!("wrote {}", output.display());
        }
        Command::Tree { manifest, channel, out, mode, resample } => {
            let manifest = pipeline::ingest_dataset(&manifest)?;
            let channel = Channel::parse(&channel)?;
            let mode = parse_mode(&mode)?;
            let cfg = ExperimentConfig { resample: resample || cfg.resample, ..cfg };
            let (features, labels) = channel_dataset(&manifest, channel, &cfg)?;
            let forest_cfg = scenelte::forest::ForestConfig {
                rng_seed: derive_seed(cfg.seed, &format!("cli/{}/tree", channel.tag())),
                ..cfg.forest.clone()
            };
            let tree = build_label_tree(
                features.view(),
                &labels,
                &forest_cfg,
                mode,
                derive_seed(cfg.seed, &format!("cli/{}/partition", channel.tag())),
            )?;
            ensure_parent(&out)?;
            std::fs::write(&out, tree.to_text())?;
            println!(
                "label tree with {} splits over {} classes -> {}",
                tree.num_splits(),
                tree.num_leaves(),
                out.display()
            );
        }
        Command::Embed { manifest, channel, tree, out, resample } => {
            let manifest = pipeline::ingest_dataset(&manifest)?;
            let channel = Channel::parse(&channel)?;
            let cfg = ExperimentConfig { resample: resample || cfg.resample, ..cfg };
            let (features, labels) = channel_dataset(&manifest, channel, &cfg)?;
            let tree = match tree {
                Some(path) => LabelTree::from_text(&std::fs::read_to_string(&path)?)?,
                None => {
                    let forest_cfg = scenelte::forest::ForestConfig {
                        rng_seed: derive_seed(cfg.seed, &format!("cli/{}/tree", channel.tag())),
                        ..cfg.forest.clone()
                    };
                    build_label_tree(
                        features.view(),
                        &labels,
                        &forest_cfg,
                        cfg.tree_mode,
                        derive_seed(cfg.seed, &format!("cli/{}/partition", channel.tag())),
                    )?
                }
            };
            let embed_cfg = scenelte::forest::ForestConfig {
                rng_seed: derive_seed(cfg.seed, &format!("cli/{}/embed", channel.tag())),
                ..cfg.forest.clone()
            };
            let model = scenelte::embed::train_embedding_model(
                &tree,
                features.view(),
                &labels,
                &embed_cfg,
                channel,
            )?;
            ensure_parent(&out)?;
            model.save(&out)?;
            println!(
                "embedding model ({} split nodes, F = {}) -> {}",
                model.node_classifiers.len(),
                model.f_dim(),
                out.display()
            );
        }
        Command::Image { manifest, models, out, pad, resample } => {
            let manifest = pipeline::ingest_dataset(&manifest)?;
            let cfg = ExperimentConfig { resample: resample || cfg.resample, pad_t: pad, ..cfg };
            write_images(&manifest, &models, &out, &cfg)?;
        }
        Command::TrainSvm { manifest, system, out, workdir } => {
            let manifest = pipeline::ingest_dataset(&manifest)?;
            let system = SystemKind::parse(&system)?;
            let model = SceneSvmModel::train(&manifest, system, &cfg, workdir.as_deref())?;
            model.save(&out)?;
            println!(
                "trained {} on {} recordings (cost {}) -> {}",
                system.name(),
                manifest.entries.len(),
                model.svm.cost,
                out.display()
            );
        }
        Command::TrainCnn { manifest, system, out, loss_csv, workdir } => {
            let manifest = pipeline::ingest_dataset(&manifest)?;
            let system = SystemKind::parse(&system)?;
            let (model, losses) =
                SceneCnnModel::train(&manifest, system, &cfg, workdir.as_deref())?;
            model.save(&out)?;
            if let Some(path) = loss_csv {
                let mut text = String::from("epoch,loss\n");
                for (e, l) in losses.iter().enumerate() {
                    text.push_str(&format!("{},{l}\n", e + 1));
                }
                std::fs::write(&path, text)?;
            }
            println!(
                "trained {} for {} epochs (final loss {:.4}) -> {}",
                system.name(),
                losses.len(),
                losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Eval { manifest, system, workdir, report_out } => {
            let manifest = pipeline::ingest_dataset(&manifest)?;
            let system = SystemKind::parse(&system)?;
            let report = pipeline::run_experiment(&manifest, system, &cfg, workdir.as_deref())?;
            print!("{}", report.render_text());
            if let Some(prefix) = report_out {
                let csv = prefix.with_extension("csv");
                let txt = prefix.with_extension("txt");
                std::fs::write(&csv, report.to_csv())?;
                std::fs::write(&txt, report.render_text())?;
                println!("reports -> {} and {}", csv.display(), txt.display());
            }
        }
        Command::Report { input } => {
            let report = pipeline::EvaluationReport::from_csv(&std::fs::read_to_string(&input)?)?;
            print!("{}", report.render_text());
        }
    }
    Ok(())
}

fn ensure_parent(path: &std::path::Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn parse_channels(spec: &str) -> Result<Vec<Channel>> {
    if spec == "all" {
        return Ok(Channel::ALL.to_vec());
    }
    spec.split(',')
        .map(|tag| Channel::parse(tag.trim()).map_err(Into::into))
        .collect()
}

fn parse_mode(mode: &str) -> Result<PartitionMode> {
    match mode {
        "exact" => Ok(PartitionMode::Exact),
        "spectral" => Ok(PartitionMode::Spectral),
        "auto" => Ok(PartitionMode::Auto),
        other => bail!("unknown partition mode {other:?} (expected exact, spectral, auto)"),
    }
}

/// All segments of one channel across the manifest, with class-id labels.
fn channel_dataset(
    manifest: &pipeline::DatasetManifest,
    channel: Channel,
    cfg: &ExperimentConfig,
) -> Result<(ndarray::Array2<f64>, Vec<u32>)> {
    let store = pipeline::build_feature_store(manifest, &[channel], cfg, None)?;
    let mut total = 0usize;
    let mut dim = 0usize;
    for e in &manifest.entries {
        let seg = store.get(&e.id, channel)?;
        total += seg.num_segments();
        dim = seg.feature_dim();
    }
    let mut features = ndarray::Array2::zeros((total, dim));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0usize;
    for e in &manifest.entries {
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

fn write_images(
    manifest: &pipeline::DatasetManifest,
    models_dir: &std::path::Path,
    out: &std::path::Path,
    cfg: &ExperimentConfig,
) -> Result<()> {
    let mut models: Vec<EmbeddingModel> = Vec::new();
    for channel in Channel::ALL {
        let path = models_dir.join(format!("embed_{}.ltem", channel.tag()));
        if path.is_file() {
            models.push(EmbeddingModel::load(&path)?);
        }
    }
    if models.is_empty() {
        bail!("no embed_<channel>.ltem models found in {}", models_dir.display());
    }
    let channels: Vec<Channel> = models.iter().map(|m| m.channel).collect();
    let store = pipeline::build_feature_store(manifest, &channels, cfg, None)?;
    std::fs::create_dir_all(out)?;
    let full_stack = channels.len() == Channel::ALL.len();
    for entry in &manifest.entries {
        let mut t_before_pad = Vec::new();
        let mut padded = Vec::new();
        for model in &models {
            let seg = store.get(&entry.id, model.channel)?;
            let img = model.lte_image(seg)?;
            t_before_pad.push(img.t_dim());
            padded.push(scenelte::embed::circular_pad(&img, cfg.pad_t)?);
        }
        let sidecar = serde_json::json!({
            "recording": entry.id,
            "label": entry.label,
            "channels": channels.iter().map(|c| c.tag()).collect::<Vec<_>>(),
            "t_before_pad": t_before_pad,
            "t_padded": cfg.pad_t,
        });
        if full_stack {
            let stacked = scenelte::embed::stack_channels(&padded)?;
            TensorFile::from_array3(&stacked.values, sidecar.clone())
                .save(&out.join(format!("{}.lteb", entry.id)))?;
        } else {
            for img in &padded {
                TensorFile::from_array2(&img.values, sidecar.clone())
                    .save(&out.join(format!("{}.{}.lteb", entry.id, img.channel.tag())))?;
            }
        }
        std::fs::write(
            out.join(format!("{}.json", entry.id)),
            serde_json::to_vec_pretty(&sidecar)?,
        )?;
    }
    println!(
        "wrote images for {} recordings to {}",
        manifest.entries.len(),
        out.display()
    );
    Ok(())
}
