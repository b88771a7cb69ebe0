//! Behavioral properties of the synthetic corpus and the experiment
//! protocol on it.

use scenelte::dsp::Channel;
use scenelte::forest::ForestConfig;
use scenelte::labeltree::{confusion_matrix, symmetrize};
use scenelte::pipeline::{
    build_feature_store, ingest_dataset, run_experiment, synth_corpus, ExperimentConfig,
    SynthConfig, SystemKind,
};
use tempfile::tempdir;

fn quick_corpus(dir: &std::path::Path) -> scenelte::pipeline::DatasetManifest {
    let cfg = SynthConfig {
        classes: 4,
        per_class: 8,
        duration: 3.0,
        seed: 7,
        folds: 4,
        sample_rate: 44_100,
    };
    let manifest = synth_corpus(&cfg, dir).unwrap();
    ingest_dataset(&manifest).unwrap()
}

#[test]
fn designed_pairs_are_the_most_confused() {
    let dir = tempdir().unwrap();
    let manifest = quick_corpus(dir.path());
    let channel = Channel::RAW[0];
    let cfg = ExperimentConfig::desk(7);
    let store = build_feature_store(&manifest, &[channel], &cfg, None).unwrap();

    // Stage-one confusion over all segments of the corpus.
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for e in &manifest.entries {
        let seg = store.get(&e.id, channel).unwrap();
        for t in 0..seg.num_segments() {
            rows.push(seg.values.column(t).to_vec());
            labels.push(manifest.class_id(&e.label).unwrap());
        }
    }
    let features = ndarray::Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j]);
    let forest_cfg = ForestConfig { n_trees: 40, min_leaf: 3, rng_seed: 7, ..Default::default() };
    let cm = confusion_matrix(features.view(), &labels, &forest_cfg, 7).unwrap();
    let abar = symmetrize(&cm.matrix).unwrap();

    // The largest off-diagonal confusion must sit inside a designed pair
    // (classes 2k and 2k+1 share a background).
    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for i in 0..4 {
        for j in 0..4 {
            if i != j && abar[(i, j)] > best.2 {
                best = (i, j, abar[(i, j)]);
            }
        }
    }
    let (i, j, _) = best;
    assert_eq!(i / 2, j / 2, "most confused pair ({i},{j}) is not a designed pair: {abar:?}");
}

#[test]
fn experiments_are_reproducible_for_a_fixed_seed() {
    let dir = tempdir().unwrap();
    let manifest = quick_corpus(dir.path());
    let cfg = ExperimentConfig::desk(11);
    let a = run_experiment(&manifest, SystemKind::Lte1, &cfg, None).unwrap();
    let b = run_experiment(&manifest, SystemKind::Lte1, &cfg, None).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    a.validate().unwrap();
}

#[test]
fn fold_checkpoints_isolate_train_and_eval_ids() {
    let dir = tempdir().unwrap();
    let manifest = quick_corpus(dir.path());
    let cfg = ExperimentConfig::desk(13);
    let workdir = dir.path().join("work");
    run_experiment(&manifest, SystemKind::Lte1, &cfg, Some(&workdir)).unwrap();
    for fold in 1..=manifest.num_folds() {
        let text = std::fs::read_to_string(
            workdir.join("preds").join("lte1").join(format!("fold{fold}.csv")),
        )
        .unwrap();
        let eval_ids: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        let (train, eval) = manifest.fold_split(fold);
        // The checkpoint holds exactly the held-out fold's recordings.
        assert_eq!(eval_ids.len(), eval.len());
        for id in &eval_ids {
            assert!(eval.iter().any(|e| &e.id == id));
            assert!(!train.iter().any(|e| &e.id == id));
        }
    }
}
