//! Experiment configuration.
//!
//! A TOML document with optional sections; anything omitted falls back to
//! the desk-scale defaults. The `paper-scale` preset switches the network
//! to 1000 filters per width, 500 epochs, and 200-tree forests.

use crate::cnn::CnnConfig;
use crate::dsp::DenoiseConfig;
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::labeltree::PartitionMode;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvmConfig {
    pub cost_grid: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub tune_folds: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            cost_grid: crate::kernelbase::default_cost_grid(),
            tol: 1e-3,
            max_iter: 1_000_000,
            tune_folds: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Master seed; every stage derives its own stream.
    pub seed: u64,
    pub forest: ForestConfig,
    pub cnn: CnnConfig,
    pub denoise: DenoiseConfig,
    pub svm: SvmConfig,
    /// Partition search for label-tree nodes.
    pub tree_mode: PartitionMode,
    /// Folds for the cross-validated descriptor extraction of the SVM
    /// systems.
    pub descriptor_folds: usize,
    /// Time extent images are circularly padded to.
    pub pad_t: usize,
    /// Resample non-44.1 kHz input instead of rejecting it.
    pub resample: bool,
    /// Reuse the first channel's label tree for every channel instead of
    /// learning one tree per channel.
    pub shared_tree: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk(42)
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults: small forests and networks that keep a full
    /// cross-validated run in the minutes range on one machine.
    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            forest: ForestConfig {
                n_trees: 80,
                min_leaf: 3,
                rng_seed: seed,
                ..Default::default()
            },
            cnn: CnnConfig { rng_seed: seed, ..Default::default() },
            denoise: DenoiseConfig::default(),
            svm: SvmConfig::default(),
            tree_mode: PartitionMode::Auto,
            descriptor_folds: 10,
            pad_t: crate::embed::TARGET_T,
            resample: false,
            shared_tree: false,
        }
    }

    /// Reference-scale preset: 200-tree forests, 1000 filters per width,
    /// 500 epochs.
    pub fn paper_scale(seed: u64) -> Self {
        Self {
            forest: ForestConfig { rng_seed: seed, ..Default::default() },
            cnn: CnnConfig { rng_seed: seed, ..CnnConfig::paper_scale() },
            ..Self::desk(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.forest.validate()?;
        self.cnn.validate()?;
        DenoiseConfig::new(
            self.denoise.fft_len,
            self.denoise.min_window,
            self.denoise.bias_comp,
            self.denoise.floor_beta,
        )?;
        if self.descriptor_folds < 2 {
            return Err(Error::InvalidConfig("descriptor_folds must be >= 2".into()));
        }
        if self.pad_t == 0 {
            return Err(Error::InvalidConfig("pad_t must be >= 1".into()));
        }
        if self.svm.cost_grid.is_empty() {
            return Err(Error::InvalidConfig("svm.cost_grid must be nonempty".into()));
        }
        Ok(())
    }

    /// Parse a TOML document. A top-level `preset = "desk" | "paper-scale"`
    /// selects the baseline; individual sections then override it.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let seed = value
            .get("seed")
            .and_then(|v| v.as_integer())
            .map(|v| v as u64)
            .unwrap_or(42);
        let preset = value.get("preset").and_then(|v| v.as_str()).unwrap_or("desk");
        let mut cfg = match preset {
            "desk" => Self::desk(seed),
            "paper-scale" => Self::paper_scale(seed),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset {other:?} (expected desk or paper-scale)"
                )))
            }
        };
        // Section-level overrides replace the whole section.
        macro_rules! override_section {
            ($key:literal, $field:ident) => {
                if let Some(section) = value.get($key) {
                    cfg.$field = section
                        .clone()
                        .try_into()
                        .map_err(|e| Error::InvalidConfig(format!("[{}]: {e}", $key)))?;
                }
            };
        }
        override_section!("forest", forest);
        override_section!("cnn", cnn);
        override_section!("denoise", denoise);
        override_section!("svm", svm);
        if let Some(v) = value.get("tree_mode") {
            cfg.tree_mode = v
                .clone()
                .try_into()
                .map_err(|e| Error::InvalidConfig(format!("tree_mode: {e}")))?;
        }
        if let Some(v) = value.get("descriptor_folds").and_then(|v| v.as_integer()) {
            cfg.descriptor_folds = v as usize;
        }
        if let Some(v) = value.get("pad_t").and_then(|v| v.as_integer()) {
            cfg.pad_t = v as usize;
        }
        if let Some(v) = value.get("resample").and_then(|v| v.as_bool()) {
            cfg.resample = v;
        }
        if let Some(v) = value.get("shared_tree").and_then(|v| v.as_bool()) {
            cfg.shared_tree = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults_validate() {
        let cfg = ExperimentConfig::desk(42);
        cfg.validate().unwrap();
        assert_eq!(cfg.cnn.widths, vec![3, 5, 7]);
        assert_eq!(cfg.descriptor_folds, 10);
        assert_eq!(cfg.pad_t, 118);
    }

    #[test]
    fn paper_scale_preset_sets_reference_values() {
        let cfg = ExperimentConfig::paper_scale(1);
        assert_eq!(cfg.cnn.filters_per_width, 1000);
        assert_eq!(cfg.cnn.epochs, 500);
        assert_eq!(cfg.forest.n_trees, 200);
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 7
            preset = "desk"
            pad_t = 60
            shared_tree = true

            [cnn]
            widths = [2, 4]
            filters_per_width = 8
            learning_rate = 0.001
            dropout_rate = 0.25
            lambda = 0.0
            epochs = 10
            minibatch = 16
            pooling = "Max"
            rng_seed = 7
            adam_beta1 = 0.9
            adam_beta2 = 0.999
            adam_eps = 1e-8
            dropout_on_weights = false
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.pad_t, 60);
        assert!(cfg.shared_tree);
        assert_eq!(cfg.cnn.widths, vec![2, 4]);
        assert_eq!(cfg.cnn.filters_per_width, 8);

        // Full round trip through the emitted TOML.
        let text = cfg.to_toml();
        let parsed: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed.cnn.widths, cfg.cnn.widths);
        assert_eq!(parsed.seed, cfg.seed);
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(ExperimentConfig::from_toml("preset = \"huge\"").is_err());
    }

    #[test]
    fn invalid_sections_are_rejected() {
        let bad = r#"
            [denoise]
            fft_len = 1000
            min_window = 1.5
            bias_comp = 1.5
            floor_beta = 0.01
        "#;
        assert!(ExperimentConfig::from_toml(bad).is_err());
    }
}
