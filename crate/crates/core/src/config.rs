//! Pipeline configuration: a TOML file with `[dataset]`, one or more
//! `[[layer]]` tables, an optional `[scaling]` expansion, `[autoencoder]`,
//! `[classifier]` and `[run]` sections.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::Activation;
use crate::classifier::MlpLoss;
use crate::error::{Error, Result};
use crate::hierarchy::{layer_input_dim, LayerConfig, OutputStrategy, PoolMode, ScalingFactors};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSection {
    /// Training manifest path; relative paths resolve against the config
    /// file's directory.
    pub manifest: PathBuf,
    /// Optional refractory filtering before layer 1 (0 = off).
    #[serde(default)]
    pub refractory_us: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSection {
    pub radius: u16,
    pub tau_us: f64,
    pub code_dim: usize,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default = "default_pool_mode")]
    pub pool_mode: PoolMode,
    #[serde(default = "default_pool_window")]
    pub pool_window: usize,
    #[serde(default)]
    pub alpha_us: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
}

fn default_strategy() -> String {
    "raw_pool".into()
}

fn default_pool_mode() -> PoolMode {
    PoolMode::Max
}

fn default_pool_window() -> usize {
    1
}

fn default_theta() -> f64 {
    0.5
}

impl LayerSection {
    fn to_layer_config(&self, index: usize) -> Result<LayerConfig> {
        let strategy = match self.strategy.as_str() {
            "raw_pool" => OutputStrategy::RawPool {
                mode: self.pool_mode,
                window: self.pool_window,
            },
            "time_delay" => OutputStrategy::TimeDelay {
                alpha_us: self.alpha_us,
            },
            "threshold" => OutputStrategy::Threshold { theta: self.theta },
            other => {
                return Err(Error::Config(format!(
                    "layer[{index}].strategy: unknown strategy \"{other}\" \
                     (expected raw_pool, time_delay or threshold)"
                )))
            }
        };
        Ok(LayerConfig {
            radius: self.radius,
            tau_us: self.tau_us,
            code_dim: self.code_dim,
            strategy,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingSection {
    pub k_radius: f64,
    pub k_tau: f64,
    pub k_code: f64,
    /// Total number of layers after expansion.
    pub layers: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutoencoderSection {
    /// Convergence threshold on the running mean reconstruction error.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_ae_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_max_surfaces")]
    pub max_surfaces: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_activation")]
    pub enc_activation: Activation,
    #[serde(default = "default_activation")]
    pub dec_activation: Activation,
}

fn default_epsilon() -> f64 {
    0.01
}

fn default_ae_learning_rate() -> f64 {
    0.05
}

fn default_max_surfaces() -> usize {
    200_000
}

fn default_window() -> usize {
    1000
}

fn default_activation() -> Activation {
    Activation::Sigmoid
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        AutoencoderSection {
            epsilon: default_epsilon(),
            learning_rate: default_ae_learning_rate(),
            max_surfaces: default_max_surfaces(),
            window: default_window(),
            enc_activation: default_activation(),
            dec_activation: default_activation(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierSection {
    pub hidden_dim: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_mlp_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_loss")]
    pub loss: MlpLoss,
    #[serde(default)]
    pub standardize: bool,
}

fn default_epochs() -> usize {
    50
}

fn default_mlp_learning_rate() -> f64 {
    0.01
}

fn default_loss() -> MlpLoss {
    MlpLoss::CrossEntropy
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// First K samples per class; 0 = all.
    #[serde(default)]
    pub subsample: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_seed() -> u64 {
    1
}

fn default_workers() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: default_seed(),
            workers: default_workers(),
            subsample: 0,
            output_dir: default_output_dir(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset: DatasetSection,
    #[serde(rename = "layer")]
    pub layers: Vec<LayerSection>,
    #[serde(default)]
    pub scaling: Option<ScalingSection>,
    #[serde(default)]
    pub autoencoder: AutoencoderSection,
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub run: RunSection,
}

impl PipelineConfig {
    /// Expands explicit layers plus the optional scaling chain into the full
    /// layer list.
    pub fn resolve_layers(&self) -> Result<Vec<LayerConfig>> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, section) in self.layers.iter().enumerate() {
            layers.push(section.to_layer_config(i)?);
        }
        if let Some(scaling) = &self.scaling {
            let k = ScalingFactors::new(scaling.k_radius, scaling.k_tau, scaling.k_code)
                .map_err(|e| Error::Config(format!("scaling: {e}")))?;
            if scaling.layers < layers.len() {
                return Err(Error::Config(format!(
                    "scaling.layers ({}) must be >= the number of explicit layers ({})",
                    scaling.layers,
                    layers.len()
                )));
            }
            while layers.len() < scaling.layers {
                let next = crate::hierarchy::scale_config(layers.last().expect("non-empty"), &k);
                layers.push(next);
            }
        }
        Ok(layers)
    }

    /// Checks every structural constraint, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.dataset.manifest.as_os_str().is_empty() {
            return Err(Error::Config("dataset.manifest must be set".into()));
        }
        if self.dataset.refractory_us < 0 {
            return Err(Error::Config(format!(
                "dataset.refractory_us must be >= 0, got {}",
                self.dataset.refractory_us
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("layer: at least one [[layer]] is required".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.radius < 1 {
                return Err(Error::Config(format!("layer[{i}].radius must be >= 1")));
            }
            if !(layer.tau_us > 0.0) {
                return Err(Error::Config(format!(
                    "layer[{i}].tau_us must be > 0, got {}",
                    layer.tau_us
                )));
            }
            if layer.code_dim < 1 {
                return Err(Error::Config(format!("layer[{i}].code_dim must be >= 1")));
            }
            if layer.pool_window < 1 {
                return Err(Error::Config(format!("layer[{i}].pool_window must be >= 1")));
            }
            if layer.alpha_us < 0.0 || !layer.alpha_us.is_finite() {
                return Err(Error::Config(format!(
                    "layer[{i}].alpha_us must be finite and >= 0, got {}",
                    layer.alpha_us
                )));
            }
            layer.to_layer_config(i)?;
        }
        let layers = self.resolve_layers()?;
        for (i, layer) in layers.iter().enumerate() {
            let input_dim = layer_input_dim(&layers, i);
            if layer.code_dim >= input_dim {
                return Err(Error::Config(format!(
                    "layer[{i}].code_dim ({}) must be smaller than the layer input dimension ({input_dim})",
                    layer.code_dim
                )));
            }
        }
        if !(self.autoencoder.epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "autoencoder.epsilon must be >= 0, got {}",
                self.autoencoder.epsilon
            )));
        }
        if !(self.autoencoder.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "autoencoder.learning_rate must be > 0, got {}",
                self.autoencoder.learning_rate
            )));
        }
        if self.autoencoder.max_surfaces == 0 {
            return Err(Error::Config("autoencoder.max_surfaces must be > 0".into()));
        }
        if self.autoencoder.window == 0 {
            return Err(Error::Config("autoencoder.window must be > 0".into()));
        }
        if self.classifier.hidden_dim == 0 {
            return Err(Error::Config("classifier.hidden_dim must be >= 1".into()));
        }
        if !(self.classifier.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "classifier.learning_rate must be > 0, got {}",
                self.classifier.learning_rate
            )));
        }
        if self.run.workers == 0 {
            return Err(Error::Config("run.workers must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loads and validates a pipeline configuration; relative manifest paths are
/// resolved against the config file's directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config: PipelineConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if config.dataset.manifest.is_relative() {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.dataset.manifest = base.join(&config.dataset.manifest);
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        r#"
            [dataset]
            manifest = "data/manifest.toml"

            [[layer]]
            radius = 2
            tau_us = 30000.0
            code_dim = 10

            [classifier]
            hidden_dim = 200
        "#
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config: PipelineConfig = toml::from_str(minimal_toml()).unwrap();
        config.validate().unwrap();
        assert_eq!(config.autoencoder.epsilon, 0.01);
        assert_eq!(config.classifier.epochs, 50);
        assert_eq!(config.run.workers, 1);
        let layers = config.resolve_layers().unwrap();
        assert_eq!(layers.len(), 1);
        assert_eq!(
            layers[0].strategy,
            OutputStrategy::RawPool { mode: PoolMode::Max, window: 1 }
        );
    }

    #[test]
    fn scaling_expands_layer_chain() {
        let mut config: PipelineConfig = toml::from_str(minimal_toml()).unwrap();
        config.layers[0].tau_us = 50_000.0;
        config.scaling = Some(ScalingSection {
            k_radius: 2.0,
            k_tau: 5.0,
            k_code: 2.0,
            layers: 3,
        });
        let layers = config.resolve_layers().unwrap();
        assert_eq!(layers.len(), 3);
        assert_eq!(layers[1].tau_us, 250_000.0);
        assert_eq!(layers[2].tau_us, 1_250_000.0);
        assert_eq!(layers[2].radius, 8);
    }

    #[test]
    fn violations_name_the_offending_key() {
        let cases: Vec<(Box<dyn Fn(&mut PipelineConfig)>, &str)> = vec![
            (Box::new(|c| c.layers.clear()), "layer"),
            (Box::new(|c| c.layers[0].radius = 0), "layer[0].radius"),
            (Box::new(|c| c.layers[0].tau_us = 0.0), "layer[0].tau_us"),
            (Box::new(|c| c.layers[0].code_dim = 0), "layer[0].code_dim"),
            (Box::new(|c| c.layers[0].code_dim = 50), "layer[0].code_dim"),
            (Box::new(|c| c.layers[0].pool_window = 0), "layer[0].pool_window"),
            (Box::new(|c| c.layers[0].strategy = "magic".into()), "layer[0].strategy"),
            (Box::new(|c| c.autoencoder.learning_rate = 0.0), "autoencoder.learning_rate"),
            (Box::new(|c| c.autoencoder.max_surfaces = 0), "autoencoder.max_surfaces"),
            (Box::new(|c| c.classifier.hidden_dim = 0), "classifier.hidden_dim"),
            (Box::new(|c| c.classifier.learning_rate = -1.0), "classifier.learning_rate"),
            (Box::new(|c| c.run.workers = 0), "run.workers"),
            (Box::new(|c| c.dataset.manifest = PathBuf::new()), "dataset.manifest"),
        ];
        for (mutate, key) in cases {
            let mut config: PipelineConfig = toml::from_str(minimal_toml()).unwrap();
            mutate(&mut config);
            let err = config.validate().unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains(key), "expected \"{key}\" in \"{msg}\"");
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config: PipelineConfig = toml::from_str(minimal_toml()).unwrap();
        let text = toml::to_string(&config).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.layers[0].radius, 2);
        assert_eq!(back.classifier.hidden_dim, 200);
    }
}
