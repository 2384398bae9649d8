//! Experiment configuration: a TOML file, overridden by command-line flags,
//! resolved and written next to the outputs as `manifest.toml`.

use std::path::{Path, PathBuf};

use jpsh::data_io::{FeatureFormat, SplitStrategy};
use jpsh::metrics::DEFAULT_TOP_NS;
use jpsh::optimizer::Hyperparams;
use jpsh::pipeline::Method;
use jpsh::JpshError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Feature file; also the training set when `test_path` is set.
    pub path: Option<PathBuf>,
    pub format: Option<FeatureFormat>,
    pub labels: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub test_per_class: usize,
    pub seed: u64,
    pub strategy: SplitStrategy,
    /// Subsample the training part to this many samples.
    pub train_size: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_per_class: 100,
            seed: 0,
            strategy: SplitStrategy::PerClassStratified,
            train_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub top_ns: Vec<usize>,
    pub map_at: Vec<usize>,
    pub bits: Vec<usize>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            top_ns: DEFAULT_TOP_NS.to_vec(),
            map_at: vec![100],
            bits: vec![16],
            methods: vec![Method::Jpsh],
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub hyper: Hyperparams,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("jpsh-out"),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            hyper: Hyperparams::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, JpshError> {
        let text = std::fs::read_to_string(path).map_err(|e| JpshError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| JpshError::Param(format!("config {}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, JpshError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), JpshError> {
        self.hyper.validate()?;
        let e = &self.eval;
        if e.bits.contains(&0) || e.bits.is_empty() {
            return Err(JpshError::Param("eval.bits must list code lengths >= 1".into()));
        }
        if e.methods.is_empty() || e.seeds.is_empty() {
            return Err(JpshError::Param("eval.methods and eval.seeds must not be empty".into()));
        }
        if e.top_ns.iter().chain(&e.map_at).any(|&n| n == 0) {
            return Err(JpshError::Param("cutoffs N must be at least 1".into()));
        }
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path, JpshError> {
        self.data
            .path
            .as_deref()
            .ok_or_else(|| JpshError::Param("no data file given (--data or data.path)".into()))
    }

    pub fn format_for(&self, path: &Path) -> Result<FeatureFormat, JpshError> {
        self.data
            .format
            .or_else(|| FeatureFormat::from_path(path))
            .ok_or_else(|| {
                JpshError::Param(format!(
                    "cannot tell the format of {}; pass --format",
                    path.display()
                ))
            })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn write_manifest(&self, dir: &Path) -> Result<(), JpshError> {
        let path = dir.join("manifest.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| JpshError::Io { path, source: e })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[hyper]\nlambda9 = 1.0").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[eval]\nmethods = [\"pca\"]").is_err());
    }

    #[test]
    fn manifest_roundtrips() {
        let mut cfg: ExperimentConfig = toml::from_str(
            "output_dir = \"o\"\n[data]\npath = \"x.csv\"\n[hyper]\nbits = 32\nmode = \"psh-only\"\nridge = 0.5\n[eval]\nmethods = [\"jpsh\", \"lsh\"]",
        )
        .unwrap();
        cfg.hyper.seed = 4;
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hyper.bits, 32);
    }

    #[test]
    fn format_inference() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.format_for(Path::new("a/b.csv.gz")).unwrap(), FeatureFormat::Csv);
        assert_eq!(cfg.format_for(Path::new("t10k-images-idx3-ubyte.gz")).unwrap(), FeatureFormat::Idx);
        assert!(cfg.format_for(Path::new("a.bin")).is_err());
    }
}
