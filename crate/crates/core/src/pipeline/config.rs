use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::audit::AuditConfig;
use crate::learner::TrainConfig;
use crate::procurement::Channel;
use crate::review::DEFAULT_RELEVANCE_THRESHOLD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub store: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train: DatasetPaths,
    pub test: DatasetPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcurementSettings {
    pub channels: Vec<Channel>,
    pub per_count: usize,
    pub web_endpoint: Option<String>,
    pub txt2img_endpoint: Option<String>,
    pub embedder_endpoint: Option<String>,
    /// Recorded provider and embedder responses standing in for the network.
    pub fixture_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub alpha: f64,
    /// Synthetic noise; a quarter of the audit radius when unset.
    pub sigma: Option<f64>,
}

impl Default for ProcurementSettings {
    fn default() -> Self {
        Self {
            channels: vec![Channel::Synthetic],
            per_count: 20,
            web_endpoint: None,
            txt2img_endpoint: None,
            embedder_endpoint: None,
            fixture_dir: None,
            cache_dir: None,
            alpha: 0.5,
            sigma: None,
        }
    }
}

/// Attribute groups whose accuracy gap is tracked across runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPair {
    pub attribute: String,
    pub group_a: String,
    pub group_b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub d_values: Vec<f64>,
    #[serde(default = "default_relevance")]
    pub relevance_threshold: f64,
    #[serde(default)]
    pub attribute_variants: Vec<String>,
    #[serde(default)]
    pub procurement: ProcurementSettings,
    #[serde(default)]
    pub train: TrainConfig,
    /// Empty means every value pair of every attribute.
    #[serde(default)]
    pub disparity_groups: Vec<GroupPair>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Loaded instead of training a baseline when present on disk.
    #[serde(default)]
    pub baseline_checkpoint: Option<PathBuf>,
    /// Restricts procurement to the synthetic channel and recorded fixtures.
    #[serde(default)]
    pub offline: bool,
}

fn default_relevance() -> f64 {
    DEFAULT_RELEVANCE_THRESHOLD
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn new(data: DataConfig, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            data,
            audit: AuditConfig::default(),
            d_values: Vec::new(),
            relevance_threshold: DEFAULT_RELEVANCE_THRESHOLD,
            attribute_variants: Vec::new(),
            procurement: ProcurementSettings::default(),
            train: TrainConfig::default(),
            disparity_groups: Vec::new(),
            seed: 0,
            output_dir: output_dir.into(),
            baseline_checkpoint: None,
            offline: false,
        }
    }

    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| PipelineError::Config(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in [&mut self.data.train, &mut self.data.test] {
            fix(&mut d.store);
            fix(&mut d.manifest);
        }
        fix(&mut self.output_dir);
        if let Some(p) = self.procurement.fixture_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.procurement.cache_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.baseline_checkpoint.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.audit
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.d_values.iter().any(|d| !(*d >= 0.0)) {
            return Err(PipelineError::Config("d_values must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.relevance_threshold) {
            return Err(PipelineError::Config(format!(
                "relevance_threshold {} outside [0,1]",
                self.relevance_threshold
            )));
        }
        if self.procurement.per_count == 0 {
            return Err(PipelineError::Config("procurement.per_count must be positive".into()));
        }
        Ok(())
    }

    /// Radii swept by the grid; the audit radius alone when none are listed.
    pub fn grid_radii(&self) -> Vec<f64> {
        if self.d_values.is_empty() {
            vec![self.audit.radius]
        } else {
            self.d_values.clone()
        }
    }

    pub fn review_path(&self) -> PathBuf {
        self.output_dir.join("review.json")
    }

    pub fn audit_report_path(&self) -> PathBuf {
        self.output_dir.join("audit.json")
    }

    pub fn enhance_report_path(&self) -> PathBuf {
        self.output_dir.join("enhance.json")
    }

    pub fn prompts_path(&self) -> PathBuf {
        self.output_dir.join("prompts.jsonl")
    }

    pub fn baseline_path(&self) -> PathBuf {
        self.output_dir.join("baseline.ckpt")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_gets_defaults_and_resolved_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.json");
        std::fs::write(
            &path,
            r#"{"data": {"train": {"store": "train.wsem", "manifest": "train.jsonl"},
                         "test": {"store": "/abs/test.wsem", "manifest": "test.jsonl"}}}"#,
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.data.train.store, dir.path().join("train.wsem"));
        assert_eq!(cfg.data.test.store, PathBuf::from("/abs/test.wsem"));
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        assert_eq!(cfg.procurement.per_count, 20);
        assert_eq!(cfg.procurement.channels, vec![Channel::Synthetic]);
        assert_eq!(cfg.relevance_threshold, 0.5);
        assert_eq!(cfg.audit.perplexity_threshold, 0.70);
        assert_eq!(cfg.grid_radii(), vec![cfg.audit.radius]);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let paths = DatasetPaths {
            store: "a".into(),
            manifest: "b".into(),
        };
        let mut cfg = PipelineConfig::new(
            DataConfig {
                train: paths.clone(),
                test: paths,
            },
            "out",
        );
        cfg.relevance_threshold = 1.5;
        assert!(cfg.validate().is_err());
        cfg.relevance_threshold = 0.5;
        cfg.d_values = vec![-1.0];
        assert!(cfg.validate().is_err());
    }
}
