//! The pipeline config file and its overrides.
//!
//! Precedence, lowest first: built-in defaults, the TOML file, `--set`
//! overrides, then dedicated command-line flags.

use std::path::{Path, PathBuf};

use huesearch_core::survey::BERLIN_KAY;
use huesearch_core::{
    DatasetFilterParams, EnhancementGrid, LabelSet, PoolingMode, Preprocess, QuantizationParams, SmoothingParams,
    TreeTrainParams,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub survey: SurveyConfig,
    pub tree: TreeTrainParams,
    pub preprocess: Preprocess,
    pub quantization: QuantizationParams,
    pub pooling: PoolingConfig,
    /// Absent means no semantic smoothing.
    pub smoothing: Option<SmoothingConfig>,
    /// Candidate values for `huesearch tune`.
    pub tune: EnhancementGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw survey dump (`r,g,b,label` rows).
    pub survey: Option<PathBuf>,
    /// Stage files, tree, metrics and records land here.
    pub work_dir: PathBuf,
    /// `identity,frame,image,mask` CSV.
    pub manifest: Option<PathBuf>,
    /// One part class name per line, in mask index order.
    pub classes: Option<PathBuf>,
    /// `identity,class,label` CSV.
    pub truth: Option<PathBuf>,
    /// Record database; defaults to `<work_dir>/records.jsonl`.
    pub records: Option<PathBuf>,
    /// `from,to` class renames applied to predictions before evaluation.
    pub class_mapping: Option<PathBuf>,
    pub validation_manifest: Option<PathBuf>,
    pub validation_truth: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            survey: None,
            work_dir: PathBuf::from("huesearch-work"),
            manifest: None,
            classes: None,
            truth: None,
            records: None,
            class_mapping: None,
            validation_manifest: None,
            validation_truth: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    pub tau: f64,
    pub clean: bool,
    pub outlier_k: usize,
    pub outlier_radius: f64,
    pub smote: bool,
    pub smote_k: usize,
    /// Vocabulary the final training set is restricted to.
    pub labels: Vec<String>,
    /// Held-out fraction for training metrics.
    pub holdout: f64,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        let f = DatasetFilterParams::default();
        SurveyConfig {
            tau: f.tau,
            clean: true,
            outlier_k: f.outlier_k,
            outlier_radius: f.outlier_radius,
            smote: true,
            smote_k: f.smote_k,
            labels: BERLIN_KAY.iter().map(|s| s.to_string()).collect(),
            holdout: 0.1,
        }
    }
}

impl SurveyConfig {
    pub fn filter_params(&self) -> DatasetFilterParams {
        DatasetFilterParams {
            tau: self.tau,
            outlier_k: self.outlier_k,
            outlier_radius: self.outlier_radius,
            smote_k: self.smote_k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolingConfig {
    pub mode: PoolingMode,
    pub top_m: usize,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        PoolingConfig {
            mode: PoolingMode::Average,
            top_m: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    pub sigma: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: Paths::default(),
            survey: SurveyConfig::default(),
            tree: TreeTrainParams::default(),
            preprocess: Preprocess::None,
            quantization: QuantizationParams::default(),
            pooling: PoolingConfig::default(),
            smoothing: None,
            tune: EnhancementGrid::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads `path` (if any), applies `key=value` overrides and resolves
    /// relative paths against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let (mut doc, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                let doc: toml::Table = text
                    .parse()
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                (doc, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for item in overrides {
            apply_override(&mut doc, item)?;
        }
        let mut config: PipelineConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        config.paths.resolve(&base);
        Ok(config)
    }

    pub fn label_set(&self) -> Result<LabelSet, CliError> {
        Ok(LabelSet::new(self.survey.labels.iter())?)
    }

    pub fn smoothing_params(&self) -> Result<Option<SmoothingParams>, CliError> {
        Ok(self.smoothing.map(|s| SmoothingParams::new(s.sigma)).transpose()?)
    }

    /// Checks every parameter against the module rules before any work.
    pub fn validate(&self) -> Result<(), CliError> {
        self.survey.filter_params().validate()?;
        if !(self.survey.holdout > 0.0 && self.survey.holdout < 1.0) {
            return Err(CliError::Usage("survey.holdout must lie in (0, 1)".into()));
        }
        self.label_set()?;
        self.tree.validate()?;
        self.preprocess.validate()?;
        self.quantization.validate()?;
        if self.pooling.top_m < 1 {
            return Err(CliError::Usage("pooling.top_m must be at least 1".into()));
        }
        self.smoothing_params()?;
        if self.tune.points().is_empty() {
            return Err(CliError::Usage("tune grid has no points".into()));
        }
        Ok(())
    }

    pub fn records_path(&self) -> PathBuf {
        self.paths
            .records
            .clone()
            .unwrap_or_else(|| self.paths.work_dir.join("records.jsonl"))
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.work_dir);
        for p in [
            &mut self.survey,
            &mut self.manifest,
            &mut self.classes,
            &mut self.truth,
            &mut self.records,
            &mut self.class_mapping,
            &mut self.validation_manifest,
            &mut self.validation_truth,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}

/// Ensures a configured input path is set and exists.
pub fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("paths.{key} is not set")))?;
    if !p.exists() {
        return Err(CliError::Usage(format!("paths.{key}: {} does not exist", p.display())));
    }
    Ok(p)
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a
/// bare string (`--set paths.survey=dump.csv`).
fn apply_override(doc: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got '{item}'")))?;
    let value = parse_value(raw.trim());
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty());
    let Some(last) = last else {
        return Err(CliError::Usage(format!("--set has an empty key in '{item}'")));
    };
    let mut table = doc;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("--set {key}: '{part}' is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let c = PipelineConfig::load(None, &[]).unwrap();
        assert_eq!(c, PipelineConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn overrides_reach_nested_tables() {
        let c = PipelineConfig::load(
            None,
            &[
                "survey.tau=0.8".into(),
                "preprocess.mode=msrcp".into(),
                "preprocess.scales=[10.0, 40.0]".into(),
                "smoothing.sigma=20".into(),
                "pooling.mode=satsort".into(),
                "paths.survey=/data/dump.csv".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.survey.tau, 0.8);
        let Preprocess::Msrcp(r) = &c.preprocess else { panic!() };
        assert_eq!(r.scales, [10.0, 40.0]);
        assert_eq!(r.low_clip, 0.01);
        assert_eq!(c.smoothing.unwrap().sigma, 20.0);
        assert_eq!(c.pooling.mode, PoolingMode::SatSort);
        assert_eq!(c.paths.survey.as_deref(), Some(Path::new("/data/dump.csv")));
    }

    #[test]
    fn file_paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "seed = 3\n[paths]\nsurvey = \"dump.csv\"\nwork_dir = \"/abs/work\"\n\n[preprocess]\nmode = \"learned\"\ncontrast = 1.2\n",
        )
        .unwrap();
        let c = PipelineConfig::load(Some(&path), &["seed=4".into()]).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.paths.survey.unwrap(), dir.path().join("dump.csv"));
        assert_eq!(c.paths.work_dir, Path::new("/abs/work"));
        let Preprocess::Learned(p) = c.preprocess else { panic!() };
        assert_eq!((p.contrast, p.brightness, p.saturation), (1.2, 0.0, 1.0));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        assert!(matches!(PipelineConfig::load(None, &["survey.tua=0.5".into()]), Err(CliError::Usage(_))));
        assert!(matches!(PipelineConfig::load(None, &["nonsense".into()]), Err(CliError::Usage(_))));
        let c = PipelineConfig::load(None, &["survey.tau=1.5".into()]).unwrap();
        assert_eq!(c.validate().unwrap_err().exit_code(), 1);
        let c = PipelineConfig::load(None, &["smoothing.sigma=-1".into()]).unwrap();
        assert_eq!(c.validate().unwrap_err().exit_code(), 1);
    }
}
