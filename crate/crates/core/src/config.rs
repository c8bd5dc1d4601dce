//! Pipeline configuration and on-disk case layout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::{Task, WindowTable};
use crate::metrics::DEFAULT_TAU_MM;
use crate::roi::{Connectivity, DEFAULT_BODY_THRESHOLD_HU, DEFAULT_MARGIN_PX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropConfig {
    pub threshold_hu: f64,
    pub margin_px: usize,
    pub connectivity: Connectivity,
    pub full_z: bool,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            threshold_hu: DEFAULT_BODY_THRESHOLD_HU,
            margin_px: DEFAULT_MARGIN_PX,
            connectivity: Connectivity::TwentySix,
            full_z: true,
        }
    }
}

/// File name templates; `{case}` stands for the case id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseLayout {
    pub contrast: String,
    pub plain: String,
    pub label: String,
    pub body: String,
    pub record: String,
}

impl Default for CaseLayout {
    fn default() -> Self {
        CaseLayout {
            contrast: "{case}_contrast.nii.gz".into(),
            plain: "{case}_plain.nii.gz".into(),
            label: "{case}_label.nii.gz".into(),
            body: "{case}_body.nii.gz".into(),
            record: "{case}.crop.json".into(),
        }
    }
}

impl CaseLayout {
    pub fn path(template: &str, dir: &Path, case_id: &str) -> PathBuf {
        dir.join(template.replace("{case}", case_id))
    }

    /// Case id encoded in `file_name`, if it matches `template`.
    pub fn match_case(template: &str, file_name: &str) -> Option<String> {
        let (prefix, suffix) = template.split_once("{case}")?;
        let id = file_name.strip_prefix(prefix)?.strip_suffix(suffix)?;
        (!id.is_empty()).then(|| id.to_string())
    }

    /// Sorted case ids of files in `dir` matching `template`.
    pub fn discover(template: &str, dir: &Path) -> Result<Vec<String>> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            if let Some(id) = entry
                .file_name()
                .to_str()
                .and_then(|n| Self::match_case(template, n))
            {
                ids.push(id);
            }
        }
        ids.sort();
        Ok(ids)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub task: Task,
    pub windows: WindowTable,
    /// Z-score each channel after windowing.
    pub zscore: bool,
    pub crop: CropConfig,
    /// Label schema file; task defaults are used when absent.
    pub labels: Option<PathBuf>,
    pub tau_mm: f64,
    pub workers: usize,
    pub layout: CaseLayout,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            task: Task::Oars,
            windows: WindowTable::default(),
            zscore: false,
            crop: CropConfig::default(),
            labels: None,
            tau_mm: DEFAULT_TAU_MM,
            workers: 1,
            layout: CaseLayout::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_mm > 0.0) {
            return Err(Error::Validation {
                field: "tau_mm".into(),
                reason: "must be positive".into(),
            });
        }
        if self.workers == 0 {
            return Err(Error::Validation {
                field: "workers".into(),
                reason: "must be at least 1".into(),
            });
        }
        let l = &self.layout;
        for (field, t) in [
            ("layout.contrast", &l.contrast),
            ("layout.plain", &l.plain),
            ("layout.label", &l.label),
            ("layout.body", &l.body),
            ("layout.record", &l.record),
        ] {
            if t.matches("{case}").count() != 1 {
                return Err(Error::Validation {
                    field: field.into(),
                    reason: "template must contain `{case}` exactly once".into(),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is plain data") + "\n"
    }
}
