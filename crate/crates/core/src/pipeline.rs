//! Directory-level batch steps: preprocess, crop, restore, merge, evaluate
//! and phantom generation.
//!
//! Each step processes cases in parallel on a pool of `config.workers`
//! threads. A failing case is recorded and the batch continues; outputs
//! that aggregate over cases are written by a single reducer in case-id
//! order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CaseLayout, PipelineConfig};
use crate::error::{Error, Result};
use crate::intensity::{clamp_window, zscore, IntensityWindow, Modality, TaskModalityKey};
use crate::labels::{apply_merge, LabelSchema, MergeMap};
use crate::metrics::{evaluate_case, report::CaseScores, MetricsReport};
use crate::nifti::{read_file, write_file, NiftiVolume};
use crate::phantom::{generate, PhantomSpec};
use crate::roi::{body_mask_threshold, crop, fit_bbox, label_components, largest_component, restore, CropRecord};
use crate::volume::{validate_pair, IntensityVolume, LabelVolume};
use crate::intensity::Task;

/// Outcome of a batch step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub succeeded: Vec<String>,
    /// `(case_id, message)` pairs, sorted by case id.
    pub failed: Vec<(String, String)>,
}

impl BatchSummary {
    pub fn is_success(&self) -> bool {
        self.failed.is_empty()
    }

    fn from_results(results: Vec<(String, Result<()>)>) -> Self {
        let mut s = BatchSummary::default();
        for (id, r) in results {
            match r {
                Ok(()) => s.succeeded.push(id),
                Err(e) => s.failed.push((id, e.to_string())),
            }
        }
        s.succeeded.sort();
        s.failed.sort();
        s
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("cannot build worker pool: {e}")))
}

fn run_cases<F>(cfg: &PipelineConfig, ids: &[String], f: F) -> Result<Vec<(String, Result<()>)>>
where
    F: Fn(&str) -> Result<()> + Sync,
{
    let pool = pool(cfg.workers)?;
    Ok(pool.install(|| ids.par_iter().map(|id| (id.clone(), f(id))).collect()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_intensity(path: &Path) -> Result<IntensityVolume> {
    Ok(read_file(path)?.into_intensity())
}

fn read_labels(path: &Path) -> Result<LabelVolume> {
    read_file(path)?.into_labels()
}

fn write_labels(path: &Path, v: &LabelVolume) -> Result<()> {
    write_file(path, &NiftiVolume::from_labels(v)?)
}

fn write_intensity(path: &Path, v: &IntensityVolume) -> Result<()> {
    write_file(path, &NiftiVolume::from_intensity(v))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-case record of what preprocessing applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessEntry {
    pub case_id: String,
    pub task: Task,
    pub contrast_window: IntensityWindow,
    pub plain_window: IntensityWindow,
    pub zscore: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessLog {
    pub entries: Vec<PreprocessEntry>,
    pub failed: Vec<(String, String)>,
}

pub const PREPROCESS_LOG: &str = "preprocess_log.json";

/// Windows (and optionally z-scores) every contrast/plain pair in `input`.
pub fn preprocess_dir(input: &Path, output: &Path, cfg: &PipelineConfig) -> Result<BatchSummary> {
    cfg.validate()?;
    ensure_dir(output)?;
    let layout = &cfg.layout;
    let ids = CaseLayout::discover(&layout.contrast, input)?;
    let cw = cfg.windows.get(TaskModalityKey::new(cfg.task, Modality::Contrast));
    let pw = cfg.windows.get(TaskModalityKey::new(cfg.task, Modality::Plain));
    let results = run_cases(cfg, &ids, |id| {
        let contrast = read_intensity(&CaseLayout::path(&layout.contrast, input, id))?;
        let plain = read_intensity(&CaseLayout::path(&layout.plain, input, id))?;
        let case = validate_pair(contrast, plain, id)?;
        let mut c = clamp_window(&case.contrast_ct, cw);
        let mut p = clamp_window(&case.plain_ct, pw);
        if cfg.zscore {
            c = zscore(&c)?;
            p = zscore(&p)?;
        }
        write_intensity(&CaseLayout::path(&layout.contrast, output, id), &c)?;
        write_intensity(&CaseLayout::path(&layout.plain, output, id), &p)
    })?;
    let summary = BatchSummary::from_results(results);
    let log = PreprocessLog {
        entries: summary
            .succeeded
            .iter()
            .map(|id| PreprocessEntry {
                case_id: id.clone(),
                task: cfg.task,
                contrast_window: cw,
                plain_window: pw,
                zscore: cfg.zscore,
            })
            .collect(),
        failed: summary.failed.clone(),
    };
    write_json(&output.join(PREPROCESS_LOG), &log)?;
    Ok(summary)
}

/// Crops the preprocessed volumes in `input` around the body found in the
/// raw contrast CT in `raw` and writes a crop record per case. Labels found
/// in `raw` are cropped as well.
pub fn crop_dir(raw: &Path, input: &Path, output: &Path, cfg: &PipelineConfig) -> Result<BatchSummary> {
    cfg.validate()?;
    ensure_dir(output)?;
    let layout = &cfg.layout;
    let c = &cfg.crop;
    let ids = CaseLayout::discover(&layout.contrast, input)?;
    let results = run_cases(cfg, &ids, |id| {
        let raw_ct = read_intensity(&CaseLayout::path(&layout.contrast, raw, id))?;
        let body = body_mask_threshold(&raw_ct, c.threshold_hu);
        let components = label_components(&body, c.connectivity);
        let largest = largest_component(&components)?;
        let bbox = fit_bbox(&largest, c.margin_px, c.full_z)?;

        let mut record = None;
        for template in [&layout.contrast, &layout.plain] {
            let v = read_intensity(&CaseLayout::path(template, input, id))?;
            v.geometry().check_matches(raw_ct.geometry())?;
            let (cropped, rec) = crop(&v, bbox)?;
            write_intensity(&CaseLayout::path(template, output, id), &cropped)?;
            record = Some(rec);
        }
        let label_path = CaseLayout::path(&layout.label, raw, id);
        if label_path.exists() {
            let labels = read_labels(&label_path)?;
            labels.geometry().check_matches(raw_ct.geometry())?;
            let (cropped, _) = crop(&labels, bbox)?;
            write_labels(&CaseLayout::path(&layout.label, output, id), &cropped)?;
        }
        let record = record.expect("two modalities").with_case(id, c.margin_px);
        record.save(&CaseLayout::path(&layout.record, output, id))
    })?;
    Ok(BatchSummary::from_results(results))
}

/// Puts cropped label predictions back on their original grids.
pub fn restore_dir(pred: &Path, records: &Path, output: &Path, cfg: &PipelineConfig) -> Result<BatchSummary> {
    cfg.validate()?;
    ensure_dir(output)?;
    let layout = &cfg.layout;
    let ids = CaseLayout::discover(&layout.label, pred)?;
    let results = run_cases(cfg, &ids, |id| {
        let rec_path = CaseLayout::path(&layout.record, records, id);
        if !rec_path.exists() {
            return Err(Error::RecordMismatch(format!(
                "no crop record at {}",
                rec_path.display()
            )));
        }
        let rec = CropRecord::load(&rec_path)?;
        let cropped = read_labels(&CaseLayout::path(&layout.label, pred, id))?;
        let full = restore(&cropped, &rec, 0)?;
        write_labels(&CaseLayout::path(&layout.label, output, id), &full)
    })?;
    Ok(BatchSummary::from_results(results))
}

/// Schema from the config, or the task default.
pub fn load_schema(cfg: &PipelineConfig) -> Result<LabelSchema> {
    match &cfg.labels {
        Some(path) => LabelSchema::load(path),
        None => Ok(match cfg.task {
            Task::Oars => LabelSchema::oars(),
            Task::Gtvs => LabelSchema::gtvs(),
        }),
    }
}

/// Applies the schema's merge map to every label volume in `input`.
pub fn merge_dir(input: &Path, output: &Path, schema: &LabelSchema, cfg: &PipelineConfig) -> Result<BatchSummary> {
    cfg.validate()?;
    ensure_dir(output)?;
    let map = schema.merge_map()?;
    let layout = &cfg.layout;
    let ids = CaseLayout::discover(&layout.label, input)?;
    let results = run_cases(cfg, &ids, |id| {
        let v = read_labels(&CaseLayout::path(&layout.label, input, id))?;
        let merged = apply_merge(&v, &map)?;
        write_labels(&CaseLayout::path(&layout.label, output, id), &merged)
    })?;
    Ok(BatchSummary::from_results(results))
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Scores every case present in both directories and writes `report.json`
/// and `report.csv` to `output`.
///
/// With a schema file configured, both volumes are merged first and every
/// schema target is scored. Otherwise each case is scored on the labels
/// present in either volume.
pub fn evaluate_dirs(
    pred: &Path,
    reference: &Path,
    output: &Path,
    cfg: &PipelineConfig,
) -> Result<(MetricsReport, BatchSummary)> {
    cfg.validate()?;
    let layout = &cfg.layout;
    let pred_ids: BTreeSet<String> = CaseLayout::discover(&layout.label, pred)?.into_iter().collect();
    let ref_ids: BTreeSet<String> = CaseLayout::discover(&layout.label, reference)?.into_iter().collect();
    if pred_ids != ref_ids {
        let only_pred: Vec<_> = pred_ids.difference(&ref_ids).cloned().collect();
        let only_ref: Vec<_> = ref_ids.difference(&pred_ids).cloned().collect();
        return Err(Error::Parameter(format!(
            "case sets differ: only in predictions {only_pred:?}, only in references {only_ref:?}"
        )));
    }
    if pred_ids.is_empty() {
        return Err(Error::EmptyInput);
    }
    let schema = load_schema(cfg)?;
    let merge: Option<MergeMap> = match &cfg.labels {
        Some(_) => Some(schema.merge_map()?),
        None => None,
    };
    let ids: Vec<String> = pred_ids.into_iter().collect();
    let pool = pool(cfg.workers)?;
    let results: Vec<(String, Result<Vec<_>>)> = pool.install(|| {
        ids.par_iter()
            .map(|id| {
                let r = (|| {
                    let mut p = read_labels(&CaseLayout::path(&layout.label, pred, id))?;
                    let mut r = read_labels(&CaseLayout::path(&layout.label, reference, id))?;
                    let labels: Vec<u32> = if let Some(m) = &merge {
                        p = apply_merge(&p, m)?;
                        r = apply_merge(&r, m)?;
                        m.targets().iter().copied().collect()
                    } else {
                        let mut set: BTreeSet<u32> = p.data().iter().copied().collect();
                        set.extend(r.data().iter().copied());
                        set.remove(&0);
                        set.into_iter().collect()
                    };
                    evaluate_case(&p, &r, &labels, cfg.tau_mm)
                })();
                (id.clone(), r)
            })
            .collect()
    });

    let mut cases = Vec::new();
    let mut outcomes = Vec::new();
    for (id, r) in results {
        match r {
            Ok(scores) => {
                cases.push(CaseScores {
                    case_id: id.clone(),
                    scores,
                });
                outcomes.push((id, Ok(())));
            }
            Err(e) => outcomes.push((id, Err(e))),
        }
    }
    let summary = BatchSummary::from_results(outcomes);
    let names: BTreeMap<u32, String> = schema.targets.iter().map(|t| (t.id, t.name.clone())).collect();
    let report = MetricsReport::build(cases, &names, cfg.tau_mm)?;
    ensure_dir(output)?;
    fs::write(output.join(REPORT_JSON), report.to_json()).map_err(|e| Error::io(output, e))?;
    fs::write(output.join(REPORT_CSV), report.to_csv()).map_err(|e| Error::io(output, e))?;
    Ok((report, summary))
}

pub const PHANTOM_SPEC: &str = "phantom_spec.json";

/// Writes `count` phantom cases (`phantom_000`, ...) generated from `spec`
/// with seeds `spec.seed + i`, plus the spec itself.
pub fn phantom_dir(output: &Path, spec: &PhantomSpec, count: usize, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    spec.validate()?;
    ensure_dir(output)?;
    write_json(&output.join(PHANTOM_SPEC), spec)?;
    let layout = &cfg.layout;
    let ids: Vec<String> = (0..count).map(|i| format!("phantom_{i:03}")).collect();
    let results = run_cases(cfg, &ids, |id| {
        let i: u64 = id[8..].parse().expect("formatted above");
        let mut s = spec.clone();
        s.seed = spec.seed.wrapping_add(i);
        let ph = generate(&s)?;
        write_intensity(&CaseLayout::path(&layout.contrast, output, id), &ph.contrast_ct)?;
        write_intensity(&CaseLayout::path(&layout.plain, output, id), &ph.plain_ct)?;
        write_labels(&CaseLayout::path(&layout.label, output, id), &ph.labels)?;
        write_file(
            &CaseLayout::path(&layout.body, output, id),
            &NiftiVolume::from_mask(&ph.body_mask),
        )
    })?;
    let summary = BatchSummary::from_results(results);
    if let Some((id, msg)) = summary.failed.first() {
        return Err(Error::Parameter(format!("phantom {id}: {msg}")));
    }
    Ok(ids
        .iter()
        .map(|id| CaseLayout::path(&layout.contrast, output, id))
        .collect())
}
