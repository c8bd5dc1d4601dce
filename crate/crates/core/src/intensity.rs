//! Hounsfield windowing and z-score normalization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{IntensityVolume, Mask};

/// Standard deviations at or below this are rejected by [`zscore`].
pub const MIN_STD: f64 = 1e-8;

const CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Oars,
    Gtvs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Contrast,
    Plain,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Oars => "oars",
            Task::Gtvs => "gtvs",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oars" => Ok(Task::Oars),
            "gtvs" => Ok(Task::Gtvs),
            other => Err(Error::Parameter(format!("unknown task `{other}`"))),
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Contrast => "contrast",
            Modality::Plain => "plain",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaskModalityKey {
    pub task: Task,
    pub modality: Modality,
}

impl TaskModalityKey {
    pub fn new(task: Task, modality: Modality) -> Self {
        TaskModalityKey { task, modality }
    }
}

/// Closed HU range `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct IntensityWindow {
    lo: f64,
    hi: f64,
}

impl IntensityWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo < hi {
            Ok(IntensityWindow { lo, hi })
        } else {
            Err(Error::Parameter(format!("window lower bound {lo} is not below {hi}")))
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }
}

impl TryFrom<[f64; 2]> for IntensityWindow {
    type Error = Error;

    fn try_from([lo, hi]: [f64; 2]) -> Result<Self> {
        IntensityWindow::new(lo, hi)
    }
}

impl From<IntensityWindow> for [f64; 2] {
    fn from(w: IntensityWindow) -> Self {
        [w.lo, w.hi]
    }
}

/// Window per task and modality. Missing keys in a JSON override fall back
/// to the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowTable {
    #[serde(rename = "oars.contrast")]
    pub oars_contrast: IntensityWindow,
    #[serde(rename = "oars.plain")]
    pub oars_plain: IntensityWindow,
    #[serde(rename = "gtvs.contrast")]
    pub gtvs_contrast: IntensityWindow,
    #[serde(rename = "gtvs.plain")]
    pub gtvs_plain: IntensityWindow,
}

impl Default for WindowTable {
    fn default() -> Self {
        WindowTable {
            oars_contrast: IntensityWindow { lo: -400.0, hi: 2000.0 },
            oars_plain: IntensityWindow { lo: -300.0, hi: 800.0 },
            gtvs_contrast: IntensityWindow { lo: -1000.0, hi: 1000.0 },
            gtvs_plain: IntensityWindow { lo: -600.0, hi: 600.0 },
        }
    }
}

impl WindowTable {
    pub fn get(&self, key: TaskModalityKey) -> IntensityWindow {
        match (key.task, key.modality) {
            (Task::Oars, Modality::Contrast) => self.oars_contrast,
            (Task::Oars, Modality::Plain) => self.oars_plain,
            (Task::Gtvs, Modality::Contrast) => self.gtvs_contrast,
            (Task::Gtvs, Modality::Plain) => self.gtvs_plain,
        }
    }
}

/// Default window for a task/modality pair.
pub fn window_for(key: TaskModalityKey) -> IntensityWindow {
    WindowTable::default().get(key)
}

/// Saturates every voxel into `w`. Geometry is unchanged.
pub fn clamp_window(v: &IntensityVolume, w: IntensityWindow) -> IntensityVolume {
    v.map(|&x| w.apply(x))
}

fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Sum with fixed chunking so the result does not depend on thread scheduling.
fn deterministic_sum<F>(values: &[f64], f: F) -> f64
where
    F: Fn(f64) -> f64 + Sync,
{
    let partials: Vec<f64> = values
        .par_chunks(CHUNK)
        .map(|c| c.iter().map(|&x| f(x)).sum())
        .collect();
    pairwise_sum(&partials)
}

/// Population mean and standard deviation (two-pass, 64-bit accumulation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

pub fn moments(values: &[f64]) -> Result<Moments> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = deterministic_sum(values, |x| x) / n;
    let var = deterministic_sum(values, |x| (x - mean) * (x - mean)) / n;
    Ok(Moments {
        mean,
        std: var.sqrt(),
    })
}

/// `(x - mean) / std` with statistics over the whole volume.
pub fn zscore(v: &IntensityVolume) -> Result<IntensityVolume> {
    let m = moments(v.data())?;
    normalize_with(v, m)
}

/// Like [`zscore`] but with statistics taken over `mask` only; every voxel is
/// still normalized.
pub fn zscore_masked(v: &IntensityVolume, mask: &Mask) -> Result<IntensityVolume> {
    v.geometry().check_matches(mask.geometry())?;
    let selected: Vec<f64> = v
        .data()
        .iter()
        .zip(mask.data())
        .filter_map(|(&x, &m)| m.then_some(x))
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyMask);
    }
    normalize_with(v, moments(&selected)?)
}

fn normalize_with(v: &IntensityVolume, m: Moments) -> Result<IntensityVolume> {
    if !(m.std > MIN_STD) {
        return Err(Error::DegenerateStatistics(m.std));
    }
    Ok(v.map(|&x| (x - m.mean) / m.std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{GridGeometry, Volume};
    use proptest::prelude::*;

    fn line(values: Vec<f64>) -> IntensityVolume {
        let g = GridGeometry::new([values.len(), 1, 1], [1.0; 3]).unwrap();
        Volume::from_vec(g, values).unwrap()
    }

    #[test]
    fn default_windows() {
        let w = |t, m| {
            let w = window_for(TaskModalityKey::new(t, m));
            (w.lo(), w.hi())
        };
        assert_eq!(w(Task::Oars, Modality::Contrast), (-400.0, 2000.0));
        assert_eq!(w(Task::Oars, Modality::Plain), (-300.0, 800.0));
        assert_eq!(w(Task::Gtvs, Modality::Contrast), (-1000.0, 1000.0));
        assert_eq!(w(Task::Gtvs, Modality::Plain), (-600.0, 600.0));
    }

    #[test]
    fn table_override_from_json() {
        let t: WindowTable = serde_json::from_str(r#"{"oars.plain": [-200, 700]}"#).unwrap();
        assert_eq!(t.oars_plain, IntensityWindow::new(-200.0, 700.0).unwrap());
        assert_eq!(t.oars_contrast, WindowTable::default().oars_contrast);
        let bad = serde_json::from_str::<WindowTable>(r#"{"gtvs.plain": [5, 5]}"#);
        assert!(bad.is_err());
        let round: WindowTable =
            serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(round, t);
    }

    #[test]
    fn clamp_saturates() {
        let w = IntensityWindow::new(-400.0, 2000.0).unwrap();
        let out = clamp_window(&line(vec![-1000.0, 500.0, 2500.0]), w);
        assert_eq!(out.data(), &[-400.0, 500.0, 2000.0]);
    }

    #[test]
    fn zscore_two_levels() {
        let out = zscore(&line(vec![0.0, 2.0, 0.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn zscore_constant_rejected() {
        assert!(matches!(
            zscore(&line(vec![42.0; 10])),
            Err(Error::DegenerateStatistics(_))
        ));
    }

    #[test]
    fn zscore_masked_uses_foreground_stats() {
        let v = line(vec![-1000.0, 0.0, 2.0, -1000.0]);
        let g = v.geometry().clone();
        let m = Volume::from_vec(g, vec![false, true, true, false]).unwrap();
        let out = zscore_masked(&v, &m).unwrap();
        assert_eq!(&out.data()[1..3], &[-1.0, 1.0]);
        assert_eq!(out.data()[0], -1001.0);
    }

    #[test]
    fn moments_match_naive_two_pass() {
        let values: Vec<f64> = (0..100_000)
            .map(|i| ((i * 7919) % 4001) as f64 - 1000.0 + 1e6)
            .collect();
        let n = values.len() as f64;
        let mean: f64 = values.iter().sum::<f64>() / n;
        let var: f64 = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m = moments(&values).unwrap();
        assert!(((m.mean - mean) / mean).abs() < 1e-9);
        assert!(((m.std - var.sqrt()) / var.sqrt()).abs() < 1e-9);
        // bit-identical across repeated runs
        assert_eq!(moments(&values).unwrap(), m);
    }

    proptest! {
        #[test]
        fn clamp_idempotent_monotone_bounded(
            xs in proptest::collection::vec(-5000.0f64..5000.0, 1..64),
            lo in -2000.0f64..0.0,
            width in 1.0f64..3000.0,
        ) {
            let w = IntensityWindow::new(lo, lo + width).unwrap();
            let v = line(xs.clone());
            let once = clamp_window(&v, w);
            prop_assert_eq!(&clamp_window(&once, w), &once);
            for (a, b) in xs.iter().zip(xs.iter().skip(1)) {
                let (ca, cb) = (w.apply(*a), w.apply(*b));
                if a <= b { prop_assert!(ca <= cb) } else { prop_assert!(ca >= cb) }
            }
            prop_assert!(once.data().iter().all(|&x| x >= w.lo() && x <= w.hi()));
        }

        #[test]
        fn zscore_affine_invariant(
            xs in proptest::collection::vec(-1000.0f64..1000.0, 2..200),
            a in 0.01f64..100.0,
            b in -1000.0f64..1000.0,
        ) {
            let v = line(xs.clone());
            prop_assume!(moments(v.data()).unwrap().std > 1e-3);
            let z = zscore(&v).unwrap();
            let shifted = zscore(&line(xs.iter().map(|x| a * x + b).collect())).unwrap();
            for (p, q) in z.data().iter().zip(shifted.data()) {
                prop_assert!((p - q).abs() < 1e-5);
            }
            let zz = zscore(&z).unwrap();
            for (p, q) in z.data().iter().zip(zz.data()) {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }
    }
}
