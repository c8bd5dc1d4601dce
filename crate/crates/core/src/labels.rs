//! Label taxonomy, inventories and substructure merging.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Mask};

/// Organ-at-risk target names, ids 1..=45 in this order.
pub const OAR_NAMES: [&str; 45] = [
    "Brain",
    "BrainStem",
    "Chiasm",
    "Cochlea_L",
    "Cochlea_R",
    "Esophagus",
    "Eustachian_Tube_L",
    "Eustachian_Tube_R",
    "Eye_L",
    "Eye_R",
    "Hippocampus_L",
    "Hippocampus_R",
    "Internal_Auditory_Canal_L",
    "Internal_Auditory_Canal_R",
    "Larynx",
    "Larynx_Glottic",
    "Larynx_Supraglottic",
    "Lens_L",
    "Lens_R",
    "Mandible_L",
    "Mandible_R",
    "Mastoid_L",
    "Mastoid_R",
    "Middle_Ear_L",
    "Middle_Ear_R",
    "Optic_Nerve_L",
    "Optic_Nerve_R",
    "Oral_Cavity",
    "Parotid_L",
    "Parotid_R",
    "Pharyngeal_Constrictor_Muscle",
    "Pituitary",
    "Spinal_Cord",
    "Submandibular_L",
    "Submandibular_R",
    "Temporal_Lobe_L",
    "Temporal_Lobe_R",
    "Thyroid",
    "TMJ_L",
    "TMJ_R",
    "Trachea",
    "Tympanic_Cavity_L",
    "Tympanic_Cavity_R",
    "Vestibular_Semicircular_Canal_L",
    "Vestibular_Semicircular_Canal_R",
];

pub const GTVNX_ID: u32 = 1;
pub const GTVND_ID: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryEntry {
    pub name: String,
    pub voxel_count: u64,
}

/// Nonzero labels present in a volume with their voxel counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInventory {
    pub entries: BTreeMap<u32, InventoryEntry>,
}

impl LabelInventory {
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn count(&self, id: u32) -> u64 {
        self.entries.get(&id).map_or(0, |e| e.voxel_count)
    }

    pub fn total(&self) -> u64 {
        self.entries.values().map(|e| e.voxel_count).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_names(mut self, schema: &LabelSchema) -> Self {
        for (id, e) in &mut self.entries {
            if let Some(name) = schema.name_of(*id) {
                e.name = name.to_string();
            }
        }
        self
    }
}

pub fn inventory(v: &LabelVolume) -> LabelInventory {
    let counts = v
        .data()
        .par_chunks(1 << 16)
        .map(|chunk| {
            let mut m = BTreeMap::new();
            for &l in chunk.iter().filter(|&&l| l != 0) {
                *m.entry(l).or_insert(0u64) += 1;
            }
            m
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, c) in b {
                *a.entry(k).or_insert(0) += c;
            }
            a
        });
    LabelInventory {
        entries: counts
            .into_iter()
            .map(|(id, voxel_count)| {
                (
                    id,
                    InventoryEntry {
                        name: String::new(),
                        voxel_count,
                    },
                )
            })
            .collect(),
    }
}

/// Surjective relabeling onto a declared target set. Unlisted targets map to
/// themselves; sources are never targets, so applying the map twice is a no-op.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeMap {
    targets: BTreeSet<u32>,
    sources: BTreeMap<u32, u32>,
}

impl MergeMap {
    pub fn new(
        targets: impl IntoIterator<Item = u32>,
        merges: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        let targets: BTreeSet<u32> = targets.into_iter().collect();
        if targets.contains(&0) {
            return Err(Error::InvalidMergeMap("label 0 is background, not a target".into()));
        }
        let mut sources = BTreeMap::new();
        for (s, t) in merges {
            if s == 0 {
                return Err(Error::InvalidMergeMap("label 0 cannot be merged".into()));
            }
            if targets.contains(&s) {
                return Err(Error::InvalidMergeMap(format!(
                    "label {s} is both a target and a merge source"
                )));
            }
            if !targets.contains(&t) {
                return Err(Error::InvalidMergeMap(format!(
                    "merge {s} -> {t} points at an undeclared target"
                )));
            }
            if sources.insert(s, t).is_some() {
                return Err(Error::InvalidMergeMap(format!("label {s} is merged twice")));
            }
        }
        Ok(MergeMap { targets, sources })
    }

    pub fn identity(targets: impl IntoIterator<Item = u32>) -> Result<Self> {
        MergeMap::new(targets, [])
    }

    pub fn targets(&self) -> &BTreeSet<u32> {
        &self.targets
    }

    pub fn merges(&self) -> &BTreeMap<u32, u32> {
        &self.sources
    }

    /// Target for `id`; `None` when `id` is unknown. 0 maps to 0.
    pub fn map(&self, id: u32) -> Option<u32> {
        if id == 0 || self.targets.contains(&id) {
            Some(id)
        } else {
            self.sources.get(&id).copied()
        }
    }
}

/// Relabels every voxel through `m`. Labels unknown to the map are an error.
pub fn apply_merge(v: &LabelVolume, m: &MergeMap) -> Result<LabelVolume> {
    let unknown: Vec<u32> = inventory(v).ids().filter(|&id| m.map(id).is_none()).collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownLabels(unknown));
    }
    Ok(v.map(|&l| m.map(l).expect("checked above")))
}

pub fn binarize(v: &LabelVolume, id: u32) -> Mask {
    v.map(|&l| l == id)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetLabel {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeEntry {
    pub source_id: u32,
    pub target_id: u32,
}

/// Label schema file: named targets plus substructure merges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub targets: Vec<TargetLabel>,
    #[serde(default)]
    pub merges: Vec<MergeEntry>,
}

impl LabelSchema {
    /// The 45 organ-at-risk targets without merges. The substructure ids
    /// (46..=54) and their parents must come from a schema file.
    pub fn oars() -> Self {
        LabelSchema {
            targets: OAR_NAMES
                .iter()
                .enumerate()
                .map(|(i, n)| TargetLabel {
                    id: i as u32 + 1,
                    name: n.to_string(),
                })
                .collect(),
            merges: Vec::new(),
        }
    }

    pub fn gtvs() -> Self {
        LabelSchema {
            targets: vec![
                TargetLabel {
                    id: GTVNX_ID,
                    name: "GTVnx".into(),
                },
                TargetLabel {
                    id: GTVND_ID,
                    name: "GTVnd".into(),
                },
            ],
            merges: Vec::new(),
        }
    }

    pub fn merge_map(&self) -> Result<MergeMap> {
        let mut seen = BTreeSet::new();
        for t in &self.targets {
            if !seen.insert(t.id) {
                return Err(Error::InvalidMergeMap(format!("target {} declared twice", t.id)));
            }
        }
        MergeMap::new(
            self.targets.iter().map(|t| t.id),
            self.merges.iter().map(|m| (m.source_id, m.target_id)),
        )
    }

    pub fn name_of(&self, id: u32) -> Option<&str> {
        self.targets
            .iter()
            .find(|t| t.id == id)
            .map(|t| t.name.as_str())
    }

    pub fn target_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.targets.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        ids
    }

    /// Loads and validates a schema file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: LabelSchema = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        schema.merge_map()?;
        Ok(schema)
    }
}
