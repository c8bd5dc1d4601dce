use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::StructureScore;

/// Mean, population standard deviation and median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Summary {
    /// Values are sorted before summation so the result does not depend on
    /// input order.
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        sq.sort_by(f64::total_cmp);
        let std = (sq.iter().sum::<f64>() / n).sqrt();
        let mid = v.len() / 2;
        let median = if v.len() % 2 == 1 {
            v[mid]
        } else {
            (v[mid - 1] + v[mid]) / 2.0
        };
        Ok(Summary { mean, std, median })
    }
}

/// Dice counts in the ranges `>= 0.90`, `[0.80, 0.90)` and `< 0.80`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiceBins {
    pub high: usize,
    pub mid: usize,
    pub low: usize,
}

impl DiceBins {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut b = DiceBins::default();
        for d in values {
            if d >= 0.90 {
                b.high += 1;
            } else if d >= 0.80 {
                b.mid += 1;
            } else {
                b.low += 1;
            }
        }
        b
    }

    pub fn total(&self) -> usize {
        self.high + self.mid + self.low
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub dice: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub nsd: Summary,
    pub bins: DiceBins,
}

pub fn aggregate(scores: &[StructureScore]) -> Result<Aggregate> {
    let pick = |f: fn(&StructureScore) -> f64| Summary::of(&scores.iter().map(f).collect::<Vec<_>>());
    Ok(Aggregate {
        count: scores.len(),
        dice: pick(|s| s.dice)?,
        precision: pick(|s| s.precision)?,
        recall: pick(|s| s.recall)?,
        nsd: pick(|s| s.nsd)?,
        bins: DiceBins::of(scores.iter().map(|s| s.dice)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScores {
    pub case_id: String,
    pub scores: Vec<StructureScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSummary {
    pub label_id: u32,
    pub label_name: String,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub both_empty: String,
    pub one_empty: String,
    pub surface: String,
    pub std: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            both_empty: "dice = precision = recall = nsd = 1.0, flagged both_empty".into(),
            one_empty: "dice = nsd = 0.0; precision or recall with a zero denominator = 0.0".into(),
            surface: "foreground voxels with a background or out-of-grid face neighbour; voxel-centre distances in mm".into(),
            std: "population".into(),
        }
    }
}

/// Full evaluation output: per-case scores, per-structure and overall
/// aggregates, and Dice bins over per-structure mean Dice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tau_mm: f64,
    pub conventions: Conventions,
    pub both_empty_count: usize,
    pub cases: Vec<CaseScores>,
    pub per_structure: Vec<StructureSummary>,
    pub overall: Aggregate,
    pub structure_bins: DiceBins,
}

impl MetricsReport {
    /// Cases are sorted by id and scores by label, so the report does not
    /// depend on the order in which cases were evaluated.
    pub fn build(
        mut cases: Vec<CaseScores>,
        names: &BTreeMap<u32, String>,
        tau_mm: f64,
    ) -> Result<Self> {
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        for c in &mut cases {
            c.scores.sort_by_key(|s| s.label_id);
        }
        let all: Vec<StructureScore> = cases.iter().flat_map(|c| c.scores.clone()).collect();
        let overall = aggregate(&all)?;
        let mut by_label: BTreeMap<u32, Vec<StructureScore>> = BTreeMap::new();
        for s in &all {
            by_label.entry(s.label_id).or_default().push(s.clone());
        }
        let per_structure = by_label
            .into_iter()
            .map(|(id, scores)| {
                Ok(StructureSummary {
                    label_id: id,
                    label_name: names.get(&id).cloned().unwrap_or_default(),
                    aggregate: aggregate(&scores)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let structure_bins = DiceBins::of(per_structure.iter().map(|s| s.aggregate.dice.mean));
        Ok(MetricsReport {
            tau_mm,
            conventions: Conventions::default(),
            both_empty_count: all.iter().filter(|s| s.both_empty).count(),
            cases,
            per_structure,
            overall,
            structure_bins,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data") + "\n"
    }

    /// One row per structure per case.
    pub fn to_csv(&self) -> String {
        let names: BTreeMap<u32, &str> = self
            .per_structure
            .iter()
            .map(|s| (s.label_id, s.label_name.as_str()))
            .collect();
        let mut out = String::from("case_id,label_id,label_name,dice,precision,recall,nsd\n");
        for c in &self.cases {
            for s in &c.scores {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    csv_field(&c.case_id),
                    s.label_id,
                    csv_field(names.get(&s.label_id).copied().unwrap_or("")),
                    sig6(s.dice),
                    sig6(s.precision),
                    sig6(s.recall),
                    sig6(s.nsd)
                );
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Fixed-point rendering with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.5}", x);
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    // rounding can carry into a new digit (0.9999996 -> 1.000000)
    let rounded: f64 = s.parse().unwrap_or(x);
    let m2 = rounded.abs().log10().floor() as i32;
    if m2 != magnitude {
        format!("{:.*}", (5 - m2).max(0) as usize, rounded)
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(id: u32, dice: f64) -> StructureScore {
        StructureScore {
            label_id: id,
            dice,
            precision: dice,
            recall: dice,
            nsd: dice,
            tau_mm: 2.0,
            both_empty: false,
        }
    }

    #[test]
    fn bins_and_median() {
        let a = aggregate(&[score(1, 0.95), score(2, 0.85), score(3, 0.50)]).unwrap();
        assert_eq!(a.bins, DiceBins { high: 1, mid: 1, low: 1 });
        assert_eq!(a.dice.median, 0.85);
    }

    #[test]
    fn bin_edges_inclusive_below() {
        let b = DiceBins::of([0.90, 0.80, 0.7999999, 0.8999999]);
        assert_eq!(b, DiceBins { high: 1, mid: 2, low: 1 });
    }

    #[test]
    fn single_and_constant() {
        let a = aggregate(&[score(1, 0.7)]).unwrap();
        assert_eq!((a.dice.mean, a.dice.median, a.dice.std), (0.7, 0.7, 0.0));
        let c = aggregate(&[score(1, 0.93), score(2, 0.93), score(3, 0.93)]).unwrap();
        assert_eq!(c.dice.std, 0.0);
        assert_eq!(c.bins, DiceBins { high: 3, mid: 0, low: 0 });
    }

    #[test]
    fn even_median_and_population_std() {
        let s = Summary::of(&[1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
        assert!(matches!(aggregate(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn permutation_invariant() {
        let xs = [0.1, 0.7, 0.3333, 0.9, 0.123456789, 0.5];
        let base = Summary::of(&xs).unwrap();
        let mut ys = xs;
        ys.reverse();
        ys.swap(1, 4);
        assert_eq!(Summary::of(&ys).unwrap(), base);
    }

    #[test]
    fn significant_digits() {
        assert_eq!(sig6(1.0), "1.00000");
        assert_eq!(sig6(0.5), "0.500000");
        assert_eq!(sig6(2.0 / 3.0), "0.666667");
        assert_eq!(sig6(0.0), "0.00000");
        assert_eq!(sig6(0.9999996), "1.00000");
        assert_eq!(sig6(0.012345678), "0.0123457");
    }

    #[test]
    fn report_is_sorted_and_csv_shaped() {
        let cases = vec![
            CaseScores {
                case_id: "b".into(),
                scores: vec![score(2, 0.5), score(1, 0.95)],
            },
            CaseScores {
                case_id: "a".into(),
                scores: vec![score(1, 0.85), score(2, 0.5)],
            },
        ];
        let names = BTreeMap::from([(1, "Brain".to_string()), (2, "Lens, left".to_string())]);
        let r = MetricsReport::build(cases, &names, 2.0).unwrap();
        assert_eq!(r.cases[0].case_id, "a");
        assert_eq!(r.cases[1].scores[0].label_id, 1);
        assert_eq!(r.structure_bins.total(), 2);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "case_id,label_id,label_name,dice,precision,recall,nsd");
        assert_eq!(lines[1], "a,1,Brain,0.850000,0.850000,0.850000,0.850000");
        assert_eq!(lines[2], "a,2,\"Lens, left\",0.500000,0.500000,0.500000,0.500000");
        assert_eq!(lines.len(), 5);
        let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
