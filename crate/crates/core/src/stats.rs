//! Dataset statistics: where the largest object sits in its caption, how
//! CLS attention splits across objects, and which prompt positions survive
//! into generated images.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectArea {
    pub name: String,
    pub area: f64,
}

/// Objects of one image in caption mention order, with segmented areas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub sample_id: String,
    pub objects: Vec<ObjectArea>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionHistogram {
    pub n_objects_filter: Option<usize>,
    /// 1-based caption position of the largest object -> fraction of records.
    pub fractions: BTreeMap<usize, f64>,
    pub counts: BTreeMap<usize, usize>,
    pub n_records: usize,
    /// Records dropped because fewer than two objects had a non-zero area.
    pub skipped_records: usize,
    /// Zero-area objects removed before ranking.
    pub dropped_objects: usize,
}

/// Distribution of the largest object's caption position. The filter, when
/// given, keeps records with exactly that many objects. Zero-area objects are
/// dropped; a record that loses any is kept only if two or more remain.
/// Equal areas resolve to the earliest position.
pub fn largest_position_histogram(
    records: &[AnalysisRecord],
    n_objects_filter: Option<usize>,
) -> Result<PositionHistogram> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let (mut n, mut skipped, mut dropped) = (0, 0, 0);
    for r in records.iter().filter(|r| n_objects_filter.is_none_or(|k| r.objects.len() == k)) {
        if r.objects.is_empty() {
            return Err(Error::Value(format!("record `{}` has no objects", r.sample_id)));
        }
        if let Some(o) = r.objects.iter().find(|o| !(o.area >= 0.0 && o.area.is_finite())) {
            return Err(Error::Value(format!("record `{}`: bad area {} for `{}`", r.sample_id, o.area, o.name)));
        }
        let zero = r.objects.iter().filter(|o| o.area == 0.0).count();
        if zero > 0 {
            dropped += zero;
            if r.objects.len() - zero < 2 {
                skipped += 1;
                continue;
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, o) in r.objects.iter().enumerate().filter(|(_, o)| o.area > 0.0) {
            if best.is_none_or(|(_, a)| o.area > a) {
                best = Some((i, o.area));
            }
        }
        *counts.entry(best.expect("a positive area remains").0 + 1).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Value("no records left to histogram".into()));
    }
    let fractions = counts.iter().map(|(p, c)| (*p, *c as f64 / n as f64)).collect();
    Ok(PositionHistogram {
        n_objects_filter,
        fractions,
        counts,
        n_records: n,
        skipped_records: skipped,
        dropped_objects: dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub image_id: String,
    pub cls_attention: Vec<f64>,
    pub object_patches: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionShares {
    pub shares: BTreeMap<String, f64>,
    pub background: f64,
}

/// Fraction of the CLS token's attention that lands on each object's
/// patches; unassigned patches make up the background.
pub fn attention_shares(record: &AttentionRecord) -> Result<AttentionShares> {
    let id = &record.image_id;
    if let Some(a) = record.cls_attention.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(Error::Value(format!("`{id}`: attention weight {a} is not a finite non-negative value")));
    }
    let total: f64 = record.cls_attention.iter().sum();
    if total <= 0.0 {
        return Err(Error::Value(format!("`{id}`: attention sums to zero")));
    }
    let mut claimed = HashSet::new();
    let mut shares = BTreeMap::new();
    let mut assigned = 0.0;
    for (name, patches) in &record.object_patches {
        let mut s = 0.0;
        for &p in patches {
            if p >= record.cls_attention.len() {
                return Err(Error::Value(format!("`{id}`: patch {p} of `{name}` out of range")));
            }
            if !claimed.insert(p) {
                return Err(Error::Value(format!("`{id}`: patch {p} assigned to more than one object")));
            }
            s += record.cls_attention[p];
        }
        assigned += s;
        shares.insert(name.clone(), s / total);
    }
    Ok(AttentionShares { shares, background: (total - assigned) / total })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedShares {
    /// Mean share of the object with the k-th most patches (0 = largest).
    pub mean_share: Vec<f64>,
    pub records_per_rank: Vec<usize>,
    pub mean_background: f64,
}

/// Averages attention shares over records after ranking each record's
/// objects by patch count (ties by name).
pub fn size_ranked_shares(records: &[AttentionRecord]) -> Result<RankedShares> {
    if records.is_empty() {
        return Err(Error::Value("no attention records".into()));
    }
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut background = 0.0;
    for r in records {
        let s = attention_shares(r)?;
        let mut ranked: Vec<(&String, usize)> = r.object_patches.iter().map(|(n, p)| (n, p.len())).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        for (k, (name, _)) in ranked.iter().enumerate() {
            if sums.len() <= k {
                sums.push(0.0);
                counts.push(0);
            }
            sums[k] += s.shares[*name];
            counts[k] += 1;
        }
        background += s.background;
    }
    Ok(RankedShares {
        mean_share: sums.iter().zip(&counts).map(|(s, c)| s / *c as f64).collect(),
        records_per_rank: counts,
        mean_background: background / records.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub prompt_id: String,
    pub prompt_objects: Vec<String>,
    pub detected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceRow {
    pub n_objects: usize,
    pub n_records: usize,
    /// Index 0 is the first prompt position.
    pub rates: Vec<f64>,
}

/// Presence rate per prompt position over records that all share one prompt
/// length.
pub fn presence_by_position(records: &[DetectionRecord]) -> Result<PresenceRow> {
    let first = records.first().ok_or_else(|| Error::Value("no detection records".into()))?;
    let n = first.prompt_objects.len();
    if let Some(r) = records.iter().find(|r| r.prompt_objects.len() != n) {
        return Err(Error::Value(format!(
            "prompt `{}` has {} objects, expected {n}; group records by length first",
            r.prompt_id,
            r.prompt_objects.len()
        )));
    }
    if n == 0 {
        return Err(Error::Value(format!("prompt `{}` has no objects", first.prompt_id)));
    }
    let mut hits = vec![0usize; n];
    for r in records {
        let detected: HashSet<&str> = r.detected.iter().map(String::as_str).collect();
        for (p, o) in r.prompt_objects.iter().enumerate() {
            if detected.contains(o.as_str()) {
                hits[p] += 1;
            }
        }
    }
    Ok(PresenceRow {
        n_objects: n,
        n_records: records.len(),
        rates: hits.iter().map(|h| *h as f64 / records.len() as f64).collect(),
    })
}

/// [`presence_by_position`] per prompt length.
pub fn presence_by_position_grouped(records: &[DetectionRecord]) -> Result<Vec<PresenceRow>> {
    let mut groups: BTreeMap<usize, Vec<DetectionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.prompt_objects.len()).or_default().push(r.clone());
    }
    if groups.is_empty() {
        return Err(Error::Value("no detection records".into()));
    }
    groups.values().map(|g| presence_by_position(g)).collect()
}

pub fn histogram_to_csv(h: &PositionHistogram) -> String {
    let mut out = String::from("position,count,fraction\n");
    for (p, c) in &h.counts {
        out.push_str(&format!("{p},{c},{:.6}\n", h.fractions[p]));
    }
    out
}

pub fn presence_to_csv(label: &str, rows: &[PresenceRow]) -> String {
    let width = rows.iter().map(|r| r.n_objects).max().unwrap_or(0);
    let mut out = String::from("label,n_objects,n_records");
    for p in 1..=width {
        out.push_str(&format!(",pos{p}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}", crate::probe::csv_field(label), r.n_objects, r.n_records));
        for p in 0..width {
            match r.rates.get(p) {
                Some(v) => out.push_str(&format!(",{:.1}", 100.0 * v)),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, objs: &[(&str, f64)]) -> AnalysisRecord {
        AnalysisRecord {
            sample_id: id.into(),
            objects: objs.iter().map(|(n, a)| ObjectArea { name: (*n).into(), area: *a }).collect(),
        }
    }

    #[test]
    fn worked_histogram() {
        let records = vec![
            rec("1", &[("cat", 5.0), ("dog", 2.0)]),
            rec("2", &[("dog", 3.0), ("cat", 9.0)]),
            rec("3", &[("bus", 10.0), ("car", 1.0), ("bike", 2.0)]),
        ];
        let h = largest_position_histogram(&records, None).unwrap();
        assert!((h.fractions[&1] - 2.0 / 3.0).abs() < 1e-9);
        assert!((h.fractions[&2] - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(h.fractions.len(), 2);
    }

    #[test]
    fn histogram_edge_cases() {
        let h = largest_position_histogram(&[rec("1", &[("cat", 5.0)])], None).unwrap();
        assert_eq!(h.fractions[&1], 1.0);
        assert!(largest_position_histogram(&[], None).is_err());

        let mixed =
            vec![rec("2", &[("a", 1.0), ("b", 2.0)]), rec("4", &[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 9.0)])];
        let h = largest_position_histogram(&mixed, Some(4)).unwrap();
        assert_eq!(h.n_records, 1);
        assert_eq!(h.fractions[&4], 1.0);
        assert!(largest_position_histogram(&mixed, Some(3)).is_err());

        // ties go to the earliest position
        let h = largest_position_histogram(&[rec("t", &[("a", 2.0), ("b", 2.0)])], None).unwrap();
        assert_eq!(h.fractions[&1], 1.0);
    }

    #[test]
    fn zero_area_objects_are_dropped() {
        let records = vec![rec("keep", &[("a", 0.0), ("b", 1.0), ("c", 4.0)]), rec("skip", &[("a", 0.0), ("b", 1.0)])];
        let h = largest_position_histogram(&records, None).unwrap();
        assert_eq!(h.n_records, 1);
        assert_eq!(h.skipped_records, 1);
        assert_eq!(h.dropped_objects, 2);
        assert_eq!(h.fractions[&3], 1.0);
        assert!(largest_position_histogram(&[rec("neg", &[("a", -1.0)])], None).is_err());
    }

    fn attention(att: &[f64], objs: &[(&str, &[usize])]) -> AttentionRecord {
        AttentionRecord {
            image_id: "img".into(),
            cls_attention: att.to_vec(),
            object_patches: objs.iter().map(|(n, p)| ((*n).into(), p.to_vec())).collect(),
        }
    }

    #[test]
    fn attention_examples() {
        let s = attention_shares(&attention(&[0.4, 0.3, 0.2, 0.1], &[("A", &[0, 1]), ("B", &[2])])).unwrap();
        assert!((s.shares["A"] - 0.7).abs() < 1e-12);
        assert!((s.shares["B"] - 0.2).abs() < 1e-12);
        assert!((s.background - 0.1).abs() < 1e-12);

        let s = attention_shares(&attention(&[1.0; 8], &[("A", &[0, 1, 2, 3])])).unwrap();
        assert_eq!(s.shares["A"], 0.5);
    }

    #[test]
    fn attention_errors() {
        assert!(attention_shares(&attention(&[0.5, 0.5], &[("A", &[0]), ("B", &[0])])).is_err());
        assert!(attention_shares(&attention(&[0.0, 0.0], &[("A", &[0])])).is_err());
        assert!(attention_shares(&attention(&[1.0, 0.0], &[("A", &[2])])).is_err());
    }

    #[test]
    fn presence_rules() {
        let d = |objs: &[&str], det: &[&str]| DetectionRecord {
            prompt_id: "p".into(),
            prompt_objects: objs.iter().map(|s| s.to_string()).collect(),
            detected: det.iter().map(|s| s.to_string()).collect(),
        };
        let rows = vec![d(&["a", "b", "c"], &["a"]), d(&["x", "y", "z"], &["x", "dog"])];
        assert_eq!(presence_by_position(&rows).unwrap().rates, vec![1.0, 0.0, 0.0]);
        let none = presence_by_position(&[d(&["a", "b"], &[])]).unwrap();
        assert_eq!(none.rates, vec![0.0, 0.0]);
        let ragged = vec![d(&["a", "b"], &["a"]), d(&["a", "b", "c"], &["c"])];
        assert!(presence_by_position(&ragged).is_err());
        let grouped = presence_by_position_grouped(&ragged).unwrap();
        assert_eq!(grouped.len(), 2);
        assert_eq!(grouped[1].rates, vec![0.0, 0.0, 1.0]);
    }
}
