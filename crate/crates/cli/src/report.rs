//! Cross-run comparison tables in Markdown and CSV.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use oscope_core::GroupKey;

use crate::error::CliError;
use crate::output::{read_manifest, write_atomic, RunManifest};
use crate::pipeline::{
    HistogramOutput, LabeledReport, PresenceOutput, ProbeSummaryRow, HISTOGRAM_JSON, LINEAR_PROBE_JSON, MATCH_JSON,
    PRESENCE_JSON, PROBE_JSON,
};
use oscope_core::matching::MatchRow;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub key_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub rows: Vec<(Vec<String>, Vec<Option<f64>>)>,
    pub decimals: usize,
}

impl Table {
    fn fmt(&self, v: f64) -> String {
        format!("{v:.*}", self.decimals)
    }

    /// Markdown with the largest value of each row in bold.
    pub fn to_markdown(&self) -> String {
        let mut out = format!("## {}\n\n|", self.title);
        for c in self.key_columns.iter().chain(&self.value_columns) {
            out.push_str(&format!(" {c} |"));
        }
        out.push_str("\n|");
        for _ in &self.key_columns {
            out.push_str(" --- |");
        }
        for _ in &self.value_columns {
            out.push_str(" ---: |");
        }
        out.push('\n');
        for (keys, vals) in &self.rows {
            let max = vals.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
            out.push('|');
            for k in keys {
                out.push_str(&format!(" {} |", k.replace('|', "\\|")));
            }
            for v in vals {
                match v {
                    Some(x) if *x == max => out.push_str(&format!(" **{}** |", self.fmt(*x))),
                    Some(x) => out.push_str(&format!(" {} |", self.fmt(*x))),
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        out.push('\n');
        out
    }

    pub fn to_csv(&self) -> String {
        let field = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let header: Vec<String> = self.key_columns.iter().chain(&self.value_columns).map(|c| field(c)).collect();
        let mut out = header.join(",");
        out.push('\n');
        for (keys, vals) in &self.rows {
            let mut cells: Vec<String> = keys.iter().map(|k| field(k)).collect();
            cells.extend(vals.iter().map(|v| v.map(|x| self.fmt(x)).unwrap_or_default()));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn read<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<Option<T>, CliError> {
        if !self.manifest.outputs.contains_key(rel) {
            return Ok(None);
        }
        let p = self.dir.join(rel);
        let bytes = std::fs::read(&p).map_err(|e| CliError::from_io(&p, e))?;
        serde_json::from_slice(&bytes).map(Some).map_err(|e| CliError::Compute(format!("{}: {e}", p.display())))
    }
}

/// Retrieval scores every gallery item, not just the query's own objects.
const PROBE_FOOTER: &str = "_Retrieval probes rank the full gallery. A top-1 item outside the query's own objects \
counts as a miss; per-group rates are shares of the hits._\n";

type TableBuilder = fn(&[Run]) -> Result<Option<Table>, CliError>;

fn probe_table(runs: &[Run]) -> Result<Option<Table>, CliError> {
    let mut rows = Vec::new();
    let mut keys: BTreeSet<GroupKey> = BTreeSet::new();
    let mut reports = Vec::new();
    for r in runs {
        if let Some(list) = r.read::<Vec<LabeledReport>>(PROBE_JSON)? {
            for l in list {
                keys.extend(l.report.per_group.keys().copied());
                reports.push((r.manifest.name.clone(), l));
            }
        }
    }
    if reports.is_empty() {
        return Ok(None);
    }
    for (run, l) in reports {
        let vals = keys.iter().map(|k| l.report.per_group.get(k).map(|g| 100.0 * g.rate)).collect();
        rows.push((vec![run, l.report.model_id.clone(), l.label], vals));
    }
    Ok(Some(Table {
        title: "Retrieval probe (percent of hits per group)".into(),
        key_columns: vec!["run".into(), "model".into(), "task".into()],
        value_columns: keys.iter().map(|k| k.to_string()).collect(),
        rows,
        decimals: 2,
    }))
}

fn linear_probe_table(runs: &[Run]) -> Result<Option<Table>, CliError> {
    let mut per_run = Vec::new();
    let mut keys: BTreeSet<GroupKey> = BTreeSet::new();
    for r in runs {
        if let Some(rows) = r.read::<Vec<ProbeSummaryRow>>(LINEAR_PROBE_JSON)? {
            keys.extend(rows.iter().map(|x| x.group));
            per_run.push((r.manifest.name.clone(), rows));
        }
    }
    if per_run.is_empty() {
        return Ok(None);
    }
    let rows = per_run
        .into_iter()
        .map(|(run, rs)| {
            let model = rs.first().map(|x| x.model_id.clone()).unwrap_or_default();
            let vals = keys
                .iter()
                .map(|k| rs.iter().find(|x| x.group == *k).and_then(|x| x.holdout_accuracy).map(|a| 100.0 * a))
                .collect();
            (vec![run, model], vals)
        })
        .collect();
    Ok(Some(Table {
        title: "Linear probe held-out accuracy (percent)".into(),
        key_columns: vec!["run".into(), "model".into()],
        value_columns: keys.iter().map(|k| k.to_string()).collect(),
        rows,
        decimals: 2,
    }))
}

fn match_table(runs: &[Run]) -> Result<Option<Table>, CliError> {
    let mut rows = Vec::new();
    for r in runs {
        for m in r.read::<Vec<MatchRow>>(MATCH_JSON)?.unwrap_or_default() {
            rows.push((
                vec![r.manifest.name.clone(), m.model.clone(), m.scenario.to_string()],
                vec![Some(100.0 * m.accuracy_original), m.accuracy_mitigated.map(|a| 100.0 * a)],
            ));
        }
    }
    Ok((!rows.is_empty()).then(|| Table {
        title: "Image-text matching accuracy (percent)".into(),
        key_columns: vec!["run".into(), "model".into(), "scenario".into()],
        value_columns: vec!["original".into(), "split aggregate".into()],
        rows,
        decimals: 2,
    }))
}

fn presence_table(runs: &[Run]) -> Result<Option<Table>, CliError> {
    let mut rows = Vec::new();
    let mut width = 0;
    for r in runs {
        if let Some(p) = r.read::<PresenceOutput>(PRESENCE_JSON)? {
            for row in p.rows {
                width = width.max(row.n_objects);
                rows.push((
                    vec![r.manifest.name.clone(), p.label.clone(), row.n_objects.to_string()],
                    row.rates.iter().map(|v| Some(100.0 * v)).collect::<Vec<_>>(),
                ));
            }
        }
    }
    for (_, v) in rows.iter_mut() {
        v.resize(width, None);
    }
    Ok((!rows.is_empty()).then(|| Table {
        title: "Object presence by prompt position (percent)".into(),
        key_columns: vec!["run".into(), "label".into(), "n_objects".into()],
        value_columns: (1..=width).map(|p| format!("pos{p}")).collect(),
        rows,
        decimals: 1,
    }))
}

fn histogram_table(runs: &[Run]) -> Result<Option<Table>, CliError> {
    let mut rows = Vec::new();
    let mut width = 0;
    for r in runs {
        if let Some(h) = r.read::<HistogramOutput>(HISTOGRAM_JSON)? {
            for hist in h.histograms {
                let w = hist.fractions.keys().max().copied().unwrap_or(0);
                width = width.max(w);
                let vals: Vec<Option<f64>> =
                    (1..=w).map(|p| Some(100.0 * hist.fractions.get(&p).copied().unwrap_or(0.0))).collect();
                let filter = hist.n_objects_filter.map_or("all".to_string(), |n| n.to_string());
                rows.push((vec![r.manifest.name.clone(), h.label.clone(), filter], vals));
            }
        }
    }
    for (_, v) in rows.iter_mut() {
        v.resize(width, None);
    }
    Ok((!rows.is_empty()).then(|| Table {
        title: "Largest-object caption position (percent of records)".into(),
        key_columns: vec!["run".into(), "label".into(), "n_objects".into()],
        value_columns: (1..=width).map(|p| format!("pos{p}")).collect(),
        rows,
        decimals: 2,
    }))
}

/// Tables for every result kind present in at least one run.
pub fn build_tables(run_dirs: &[PathBuf]) -> Result<Vec<(&'static str, Table)>, CliError> {
    if run_dirs.is_empty() {
        return Err(CliError::Schema("at `runs`: at least one run directory is required".into()));
    }
    let runs: Vec<Run> = run_dirs
        .iter()
        .map(|d| read_manifest(d).map(|manifest| Run { dir: d.clone(), manifest }))
        .collect::<Result<_, _>>()?;
    let mut tables = Vec::new();
    let builders: [(&'static str, TableBuilder); 5] = [
        ("probe", probe_table),
        ("linear_probe", linear_probe_table),
        ("match", match_table),
        ("presence", presence_table),
        ("histogram", histogram_table),
    ];
    for (name, build) in builders {
        if let Some(t) = build(&runs)? {
            tables.push((name, t));
        }
    }
    Ok(tables)
}

pub fn write_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let tables = build_tables(run_dirs)?;
    let mut md = String::from("# Comparison report\n\n");
    let mut written = Vec::new();
    for (name, t) in &tables {
        md.push_str(&t.to_markdown());
        let p = out_dir.join(format!("report_{name}.csv"));
        write_atomic(&p, t.to_csv().as_bytes())?;
        written.push(p);
    }
    if tables.is_empty() {
        md.push_str("No comparable results found.\n");
    }
    if tables.iter().any(|(name, _)| *name == "probe") {
        md.push_str(PROBE_FOOTER);
    }
    let p = out_dir.join("report.md");
    write_atomic(&p, md.as_bytes())?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bold_marks_row_maximum() {
        let t = Table {
            title: "T".into(),
            key_columns: vec!["run".into()],
            value_columns: vec!["a".into(), "b".into()],
            rows: vec![(vec!["r1".into()], vec![Some(1.0), Some(2.0)]), (vec!["r2".into()], vec![Some(3.0), None])],
            decimals: 1,
        };
        let md = t.to_markdown();
        assert!(md.contains("| r1 | 1.0 | **2.0** |"));
        assert!(md.contains("| r2 | **3.0** | - |"));
        assert_eq!(t.to_csv(), "run,a,b\nr1,1.0,2.0\nr2,3.0,\n");
    }

    #[test]
    fn empty_run_list_is_an_error() {
        assert!(matches!(build_tables(&[]), Err(CliError::Schema(_))));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(build_tables(&[dir.path().to_path_buf()]), Err(CliError::Missing(_))));
    }
}
