use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{relative_delta, RunManifest};
use crate::error::Result;
use crate::estimates::{read_reports_csv, CsvRow};

/// A run CSV row tagged with its family and config, plus the relative change
/// of its ratio from the next coarser grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub family: String,
    pub config: String,
    pub name: String,
    pub key: String,
    pub h: f64,
    pub r: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
    pub delta: Option<f64>,
}

impl ReportRow {
    fn new(family: &str, config: &str, row: CsvRow) -> Self {
        ReportRow {
            family: family.to_string(),
            config: config.to_string(),
            name: row.name,
            key: row.key,
            h: row.h,
            r: row.r,
            lhs: row.lhs,
            rhs: row.rhs,
            ratio: row.ratio,
            pass: row.pass,
            delta: None,
        }
    }

    /// The run CSV row this was merged from.
    pub fn source(&self) -> CsvRow {
        CsvRow {
            name: self.name.clone(),
            key: self.key.clone(),
            h: self.h,
            r: self.r,
            lhs: self.lhs,
            rhs: self.rhs,
            ratio: self.ratio,
            pass: self.pass,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Runs left out because they disagree with another run of the same config.
    pub conflicts: Vec<String>,
}

struct Loaded {
    manifest: RunManifest,
    /// Rows per grid size, coarse first.
    grids: Vec<(f64, Vec<CsvRow>)>,
}

fn load(path: &Path) -> Result<Loaded> {
    let manifest = RunManifest::load(path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut grids = Vec::new();
    for rec in &manifest.resolutions {
        grids.push((rec.h, read_reports_csv(&dir.join(&rec.estimates_csv))?));
    }
    Ok(Loaded { manifest, grids })
}

/// Merge the estimate CSVs of several runs. Runs of one config id must share
/// the domain, and a grid size reported twice must carry identical rows;
/// otherwise the offending runs are flagged and left out.
pub fn report(manifests: &[PathBuf]) -> Result<Report> {
    let loaded = manifests.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
    let mut by_id: BTreeMap<String, Vec<&Loaded>> = BTreeMap::new();
    for l in &loaded {
        by_id.entry(l.manifest.id.clone()).or_default().push(l);
    }
    let mut out = Report::default();
    for (id, runs) in by_id {
        let domain = &runs[0].manifest.domain;
        if runs.iter().any(|r| &r.manifest.domain != domain) {
            out.conflicts.push(format!("{id}: runs use different domains"));
            continue;
        }
        let family = runs[0].manifest.family.clone();
        // key by the bit pattern so equal grid sizes collide exactly
        let mut per_h: BTreeMap<u64, Option<&Vec<CsvRow>>> = BTreeMap::new();
        for run in &runs {
            for (h, rows) in &run.grids {
                match per_h.get(&h.to_bits()) {
                    None => {
                        per_h.insert(h.to_bits(), Some(rows));
                    }
                    Some(Some(prev)) if *prev != rows => {
                        out.conflicts.push(format!("{id}: two runs disagree at h = {h}"));
                        per_h.insert(h.to_bits(), None);
                    }
                    _ => {}
                }
            }
        }
        for rows in per_h.into_values().flatten() {
            out.rows
                .extend(rows.iter().cloned().map(|r| ReportRow::new(&family, &id, r)));
        }
    }
    out.rows.sort_by(|a, b| {
        (&a.family, &a.config, &a.name, &a.key)
            .cmp(&(&b.family, &b.config, &b.name, &b.key))
            .then(b.h.total_cmp(&a.h))
    });
    for i in 1..out.rows.len() {
        let (prev, cur) = (&out.rows[i - 1], &out.rows[i]);
        if (&prev.family, &prev.config, &prev.name, &prev.key) == (&cur.family, &cur.config, &cur.name, &cur.key) {
            out.rows[i].delta = Some(relative_delta(prev.ratio, cur.ratio));
        }
    }
    Ok(out)
}

impl Report {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One section per family; one line per (config, estimate, h) with the
    /// largest ratio, the largest stability delta and the verdict.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let mut family: Option<&str> = None;
        let mut i = 0;
        while i < self.rows.len() {
            let first = &self.rows[i];
            if family != Some(first.family.as_str()) {
                if family.is_some() {
                    s.push('\n');
                }
                family = Some(&first.family);
                let _ = writeln!(s, "[{}]", first.family);
                let _ = writeln!(
                    s,
                    "{:<24} {:<20} {:>11} {:>5} {:>12} {:>10} {:>5}",
                    "config", "estimate", "h", "rows", "max_ratio", "max_delta", "pass"
                );
            }
            let mut j = i;
            let (mut max_ratio, mut max_delta, mut pass, mut n) = (0.0f64, None::<f64>, true, 0);
            let mut hs: Vec<f64> = Vec::new();
            while j < self.rows.len()
                && self.rows[j].family == first.family
                && self.rows[j].config == first.config
                && self.rows[j].name == first.name
            {
                let r = &self.rows[j];
                if !hs.contains(&r.h) {
                    hs.push(r.h);
                }
                j += 1;
            }
            hs.sort_by(|a, b| b.total_cmp(a));
            for h in hs {
                for r in self.rows[i..j].iter().filter(|r| r.h == h) {
                    max_ratio = max_ratio.max(r.ratio);
                    if let Some(d) = r.delta {
                        max_delta = Some(max_delta.map_or(d, |m: f64| m.max(d)));
                    }
                    pass &= r.pass;
                    n += 1;
                }
                let delta = max_delta.map_or("-".to_string(), |d| format!("{d:.4}"));
                let _ = writeln!(
                    s,
                    "{:<24} {:<20} {:>11.5e} {:>5} {:>12.5e} {:>10} {:>5}",
                    first.config,
                    first.name,
                    h,
                    n,
                    max_ratio,
                    delta,
                    if pass { "yes" } else { "no" }
                );
                (max_ratio, max_delta, pass, n) = (0.0, None, true, 0);
            }
            i = j;
        }
        for c in &self.conflicts {
            let _ = writeln!(s, "conflict: {c}");
        }
        s
    }
}
