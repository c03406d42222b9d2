use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::protocol::{CellResult, ProtocolResult};
use crate::data::write_json;
use crate::error::{Error, FormatError, Result};
use crate::model::Variant;

pub const RESULT_FILE: &str = "result.json";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const HEATMAP_DIR: &str = "heatmaps";
pub const PR_DIR: &str = "pr";

fn csv_err(e: csv::Error) -> Error {
    FormatError::Malformed(format!("csv: {e}")).into()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// Mean and sample standard deviation of the defined values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), Some(0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

type GroupKey = (Variant, usize, String, String);

fn group_cells(cells: &[CellResult]) -> Vec<(GroupKey, Vec<&CellResult>)> {
    let mut order: Vec<GroupKey> = Vec::new();
    let mut groups: BTreeMap<GroupKey, Vec<&CellResult>> = BTreeMap::new();
    for c in cells {
        let k = (c.variant, c.delta, c.train_selector.clone(), c.eval_selector.clone());
        if !groups.contains_key(&k) {
            order.push(k.clone());
        }
        groups.entry(k).or_default().push(c);
    }
    order
        .into_iter()
        .map(|k| {
            let v = groups.remove(&k).expect("present");
            (k, v)
        })
        .collect()
}

fn collect(cells: &[&CellResult], f: impl Fn(&CellResult) -> Option<f64>) -> Vec<f64> {
    cells.iter().filter_map(|c| f(c)).collect()
}

fn summary_rows(result: &ProtocolResult) -> (Vec<String>, Vec<Vec<String>>) {
    let header = [
        "variant", "delta", "train", "eval", "seeds", "failed", "ant_avg_cap", "ant_avg_cap_std",
        "det_cap", "det_cap_std", "random_ant_avg_cap", "random_det_cap", "frame_ap", "event_f1",
        "frame_ece", "event_ece", "lead_time_s", "detection_delay_s",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::new();
    for ((variant, delta, train, eval), cells) in group_cells(&result.cells) {
        let (ant, ant_sd) = mean_std(&collect(&cells, CellResult::anticipation_cap));
        let (det, det_sd) = mean_std(&collect(&cells, CellResult::detection_cap));
        let m = |f: &dyn Fn(&CellResult) -> Option<f64>| mean_std(&collect(&cells, f)).0;
        let rep = |c: &CellResult| c.report.clone();
        rows.push(vec![
            variant.to_string(),
            delta.to_string(),
            train,
            eval,
            cells.len().to_string(),
            cells.iter().filter(|c| c.failed()).count().to_string(),
            num(ant),
            num(ant_sd),
            num(det),
            num(det_sd),
            num(m(&|c| c.random_anticipation_cap)),
            num(m(&|c| c.random_detection_cap)),
            num(m(&|c| rep(c).and_then(|r| r.frame_ap))),
            num(m(&|c| rep(c).map(|r| r.event_f1.mean))),
            num(m(&|c| rep(c).map(|r| r.frame_ece))),
            num(m(&|c| rep(c).map(|r| r.event_ece.ece))),
            num(m(&|c| rep(c).and_then(|r| r.mean_lead_time_s))),
            num(m(&|c| rep(c).and_then(|r| r.mean_detection_delay_s))),
        ]);
    }
    (header, rows)
}

/// Square seed-averaged matrices keyed by `(variant, delta, matrix name)`.
fn heatmaps(result: &ProtocolResult) -> Vec<(String, Vec<String>, Vec<Vec<String>>)> {
    let mut names: Vec<(Variant, usize, String)> = Vec::new();
    for c in &result.cells {
        if let Some(m) = &c.matrix {
            let k = (c.variant, c.delta, m.name.clone());
            if !names.contains(&k) {
                names.push(k);
            }
        }
    }
    let mut out = Vec::new();
    for (variant, delta, name) in names {
        let cells: Vec<&CellResult> = result
            .cells
            .iter()
            .filter(|c| c.variant == variant && c.delta == delta && c.matrix.as_ref().is_some_and(|m| m.name == name))
            .collect();
        let mut labels: Vec<String> = Vec::new();
        for c in &cells {
            let m = c.matrix.as_ref().expect("filtered");
            for l in [&m.row, &m.col] {
                if !labels.contains(l) {
                    labels.push(l.clone());
                }
            }
        }
        for (metric, f) in [
            ("det", CellResult::detection_cap as fn(&CellResult) -> Option<f64>),
            ("ant", CellResult::anticipation_cap),
        ] {
            let mut header = vec!["train\\eval".to_string()];
            header.extend(labels.iter().cloned());
            let rows = labels
                .iter()
                .map(|r| {
                    let mut row = vec![r.clone()];
                    row.extend(labels.iter().map(|col| {
                        let vals: Vec<f64> = cells
                            .iter()
                            .filter(|c| {
                                let m = c.matrix.as_ref().expect("filtered");
                                &m.row == r && &m.col == col
                            })
                            .filter_map(|c| f(c))
                            .collect();
                        num(mean_std(&vals).0)
                    }));
                    row
                })
                .collect();
            out.push((format!("{variant}_d{delta}_{name}_{metric}.csv"), header, rows));
        }
    }
    out
}

/// Writes `result.json`, `provenance.json`, `summary.csv`, heatmaps and PR
/// points under `out_dir`; returns the written paths.
pub fn emit_report(result: &ProtocolResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let p = out_dir.join(RESULT_FILE);
    write_json(result, &p)?;
    written.push(p);
    let p = out_dir.join(PROVENANCE_FILE);
    write_json(&result.provenance, &p)?;
    written.push(p);

    let (header, rows) = summary_rows(result);
    let p = out_dir.join(SUMMARY_FILE);
    write_csv(&p, &header, &rows)?;
    written.push(p);

    for (name, header, rows) in heatmaps(result) {
        let p = out_dir.join(HEATMAP_DIR).join(name);
        write_csv(&p, &header, &rows)?;
        written.push(p);
    }

    let pr_header = ["threshold", "precision", "recall"].map(String::from).to_vec();
    for c in &result.cells {
        let Some(curve) = c.report.as_ref().and_then(|r| r.pr.as_ref()) else {
            continue;
        };
        let rows: Vec<Vec<String>> = curve
            .points
            .iter()
            .map(|pt| {
                vec![
                    pt.threshold.map_or_else(String::new, |t| t.to_string()),
                    pt.precision.to_string(),
                    pt.recall.to_string(),
                ]
            })
            .collect();
        let p = out_dir.join(PR_DIR).join(format!("{}.csv", c.id));
        write_csv(&p, &pr_header, &rows)?;
        written.push(p);
    }
    Ok(written)
}
