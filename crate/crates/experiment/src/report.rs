//! Result rows, summary statistics and their CSV/JSON files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Mode, Scale};
use crate::error::{ExperimentError, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// One Dice value: a test case, channel and training seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mode: Mode,
    pub scale: Scale,
    pub n_p: usize,
    pub seed: u64,
    pub case_id: String,
    pub channel: String,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: Mode,
    pub scale: Scale,
    pub n_p: usize,
    pub channel: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryRow {
    pub fn key(&self) -> String {
        format!("{}/{}/{}/{}", self.mode, self.scale, self.n_p, self.channel)
    }
}

/// Linear interpolation between order statistics of sorted `v`.
fn quantile(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Statistics per (mode, scale, n_p, channel), pooled over cases and seeds.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Mode, Scale, usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.mode, r.scale, r.n_p, r.channel.clone()))
            .or_default()
            .push(r.dice);
    }
    groups
        .into_iter()
        .map(|((mode, scale, n_p, channel), mut v)| {
            v.sort_by(f64::total_cmp);
            SummaryRow {
                mode,
                scale,
                n_p,
                channel,
                count: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                median: quantile(&v, 0.5),
                q1: quantile(&v, 0.25),
                q3: quantile(&v, 0.75),
                min: v[0],
                max: v[v.len() - 1],
            }
        })
        .collect()
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(ExperimentError::io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(ExperimentError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(ExperimentError::io(path))
}

fn to_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<Vec<u8>> {
    let csv_err = |source| ExperimentError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| ExperimentError::Csv {
        path: path.to_path_buf(),
        source: e.into_error().into(),
    })
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_atomic(path, &to_csv(path, rows)?)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let csv_err = |source| ExperimentError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let rows: Vec<ResultRow> = r.deserialize().collect::<Result<_, _>>().map_err(csv_err)?;
    if let Some(bad) = rows.iter().find(|row| !(0.0..=1.0).contains(&row.dice)) {
        return Err(ExperimentError::Dataset(format!(
            "{}: dice {} for {} outside [0, 1]",
            path.display(),
            bad.dice,
            bad.case_id
        )));
    }
    Ok(rows)
}

pub fn write_summary_csv(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    write_atomic(path, &to_csv(path, summary)?)
}

/// JSON object keyed by `mode/scale/n_p/channel`.
pub fn summary_json(summary: &[SummaryRow]) -> String {
    let map: BTreeMap<String, &SummaryRow> = summary.iter().map(|s| (s.key(), s)).collect();
    serde_json::to_string_pretty(&map).expect("summary serializes")
}

pub fn write_summary_json(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    write_atomic(path, summary_json(summary).as_bytes())
}

/// Every `results.csv` below `dir`, in path order.
pub fn collect_results(dir: &Path) -> Result<Vec<ResultRow>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(ExperimentError::io(&d))? {
            let path = entry.map_err(ExperimentError::io(&d))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == RESULTS_FILE) {
                files.push(path);
            }
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(ExperimentError::Dataset(format!("no {RESULTS_FILE} under {}", dir.display())));
    }
    let mut rows = Vec::new();
    for f in files {
        rows.extend(read_results_csv(&f)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mode: Mode, channel: &str, dice: f64) -> ResultRow {
        ResultRow {
            mode,
            scale: Scale::Patched,
            n_p: 490,
            seed: 0,
            case_id: "case_000".into(),
            channel: channel.into(),
            dice,
        }
    }

    #[test]
    fn single_and_pair() {
        let s = summarize(&[row(Mode::Baseline, "liver", 0.8)]);
        assert_eq!((s[0].mean, s[0].median, s[0].min, s[0].max), (0.8, 0.8, 0.8, 0.8));
        let s = summarize(&[row(Mode::Baseline, "liver", 0.6), row(Mode::Baseline, "liver", 0.8)]);
        assert!((s[0].mean - 0.7).abs() < 1e-15 && (s[0].median - 0.7).abs() < 1e-15);
    }

    #[test]
    fn quartiles_interpolate() {
        let rows: Vec<ResultRow> = [0.1, 0.4, 0.2, 0.3, 0.5].iter().map(|&d| row(Mode::MtBest, "tumor", d)).collect();
        let s = &summarize(&rows)[0];
        assert_eq!((s.q1, s.median, s.q3), (0.2, 0.3, 0.4));
        assert!(s.min <= s.mean && s.mean <= s.max);
    }

    #[test]
    fn one_row_per_configuration_and_channel() {
        let mut rows = Vec::new();
        for mode in Mode::ALL {
            for ch in ["liver", "tumor"] {
                for seed in 0..3 {
                    rows.push(ResultRow {
                        seed,
                        ..row(mode, ch, 0.5)
                    });
                }
            }
        }
        assert_eq!(summarize(&rows).len(), 3 * 2);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join(RESULTS_FILE);
        let rows = vec![row(Mode::MtCurrent, "liver", 0.123_456_789), row(Mode::MtBest, "tumor", 1.0)];
        write_results_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "mode,scale,n_p,seed,case_id,channel,dice");
        assert!(text.contains("mt-c,patched,490,0,case_000,liver,0.123456789"));
        assert_eq!(read_results_csv(&path).unwrap(), rows);
        assert_eq!(collect_results(dir.path()).unwrap(), rows);
    }
}
