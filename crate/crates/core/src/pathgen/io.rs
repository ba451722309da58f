//! CSV formats for sample paths and per-series histories.
//!
//! Paths file: header `path_id,series_id,step,value`, one row per cell,
//! steps 1..=T, dense over (path, series, step).
//! History file: header `date,series_id,value`, ISO-8601 dates, dense per
//! series.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{PathSet, Provenance, SeriesHistory};
use crate::error::{CoreError, Result};

#[derive(Debug, Deserialize)]
struct PathRow {
    path_id: i64,
    series_id: String,
    step: i64,
    value: f64,
}

/// Load a [`PathSet`] from the paths CSV format; provenance is `imported`.
pub fn load_paths(path: &Path) -> Result<PathSet> {
    let file = std::fs::File::open(path)?;
    read_paths(file)
}

pub fn read_paths<R: Read>(reader: R) -> Result<PathSet> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut cells: HashMap<(i64, String, i64), f64> = HashMap::new();
    let mut series_order: Vec<String> = Vec::new();
    let mut max_path = -1i64;
    let mut max_step = 0i64;
    for (idx, rec) in rdr.deserialize::<PathRow>().enumerate() {
        let line = idx + 2; // 1-based, after header
        let row = rec.map_err(|e| CoreError::Parse {
            line,
            detail: e.to_string(),
        })?;
        if row.path_id < 0 {
            return Err(CoreError::Parse {
                line,
                detail: format!("negative path_id {}", row.path_id),
            });
        }
        if row.step < 1 {
            return Err(CoreError::Parse {
                line,
                detail: format!("step must be >= 1, got {}", row.step),
            });
        }
        if !row.value.is_finite() || row.value <= 0.0 {
            return Err(CoreError::Parse {
                line,
                detail: format!("non-positive price {} for series {}", row.value, row.series_id),
            });
        }
        if !series_order.contains(&row.series_id) {
            series_order.push(row.series_id.clone());
        }
        max_path = max_path.max(row.path_id);
        max_step = max_step.max(row.step);
        let key = (row.path_id, row.series_id, row.step);
        if cells.insert(key.clone(), row.value).is_some() {
            return Err(CoreError::Parse {
                line,
                detail: format!("duplicate cell (path {}, series {}, step {})", key.0, key.1, key.2),
            });
        }
    }
    if cells.is_empty() {
        return Err(CoreError::Parse {
            line: 1,
            detail: "paths file has no data rows".into(),
        });
    }
    let n_paths = (max_path + 1) as usize;
    let n_series = series_order.len();
    let horizon = max_step as usize;
    let mut values = Vec::with_capacity(n_paths * n_series * horizon);
    for j in 0..n_paths {
        for sid in &series_order {
            for t in 1..=horizon {
                let key = (j as i64, sid.clone(), t as i64);
                match cells.get(&key) {
                    Some(v) => values.push(*v),
                    None => {
                        return Err(CoreError::Parse {
                            line: 0,
                            detail: format!(
                                "missing cell (path {j}, series {sid}, step {t})"
                            ),
                        })
                    }
                }
            }
        }
    }
    if values.len() != cells.len() {
        return Err(CoreError::Parse {
            line: 0,
            detail: "paths file has rows outside the dense (path, series, step) grid".into(),
        });
    }
    PathSet::new(n_paths, n_series, horizon, series_order, values, 0, Provenance::Imported)
}

/// Write a [`PathSet`] in the paths CSV format.
pub fn save_paths<W: Write>(paths: &PathSet, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["path_id", "series_id", "step", "value"])
        .map_err(|e| CoreError::Numerical(e.to_string()))?;
    for j in 0..paths.n_paths {
        for (i, sid) in paths.series_ids.iter().enumerate() {
            for t in 1..=paths.horizon {
                wtr.write_record([
                    j.to_string(),
                    sid.clone(),
                    t.to_string(),
                    format!("{:?}", paths.value(j, i, t)),
                ])
                .map_err(|e| CoreError::Numerical(e.to_string()))?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// One series with calendar dates attached; source for backtests.
#[derive(Debug, Clone, PartialEq)]
pub struct DatedSeries {
    pub series_id: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl DatedSeries {
    /// History of all observations strictly up to and including `date`.
    pub fn history_until(&self, date: NaiveDate) -> Result<SeriesHistory> {
        let n = self.dates.iter().filter(|d| **d <= date).count();
        if n == 0 {
            return Err(CoreError::invalid(format!(
                "series {} has no data on or before {date}",
                self.series_id
            )));
        }
        SeriesHistory::from_values(self.series_id.clone(), &self.values[..n])
    }

    /// The `horizon` values strictly after `date`, if fully covered.
    pub fn future_window(&self, date: NaiveDate, horizon: usize) -> Option<Vec<f64>> {
        let start = self.dates.iter().filter(|d| **d <= date).count();
        if start + horizon > self.values.len() {
            return None;
        }
        Some(self.values[start..start + horizon].to_vec())
    }

    /// Date at position `t0_index + step` (1-based step past the anchor).
    pub fn date_at_offset(&self, date: NaiveDate, step: usize) -> Option<NaiveDate> {
        let start = self.dates.iter().filter(|d| **d <= date).count();
        self.dates.get(start + step - 1).copied()
    }
}

#[derive(Debug, Deserialize)]
struct HistoryRow {
    date: NaiveDate,
    series_id: String,
    value: f64,
}

/// Load all series from a history CSV file.
pub fn load_history(path: &Path) -> Result<Vec<DatedSeries>> {
    let file = std::fs::File::open(path)?;
    read_history(file)
}

pub fn read_history<R: Read>(reader: R) -> Result<Vec<DatedSeries>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut by_series: HashMap<String, DatedSeries> = HashMap::new();
    for (idx, rec) in rdr.deserialize::<HistoryRow>().enumerate() {
        let line = idx + 2;
        let row = rec.map_err(|e| CoreError::Parse {
            line,
            detail: e.to_string(),
        })?;
        if !row.value.is_finite() || row.value <= 0.0 {
            return Err(CoreError::Parse {
                line,
                detail: format!("non-positive price {} for series {}", row.value, row.series_id),
            });
        }
        let entry = by_series.entry(row.series_id.clone()).or_insert_with(|| {
            order.push(row.series_id.clone());
            DatedSeries {
                series_id: row.series_id.clone(),
                dates: Vec::new(),
                values: Vec::new(),
            }
        });
        if let Some(last) = entry.dates.last() {
            if row.date <= *last {
                return Err(CoreError::Parse {
                    line,
                    detail: format!(
                        "dates for series {} must be strictly increasing ({} after {})",
                        row.series_id, row.date, last
                    ),
                });
            }
        }
        entry.dates.push(row.date);
        entry.values.push(row.value);
    }
    if order.is_empty() {
        return Err(CoreError::Parse {
            line: 1,
            detail: "history file has no data rows".into(),
        });
    }
    Ok(order.into_iter().map(|id| by_series.remove(&id).unwrap()).collect())
}
