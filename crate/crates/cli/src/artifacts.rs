//! Run-directory files and their readers.
//!
//! Numbers are written with `f64::to_string` (shortest round-trip form) and
//! read back as strings where they are displayed, so every rendered value
//! is the artifact's own text.

use std::fs::{self, File};
use std::path::Path;

use mmm_core::curves::{write_summary_csv, FittedCurve};
use mmm_core::model::Contributions;
use mmm_core::panel::PanelDataset;
use serde::Serialize;

use crate::CliError;

pub const METRICS: &str = "metrics.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const EDGES: &str = "dag_edges.csv";
pub const CONTRIBUTIONS: &str = "contributions.csv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const CURVES: &str = "curves.csv";
pub const EVALUATION: &str = "evaluation.json";
pub const REPORT: &str = "report.html";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Long format `region,week,channel,driver,contribution`, drivers in original units.
pub fn write_contributions(path: &Path, data: &PanelDataset, c: &Contributions) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["region", "week", "channel", "driver", "contribution"]).map_err(&err)?;
    for r in 0..data.regions {
        for t in 0..data.weeks {
            let week = data.week_index[t].to_string();
            for (ch, label) in data.channel_labels.iter().enumerate() {
                let i = (r * data.weeks + t) * data.channels + ch;
                w.write_record([
                    data.region_labels[r].as_str(),
                    &week,
                    label,
                    &data.drivers[i].to_string(),
                    &c.channel[i].to_string(),
                ])
                .map_err(&err)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `region,week,actual,prediction,baseline,control` in KPI units.
pub fn write_predictions(path: &Path, data: &PanelDataset, c: &Contributions) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["region", "week", "actual", "prediction", "baseline", "control"]).map_err(&err)?;
    for r in 0..data.regions {
        for t in 0..data.weeks {
            let i = r * data.weeks + t;
            w.write_record([
                data.region_labels[r].clone(),
                data.week_index[t].to_string(),
                data.kpi[i].to_string(),
                c.prediction[i].to_string(),
                c.baseline[i].to_string(),
                c.control[i].to_string(),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_curves(path: &Path, rows: &[(String, Option<FittedCurve>)]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_summary_csv(rows, file).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// A CSV held as header plus string rows.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Err(CliError::Data(format!("missing run artifact {}", path.display())));
        }
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let header = rdr.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec.map_err(csv_err(path))?.iter().map(String::from).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, CliError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("artifact lacks column {name:?}")))
    }

    pub fn number(&self, row: usize, col: usize) -> Result<f64, CliError> {
        let s = &self.rows[row][col];
        s.parse().map_err(|_| CliError::Data(format!("unparseable number {s:?} in {:?}", self.header[col])))
    }
}

/// Weekly (driver, contribution) totals over regions for each channel, in
/// `labels` order. Sums run in file order, which is region-major.
pub fn overall_points(table: &Table, labels: &[String]) -> Result<Vec<Vec<(f64, f64)>>, CliError> {
    let (wc, cc, dc, vc) = (table.column("week")?, table.column("channel")?, table.column("driver")?, table.column("contribution")?);
    let mut weeks: Vec<String> = Vec::new();
    let mut sums: Vec<Vec<(f64, f64)>> = vec![Vec::new(); labels.len()];
    for i in 0..table.rows.len() {
        let row = &table.rows[i];
        let Some(ch) = labels.iter().position(|l| *l == row[cc]) else { continue };
        let t = match weeks.iter().position(|w| *w == row[wc]) {
            Some(t) => t,
            None => {
                weeks.push(row[wc].clone());
                weeks.len() - 1
            }
        };
        let series = &mut sums[ch];
        if series.len() <= t {
            series.resize(t + 1, (0.0, 0.0));
        }
        series[t].0 += table.number(i, dc)?;
        series[t].1 += table.number(i, vc)?;
    }
    for s in &mut sums {
        for p in s.iter_mut() {
            p.1 = p.1.max(0.0);
        }
    }
    Ok(sums)
}

/// Channel labels with one point series per label.
pub type ChannelPoints = (Vec<String>, Vec<Vec<(f64, f64)>>);

/// Reads `channel,x,y` rows of raw observations, grouped by channel in first-seen order.
pub fn read_points(path: &Path) -> Result<ChannelPoints, CliError> {
    let table = Table::read(path)?;
    let (cc, xc, yc) = (table.column("channel")?, table.column("x")?, table.column("y")?);
    let mut labels: Vec<String> = Vec::new();
    let mut points: Vec<Vec<(f64, f64)>> = Vec::new();
    for i in 0..table.rows.len() {
        let name = &table.rows[i][cc];
        let k = match labels.iter().position(|l| l == name) {
            Some(k) => k,
            None => {
                labels.push(name.clone());
                points.push(Vec::new());
                labels.len() - 1
            }
        };
        points[k].push((table.number(i, xc)?, table.number(i, yc)?));
    }
    Ok((labels, points))
}

/// Filename-safe form of a label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
