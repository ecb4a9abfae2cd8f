//! Self-contained HTML pages. Values shown in tables and annotations are the
//! artifact strings themselves, never reformatted.

use std::fmt::Write;
use std::fs;
use std::path::Path;

use mmm_core::model::Checkpoint;
use serde_json::Value;

use crate::artifacts::{self, Table};
use crate::config::ReportToggles;
use crate::svg::{self, escape, CurveChart, DagEdge};
use crate::CliError;

const STYLE: &str = "body{font-family:sans-serif;margin:24px;color:#1a202c;max-width:1000px}\
table{border-collapse:collapse;margin:8px 0 20px}\
th,td{border:1px solid #cbd5e0;padding:4px 10px;text-align:right}\
th:first-child,td:first-child{text-align:left}\
h2{margin-top:32px}";

fn page(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n<style>{STYLE}</style>\n</head>\n<body>\n{body}</body>\n</html>\n",
        escape(title)
    )
}

fn cell(artifact: &str, row: &str, col: &str, value: &str) -> String {
    format!(
        "<td data-artifact=\"{artifact}\" data-row=\"{}\" data-col=\"{}\">{}</td>",
        escape(row),
        escape(col),
        escape(value)
    )
}

struct CurveRow<'a> {
    channel: &'a str,
    slope: &'a str,
    saturation: &'a str,
    ceiling: &'a str,
    r2: &'a str,
}

fn curve_row(table: &Table, i: usize) -> Result<CurveRow<'_>, CliError> {
    let get = |name: &str| table.column(name).map(|c| table.rows[i][c].as_str());
    Ok(CurveRow {
        channel: get("channel")?,
        slope: get("slope")?,
        saturation: get("saturation")?,
        ceiling: get("ceiling")?,
        r2: get("r2")?,
    })
}

fn curves_table(table: &Table) -> Result<String, CliError> {
    let mut out = String::from("<table class=\"curves\"><tr><th>channel</th><th>slope</th><th>saturation</th><th>ceiling</th><th>r2</th></tr>");
    for i in 0..table.rows.len() {
        let r = curve_row(table, i)?;
        let _ = write!(out, "<tr><td>{}</td>", escape(r.channel));
        if r.slope.is_empty() {
            let _ = write!(out, "<td colspan=\"4\">not fitted</td></tr>");
            continue;
        }
        for (col, v) in [("slope", r.slope), ("saturation", r.saturation), ("ceiling", r.ceiling), ("r2", r.r2)] {
            out.push_str(&cell(artifacts::CURVES, r.channel, col, v));
        }
        out.push_str("</tr>");
    }
    out.push_str("</table>\n");
    Ok(out)
}

/// Chart for row `i` of the curve summary; `None` for flagged rows.
fn curve_svg(table: &Table, i: usize, observed: &[(f64, f64)]) -> Result<Option<String>, CliError> {
    let r = curve_row(table, i)?;
    if r.slope.is_empty() {
        return Ok(None);
    }
    let col = |name| table.column(name);
    let fit = mmm_core::curves::FittedCurve {
        slope: table.number(i, col("slope")?)?,
        saturation: table.number(i, col("saturation")?)?,
        ceiling: table.number(i, col("ceiling")?)?,
        r2: table.number(i, col("r2")?)?,
        half_saturation_response: table.number(i, col("ceiling")?)? / 2.0,
        converged: true,
    };
    let x_max = observed.iter().map(|p| p.0).fold(2.0 * fit.saturation, f64::max) * 1.05;
    let grid: Vec<f64> = (0..=96).map(|k| x_max * k as f64 / 96.0).collect();
    let fitted = mmm_core::curves::curve_points(&fit, &grid);
    let (g, half) = mmm_core::curves::saturation_point(&fit);
    let half_text = half.to_string();
    Ok(Some(svg::curve_chart(&CurveChart {
        channel: r.channel,
        observed,
        fitted: &fitted,
        saturation: g,
        half_response: half,
        saturation_text: r.saturation,
        half_response_text: &half_text,
    })))
}

pub fn curve_page(table: &Table, i: usize, observed: &[(f64, f64)]) -> Result<String, CliError> {
    let r = curve_row(table, i)?;
    let mut body = format!("<h1>Response curve: {}</h1>\n", escape(r.channel));
    if let Some(chart) = curve_svg(table, i, observed)? {
        body.push_str(&chart);
        body.push('\n');
    }
    let one = Table { header: table.header.clone(), rows: vec![table.rows[i].clone()] };
    body.push_str(&curves_table(&one)?);
    Ok(page(&format!("Response curve: {}", r.channel), &body))
}

fn metrics_section(metrics: &Value) -> String {
    let mut out = String::from("<h2>Fit metrics</h2>\n<table class=\"metrics\"><tr><th>metric</th><th>value</th></tr>");
    if let Value::Object(map) = metrics {
        for (k, v) in map {
            match v {
                Value::Array(items) => {
                    for item in items {
                        let text = item.as_str().map(String::from).unwrap_or_else(|| item.to_string());
                        let _ = write!(out, "<tr><td>{}</td><td>{}</td></tr>", escape(k), escape(&text));
                    }
                }
                other => {
                    let _ = write!(out, "<tr><td>{}</td>{}</tr>", escape(k), cell(artifacts::METRICS, "", k, &other.to_string()));
                }
            }
        }
    }
    out.push_str("</table>\n");
    out
}

fn dag_section(edges: &Table, labels: &[String]) -> Result<String, CliError> {
    let (sc, tc, wc) = (edges.column("source")?, edges.column("target")?, edges.column("weight")?);
    let mut list = Vec::with_capacity(edges.rows.len());
    let mut rows = String::new();
    for (i, row) in edges.rows.iter().enumerate() {
        let index = |name: &str| {
            labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| CliError::Data(format!("edge names unknown channel {name:?}")))
        };
        list.push(DagEdge {
            source: index(&row[sc])?,
            target: index(&row[tc])?,
            weight: edges.number(i, wc)?,
            weight_text: &row[wc],
        });
        let key = format!("{}->{}", row[sc], row[tc]);
        let _ = write!(
            rows,
            "<tr><td>{}</td><td>{}</td>{}</tr>",
            escape(&row[sc]),
            escape(&row[tc]),
            cell(artifacts::EDGES, &key, "weight", &row[wc])
        );
    }
    let mut out = String::from("<h2>Channel dependency graph</h2>\n");
    out.push_str(&svg::dag_chart(labels, &list));
    let _ = write!(
        out,
        "\n<table class=\"edges\"><tr><th>source</th><th>target</th><th>weight</th></tr>{rows}</table>\n"
    );
    if list.is_empty() {
        out.push_str("<p>No edges above the pruning threshold.</p>\n");
    }
    Ok(out)
}

fn series_section(predictions: &Table, train_weeks: usize) -> Result<String, CliError> {
    let (wc, ac, pc) = (predictions.column("week")?, predictions.column("actual")?, predictions.column("prediction")?);
    let mut weeks: Vec<&str> = Vec::new();
    let mut actual: Vec<f64> = Vec::new();
    let mut predicted: Vec<f64> = Vec::new();
    for i in 0..predictions.rows.len() {
        let w = predictions.rows[i][wc].as_str();
        let t = match weeks.iter().position(|x| *x == w) {
            Some(t) => t,
            None => {
                weeks.push(w);
                actual.push(0.0);
                predicted.push(0.0);
                weeks.len() - 1
            }
        };
        actual[t] += predictions.number(i, ac)?;
        predicted[t] += predictions.number(i, pc)?;
    }
    Ok(format!("<h2>Actual vs predicted</h2>\n{}\n", svg::series_chart(&actual, &predicted, train_weeks)))
}

/// Assembles `report.html` from the artifacts in `dir`.
pub fn build_report(dir: &Path, toggles: ReportToggles) -> Result<String, CliError> {
    let metrics_path = dir.join(artifacts::METRICS);
    let metrics_text = fs::read_to_string(&metrics_path).map_err(|e| CliError::Data(format!("{}: {e}", metrics_path.display())))?;
    let metrics: Value = serde_json::from_str(&metrics_text).map_err(|e| CliError::Data(format!("{}: {e}", metrics_path.display())))?;
    let ck = Checkpoint::load(dir.join(artifacts::CHECKPOINT)).map_err(|e| CliError::Data(e.to_string()))?;
    let contributions = Table::read(&dir.join(artifacts::CONTRIBUTIONS))?;

    let mut body = String::from("<h1>Marketing mix model report</h1>\n");
    body.push_str(&metrics_section(&metrics));
    if toggles.series {
        let train_weeks = metrics.get("train_weeks").and_then(Value::as_u64).unwrap_or(0) as usize;
        body.push_str(&series_section(&Table::read(&dir.join(artifacts::PREDICTIONS))?, train_weeks)?);
    }
    if toggles.dag {
        body.push_str(&dag_section(&Table::read(&dir.join(artifacts::EDGES))?, &ck.channel_labels)?);
    }
    if toggles.curves {
        let curves = Table::read(&dir.join(artifacts::CURVES))?;
        let cc = curves.column("channel")?;
        let labels: Vec<String> = curves.rows.iter().map(|r| r[cc].clone()).collect();
        let points = artifacts::overall_points(&contributions, &labels)?;
        body.push_str("<h2>Response curves</h2>\n");
        body.push_str(&curves_table(&curves)?);
        for (i, pts) in points.iter().enumerate() {
            if let Some(chart) = curve_svg(&curves, i, pts)? {
                body.push_str(&chart);
                body.push('\n');
            }
        }
    }
    Ok(page("Marketing mix model report", &body))
}
