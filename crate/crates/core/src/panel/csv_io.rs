use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{PanelDataset, WeekKey};

/// Column naming for panel CSV files.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSchema {
    pub region: String,
    pub week: String,
    pub kpi: String,
    pub channel_prefix: String,
    pub control_prefix: String,
    /// Restrict to these channel names (without prefix); all when `None`.
    pub channels: Option<Vec<String>>,
    pub controls: Option<Vec<String>>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            region: "region".into(),
            week: "week".into(),
            kpi: "kpi".into(),
            channel_prefix: "channel_".into(),
            control_prefix: "control_".into(),
            channels: None,
            controls: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset> {
    read_csv(File::open(path)?, schema)
}

fn select(headers: &[String], prefix: &str, wanted: &Option<Vec<String>>) -> Result<Vec<(String, usize)>> {
    let found: Vec<(String, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(prefix).map(|name| (name.to_string(), i)))
        .collect();
    match wanted {
        None => Ok(found),
        Some(names) => names
            .iter()
            .map(|n| {
                found
                    .iter()
                    .find(|(f, _)| f == n)
                    .cloned()
                    .ok_or_else(|| Error::MissingColumn(format!("{prefix}{n}")))
            })
            .collect(),
    }
}

fn parse_number(field: &str, column: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::UnparseableNumber {
        column: column.to_string(),
        value: field.to_string(),
    })
}

/// Parses a rectangular panel; rows may appear in any order.
pub fn read_csv<R: Read>(input: R, schema: &PanelSchema) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (region_col, week_col, kpi_col) = (col(&schema.region)?, col(&schema.week)?, col(&schema.kpi)?);
    let channel_cols = select(&headers, &schema.channel_prefix, &schema.channels)?;
    if channel_cols.is_empty() {
        return Err(Error::MissingColumn(format!("{}<name>", schema.channel_prefix)));
    }
    let control_cols = select(&headers, &schema.control_prefix, &schema.controls)?;

    struct Row {
        week: WeekKey,
        drivers: Vec<f64>,
        controls: Vec<f64>,
        kpi: f64,
    }
    let mut region_order: Vec<String> = Vec::new();
    let mut by_region: HashMap<String, Vec<Row>> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let region = record[region_col].trim().to_string();
        let week_raw = record[week_col].trim();
        let week = WeekKey::parse(week_raw)?;
        let mut drivers = Vec::with_capacity(channel_cols.len());
        for (name, i) in &channel_cols {
            let v = parse_number(&record[*i], &headers[*i])?;
            if v < 0.0 {
                return Err(Error::NegativeDriver {
                    column: name.clone(),
                    region: region.clone(),
                    week: week_raw.to_string(),
                    value: v,
                });
            }
            drivers.push(v);
        }
        let controls = control_cols
            .iter()
            .map(|(_, i)| parse_number(&record[*i], &headers[*i]))
            .collect::<Result<Vec<_>>>()?;
        let kpi = parse_number(&record[kpi_col], &schema.kpi)?;
        if !by_region.contains_key(&region) {
            region_order.push(region.clone());
        }
        by_region.entry(region).or_default().push(Row { week, drivers, controls, kpi });
    }
    if region_order.is_empty() {
        return Err(Error::NonRectangularPanel("no data rows".into()));
    }

    let mut weeks: Vec<WeekKey> = by_region.values().flatten().map(|r| r.week).collect();
    weeks.sort();
    weeks.dedup();
    if weeks.windows(2).any(|w| std::mem::discriminant(&w[0]) != std::mem::discriminant(&w[1])) {
        return Err(Error::UnparseableWeek("mixed integer and date week labels".into()));
    }
    let (cn, kn, tn) = (channel_cols.len(), control_cols.len(), weeks.len());
    let mut data = PanelDataset {
        regions: region_order.len(),
        weeks: tn,
        channels: cn,
        controls: kn,
        drivers: Vec::with_capacity(region_order.len() * tn * cn),
        controls_data: Vec::with_capacity(region_order.len() * tn * kn),
        kpi: Vec::with_capacity(region_order.len() * tn),
        week_index: weeks.clone(),
        region_labels: region_order.clone(),
        channel_labels: channel_cols.into_iter().map(|(n, _)| n).collect(),
        control_labels: control_cols.into_iter().map(|(n, _)| n).collect(),
    };
    for region in &region_order {
        let mut rows = by_region.remove(region).unwrap_or_default();
        rows.sort_by_key(|r| r.week);
        if rows.windows(2).any(|w| w[0].week == w[1].week) {
            return Err(Error::NonRectangularPanel(format!("region {region} has duplicate weeks")));
        }
        if rows.len() != tn {
            let have: Vec<WeekKey> = rows.iter().map(|r| r.week).collect();
            let missing = weeks.iter().find(|w| !have.contains(w)).expect("a week is missing");
            return Err(Error::NonRectangularPanel(format!("region {region} is missing week {missing}")));
        }
        for row in rows {
            data.drivers.extend(row.drivers);
            data.controls_data.extend(row.controls);
            data.kpi.push(row.kpi);
        }
    }
    data.validate()?;
    Ok(data)
}

/// Writes a panel in the default schema layout.
pub fn write_csv<W: Write>(data: &PanelDataset, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["region".to_string(), "week".to_string(), "kpi".to_string()];
    header.extend(data.channel_labels.iter().map(|c| format!("channel_{c}")));
    header.extend(data.control_labels.iter().map(|k| format!("control_{k}")));
    wtr.write_record(&header)?;
    for r in 0..data.regions {
        for t in 0..data.weeks {
            let mut row = vec![data.region_labels[r].clone(), data.week_index[t].to_string(), data.kpi_at(r, t).to_string()];
            row.extend(data.driver_row(r, t).iter().map(f64::to_string));
            row.extend(data.control_row(r, t).iter().map(f64::to_string));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "region,week,kpi,channel_tv\n\
        north,1,10,5\n\
        south,1,20,6\n\
        north,2,11,0\n\
        south,2,21,7\n\
        north,3,12,2\n\
        south,3,22,1\n";

    #[test]
    fn loads_minimal_panel() {
        let p = read_csv(MINIMAL.as_bytes(), &PanelSchema::default()).unwrap();
        assert_eq!((p.regions, p.weeks, p.channels, p.controls), (2, 3, 1, 0));
        assert_eq!(p.region_labels, vec!["north", "south"]);
        assert_eq!(p.channel_labels, vec!["tv"]);
        assert_eq!(p.kpi, vec![10.0, 11.0, 12.0, 20.0, 21.0, 22.0]);
        assert_eq!(p.driver(1, 2, 0), 1.0);
    }

    #[test]
    fn missing_cell_is_non_rectangular() {
        let csv: String = MINIMAL.lines().filter(|l| *l != "south,2,21,7").map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_csv(csv.as_bytes(), &PanelSchema::default()), Err(Error::NonRectangularPanel(_))));
    }

    #[test]
    fn duplicate_week_is_non_rectangular() {
        let csv = format!("{MINIMAL}north,3,12,2\n");
        assert!(matches!(read_csv(csv.as_bytes(), &PanelSchema::default()), Err(Error::NonRectangularPanel(_))));
    }

    #[test]
    fn negative_driver_rejected() {
        let csv = MINIMAL.replace("north,2,11,0", "north,2,11,-5");
        assert!(matches!(
            read_csv(csv.as_bytes(), &PanelSchema::default()),
            Err(Error::NegativeDriver { value, .. }) if value == -5.0
        ));
    }

    #[test]
    fn missing_columns() {
        let no_kpi = "region,week,channel_tv\nA,1,1\n";
        assert!(matches!(read_csv(no_kpi.as_bytes(), &PanelSchema::default()), Err(Error::MissingColumn(c)) if c == "kpi"));
        let no_channel = "region,week,kpi\nA,1,1\n";
        assert!(matches!(read_csv(no_channel.as_bytes(), &PanelSchema::default()), Err(Error::MissingColumn(_))));
    }

    #[test]
    fn bad_week() {
        let csv = "region,week,kpi,channel_tv\nA,soon,1,1\n";
        assert!(matches!(read_csv(csv.as_bytes(), &PanelSchema::default()), Err(Error::UnparseableWeek(_))));
    }

    #[test]
    fn iso_dates_sort_and_controls_select() {
        let csv = "region,week,kpi,channel_tv,channel_radio,control_price,control_temp\n\
            A,2024-01-15,3,1,2,9.5,1\n\
            A,2024-01-01,1,1,2,9.0,2\n\
            A,2024-01-08,2,1,2,9.2,3\n";
        let schema = PanelSchema {
            channels: Some(vec!["radio".into()]),
            controls: Some(vec!["price".into()]),
            ..PanelSchema::default()
        };
        let p = read_csv(csv.as_bytes(), &schema).unwrap();
        assert_eq!(p.kpi, vec![1.0, 2.0, 3.0]);
        assert_eq!(p.channel_labels, vec!["radio"]);
        assert_eq!(p.controls_data, vec![9.0, 9.2, 9.5]);
        assert_eq!(p.week_index[0].to_string(), "2024-01-01");
    }

    #[test]
    fn write_then_read() {
        let p = read_csv(MINIMAL.as_bytes(), &PanelSchema::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&p, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice(), &PanelSchema::default()).unwrap(), p);
    }
}
