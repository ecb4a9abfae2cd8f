//! Multi-region weekly panels: validation, per-region scaling, temporal
//! splitting, CSV loading, and a synthetic generator with known ground truth.

mod csv_io;
mod synth;

pub use csv_io::{load_csv, read_csv, write_csv, PanelSchema};
pub use synth::{generate_synthetic, geometric_adstock, GroundTruth, SynthConfig};

use std::fmt;
use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Week label: either a plain integer index or an ISO-8601 date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WeekKey {
    Index(i64),
    Date(NaiveDate),
}

impl WeekKey {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(i) = s.parse::<i64>() {
            return Ok(WeekKey::Index(i));
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(WeekKey::Date)
            .map_err(|_| Error::UnparseableWeek(s.to_string()))
    }
}

impl fmt::Display for WeekKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeekKey::Index(i) => write!(f, "{i}"),
            WeekKey::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}

/// Region × week panel of channel drivers, controls, and KPI.
///
/// Arrays are flat and row-major: `drivers[(r * weeks + t) * channels + c]`,
/// `controls[(r * weeks + t) * controls + k]`, `kpi[r * weeks + t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub regions: usize,
    pub weeks: usize,
    pub channels: usize,
    pub controls: usize,
    pub drivers: Vec<f64>,
    pub controls_data: Vec<f64>,
    pub kpi: Vec<f64>,
    pub week_index: Vec<WeekKey>,
    pub region_labels: Vec<String>,
    pub channel_labels: Vec<String>,
    pub control_labels: Vec<String>,
}

impl PanelDataset {
    /// Checks dimensions, sign constraints, finiteness, and week ordering.
    pub fn validate(&self) -> Result<()> {
        let (r, t, c, k) = (self.regions, self.weeks, self.channels, self.controls);
        let checks = [
            ("drivers", self.drivers.len(), r * t * c),
            ("controls", self.controls_data.len(), r * t * k),
            ("kpi", self.kpi.len(), r * t),
            ("week_index", self.week_index.len(), t),
            ("region_labels", self.region_labels.len(), r),
            ("channel_labels", self.channel_labels.len(), c),
            ("control_labels", self.control_labels.len(), k),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::DimensionMismatch(format!("{name}: expected {want}, got {got}")));
            }
        }
        if self.drivers.iter().chain(&self.controls_data).chain(&self.kpi).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("panel contains non-finite values".into()));
        }
        if let Some(pos) = self.drivers.iter().position(|&v| v < 0.0) {
            let (ri, ti, ci) = (pos / (t * c), (pos / c) % t, pos % c);
            return Err(Error::NegativeDriver {
                column: self.channel_labels[ci].clone(),
                region: self.region_labels[ri].clone(),
                week: self.week_index[ti].to_string(),
                value: self.drivers[pos],
            });
        }
        if let Some(pos) = self.kpi.iter().position(|&v| v < 0.0) {
            return Err(Error::NegativeKpi {
                region: self.region_labels[pos / t].clone(),
                week: self.week_index[pos % t].to_string(),
                value: self.kpi[pos],
            });
        }
        if self.week_index.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::NonRectangularPanel("week index is not strictly increasing".into()));
        }
        Ok(())
    }

    pub fn driver(&self, r: usize, t: usize, c: usize) -> f64 {
        self.drivers[(r * self.weeks + t) * self.channels + c]
    }

    pub fn control(&self, r: usize, t: usize, k: usize) -> f64 {
        self.controls_data[(r * self.weeks + t) * self.controls + k]
    }

    pub fn kpi_at(&self, r: usize, t: usize) -> f64 {
        self.kpi[r * self.weeks + t]
    }

    /// Channel drivers of one region-week.
    pub fn driver_row(&self, r: usize, t: usize) -> &[f64] {
        let start = (r * self.weeks + t) * self.channels;
        &self.drivers[start..start + self.channels]
    }

    pub fn control_row(&self, r: usize, t: usize) -> &[f64] {
        let start = (r * self.weeks + t) * self.controls;
        &self.controls_data[start..start + self.controls]
    }

    /// Weeks in `range`, all regions, ordering preserved.
    pub fn slice_weeks(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.weeks {
            return Err(Error::InvalidSplit(format!("week range {range:?} outside 0..{}", self.weeks)));
        }
        let len = range.len();
        let mut drivers = Vec::with_capacity(self.regions * len * self.channels);
        let mut controls_data = Vec::with_capacity(self.regions * len * self.controls);
        let mut kpi = Vec::with_capacity(self.regions * len);
        for r in 0..self.regions {
            for t in range.clone() {
                drivers.extend_from_slice(self.driver_row(r, t));
                controls_data.extend_from_slice(self.control_row(r, t));
                kpi.push(self.kpi_at(r, t));
            }
        }
        Ok(Self {
            weeks: len,
            drivers,
            controls_data,
            kpi,
            week_index: self.week_index[range].to_vec(),
            ..self.clone_labels()
        })
    }

    /// Appends the weeks of `later` after the weeks of `self`.
    pub fn concat_weeks(&self, later: &Self) -> Result<Self> {
        if self.regions != later.regions || self.channels != later.channels || self.controls != later.controls {
            return Err(Error::DimensionMismatch("panels differ in regions, channels, or controls".into()));
        }
        let weeks = self.weeks + later.weeks;
        let mut drivers = Vec::with_capacity(self.drivers.len() + later.drivers.len());
        let mut controls_data = Vec::with_capacity(self.controls_data.len() + later.controls_data.len());
        let mut kpi = Vec::with_capacity(self.kpi.len() + later.kpi.len());
        for r in 0..self.regions {
            for (p, t) in (0..self.weeks).map(|t| (self, t)).chain((0..later.weeks).map(|t| (later, t))) {
                drivers.extend_from_slice(p.driver_row(r, t));
                controls_data.extend_from_slice(p.control_row(r, t));
                kpi.push(p.kpi_at(r, t));
            }
        }
        let mut week_index = self.week_index.clone();
        week_index.extend_from_slice(&later.week_index);
        Ok(Self {
            weeks,
            drivers,
            controls_data,
            kpi,
            week_index,
            ..self.clone_labels()
        })
    }

    fn clone_labels(&self) -> Self {
        Self {
            regions: self.regions,
            weeks: 0,
            channels: self.channels,
            controls: self.controls,
            drivers: Vec::new(),
            controls_data: Vec::new(),
            kpi: Vec::new(),
            week_index: Vec::new(),
            region_labels: self.region_labels.clone(),
            channel_labels: self.channel_labels.clone(),
            control_labels: self.control_labels.clone(),
        }
    }
}

/// Per-region divisors for drivers and KPI plus control standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo {
    /// R×C, row-major.
    pub driver_scale: Vec<f64>,
    pub kpi_scale: Vec<f64>,
    pub control_center: Vec<f64>,
    pub control_spread: Vec<f64>,
}

fn positive_or_one(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        1.0
    }
}

/// Max-scaling of drivers and KPI per region, mean/std for controls.
pub fn fit_scaling(data: &PanelDataset) -> ScalingInfo {
    let (rn, tn, cn, kn) = (data.regions, data.weeks, data.channels, data.controls);
    let mut driver_scale = vec![0.0_f64; rn * cn];
    let mut kpi_scale = vec![0.0_f64; rn];
    for r in 0..rn {
        for t in 0..tn {
            for c in 0..cn {
                let m = &mut driver_scale[r * cn + c];
                *m = m.max(data.driver(r, t, c));
            }
            kpi_scale[r] = kpi_scale[r].max(data.kpi_at(r, t));
        }
    }
    let cells = (rn * tn).max(1) as f64;
    let mut center = vec![0.0; kn];
    let mut spread = vec![0.0; kn];
    for k in 0..kn {
        let mean = (0..rn)
            .flat_map(|r| (0..tn).map(move |t| (r, t)))
            .map(|(r, t)| data.control(r, t, k))
            .sum::<f64>()
            / cells;
        let var = (0..rn)
            .flat_map(|r| (0..tn).map(move |t| (r, t)))
            .map(|(r, t)| (data.control(r, t, k) - mean).powi(2))
            .sum::<f64>()
            / cells;
        center[k] = mean;
        spread[k] = positive_or_one(var.sqrt());
    }
    ScalingInfo {
        driver_scale: driver_scale.into_iter().map(positive_or_one).collect(),
        kpi_scale: kpi_scale.into_iter().map(positive_or_one).collect(),
        control_center: center,
        control_spread: spread,
    }
}

impl ScalingInfo {
    fn check(&self, data: &PanelDataset) -> Result<()> {
        if self.driver_scale.len() != data.regions * data.channels
            || self.kpi_scale.len() != data.regions
            || self.control_center.len() != data.controls
            || self.control_spread.len() != data.controls
        {
            return Err(Error::DimensionMismatch(format!(
                "scaling fitted for {} regions / {} channels / {} controls",
                self.kpi_scale.len(),
                self.driver_scale.len() / self.kpi_scale.len().max(1),
                self.control_center.len()
            )));
        }
        Ok(())
    }

    fn transform(&self, data: &PanelDataset, forward: bool) -> Result<PanelDataset> {
        self.check(data)?;
        let mut out = data.clone();
        let (tn, cn, kn) = (data.weeks, data.channels, data.controls);
        for r in 0..data.regions {
            for t in 0..tn {
                let base = (r * tn + t) * cn;
                for c in 0..cn {
                    let s = self.driver_scale[r * cn + c];
                    let v = &mut out.drivers[base + c];
                    *v = if forward { *v / s } else { *v * s };
                }
                let kbase = (r * tn + t) * kn;
                for k in 0..kn {
                    let v = &mut out.controls_data[kbase + k];
                    let (m, s) = (self.control_center[k], self.control_spread[k]);
                    *v = if forward { (*v - m) / s } else { *v * s + m };
                }
                let v = &mut out.kpi[r * tn + t];
                *v = if forward { *v / self.kpi_scale[r] } else { *v * self.kpi_scale[r] };
            }
        }
        Ok(out)
    }
}

pub fn apply_scaling(data: &PanelDataset, scaling: &ScalingInfo) -> Result<PanelDataset> {
    scaling.transform(data, true)
}

pub fn inverse_scaling(data: &PanelDataset, scaling: &ScalingInfo) -> Result<PanelDataset> {
    scaling.transform(data, false)
}

/// Train/holdout week counts; the holdout is always the most recent block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_weeks: usize,
    pub holdout_weeks: usize,
}

impl SplitSpec {
    pub fn with_holdout(total_weeks: usize, holdout_weeks: usize) -> Result<Self> {
        if holdout_weeks == 0 || holdout_weeks >= total_weeks {
            return Err(Error::InvalidSplit(format!(
                "holdout of {holdout_weeks} weeks leaves no valid split of {total_weeks} weeks"
            )));
        }
        Ok(Self {
            train_weeks: total_weeks - holdout_weeks,
            holdout_weeks,
        })
    }

    pub fn holdout_fraction(&self) -> f64 {
        self.holdout_weeks as f64 / (self.train_weeks + self.holdout_weeks) as f64
    }
}

/// Splits into weeks `[0, train_weeks)` and `[train_weeks, T)`.
pub fn temporal_split(data: &PanelDataset, spec: SplitSpec) -> Result<(PanelDataset, PanelDataset)> {
    if spec.holdout_weeks == 0 || spec.train_weeks == 0 || spec.train_weeks + spec.holdout_weeks != data.weeks {
        return Err(Error::InvalidSplit(format!(
            "{} + {} weeks does not partition {} weeks",
            spec.train_weeks, spec.holdout_weeks, data.weeks
        )));
    }
    Ok((data.slice_weeks(0..spec.train_weeks)?, data.slice_weeks(spec.train_weeks..data.weeks)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn panel(regions: usize, weeks: usize, channels: usize, controls: usize, f: impl Fn(usize) -> f64) -> PanelDataset {
        PanelDataset {
            regions,
            weeks,
            channels,
            controls,
            drivers: (0..regions * weeks * channels).map(|i| f(i).abs()).collect(),
            controls_data: (0..regions * weeks * controls).map(|i| f(i + 7) - 0.5).collect(),
            kpi: (0..regions * weeks).map(|i| 10.0 + f(i + 3).abs()).collect(),
            week_index: (0..weeks as i64).map(WeekKey::Index).collect(),
            region_labels: (0..regions).map(|r| format!("r{r}")).collect(),
            channel_labels: (0..channels).map(|c| format!("c{c}")).collect(),
            control_labels: (0..controls).map(|k| format!("k{k}")).collect(),
        }
    }

    fn pseudo(i: usize) -> f64 {
        ((i as f64 * 12.9898).sin() * 43758.5453).fract().abs() * 100.0
    }

    #[test]
    fn week_keys() {
        assert_eq!(WeekKey::parse("12").unwrap(), WeekKey::Index(12));
        assert!(matches!(WeekKey::parse("2024-01-08").unwrap(), WeekKey::Date(_)));
        assert_eq!(WeekKey::parse("2024-01-08").unwrap().to_string(), "2024-01-08");
        assert!(matches!(WeekKey::parse("last week"), Err(Error::UnparseableWeek(_))));
    }

    #[test]
    fn max_scaling_of_driver_column() {
        let mut p = panel(1, 3, 2, 1, |_| 1.0);
        for (t, v) in [2.0, 4.0, 8.0].into_iter().enumerate() {
            p.drivers[t * 2] = v;
            p.drivers[t * 2 + 1] = 0.0;
        }
        let s = fit_scaling(&p);
        assert_eq!(s.driver_scale, vec![8.0, 1.0]);
        let scaled = apply_scaling(&p, &s).unwrap();
        assert_eq!((0..3).map(|t| scaled.driver(0, t, 0)).collect::<Vec<_>>(), vec![0.25, 0.5, 1.0]);
        assert!((0..3).all(|t| scaled.driver(0, t, 1) == 0.0));
    }

    #[test]
    fn control_standardization() {
        let mut p = panel(1, 3, 1, 1, |_| 1.0);
        p.controls_data = vec![1.0, 2.0, 3.0];
        let s = fit_scaling(&p);
        assert_eq!(s.control_center, vec![2.0]);
        assert!((s.control_spread[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kpi_scaling_and_identity() {
        let mut p = panel(1, 2, 1, 0, |_| 1.0);
        p.kpi = vec![100.0, 200.0];
        let s = fit_scaling(&p);
        assert_eq!(apply_scaling(&p, &s).unwrap().kpi, vec![0.5, 1.0]);

        let identity = ScalingInfo {
            driver_scale: vec![1.0],
            kpi_scale: vec![1.0],
            control_center: vec![],
            control_spread: vec![],
        };
        assert_eq!(apply_scaling(&p, &identity).unwrap(), p);
    }

    #[test]
    fn scaling_dimension_mismatch() {
        let p = panel(2, 3, 1, 0, pseudo);
        let s = fit_scaling(&panel(1, 3, 1, 0, pseudo));
        assert!(matches!(apply_scaling(&p, &s), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn split_examples() {
        let p = panel(2, 109, 1, 1, pseudo);
        let spec = SplitSpec::with_holdout(109, 8).unwrap();
        let (train, hold) = temporal_split(&p, spec).unwrap();
        assert_eq!((train.weeks, hold.weeks), (101, 8));
        assert!((spec.holdout_fraction() - 0.073).abs() < 5e-4);

        assert!(matches!(SplitSpec::with_holdout(10, 0), Err(Error::InvalidSplit(_))));
        let bad = SplitSpec { train_weeks: 10, holdout_weeks: 0 };
        assert!(matches!(temporal_split(&panel(1, 10, 1, 0, pseudo), bad), Err(Error::InvalidSplit(_))));

        let p = panel(1, 10, 1, 0, pseudo);
        let (train, hold) = temporal_split(&p, SplitSpec::with_holdout(10, 2).unwrap()).unwrap();
        assert_eq!(train.week_index, (0..8).map(WeekKey::Index).collect::<Vec<_>>());
        assert_eq!(hold.week_index, vec![WeekKey::Index(8), WeekKey::Index(9)]);
    }

    #[test]
    fn validate_catches_negative_driver() {
        let mut p = panel(1, 2, 1, 0, pseudo);
        p.drivers[1] = -5.0;
        assert!(matches!(p.validate(), Err(Error::NegativeDriver { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scaling_roundtrip(r in 1usize..4, t in 1usize..12, c in 1usize..4, k in 0usize..3, seed in 0usize..10_000) {
                let p = panel(r, t, c, k, |i| pseudo(i + seed) * (1.0 + (i % 5) as f64));
                let s = fit_scaling(&p);
                prop_assert!(s.driver_scale.iter().chain(&s.kpi_scale).chain(&s.control_spread).all(|&v| v > 0.0));
                let scaled = apply_scaling(&p, &s).unwrap();
                prop_assert!(scaled.drivers.iter().all(|&v| (0.0..=1.0).contains(&v)));
                let back = inverse_scaling(&scaled, &s).unwrap();
                for (a, b) in p.drivers.iter().chain(&p.controls_data).chain(&p.kpi)
                    .zip(back.drivers.iter().chain(&back.controls_data).chain(&back.kpi)) {
                    prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300) || a == b);
                }
            }

            #[test]
            fn split_concat_is_identity(t in 2usize..30, hold in 1usize..29, seed in 0usize..1000) {
                prop_assume!(hold < t);
                let p = panel(3, t, 2, 1, |i| pseudo(i + seed));
                let (a, b) = temporal_split(&p, SplitSpec::with_holdout(t, hold).unwrap()).unwrap();
                prop_assert_eq!(a.concat_weeks(&b).unwrap(), p);
            }
        }
    }
}
