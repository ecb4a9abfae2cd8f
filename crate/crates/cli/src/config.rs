//! Layered run configuration: built-in defaults, then the TOML file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use mmm_core::panel::PanelSchema;
use mmm_core::trainer::TrainConfig;
use serde::Deserialize;

use crate::CliError;

/// Optional `[data]` table selecting panel columns.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    region: Option<String>,
    week: Option<String>,
    kpi: Option<String>,
    channel_prefix: Option<String>,
    control_prefix: Option<String>,
    channels: Option<Vec<String>>,
    controls: Option<Vec<String>>,
}

/// Which sections `report` renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportToggles {
    pub dag: bool,
    pub curves: bool,
    pub series: bool,
}

impl Default for ReportToggles {
    fn default() -> Self {
        Self { dag: true, curves: true, series: true }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    train: Option<toml::Table>,
    data: Option<DataSection>,
    report: Option<ReportToggles>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub schema: PanelSchema,
    pub report: ReportToggles,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub holdout_weeks: Option<usize>,
    pub epochs: Option<usize>,
}

impl RunConfig {
    pub fn resolve(
        data: Option<PathBuf>,
        out: PathBuf,
        config_path: Option<&Path>,
        flags: &FlagOverrides,
    ) -> Result<Self, CliError> {
        let file = match config_path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {}", p.display(), e.message())))?
            }
            None => FileConfig::default(),
        };
        let mut train = merge_train(file.train.unwrap_or_default())?;
        if let Some(s) = flags.seed {
            train.seed = s;
        }
        if let Some(h) = flags.holdout_weeks {
            train.holdout_weeks = h;
        }
        if let Some(e) = flags.epochs {
            train.epochs = e;
        }
        train.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        let mut schema = PanelSchema::default();
        if let Some(d) = file.data {
            schema.region = d.region.unwrap_or(schema.region);
            schema.week = d.week.unwrap_or(schema.week);
            schema.kpi = d.kpi.unwrap_or(schema.kpi);
            schema.channel_prefix = d.channel_prefix.unwrap_or(schema.channel_prefix);
            schema.control_prefix = d.control_prefix.unwrap_or(schema.control_prefix);
            schema.channels = d.channels;
            schema.controls = d.controls;
        }
        Ok(Self { data, out, train, schema, report: file.report.unwrap_or_default() })
    }
}

/// Overlays `[train]` keys on the defaults; unknown keys and wrong types are rejected.
fn merge_train(overrides: toml::Table) -> Result<TrainConfig, CliError> {
    let defaults = toml::Table::try_from(TrainConfig::default())
        .map_err(|e| CliError::Usage(format!("cannot encode defaults: {e}")))?;
    let mut merged = defaults.clone();
    for (key, value) in overrides {
        if !defaults.contains_key(&key) {
            return Err(CliError::Usage(format!("unknown [train] key {key:?}")));
        }
        merged.insert(key, value);
    }
    merged
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid [train] table: {}", e.message())))
}
