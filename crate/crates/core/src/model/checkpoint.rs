use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelDims, ModelParams};
use crate::error::{Error, Result};
use crate::panel::ScalingInfo;

const FORMAT: &str = "mmm-checkpoint/1";

/// Serializable snapshot of a trained model.
///
/// Floats are written with round-trip precision, so restoring yields
/// bit-identical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub regions: usize,
    pub channels: usize,
    pub controls: usize,
    pub hidden: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub learn_low: bool,
    pub params: Vec<f64>,
    pub dag_alpha: f64,
    pub dag_rho: f64,
    pub dag_threshold: f64,
    pub dag_lambda: f64,
    pub dag_last_h: Option<f64>,
    pub scaling: Option<ScalingInfo>,
    #[serde(default)]
    pub region_labels: Vec<String>,
    #[serde(default)]
    pub channel_labels: Vec<String>,
    #[serde(default)]
    pub control_labels: Vec<String>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, seed: u64, burn_in: usize) -> Self {
        let d = params.dims();
        Self {
            format: FORMAT.to_string(),
            regions: d.regions,
            channels: d.channels,
            controls: d.controls,
            hidden: d.hidden,
            seed,
            burn_in,
            learn_low: params.head.learn_low,
            params: params.flatten(),
            dag_alpha: params.dag.alpha,
            dag_rho: params.dag.rho,
            dag_threshold: params.dag.threshold,
            dag_lambda: params.dag.lambda_w,
            dag_last_h: params.dag.last_h,
            scaling: None,
            region_labels: Vec::new(),
            channel_labels: Vec::new(),
            control_labels: Vec::new(),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            regions: self.regions,
            channels: self.channels,
            controls: self.controls,
            hidden: self.hidden,
        }
    }

    pub fn restore(&self) -> Result<ModelParams> {
        if self.format != FORMAT {
            return Err(Error::InvalidCheckpoint(format!("unknown format {:?}", self.format)));
        }
        let mut shell = ModelParams::zeros(self.dims(), self.learn_low);
        if self.params.len() != shell.param_count() {
            return Err(Error::InvalidCheckpoint(format!(
                "expected {} parameters for the stated dimensions, found {}",
                shell.param_count(),
                self.params.len()
            )));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCheckpoint("non-finite parameter".into()));
        }
        shell.dag.alpha = self.dag_alpha;
        shell.dag.rho = self.dag_rho;
        shell.dag.threshold = self.dag_threshold;
        shell.dag.lambda_w = self.dag_lambda;
        shell.dag.last_h = self.dag_last_h;
        shell.restore(&self.params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidCheckpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn awkward_params() -> ModelParams {
        let dims = ModelDims { regions: 3, channels: 3, controls: 2, hidden: 5 };
        let zero = ModelParams::zeros(dims, true);
        let v: Vec<f64> = (0..zero.param_count())
            .map(|i| ((i as f64 + 0.1).sin() * 1e3).fract() / 3.0 + 1e-17 * i as f64)
            .collect();
        let mut p = zero.restore(&v).unwrap();
        p.dag.alpha = 0.1 + 0.2;
        p.dag.rho = 1e7 / 3.0;
        p.dag.last_h = Some(f64::MIN_POSITIVE);
        p
    }

    #[test]
    fn bit_exact_roundtrip() {
        let p = awkward_params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut ck = Checkpoint::new(&p, 42, 4);
        ck.channel_labels = vec!["tv".into(), "radio".into(), "search".into()];
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let q = back.restore().unwrap();
        let bits = |m: &ModelParams| m.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&q), bits(&p));
        assert_eq!(q, p);
    }

    #[test]
    fn rejects_inconsistent_header() {
        let mut ck = Checkpoint::new(&awkward_params(), 1, 4);
        ck.hidden = 4;
        assert!(matches!(ck.restore(), Err(Error::InvalidCheckpoint(_))));
        assert!(matches!(Checkpoint::from_json("{\"format\": 3}"), Err(Error::InvalidCheckpoint(_))));
    }
}
