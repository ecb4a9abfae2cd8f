//! The predictive model: Hill saturation, DAG mixing, a GRU shared across
//! regions, bounded time-varying coefficients, and region-scaled
//! contributions on top of a region baseline and a linear control term.

mod checkpoint;
mod gru;
mod pass;

pub use checkpoint::Checkpoint;
pub use gru::{gru_cell, GruParams};
pub use pass::{backward, decompose_contributions, forward, Contributions, ForwardTrace};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dag::DagState;
use crate::error::{Error, Result};
use crate::numeric::{softplus, softplus_inverse, DenseMatrix};
use crate::panel::PanelDataset;
use crate::saturation::{HillParams, HillRaw};

/// Floor added to the region scale and the coefficient-bound width.
pub const POSITIVE_FLOOR: f64 = 1e-3;

/// Structural sizes of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub regions: usize,
    pub channels: usize,
    pub controls: usize,
    pub hidden: usize,
}

impl ModelDims {
    pub fn input_size(&self) -> usize {
        self.channels + self.controls
    }
}

/// Per-channel projection from hidden state to coefficient logits, with
/// learnable bounds `low ≤ β ≤ high`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientHead {
    /// H×C.
    pub projection: DenseMatrix,
    pub bias: Vec<f64>,
    pub bound_low_raw: Vec<f64>,
    pub bound_high_raw: Vec<f64>,
    /// When false the lower bound is pinned at 0 and `bound_low_raw` is inert.
    pub learn_low: bool,
}

impl CoefficientHead {
    /// `(low, high)` for channel `c`.
    pub fn bounds(&self, c: usize) -> (f64, f64) {
        let low = if self.learn_low { softplus(self.bound_low_raw[c]) } else { 0.0 };
        (low, low + softplus(self.bound_high_raw[c]) + POSITIVE_FLOOR)
    }
}

/// Region baselines and scale factors `γ_r = softplus(scale_raw) + 1e-3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    pub baseline: Vec<f64>,
    pub scale_raw: Vec<f64>,
}

impl RegionParams {
    pub fn gamma(&self, r: usize) -> f64 {
        softplus(self.scale_raw[r]) + POSITIVE_FLOOR
    }
}

/// Full parameter set. Flattens to a single vector in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub gru: GruParams,
    pub head: CoefficientHead,
    pub regions: RegionParams,
    pub hill: Vec<HillRaw>,
    pub dag: DagState,
    pub control_coefs: Vec<f64>,
}

/// Model construction options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub learn_low_bound: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 16, learn_low_bound: false }
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> DenseMatrix {
    let values = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    DenseMatrix::from_row_major(rows, cols, values).expect("finite init")
}

impl ModelParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(dims: ModelDims, learn_low: bool) -> Self {
        let (c, k, h, r) = (dims.channels, dims.controls, dims.hidden, dims.regions);
        Self {
            gru: GruParams::zeros(dims.input_size(), h),
            head: CoefficientHead {
                projection: DenseMatrix::zeros(h, c),
                bias: vec![0.0; c],
                bound_low_raw: vec![0.0; c],
                bound_high_raw: vec![0.0; c],
                learn_low,
            },
            regions: RegionParams {
                baseline: vec![0.0; r],
                scale_raw: vec![0.0; r],
            },
            hill: vec![HillRaw::default(); c],
            dag: DagState::new(c),
            control_coefs: vec![0.0; k],
        }
    }

    /// Seeded initialization: GRU and head weights uniform in ±1/√fan-in,
    /// baselines at each region's mean scaled KPI, γ = 1, β upper bound 1,
    /// Hill at `a = 2 + ln 2`, `g = 0.5`, and an empty DAG.
    pub fn init(dims: ModelDims, config: ModelConfig, seed: u64, scaled: &PanelDataset) -> Result<Self> {
        if scaled.regions != dims.regions || scaled.channels != dims.channels || scaled.controls != dims.controls {
            return Err(Error::DimensionMismatch("panel does not match model dimensions".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(dims, config.learn_low_bound);
        let (i, h) = (dims.input_size(), dims.hidden);
        let bi = 1.0 / (i.max(1) as f64).sqrt();
        let bh = 1.0 / (h.max(1) as f64).sqrt();
        p.gru.wz = uniform_matrix(&mut rng, h, i, bi);
        p.gru.uz = uniform_matrix(&mut rng, h, h, bh);
        p.gru.wr = uniform_matrix(&mut rng, h, i, bi);
        p.gru.ur = uniform_matrix(&mut rng, h, h, bh);
        p.gru.wn = uniform_matrix(&mut rng, h, i, bi);
        p.gru.un = uniform_matrix(&mut rng, h, h, bh);
        p.head.projection = uniform_matrix(&mut rng, h, dims.channels, bh);
        p.head.bound_low_raw = vec![softplus_inverse(0.05); dims.channels];
        p.head.bound_high_raw = vec![softplus_inverse(1.0 - POSITIVE_FLOOR); dims.channels];
        let one = softplus_inverse(1.0 - POSITIVE_FLOOR);
        p.regions.scale_raw = vec![one; dims.regions];
        for r in 0..dims.regions {
            let sum: f64 = (0..scaled.weeks).map(|t| scaled.kpi_at(r, t)).sum();
            p.regions.baseline[r] = sum / scaled.weeks.max(1) as f64;
        }
        let g_raw = HillRaw::from_params(HillParams { a: 3.0, g: 0.5 }).g_raw;
        p.hill = vec![HillRaw { a_raw: 0.0, g_raw }; dims.channels];
        Ok(p)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            regions: self.regions.baseline.len(),
            channels: self.hill.len(),
            controls: self.control_coefs.len(),
            hidden: self.gru.hidden_size,
        }
    }

    pub fn param_count(&self) -> usize {
        let d = self.dims();
        let (i, h, c, r) = (d.input_size(), d.hidden, d.channels, d.regions);
        3 * (h * i + h * h + h) + (h * c + 3 * c) + 2 * r + 2 * c + c * c.saturating_sub(1) + d.controls
    }

    /// Index range of the coefficient-head projection within the flat vector.
    pub fn projection_range(&self) -> std::ops::Range<usize> {
        let d = self.dims();
        let start = 3 * (d.hidden * d.input_size() + d.hidden * d.hidden + d.hidden);
        start..start + d.hidden * d.channels
    }

    /// Index range of the free DAG weights within the flat vector.
    pub fn dag_range(&self) -> std::ops::Range<usize> {
        let d = self.dims();
        let end = self.param_count() - d.controls;
        end - self.dag.free_len()..end
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        let g = &self.gru;
        for m in [&g.wz, &g.uz] {
            v.extend_from_slice(m.values());
        }
        v.extend_from_slice(&g.bz);
        for m in [&g.wr, &g.ur] {
            v.extend_from_slice(m.values());
        }
        v.extend_from_slice(&g.br);
        for m in [&g.wn, &g.un] {
            v.extend_from_slice(m.values());
        }
        v.extend_from_slice(&g.bn);
        v.extend_from_slice(self.head.projection.values());
        v.extend_from_slice(&self.head.bias);
        v.extend_from_slice(&self.head.bound_low_raw);
        v.extend_from_slice(&self.head.bound_high_raw);
        v.extend_from_slice(&self.regions.baseline);
        v.extend_from_slice(&self.regions.scale_raw);
        for h in &self.hill {
            v.push(h.a_raw);
            v.push(h.g_raw);
        }
        v.extend(self.dag.free_weights());
        v.extend_from_slice(&self.control_coefs);
        v
    }

    /// Inverse of [`flatten`](Self::flatten); non-parameter state (DAG
    /// multipliers, flags) is kept from `self`.
    pub fn restore(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.param_count() {
            return Err(Error::SizeMismatch {
                expected: self.param_count(),
                actual: values.len(),
            });
        }
        let mut out = self.clone();
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = &values[pos..pos + n];
            pos += n;
            s
        };
        let g = &mut out.gru;
        for (w, u, b) in [
            (&mut g.wz, &mut g.uz, &mut g.bz),
            (&mut g.wr, &mut g.ur, &mut g.br),
            (&mut g.wn, &mut g.un, &mut g.bn),
        ] {
            let n = w.values().len();
            w.values_mut().copy_from_slice(take(n));
            let n = u.values().len();
            u.values_mut().copy_from_slice(take(n));
            let n = b.len();
            b.copy_from_slice(take(n));
        }

        let c = out.hill.len();
        let n = out.head.projection.values().len();
        out.head.projection.values_mut().copy_from_slice(take(n));
        out.head.bias.copy_from_slice(take(c));
        out.head.bound_low_raw.copy_from_slice(take(c));
        out.head.bound_high_raw.copy_from_slice(take(c));
        let r = out.regions.baseline.len();
        out.regions.baseline.copy_from_slice(take(r));
        out.regions.scale_raw.copy_from_slice(take(r));
        for hr in out.hill.iter_mut() {
            let s = take(2);
            hr.a_raw = s[0];
            hr.g_raw = s[1];
        }
        let free = out.dag.free_len();
        let w = take(free).to_vec();
        out.dag.set_free_weights(&w)?;
        let k = out.control_coefs.len();
        out.control_coefs.copy_from_slice(take(k));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{generate_synthetic, SynthConfig};
    use proptest::prelude::*;

    fn dims() -> ModelDims {
        ModelDims { regions: 2, channels: 3, controls: 1, hidden: 4 }
    }

    #[test]
    fn param_count_matches_flatten() {
        let (data, _) = generate_synthetic(&SynthConfig::standard(1, 2, 8, 3, 1)).unwrap();
        let p = ModelParams::init(dims(), ModelConfig { hidden: 4, learn_low_bound: false }, 7, &data).unwrap();
        assert_eq!(p.flatten().len(), p.param_count());
        let flat = p.flatten();
        assert_eq!(&flat[p.projection_range()], p.head.projection.values());
        assert_eq!(flat[p.dag_range()].to_vec(), p.dag.free_weights());
    }

    #[test]
    fn init_is_seeded_and_sane() {
        let (data, _) = generate_synthetic(&SynthConfig::standard(1, 2, 8, 3, 1)).unwrap();
        let cfg = ModelConfig { hidden: 4, learn_low_bound: false };
        let a = ModelParams::init(dims(), cfg, 7, &data).unwrap();
        let b = ModelParams::init(dims(), cfg, 7, &data).unwrap();
        assert_eq!(a, b);
        assert!((a.regions.gamma(0) - 1.0).abs() < 1e-12);
        assert!((a.head.bounds(0).1 - 1.0).abs() < 1e-12);
        assert_eq!(a.head.bounds(0).0, 0.0);
        let bound = 1.0 / (4f64).sqrt();
        assert!(a.gru.wz.values().iter().all(|v| v.abs() <= 0.5 + 1e-12));
        assert!(a.gru.uz.values().iter().all(|v| v.abs() <= bound + 1e-12));
        assert_ne!(a, ModelParams::init(dims(), cfg, 8, &data).unwrap());
    }

    proptest! {
        #[test]
        fn flatten_restore_identity(values in proptest::collection::vec(-5.0f64..5.0, 120)) {
            let zero = ModelParams::zeros(dims(), true);
            let n = zero.param_count();
            let v: Vec<f64> = values.iter().cycle().take(n).copied().collect();
            let restored = zero.restore(&v).unwrap();
            prop_assert_eq!(restored.flatten(), v);
            prop_assert_eq!(restored.restore(&restored.flatten()).unwrap(), restored.clone());
            for i in 0..3 { prop_assert_eq!(restored.dag.w[(i, i)], 0.0); }
        }
    }
}
