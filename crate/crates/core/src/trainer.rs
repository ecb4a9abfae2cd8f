//! Composite loss, the full-batch training loop, and fit metrics.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dag::{acyclicity, dag_penalty, dual_update, extract_edges, free_entries, structure_loss, EdgeList};
use crate::error::{Error, Result};
use crate::model::{backward, decompose_contributions, forward, ModelConfig, ModelDims, ModelParams};
use crate::numeric::{clip_gradient_norm, cosine_learning_rate, huber_loss, optimizer_step, DenseMatrix, HuberSpec, OptimizerState};
use crate::panel::{apply_scaling, fit_scaling, PanelDataset, ScalingInfo, SplitSpec};

/// Acyclicity level below which the learned graph counts as a DAG.
pub const H_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub huber: HuberSpec,
    /// L1 weight on the coefficient-head projection.
    pub l1_coef: f64,
    /// Squared-L2 weight on the coefficient-head projection.
    pub l2_coef: f64,
    pub lambda_w: f64,
    pub clip_norm: f64,
    pub burn_in: usize,
    pub holdout_weeks: usize,
    pub seed: u64,
    pub dual_update_interval: usize,
    /// Weight of the least-squares structural fit of W to the drivers.
    pub structure_coef: f64,
    /// Edge-pruning magnitude τ.
    pub dag_threshold: f64,
    pub hidden: usize,
    pub learn_low_bound: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 0.01,
            huber: HuberSpec::default(),
            l1_coef: 1e-4,
            l2_coef: 1e-4,
            lambda_w: 0.01,
            clip_norm: 1.0,
            burn_in: 4,
            holdout_weeks: 8,
            seed: 42,
            dual_update_interval: 200,
            structure_coef: 1.0,
            dag_threshold: 0.1,
            hidden: 16,
            learn_low_bound: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.holdout_weeks == 0 {
            return bad("holdout_weeks must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        HuberSpec::new(self.huber.delta)?;
        for (name, v) in [
            ("l1_coef", self.l1_coef),
            ("l2_coef", self.l2_coef),
            ("lambda_w", self.lambda_w),
            ("structure_coef", self.structure_coef),
            ("dag_threshold", self.dag_threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.dual_update_interval == 0 {
            return bad("dual_update_interval must be at least 1");
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1");
        }
        Ok(())
    }
}

/// Fit quality in original KPI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r2: f64,
    pub rmse: f64,
    /// `rmse / mean_kpi`.
    pub relative_error: f64,
    pub mean_kpi: f64,
}

/// Pooled R², RMSE and relative error of `predicted` against `actual`.
pub fn compute_metrics(actual: &[f64], predicted: &[f64]) -> Result<Metrics> {
    if actual.len() != predicted.len() {
        return Err(Error::SizeMismatch { expected: actual.len(), actual: predicted.len() });
    }
    if actual.is_empty() {
        return Err(Error::DegenerateTarget);
    }
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    let ss_res: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
    let rmse = (ss_res / n).sqrt();
    Ok(Metrics {
        r2: 1.0 - ss_res / ss_tot,
        rmse,
        relative_error: rmse / mean,
        mean_kpi: mean,
    })
}

/// Runs the model over the scaled panel `scaled` from its first week and
/// scores the weeks in `weeks`, in original KPI units.
pub fn evaluate(params: &ModelParams, scaled: &PanelDataset, scaling: &ScalingInfo, weeks: Range<usize>) -> Result<Metrics> {
    if weeks.is_empty() || weeks.end > scaled.weeks {
        return Err(Error::InvalidSplit(format!("week range {weeks:?} outside 0..{}", scaled.weeks)));
    }
    let trace = forward(params, scaled, 0)?;
    let (mut actual, mut predicted) = (Vec::new(), Vec::new());
    for r in 0..scaled.regions {
        let k = scaling.kpi_scale[r];
        for t in weeks.clone() {
            actual.push(scaled.kpi_at(r, t) * k);
            predicted.push(trace.prediction[r * scaled.weeks + t] * k);
        }
    }
    compute_metrics(&actual, &predicted)
}

/// Centered drivers, one row per region-week, each region divided by a
/// single scale so that relative channel variances are preserved.
pub fn structure_samples(raw: &PanelDataset) -> DenseMatrix {
    let (rn, tn, cn) = (raw.regions, raw.weeks, raw.channels);
    let mut values = Vec::with_capacity(rn * tn * cn);
    for r in 0..rn {
        let mean: Vec<f64> = (0..cn).map(|c| (0..tn).map(|t| raw.driver(r, t, c)).sum::<f64>() / tn.max(1) as f64).collect();
        let var = (0..tn)
            .flat_map(|t| (0..cn).map(move |c| (t, c)))
            .map(|(t, c)| (raw.driver(r, t, c) - mean[c]).powi(2))
            .sum::<f64>()
            / (tn * cn).max(1) as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        for t in 0..tn {
            values.extend((0..cn).map(|c| (raw.driver(r, t, c) - mean[c]) / scale));
        }
    }
    DenseMatrix::from_row_major(rn * tn, cn, values).expect("finite drivers")
}

/// Loss value broken into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub fit: f64,
    pub regularization: f64,
    pub dag: f64,
    pub structure: f64,
    pub h: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.fit + self.regularization + self.dag + self.structure
    }
}

/// Huber fit over non-burn-in weeks, head regularizers, the DAG
/// augmented-Lagrangian penalty, and the structural term on `samples`.
/// Returns the loss pieces and the gradient aligned with `params.flatten()`.
pub fn composite_loss(
    params: &ModelParams,
    scaled: &PanelDataset,
    config: &TrainConfig,
    samples: Option<&DenseMatrix>,
) -> Result<(LossParts, Vec<f64>)> {
    let trace = forward(params, scaled, config.burn_in)?;
    let (rn, tn) = (scaled.regions, scaled.weeks);
    let mut residuals = Vec::with_capacity(rn * (tn - config.burn_in));
    for r in 0..rn {
        for t in config.burn_in..tn {
            residuals.push(trace.prediction[r * tn + t] - scaled.kpi_at(r, t));
        }
    }
    let (fit, dres) = huber_loss(&residuals, config.huber)?;
    let mut dpred = vec![0.0; rn * tn];
    let mut it = dres.into_iter();
    for r in 0..rn {
        for t in config.burn_in..tn {
            dpred[r * tn + t] = it.next().expect("one gradient per residual");
        }
    }
    let mut grad = backward(params, scaled, &trace, &dpred)?;

    let proj_range = params.projection_range();
    let proj = params.head.projection.values();
    let regularization = config.l1_coef * proj.iter().map(|v| v.abs()).sum::<f64>()
        + config.l2_coef * proj.iter().map(|v| v * v).sum::<f64>();
    for (g, &w) in grad[proj_range].iter_mut().zip(proj) {
        *g += config.l1_coef * w.signum() * f64::from(w != 0.0) + 2.0 * config.l2_coef * w;
    }

    let mut state = params.dag.clone();
    state.lambda_w = config.lambda_w;
    let pen = dag_penalty(&state)?;
    let mut dag_grad = pen.gradient;
    let mut structure = 0.0;
    if let Some(z) = samples {
        if config.structure_coef > 0.0 {
            let (l, g) = structure_loss(z, &params.dag.w)?;
            structure = config.structure_coef * l;
            dag_grad = dag_grad.add(&g.scale(config.structure_coef))?;
        }
    }
    for (g, d) in grad[params.dag_range()].iter_mut().zip(free_entries(&dag_grad)) {
        *g += d;
    }
    let parts = LossParts { fit, regularization, dag: pen.penalty, structure, h: pen.h };
    Ok((parts, grad))
}

/// Per-channel attribution over the full panel, in KPI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub channel: String,
    pub total_contribution: f64,
    /// Fraction of total predicted KPI.
    pub share_of_prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train: Metrics,
    pub holdout: Metrics,
    /// `train.r2 - holdout.r2`.
    pub gap: f64,
    pub loss_history: Vec<f64>,
    pub edges: EdgeList,
    pub channels: Vec<ChannelSummary>,
    pub final_h: f64,
    pub warnings: Vec<String>,
    pub scaling: ScalingInfo,
    pub split: SplitSpec,
    pub seed: u64,
    pub epochs: usize,
    pub burn_in: usize,
}

/// Trains on the earliest weeks and evaluates on the most recent
/// `holdout_weeks`. Scaling is fitted on the training weeks only.
pub fn train(data: &PanelDataset, config: &TrainConfig) -> Result<(ModelParams, FitReport)> {
    config.validate()?;
    data.validate()?;
    let split = SplitSpec::with_holdout(data.weeks, config.holdout_weeks)?;
    if config.burn_in >= split.train_weeks {
        return Err(Error::InvalidBurnIn { burn_in: config.burn_in, weeks: split.train_weeks });
    }
    let raw_train = data.slice_weeks(0..split.train_weeks)?;
    let scaling = fit_scaling(&raw_train);
    let scaled_train = apply_scaling(&raw_train, &scaling)?;
    let samples = structure_samples(&raw_train);

    let dims = ModelDims {
        regions: data.regions,
        channels: data.channels,
        controls: data.controls,
        hidden: config.hidden,
    };
    let model_config = ModelConfig { hidden: config.hidden, learn_low_bound: config.learn_low_bound };
    let mut params = ModelParams::init(dims, model_config, config.seed, &scaled_train)?;
    params.dag.lambda_w = config.lambda_w;
    params.dag.threshold = config.dag_threshold;

    let mut flat = params.flatten();
    let mut opt = OptimizerState::new(flat.len(), config.learning_rate);
    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (parts, grad) = composite_loss(&params, &scaled_train, config, Some(&samples))?;
        let loss = parts.total();
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        loss_history.push(loss);
        let grad = clip_gradient_norm(&grad, config.clip_norm);
        opt.learning_rate = cosine_learning_rate(config.learning_rate, epoch, config.epochs);
        let (next, state) = optimizer_step(&flat, &grad, opt)?;
        flat = next;
        opt = state;
        params = params.restore(&flat)?;
        if (epoch + 1) % config.dual_update_interval == 0 {
            let (h, _) = acyclicity(&params.dag.w)?;
            params.dag = dual_update(&params.dag, h);
        }
    }

    let (final_h, _) = acyclicity(&params.dag.w)?;
    let mut warnings = Vec::new();
    if final_h >= H_TOLERANCE {
        warnings.push(format!("acyclicity h(W) = {final_h:e} did not reach {H_TOLERANCE:e}; edge list was made acyclic by pruning"));
    }

    let scaled_full = apply_scaling(data, &scaling)?;
    let train_metrics = evaluate(&params, &scaled_full, &scaling, config.burn_in..split.train_weeks)?;
    let holdout_metrics = evaluate(&params, &scaled_full, &scaling, split.train_weeks..data.weeks)?;

    let trace = forward(&params, &scaled_full, 0)?;
    let dec = decompose_contributions(&trace, &scaling);
    let predicted_total: f64 = dec.prediction.iter().sum();
    let channels = (0..data.channels)
        .map(|c| {
            let total = dec.channel_total(c);
            ChannelSummary {
                channel: data.channel_labels[c].clone(),
                total_contribution: total,
                share_of_prediction: if predicted_total != 0.0 { total / predicted_total } else { 0.0 },
            }
        })
        .collect();

    let report = FitReport {
        gap: train_metrics.r2 - holdout_metrics.r2,
        train: train_metrics,
        holdout: holdout_metrics,
        loss_history,
        edges: extract_edges(&params.dag),
        channels,
        final_h,
        warnings,
        scaling,
        split,
        seed: config.seed,
        epochs: config.epochs,
        burn_in: config.burn_in,
    };
    Ok((params, report))
}

/// The machine-readable metrics document written next to a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub train_r2: f64,
    pub holdout_r2: f64,
    pub gap: f64,
    pub train_rmse: f64,
    pub holdout_rmse: f64,
    pub train_relative_error: f64,
    pub holdout_relative_error: f64,
    pub seed: u64,
    pub epochs: usize,
    pub final_h: f64,
    pub train_weeks: usize,
    pub holdout_weeks: usize,
    pub warnings: Vec<String>,
}

impl MetricsDocument {
    pub fn from_report(report: &FitReport) -> Self {
        Self {
            train_r2: report.train.r2,
            holdout_r2: report.holdout.r2,
            gap: report.gap,
            train_rmse: report.train.rmse,
            holdout_rmse: report.holdout.rmse,
            train_relative_error: report.train.relative_error,
            holdout_relative_error: report.holdout.relative_error,
            seed: report.seed,
            epochs: report.epochs,
            final_h: report.final_h,
            train_weeks: report.split.train_weeks,
            holdout_weeks: report.split.holdout_weeks,
            warnings: report.warnings.clone(),
        }
    }
}
