use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gru::{gru_step_backward_into, gru_step_into, BackwardScratch, Gates};
use super::{ModelDims, ModelParams};
use crate::dag::mix_into;
use crate::error::{Error, Result};
use crate::numeric::sigmoid;
use crate::panel::{PanelDataset, ScalingInfo};
use crate::saturation::{constrain, constrain_jacobian, hill, hill_gradients};

/// Everything the forward pass computed, in scaled KPI units.
///
/// Arrays are flat, region-major: `saturated[(r * weeks + t) * channels + c]`,
/// `hidden[(r * weeks + t) * hidden + i]`, `prediction[r * weeks + t]`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub dims: ModelDims,
    pub weeks: usize,
    pub burn_in: usize,
    pub saturated: Vec<f64>,
    pub mixed: Vec<f64>,
    pub hidden: Vec<f64>,
    pub beta: Vec<f64>,
    pub prediction: Vec<f64>,
    /// `γ_r · β · mixed` per channel.
    pub contributions: Vec<f64>,
    /// `Σ_k control_coef_k · control_k`.
    pub control_term: Vec<f64>,
    pub baseline: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Update, reset and candidate gate activations, laid out like `hidden`.
    pub(crate) gates: [Vec<f64>; 3],
    fingerprint: u64,
}

impl ForwardTrace {
    /// Whether week `t` contributes to the loss.
    pub fn in_loss(&self, t: usize) -> bool {
        t >= self.burn_in
    }
}

/// Cheap order-sensitive digest of everything the trace depends on.
fn fingerprint(params: &ModelParams, data: &PanelDataset) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |bits: u64| {
        h = (h ^ bits).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(29);
    };
    for v in params.flatten().iter().chain(&data.drivers).chain(&data.controls_data) {
        mix(v.to_bits());
    }
    mix(u64::from(params.head.learn_low));
    for d in [data.regions, data.weeks, data.channels, data.controls] {
        mix(d as u64);
    }
    h
}

struct RegionForward {
    saturated: Vec<f64>,
    mixed: Vec<f64>,
    hidden: Vec<f64>,
    beta: Vec<f64>,
    prediction: Vec<f64>,
    contributions: Vec<f64>,
    control_term: Vec<f64>,
    gates: [Vec<f64>; 3],
}

fn forward_region(params: &ModelParams, data: &PanelDataset, r: usize) -> RegionForward {
    let d = params.dims();
    let (tn, cn, kn, hn) = (data.weeks, d.channels, d.controls, d.hidden);
    let hill_params: Vec<_> = params.hill.iter().map(|&raw| constrain(raw)).collect();
    let bounds: Vec<(f64, f64)> = (0..cn).map(|c| params.head.bounds(c)).collect();
    let gamma = params.regions.gamma(r);
    let proj = &params.head.projection;
    let mut out = RegionForward {
        saturated: vec![0.0; tn * cn],
        mixed: Vec::with_capacity(tn * cn),
        hidden: vec![0.0; tn * hn],
        beta: Vec::with_capacity(tn * cn),
        prediction: Vec::with_capacity(tn),
        contributions: Vec::with_capacity(tn * cn),
        control_term: Vec::with_capacity(tn),
        gates: [vec![0.0; tn * hn], vec![0.0; tn * hn], vec![0.0; tn * hn]],
    };
    let zero_h = vec![0.0; hn];
    let mut input = vec![0.0; cn + kn];
    for t in 0..tn {
        let s = &mut out.saturated[t * cn..(t + 1) * cn];
        for ((y, &x), &p) in s.iter_mut().zip(data.driver_row(r, t)).zip(&hill_params) {
            *y = hill(x, p);
        }
        let m = mix_into(s, &params.dag.w);
        input[..cn].copy_from_slice(&m);
        input[cn..].copy_from_slice(data.control_row(r, t));
        let (before, rest) = out.hidden.split_at_mut(t * hn);
        let h_prev = if t == 0 { &zero_h[..] } else { &before[(t - 1) * hn..] };
        let h = &mut rest[..hn];
        let [gz, gr, gn] = &mut out.gates;
        let span = t * hn..(t + 1) * hn;
        gru_step_into(&input, h_prev, &params.gru, &mut gz[span.clone()], &mut gr[span.clone()], &mut gn[span], h);
        let mut channel_sum = 0.0;
        for c in 0..cn {
            let logit = params.head.bias[c] + (0..hn).map(|i| proj[(i, c)] * h[i]).sum::<f64>();
            let (low, high) = bounds[c];
            let beta = low + (high - low) * sigmoid(logit);
            let contrib = gamma * beta * m[c];
            channel_sum += contrib;
            out.beta.push(beta);
            out.contributions.push(contrib);
        }
        let ctrl: f64 = params.control_coefs.iter().zip(data.control_row(r, t)).map(|(a, b)| a * b).sum();
        out.prediction.push(params.regions.baseline[r] + channel_sum + ctrl);
        out.control_term.push(ctrl);
        out.mixed.extend_from_slice(&m);
    }
    out
}

fn check_shapes(params: &ModelParams, data: &PanelDataset) -> Result<ModelDims> {
    let d = params.dims();
    if data.regions != d.regions || data.channels != d.channels || data.controls != d.controls {
        return Err(Error::DimensionMismatch(format!(
            "model has {} regions, {} channels, {} controls; panel has {}, {}, {}",
            d.regions, d.channels, d.controls, data.regions, data.channels, data.controls
        )));
    }
    if params.gru.input_size != d.input_size() {
        return Err(Error::SizeMismatch { expected: d.input_size(), actual: params.gru.input_size });
    }
    Ok(d)
}

/// Runs the model over every region of a scaled panel.
pub fn forward(params: &ModelParams, data: &PanelDataset, burn_in: usize) -> Result<ForwardTrace> {
    let dims = check_shapes(params, data)?;
    if burn_in >= data.weeks {
        return Err(Error::InvalidBurnIn { burn_in, weeks: data.weeks });
    }
    let per_region: Vec<RegionForward> = (0..dims.regions).into_par_iter().map(|r| forward_region(params, data, r)).collect();
    let mut trace = ForwardTrace {
        dims,
        weeks: data.weeks,
        burn_in,
        saturated: Vec::new(),
        mixed: Vec::new(),
        hidden: Vec::new(),
        beta: Vec::new(),
        prediction: Vec::new(),
        contributions: Vec::new(),
        control_term: Vec::new(),
        baseline: params.regions.baseline.clone(),
        gamma: (0..dims.regions).map(|r| params.regions.gamma(r)).collect(),
        gates: [Vec::new(), Vec::new(), Vec::new()],
        fingerprint: fingerprint(params, data),
    };
    for reg in per_region {
        trace.saturated.extend(reg.saturated);
        trace.mixed.extend(reg.mixed);
        trace.hidden.extend(reg.hidden);
        trace.beta.extend(reg.beta);
        trace.prediction.extend(reg.prediction);
        trace.contributions.extend(reg.contributions);
        trace.control_term.extend(reg.control_term);
        for (dst, src) in trace.gates.iter_mut().zip(reg.gates) {
            dst.extend(src);
        }
    }
    Ok(trace)
}

fn backward_region(params: &ModelParams, data: &PanelDataset, trace: &ForwardTrace, dpred: &[f64], r: usize) -> Vec<f64> {
    let d = trace.dims;
    let (tn, cn, hn) = (trace.weeks, d.channels, d.hidden);
    let mut g = ModelParams::zeros(d, params.head.learn_low);
    let hill_params: Vec<_> = params.hill.iter().map(|&raw| constrain(raw)).collect();
    let hill_jac: Vec<_> = params.hill.iter().map(|&raw| constrain_jacobian(raw)).collect();
    let bounds: Vec<(f64, f64)> = (0..cn).map(|c| params.head.bounds(c)).collect();
    let gamma = trace.gamma[r];
    let proj = &params.head.projection;
    let w = &params.dag.w;

    let mut dh_next = vec![0.0; hn];
    let mut dh = vec![0.0; hn];
    let mut dm = vec![0.0; cn];
    let mut ds = vec![0.0; cn];
    let mut du = vec![0.0; cn + d.controls];
    let mut dgamma = 0.0;
    let mut input = vec![0.0; cn + d.controls];
    let mut scratch = BackwardScratch::new(hn);
    let zero_h = vec![0.0; hn];
    for t in (0..tn).rev() {
        let idx = r * tn + t;
        let gp = if trace.in_loss(t) { dpred[idx] } else { 0.0 };
        let cs = idx * cn..(idx + 1) * cn;
        let hs = idx * hn..(idx + 1) * hn;
        let m = &trace.mixed[cs.clone()];
        let s = &trace.saturated[cs.clone()];
        let beta = &trace.beta[cs];
        let h = &trace.hidden[hs.clone()];
        let h_prev = if t == 0 { &zero_h[..] } else { &trace.hidden[(idx - 1) * hn..idx * hn] };
        let controls = data.control_row(r, t);

        g.regions.baseline[r] += gp;
        for (gc, x) in g.control_coefs.iter_mut().zip(controls) {
            *gc += gp * x;
        }

        dm.iter_mut().for_each(|v| *v = 0.0);
        dh.copy_from_slice(&dh_next);
        if gp != 0.0 {
            for c in 0..cn {
                dgamma += gp * beta[c] * m[c];
                dm[c] = gp * gamma * beta[c];
                let dbeta = gp * gamma * m[c];
                let (low, high) = bounds[c];
                let logit = params.head.bias[c] + (0..hn).map(|i| proj[(i, c)] * h[i]).sum::<f64>();
                let sig = sigmoid(logit);
                let dlogit = dbeta * (high - low) * sig * (1.0 - sig);
                let dhigh = dbeta * sig;
                let dlow = dbeta * (1.0 - sig) + dhigh;
                g.head.bound_high_raw[c] += dhigh * sigmoid(params.head.bound_high_raw[c]);
                if params.head.learn_low {
                    g.head.bound_low_raw[c] += dlow * sigmoid(params.head.bound_low_raw[c]);
                }
                g.head.bias[c] += dlogit;
                for i in 0..hn {
                    g.head.projection[(i, c)] += dlogit * h[i];
                    dh[i] += proj[(i, c)] * dlogit;
                }
            }
        }

        input[..cn].copy_from_slice(m);
        input[cn..].copy_from_slice(controls);
        let gates = Gates { z: &trace.gates[0][hs.clone()], r: &trace.gates[1][hs.clone()], n: &trace.gates[2][hs] };
        gru_step_backward_into(&input, h_prev, gates, &dh, &params.gru, &mut g.gru, &mut du, &mut dh_next, &mut scratch);
        for c in 0..cn {
            dm[c] += du[c];
        }

        // m_j = s_j + Σ_i w_ij s_i
        ds.copy_from_slice(&dm);
        for i in 0..cn {
            for j in 0..cn {
                if i != j {
                    g.dag.w[(i, j)] += dm[j] * s[i];
                    ds[i] += w[(i, j)] * dm[j];
                }
            }
        }
        let x = data.driver_row(r, t);
        for c in 0..cn {
            if ds[c] == 0.0 {
                continue;
            }
            let hg = hill_gradients(x[c], hill_params[c]);
            g.hill[c].a_raw += ds[c] * hg.da * hill_jac[c].0;
            g.hill[c].g_raw += ds[c] * hg.dg * hill_jac[c].1;
        }
    }
    g.regions.scale_raw[r] = dgamma * sigmoid(params.regions.scale_raw[r]);
    g.flatten()
}

/// Reverse-mode gradient of a loss with respect to the flattened parameters,
/// given `dLoss/dPrediction` (R×T). Entries for burn-in weeks are ignored.
pub fn backward(params: &ModelParams, data: &PanelDataset, trace: &ForwardTrace, dpred: &[f64]) -> Result<Vec<f64>> {
    let d = check_shapes(params, data)?;
    if trace.dims != d || trace.weeks != data.weeks {
        return Err(Error::TraceMismatch("trace dimensions differ from inputs".into()));
    }
    if trace.fingerprint != fingerprint(params, data) {
        return Err(Error::TraceMismatch("trace was produced from different parameters or data".into()));
    }
    if dpred.len() != d.regions * data.weeks {
        return Err(Error::SizeMismatch { expected: d.regions * data.weeks, actual: dpred.len() });
    }
    let parts: Vec<Vec<f64>> = (0..d.regions)
        .into_par_iter()
        .map(|r| backward_region(params, data, trace, dpred, r))
        .collect();
    let mut total = vec![0.0; params.param_count()];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    Ok(total)
}

/// Additive decomposition in original KPI units, laid out like the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contributions {
    pub regions: usize,
    pub weeks: usize,
    pub channels: usize,
    /// R×T×C.
    pub channel: Vec<f64>,
    pub baseline: Vec<f64>,
    pub control: Vec<f64>,
    pub prediction: Vec<f64>,
}

impl Contributions {
    /// Sum of one channel's contribution over all regions and weeks.
    pub fn channel_total(&self, c: usize) -> f64 {
        self.channel.iter().skip(c).step_by(self.channels.max(1)).sum()
    }
}

pub fn decompose_contributions(trace: &ForwardTrace, scaling: &ScalingInfo) -> Contributions {
    let d = trace.dims;
    let (tn, cn) = (trace.weeks, d.channels);
    let mut out = Contributions {
        regions: d.regions,
        weeks: tn,
        channels: cn,
        channel: Vec::with_capacity(trace.contributions.len()),
        baseline: Vec::with_capacity(trace.prediction.len()),
        control: Vec::with_capacity(trace.prediction.len()),
        prediction: Vec::with_capacity(trace.prediction.len()),
    };
    for r in 0..d.regions {
        let k = scaling.kpi_scale.get(r).copied().unwrap_or(1.0);
        for t in 0..tn {
            let idx = r * tn + t;
            out.channel.extend(trace.contributions[idx * cn..(idx + 1) * cn].iter().map(|v| v * k));
            out.baseline.push(trace.baseline[r] * k);
            out.control.push(trace.control_term[idx] * k);
            out.prediction.push(trace.prediction[idx] * k);
        }
    }
    out
}
