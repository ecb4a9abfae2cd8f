//! Weighted DAG over channels learned with the trace-exponential acyclicity
//! function `h(W) = tr(exp(W∘W)) - d` inside an augmented-Lagrangian loop.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{clip_gradient_norm, cosine_learning_rate, matrix_exponential, optimizer_step, DenseMatrix, OptimizerState};

/// `rho` never grows beyond this.
pub const RHO_MAX: f64 = 1e8;
/// Escalation factor applied to `rho` when `h` stagnates.
pub const RHO_GROWTH: f64 = 10.0;
/// Required shrink factor of `h` between dual updates to avoid escalation.
pub const H_SHRINK: f64 = 0.25;

/// Edge weights plus augmented-Lagrangian bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagState {
    /// `w[(i, j)]` is the weight of edge `i -> j`; the diagonal is always zero.
    pub w: DenseMatrix,
    pub alpha: f64,
    pub rho: f64,
    /// Edge-pruning magnitude.
    pub threshold: f64,
    /// L1 weight on the off-diagonal entries.
    pub lambda_w: f64,
    /// `h` at the previous dual update, if any.
    pub last_h: Option<f64>,
}

impl DagState {
    pub fn new(channels: usize) -> Self {
        Self {
            w: DenseMatrix::zeros(channels, channels),
            alpha: 0.0,
            rho: 1.0,
            threshold: 0.1,
            lambda_w: 0.01,
            last_h: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.w.rows()
    }

    /// Number of free (off-diagonal) weights.
    pub fn free_len(&self) -> usize {
        let c = self.channels();
        c * c.saturating_sub(1)
    }

    /// Off-diagonal weights in row-major order.
    pub fn free_weights(&self) -> Vec<f64> {
        let c = self.channels();
        let mut out = Vec::with_capacity(self.free_len());
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    out.push(self.w[(i, j)]);
                }
            }
        }
        out
    }

    pub fn set_free_weights(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.free_len() {
            return Err(Error::SizeMismatch {
                expected: self.free_len(),
                actual: values.len(),
            });
        }
        let c = self.channels();
        let mut it = values.iter();
        for i in 0..c {
            for j in 0..c {
                self.w[(i, j)] = if i == j { 0.0 } else { *it.next().unwrap() };
            }
        }
        Ok(())
    }
}

/// Off-diagonal entries of a C×C matrix, row-major.
pub fn free_entries(m: &DenseMatrix) -> Vec<f64> {
    let c = m.rows();
    (0..c)
        .flat_map(|i| (0..c).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|ij| m[ij])
        .collect()
}

/// Acyclicity value `h(W)` and its gradient `exp(W∘W)ᵀ ∘ 2W`.
pub fn acyclicity(w: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    if !w.is_square() {
        return Err(Error::NonSquare {
            rows: w.rows(),
            cols: w.cols(),
        });
    }
    let squared = w.hadamard(w)?;
    let e = matrix_exponential(&squared)?;
    let h = (e.trace() - w.rows() as f64).max(0.0);
    let grad = e.transpose().hadamard(&w.scale(2.0))?;
    Ok((h, grad))
}

/// Augmented-Lagrangian penalty pieces for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DagPenalty {
    pub penalty: f64,
    pub h: f64,
    pub gradient: DenseMatrix,
}

/// `alpha·h + (rho/2)·h² + lambda_w·Σ|w_ij|`, with gradient with respect to W.
pub fn dag_penalty(state: &DagState) -> Result<DagPenalty> {
    let (h, dh) = acyclicity(&state.w)?;
    let l1: f64 = state.w.values().iter().map(|v| v.abs()).sum();
    let penalty = state.alpha * h + 0.5 * state.rho * h * h + state.lambda_w * l1;
    let coef = state.alpha + state.rho * h;
    let mut gradient = dh.scale(coef);
    let c = state.channels();
    for i in 0..c {
        for j in 0..c {
            let w = state.w[(i, j)];
            let sub = if w > 0.0 {
                1.0
            } else if w < 0.0 {
                -1.0
            } else {
                0.0
            };
            gradient[(i, j)] += state.lambda_w * sub;
            if i == j {
                gradient[(i, j)] = 0.0;
            }
        }
    }
    Ok(DagPenalty { penalty, h, gradient })
}

/// Multiplier and penalty-weight update after an inner optimization phase.
pub fn dual_update(state: &DagState, h: f64) -> DagState {
    if h <= 0.0 {
        return state.clone();
    }
    let mut next = state.clone();
    next.alpha += state.rho * h;
    let stagnated = state.last_h.is_some_and(|prev| h > H_SHRINK * prev);
    if stagnated {
        next.rho = (state.rho * RHO_GROWTH).min(RHO_MAX);
    }
    next.last_h = Some(h);
    next
}

/// One-hop mixing `s + Wᵀs`: each channel receives its weighted parents.
pub fn dag_mix(s: &[f64], state: &DagState) -> Result<Vec<f64>> {
    let c = state.channels();
    if s.len() != c {
        return Err(Error::SizeMismatch {
            expected: c,
            actual: s.len(),
        });
    }
    Ok(mix_into(s, &state.w))
}

pub(crate) fn mix_into(s: &[f64], w: &DenseMatrix) -> Vec<f64> {
    let c = s.len();
    let mut out = s.to_vec();
    for (i, &si) in s.iter().enumerate() {
        if si == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate().take(c) {
            *o += w[(i, j)] * si;
        }
    }
    out
}

/// A weighted directed edge between channel indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

/// Acyclic edge set, sorted by descending |weight|.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeList {
    pub edges: Vec<Edge>,
}

fn sort_edges(edges: &mut [Edge]) {
    edges.sort_by(|a, b| {
        b.weight
            .abs()
            .total_cmp(&a.weight.abs())
            .then(a.source.cmp(&b.source))
            .then(a.target.cmp(&b.target))
    });
}

/// Finds one directed cycle, returned as the list of edge indices along it.
fn find_cycle(nodes: usize, edges: &[Edge]) -> Option<Vec<usize>> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (k, e) in edges.iter().enumerate() {
        adj[e.source].push(k);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color = vec![0u8; nodes];
    let mut via: Vec<Option<usize>> = vec![None; nodes];
    for start in 0..nodes {
        if color[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        color[start] = 1;
        while let Some(top) = stack.last_mut() {
            let node = top.0;
            if top.1 < adj[node].len() {
                let k = adj[node][top.1];
                top.1 += 1;
                let t = edges[k].target;
                match color[t] {
                    0 => {
                        color[t] = 1;
                        via[t] = Some(k);
                        stack.push((t, 0));
                    }
                    1 => {
                        let mut cycle = vec![k];
                        let mut cur = node;
                        while cur != t {
                            let e = via[cur].expect("stack node has parent edge");
                            cycle.push(e);
                            cur = edges[e].source;
                        }
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                color[node] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Kahn topological sort; `None` when the edge set has a cycle.
pub fn topological_order(nodes: usize, edges: &[Edge]) -> Option<Vec<usize>> {
    let mut indegree = vec![0usize; nodes];
    for e in edges {
        indegree[e.target] += 1;
    }
    let mut ready: Vec<usize> = (0..nodes).filter(|&n| indegree[n] == 0).collect();
    ready.reverse();
    let mut order = Vec::with_capacity(nodes);
    while let Some(n) = ready.pop() {
        order.push(n);
        for e in edges.iter().filter(|e| e.source == n) {
            indegree[e.target] -= 1;
            if indegree[e.target] == 0 {
                ready.push(e.target);
            }
        }
    }
    (order.len() == nodes).then_some(order)
}

/// Thresholds W at `state.threshold` and breaks any remaining cycles by
/// dropping the weakest edge of each cycle found.
pub fn extract_edges(state: &DagState) -> EdgeList {
    let c = state.channels();
    let mut edges: Vec<Edge> = Vec::new();
    for i in 0..c {
        for j in 0..c {
            let weight = state.w[(i, j)];
            if i != j && weight.abs() >= state.threshold && weight != 0.0 {
                edges.push(Edge { source: i, target: j, weight });
            }
        }
    }
    while let Some(cycle) = find_cycle(c, &edges) {
        let weakest = *cycle
            .iter()
            .min_by(|&&a, &&b| edges[a].weight.abs().total_cmp(&edges[b].weight.abs()))
            .expect("cycle is non-empty");
        edges.remove(weakest);
    }
    sort_edges(&mut edges);
    EdgeList { edges }
}

impl EdgeList {
    pub fn is_acyclic(&self, nodes: usize) -> bool {
        self.edges.iter().all(|e| e.source != e.target) && topological_order(nodes, &self.edges).is_some()
    }

    /// Writes `source,target,weight` rows using channel labels.
    pub fn write_csv<W: Write>(&self, out: W, labels: &[String]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["source", "target", "weight"])?;
        for e in &self.edges {
            wtr.write_record([labels[e.source].as_str(), labels[e.target].as_str(), &e.weight.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, labels: &[String]) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut edges = Vec::new();
        let index = |name: &str| {
            labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| Error::MissingColumn(format!("unknown channel {name:?} in edge list")))
        };
        for row in rdr.records() {
            let row = row?;
            let weight = row[2].parse::<f64>().map_err(|_| Error::UnparseableNumber {
                column: "weight".into(),
                value: row[2].to_string(),
            })?;
            edges.push(Edge { source: index(&row[0])?, target: index(&row[1])?, weight });
        }
        Ok(Self { edges })
    }
}

/// Directed precision and recall of `found` against `truth`.
pub fn edge_recovery(found: &EdgeList, truth: &[(usize, usize)]) -> (f64, f64) {
    let hits = found
        .edges
        .iter()
        .filter(|e| truth.contains(&(e.source, e.target)))
        .count() as f64;
    let precision = if found.edges.is_empty() { if truth.is_empty() { 1.0 } else { 0.0 } } else { hits / found.edges.len() as f64 };
    let recall = if truth.is_empty() { 1.0 } else { hits / truth.len() as f64 };
    (precision, recall)
}

/// Least-squares structural fit `(1/2n)‖Z − ZW‖²` and its gradient `−(1/n)Zᵀ(Z − ZW)`.
///
/// `samples` is n×C with one observation per row.
pub fn structure_loss(samples: &DenseMatrix, w: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    let n = samples.rows().max(1) as f64;
    let residual = samples.sub(&samples.matmul(w)?)?;
    let loss = 0.5 * residual.values().iter().map(|r| r * r).sum::<f64>() / n;
    let mut grad = samples.transpose().matmul(&residual)?.scale(-1.0 / n);
    for i in 0..grad.rows() {
        grad[(i, i)] = 0.0;
    }
    Ok((loss, grad))
}

/// Configuration of the standalone structure learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub learning_rate: f64,
    pub steps_per_dual_update: usize,
    pub dual_updates: usize,
    pub lambda_w: f64,
    pub threshold: f64,
    pub clip_norm: f64,
    pub seed_scale: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            steps_per_dual_update: 200,
            dual_updates: 25,
            lambda_w: 0.01,
            threshold: 0.1,
            clip_norm: 1.0,
            seed_scale: 0.0,
        }
    }
}

/// Learns a DAG from linear observational data (rows are samples), by
/// adaptive-moment descent on the structural fit plus [`dag_penalty`], with a
/// [`dual_update`] every `steps_per_dual_update` steps.
pub fn learn_structure(samples: &DenseMatrix, config: &LearnerConfig) -> Result<DagState> {
    let c = samples.cols();
    let mut state = DagState::new(c);
    state.lambda_w = config.lambda_w;
    state.threshold = config.threshold;
    let total = config.steps_per_dual_update * config.dual_updates;
    let mut opt = OptimizerState::new(state.free_len(), config.learning_rate);
    let mut params = state.free_weights();
    for step in 0..total {
        state.set_free_weights(&params)?;
        let (_, fit_grad) = structure_loss(samples, &state.w)?;
        let pen = dag_penalty(&state)?;
        let grad = free_entries(&fit_grad.add(&pen.gradient)?);
        let grad = clip_gradient_norm(&grad, config.clip_norm);
        opt.learning_rate = cosine_learning_rate(config.learning_rate, step, total);
        let (next, s) = optimizer_step(&params, &grad, opt)?;
        params = next;
        opt = s;
        if (step + 1) % config.steps_per_dual_update == 0 {
            state.set_free_weights(&params)?;
            let (h, _) = acyclicity(&state.w)?;
            state = dual_update(&state, h);
        }
    }
    state.set_free_weights(&params)?;
    Ok(state)
}
