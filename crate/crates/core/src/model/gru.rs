use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, DenseMatrix};

/// GRU weights. Input matrices are H×I, recurrent matrices H×H.
///
/// Gate convention:
/// `z = σ(Wz x + Uz h + bz)`, `r = σ(Wr x + Ur h + br)`,
/// `n = tanh(Wn x + Un (r∘h) + bn)`, `h' = (1 − z)∘n + z∘h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub wz: DenseMatrix,
    pub uz: DenseMatrix,
    pub bz: Vec<f64>,
    pub wr: DenseMatrix,
    pub ur: DenseMatrix,
    pub br: Vec<f64>,
    pub wn: DenseMatrix,
    pub un: DenseMatrix,
    pub bn: Vec<f64>,
}

impl GruParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let w = || DenseMatrix::zeros(hidden_size, input_size);
        let u = || DenseMatrix::zeros(hidden_size, hidden_size);
        Self {
            input_size,
            hidden_size,
            wz: w(),
            uz: u(),
            bz: vec![0.0; hidden_size],
            wr: w(),
            ur: u(),
            br: vec![0.0; hidden_size],
            wn: w(),
            un: u(),
            bn: vec![0.0; hidden_size],
        }
    }
}

/// Gate activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct GruCache {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
}

/// `m · x` accumulated into `out`.
fn gemv_add(m: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    let cols = m.cols();
    for (o, row) in out.iter_mut().zip(m.values().chunks_exact(cols.max(1))) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `mᵀ · y` accumulated into `out`.
fn gemv_t_add(m: &DenseMatrix, y: &[f64], out: &mut [f64]) {
    let cols = m.cols();
    for (&yi, row) in y.iter().zip(m.values().chunks_exact(cols.max(1))) {
        if yi == 0.0 {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(row) {
            *o += a * yi;
        }
    }
}

/// `acc += y xᵀ`.
fn outer_add(acc: &mut DenseMatrix, y: &[f64], x: &[f64]) {
    let cols = acc.cols();
    for (&yi, row) in y.iter().zip(acc.values_mut().chunks_exact_mut(cols.max(1))) {
        if yi == 0.0 {
            continue;
        }
        for (a, &xj) in row.iter_mut().zip(x) {
            *a += yi * xj;
        }
    }
}

/// Gate activations of one step, borrowed from wherever they are stored.
pub(crate) struct Gates<'a> {
    pub z: &'a [f64],
    pub r: &'a [f64],
    pub n: &'a [f64],
}

/// Allocation-free step: writes gates into `z`, `r`, `n` and the new state
/// into `h_out`.
pub(crate) fn gru_step_into(
    x: &[f64],
    h_prev: &[f64],
    p: &GruParams,
    z: &mut [f64],
    r: &mut [f64],
    n: &mut [f64],
    h_out: &mut [f64],
) {
    z.copy_from_slice(&p.bz);
    gemv_add(&p.wz, x, z);
    gemv_add(&p.uz, h_prev, z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    r.copy_from_slice(&p.br);
    gemv_add(&p.wr, x, r);
    gemv_add(&p.ur, h_prev, r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    // h_out doubles as scratch for r∘h before the final blend.
    for i in 0..h_prev.len() {
        h_out[i] = r[i] * h_prev[i];
    }
    n.copy_from_slice(&p.bn);
    gemv_add(&p.wn, x, n);
    gemv_add(&p.un, h_out, n);
    n.iter_mut().for_each(|v| *v = v.tanh());

    for i in 0..h_prev.len() {
        h_out[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
    }
}

pub(crate) fn gru_step(x: &[f64], h_prev: &[f64], p: &GruParams) -> (Vec<f64>, GruCache) {
    let h = p.hidden_size;
    let mut cache = GruCache { z: vec![0.0; h], r: vec![0.0; h], n: vec![0.0; h] };
    let mut out = vec![0.0; h];
    gru_step_into(x, h_prev, p, &mut cache.z, &mut cache.r, &mut cache.n, &mut out);
    (out, cache)
}

/// One GRU step: returns the next hidden state.
pub fn gru_cell(x: &[f64], h_prev: &[f64], p: &GruParams) -> Result<Vec<f64>> {
    if x.len() != p.input_size {
        return Err(Error::SizeMismatch { expected: p.input_size, actual: x.len() });
    }
    if h_prev.len() != p.hidden_size {
        return Err(Error::SizeMismatch { expected: p.hidden_size, actual: h_prev.len() });
    }
    Ok(gru_step(x, h_prev, p).0)
}

/// Reusable buffers for [`gru_step_backward_into`].
pub(crate) struct BackwardScratch {
    dan: Vec<f64>,
    daz: Vec<f64>,
    dar: Vec<f64>,
    rh: Vec<f64>,
    drh: Vec<f64>,
}

impl BackwardScratch {
    pub fn new(hidden: usize) -> Self {
        let v = || vec![0.0; hidden];
        Self { dan: v(), daz: v(), dar: v(), rh: v(), drh: v() }
    }
}

/// Reverse of [`gru_step_into`]. Accumulates weight gradients into `grad`
/// and overwrites `dx` and `dh_prev`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gru_step_backward_into(
    x: &[f64],
    h_prev: &[f64],
    gates: Gates<'_>,
    dh: &[f64],
    p: &GruParams,
    grad: &mut GruParams,
    dx: &mut [f64],
    dh_prev: &mut [f64],
    s: &mut BackwardScratch,
) {
    let h = p.hidden_size;
    let Gates { z, r, n } = gates;
    dx.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..h {
        dh_prev[i] = dh[i] * z[i];
        s.dan[i] = dh[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i]);
        s.daz[i] = dh[i] * (h_prev[i] - n[i]) * z[i] * (1.0 - z[i]);
        s.rh[i] = r[i] * h_prev[i];
        s.drh[i] = 0.0;
    }

    outer_add(&mut grad.wn, &s.dan, x);
    outer_add(&mut grad.un, &s.dan, &s.rh);
    grad.bn.iter_mut().zip(&s.dan).for_each(|(g, d)| *g += d);
    gemv_t_add(&p.wn, &s.dan, dx);
    gemv_t_add(&p.un, &s.dan, &mut s.drh);
    for i in 0..h {
        dh_prev[i] += s.drh[i] * r[i];
        s.dar[i] = s.drh[i] * h_prev[i] * r[i] * (1.0 - r[i]);
    }

    outer_add(&mut grad.wz, &s.daz, x);
    outer_add(&mut grad.uz, &s.daz, h_prev);
    grad.bz.iter_mut().zip(&s.daz).for_each(|(g, d)| *g += d);
    gemv_t_add(&p.wz, &s.daz, dx);
    gemv_t_add(&p.uz, &s.daz, dh_prev);

    outer_add(&mut grad.wr, &s.dar, x);
    outer_add(&mut grad.ur, &s.dar, h_prev);
    grad.br.iter_mut().zip(&s.dar).for_each(|(g, d)| *g += d);
    gemv_t_add(&p.wr, &s.dar, dx);
    gemv_t_add(&p.ur, &s.dar, dh_prev);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded(input: usize, hidden: usize, seed: u64, scale: f64) -> GruParams {
        let mut st = seed | 1;
        let mut next = move || {
            st = st.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((st >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * scale
        };
        let mut m = |r: usize, c: usize| DenseMatrix::from_row_major(r, c, (0..r * c).map(|_| next()).collect()).unwrap();
        let (wz, uz, wr, ur, wn, un) = (m(hidden, input), m(hidden, hidden), m(hidden, input), m(hidden, hidden), m(hidden, input), m(hidden, hidden));
        let mut b = |n: usize| (0..n).map(|_| next()).collect::<Vec<_>>();
        let (bz, br, bn) = (b(hidden), b(hidden), b(hidden));
        GruParams { input_size: input, hidden_size: hidden, wz, uz, bz, wr, ur, br, wn, un, bn }
    }

    /// Scalar re-derivation of the gate equations, one unit at a time.
    fn scalar_oracle(x: &[f64], h: &[f64], p: &GruParams) -> Vec<f64> {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let hn = p.hidden_size;
        let mut out = vec![0.0; hn];
        let mut r = vec![0.0; hn];
        for i in 0..hn {
            let mut a = p.br[i];
            for j in 0..x.len() {
                a += p.wr[(i, j)] * x[j];
            }
            for j in 0..hn {
                a += p.ur[(i, j)] * h[j];
            }
            r[i] = sig(a);
        }
        for i in 0..hn {
            let mut az = p.bz[i];
            let mut an = p.bn[i];
            for j in 0..x.len() {
                az += p.wz[(i, j)] * x[j];
                an += p.wn[(i, j)] * x[j];
            }
            for j in 0..hn {
                az += p.uz[(i, j)] * h[j];
                an += p.un[(i, j)] * (r[j] * h[j]);
            }
            let z = sig(az);
            out[i] = (1.0 - z) * an.tanh() + z * h[i];
        }
        out
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let p = GruParams::zeros(2, 3);
        let h = gru_cell(&[0.5, -1.0], &[0.0; 3], &p).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        let (_, cache) = gru_step(&[0.5, -1.0], &[0.0; 3], &p);
        assert_eq!(cache.z, vec![0.5; 3]);
        assert_eq!(cache.n, vec![0.0; 3]);
    }

    #[test]
    fn saturated_update_gate_carries_state() {
        let mut p = seeded(2, 3, 9, 0.3);
        p.bz = vec![40.0; 3];
        let prev = [0.3, -0.6, 0.9];
        let h = gru_cell(&[1.0, 2.0], &prev, &p).unwrap();
        for (a, b) in h.iter().zip(prev) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let p = seeded(4, 3, 21, 0.4);
        let x = [0.2, -0.7, 1.1, 0.05];
        let h0 = [0.1, -0.3, 0.25];
        let a = gru_cell(&x, &h0, &p).unwrap();
        let b = scalar_oracle(&x, &h0, &p);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn step_backward_matches_finite_differences() {
        let p = seeded(3, 4, 5, 0.6);
        let x = [0.4, -0.2, 0.9];
        let h0 = [0.2, -0.5, 0.1, 0.7];
        let w = [0.3, -1.2, 0.8, 0.5];
        let loss = |x: &[f64], h0: &[f64]| gru_cell(x, h0, &p).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let (_, cache) = gru_step(&x, &h0, &p);
        let mut grad = GruParams::zeros(3, 4);
        let (mut dx, mut dh) = (vec![0.0; 3], vec![0.0; 4]);
        let gates = Gates { z: &cache.z, r: &cache.r, n: &cache.n };
        gru_step_backward_into(&x, &h0, gates, &w, &p, &mut grad, &mut dx, &mut dh, &mut BackwardScratch::new(4));
        let step = 1e-6;
        for i in 0..3 {
            let (mut up, mut dn) = (x, x);
            up[i] += step;
            dn[i] -= step;
            let num = (loss(&up, &h0) - loss(&dn, &h0)) / (2.0 * step);
            assert!((num - dx[i]).abs() < 1e-8);
        }
        for i in 0..4 {
            let (mut up, mut dn) = (h0, h0);
            up[i] += step;
            dn[i] -= step;
            let num = (loss(&x, &up) - loss(&x, &dn)) / (2.0 * step);
            assert!((num - dh[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn size_mismatch() {
        let p = GruParams::zeros(2, 3);
        assert!(matches!(gru_cell(&[1.0], &[0.0; 3], &p), Err(Error::SizeMismatch { .. })));
        assert!(matches!(gru_cell(&[1.0, 1.0], &[0.0; 2], &p), Err(Error::SizeMismatch { .. })));
    }
}
