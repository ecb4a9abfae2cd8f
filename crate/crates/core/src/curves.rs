//! Post-hoc response curves `y = M·x^a / (x^a + g^a)` fitted to observed
//! driver/contribution pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Contributions;
use crate::numeric::{sigmoid, DenseMatrix};
use crate::panel::PanelDataset;
use crate::saturation::{constrain, hill, hill_gradients, HillParams, HillRaw};

const MIN_POINTS: usize = 8;
const MIN_DISTINCT_X: usize = 3;
const GRID_SLOPES: [f64; 5] = [2.0, 2.5, 3.0, 4.0, 6.0];
const GRID_SATURATIONS: usize = 7;
const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveLevel {
    Overall,
    Region(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveData {
    /// `(driver, response)` in original units.
    pub points: Vec<(f64, f64)>,
    pub level: CurveLevel,
}

impl CurveData {
    pub fn new(points: Vec<(f64, f64)>, level: CurveLevel) -> Result<Self> {
        let data = Self { points, level };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < MIN_POINTS {
            return Err(Error::InvalidCurveData(format!(
                "need at least {MIN_POINTS} points, got {}",
                self.points.len()
            )));
        }
        if let Some(&(x, y)) = self
            .points
            .iter()
            .find(|(x, y)| !x.is_finite() || !y.is_finite() || *x < 0.0 || *y < 0.0)
        {
            return Err(Error::InvalidCurveData(format!("point ({x}, {y}) is not finite and nonnegative")));
        }
        let mut xs: Vec<f64> = self.points.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        if xs.len() < MIN_DISTINCT_X {
            return Err(Error::InvalidCurveData(format!(
                "need at least {MIN_DISTINCT_X} distinct driver levels, got {}",
                xs.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedCurve {
    pub slope: f64,
    /// Half-saturation point in original driver units.
    pub saturation: f64,
    pub ceiling: f64,
    pub r2: f64,
    pub half_saturation_response: f64,
    /// False when no refinement met the stopping rule; the fit is then the
    /// best point reached.
    pub converged: bool,
}

impl FittedCurve {
    pub fn evaluate(&self, x: f64) -> f64 {
        self.ceiling * hill(x, HillParams { a: self.slope, g: self.saturation })
    }
}

/// Working parameters in normalized units: `(ln M, a_raw, ln g)`.
#[derive(Debug, Clone, Copy)]
struct Theta([f64; 3]);

impl Theta {
    fn hill(&self) -> HillParams {
        HillParams { a: constrain(HillRaw { a_raw: self.0[1], g_raw: 0.0 }).a, g: self.0[2].exp() }
    }
}

struct Problem {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Problem {
    fn sse(&self, th: Theta) -> f64 {
        let (m, p) = (th.0[0].exp(), th.hill());
        self.x.iter().zip(&self.y).map(|(&x, &y)| (m * hill(x, p) - y).powi(2)).sum()
    }

    /// Least-squares ceiling for fixed `(a, g)`; `None` when it would be nonpositive.
    fn best_ceiling(&self, p: HillParams) -> Option<f64> {
        let (mut hy, mut hh) = (0.0, 0.0);
        for (&x, &y) in self.x.iter().zip(&self.y) {
            let h = hill(x, p);
            hy += h * y;
            hh += h * h;
        }
        (hh > 0.0 && hy > 0.0).then(|| hy / hh)
    }

    /// Levenberg-Marquardt from `start`; returns the final point, its SSE and
    /// whether the stopping rule was met.
    fn refine(&self, start: Theta) -> (Theta, f64, bool) {
        let mut th = start;
        let mut sse = self.sse(th);
        let mut damping = 1e-3;
        for _ in 0..MAX_ITERATIONS {
            let (m, p) = (th.0[0].exp(), th.hill());
            let da_draw = sigmoid(th.0[1]);
            let mut jtj = [[0.0; 3]; 3];
            let mut jtr = [0.0; 3];
            for (&x, &y) in self.x.iter().zip(&self.y) {
                let h = hill(x, p);
                let hg = hill_gradients(x, p);
                let r = m * h - y;
                let j = [m * h, m * hg.da * da_draw, m * hg.dg * p.g];
                for a in 0..3 {
                    jtr[a] += j[a] * r;
                    for b in 0..3 {
                        jtj[a][b] += j[a] * j[b];
                    }
                }
            }
            let gnorm = jtr.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm <= 1e-14 * (1.0 + sse) {
                return (th, sse, true);
            }
            let mut improved = false;
            while damping < 1e12 {
                let mut a = jtj;
                for (i, row) in a.iter_mut().enumerate() {
                    row[i] += damping * jtj[i][i].max(1e-12);
                }
                let sys = DenseMatrix::from_rows(&a.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
                let Some(step) = sys.solve(&jtr.map(|v| -v)) else {
                    damping *= 10.0;
                    continue;
                };
                let cand = Theta([th.0[0] + step[0], th.0[1] + step[1], th.0[2] + step[2]]);
                let cand_sse = self.sse(cand);
                if cand_sse.is_finite() && cand_sse < sse {
                    let small_step = step.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-12;
                    let small_gain = sse - cand_sse <= 1e-15 * sse;
                    th = cand;
                    sse = cand_sse;
                    damping = (damping / 10.0).max(1e-12);
                    improved = true;
                    if small_step || small_gain {
                        return (th, sse, true);
                    }
                    break;
                }
                damping *= 10.0;
            }
            if !improved {
                // No descent direction left at any damping: a stationary point.
                return (th, sse, true);
            }
        }
        (th, sse, false)
    }
}

/// Multi-start least-squares Hill fit.
///
/// Drivers are divided by their geometric mean and responses by their
/// maximum, so the fit is covariant in both scales.
pub fn fit_curve(data: &CurveData) -> Result<FittedCurve> {
    data.validate()?;
    let n = data.points.len() as f64;
    let mean_y = data.points.iter().map(|p| p.1).sum::<f64>() / n;
    let ss_tot: f64 = data.points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateData("all responses are equal".into()));
    }
    let positive: Vec<f64> = data.points.iter().map(|p| p.0).filter(|&x| x > 0.0).collect();
    let x_scale = (positive.iter().map(|x| x.ln()).sum::<f64>() / positive.len() as f64).exp();
    let y_scale = data.points.iter().map(|p| p.1).fold(0.0, f64::max);
    let prob = Problem {
        x: data.points.iter().map(|p| p.0 / x_scale).collect(),
        y: data.points.iter().map(|p| p.1 / y_scale).collect(),
    };
    let lo = prob.x.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min).ln();
    let hi = prob.x.iter().copied().fold(0.0, f64::max).ln();

    let mut starts = Vec::with_capacity(GRID_SLOPES.len() * GRID_SATURATIONS);
    for &a in &GRID_SLOPES {
        let a_raw = HillRaw::from_params(HillParams { a, g: 1.0 }).a_raw;
        for k in 0..GRID_SATURATIONS {
            let lg = lo + (hi - lo) * k as f64 / (GRID_SATURATIONS - 1) as f64;
            let th = Theta([0.0, a_raw, lg]);
            if let Some(m) = prob.best_ceiling(th.hill()) {
                starts.push(Theta([m.ln(), a_raw, lg]));
            }
        }
    }
    if starts.is_empty() {
        return Err(Error::DegenerateData("no start yields a positive ceiling".into()));
    }

    let mut best: Option<(Theta, f64, bool)> = None;
    for start in starts {
        let (th, sse, ok) = prob.refine(start);
        if best.as_ref().is_none_or(|b| sse < b.1) {
            best = Some((th, sse, ok));
        }
    }
    let (th, sse_norm, converged) = best.expect("at least one start");
    let p = th.hill();
    let ceiling = th.0[0].exp() * y_scale;
    Ok(FittedCurve {
        slope: p.a,
        saturation: p.g * x_scale,
        ceiling,
        r2: 1.0 - sse_norm * y_scale * y_scale / ss_tot,
        half_saturation_response: ceiling / 2.0,
        converged,
    })
}

/// Half-saturation driver level and the response there.
pub fn saturation_point(curve: &FittedCurve) -> (f64, f64) {
    (curve.saturation, curve.ceiling / 2.0)
}

pub fn curve_points(curve: &FittedCurve, grid: &[f64]) -> Vec<(f64, f64)> {
    grid.iter().map(|&x| (x, curve.evaluate(x))).collect()
}

/// Weekly totals over regions of one channel's driver and contribution.
///
/// Negative contributions are clipped to zero.
pub fn overall_points(data: &PanelDataset, contributions: &Contributions, channel: usize) -> Result<CurveData> {
    check_alignment(data, contributions, channel)?;
    let points = (0..data.weeks)
        .map(|t| {
            let (mut x, mut y) = (0.0, 0.0);
            for r in 0..data.regions {
                x += data.driver(r, t, channel);
                y += contributions.channel[(r * data.weeks + t) * data.channels + channel];
            }
            (x, y.max(0.0))
        })
        .collect();
    CurveData::new(points, CurveLevel::Overall)
}

/// One region's weekly driver/contribution pairs for a channel.
pub fn region_points(
    data: &PanelDataset,
    contributions: &Contributions,
    channel: usize,
    region: usize,
) -> Result<CurveData> {
    check_alignment(data, contributions, channel)?;
    if region >= data.regions {
        return Err(Error::DimensionMismatch(format!("region {region} out of range")));
    }
    let points = (0..data.weeks)
        .map(|t| {
            let y = contributions.channel[(region * data.weeks + t) * data.channels + channel];
            (data.driver(region, t, channel), y.max(0.0))
        })
        .collect();
    CurveData::new(points, CurveLevel::Region(region))
}

fn check_alignment(data: &PanelDataset, contributions: &Contributions, channel: usize) -> Result<()> {
    let same = data.regions == contributions.regions
        && data.weeks == contributions.weeks
        && data.channels == contributions.channels;
    if !same {
        return Err(Error::DimensionMismatch("contributions do not match the panel".into()));
    }
    if channel >= data.channels {
        return Err(Error::DimensionMismatch(format!("channel {channel} out of range")));
    }
    Ok(())
}

/// Summary table with header `channel,slope,saturation,ceiling,r2`.
///
/// Channels without a fit get a row with empty numeric fields.
pub fn write_summary_csv<W: std::io::Write>(rows: &[(String, Option<FittedCurve>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["channel", "slope", "saturation", "ceiling", "r2"])?;
    for (name, c) in rows {
        match c {
            Some(c) => w.write_record([
                name.clone(),
                c.slope.to_string(),
                c.saturation.to_string(),
                c.ceiling.to_string(),
                c.r2.to_string(),
            ])?,
            None => w.write_record([name.as_str(), "", "", "", ""])?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn truth(x: f64) -> f64 {
        // Direct powers, independent of the library's Hill evaluation.
        100.0 * x.powf(2.5) / (x.powf(2.5) + 1000f64.powf(2.5))
    }

    fn grid20() -> Vec<f64> {
        (0..20).map(|i| 100.0 * 100f64.powf(i as f64 / 19.0)).collect()
    }

    fn noiseless() -> CurveData {
        CurveData::new(grid20().into_iter().map(|x| (x, truth(x))).collect(), CurveLevel::Overall).unwrap()
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn noiseless_recovery() {
        let c = fit_curve(&noiseless()).unwrap();
        assert!((c.slope - 2.5).abs() < 1e-3, "{c:?}");
        assert!((c.saturation / 1000.0 - 1.0).abs() < 1e-2, "{c:?}");
        assert!((c.ceiling / 100.0 - 1.0).abs() < 1e-2, "{c:?}");
        assert!(c.r2 > 0.999999 && c.converged);
    }

    #[test]
    fn noisy_recovery_over_seeds() {
        let mut slope_err = Vec::new();
        let mut sat_err = Vec::new();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.05).unwrap();
            let pts = grid20().into_iter().map(|x| (x, (truth(x) * (1.0 + noise.sample(&mut rng))).max(0.0))).collect();
            let c = fit_curve(&CurveData::new(pts, CurveLevel::Overall).unwrap()).unwrap();
            assert!(c.slope >= 2.0);
            slope_err.push((c.slope / 2.5 - 1.0).abs());
            sat_err.push((c.saturation / 1000.0 - 1.0).abs());
        }
        assert!(median(slope_err) < 0.10);
        assert!(median(sat_err) < 0.15);
    }

    #[test]
    fn degenerate_and_invalid() {
        let flat: Vec<_> = (0..10).map(|i| (i as f64, 0.0)).collect();
        assert!(matches!(fit_curve(&CurveData { points: flat, level: CurveLevel::Overall }), Err(Error::DegenerateData(_))));
        let few: Vec<_> = (0..5).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(CurveData::new(few, CurveLevel::Overall), Err(Error::InvalidCurveData(_))));
        let two_x: Vec<_> = (0..10).map(|i| ((i % 2) as f64, i as f64)).collect();
        assert!(matches!(CurveData::new(two_x, CurveLevel::Overall), Err(Error::InvalidCurveData(_))));
        let neg: Vec<_> = (0..10).map(|i| (i as f64, -1.0)).collect();
        assert!(CurveData::new(neg, CurveLevel::Overall).is_err());
    }

    #[test]
    fn saturation_point_examples() {
        let c = |m: f64, g: f64| FittedCurve {
            slope: 2.0,
            saturation: g,
            ceiling: m,
            r2: 1.0,
            half_saturation_response: m / 2.0,
            converged: true,
        };
        assert_eq!(saturation_point(&c(100.0, 1000.0)), (1000.0, 50.0));
        assert_eq!(saturation_point(&c(1.0, 0.5)), (0.5, 0.5));
        let pts = curve_points(&c(1.0, 3.0), &[0.0, 3.0, 30.0]);
        assert_eq!(pts[0].1, 0.0);
        assert_eq!(pts[1].1, 0.5);
        assert!((pts[2].1 - 100.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn scale_covariance() {
        let base = fit_curve(&noiseless()).unwrap();
        for s in [1e-3, 7.0, 1e4] {
            let pts = noiseless().points.iter().map(|&(x, y)| (x * s, y)).collect();
            let c = fit_curve(&CurveData::new(pts, CurveLevel::Overall).unwrap()).unwrap();
            assert!((c.slope / base.slope - 1.0).abs() < 1e-6);
            assert!((c.saturation / (base.saturation * s) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn refinement_never_worse_than_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let pts: Vec<_> = grid20().into_iter().map(|x| (x, (truth(x) + 5.0 * noise.sample(&mut rng)).max(0.0))).collect();
        let data = CurveData::new(pts.clone(), CurveLevel::Overall).unwrap();
        let c = fit_curve(&data).unwrap();
        let sse = |f: &dyn Fn(f64) -> f64| pts.iter().map(|&(x, y)| (f(x) - y).powi(2)).sum::<f64>();
        let fitted = sse(&|x| c.evaluate(x));
        let lo = pts[0].0.ln();
        let hi = pts[19].0.ln();
        for a in GRID_SLOPES {
            for k in 0..GRID_SATURATIONS {
                let g = (lo + (hi - lo) * k as f64 / 6.0).exp();
                let h: Vec<f64> = pts.iter().map(|&(x, _)| x.powf(a) / (x.powf(a) + g.powf(a))).collect();
                let m = h.iter().zip(&pts).map(|(h, p)| h * p.1).sum::<f64>() / h.iter().map(|h| h * h).sum::<f64>();
                let grid_sse = sse(&|x| m * x.powf(a) / (x.powf(a) + g.powf(a)));
                assert!(fitted <= grid_sse * (1.0 + 1e-9), "{fitted} > {grid_sse}");
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = fit_curve(&noiseless()).unwrap();
        let b = fit_curve(&noiseless()).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn summary_csv_header() {
        let mut buf = Vec::new();
        write_summary_csv(&[("tv".into(), fit_curve(&noiseless()).ok()), ("flat".into(), None)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("channel,slope,saturation,ceiling,r2\ntv,"));
        assert!(text.ends_with("\nflat,,,,\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn fitted_curve_valid_and_half_identity(
            m in 0.5f64..500.0, a in 2.0f64..5.0, g in 0.1f64..100.0, wiggle in 0.0f64..0.3
        ) {
            let pts: Vec<_> = (0..12)
                .map(|i| {
                    let x = g * 10f64.powf(-1.0 + 2.0 * i as f64 / 11.0);
                    let y = m * x.powf(a) / (x.powf(a) + g.powf(a));
                    (x, y * (1.0 + wiggle * ((i * 7 % 5) as f64 - 2.0) / 10.0))
                })
                .collect();
            let c = fit_curve(&CurveData::new(pts, CurveLevel::Overall).unwrap()).unwrap();
            prop_assert!(c.slope >= 2.0 && c.saturation > 0.0 && c.ceiling > 0.0);
            let (x, half) = saturation_point(&c);
            prop_assert!((c.evaluate(x) - half).abs() <= 1e-10 * half.max(1.0));
            let ys: Vec<f64> = curve_points(&c, &[0.0, x / 4.0, x, 4.0 * x, 40.0 * x]).iter().map(|p| p.1).collect();
            prop_assert!(ys.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
