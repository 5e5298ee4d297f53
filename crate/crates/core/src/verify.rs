//! Independent checks on truncated expansions: a coordinate finite-difference
//! curvature oracle, residual decay fits and field comparisons.
//!
//! The oracle works on the coordinate metric `g(d_a, d_b)` in `(s, x^1..x^n)`
//! and goes through Christoffel symbols and the Riemann contraction. It shares
//! nothing with the frame curvature code except spectral `x`-derivatives.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{FgError, Result};
use crate::frame::BlockMetricSeries;
use crate::grid::{partial_derivative, SpatialField};
use crate::linalg::invert;
use crate::recursion::ExpansionResult;

/// Fourth-order centered first-derivative weights on `-2h..=2h`.
const D1: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];

/// Relative difference floor for [`compare_fields`].
pub const COMPARE_FLOOR: f64 = 1e-14;

/// Step of the `s`-stencil. The oracle samples the metric at `s + k h` for
/// `k` in `-4..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stencil {
    pub step: f64,
}

impl Stencil {
    pub fn new(step: f64) -> Self {
        Stencil { step }
    }

    /// Step proportional to the evaluation point.
    pub fn relative(s: f64, frac: f64) -> Self {
        Stencil { step: s * frac }
    }

    pub fn halved(self) -> Self {
        Stencil {
            step: 0.5 * self.step,
        }
    }
}

/// Symmetric spacetime 2-tensor in coordinate components, row-major over
/// `(s, x^1..x^n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateTensor {
    pub dim: usize,
    pub comps: Vec<SpatialField>,
}

impl CoordinateTensor {
    pub fn get(&self, a: usize, b: usize) -> &SpatialField {
        &self.comps[a * self.dim + b]
    }

    pub fn sup_norm(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, c| m.max(c.sup_norm()))
    }

    pub fn scale(&self, a: f64) -> Self {
        CoordinateTensor {
            dim: self.dim,
            comps: self.comps.iter().map(|c| c.scale(a)).collect(),
        }
    }
}

/// Coordinate components at `s` of a frame 2-tensor series.
pub fn frame_to_coordinates(t: &BlockMetricSeries, s: f64) -> Result<CoordinateTensor> {
    Ok(CoordinateTensor {
        dim: t.dim() + 1,
        comps: t.coordinate_components_at(s)?,
    })
}

/// Coordinate Ricci tensor at `s` by finite differences in `s` and spectral
/// differentiation in `x`.
pub fn fd_oracle_ricci(g: &BlockMetricSeries, s: f64, stencil: Stencil) -> Result<CoordinateTensor> {
    let h = stencil.step;
    let lo = s - 4.0 * h;
    let hi = s + 4.0 * h;
    if !(h > 0.0) || !(lo > 0.0) || !(hi < 1.0) {
        return Err(FgError::StencilOutOfRange { lo, hi });
    }
    let chart = g.chart().clone();
    let d = g.dim() + 1;
    let samples = (-4..=4)
        .map(|k| {
            let comps = g.coordinate_components_at(s + k as f64 * h)?;
            Ok(comps.into_iter().map(|c| c.comp(0).to_vec()).collect())
        })
        .collect::<Result<Vec<Vec<Vec<f64>>>>>()?;

    let spatial = |v: &[f64], axis: usize| -> Result<Vec<f64>> {
        let f = SpatialField::scalar(&chart, v.to_vec())?;
        Ok(partial_derivative(&f, axis)?.comp(0).to_vec())
    };
    let fd = |vals: &[&Vec<f64>]| -> Vec<f64> {
        let len = vals[0].len();
        (0..len)
            .map(|p| D1.iter().zip(vals).map(|(w, v)| w * v[p]).sum::<f64>() / h)
            .collect()
    };

    // gammas[k][(a * d + b) * d + c] = Gamma^a_{bc} at s + (k - 2) h
    let mut gammas = Vec::with_capacity(5);
    for centre in 2..=6 {
        let metric = &samples[centre];
        let mut dg = vec![Vec::new(); d * d * d];
        for b in 0..d {
            for c in b..d {
                let bc = b * d + c;
                let col: Vec<&Vec<f64>> = (centre - 2..=centre + 2).map(|k| &samples[k][bc]).collect();
                let mut ds = vec![fd(&col)];
                for axis in 0..d - 1 {
                    ds.push(spatial(&metric[bc], axis)?);
                }
                for (e, v) in ds.into_iter().enumerate() {
                    dg[(e * d + c) * d + b] = v.clone();
                    dg[(e * d + b) * d + c] = v;
                }
            }
        }
        let inv = pointwise_inverse(metric, d, chart.len())?;
        let len = chart.len();
        let mut gamma = vec![vec![0.0; len]; d * d * d];
        for p in 0..len {
            for b in 0..d {
                for c in b..d {
                    for a in 0..d {
                        let mut acc = 0.0;
                        for f in 0..d {
                            let low = dg[(b * d + f) * d + c][p] + dg[(c * d + f) * d + b][p]
                                - dg[(f * d + b) * d + c][p];
                            acc += inv[a * d + f][p] * low;
                        }
                        gamma[(a * d + b) * d + c][p] = 0.5 * acc;
                        gamma[(a * d + c) * d + b][p] = 0.5 * acc;
                    }
                }
            }
        }
        gammas.push(gamma);
    }

    let len = chart.len();
    let mid = &gammas[2];
    let idx = |a: usize, b: usize, c: usize| (a * d + b) * d + c;
    // d_e Gamma^a_{bc}, keyed like gamma with a leading derivative index
    let mut dgamma = vec![Vec::new(); d * d * d * d];
    for a in 0..d {
        for b in 0..d {
            for c in b..d {
                let col: Vec<&Vec<f64>> = gammas.iter().map(|gm| &gm[idx(a, b, c)]).collect();
                let mut ds = vec![fd(&col)];
                for axis in 0..d - 1 {
                    ds.push(spatial(&mid[idx(a, b, c)], axis)?);
                }
                for (e, v) in ds.into_iter().enumerate() {
                    dgamma[e * d * d * d + idx(a, c, b)] = v.clone();
                    dgamma[e * d * d * d + idx(a, b, c)] = v;
                }
            }
        }
    }
    let dgm = |e: usize, a: usize, b: usize, c: usize, p: usize| dgamma[e * d * d * d + idx(a, b, c)][p];

    let mut comps = Vec::with_capacity(d * d);
    for b in 0..d {
        for c in 0..d {
            let mut out = vec![0.0; len];
            for (p, o) in out.iter_mut().enumerate() {
                let mut r = 0.0;
                for a in 0..d {
                    r += dgm(a, a, b, c, p) - dgm(c, a, a, b, p);
                    for e in 0..d {
                        r += mid[idx(a, a, e)][p] * mid[idx(e, b, c)][p]
                            - mid[idx(a, c, e)][p] * mid[idx(e, a, b)][p];
                    }
                }
                *o = r;
            }
            comps.push(out);
        }
    }
    let mut fields = Vec::with_capacity(d * d);
    for b in 0..d {
        for c in 0..d {
            let v: Vec<f64> = comps[b * d + c]
                .iter()
                .zip(&comps[c * d + b])
                .map(|(x, y)| 0.5 * (x + y))
                .collect();
            fields.push(SpatialField::scalar(&chart, v)?);
        }
    }
    Ok(CoordinateTensor { dim: d, comps: fields })
}

fn pointwise_inverse(metric: &[Vec<f64>], d: usize, len: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![vec![0.0; len]; d * d];
    let mut m = vec![0.0; d * d];
    for p in 0..len {
        for (k, v) in m.iter_mut().enumerate() {
            *v = metric[k][p];
        }
        let inv = invert(&m, d, 1e-14).ok_or(FgError::SingularLeadingBlock { point: p })?;
        for (k, v) in inv.into_iter().enumerate() {
            out[k][p] = v;
        }
    }
    Ok(out)
}

/// Measured decay of a residual across `s` samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub s_samples: Vec<f64>,
    pub norms: Vec<f64>,
    /// Least-squares slope of `ln |res|` against `ln s`, `+inf` if the
    /// residual vanishes identically.
    pub fitted_slope: f64,
    pub log_correction_used: bool,
    pub exact_zero: bool,
    /// Log power of the leading residual term.
    pub log_level: usize,
}

fn check_samples(s: &[f64]) -> Result<()> {
    if s.len() < 4 {
        return Err(FgError::DegenerateFit(format!(
            "need at least 4 samples, got {}",
            s.len()
        )));
    }
    if s.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(FgError::DegenerateFit("samples must lie in (0, 1)".into()));
    }
    if s.windows(2).any(|w| w[1] >= w[0]) {
        return Err(FgError::DegenerateFit(
            "samples must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Least-squares slope of `ln(norm)` against `ln(s)`.
pub fn fit_slope(s: &[f64], norms: &[f64]) -> Result<f64> {
    check_samples(s)?;
    if s.len() != norms.len() {
        return Err(FgError::DegenerateFit("sample and norm counts differ".into()));
    }
    if norms.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(FgError::DegenerateFit(
            "norms must be positive and finite".into(),
        ));
    }
    let xs: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Decay report of a frame residual series evaluated at each sample.
pub fn series_decay_report(residual: &BlockMetricSeries, s_samples: &[f64]) -> Result<DecayReport> {
    check_samples(s_samples)?;
    let keys = residual.keys();
    let leading = keys
        .iter()
        .map(|k| k.0)
        .find(|&i| residual.order_norm(i) > 0.0);
    let Some(lead) = leading else {
        return Ok(DecayReport {
            s_samples: s_samples.to_vec(),
            norms: vec![0.0; s_samples.len()],
            fitted_slope: f64::INFINITY,
            log_correction_used: false,
            exact_zero: true,
            log_level: 0,
        });
    };
    let log_level = keys
        .iter()
        .filter(|k| k.0 == lead)
        .filter(|k| {
            let c = residual.coefficient(k.0, k.1);
            c.t00.sup_norm().max(c.t0i.sup_norm()).max(c.tij.sup_norm()) > 0.0
        })
        .map(|k| k.1)
        .max()
        .unwrap_or(0);
    let norms = s_samples
        .iter()
        .map(|&s| {
            Ok(residual
                .g00
                .evaluate_at(s)?
                .sup_norm()
                .max(residual.g0i.evaluate_at(s)?.sup_norm())
                .max(residual.gij.evaluate_at(s)?.sup_norm()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let log_correction_used = log_level > 0;
    let fitted: Vec<f64> = if log_correction_used {
        norms
            .iter()
            .zip(s_samples)
            .map(|(v, s)| v / s.ln().abs())
            .collect()
    } else {
        norms.clone()
    };
    let fitted_slope = fit_slope(s_samples, &fitted)?;
    Ok(DecayReport {
        s_samples: s_samples.to_vec(),
        norms,
        fitted_slope,
        log_correction_used,
        exact_zero: false,
        log_level,
    })
}

/// Decay of the Einstein residual of a truncated expansion.
///
/// The residual is carried four orders past the truncation. Coefficients at
/// orders `<= N` below the zero tolerance are the round-off of terms that
/// vanish identically and are dropped before evaluation.
pub fn residual_report(result: &ExpansionResult, s_samples: &[f64]) -> Result<DecayReport> {
    check_samples(s_samples)?;
    let res = result.residual(result.order + 4)?;
    let tol = result.tol.zero * result.scale;
    let mut cleaned = res.clone();
    for (i, m) in res.keys() {
        if i <= result.order && res.order_norm(i) <= tol {
            cleaned.g00.remove(i, m);
            cleaned.g0i.remove(i, m);
            cleaned.gij.remove(i, m);
        }
    }
    series_decay_report(&cleaned, s_samples)
}

/// Writes `s, residual_norm, log_level_active` rows.
pub fn write_decay_csv<W: Write>(report: &DecayReport, mut w: W) -> io::Result<()> {
    writeln!(w, "s,residual_norm,log_level_active")?;
    for (s, v) in report.s_samples.iter().zip(&report.norms) {
        writeln!(w, "{s:e},{v:e},{}", report.log_level)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub rel_diff: f64,
    pub pass: bool,
}

/// `max |a - b| / max(|b|, floor)` over all components.
pub fn compare_fields(a: &[SpatialField], b: &[SpatialField], tol: f64) -> Result<Comparison> {
    if a.len() != b.len() {
        return Err(FgError::ShapeMismatch(format!(
            "{} components against {}",
            a.len(),
            b.len()
        )));
    }
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        x.same_shape(y)?;
        diff = diff.max(x.max_abs_diff(y));
        scale = scale.max(y.sup_norm());
    }
    let rel_diff = diff / scale.max(COMPARE_FLOOR);
    Ok(Comparison {
        rel_diff,
        pass: rel_diff <= tol,
    })
}

pub fn compare_tensors(a: &CoordinateTensor, b: &CoordinateTensor, tol: f64) -> Result<Comparison> {
    compare_fields(&a.comps, &b.comps, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::frame_ricci;
    use crate::grid::Chart;
    use crate::series::PhgSeries;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_block_metric(seed: u64, n: usize, order: usize) -> BlockMetricSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut res = vec![1; n];
        res[0] = 16;
        let chart = Chart::periodic(n, res).unwrap();
        let mut gij = PhgSeries::constant(order, SpatialField::identity(&chart));
        for i in 1..=3 {
            let a: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-0.1..0.1)).collect();
            let c = SpatialField::sym2_from_fn(&chart, |p, q, x| {
                let k = p.min(q) * n + p.max(q);
                a[k] * (x[0] + k as f64).sin()
            });
            gij.insert(i, 0, c);
        }
        let a00 = rng.gen_range(-0.1..0.1);
        let g00 = PhgSeries::constant(order, SpatialField::constant_scalar(&chart, -1.0))
            .add(&PhgSeries::monomial(
                order,
                2,
                0,
                SpatialField::scalar_from_fn(&chart, |x| a00 * x[0].cos()),
            ))
            .unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let g0i = PhgSeries::monomial(
            order,
            2,
            0,
            SpatialField::from_fn(&chart, 1, |idx, x| b[idx[0]] * x[0].sin()),
        );
        BlockMetricSeries::new(g00, g0i, gij).unwrap()
    }

    #[test]
    fn de_sitter_oracle() {
        for n in [3, 4] {
            let chart = Chart::periodic(n, vec![4; n]).unwrap();
            let g = BlockMetricSeries::de_sitter(&chart, 4);
            let s = 0.05;
            let ric = fd_oracle_ricci(&g, s, Stencil::relative(s, 0.002)).unwrap();
            let expect = frame_to_coordinates(&g, s).unwrap().scale(n as f64);
            let c = compare_tensors(&ric, &expect, 1e-8).unwrap();
            assert!(c.pass, "n = {n}: {:e}", c.rel_diff);
        }
    }

    #[test]
    fn oracle_matches_frame_ricci() {
        for seed in 0..3 {
            let g = random_block_metric(seed, 3, 12);
            let s = 0.05;
            let oracle = fd_oracle_ricci(&g, s, Stencil::relative(s, 0.002)).unwrap();
            let frame = frame_to_coordinates(&frame_ricci(&g).unwrap(), s).unwrap();
            let c = compare_tensors(&frame, &oracle, 1e-6).unwrap();
            assert!(c.pass, "seed {seed}: {:e}", c.rel_diff);
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let g = random_block_metric(7, 3, 12);
        let s = 0.2;
        let st = Stencil::relative(s, 0.05);
        let r1 = fd_oracle_ricci(&g, s, st).unwrap();
        let r2 = fd_oracle_ricci(&g, s, st.halved()).unwrap();
        let r3 = fd_oracle_ricci(&g, s, st.halved().halved()).unwrap();
        let e1 = compare_tensors(&r1, &r2, 1.0).unwrap().rel_diff;
        let e2 = compare_tensors(&r2, &r3, 1.0).unwrap().rel_diff;
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn stencil_must_stay_inside() {
        let chart = Chart::periodic(3, vec![2, 1, 1]).unwrap();
        let g = BlockMetricSeries::de_sitter(&chart, 2);
        assert!(matches!(
            fd_oracle_ricci(&g, 0.01, Stencil::new(0.005)),
            Err(FgError::StencilOutOfRange { .. })
        ));
        assert!(matches!(
            fd_oracle_ricci(&g, 0.99, Stencil::new(0.005)),
            Err(FgError::StencilOutOfRange { .. })
        ));
    }

    fn synthetic(i: usize, m: usize, c: f64) -> BlockMetricSeries {
        let chart = Chart::periodic(3, vec![4, 1, 1]).unwrap();
        let order = i + 2;
        let g00 = PhgSeries::monomial(order, i, m, SpatialField::constant_scalar(&chart, c));
        BlockMetricSeries::new(
            g00,
            PhgSeries::zero(&chart, 1, order),
            PhgSeries::zero(&chart, 2, order),
        )
        .unwrap()
    }

    #[test]
    fn synthetic_power_law() {
        let s = [1e-2, 5e-3, 2e-3, 1e-3];
        let r = series_decay_report(&synthetic(5, 0, 3.0), &s).unwrap();
        assert!((r.fitted_slope - 5.0).abs() < 0.01);
        assert!(!r.log_correction_used && !r.exact_zero);
        let r = series_decay_report(&synthetic(5, 1, 3.0), &s).unwrap();
        assert!(r.log_correction_used);
        assert!((r.fitted_slope - 5.0).abs() < 0.01, "{}", r.fitted_slope);
    }

    #[test]
    fn zero_residual_sentinel() {
        let s = [1e-2, 5e-3, 2e-3, 1e-3];
        let r = series_decay_report(&synthetic(5, 0, 0.0), &s).unwrap();
        assert!(r.exact_zero);
        assert_eq!(r.fitted_slope, f64::INFINITY);
    }

    #[test]
    fn degenerate_samples() {
        let g = synthetic(5, 0, 1.0);
        for s in [
            vec![1e-2, 5e-3, 2e-3],
            vec![1e-2, 2e-3, 5e-3, 1e-3],
            vec![2.0, 1e-2, 5e-3, 1e-3],
        ] {
            assert!(matches!(
                series_decay_report(&g, &s),
                Err(FgError::DegenerateFit(_))
            ));
        }
    }

    #[test]
    fn csv_rows() {
        let s = [1e-2, 5e-3, 2e-3, 1e-3];
        let r = series_decay_report(&synthetic(3, 0, 1.0), &s).unwrap();
        let mut buf = Vec::new();
        write_decay_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "s,residual_norm,log_level_active");
        assert_eq!(lines.len(), 5);
        let row: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[0], 1e-2);
        assert!((row[1] - 1e-6).abs() < 1e-18);
        assert_eq!(row[2], 0.0);
    }

    #[test]
    fn comparisons() {
        let chart = Chart::periodic(3, vec![8, 8, 1]).unwrap();
        let x = SpatialField::scalar_from_fn(&chart, |p| 2.0 + p[0].sin());
        let c = compare_fields(&[x.clone()], &[x.clone()], 0.0).unwrap();
        assert_eq!(c.rel_diff, 0.0);
        assert!(c.pass);
        let y = x.lin_comb(1.0, &SpatialField::constant_scalar(&chart, 1e-9), 1.0);
        let c = compare_fields(&[y], &[x.clone()], 1e-6).unwrap();
        assert!((c.rel_diff - 1e-9 / x.sup_norm()).abs() < 1e-15);
        let z = SpatialField::zeros(&chart, 1);
        assert!(compare_fields(&[z], &[x], 1.0).is_err());
    }
}
