//! Order-by-order construction of the expansion
//! `g = s^-2 (-ds^2 + sum_{i,m} s^i log(s)^m h_i^m)` from scattering data
//! `(g0, gn)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FgError, Result};
use crate::frame::{einstein_residual, split4, Block4, BlockMetricSeries};
use crate::grid::{
    divergence, solve_tracefree_divergence, trace, tracefree_part, SpatialField, SpatialMetric,
};
use crate::indicial::{solve_order, CompatibilityDefects, SolveOptions};
use crate::poly::q;
use crate::series::PhgSeries;

/// Relative tolerances, multiplied by the largest metric coefficient norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub compat: f64,
    pub parity: f64,
    pub zero: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            compat: 1e-9,
            parity: 1e-10,
            zero: 1e-12,
        }
    }
}

impl Tolerances {
    pub fn scaled(self, k: f64) -> Self {
        Tolerances {
            compat: self.compat * k,
            parity: self.parity * k,
            zero: self.zero * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub g0: SpatialMetric,
    pub gn: SpatialField,
    pub order: usize,
    pub tol: Tolerances,
}

impl BoundaryData {
    pub fn new(g0: SpatialMetric, gn: SpatialField, order: usize) -> Self {
        BoundaryData {
            g0,
            gn,
            order,
            tol: Tolerances::default(),
        }
    }

    /// Flat boundary metric with vanishing free datum.
    pub fn flat(chart: &std::sync::Arc<crate::grid::Chart>, order: usize) -> Self {
        BoundaryData::new(
            SpatialMetric::flat(chart),
            SpatialField::zeros(chart, 2),
            order,
        )
    }

    pub fn n(&self) -> usize {
        self.g0.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryDefects {
    /// `|tr_g0 gn|`
    pub trace: f64,
    /// `|delta_g0 gn|`, only constrained for odd `n`.
    pub divergence: Option<f64>,
    pub positive_definite: bool,
}

pub fn validate_boundary_data(d: &BoundaryData) -> BoundaryDefects {
    let n = d.n();
    let trace_defect = trace(&d.g0, &d.gn).map_or(f64::INFINITY, |t| t.sup_norm());
    let divergence_defect = (n % 2 == 1).then(|| {
        divergence(&d.g0, &d.gn).map_or(f64::INFINITY, |v| v.sup_norm())
    });
    BoundaryDefects {
        trace: trace_defect,
        divergence: divergence_defect,
        positive_definite: SpatialMetric::new(d.g0.field().clone()).is_ok(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Forcing checked to vanish by parity; coefficient set to zero.
    Parity,
    /// Coefficient obtained from the indicial solve.
    Solved,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderDiagnostics {
    pub order: usize,
    pub log_level: usize,
    pub kind: StepKind,
    /// Sup-norms of the four forcing slots.
    pub forcing: [f64; 4],
    pub defects: CompatibilityDefects,
    pub parity_defect: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExpansionResult {
    pub n: usize,
    pub order: usize,
    pub g0: SpatialMetric,
    /// Spatial coefficients `h_i^m` for `1 <= i <= N`, including vanishing ones.
    pub coeffs: BTreeMap<(usize, usize), SpatialField>,
    pub obstruction: Option<SpatialField>,
    pub metric: BlockMetricSeries,
    pub diagnostics: Vec<OrderDiagnostics>,
    /// Largest metric coefficient norm, the scale for all tolerances.
    pub scale: f64,
    pub tol: Tolerances,
}

impl ExpansionResult {
    /// Largest log power with a coefficient above `tol`.
    pub fn max_log_power(&self, tol: f64) -> usize {
        self.coeffs
            .iter()
            .filter(|(_, c)| c.sup_norm() > tol)
            .map(|(k, _)| k.1)
            .max()
            .unwrap_or(0)
    }

    pub fn coefficient(&self, i: usize, m: usize) -> Option<&SpatialField> {
        self.coeffs.get(&(i, m))
    }

    /// The Einstein residual of the truncated metric, carried to `order`.
    pub fn residual(&self, order: usize) -> Result<BlockMetricSeries> {
        let mut g = self.metric.clone();
        g.g00 = extend(&g.g00, order);
        g.g0i = extend(&g.g0i, order);
        g.gij = extend(&g.gij, order);
        einstein_residual(&g, self.n)
    }
}

fn extend(s: &PhgSeries, order: usize) -> PhgSeries {
    let mut out = PhgSeries::zero(s.chart(), s.rank(), order);
    for ((i, m), c) in s.terms() {
        if i <= order {
            out.insert(i, m, c.clone());
        }
    }
    out
}

fn negate(b: Block4) -> Block4 {
    Block4 {
        h1: b.h1.scale(-1.0),
        h2: b.h2.scale(-1.0),
        h3: b.h3.scale(-1.0),
        h4: b.h4.scale(-1.0),
    }
}

fn metric_scale(g: &BlockMetricSeries) -> f64 {
    g.gij.sup_norm().max(1.0)
}

pub fn expand(d: &BoundaryData) -> Result<ExpansionResult> {
    let n = d.n();
    let order = d.order;
    if order < n {
        return Err(FgError::InvalidBoundaryData(format!(
            "truncation order {order} is below n = {n}"
        )));
    }
    if d.gn.chart() != d.g0.chart() || d.gn.rank() != 2 {
        return Err(FgError::InvalidBoundaryData(
            "gn must be a symmetric 2-tensor on the chart of g0".into(),
        ));
    }
    let asym = d.gn.max_asymmetry();
    if asym > 0.0 {
        return Err(FgError::NotSymmetric(asym));
    }
    let tr = trace(&d.g0, &d.gn)?.sup_norm();
    let scale0 = d.g0.field().sup_norm().max(d.gn.sup_norm()).max(1.0);
    if tr > d.tol.compat * scale0 {
        return Err(FgError::InvalidBoundaryData(format!(
            "gn is not trace-free with respect to g0 (defect {tr:e})"
        )));
    }

    let g0 = &d.g0;
    let chart = g0.chart().clone();
    let mut metric = BlockMetricSeries::normal_form(PhgSeries::constant(order, g0.field().clone()));
    let mut coeffs = BTreeMap::new();
    let mut diagnostics = Vec::new();
    let mut obstruction = None;

    for i in 1..=order {
        let parity_order = i % 2 == 1 && (i < n || n % 2 == 0);
        let res = einstein_residual(&metric.clone().with_order(i).normalize(), n)?;
        let top = res.max_log(i).unwrap_or(0);
        let mut res = Some(res);
        for m in (0..=top).rev() {
            let current = match res.take() {
                Some(r) => r,
                None => einstein_residual(&metric.clone().with_order(i).normalize(), n)?,
            };
            let scale = metric_scale(&metric).max(d.gn.sup_norm());
            let tol = d.tol.scaled(scale);
            let f = negate(split4(&current.coefficient(i, m), g0)?);
            let forcing = f.norms();

            if parity_order {
                if forcing[1] > tol.compat {
                    return Err(FgError::Solvability {
                        order: i,
                        log_level: m,
                        what: "mixed slot",
                        defect: forcing[1],
                        tol: tol.compat,
                    });
                }
                let defect = forcing[0].max(forcing[2]).max(forcing[3]);
                if defect > tol.parity {
                    return Err(FgError::Parity {
                        order: i,
                        log_level: m,
                        defect,
                        tol: tol.parity,
                    });
                }
                coeffs.insert((i, m), SpatialField::zeros(&chart, 2));
                diagnostics.push(OrderDiagnostics {
                    order: i,
                    log_level: m,
                    kind: StepKind::Parity,
                    forcing,
                    defects: CompatibilityDefects {
                        f2_norm: forcing[1],
                        ..Default::default()
                    },
                    parity_defect: Some(defect),
                });
                continue;
            }

            let free = (i == n && m == 0).then_some(&d.gn);
            let sol = solve_order(
                q(i as i128),
                &f,
                n,
                free,
                SolveOptions {
                    compat_tol: tol.compat,
                    log_level: m,
                },
            )?;
            let h = g0
                .field()
                .mul_scalar_field(&sol.h3)?
                .checked_add(&sol.h4)?
                .symmetrize();
            metric.gij.insert(i, m, h.clone());
            *coeffs
                .entry((i, m))
                .or_insert_with(|| SpatialField::zeros(&chart, 2)) = h;
            if let Some(lh) = sol.log_h4 {
                metric.gij.insert(i, m + 1, lh.clone());
                coeffs.insert((i, m + 1), lh);
                if m == 0 {
                    obstruction = Some(tracefree_part(g0, &f.h4)?);
                }
            }
            diagnostics.push(OrderDiagnostics {
                order: i,
                log_level: m,
                kind: StepKind::Solved,
                forcing,
                defects: sol.defects,
                parity_defect: None,
            });
        }
    }

    let scale = metric_scale(&metric);
    Ok(ExpansionResult {
        n,
        order,
        g0: g0.clone(),
        coeffs,
        obstruction,
        metric: metric.normalize(),
        diagnostics,
        scale,
        tol: d.tol,
    })
}

/// Trace-free part of the order-`n` trace-free forcing for `gn = 0`, even `n`.
pub fn obstruction_tensor(g0: &SpatialMetric, n: usize) -> Result<SpatialField> {
    if n % 2 == 1 || n < 4 || g0.dim() != n {
        return Err(FgError::InvalidBoundaryData(format!(
            "the obstruction tensor needs even n >= 4 matching the metric (got n = {n}, dim = {})",
            g0.dim()
        )));
    }
    let d = BoundaryData::new(g0.clone(), SpatialField::zeros(g0.chart(), 2), n);
    let r = expand(&d)?;
    Ok(r
        .obstruction
        .unwrap_or_else(|| SpatialField::zeros(g0.chart(), 2)))
}

/// The mixed slot of the Einstein residual at order `n + 1` (log level 0)
/// after expanding `(g0, gn)` through order `n`. It equals `-(n/2) delta_g0 gn`
/// plus a term determined by `g0` alone, which vanishes for odd `n`.
pub fn divergence_forcing(g0: &SpatialMetric, gn: &SpatialField) -> Result<SpatialField> {
    let n = g0.dim();
    let r = expand(&BoundaryData::new(g0.clone(), gn.clone(), n))?;
    let res = r.residual(n + 1)?;
    Ok(split4(&res.coefficient(n + 1, 0), g0)?.h2)
}

/// Corrects a trial free datum to an admissible one: takes the trace-free
/// part of `seed` and adds a trace-free tensor fixing the divergence so that
/// [`divergence_forcing`] is below `tol`. For odd `n` this is a projection
/// onto `g0`-transverse-traceless tensors.
pub fn complete_free_datum(g0: &SpatialMetric, seed: &SpatialField, tol: f64) -> Result<SpatialField> {
    let n = g0.dim();
    let mut gn = tracefree_part(g0, seed)?;
    for _ in 0..4 {
        let f2 = divergence_forcing(g0, &gn)?;
        if f2.sup_norm() <= tol {
            break;
        }
        let target = f2.scale(2.0 / n as f64);
        let (x, _) = solve_tracefree_divergence(g0, &target, 1e-3 * tol, 60)?;
        gn = gn.lin_comb(1.0, &x, 1.0).symmetrize();
    }
    Ok(gn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Chart;

    #[test]
    fn flat_data_gives_vanishing_coefficients() {
        for n in [3usize, 4] {
            let c = Chart::constant(n).unwrap();
            let r = expand(&BoundaryData::flat(&c, n + 2)).unwrap();
            assert!(r.coeffs.values().all(|h| h.sup_norm() == 0.0));
            assert_eq!(r.residual(n + 2).unwrap().sup_norm(), 0.0);
            if n == 4 {
                assert_eq!(r.obstruction.unwrap().sup_norm(), 0.0);
            }
        }
    }

    #[test]
    fn validation_reports_defects() {
        let c = Chart::periodic(3, vec![8, 1, 1]).unwrap();
        let d = BoundaryData::flat(&c, 4);
        let v = validate_boundary_data(&d);
        assert_eq!(v.trace, 0.0);
        assert_eq!(v.divergence, Some(0.0));
        assert!(v.positive_definite);

        let mut d2 = d.clone();
        d2.gn = d.g0.field().clone();
        assert!((validate_boundary_data(&d2).trace - 3.0).abs() < 1e-15);
        assert!(matches!(expand(&d2), Err(FgError::InvalidBoundaryData(_))));

        let mut d3 = d.clone();
        d3.gn = SpatialField::sym2_from_fn(&c, |i, j, x| if i == 0 && j == 0 { x[0].sin() } else { 0.0 });
        let div = validate_boundary_data(&d3).divergence.unwrap();
        let expect = (0..8).map(|k| (k as f64 * std::f64::consts::PI / 4.0).cos().abs()).fold(0.0, f64::max);
        assert!((div - expect).abs() < 1e-12);

        let mut d4 = d;
        d4.order = 2;
        assert!(matches!(expand(&d4), Err(FgError::InvalidBoundaryData(_))));
    }

    #[test]
    fn obstruction_rejects_odd_dimension() {
        let c = Chart::constant(3).unwrap();
        assert!(obstruction_tensor(&SpatialMetric::flat(&c), 3).is_err());
    }
}
