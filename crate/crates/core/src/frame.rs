//! Spacetime curvature of block metrics written in the 0-frame
//! `e_0 = s d/ds`, `e_i = s d/dx^i`, whose only nonzero brackets are
//! `[e_0, e_i] = e_i`.
//!
//! Spacetime tensors are kept in frame components. Frame index `0` is `e_0`
//! and frame index `k + 1` is the spatial direction `k`. Coordinate components
//! of a covariant 2-tensor are the frame components divided by `s^2`.

use std::sync::Arc;

use crate::error::{FgError, Result};
use crate::grid::{trace, tracefree_part, Chart, SpatialField, SpatialMetric};
use crate::series::{invert_matrix_series, PhgSeries};

/// A symmetric frame 2-tensor series split into its `00`, `0i` and `ij` parts.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMetricSeries {
    pub g00: PhgSeries,
    pub g0i: PhgSeries,
    pub gij: PhgSeries,
}

/// One coefficient of a symmetric frame 2-tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameField {
    pub t00: SpatialField,
    pub t0i: SpatialField,
    pub tij: SpatialField,
}

/// Splitting of a symmetric frame 2-tensor relative to `g0`: the `ds^2/s^2`
/// slot, the mixed slot, the trace slot and the trace-free spatial part.
#[derive(Debug, Clone, PartialEq)]
pub struct Block4 {
    pub h1: SpatialField,
    pub h2: SpatialField,
    pub h3: SpatialField,
    pub h4: SpatialField,
}

impl Block4 {
    pub fn zeros(chart: &Arc<Chart>) -> Self {
        Block4 {
            h1: SpatialField::zeros(chart, 0),
            h2: SpatialField::zeros(chart, 1),
            h3: SpatialField::zeros(chart, 0),
            h4: SpatialField::zeros(chart, 2),
        }
    }

    /// Sup-norms of the four slots.
    pub fn norms(&self) -> [f64; 4] {
        [
            self.h1.sup_norm(),
            self.h2.sup_norm(),
            self.h3.sup_norm(),
            self.h4.sup_norm(),
        ]
    }
}

pub fn split4(t: &FrameField, g0: &SpatialMetric) -> Result<Block4> {
    if t.tij.max_asymmetry() > 1e-12 * t.tij.sup_norm().max(1.0) {
        return Err(FgError::NotSymmetric(t.tij.max_asymmetry()));
    }
    let n = g0.dim() as f64;
    Ok(Block4 {
        h1: t.t00.clone(),
        h2: t.t0i.clone(),
        h3: trace(g0, &t.tij)?.scale(1.0 / n),
        h4: tracefree_part(g0, &t.tij)?,
    })
}

pub fn unsplit4(b: &Block4, g0: &SpatialMetric) -> Result<FrameField> {
    let tij = g0.field().mul_scalar_field(&b.h3)?.checked_add(&b.h4)?;
    Ok(FrameField {
        t00: b.h1.clone(),
        t0i: b.h2.clone(),
        tij: tij.symmetrize(),
    })
}

impl BlockMetricSeries {
    pub fn new(g00: PhgSeries, g0i: PhgSeries, gij: PhgSeries) -> Result<Self> {
        for (s, rank) in [(&g00, 0), (&g0i, 1), (&gij, 2)] {
            if s.rank() != rank {
                return Err(FgError::RankMismatch {
                    expected: rank,
                    found: s.rank(),
                });
            }
            if s.chart() != g00.chart() {
                return Err(FgError::ShapeMismatch("blocks live on different charts".into()));
            }
        }
        Ok(BlockMetricSeries { g00, g0i, gij })
    }

    /// A metric in normal form: `g00 = -1`, `g0i = 0`.
    pub fn normal_form(gij: PhgSeries) -> Self {
        let chart = gij.chart().clone();
        let order = gij.order();
        BlockMetricSeries {
            g00: PhgSeries::constant(order, SpatialField::constant_scalar(&chart, -1.0)),
            g0i: PhgSeries::zero(&chart, 1, order),
            gij,
        }
    }

    /// De Sitter in flat slicing, the frame metric `(-1, 0, delta)`.
    pub fn de_sitter(chart: &Arc<Chart>, order: usize) -> Self {
        BlockMetricSeries::normal_form(PhgSeries::constant(order, SpatialField::identity(chart)))
    }

    pub fn chart(&self) -> &Arc<Chart> {
        self.g00.chart()
    }

    pub fn dim(&self) -> usize {
        self.chart().dim()
    }

    pub fn order(&self) -> usize {
        self.g00.order().min(self.g0i.order()).min(self.gij.order())
    }

    /// Row-major `(n+1) x (n+1)` matrix of scalar component series.
    pub fn components(&self) -> Vec<PhgSeries> {
        let n = self.dim();
        let d = n + 1;
        let mut out = Vec::with_capacity(d * d);
        for a in 0..d {
            for b in 0..d {
                out.push(match (a, b) {
                    (0, 0) => self.g00.clone(),
                    (0, k) | (k, 0) => self.g0i.component(&[k - 1]),
                    (p, q) => self.gij.component(&[p - 1, q - 1]),
                });
            }
        }
        out
    }

    /// Rebuilds the block form from a symmetric component matrix.
    pub fn from_components(chart: &Arc<Chart>, comps: &[PhgSeries]) -> Result<Self> {
        let n = chart.dim();
        let d = n + 1;
        if comps.len() != d * d {
            return Err(FgError::ShapeMismatch(format!(
                "expected {} components, got {}",
                d * d,
                comps.len()
            )));
        }
        let g00 = comps[0].clone();
        let g0i = assemble(chart, 1, &(1..d).map(|k| comps[k].clone()).collect::<Vec<_>>())?;
        let mut spatial = Vec::with_capacity(n * n);
        for p in 1..d {
            for q in 1..d {
                spatial.push(comps[p * d + q].clone());
            }
        }
        let gij = assemble(chart, 2, &spatial)?;
        BlockMetricSeries::new(g00, g0i, gij)
    }

    pub fn coefficient(&self, i: usize, m: usize) -> FrameField {
        FrameField {
            t00: self.g00.coeff(i, m),
            t0i: self.g0i.coeff(i, m),
            tij: self.gij.coeff(i, m),
        }
    }

    /// All `(i, m)` keys present in any block.
    pub fn keys(&self) -> Vec<(usize, usize)> {
        let mut k: Vec<_> = self
            .g00
            .keys()
            .chain(self.g0i.keys())
            .chain(self.gij.keys())
            .collect();
        k.sort_unstable();
        k.dedup();
        k
    }

    pub fn order_norm(&self, i: usize) -> f64 {
        self.g00
            .order_norm(i)
            .max(self.g0i.order_norm(i))
            .max(self.gij.order_norm(i))
    }

    /// Largest log power present at order `i`.
    pub fn max_log(&self, i: usize) -> Option<usize> {
        [self.g00.max_log(i), self.g0i.max_log(i), self.gij.max_log(i)]
            .into_iter()
            .flatten()
            .max()
    }

    pub fn sup_norm(&self) -> f64 {
        self.g00.sup_norm().max(self.g0i.sup_norm()).max(self.gij.sup_norm())
    }

    pub fn normalize(self) -> Self {
        BlockMetricSeries {
            g00: self.g00.normalize(),
            g0i: self.g0i.normalize(),
            gij: self.gij.normalize(),
        }
    }

    pub fn with_order(self, order: usize) -> Self {
        BlockMetricSeries {
            g00: self.g00.with_order(order),
            g0i: self.g0i.with_order(order),
            gij: self.gij.with_order(order),
        }
    }

    /// Coordinate components `g(d_a, d_b)` at `s`, row-major over `(s, x^1..x^n)`.
    pub fn coordinate_components_at(&self, s: f64) -> Result<Vec<SpatialField>> {
        let w = 1.0 / (s * s);
        self.components()
            .iter()
            .map(|c| Ok(c.evaluate_at(s)?.scale(w)))
            .collect()
    }
}

/// Stacks scalar component series into a tensor series of the given rank.
fn assemble(chart: &Arc<Chart>, rank: usize, comps: &[PhgSeries]) -> Result<PhgSeries> {
    let order = comps.iter().map(|c| c.order()).min().unwrap_or(0);
    let mut keys: Vec<(usize, usize)> = comps.iter().flat_map(|c| c.keys()).collect();
    keys.sort_unstable();
    keys.dedup();
    let len = chart.len();
    let mut out = PhgSeries::zero(chart, rank, order);
    for (i, m) in keys {
        if i > order {
            continue;
        }
        let mut data = vec![0.0; len * comps.len()];
        for (k, c) in comps.iter().enumerate() {
            if let Some(f) = c.get(i, m) {
                data[k * len..(k + 1) * len].copy_from_slice(f.comp(0));
            }
        }
        out.insert(i, m, SpatialField::from_data(chart, rank, data)?);
    }
    Ok(out)
}

/// Frame connection coefficients. `down[(l, m, v)] = g(nabla_{e_m} e_v, e_l)`
/// and `up` is the same with the first index raised.
#[derive(Debug, Clone)]
pub struct FrameChristoffels {
    pub dim: usize,
    pub down: Vec<PhgSeries>,
    pub up: Vec<PhgSeries>,
}

impl FrameChristoffels {
    fn idx(&self, l: usize, m: usize, v: usize) -> usize {
        (l * self.dim + m) * self.dim + v
    }

    pub fn lower(&self, l: usize, m: usize, v: usize) -> &PhgSeries {
        &self.down[self.idx(l, m, v)]
    }

    pub fn upper(&self, l: usize, m: usize, v: usize) -> &PhgSeries {
        &self.up[self.idx(l, m, v)]
    }
}

/// Frame derivative `e_a` of a series.
fn frame_d(a: usize, s: &PhgSeries) -> Result<PhgSeries> {
    if a == 0 {
        Ok(s.s_dds())
    } else {
        s.frame_partial(a - 1)
    }
}

fn sum(terms: &[(f64, &PhgSeries)], like: &PhgSeries) -> PhgSeries {
    let mut out = PhgSeries::zero(like.chart(), 0, like.order());
    for (a, t) in terms {
        out.add_assign_scaled(t, *a);
    }
    out
}

pub fn frame_christoffels(g: &BlockMetricSeries) -> Result<FrameChristoffels> {
    let d = g.dim() + 1;
    let comps = g.components();
    let gc = |a: usize, b: usize| &comps[a * d + b];
    // eg[c][a*d+b] = e_c g_ab
    let mut eg = Vec::with_capacity(d);
    for c in 0..d {
        eg.push(comps.iter().map(|s| frame_d(c, s)).collect::<Result<Vec<_>>>()?);
    }
    let e = |c: usize, a: usize, b: usize| &eg[c][a * d + b];
    let like = &comps[0];

    let mut down = vec![PhgSeries::zero(g.chart(), 0, g.order()); d * d * d];
    let at = |l: usize, m: usize, v: usize| (l * d + m) * d + v;
    down[at(0, 0, 0)] = e(0, 0, 0).scale(0.5);
    for i in 1..d {
        down[at(0, i, 0)] = e(i, 0, 0).scale(0.5);
        down[at(0, 0, i)] = sum(&[(0.5, e(i, 0, 0)), (1.0, gc(0, i))], like);
        for j in 1..d {
            down[at(0, i, j)] = sum(
                &[
                    (0.5, e(i, 0, j)),
                    (0.5, e(j, 0, i)),
                    (-0.5, e(0, i, j)),
                    (1.0, gc(i, j)),
                ],
                like,
            );
        }
    }
    for l in 1..d {
        down[at(l, 0, 0)] = sum(&[(1.0, e(0, 0, l)), (-1.0, gc(0, l)), (-0.5, e(l, 0, 0))], like);
        for i in 1..d {
            down[at(l, i, 0)] = sum(
                &[
                    (0.5, e(i, 0, l)),
                    (0.5, e(0, i, l)),
                    (-0.5, e(l, 0, i)),
                    (-1.0, gc(i, l)),
                ],
                like,
            );
            down[at(l, 0, i)] = sum(&[(0.5, e(0, i, l)), (0.5, e(i, 0, l)), (-0.5, e(l, 0, i))], like);
            for j in 1..d {
                down[at(l, i, j)] = sum(&[(0.5, e(i, j, l)), (0.5, e(j, i, l)), (-0.5, e(l, i, j))], like);
            }
        }
    }

    let ginv = invert_matrix_series(&comps, d)?;
    let mut up = Vec::with_capacity(d * d * d);
    for l in 0..d {
        for mv in 0..d * d {
            let mut acc = PhgSeries::zero(g.chart(), 0, g.order());
            for r in 0..d {
                let a = &ginv[l * d + r];
                let b = &down[r * d * d + mv];
                if !a.is_zero() && !b.is_zero() {
                    acc.add_assign_scaled(&a.mul_scalar(b), 1.0);
                }
            }
            up.push(acc);
        }
    }
    Ok(FrameChristoffels { dim: d, down, up })
}

/// Frame Ricci tensor
/// `Ric_mv = e_l G^l_mv - e_m G^l_lv + G^l_lr G^r_mv - G^l_mr G^r_lv - C^r_lm G^l_rv`,
/// with the bracket term contributing `+G^k_kv` for `m = 0` and `-G^0_jv` for `m = j`.
pub fn frame_ricci(g: &BlockMetricSeries) -> Result<BlockMetricSeries> {
    let gam = frame_christoffels(g)?;
    let d = gam.dim;
    let chart = g.chart().clone();
    let order = g.order();
    let zero = PhgSeries::zero(&chart, 0, order);
    let up = |l: usize, m: usize, v: usize| gam.upper(l, m, v);

    let mut tr = Vec::with_capacity(d);
    for v in 0..d {
        let mut t = zero.clone();
        for l in 0..d {
            t.add_assign_scaled(up(l, l, v), 1.0);
        }
        tr.push(t);
    }

    let mut comps = vec![zero.clone(); d * d];
    for a in 0..d {
        for b in a..d {
            // Orderings (m, v): (0, 0), (j, 0) and (j, i).
            let (m, v) = (b, a);
            let mut r = zero.clone();
            for l in 0..d {
                r.add_assign_scaled(&frame_d(l, up(l, m, v))?, 1.0);
            }
            r.add_assign_scaled(&frame_d(m, &tr[v])?, -1.0);
            for rho in 0..d {
                if !tr[rho].is_zero() {
                    let x = up(rho, m, v);
                    if !x.is_zero() {
                        r.add_assign_scaled(&tr[rho].mul_scalar(x), 1.0);
                    }
                }
                for l in 0..d {
                    let x = up(l, m, rho);
                    let y = up(rho, l, v);
                    if !x.is_zero() && !y.is_zero() {
                        r.add_assign_scaled(&x.mul_scalar(y), -1.0);
                    }
                }
            }
            if m == 0 {
                for k in 1..d {
                    r.add_assign_scaled(up(k, k, v), 1.0);
                }
            } else {
                r.add_assign_scaled(up(0, m, v), -1.0);
            }
            comps[a * d + b] = r.clone();
            comps[b * d + a] = r;
        }
    }
    BlockMetricSeries::from_components(&chart, &comps)
}

/// `Ric(g) - n g` in frame components.
pub fn einstein_residual(g: &BlockMetricSeries, n: usize) -> Result<BlockMetricSeries> {
    let ric = frame_ricci(g)?;
    let lambda = n as f64;
    Ok(BlockMetricSeries {
        g00: ric.g00.add_scaled(&g.g00, -lambda),
        g0i: ric.g0i.add_scaled(&g.g0i, -lambda),
        gij: ric.gij.add_scaled(&g.gij, -lambda).map_coeffs(2, |c| Ok(c.clone().symmetrize()))?,
    })
}

/// Largest parity defect of a residual series below order `below`: the mixed
/// slot at even orders and the remaining slots at odd orders.
pub fn parity_defect(
    residual: &BlockMetricSeries,
    g0: &SpatialMetric,
    below: usize,
) -> Result<Option<(usize, usize, f64)>> {
    let mut worst: Option<(usize, usize, f64)> = None;
    for (i, m) in residual.keys() {
        if i >= below {
            continue;
        }
        let b = split4(&residual.coefficient(i, m), g0)?;
        let [h1, h2, h3, h4] = b.norms();
        let defect = if i % 2 == 0 { h2 } else { h1.max(h3).max(h4) };
        if worst.is_none_or(|w| defect > w.2) {
            worst = Some((i, m, defect));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialMetric;

    fn chart() -> Arc<Chart> {
        Chart::periodic(3, vec![12, 10, 1]).unwrap()
    }

    fn perturbed_g0(c: &Arc<Chart>, eps: f64) -> SpatialField {
        SpatialField::sym2_from_fn(c, |i, j, x| {
            let d = if i == j { 1.0 } else { 0.0 };
            d + eps * ((i + 2 * j) as f64 + x[0]).cos() * (1.0 + 0.5 * (x[1] - i as f64).sin())
        })
    }

    /// `2 G_lmv = e_m g_vl + e_v g_ml - e_l g_mv + g([e_m,e_v],e_l) - g([e_m,e_l],e_v) - g([e_v,e_l],e_m)`
    /// with `[e_0, e_i] = e_i`, written independently of the eight block formulas.
    fn koszul(g: &BlockMetricSeries) -> Vec<PhgSeries> {
        let d = g.dim() + 1;
        let comps = g.components();
        // bracket [e_a, e_b] = sum_r C(a,b,r) e_r
        let c = |a: usize, b: usize, r: usize| -> f64 {
            if a == 0 && b > 0 && r == b {
                1.0
            } else if b == 0 && a > 0 && r == a {
                -1.0
            } else {
                0.0
            }
        };
        let mut out = Vec::new();
        for l in 0..d {
            for m in 0..d {
                for v in 0..d {
                    let mut acc = PhgSeries::zero(g.chart(), 0, g.order());
                    acc.add_assign_scaled(&frame_d(m, &comps[v * d + l]).unwrap(), 0.5);
                    acc.add_assign_scaled(&frame_d(v, &comps[m * d + l]).unwrap(), 0.5);
                    acc.add_assign_scaled(&frame_d(l, &comps[m * d + v]).unwrap(), -0.5);
                    for r in 0..d {
                        acc.add_assign_scaled(&comps[r * d + l], 0.5 * c(m, v, r));
                        acc.add_assign_scaled(&comps[r * d + v], -0.5 * c(m, l, r));
                        acc.add_assign_scaled(&comps[r * d + m], -0.5 * c(v, l, r));
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    fn random_block(c: &Arc<Chart>, order: usize) -> BlockMetricSeries {
        let mut g = BlockMetricSeries::normal_form(PhgSeries::constant(order, perturbed_g0(c, 0.1)));
        g.g00.insert(1, 0, SpatialField::scalar_from_fn(c, |x| 0.05 * x[0].sin()));
        g.g00.insert(2, 1, SpatialField::scalar_from_fn(c, |x| 0.03 * x[1].cos()));
        g.g0i.insert(1, 0, SpatialField::from_fn(c, 1, |k, x| 0.04 * (x[0] + k[0] as f64).cos()));
        g.gij.insert(2, 0, perturbed_g0(c, 0.2).scale(0.1));
        g.gij.insert(3, 1, perturbed_g0(c, -0.3).scale(0.05));
        g
    }

    #[test]
    fn de_sitter_symbols() {
        let c = Chart::constant(4).unwrap();
        let g = BlockMetricSeries::de_sitter(&c, 4);
        let gam = frame_christoffels(&g).unwrap();
        let d = 5;
        for l in 0..d {
            for m in 0..d {
                for v in 0..d {
                    let lo = gam.lower(l, m, v).clone().normalize();
                    let hi = gam.upper(l, m, v).clone().normalize();
                    let (elo, ehi) = match (l, m, v) {
                        (l, i, 0) if l > 0 && l == i => (-1.0, -1.0),
                        (0, i, j) if i > 0 && i == j => (1.0, -1.0),
                        _ => (0.0, 0.0),
                    };
                    let val = |s: &PhgSeries| s.get(0, 0).map_or(0.0, |f| f.comp(0)[0]);
                    assert_eq!(val(&lo), elo, "down {l}{m}{v}");
                    assert_eq!(val(&hi), ehi, "up {l}{m}{v}");
                    assert!(lo.keys().all(|k| k == (0, 0)));
                }
            }
        }
    }

    #[test]
    fn de_sitter_is_einstein_at_every_order() {
        for (n, order) in [(3usize, 0usize), (3, 5), (4, 7), (5, 2)] {
            let c = Chart::constant(n).unwrap();
            let g = BlockMetricSeries::de_sitter(&c, order);
            let ric = frame_ricci(&g).unwrap();
            assert!(ric.g00.add_scaled(&g.g00, -(n as f64)).sup_norm() == 0.0);
            assert!(ric.gij.add_scaled(&g.gij, -(n as f64)).sup_norm() == 0.0);
            assert_eq!(ric.g0i.sup_norm(), 0.0);
            assert_eq!(einstein_residual(&g, n).unwrap().sup_norm(), 0.0);
        }
    }

    #[test]
    fn block_formulas_match_koszul() {
        let c = chart();
        let g = random_block(&c, 5);
        let gam = frame_christoffels(&g).unwrap();
        let k = koszul(&g);
        for (a, b) in gam.down.iter().zip(&k) {
            assert!(a.sub(b).unwrap().sup_norm() < 1e-14);
        }
        // Torsion-free: G_lmv - G_lvm = g([e_m, e_v], e_l).
        let comps = g.components();
        for l in 0..4 {
            for i in 1..4 {
                let diff = gam.lower(l, 0, i).sub(gam.lower(l, i, 0)).unwrap();
                assert!(diff.sub(&comps[i * 4 + l]).unwrap().sup_norm() < 1e-14);
            }
        }
    }

    #[test]
    fn boundary_metric_constant_in_s_is_einstein_to_first_order() {
        let c = chart();
        let g0 = perturbed_g0(&c, 0.15);
        let g = BlockMetricSeries::normal_form(PhgSeries::constant(4, g0.clone()));
        let res = einstein_residual(&g, 3).unwrap();
        assert!(res.order_norm(0) < 1e-11);
        assert!(res.order_norm(1) < 1e-11);
        assert!(res.order_norm(2) > 1e-3);

        let mut g2 = g.clone();
        g2.gij.insert(2, 0, perturbed_g0(&c, 0.3));
        let ric = frame_ricci(&g2).unwrap();
        let ric0 = frame_ricci(&g).unwrap();
        for i in 0..2 {
            let a = ric.coefficient(i, 0);
            let b = ric0.coefficient(i, 0);
            assert!(a.t00.max_abs_diff(&b.t00) < 1e-12);
            assert!(a.tij.max_abs_diff(&b.tij) < 1e-12);
        }
        let r0 = ric.coefficient(0, 0);
        assert!((r0.t00.comp(0)[0] + 3.0).abs() < 1e-12);
        assert!(r0.tij.max_abs_diff(&g0.scale(3.0)) < 1e-12);
    }

    #[test]
    fn symbols_are_affine_in_the_perturbation() {
        let c = chart();
        let base = random_block(&c, 4);
        let mut dir = PhgSeries::zero(&c, 2, 4);
        dir.insert(1, 0, perturbed_g0(&c, 0.5).scale(0.3));
        dir.insert(2, 0, perturbed_g0(&c, -0.4));
        let sym = |eps: f64| {
            let mut g = base.clone();
            g.gij = g.gij.add_scaled(&dir, eps);
            frame_christoffels(&g).unwrap().down
        };
        let s0 = sym(0.0);
        let diff = |eps: f64| {
            sym(eps)
                .iter()
                .zip(&s0)
                .map(|(a, b)| a.sub(b).unwrap().sup_norm())
                .fold(0.0, f64::max)
        };
        let slope = (diff(1e-3) / diff(1e-4)).log10();
        assert!((slope - 1.0).abs() < 0.01, "slope {slope}");
    }

    #[test]
    fn split_round_trip_and_examples() {
        let c = chart();
        let g0 = SpatialMetric::new(perturbed_g0(&c, 0.1)).unwrap();
        let b = Block4 {
            h1: SpatialField::scalar_from_fn(&c, |x| x[0].sin()),
            h2: SpatialField::from_fn(&c, 1, |k, x| (x[1] + k[0] as f64).cos()),
            h3: SpatialField::scalar_from_fn(&c, |x| 0.3 + x[1].cos()),
            h4: tracefree_part(&g0, &perturbed_g0(&c, 0.7)).unwrap(),
        };
        let back = split4(&unsplit4(&b, &g0).unwrap(), &g0).unwrap();
        assert!(back.h1.max_abs_diff(&b.h1) < 1e-13);
        assert!(back.h2.max_abs_diff(&b.h2) < 1e-13);
        assert!(back.h3.max_abs_diff(&b.h3) < 1e-13);
        assert!(back.h4.max_abs_diff(&b.h4) < 1e-13);

        let flat = SpatialMetric::flat(&c);
        let ds = BlockMetricSeries::de_sitter(&c, 0).coefficient(0, 0);
        let s = split4(&ds, &flat).unwrap();
        assert!(s.h1.comp(0).iter().all(|&v| v == -1.0));
        assert!(s.h3.comp(0).iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert_eq!(s.h2.sup_norm(), 0.0);
        assert!(s.h4.sup_norm() < 1e-15);

        let tf = FrameField {
            t00: SpatialField::zeros(&c, 0),
            t0i: SpatialField::zeros(&c, 1),
            tij: b.h4.clone(),
        };
        let s = split4(&tf, &g0).unwrap();
        assert!(s.h3.sup_norm() < 1e-13);
        assert!(s.h4.max_abs_diff(&b.h4) < 1e-13);
    }

    #[test]
    fn components_round_trip() {
        let c = chart();
        let g = random_block(&c, 5);
        let back = BlockMetricSeries::from_components(&c, &g.components()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn even_block_diagonal_input_obeys_parity() {
        let c = Chart::periodic(4, vec![10, 8, 1, 1]).unwrap();
        let g0 = SpatialField::sym2_from_fn(&c, |i, j, x| {
            let d = if i == j { 1.0 } else { 0.0 };
            d + 0.1 * ((i * j) as f64 + x[0]).sin() * (x[1]).cos()
        });
        let mut gij = PhgSeries::constant(6, g0.clone());
        gij.insert(2, 0, SpatialField::sym2_from_fn(&c, |i, j, x| 0.2 * ((i + j) as f64 + x[1]).cos()));
        let g = BlockMetricSeries::normal_form(gij);
        let res = einstein_residual(&g, 4).unwrap();
        let metric = SpatialMetric::new(g0).unwrap();
        let (_, _, defect) = parity_defect(&res, &metric, 4).unwrap().unwrap();
        assert!(defect < 1e-10, "{defect}");
        // The mixed slot does appear at odd orders.
        assert!(res.g0i.order_norm(3) > 1e-4);
    }
}
