//! Finite polyhomogeneous series `sum_{i <= N} sum_m s^i log(s)^m c_{i,m}` with
//! spatial-field coefficients.
//!
//! Every series carries a hard truncation order `N`. Products drop anything
//! above `N` without complaint, since nothing downstream needs those terms.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{FgError, Result};
use crate::grid::{partial_derivative, Chart, SpatialField};
use crate::linalg;

/// Coefficients with sup-norm below this are dropped by [`PhgSeries::normalize`].
pub const NORMALIZE_FLOOR: f64 = 1e-15;

/// How coefficients are combined in [`PhgSeries::mul`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contraction {
    /// One factor is a scalar; pointwise scaling.
    Scalar,
    /// Tensor product.
    Outer,
    /// Contract the last index of the left factor with the first of the right.
    Chain,
    /// Contract all indices; both factors must share a rank.
    Full,
}

impl Contraction {
    fn result_rank(self, a: usize, b: usize) -> Result<usize> {
        match self {
            Contraction::Scalar if a == 0 || b == 0 => Ok(a + b),
            Contraction::Scalar => Err(FgError::RankMismatch {
                expected: 0,
                found: a.min(b),
            }),
            Contraction::Outer => Ok(a + b),
            Contraction::Chain if a > 0 && b > 0 => Ok(a + b - 2),
            Contraction::Chain => Err(FgError::RankMismatch {
                expected: 1,
                found: 0,
            }),
            Contraction::Full if a == b => Ok(0),
            Contraction::Full => Err(FgError::RankMismatch {
                expected: a,
                found: b,
            }),
        }
    }

    fn apply(self, x: &SpatialField, y: &SpatialField) -> Result<SpatialField> {
        match self {
            Contraction::Scalar if x.rank() == 0 => Ok(y.mul_scalar_unchecked(x)),
            Contraction::Scalar => Ok(x.mul_scalar_unchecked(y)),
            Contraction::Outer => x.outer(y),
            Contraction::Chain => x.chain(y),
            Contraction::Full => x.contract_full(y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhgSeries {
    order: usize,
    chart: Arc<Chart>,
    rank: usize,
    terms: BTreeMap<(usize, usize), SpatialField>,
}

impl PhgSeries {
    pub fn zero(chart: &Arc<Chart>, rank: usize, order: usize) -> Self {
        PhgSeries {
            order,
            chart: chart.clone(),
            rank,
            terms: BTreeMap::new(),
        }
    }

    /// `s^i log(s)^m c`, or the zero series if `i > order`.
    pub fn monomial(order: usize, i: usize, m: usize, c: SpatialField) -> Self {
        let mut out = PhgSeries::zero(c.chart(), c.rank(), order);
        out.insert(i, m, c);
        out
    }

    pub fn constant(order: usize, c: SpatialField) -> Self {
        PhgSeries::monomial(order, 0, 0, c)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Stored `(i, m)` keys in increasing order.
    pub fn keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.terms.keys().copied()
    }

    pub fn terms(&self) -> impl Iterator<Item = ((usize, usize), &SpatialField)> {
        self.terms.iter().map(|(k, v)| (*k, v))
    }

    pub fn get(&self, i: usize, m: usize) -> Option<&SpatialField> {
        self.terms.get(&(i, m))
    }

    pub fn coeff(&self, i: usize, m: usize) -> SpatialField {
        self.get(i, m)
            .cloned()
            .unwrap_or_else(|| SpatialField::zeros(&self.chart, self.rank))
    }

    /// Largest log power stored at order `i`.
    pub fn max_log(&self, i: usize) -> Option<usize> {
        self.terms.range((i, 0)..=(i, usize::MAX)).map(|(k, _)| k.1).last()
    }

    /// Adds `s^i log(s)^m c` in place. Terms above the truncation are ignored.
    pub fn insert(&mut self, i: usize, m: usize, c: SpatialField) {
        assert_eq!(c.rank(), self.rank, "coefficient rank must match the series");
        if i > self.order {
            return;
        }
        match self.terms.get_mut(&(i, m)) {
            Some(existing) => existing.axpy(1.0, &c),
            None => {
                self.terms.insert((i, m), c);
            }
        }
    }

    /// Adds `a * s^i log(s)^m c` in place.
    pub(crate) fn insert_scaled(&mut self, i: usize, m: usize, a: f64, c: &SpatialField) {
        if i > self.order {
            return;
        }
        match self.terms.get_mut(&(i, m)) {
            Some(existing) => existing.axpy(a, c),
            None => {
                self.terms.insert((i, m), c.scale(a));
            }
        }
    }

    pub fn remove(&mut self, i: usize, m: usize) -> Option<SpatialField> {
        self.terms.remove(&(i, m))
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self.terms.retain(|k, _| k.0 <= order);
        self
    }

    fn compatible(&self, other: &PhgSeries) -> Result<()> {
        if self.chart != other.chart {
            return Err(FgError::ShapeMismatch("series live on different charts".into()));
        }
        if self.rank != other.rank {
            return Err(FgError::RankMismatch {
                expected: self.rank,
                found: other.rank,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &PhgSeries) -> Result<PhgSeries> {
        self.compatible(other)?;
        Ok(self.add_scaled(other, 1.0))
    }

    pub fn sub(&self, other: &PhgSeries) -> Result<PhgSeries> {
        self.compatible(other)?;
        Ok(self.add_scaled(other, -1.0))
    }

    /// `self + a * other`, truncated at the smaller order.
    pub(crate) fn add_scaled(&self, other: &PhgSeries, a: f64) -> PhgSeries {
        let order = self.order.min(other.order);
        let mut out = self.clone().with_order(order);
        for (&(i, m), c) in &other.terms {
            out.insert_scaled(i, m, a, c);
        }
        out
    }

    pub(crate) fn add_assign_scaled(&mut self, other: &PhgSeries, a: f64) {
        if other.order < self.order {
            self.order = other.order;
            let o = self.order;
            self.terms.retain(|k, _| k.0 <= o);
        }
        for (&(i, m), c) in &other.terms {
            self.insert_scaled(i, m, a, c);
        }
    }

    pub fn scale(&self, a: f64) -> PhgSeries {
        PhgSeries {
            order: self.order,
            chart: self.chart.clone(),
            rank: self.rank,
            terms: self.terms.iter().map(|(k, v)| (*k, v.scale(a))).collect(),
        }
    }

    /// Graded product `s^{i1} log^{m1} * s^{i2} log^{m2} -> s^{i1+i2} log^{m1+m2}`,
    /// truncated at the smaller order.
    pub fn mul(&self, other: &PhgSeries, how: Contraction) -> Result<PhgSeries> {
        if self.chart != other.chart {
            return Err(FgError::ShapeMismatch("series live on different charts".into()));
        }
        let rank = how.result_rank(self.rank, other.rank)?;
        let order = self.order.min(other.order);
        let mut out = PhgSeries::zero(&self.chart, rank, order);
        for (&(i1, m1), a) in &self.terms {
            for (&(i2, m2), b) in &other.terms {
                if i1 + i2 > order {
                    continue;
                }
                out.insert(i1 + i2, m1 + m2, how.apply(a, b)?);
            }
        }
        Ok(out)
    }

    /// Product of two scalar series.
    pub(crate) fn mul_scalar(&self, other: &PhgSeries) -> PhgSeries {
        debug_assert!(self.rank == 0 && other.rank == 0);
        let order = self.order.min(other.order);
        let mut out = PhgSeries::zero(&self.chart, 0, order);
        for (&(i1, m1), a) in &self.terms {
            for (&(i2, m2), b) in &other.terms {
                if i1 + i2 <= order {
                    out.insert(i1 + i2, m1 + m2, a.mul_scalar_unchecked(b));
                }
            }
        }
        out
    }

    /// The action of `s d/ds`: `s^i log^m -> i s^i log^m + m s^i log^{m-1}`.
    pub fn s_dds(&self) -> PhgSeries {
        let mut out = PhgSeries::zero(&self.chart, self.rank, self.order);
        for (&(i, m), c) in &self.terms {
            if i > 0 {
                out.insert_scaled(i, m, i as f64, c);
            }
            if m > 0 {
                out.insert_scaled(i, m - 1, m as f64, c);
            }
        }
        out
    }

    /// Multiplication by `s^k`.
    pub fn shift(&self, k: usize) -> PhgSeries {
        let mut out = PhgSeries::zero(&self.chart, self.rank, self.order);
        for (&(i, m), c) in &self.terms {
            out.insert(i + k, m, c.clone());
        }
        out
    }

    /// Coefficient-wise spatial derivative along `axis`.
    pub fn partial(&self, axis: usize) -> Result<PhgSeries> {
        let mut out = PhgSeries::zero(&self.chart, self.rank, self.order);
        for (&(i, m), c) in &self.terms {
            out.terms.insert((i, m), partial_derivative(c, axis)?);
        }
        Ok(out)
    }

    /// The frame derivative `s d/dx^axis`.
    pub fn frame_partial(&self, axis: usize) -> Result<PhgSeries> {
        let mut out = PhgSeries::zero(&self.chart, self.rank, self.order);
        for (&(i, m), c) in &self.terms {
            if i < self.order {
                out.terms.insert((i + 1, m), partial_derivative(c, axis)?);
            }
        }
        Ok(out)
    }

    /// Applies a linear map to every coefficient.
    pub fn map_coeffs(
        &self,
        rank: usize,
        mut f: impl FnMut(&SpatialField) -> Result<SpatialField>,
    ) -> Result<PhgSeries> {
        let mut out = PhgSeries::zero(&self.chart, rank, self.order);
        for (&(i, m), c) in &self.terms {
            let v = f(c)?;
            if v.rank() != rank {
                return Err(FgError::RankMismatch {
                    expected: rank,
                    found: v.rank(),
                });
            }
            out.terms.insert((i, m), v);
        }
        Ok(out)
    }

    /// One tensor component as a scalar series.
    pub fn component(&self, idx: &[usize]) -> PhgSeries {
        let mut out = PhgSeries::zero(&self.chart, 0, self.order);
        for (&(i, m), c) in &self.terms {
            out.terms.insert((i, m), c.component_field(idx));
        }
        out
    }

    /// `sum s^i log(s)^m c_{i,m}`.
    pub fn evaluate_at(&self, s: f64) -> Result<SpatialField> {
        if !(s > 0.0) {
            return Err(FgError::NonPositiveS(s));
        }
        let ln = s.ln();
        let mut out = SpatialField::zeros(&self.chart, self.rank);
        for (&(i, m), c) in &self.terms {
            out.axpy(s.powi(i as i32) * ln.powi(m as i32), c);
        }
        Ok(out)
    }

    /// Drops coefficients whose sup-norm is below [`NORMALIZE_FLOOR`].
    pub fn normalize(mut self) -> Self {
        self.terms.retain(|_, c| c.sup_norm() >= NORMALIZE_FLOOR);
        self
    }

    /// Drops coefficients whose sup-norm is at most `tol`.
    pub fn drop_below(mut self, tol: f64) -> Self {
        self.terms.retain(|_, c| c.sup_norm() > tol);
        self
    }

    pub fn sup_norm(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.sup_norm()))
    }

    /// Sup-norm of all coefficients at order `i`.
    pub fn order_norm(&self, i: usize) -> f64 {
        self.terms
            .range((i, 0)..=(i, usize::MAX))
            .fold(0.0, |m, (_, c)| m.max(c.sup_norm()))
    }

    /// First stored `(i, m)` violating `m <= floor(i / n)`.
    pub fn log_cap_violation(&self, n: usize) -> Option<(usize, usize)> {
        self.terms.keys().copied().find(|&(i, m)| m > i / n)
    }
}

/// Inverse of a `d x d` matrix of scalar series (row-major), expanded around
/// the pointwise-invertible order-zero block.
///
/// With `G = G0 + H`, the coefficients satisfy
/// `X_{i,m} = -G0^{-1} sum H_{j,p} X_{i-j, m-p}`.
pub fn invert_matrix_series(entries: &[PhgSeries], d: usize) -> Result<Vec<PhgSeries>> {
    if entries.len() != d * d || d == 0 {
        return Err(FgError::ShapeMismatch(format!(
            "expected {} entries, got {}",
            d * d,
            entries.len()
        )));
    }
    let chart = entries[0].chart().clone();
    if let Some(e) = entries.iter().find(|e| e.rank() != 0 || e.chart() != &chart) {
        return Err(FgError::RankMismatch {
            expected: 0,
            found: e.rank(),
        });
    }
    if entries.iter().any(|e| e.keys().any(|(i, m)| i == 0 && m > 0)) {
        return Err(FgError::ShapeMismatch("log terms at order 0 are not supported".into()));
    }
    let order = entries.iter().map(|e| e.order()).min().unwrap_or(0);
    let len = chart.len();

    // Pointwise inverse of the leading block.
    let mut g0inv = vec![vec![0.0; len]; d * d];
    let mut m = vec![0.0; d * d];
    for p in 0..len {
        for (k, e) in entries.iter().enumerate() {
            m[k] = e.get(0, 0).map_or(0.0, |c| c.comp(0)[p]);
        }
        let inv = linalg::invert(&m, d, 1e-13).ok_or(FgError::SingularLeadingBlock { point: p })?;
        for k in 0..d * d {
            g0inv[k][p] = inv[k];
        }
    }

    // Keys of the perturbation H, i.e. all terms except order (0, 0).
    let mut hkeys: Vec<(usize, usize)> = entries
        .iter()
        .flat_map(|e| e.keys())
        .filter(|&(i, _)| i > 0)
        .collect();
    hkeys.sort_unstable();
    hkeys.dedup();

    // Coefficients of X, keyed by (i, m), each a d x d block of grid values.
    let mut x: BTreeMap<(usize, usize), Vec<Vec<f64>>> = BTreeMap::new();
    x.insert((0, 0), g0inv.clone());
    for i in 1..=order {
        let mut rhs: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
        for &(j, pl) in hkeys.iter().filter(|k| k.0 <= i) {
            let prev: Vec<(usize, &Vec<Vec<f64>>)> = x
                .range((i - j, 0)..=(i - j, usize::MAX))
                .map(|(k, v)| (k.1, v))
                .collect();
            for (mp, xb) in prev {
                let acc = rhs.entry(pl + mp).or_insert_with(|| vec![vec![0.0; len]; d * d]);
                for r in 0..d {
                    for k in 0..d {
                        let Some(h) = entries[r * d + k].get(j, pl) else {
                            continue;
                        };
                        let h = h.comp(0);
                        for c in 0..d {
                            let xv = &xb[k * d + c];
                            let a = &mut acc[r * d + c];
                            for p in 0..len {
                                a[p] += h[p] * xv[p];
                            }
                        }
                    }
                }
            }
        }
        for (mlog, acc) in rhs {
            let mut out = vec![vec![0.0; len]; d * d];
            for r in 0..d {
                for k in 0..d {
                    let gi = &g0inv[r * d + k];
                    for c in 0..d {
                        let a = &acc[k * d + c];
                        let o = &mut out[r * d + c];
                        for p in 0..len {
                            o[p] -= gi[p] * a[p];
                        }
                    }
                }
            }
            x.insert((i, mlog), out);
        }
    }

    let mut result = vec![PhgSeries::zero(&chart, 0, order); d * d];
    for ((i, mlog), block) in x {
        for (k, vals) in block.into_iter().enumerate() {
            result[k]
                .terms
                .insert((i, mlog), SpatialField::scalar(&chart, vals)?);
        }
    }
    Ok(result
        .into_iter()
        .map(|s| s.drop_below(0.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chart() -> Arc<Chart> {
        Chart::periodic(3, vec![6, 4, 1]).unwrap()
    }

    fn field(c: &Arc<Chart>, a: f64, b: f64) -> SpatialField {
        SpatialField::scalar_from_fn(c, |x| a * x[0].cos() + b * (x[1] + a).sin() + 0.5 * b)
    }

    fn series_from(c: &Arc<Chart>, coeffs: &[(usize, usize, f64, f64)], order: usize) -> PhgSeries {
        let mut s = PhgSeries::zero(c, 0, order);
        for &(i, m, a, b) in coeffs {
            s.insert(i, m, field(c, a, b));
        }
        s
    }

    fn close(a: &PhgSeries, b: &PhgSeries, tol: f64) -> bool {
        a.sub(b).unwrap().sup_norm() <= tol
    }

    #[test]
    fn add_and_cancel() {
        let c = chart();
        let u = field(&c, 1.0, 0.3);
        let a = PhgSeries::monomial(4, 2, 0, u.clone());
        let zero = PhgSeries::zero(&c, 0, 4);
        assert_eq!(a.add(&zero).unwrap(), a);
        assert!(a.add(&a.scale(-1.0)).unwrap().normalize().is_zero());
        let b = PhgSeries::monomial(4, 2, 1, u.clone());
        let sum = a.add(&b).unwrap();
        assert_eq!(sum.keys().collect::<Vec<_>>(), vec![(2, 0), (2, 1)]);
        let short = PhgSeries::monomial(2, 1, 0, u);
        assert_eq!(sum.add(&short).unwrap().order(), 2);
    }

    #[test]
    fn products() {
        let c = chart();
        let a = field(&c, 0.7, -0.2);
        let one = PhgSeries::constant(6, SpatialField::constant_scalar(&c, 1.0));
        let p = one.add(&PhgSeries::monomial(6, 2, 0, a.clone())).unwrap();
        let q = one.sub(&PhgSeries::monomial(6, 2, 0, a.clone())).unwrap();
        let expect = one
            .sub(&PhgSeries::monomial(6, 4, 0, a.mul_scalar_unchecked(&a)))
            .unwrap();
        assert!(close(&p.mul(&q, Contraction::Scalar).unwrap().normalize(), &expect, 1e-15));

        let sl = PhgSeries::monomial(6, 1, 1, SpatialField::constant_scalar(&c, 1.0));
        let sq = sl.mul(&sl, Contraction::Scalar).unwrap();
        assert_eq!(sq.keys().collect::<Vec<_>>(), vec![(2, 2)]);

        let trunc = PhgSeries::monomial(3, 2, 0, a.clone());
        assert!(trunc.mul(&trunc, Contraction::Scalar).unwrap().is_zero());
    }

    #[test]
    fn tensor_contractions() {
        let c = chart();
        let v = SpatialField::from_fn(&c, 1, |idx, x| (idx[0] as f64 + 1.0) * x[0].sin());
        let id = SpatialField::identity(&c);
        let vs = PhgSeries::monomial(4, 1, 0, v.clone());
        let is = PhgSeries::constant(4, id);
        assert_eq!(is.mul(&vs, Contraction::Chain).unwrap(), vs);
        let vv = vs.mul(&vs, Contraction::Full).unwrap();
        assert_eq!(vv.rank(), 0);
        let expect = v.contract_full(&v).unwrap();
        assert!(vv.get(2, 0).unwrap().max_abs_diff(&expect) < 1e-15);
        assert_eq!(vs.mul(&vs, Contraction::Outer).unwrap().rank(), 2);
        assert!(vs.mul(&is, Contraction::Full).is_err());
        assert!(vs.mul(&is, Contraction::Scalar).is_err());
        assert!(vs.add(&is).is_err());
    }

    #[test]
    fn s_dds_examples() {
        let c = chart();
        let u = field(&c, 0.4, 0.9);
        let a = PhgSeries::monomial(5, 2, 0, u.clone());
        assert!(close(&a.s_dds(), &a.scale(2.0), 0.0));
        let b = PhgSeries::monomial(5, 2, 1, u.clone());
        let expect = b.scale(2.0).add(&a).unwrap();
        assert!(close(&b.s_dds(), &expect, 1e-16));
        assert!(PhgSeries::constant(5, u).s_dds().normalize().is_zero());
    }

    #[test]
    fn evaluation_examples() {
        let c = chart();
        let u = field(&c, 0.4, 0.9);
        assert_eq!(PhgSeries::constant(4, u.clone()).evaluate_at(0.3).unwrap(), u);
        let a = PhgSeries::monomial(4, 2, 0, u.clone()).evaluate_at(0.1).unwrap();
        assert!(a.max_abs_diff(&u.scale(0.01)) < 1e-17);
        let e = (-1.0f64).exp();
        let b = PhgSeries::monomial(4, 4, 1, u.clone()).evaluate_at(e).unwrap();
        assert!(b.max_abs_diff(&u.scale(-e.powi(4))) < 1e-15);
        assert!(matches!(
            PhgSeries::constant(4, u).evaluate_at(0.0),
            Err(FgError::NonPositiveS(_))
        ));
    }

    #[test]
    fn frame_partial_raises_order() {
        let c = chart();
        let u = SpatialField::scalar_from_fn(&c, |x| x[0].sin());
        let s = PhgSeries::monomial(3, 1, 0, u).add(&PhgSeries::monomial(3, 3, 0, SpatialField::constant_scalar(&c, 1.0))).unwrap();
        let d = s.frame_partial(0).unwrap();
        let cos = SpatialField::scalar_from_fn(&c, |x| x[0].cos());
        assert_eq!(d.keys().collect::<Vec<_>>(), vec![(2, 0)]);
        assert!(d.get(2, 0).unwrap().max_abs_diff(&cos) < 1e-14);
    }

    #[test]
    fn log_cap() {
        let c = chart();
        let u = SpatialField::constant_scalar(&c, 1.0);
        let mut s = PhgSeries::monomial(8, 3, 1, u.clone());
        assert_eq!(s.log_cap_violation(3), None);
        s.insert(5, 2, u);
        assert_eq!(s.log_cap_violation(3), Some((5, 2)));
    }

    fn scalar_matrix(c: &Arc<Chart>, vals: &[f64], order: usize) -> Vec<PhgSeries> {
        vals.iter()
            .map(|&v| PhgSeries::constant(order, SpatialField::constant_scalar(c, v)))
            .collect()
    }

    fn matrix_product(a: &[PhgSeries], b: &[PhgSeries], d: usize) -> Vec<PhgSeries> {
        let mut out = Vec::new();
        for r in 0..d {
            for col in 0..d {
                let mut acc = PhgSeries::zero(a[0].chart(), 0, a[0].order());
                for k in 0..d {
                    acc.add_assign_scaled(&a[r * d + k].mul_scalar(&b[k * d + col]), 1.0);
                }
                out.push(acc);
            }
        }
        out
    }

    fn identity_defect(prod: &[PhgSeries], d: usize) -> f64 {
        let c = prod[0].chart().clone();
        let mut worst = 0.0f64;
        for r in 0..d {
            for col in 0..d {
                let mut e = prod[r * d + col].clone();
                if r == col {
                    e.insert(0, 0, SpatialField::constant_scalar(&c, -1.0));
                }
                worst = worst.max(e.sup_norm());
            }
        }
        worst
    }

    #[test]
    fn minkowski_block_inverts_to_itself() {
        let c = chart();
        let g = scalar_matrix(&c, &[-1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0], 5);
        let inv = invert_matrix_series(&g, 4).unwrap();
        for (a, b) in inv.iter().zip(&g) {
            assert!(close(a, b, 0.0));
        }
    }

    #[test]
    fn geometric_series_inverse() {
        let c = chart();
        let a = field(&c, 0.3, 0.2);
        let one = PhgSeries::constant(6, SpatialField::constant_scalar(&c, 1.0));
        let g = one.add(&PhgSeries::monomial(6, 2, 0, a.clone())).unwrap();
        let inv = invert_matrix_series(&[g], 1).unwrap().remove(0);
        let a2 = a.mul_scalar_unchecked(&a);
        let expect = one
            .sub(&PhgSeries::monomial(6, 2, 0, a.clone()))
            .unwrap()
            .add(&PhgSeries::monomial(6, 4, 0, a2.clone()))
            .unwrap()
            .sub(&PhgSeries::monomial(6, 6, 0, a2.mul_scalar_unchecked(&a)))
            .unwrap();
        assert!(close(&inv, &expect, 1e-15));
    }

    #[test]
    fn singular_leading_block_is_reported() {
        let c = chart();
        let g = scalar_matrix(&c, &[1.0, 2.0, 2.0, 4.0], 3);
        assert!(matches!(
            invert_matrix_series(&g, 2),
            Err(FgError::SingularLeadingBlock { point: 0 })
        ));
    }

    #[test]
    fn random_block_inverse_composes_to_identity() {
        let c = chart();
        let d = 4;
        let order = 6;
        let mut g = Vec::new();
        for r in 0..d {
            for col in 0..d {
                let (lo, hi) = (r.min(col), r.max(col));
                let base = match (r, col) {
                    (0, 0) => -1.0,
                    _ if r == col => 1.0,
                    _ => 0.0,
                };
                let mut s = PhgSeries::constant(order, SpatialField::constant_scalar(&c, base));
                for i in 1..=order {
                    let a = 0.2 / (1 + i + lo) as f64;
                    let b = 0.1 * (hi as f64 - 1.5) / i as f64;
                    s.insert(i, 0, field(&c, a, b));
                    if i >= 3 {
                        s.insert(i, 1, field(&c, b, a));
                    }
                }
                g.push(s);
            }
        }
        let inv = invert_matrix_series(&g, d).unwrap();
        assert!(identity_defect(&matrix_product(&g, &inv, d), d) < 1e-11);
        assert!(identity_defect(&matrix_product(&inv, &g, d), d) < 1e-11);
    }

    fn arb_series() -> impl Strategy<Value = Vec<(usize, usize, f64, f64)>> {
        proptest::collection::vec((0usize..4, 0usize..2, -1.0f64..1.0, -1.0f64..1.0), 1..4)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ring_axioms(a in arb_series(), b in arb_series(), d in arb_series()) {
            let c = chart();
            let (a, b, d) = (series_from(&c, &a, 8), series_from(&c, &b, 8), series_from(&c, &d, 8));
            let m = |x: &PhgSeries, y: &PhgSeries| x.mul(y, Contraction::Scalar).unwrap();
            prop_assert!(close(&m(&m(&a, &b), &d), &m(&a, &m(&b, &d)), 1e-13));
            prop_assert!(close(&m(&a, &b.add(&d).unwrap()), &m(&a, &b).add(&m(&a, &d)).unwrap(), 1e-13));
            prop_assert!(close(&m(&a, &b), &m(&b, &a), 1e-15));
        }

        #[test]
        fn leibniz_rule(a in arb_series(), b in arb_series()) {
            let c = chart();
            let (a, b) = (series_from(&c, &a, 8), series_from(&c, &b, 8));
            let lhs = a.mul_scalar(&b).s_dds();
            let rhs = a.s_dds().mul_scalar(&b).add(&a.mul_scalar(&b.s_dds())).unwrap();
            prop_assert!(close(&lhs, &rhs, 1e-13));
        }

        #[test]
        fn evaluation_is_a_homomorphism(a in arb_series(), b in arb_series(), s in 0.01f64..0.9) {
            let c = chart();
            let (a, b) = (series_from(&c, &a, 8), series_from(&c, &b, 8));
            let ea = a.evaluate_at(s).unwrap();
            let eb = b.evaluate_at(s).unwrap();
            let prod = a.mul_scalar(&b).evaluate_at(s).unwrap();
            let direct = ea.mul_scalar_unchecked(&eb);
            prop_assert!(prod.max_abs_diff(&direct) <= 1e-12 * direct.sup_norm().max(1e-300) + 1e-300);
            let sum = a.add(&b).unwrap().evaluate_at(s).unwrap();
            prop_assert!(sum.max_abs_diff(&ea.lin_comb(1.0, &eb, 1.0)) <= 1e-13 * (ea.sup_norm() + eb.sup_norm()));
        }
    }
}
