//! Tensor fields on a flat periodic chart and their Riemannian calculus.
//!
//! A [`Chart`] is a uniform grid on the torus `R^n / (L_1 Z x ... x L_n Z)`.
//! Axes with resolution 1 carry fields that are constant along that axis, which
//! keeps higher dimensions affordable when the data only varies in a few
//! directions. All `x`-derivatives are trigonometric-spectral, so they are exact
//! for band-limited fields.
//!
//! Tensor indices and axes are zero-based throughout: component `(0, 1)` of a
//! rank-2 field is the `dx^1 (x) dx^2` coefficient.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{FgError, Result};
use crate::linalg;

/// Smallest admissible Cholesky pivot for a metric.
pub const PIVOT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    dim: usize,
    resolution: Vec<usize>,
    period: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl Chart {
    pub fn new(dim: usize, resolution: Vec<usize>, period: Vec<f64>) -> Result<Arc<Chart>> {
        if dim < 3 {
            return Err(FgError::InvalidChart(format!("dimension {dim} < 3")));
        }
        if resolution.len() != dim || period.len() != dim {
            return Err(FgError::InvalidChart(format!(
                "expected {dim} resolutions and periods, got {} and {}",
                resolution.len(),
                period.len()
            )));
        }
        if let Some(r) = resolution.iter().find(|&&r| r == 0) {
            return Err(FgError::InvalidChart(format!("resolution {r} < 1")));
        }
        if let Some(p) = period.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
            return Err(FgError::InvalidChart(format!("period {p} is not positive")));
        }
        let mut strides = vec![1; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * resolution[a + 1];
        }
        let len = resolution.iter().product();
        Ok(Arc::new(Chart {
            dim,
            resolution,
            period,
            strides,
            len,
        }))
    }

    /// Chart with the default period `2 pi` on every axis.
    pub fn periodic(dim: usize, resolution: Vec<usize>) -> Result<Arc<Chart>> {
        Chart::new(dim, resolution, vec![2.0 * PI; dim])
    }

    /// A chart where every field is constant (a single grid point).
    pub fn constant(dim: usize) -> Result<Arc<Chart>> {
        Chart::periodic(dim, vec![1; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn period(&self) -> &[f64] {
        &self.period
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of components of a rank-`rank` tensor.
    pub fn components(&self, rank: usize) -> usize {
        self.dim.pow(rank as u32)
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.period[axis] / self.resolution[axis] as f64
    }

    /// Coordinate of a grid point along one axis.
    pub fn coordinate(&self, point: usize, axis: usize) -> f64 {
        let j = (point / self.strides[axis]) % self.resolution[axis];
        j as f64 * self.spacing(axis)
    }

    pub fn point_coords(&self, point: usize) -> Vec<f64> {
        (0..self.dim).map(|a| self.coordinate(point, a)).collect()
    }

    /// Integer grid index of a point along every axis.
    pub fn point_index(&self, point: usize) -> Vec<usize> {
        (0..self.dim)
            .map(|a| (point / self.strides[a]) % self.resolution[a])
            .collect()
    }

    fn line_starts(&self, axis: usize) -> impl Iterator<Item = usize> + '_ {
        let st = self.strides[axis];
        let r = self.resolution[axis];
        (0..self.len).filter(move |p| (p / st) % r == 0)
    }

    fn wavenumber(&self, axis: usize, m: usize) -> f64 {
        2.0 * PI / self.period[axis] * signed_mode(m, self.resolution[axis]) as f64
    }
}

fn signed_mode(m: usize, r: usize) -> i64 {
    if m <= r / 2 {
        m as i64
    } else {
        m as i64 - r as i64
    }
}

/// Row-major flattening of a tensor multi-index.
pub fn flat_index(dim: usize, idx: &[usize]) -> usize {
    idx.iter().fold(0, |acc, &i| acc * dim + i)
}

/// Inverse of [`flat_index`].
pub fn multi_index(dim: usize, rank: usize, mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; rank];
    for slot in idx.iter_mut().rev() {
        *slot = flat % dim;
        flat /= dim;
    }
    idx
}

/// A covariant tensor field of fixed rank sampled on a chart.
///
/// Components are stored component-major: `data[c * len + p]` for flattened
/// tensor index `c` and grid point `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialField {
    chart: Arc<Chart>,
    rank: usize,
    symmetric: bool,
    data: Vec<f64>,
}

impl SpatialField {
    pub fn zeros(chart: &Arc<Chart>, rank: usize) -> Self {
        SpatialField {
            chart: chart.clone(),
            rank,
            symmetric: rank == 2,
            data: vec![0.0; chart.len() * chart.components(rank)],
        }
    }

    pub fn constant_scalar(chart: &Arc<Chart>, value: f64) -> Self {
        SpatialField {
            chart: chart.clone(),
            rank: 0,
            symmetric: false,
            data: vec![value; chart.len()],
        }
    }

    pub fn scalar(chart: &Arc<Chart>, values: Vec<f64>) -> Result<Self> {
        SpatialField::from_data(chart, 0, values)
    }

    /// Builds a field from raw component-major data. Rank-2 fields are marked
    /// symmetric only if they are exactly symmetric.
    pub fn from_data(chart: &Arc<Chart>, rank: usize, data: Vec<f64>) -> Result<Self> {
        let expected = chart.len() * chart.components(rank);
        if data.len() != expected {
            return Err(FgError::ShapeMismatch(format!(
                "expected {expected} values, got {}",
                data.len()
            )));
        }
        let mut f = SpatialField {
            chart: chart.clone(),
            rank,
            symmetric: false,
            data,
        };
        f.symmetric = rank == 2 && f.max_asymmetry() == 0.0;
        Ok(f)
    }

    /// Samples `f(tensor_index, x)` at every grid point.
    pub fn from_fn(chart: &Arc<Chart>, rank: usize, f: impl Fn(&[usize], &[f64]) -> f64) -> Self {
        let n = chart.dim();
        let len = chart.len();
        let mut data = vec![0.0; len * chart.components(rank)];
        let coords: Vec<Vec<f64>> = (0..len).map(|p| chart.point_coords(p)).collect();
        for c in 0..chart.components(rank) {
            let idx = multi_index(n, rank, c);
            for (p, x) in coords.iter().enumerate() {
                data[c * len + p] = f(&idx, x);
            }
        }
        let mut out = SpatialField {
            chart: chart.clone(),
            rank,
            symmetric: false,
            data,
        };
        out.symmetric = rank == 2 && out.max_asymmetry() == 0.0;
        out
    }

    /// Symmetric rank-2 field; `f` is only consulted for `i <= j`.
    pub fn sym2_from_fn(chart: &Arc<Chart>, f: impl Fn(usize, usize, &[f64]) -> f64) -> Self {
        SpatialField::from_fn(chart, 2, |idx, x| {
            let (i, j) = (idx[0].min(idx[1]), idx[0].max(idx[1]));
            f(i, j, x)
        })
    }

    pub fn scalar_from_fn(chart: &Arc<Chart>, f: impl Fn(&[f64]) -> f64) -> Self {
        SpatialField::from_fn(chart, 0, |_, x| f(x))
    }

    /// The Euclidean metric `delta_ij`.
    pub fn identity(chart: &Arc<Chart>) -> Self {
        SpatialField::sym2_from_fn(chart, |i, j, _| if i == j { 1.0 } else { 0.0 })
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn num_components(&self) -> usize {
        self.chart.components(self.rank)
    }

    /// Grid values of the component with flattened index `c`.
    pub fn comp(&self, c: usize) -> &[f64] {
        let len = self.chart.len();
        &self.data[c * len..(c + 1) * len]
    }

    pub(crate) fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.chart.len();
        self.symmetric = false;
        &mut self.data[c * len..(c + 1) * len]
    }

    pub fn component(&self, idx: &[usize]) -> &[f64] {
        assert_eq!(idx.len(), self.rank, "index length must equal the rank");
        self.comp(flat_index(self.dim(), idx))
    }

    /// Extracts one component as a scalar field.
    pub fn component_field(&self, idx: &[usize]) -> SpatialField {
        SpatialField {
            chart: self.chart.clone(),
            rank: 0,
            symmetric: false,
            data: self.component(idx).to_vec(),
        }
    }

    /// Value at a grid point.
    pub fn at(&self, idx: &[usize], point: usize) -> f64 {
        self.component(idx)[point]
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &SpatialField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        if self.rank != 2 {
            return 0.0;
        }
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                for (a, b) in self.component(&[i, j]).iter().zip(self.component(&[j, i])) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }

    /// Replaces a rank-2 field by its symmetric part and marks it symmetric.
    pub fn symmetrize(mut self) -> Self {
        if self.rank != 2 {
            return self;
        }
        let n = self.dim();
        let len = self.chart.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let (cij, cji) = (flat_index(n, &[i, j]), flat_index(n, &[j, i]));
                for p in 0..len {
                    let v = 0.5 * (self.data[cij * len + p] + self.data[cji * len + p]);
                    self.data[cij * len + p] = v;
                    self.data[cji * len + p] = v;
                }
            }
        }
        self.symmetric = true;
        self
    }

    pub fn same_shape(&self, other: &SpatialField) -> Result<()> {
        if self.chart != other.chart {
            return Err(FgError::ShapeMismatch("fields live on different charts".into()));
        }
        if self.rank != other.rank {
            return Err(FgError::RankMismatch {
                expected: self.rank,
                found: other.rank,
            });
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &SpatialField) -> Result<SpatialField> {
        self.same_shape(other)?;
        Ok(self.lin_comb(1.0, other, 1.0))
    }

    pub fn checked_sub(&self, other: &SpatialField) -> Result<SpatialField> {
        self.same_shape(other)?;
        Ok(self.lin_comb(1.0, other, -1.0))
    }

    /// `a * self + b * other`; shapes must already agree.
    pub fn lin_comb(&self, a: f64, other: &SpatialField, b: f64) -> SpatialField {
        debug_assert_eq!(self.data.len(), other.data.len());
        SpatialField {
            chart: self.chart.clone(),
            rank: self.rank,
            symmetric: self.symmetric && other.symmetric,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    /// `self += a * other`; shapes must already agree.
    pub fn axpy(&mut self, a: f64, other: &SpatialField) {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.symmetric = self.symmetric && other.symmetric;
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scale(&self, a: f64) -> SpatialField {
        SpatialField {
            chart: self.chart.clone(),
            rank: self.rank,
            symmetric: self.symmetric,
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }

    /// Pointwise product with a scalar field.
    pub fn mul_scalar_field(&self, scalar: &SpatialField) -> Result<SpatialField> {
        if scalar.rank != 0 {
            return Err(FgError::RankMismatch {
                expected: 0,
                found: scalar.rank,
            });
        }
        if self.chart != scalar.chart {
            return Err(FgError::ShapeMismatch("fields live on different charts".into()));
        }
        Ok(self.mul_scalar_unchecked(scalar))
    }

    pub(crate) fn mul_scalar_unchecked(&self, scalar: &SpatialField) -> SpatialField {
        let len = self.chart.len();
        let mut data = self.data.clone();
        for chunk in data.chunks_mut(len) {
            for (v, s) in chunk.iter_mut().zip(&scalar.data) {
                *v *= s;
            }
        }
        SpatialField {
            chart: self.chart.clone(),
            rank: self.rank,
            symmetric: self.symmetric,
            data,
        }
    }

    /// Tensor product `self (x) other`.
    pub fn outer(&self, other: &SpatialField) -> Result<SpatialField> {
        if self.chart != other.chart {
            return Err(FgError::ShapeMismatch("fields live on different charts".into()));
        }
        let len = self.chart.len();
        let (ca, cb) = (self.num_components(), other.num_components());
        let mut data = vec![0.0; len * ca * cb];
        for i in 0..ca {
            for j in 0..cb {
                let dst = &mut data[(i * cb + j) * len..(i * cb + j + 1) * len];
                for ((d, a), b) in dst.iter_mut().zip(self.comp(i)).zip(other.comp(j)) {
                    *d = a * b;
                }
            }
        }
        SpatialField::from_data(&self.chart, self.rank + other.rank, data)
    }

    /// Contracts the last index of `self` with the first index of `other`.
    pub fn chain(&self, other: &SpatialField) -> Result<SpatialField> {
        if self.chart != other.chart {
            return Err(FgError::ShapeMismatch("fields live on different charts".into()));
        }
        if self.rank == 0 || other.rank == 0 {
            return Err(FgError::RankMismatch {
                expected: 1,
                found: 0,
            });
        }
        let n = self.dim();
        let len = self.chart.len();
        let left = self.chart.components(self.rank - 1);
        let right = self.chart.components(other.rank - 1);
        let mut data = vec![0.0; len * left * right];
        for l in 0..left {
            for r in 0..right {
                let dst = &mut data[(l * right + r) * len..(l * right + r + 1) * len];
                for k in 0..n {
                    let a = self.comp(l * n + k);
                    let b = other.comp(k * right + r);
                    for ((d, x), y) in dst.iter_mut().zip(a).zip(b) {
                        *d += x * y;
                    }
                }
            }
        }
        SpatialField::from_data(&self.chart, self.rank + other.rank - 2, data)
    }

    /// Full contraction `sum self_I other_I` over all tensor indices.
    pub fn contract_full(&self, other: &SpatialField) -> Result<SpatialField> {
        self.same_shape(other)?;
        let len = self.chart.len();
        let mut data = vec![0.0; len];
        for c in 0..self.num_components() {
            for ((d, a), b) in data.iter_mut().zip(self.comp(c)).zip(other.comp(c)) {
                *d += a * b;
            }
        }
        SpatialField::scalar(&self.chart, data)
    }
}

// ---------------------------------------------------------------------------
// Spectral machinery

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if forward {
            p.plan_fft_forward(len)
        } else {
            p.plan_fft_inverse(len)
        }
    })
}

fn derivative_slice(chart: &Chart, axis: usize, src: &[f64], dst: &mut [f64]) {
    let r = chart.resolution[axis];
    if r == 1 {
        dst.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let st = chart.strides[axis];
    let fwd = plan(r, true);
    let inv = plan(r, false);
    let mult: Vec<Complex64> = (0..r)
        .map(|m| {
            if r % 2 == 0 && m == r / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, chart.wavenumber(axis, m) / r as f64)
            }
        })
        .collect();
    let mut buf = vec![Complex64::new(0.0, 0.0); r];
    for start in chart.line_starts(axis) {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(src[start + j * st], 0.0);
        }
        fwd.process(&mut buf);
        for (b, m) in buf.iter_mut().zip(&mult) {
            *b *= m;
        }
        inv.process(&mut buf);
        for (j, b) in buf.iter().enumerate() {
            dst[start + j * st] = b.re;
        }
    }
}

/// Unnormalized n-dimensional DFT over the axes with resolution > 1.
fn fft_nd(chart: &Chart, buf: &mut [Complex64], forward: bool) {
    for axis in 0..chart.dim {
        let r = chart.resolution[axis];
        if r == 1 {
            continue;
        }
        let st = chart.strides[axis];
        let f = plan(r, forward);
        let mut line = vec![Complex64::new(0.0, 0.0); r];
        for start in chart.line_starts(axis) {
            for (j, l) in line.iter_mut().enumerate() {
                *l = buf[start + j * st];
            }
            f.process(&mut line);
            for (j, l) in line.iter().enumerate() {
                buf[start + j * st] = *l;
            }
        }
    }
}

/// Spectral derivative `d f / d x^axis` (zero-based axis).
pub fn partial_derivative(f: &SpatialField, axis: usize) -> Result<SpatialField> {
    let chart = f.chart().clone();
    if axis >= chart.dim() {
        return Err(FgError::AxisOutOfRange {
            axis,
            dim: chart.dim(),
        });
    }
    let mut out = SpatialField::zeros(&chart, f.rank());
    for c in 0..f.num_components() {
        let mut tmp = vec![0.0; chart.len()];
        derivative_slice(&chart, axis, f.comp(c), &mut tmp);
        out.comp_mut(c).copy_from_slice(&tmp);
    }
    out.symmetric = f.symmetric;
    Ok(out)
}

/// A Fourier mode of a real scalar field, `amplitude * cos(k . x + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub wavenumbers: Vec<i64>,
    pub amplitude: f64,
    pub phase: f64,
}

/// The `k` strongest real Fourier modes of one component, strongest first.
/// Ties are resolved by grid order, so the result is deterministic.
pub fn top_fourier_modes(values: &[f64], chart: &Chart, k: usize) -> Vec<FourierMode> {
    let len = chart.len();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(chart, &mut buf, true);
    let mut modes = Vec::new();
    for (p, c) in buf.iter().enumerate() {
        let wn: Vec<i64> = chart
            .point_index(p)
            .iter()
            .zip(&chart.resolution)
            .map(|(&m, &r)| signed_mode(m, r))
            .collect();
        // Keep one representative of each conjugate pair.
        let neg: Vec<i64> = wn
            .iter()
            .zip(&chart.resolution)
            .map(|(&m, &r)| {
                let w = (-m).rem_euclid(r as i64) as usize;
                signed_mode(w, r)
            })
            .collect();
        let self_conjugate = neg == wn;
        if !self_conjugate && wn.iter().find(|&&m| m != 0).is_some_and(|&m| m < 0) {
            continue;
        }
        let c = c / len as f64;
        let amplitude = if self_conjugate { c.norm() } else { 2.0 * c.norm() };
        if amplitude == 0.0 {
            continue;
        }
        modes.push(FourierMode {
            wavenumbers: wn,
            amplitude,
            phase: c.arg(),
        });
    }
    modes.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude));
    modes.truncate(k);
    modes
}

/// Transverse-traceless projection of a rank-2 field with respect to the flat
/// metric `delta`, done mode by mode in Fourier space.
pub fn tt_project_flat(t: &SpatialField) -> Result<SpatialField> {
    if t.rank() != 2 {
        return Err(FgError::RankMismatch {
            expected: 2,
            found: t.rank(),
        });
    }
    let chart = t.chart().clone();
    let n = chart.dim();
    let len = chart.len();
    let mut hat: Vec<Vec<Complex64>> = (0..n * n)
        .map(|c| {
            let mut b: Vec<Complex64> = t.comp(c).iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft_nd(&chart, &mut b, true);
            b
        })
        .collect();
    let mut h = vec![Complex64::new(0.0, 0.0); n * n];
    let mut ph = vec![Complex64::new(0.0, 0.0); n * n];
    let mut php = vec![Complex64::new(0.0, 0.0); n * n];
    for p in 0..len {
        let idx = chart.point_index(p);
        let k: Vec<f64> = (0..n).map(|a| chart.wavenumber(a, idx[a])).collect();
        let k2: f64 = k.iter().map(|v| v * v).sum();
        let proj = |i: usize, j: usize| -> f64 {
            let d = if i == j { 1.0 } else { 0.0 };
            if k2 == 0.0 {
                d
            } else {
                d - k[i] * k[j] / k2
            }
        };
        for c in 0..n * n {
            h[c] = hat[c][p];
        }
        for i in 0..n {
            for j in 0..n {
                ph[i * n + j] = (0..n).map(|l| h[l * n + j] * proj(i, l)).sum();
            }
        }
        for i in 0..n {
            for j in 0..n {
                php[i * n + j] = (0..n).map(|l| ph[i * n + l] * proj(l, j)).sum();
            }
        }
        let tr: Complex64 = (0..n).map(|i| php[i * n + i]).sum();
        let rank_p: f64 = (0..n).map(|i| proj(i, i)).sum();
        for i in 0..n {
            for j in 0..n {
                let v = php[i * n + j] - tr * proj(i, j) / rank_p;
                hat[i * n + j][p] = v;
            }
        }
    }
    let mut data = vec![0.0; n * n * len];
    for (c, b) in hat.iter_mut().enumerate() {
        fft_nd(&chart, b, false);
        for (d, v) in data[c * len..(c + 1) * len].iter_mut().zip(b.iter()) {
            *d = v.re / len as f64;
        }
    }
    Ok(SpatialField::from_data(&chart, 2, data)?.symmetrize())
}

/// Flat-metric inverse of `xi -> delta L xi`, where
/// `L xi = d xi + (d xi)^T - (2/n) div(xi) delta`. The mean of `r` is passed
/// through unchanged.
fn flat_divergence_inverse(r: &SpatialField) -> SpatialField {
    let chart = r.chart().clone();
    let n = chart.dim();
    let nf = n as f64;
    let len = chart.len();
    let mut rhat: Vec<Vec<Complex64>> = (0..n)
        .map(|c| {
            let mut b: Vec<Complex64> = r.comp(c).iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft_nd(&chart, &mut b, true);
            b
        })
        .collect();
    for p in 0..len {
        let idx = chart.point_index(p);
        let k: Vec<f64> = (0..n).map(|a| chart.wavenumber(a, idx[a])).collect();
        let k2: f64 = k.iter().map(|v| v * v).sum();
        if k2 == 0.0 {
            continue;
        }
        let kr: Complex64 = (0..n).map(|a| rhat[a][p] * k[a]).sum();
        // k^2 xi_perp = r_perp and k^2 (2 - 2/n) xi_par = r_par.
        let par = 1.0 / (k2 * (2.0 - 2.0 / nf)) - 1.0 / k2;
        for (a, ka) in k.iter().enumerate() {
            rhat[a][p] = rhat[a][p] / k2 + kr * (par * ka / k2);
        }
    }
    let mut data = vec![0.0; n * len];
    for (c, b) in rhat.iter_mut().enumerate() {
        fft_nd(&chart, b, false);
        for (d, v) in data[c * len..(c + 1) * len].iter_mut().zip(b.iter()) {
            *d = v.re / len as f64;
        }
    }
    SpatialField {
        chart,
        rank: 1,
        symmetric: true,
        data,
    }
}

/// The conformal Killing operator `nabla xi + (nabla xi)^T - (2/n) div(xi) g`
/// on one-forms.
pub fn conformal_killing(g: &SpatialMetric, xi: &SpatialField) -> Result<SpatialField> {
    if xi.rank() != 1 {
        return Err(FgError::RankMismatch {
            expected: 1,
            found: xi.rank(),
        });
    }
    let chart = g.chart().clone();
    let n = chart.dim();
    let len = chart.len();
    let gam = christoffel(g)?;
    let dxi: Vec<SpatialField> = (0..n)
        .map(|a| partial_derivative(xi, a))
        .collect::<Result<_>>()?;
    // nabla_i xi_j
    let mut cov = vec![vec![0.0; len]; n * n];
    for i in 0..n {
        for j in 0..n {
            let out = &mut cov[i * n + j];
            out.copy_from_slice(dxi[i].comp(j));
            for k in 0..n {
                let gk = gam.component(&[k, i, j]);
                let xk = xi.comp(k);
                for p in 0..len {
                    out[p] -= gk[p] * xk[p];
                }
            }
        }
    }
    let ginv = g.inverse();
    let mut div = vec![0.0; len];
    for i in 0..n {
        for j in 0..n {
            let gi = ginv.component(&[i, j]);
            for p in 0..len {
                div[p] += gi[p] * cov[i * n + j][p];
            }
        }
    }
    let gf = g.field();
    let mut data = vec![0.0; n * n * len];
    for i in 0..n {
        for j in 0..n {
            let gij = gf.component(&[i, j]);
            let out = &mut data[(i * n + j) * len..(i * n + j + 1) * len];
            for p in 0..len {
                out[p] = cov[i * n + j][p] + cov[j * n + i][p] - 2.0 / n as f64 * div[p] * gij[p];
            }
        }
    }
    Ok(SpatialField {
        chart,
        rank: 2,
        symmetric: true,
        data,
    })
}

/// Finds a `g`-trace-free symmetric `X = L xi` with `delta_g X = w` by
/// restarted GMRES, right-preconditioned with the flat inverse. Returns `X` and the
/// final residual sup-norm. `max_iter` bounds the total number of operator
/// applications.
pub fn solve_tracefree_divergence(
    g: &SpatialMetric,
    w: &SpatialField,
    tol: f64,
    max_iter: usize,
) -> Result<(SpatialField, f64)> {
    if w.rank() != 1 {
        return Err(FgError::RankMismatch {
            expected: 1,
            found: w.rank(),
        });
    }
    let chart = g.chart().clone();
    let lift = |v: &[f64]| -> Result<SpatialField> {
        let r = SpatialField::from_data(&chart, 1, v.to_vec())?;
        conformal_killing(g, &flat_divergence_inverse(&r))
    };
    let apply = |v: &[f64]| -> Result<Vec<f64>> { Ok(divergence(g, &lift(v)?)?.data().to_vec()) };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    const RESTART: usize = 30;
    let mut x = SpatialField::zeros(&chart, 2);
    let mut r = w.data().to_vec();
    let mut used = 0;
    while used < max_iter {
        if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= tol {
            break;
        }
        let beta = dot(&r, &r).sqrt();
        let mut basis = vec![r.iter().map(|v| v / beta).collect::<Vec<f64>>()];
        let mut hess: Vec<Vec<f64>> = Vec::new();
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut rhs = vec![beta];
        for j in 0..RESTART.min(max_iter - used) {
            used += 1;
            let mut v = apply(&basis[j])?;
            let mut col = Vec::with_capacity(j + 2);
            for b in &basis {
                let hij = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= hij * y);
                col.push(hij);
            }
            let hn = dot(&v, &v).sqrt();
            col.push(hn);
            for k in 0..j {
                let t = cs[k] * col[k] + sn[k] * col[k + 1];
                col[k + 1] = -sn[k] * col[k] + cs[k] * col[k + 1];
                col[k] = t;
            }
            let rad = col[j].hypot(col[j + 1]);
            if rad == 0.0 {
                break;
            }
            cs.push(col[j] / rad);
            sn.push(col[j + 1] / rad);
            col[j] = rad;
            col[j + 1] = 0.0;
            rhs.push(-sn[j] * rhs[j]);
            rhs[j] *= cs[j];
            hess.push(col);
            if hn <= 1e-14 * beta || rhs[j + 1].abs() <= 1e-3 * tol {
                break;
            }
            basis.push(v.iter().map(|x| x / hn).collect());
        }
        let k = hess.len();
        if k == 0 {
            break;
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let tail: f64 = (i + 1..k).map(|l| hess[l][i] * y[l]).sum();
            y[i] = (rhs[i] - tail) / hess[i][i];
        }
        let mut z = vec![0.0; r.len()];
        for (yi, b) in y.iter().zip(&basis) {
            z.iter_mut().zip(b).for_each(|(a, v)| *a += yi * v);
        }
        let prev = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let trial = x.lin_comb(1.0, &lift(&z)?, 1.0);
        let r_trial: Vec<f64> = w
            .data()
            .iter()
            .zip(divergence(g, &trial)?.data())
            .map(|(a, b)| a - b)
            .collect();
        if r_trial.iter().fold(0.0f64, |m, v| m.max(v.abs())) >= prev {
            break;
        }
        x = trial;
        r = r_trial;
    }
    let norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((x.symmetrize(), norm))
}

// ---------------------------------------------------------------------------
// Riemannian geometry

/// A pointwise positive definite symmetric 2-tensor with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMetric {
    g: SpatialField,
    inv: SpatialField,
}

impl SpatialMetric {
    pub fn new(g: SpatialField) -> Result<Self> {
        if g.rank() != 2 {
            return Err(FgError::RankMismatch {
                expected: 2,
                found: g.rank(),
            });
        }
        let asym = g.max_asymmetry();
        if asym > 1e-14 * g.sup_norm().max(1.0) {
            return Err(FgError::NotSymmetric(asym));
        }
        let g = g.symmetrize();
        let chart = g.chart().clone();
        let n = chart.dim();
        let len = chart.len();
        let mut inv = SpatialField::zeros(&chart, 2);
        let mut m = vec![0.0; n * n];
        for p in 0..len {
            for c in 0..n * n {
                m[c] = g.comp(c)[p];
            }
            let orig = m.clone();
            linalg::cholesky(&mut m, n, PIVOT_FLOOR)
                .map_err(|pivot| FgError::NotPositiveDefinite { point: p, pivot })?;
            let mi = linalg::spd_inverse_from_cholesky(&m, n);
            for i in 0..n {
                for j in 0..n {
                    let v: f64 = (0..n).map(|k| orig[i * n + k] * mi[k * n + j]).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    if (v - target).abs() > 1e-12 {
                        return Err(FgError::NotPositiveDefinite {
                            point: p,
                            pivot: f64::NAN,
                        });
                    }
                }
            }
            for c in 0..n * n {
                inv.data[c * len + p] = mi[c];
            }
        }
        inv.symmetric = true;
        Ok(SpatialMetric { g, inv })
    }

    pub fn flat(chart: &Arc<Chart>) -> Self {
        SpatialMetric {
            g: SpatialField::identity(chart),
            inv: SpatialField::identity(chart),
        }
    }

    pub fn field(&self) -> &SpatialField {
        &self.g
    }

    pub fn inverse(&self) -> &SpatialField {
        &self.inv
    }

    pub fn chart(&self) -> &Arc<Chart> {
        self.g.chart()
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }
}

/// `d_l g_ij` for all `l, i, j`, as a rank-3 field with index order `(l, i, j)`.
fn metric_gradient(g: &SpatialField) -> Result<SpatialField> {
    let chart = g.chart().clone();
    let n = chart.dim();
    let len = chart.len();
    let mut out = SpatialField::zeros(&chart, 3);
    for l in 0..n {
        let d = partial_derivative(g, l)?;
        out.data[l * n * n * len..(l + 1) * n * n * len].copy_from_slice(&d.data);
    }
    Ok(out)
}

/// Christoffel symbols `Gamma^k_ij`, stored with index order `(k, i, j)`.
pub fn christoffel(g: &SpatialMetric) -> Result<SpatialField> {
    let chart = g.chart().clone();
    let n = chart.dim();
    let len = chart.len();
    let dg = metric_gradient(g.field())?;
    // Gamma_lij = (d_i g_jl + d_j g_il - d_l g_ij) / 2
    let mut lower = SpatialField::zeros(&chart, 3);
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                let dst = flat_index(n, &[l, i, j]);
                let a = dg.comp(flat_index(n, &[i, j, l])).to_vec();
                let b = dg.comp(flat_index(n, &[j, i, l])).to_vec();
                let c = dg.comp(flat_index(n, &[l, i, j])).to_vec();
                let out = lower.comp_mut(dst);
                for p in 0..len {
                    out[p] = 0.5 * (a[p] + b[p] - c[p]);
                }
            }
        }
    }
    g.inverse().chain(&lower)
}

/// Ricci tensor before symmetrization, `R_ij = d_k G^k_ij - d_j G^k_ik
/// + G^k_kl G^l_ij - G^k_jl G^l_ik`.
pub(crate) fn ricci_unsymmetrized(g: &SpatialMetric) -> Result<SpatialField> {
    let chart = g.chart().clone();
    let n = chart.dim();
    let len = chart.len();
    let gamma = christoffel(g)?;
    let mut trace = SpatialField::zeros(&chart, 1);
    for i in 0..n {
        for k in 0..n {
            let src = gamma.comp(flat_index(n, &[k, k, i])).to_vec();
            for (t, s) in trace.comp_mut(i).iter_mut().zip(src) {
                *t += s;
            }
        }
    }
    let dgamma: Vec<SpatialField> = (0..n)
        .map(|a| partial_derivative(&gamma, a))
        .collect::<Result<_>>()?;
    let dtrace: Vec<SpatialField> = (0..n)
        .map(|a| partial_derivative(&trace, a))
        .collect::<Result<_>>()?;
    let mut ric = SpatialField::zeros(&chart, 2);
    let mut acc = vec![0.0; len];
    for i in 0..n {
        for j in 0..n {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..n {
                let d = dgamma[k].comp(flat_index(n, &[k, i, j]));
                for (a, v) in acc.iter_mut().zip(d) {
                    *a += v;
                }
            }
            for (a, v) in acc.iter_mut().zip(dtrace[j].comp(i)) {
                *a -= v;
            }
            for l in 0..n {
                let t = trace.comp(l);
                let gl = gamma.comp(flat_index(n, &[l, i, j]));
                for p in 0..len {
                    acc[p] += t[p] * gl[p];
                }
                for k in 0..n {
                    let a = gamma.comp(flat_index(n, &[k, j, l]));
                    let b = gamma.comp(flat_index(n, &[l, i, k]));
                    for p in 0..len {
                        acc[p] -= a[p] * b[p];
                    }
                }
            }
            ric.comp_mut(flat_index(n, &[i, j])).copy_from_slice(&acc);
        }
    }
    Ok(ric)
}

/// Ricci tensor of a spatial metric (symmetric).
pub fn ricci(g: &SpatialMetric) -> Result<SpatialField> {
    Ok(ricci_unsymmetrized(g)?.symmetrize())
}

/// Scalar curvature `g^ij R_ij`.
pub fn scalar_curvature(g: &SpatialMetric) -> Result<SpatialField> {
    trace(g, &ricci(g)?)
}

/// `g^ij t_ij` pointwise.
pub fn trace(g: &SpatialMetric, t: &SpatialField) -> Result<SpatialField> {
    if t.rank() != 2 {
        return Err(FgError::RankMismatch {
            expected: 2,
            found: t.rank(),
        });
    }
    g.inverse().contract_full(t)
}

/// `t - (tr_g t / n) g`.
pub fn tracefree_part(g: &SpatialMetric, t: &SpatialField) -> Result<SpatialField> {
    let tr = trace(g, t)?;
    let n = g.dim() as f64;
    let correction = g.field().mul_scalar_unchecked(&tr);
    let mut out = t.lin_comb(1.0, &correction, -1.0 / n);
    if t.is_symmetric() {
        out = out.symmetrize();
    }
    Ok(out)
}

/// Divergence with the minus-sign convention, `(delta_g k)_i = -g^jl k_ij;l`.
pub fn divergence(g: &SpatialMetric, k: &SpatialField) -> Result<SpatialField> {
    if k.rank() != 2 {
        return Err(FgError::RankMismatch {
            expected: 2,
            found: k.rank(),
        });
    }
    let chart = g.chart().clone();
    let n = chart.dim();
    let len = chart.len();
    let gamma = christoffel(g)?;
    let dk: Vec<SpatialField> = (0..n)
        .map(|a| partial_derivative(k, a))
        .collect::<Result<_>>()?;
    let ginv = g.inverse();
    let mut out = SpatialField::zeros(&chart, 1);
    let mut cov = vec![0.0; len];
    for i in 0..n {
        let mut acc = vec![0.0; len];
        for j in 0..n {
            for l in 0..n {
                // k_ij;l = d_l k_ij - G^m_li k_mj - G^m_lj k_im
                cov.copy_from_slice(dk[l].component(&[i, j]));
                for m in 0..n {
                    let g1 = gamma.component(&[m, l, i]);
                    let k1 = k.component(&[m, j]);
                    let g2 = gamma.component(&[m, l, j]);
                    let k2 = k.component(&[i, m]);
                    for p in 0..len {
                        cov[p] -= g1[p] * k1[p] + g2[p] * k2[p];
                    }
                }
                let gi = ginv.component(&[j, l]);
                for p in 0..len {
                    acc[p] -= gi[p] * cov[p];
                }
            }
        }
        out.comp_mut(i).copy_from_slice(&acc);
    }
    Ok(out)
}

/// Residuals of the vacuum constraint equations on a spacelike slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintResidual {
    /// `R_gamma - |k|^2 + (tr k)^2 - 2 Lambda`
    pub hamiltonian: SpatialField,
    /// `delta_gamma k + d tr_gamma k`
    pub momentum: SpatialField,
}

pub fn check_constraints(
    gamma: &SpatialMetric,
    k: &SpatialField,
    cosmological_constant: f64,
) -> Result<ConstraintResidual> {
    let chart = gamma.chart().clone();
    let n = chart.dim();
    let r = scalar_curvature(gamma)?;
    let trk = trace(gamma, k)?;
    // |k|^2 = g^ia g^jb k_ij k_ab
    let k_up = gamma.inverse().chain(k)?.chain(gamma.inverse())?;
    let ksq = k_up.contract_full(k)?;
    let mut ham = r.lin_comb(1.0, &ksq, -1.0);
    for (h, t) in ham.data.iter_mut().zip(&trk.data) {
        *h += t * t - 2.0 * cosmological_constant;
    }
    let mut mom = divergence(gamma, k)?;
    for a in 0..n {
        let d = partial_derivative(&trk, a)?;
        for (m, v) in mom.comp_mut(a).iter_mut().zip(d.comp(0)) {
            *m += v;
        }
    }
    Ok(ConstraintResidual {
        hamiltonian: ham,
        momentum: mom,
    })
}
