//! Exact polynomials in one variable and small polynomial matrices over the
//! rationals.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational scalar.
pub type Q = Ratio<i128>;

pub fn q(n: i128) -> Q {
    Q::from_integer(n)
}

pub fn qf(num: i128, den: i128) -> Q {
    Q::new(num, den)
}

pub fn q_to_f64(x: Q) -> f64 {
    x.numer().to_f64().unwrap_or(f64::NAN) / x.denom().to_f64().unwrap_or(f64::NAN)
}

/// Polynomial with coefficients stored from the constant term upward, with
/// no trailing zeros.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Poly {
    coeffs: Vec<Q>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<Q>) -> Self {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: vec![] }
    }

    pub fn constant(c: Q) -> Self {
        Poly::new(vec![c])
    }

    pub fn int(c: i128) -> Self {
        Poly::constant(q(c))
    }

    /// The variable `lambda`.
    pub fn x() -> Self {
        Poly::new(vec![q(0), q(1)])
    }

    /// `lambda - r`.
    pub fn linear_root(r: Q) -> Self {
        Poly::new(vec![-r, q(1)])
    }

    /// Builds `sum c_k lambda^k` from integer coefficients.
    pub fn from_ints(c: &[i128]) -> Self {
        Poly::new(c.iter().map(|&v| q(v)).collect())
    }

    pub fn coeffs(&self) -> &[Q] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree, with `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn leading(&self) -> Q {
        self.coeffs.last().copied().unwrap_or_else(Q::zero)
    }

    pub fn eval(&self, x: Q) -> Q {
        self.coeffs.iter().rev().fold(Q::zero(), |acc, &c| acc * x + c)
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + q_to_f64(c))
    }

    pub fn derivative(&self) -> Self {
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| c * q(k as i128))
                .collect(),
        )
    }

    pub fn scale(&self, a: Q) -> Self {
        Poly::new(self.coeffs.iter().map(|&c| c * a).collect())
    }

    pub fn pow(&self, k: u32) -> Self {
        (0..k).fold(Poly::int(1), |acc, _| &acc * self)
    }

    /// Quotient and remainder of division by `lambda - r`.
    pub fn divide_linear(&self, r: Q) -> (Poly, Q) {
        if self.coeffs.is_empty() {
            return (Poly::zero(), Q::zero());
        }
        let d = self.coeffs.len() - 1;
        let mut out = vec![Q::zero(); d];
        let mut carry = Q::zero();
        for k in (0..=d).rev() {
            let v = self.coeffs[k] + carry * r;
            if k == 0 {
                return (Poly::new(out), v);
            }
            out[k - 1] = v;
            carry = v;
        }
        unreachable!()
    }

    /// Product of `lambda - r` over a multiset of roots.
    pub fn from_roots(roots: &[Q]) -> Self {
        roots
            .iter()
            .fold(Poly::int(1), |acc, &r| &acc * &Poly::linear_root(r))
    }

    /// All rational roots with multiplicity, plus the cofactor left after
    /// dividing them out. The zero polynomial has no roots.
    pub fn rational_roots(&self) -> (Vec<Q>, Poly) {
        let mut rest = self.clone();
        let mut roots = Vec::new();
        if rest.is_zero() {
            return (roots, rest);
        }
        while rest.coeffs.first().is_some_and(|c| c.is_zero()) {
            rest.coeffs.remove(0);
            roots.push(Q::zero());
        }
        loop {
            let Some(d) = rest.degree() else { break };
            if d == 0 {
                break;
            }
            let ints = rest.integer_coefficients();
            let (a0, ad) = (ints[0].abs(), ints[d].abs());
            let mut found = None;
            'outer: for p in divisors(a0) {
                for qd in divisors(ad) {
                    for sign in [1, -1] {
                        let cand = Q::new(sign * p, qd);
                        if rest.eval(cand).is_zero() {
                            found = Some(cand);
                            break 'outer;
                        }
                    }
                }
            }
            match found {
                Some(r) => {
                    rest = rest.divide_linear(r).0;
                    roots.push(r);
                }
                None => break,
            }
        }
        roots.sort();
        (roots, rest)
    }

    /// Coefficients scaled to coprime integers.
    fn integer_coefficients(&self) -> Vec<i128> {
        let l = self
            .coeffs
            .iter()
            .fold(1i128, |acc, c| num_integer_lcm(acc, *c.denom()));
        self.coeffs
            .iter()
            .map(|c| (c * q(l)).to_integer())
            .collect()
    }
}

fn num_integer_lcm(a: i128, b: i128) -> i128 {
    let g = gcd(a, b);
    (a / g * b).abs()
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

fn divisors(n: i128) -> Vec<i128> {
    let n = n.abs();
    let mut out = Vec::new();
    let mut k = 1;
    while k * k <= n {
        if n % k == 0 {
            out.push(k);
            if k != n / k {
                out.push(n / k);
            }
        }
        k += 1;
    }
    out.sort_unstable();
    out
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, o: &Poly) -> Poly {
        let len = self.coeffs.len().max(o.coeffs.len());
        Poly::new(
            (0..len)
                .map(|k| {
                    self.coeffs.get(k).copied().unwrap_or_else(Q::zero)
                        + o.coeffs.get(k).copied().unwrap_or_else(Q::zero)
                })
                .collect(),
        )
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, o: &Poly) -> Poly {
        self + &(-o)
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-Q::one())
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, o: &Poly) -> Poly {
        if self.is_zero() || o.is_zero() {
            return Poly::zero();
        }
        let mut out = vec![Q::zero(); self.coeffs.len() + o.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in o.coeffs.iter().enumerate() {
                out[i + j] += *a * *b;
            }
        }
        Poly::new(out)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Poly {
            type Output = Poly;
            fn $m(self, o: Poly) -> Poly {
                (&self).$m(&o)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, c) in self.coeffs.iter().enumerate().rev() {
            if c.is_zero() {
                continue;
            }
            let sign = if c.is_negative() { "-" } else { "+" };
            if first {
                if c.is_negative() {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            let a = c.abs();
            match (k, a.is_one()) {
                (0, _) => write!(f, "{a}")?,
                (1, true) => write!(f, "λ")?,
                (1, false) => write!(f, "{a}λ")?,
                (_, true) => write!(f, "λ^{k}")?,
                (_, false) => write!(f, "{a}λ^{k}")?,
            }
        }
        Ok(())
    }
}

/// A matrix whose entries are polynomials in `lambda`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LambdaMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Poly>,
}

impl LambdaMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Poly>) -> Self {
        assert_eq!(entries.len(), rows * cols, "entry count must be rows * cols");
        LambdaMatrix {
            rows,
            cols,
            entries,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        LambdaMatrix::new(rows, cols, vec![Poly::zero(); rows * cols])
    }

    /// `c * I_d`.
    pub fn scalar(d: usize, c: Poly) -> Self {
        let mut m = LambdaMatrix::zeros(d, d);
        for k in 0..d {
            m.entries[k * d + k] = c.clone();
        }
        m
    }

    pub fn identity(d: usize) -> Self {
        LambdaMatrix::scalar(d, Poly::int(1))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> &Poly {
        &self.entries[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, p: Poly) {
        self.entries[r * self.cols + c] = p;
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(Poly::is_zero)
    }

    pub fn max_degree(&self) -> Option<usize> {
        self.entries.iter().filter_map(Poly::degree).max()
    }

    pub fn matmul(&self, o: &LambdaMatrix) -> LambdaMatrix {
        assert_eq!(self.cols, o.rows, "inner dimensions must agree");
        let mut out = LambdaMatrix::zeros(self.rows, o.cols);
        for r in 0..self.rows {
            for c in 0..o.cols {
                let mut acc = Poly::zero();
                for k in 0..self.cols {
                    acc = &acc + &(self.get(r, k) * o.get(k, c));
                }
                out.set(r, c, acc);
            }
        }
        out
    }

    fn zip(&self, o: &LambdaMatrix, f: impl Fn(&Poly, &Poly) -> Poly) -> LambdaMatrix {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols), "shapes must agree");
        LambdaMatrix::new(
            self.rows,
            self.cols,
            self.entries.iter().zip(&o.entries).map(|(a, b)| f(a, b)).collect(),
        )
    }

    pub fn plus(&self, o: &LambdaMatrix) -> LambdaMatrix {
        self.zip(o, |a, b| a + b)
    }

    pub fn minus(&self, o: &LambdaMatrix) -> LambdaMatrix {
        self.zip(o, |a, b| a - b)
    }

    pub fn scale(&self, a: Q) -> LambdaMatrix {
        LambdaMatrix::new(
            self.rows,
            self.cols,
            self.entries.iter().map(|p| p.scale(a)).collect(),
        )
    }

    pub fn derivative(&self) -> LambdaMatrix {
        LambdaMatrix::new(
            self.rows,
            self.cols,
            self.entries.iter().map(Poly::derivative).collect(),
        )
    }

    pub fn eval(&self, x: Q) -> QMatrix {
        QMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|p| p.eval(x)).collect(),
        }
    }

    /// Determinant by cofactor expansion (the matrices here are at most 4x4).
    pub fn det(&self) -> Poly {
        assert_eq!(self.rows, self.cols, "determinant needs a square matrix");
        let idx: Vec<usize> = (0..self.cols).collect();
        self.minor_det(0, &idx)
    }

    fn minor_det(&self, row: usize, cols: &[usize]) -> Poly {
        if cols.is_empty() {
            return Poly::int(1);
        }
        let mut acc = Poly::zero();
        for (k, &c) in cols.iter().enumerate() {
            let e = self.get(row, c);
            if e.is_zero() {
                continue;
            }
            let rest: Vec<usize> = cols.iter().copied().filter(|&x| x != c).collect();
            let term = e * &self.minor_det(row + 1, &rest);
            acc = if k % 2 == 0 { &acc + &term } else { &acc - &term };
        }
        acc
    }
}

impl fmt::Display for LambdaMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self.get(r, c).to_string()).collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

/// A matrix of exact rationals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Q>,
}

impl QMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Q>) -> Self {
        assert_eq!(entries.len(), rows * cols, "entry count must be rows * cols");
        QMatrix {
            rows,
            cols,
            entries,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> Q {
        self.entries[r * self.cols + c]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mul_vec(&self, v: &[Q]) -> Vec<Q> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c) * v[c]).sum())
            .collect()
    }

    /// Side-by-side concatenation `[self | o]`.
    pub fn hcat(&self, o: &QMatrix) -> QMatrix {
        assert_eq!(self.rows, o.rows, "row counts must agree");
        let mut e = Vec::with_capacity(self.rows * (self.cols + o.cols));
        for r in 0..self.rows {
            e.extend((0..self.cols).map(|c| self.get(r, c)));
            e.extend((0..o.cols).map(|c| o.get(r, c)));
        }
        QMatrix::new(self.rows, self.cols + o.cols, e)
    }

    /// Exact rank by fraction-free row reduction.
    pub fn rank(&self) -> usize {
        let mut m = self.entries.clone();
        let (rows, cols) = (self.rows, self.cols);
        let mut rank = 0;
        for c in 0..cols {
            let Some(p) = (rank..rows).find(|&r| !m[r * cols + c].is_zero()) else {
                continue;
            };
            for k in 0..cols {
                m.swap(p * cols + k, rank * cols + k);
            }
            let piv = m[rank * cols + c];
            for r in (rank + 1)..rows {
                let f = m[r * cols + c] / piv;
                if !f.is_zero() {
                    for k in 0..cols {
                        let v = m[rank * cols + k];
                        m[r * cols + k] -= f * v;
                    }
                }
            }
            rank += 1;
        }
        rank
    }
}
