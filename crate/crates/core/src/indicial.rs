//! Indicial families of the linearized Einstein operator around de Sitter in
//! the four-slot splitting `(ds^2/s^2, mixed, trace, trace-free)`, built as
//! exact polynomial matrices in `lambda`, and the per-order linear solves.
//!
//! The Ricci family is stored doubled, as `2 I(DRic - Lambda, lambda)`, and
//! likewise `2 I(delta G, lambda)`. The solves divide by the undoubled
//! operator.

use serde::Serialize;

use crate::error::{FgError, Result};
use crate::frame::Block4;
use crate::grid::SpatialField;
use crate::poly::{q, q_to_f64, qf, LambdaMatrix, Poly, Q};

fn p(c: &[i128]) -> Poly {
    Poly::from_ints(c)
}

fn ni(n: usize) -> i128 {
    n as i128
}

fn mat(rows: usize, cols: usize, e: Vec<Poly>) -> LambdaMatrix {
    LambdaMatrix::new(rows, cols, e)
}

/// `2 I(DRic - Lambda, lambda)`.
pub fn ricci_indicial(n: usize) -> LambdaMatrix {
    let n = ni(n);
    let z = Poly::zero;
    mat(
        4,
        4,
        vec![
            p(&[-2 * n, n]),
            z(),
            p(&[0, 2 * n, -n]),
            z(),
            z(),
            z(),
            z(),
            z(),
            p(&[2 * n, -1]),
            z(),
            p(&[0, -2 * n, 1]),
            z(),
            z(),
            z(),
            z(),
            p(&[0, -n, 1]),
        ],
    )
}

/// `I(delta^*, lambda)`, a map from the two gauge slots to the four slots.
pub fn deltastar_indicial() -> LambdaMatrix {
    let z = Poly::zero;
    mat(
        4,
        2,
        vec![
            p(&[0, 1]),
            z(),
            z(),
            Poly::new(vec![qf(1, 2), qf(1, 2)]),
            p(&[1]),
            z(),
            z(),
            z(),
        ],
    )
}

/// `2 I(delta G, lambda)`.
pub fn delta_g_indicial(n: usize) -> LambdaMatrix {
    let n = ni(n);
    let z = Poly::zero;
    mat(
        2,
        4,
        vec![
            p(&[-2 * n, 1]),
            z(),
            p(&[-2 * n, n]),
            z(),
            z(),
            p(&[-2 * (n + 1), 2]),
            z(),
            z(),
        ],
    )
}

/// `2 d/dlambda I(DRic - Lambda, lambda)`, the formal derivative of
/// [`ricci_indicial`].
pub fn ricci_indicial_derivative(n: usize) -> LambdaMatrix {
    ricci_indicial(n).derivative()
}

/// Indicial family of the gauged linearized Einstein operator.
pub fn gauged_indicial(n: usize) -> LambdaMatrix {
    let nn = ni(n);
    let z = Poly::zero;
    let extra = mat(
        4,
        4,
        vec![
            p(&[2 * (nn + 2), -4]),
            z(),
            p(&[-4 * nn, 2 * nn]),
            z(),
            z(),
            p(&[3 * (nn + 1), -4]),
            z(),
            z(),
            p(&[-2]),
            z(),
            p(&[2 * nn]),
            z(),
            z(),
            z(),
            z(),
            z(),
        ],
    );
    LambdaMatrix::scalar(4, p(&[0, -nn, 1])).plus(&extra)
}

/// Indicial family of the wave operator.
pub fn wave_indicial(n: usize) -> LambdaMatrix {
    let nn = ni(n);
    let z = Poly::zero;
    let lower = mat(
        4,
        4,
        vec![
            p(&[-2 * nn]),
            z(),
            p(&[-2 * nn]),
            z(),
            z(),
            p(&[-(nn + 3)]),
            z(),
            z(),
            p(&[-2]),
            z(),
            p(&[-2]),
            z(),
            z(),
            z(),
            z(),
            p(&[-2]),
        ],
    );
    LambdaMatrix::scalar(4, p(&[0, -nn, 1])).plus(&lower)
}

/// Trace reversal `G`.
pub fn trace_reversal_indicial(n: usize) -> LambdaMatrix {
    let half = |a: i128| Poly::constant(qf(a, 2));
    let z = Poly::zero;
    let nn = ni(n);
    mat(
        4,
        4,
        vec![
            half(1),
            z(),
            half(nn),
            z(),
            z(),
            p(&[1]),
            z(),
            z(),
            half(1),
            z(),
            half(2 - nn),
            z(),
            z(),
            z(),
            z(),
            p(&[1]),
        ],
    )
}

/// Curvature term of the linearized Ricci operator.
pub fn curvature_indicial(n: usize) -> LambdaMatrix {
    let nn = ni(n);
    let z = Poly::zero;
    mat(
        4,
        4,
        vec![
            p(&[nn]),
            z(),
            p(&[nn]),
            z(),
            z(),
            p(&[nn + 1]),
            z(),
            z(),
            p(&[1]),
            z(),
            p(&[1]),
            z(),
            z(),
            z(),
            z(),
            p(&[nn + 1]),
        ],
    )
}

/// Divergence `delta`, four slots to two.
pub fn divergence_indicial(n: usize) -> LambdaMatrix {
    let nn = ni(n);
    let z = Poly::zero;
    mat(
        2,
        4,
        vec![
            p(&[-nn, 1]),
            z(),
            p(&[-nn]),
            z(),
            z(),
            p(&[-(nn + 1), 1]),
            z(),
            z(),
        ],
    )
}

/// Constraint-damping term `E`.
pub fn damping_e_indicial(n: usize) -> LambdaMatrix {
    let nn = ni(n);
    let z = Poly::zero;
    mat(2, 4, vec![p(&[1]), z(), p(&[-2 * nn]), z(), z(), z(), z(), z()])
}

/// Constraint-damping term `E~`.
pub fn damping_etilde_indicial() -> LambdaMatrix {
    let z = Poly::zero;
    mat(4, 2, vec![p(&[-2]), z(), z(), p(&[-2]), z(), z(), z(), z()])
}

/// Modified symmetric gradient `delta~^*`.
pub fn modified_deltastar_indicial() -> LambdaMatrix {
    let z = Poly::zero;
    mat(
        4,
        2,
        vec![
            p(&[-2, 1]),
            z(),
            z(),
            Poly::new(vec![qf(-3, 2), qf(1, 2)]),
            p(&[1]),
            z(),
            z(),
            z(),
        ],
    )
}

/// `Box - 2 Lambda + 2 E~ delta G + 2 R - 2 delta~^* E` from the building blocks.
pub fn gauged_indicial_assembled(n: usize) -> LambdaMatrix {
    let delta_g = divergence_indicial(n).matmul(&trace_reversal_indicial(n));
    wave_indicial(n)
        .minus(&LambdaMatrix::scalar(4, Poly::int(2 * ni(n))))
        .plus(&damping_etilde_indicial().matmul(&delta_g).scale(q(2)))
        .plus(&curvature_indicial(n).scale(q(2)))
        .minus(&modified_deltastar_indicial().matmul(&damping_e_indicial(n)).scale(q(2)))
}

/// `Box - 2 delta^* delta G + 2 R - 2 Lambda` from the building blocks.
pub fn ricci_indicial_assembled(n: usize) -> LambdaMatrix {
    let delta_g = divergence_indicial(n).matmul(&trace_reversal_indicial(n));
    wave_indicial(n)
        .minus(&deltastar_indicial().matmul(&delta_g).scale(q(2)))
        .plus(&curvature_indicial(n).scale(q(2)))
        .minus(&LambdaMatrix::scalar(4, Poly::int(2 * ni(n))))
}

/// Indicial family of the gauge propagation operator.
pub fn gauge_propagation_indicial(n: usize) -> LambdaMatrix {
    let nn = ni(n);
    let a = (&Poly::linear_root(q(2)) * &Poly::linear_root(q(nn))).scale(qf(-1, 2));
    let b = (&Poly::linear_root(q(-1)) * &Poly::linear_root(q(nn + 1))).scale(qf(-1, 2));
    mat(2, 2, vec![a, Poly::zero(), Poly::zero(), b])
}

/// `(-delta G + E) delta^*` from the building blocks.
pub fn gauge_propagation_assembled(n: usize) -> LambdaMatrix {
    let delta_g = divergence_indicial(n).matmul(&trace_reversal_indicial(n));
    damping_e_indicial(n)
        .minus(&delta_g)
        .matmul(&deltastar_indicial())
}

/// `lambda (lambda-2)^2 (lambda-3) (lambda-n)^3 (lambda-(n+1))`.
pub fn expected_gauged_determinant(n: usize) -> Poly {
    let nn = ni(n);
    Poly::from_roots(&[q(0), q(2), q(2), q(3), q(nn), q(nn), q(nn), q(nn + 1)])
}

/// Roots of `det I_{g0}(lambda)` with multiplicity, ascending.
pub fn indicial_roots(n: usize) -> Vec<Q> {
    gauged_indicial(n).det().rational_roots().0
}

/// Roots of the gauge propagation family with multiplicity, ascending.
pub fn gauge_propagation_roots(n: usize) -> Vec<Q> {
    gauge_propagation_indicial(n).det().rational_roots().0
}

/// Zeros of the denominators used by [`solve_order`]: the trace slot solved
/// from row 1 or row 3 and the trace-free slot from row 4.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RicciFactorization {
    pub row1_trace: Vec<String>,
    pub row3_trace: Vec<String>,
    pub row4_tracefree: Vec<String>,
}

pub fn ricci_factorization(n: usize) -> RicciFactorization {
    let m = ricci_indicial(n);
    let roots = |r: usize, c: usize| {
        m.get(r, c)
            .rational_roots()
            .0
            .into_iter()
            .map(|v| v.to_string())
            .collect()
    };
    RicciFactorization {
        row1_trace: roots(0, 2),
        row3_trace: roots(2, 2),
        row4_tracefree: roots(3, 3),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Absolute tolerance for all compatibility defects.
    pub compat_tol: f64,
    /// Log level being solved, carried into errors.
    pub log_level: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CompatibilityDefects {
    /// Sup-norm of the mixed slot of the forcing.
    pub f2_norm: f64,
    /// Sup-norm of `(lambda - 2n) f1 + n (lambda - 2) f3`.
    pub kernel_defect: f64,
    /// Residual of the row not used to solve for the trace slot.
    pub row_consistency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderSolveResult {
    pub h3: SpatialField,
    pub h4: SpatialField,
    /// Coefficient of `s^lambda log(s)` in the trace-free slot (only for
    /// `lambda = n` with `n` even).
    pub log_h4: Option<SpatialField>,
    pub defects: CompatibilityDefects,
}

fn order_label(lambda: Q) -> usize {
    lambda.to_integer().max(0) as usize
}

/// Solves `I(DRic - Lambda, lambda) h = f` for `h = (0, 0, h3, h4)`.
pub fn solve_order(
    lambda: Q,
    f: &Block4,
    n: usize,
    free_h4: Option<&SpatialField>,
    opts: SolveOptions,
) -> Result<OrderSolveResult> {
    if lambda <= q(0) {
        return Err(FgError::InadmissibleOrder(lambda.to_string()));
    }
    let order = order_label(lambda);
    let fail = |what: &'static str, defect: f64| FgError::Solvability {
        order,
        log_level: opts.log_level,
        what,
        defect,
        tol: opts.compat_tol,
    };
    let l = q_to_f64(lambda);
    let nf = n as f64;
    let mut defects = CompatibilityDefects {
        f2_norm: f.h2.sup_norm(),
        ..Default::default()
    };
    let kernel = f.h1.lin_comb(l - 2.0 * nf, &f.h3, nf * (l - 2.0));
    defects.kernel_defect = kernel.sup_norm();
    if defects.f2_norm > opts.compat_tol {
        return Err(fail("mixed slot", defects.f2_norm));
    }
    let at_n = lambda == q(ni(n));
    if at_n && n % 2 == 1 {
        let total = f.norms().into_iter().fold(0.0, f64::max);
        if total > opts.compat_tol {
            return Err(fail("order-n forcing", total));
        }
        let chart = f.h1.chart();
        return Ok(OrderSolveResult {
            h3: SpatialField::zeros(chart, 0),
            h4: free_h4
                .cloned()
                .unwrap_or_else(|| SpatialField::zeros(chart, 2)),
            log_h4: None,
            defects,
        });
    }
    if defects.kernel_defect > opts.compat_tol {
        return Err(fail("kernel compatibility", defects.kernel_defect));
    }

    // Undoubled entries of rows 1 and 3 in the trace column.
    let row1 = -0.5 * nf * l * (l - 2.0);
    let row3 = 0.5 * l * (l - 2.0 * nf);
    let (h3, other) = if row1.abs() >= row3.abs() {
        let h3 = f.h1.scale(1.0 / row1);
        let other = h3.scale(row3).lin_comb(1.0, &f.h3, -1.0);
        (h3, other)
    } else {
        let h3 = f.h3.scale(1.0 / row3);
        let other = h3.scale(row1).lin_comb(1.0, &f.h1, -1.0);
        (h3, other)
    };
    defects.row_consistency = other.sup_norm();
    if defects.row_consistency > opts.compat_tol {
        return Err(fail("row consistency", defects.row_consistency));
    }

    let (h4, log_h4) = if at_n {
        let chart = f.h4.chart();
        let h4 = free_h4
            .cloned()
            .unwrap_or_else(|| SpatialField::zeros(chart, 2));
        (h4, Some(f.h4.scale(2.0 / nf)))
    } else {
        let row4 = 0.5 * l * (l - nf);
        (f.h4.scale(1.0 / row4), None)
    };
    Ok(OrderSolveResult {
        h3,
        h4,
        log_h4,
        defects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Chart, SpatialMetric};
    use crate::poly::QMatrix;
    use proptest::prelude::*;

    fn eval_rows(m: &LambdaMatrix, x: Q) -> QMatrix {
        m.eval(x)
    }

    #[test]
    fn ricci_family_examples() {
        for n in 3..=8 {
            let m = ricci_indicial(n).eval(q(n as i128));
            for k in 0..4 {
                assert_eq!(m.get(3, k), q(0));
                assert_eq!(m.get(k, 3), q(0));
            }
        }
        let m = ricci_indicial(3).eval(q(0));
        let row = |r: usize| (0..4).map(|c| m.get(r, c)).collect::<Vec<_>>();
        assert_eq!(row(0), vec![q(-6), q(0), q(0), q(0)]);
        assert_eq!(row(2), vec![q(6), q(0), q(0), q(0)]);
        assert_eq!(row(3), vec![q(0); 4]);
    }

    #[test]
    fn composition_identities() {
        for n in 3..=8 {
            assert!(ricci_indicial(n).matmul(&deltastar_indicial()).is_zero());
            assert!(delta_g_indicial(n).matmul(&ricci_indicial(n)).is_zero());
        }
    }

    #[test]
    fn derivative_family() {
        for n in 3..=8 {
            let d = ricci_indicial_derivative(n);
            let nn = n as i128;
            assert_eq!(*d.get(0, 0), p(&[nn]));
            assert_eq!(*d.get(0, 2), p(&[2 * nn, -2 * nn]));
            assert_eq!(*d.get(2, 0), p(&[-1]));
            assert_eq!(*d.get(2, 2), p(&[-2 * nn, 2]));
            assert_eq!(*d.get(3, 3), p(&[-nn, 2]));
            // Undoubled, the trace-free column at lambda = n is (0, 0, 0, n/2).
            let col = d.scale(qf(1, 2)).eval(q(nn)).mul_vec(&[q(0), q(0), q(0), q(1)]);
            assert_eq!(col, vec![q(0), q(0), q(0), qf(nn, 2)]);
            assert!(d.derivative().derivative().is_zero());
            assert_eq!(d.derivative().max_degree(), Some(0));
        }
    }

    #[test]
    fn assembly_identities() {
        for n in 3..=8 {
            assert_eq!(gauged_indicial_assembled(n), gauged_indicial(n));
            assert_eq!(ricci_indicial_assembled(n), ricci_indicial(n));
            assert_eq!(gauge_propagation_assembled(n), gauge_propagation_indicial(n));
            let two_delta_g = divergence_indicial(n)
                .matmul(&trace_reversal_indicial(n))
                .scale(q(2));
            assert_eq!(two_delta_g, delta_g_indicial(n));
        }
    }

    #[test]
    fn determinant_and_roots() {
        for n in 3..=8 {
            assert_eq!(gauged_indicial(n).det(), expected_gauged_determinant(n));
            assert!(indicial_roots(n).iter().all(|r| *r >= q(0)));
        }
        let r3: Vec<Q> = [0, 2, 2, 3, 3, 3, 3, 4].iter().map(|&v| q(v)).collect();
        let r4: Vec<Q> = [0, 2, 2, 3, 4, 4, 4, 5].iter().map(|&v| q(v)).collect();
        assert_eq!(indicial_roots(3), r3);
        assert_eq!(indicial_roots(4), r4);
        // The kernel at lambda = 0 is the trace-free slot.
        let m0 = gauged_indicial(5).eval(q(0));
        assert_eq!(m0.rank(), 3);
        assert_eq!(m0.mul_vec(&[q(0), q(0), q(0), q(1)]), vec![q(0); 4]);
    }

    #[test]
    fn gauge_propagation_family() {
        for n in 3..=8 {
            let nn = n as i128;
            let roots = gauge_propagation_roots(n);
            assert_eq!(roots, vec![q(-1), q(2), q(nn), q(nn + 1)]);
            let at0 = gauge_propagation_indicial(n).eval(q(0));
            assert_eq!(at0.get(0, 0), q(-nn));
            assert_eq!(at0.get(1, 1), qf(nn + 1, 2));
            assert_eq!(at0.get(0, 1), q(0));
            assert_eq!(gauge_propagation_indicial(n).det().degree(), Some(4));
        }
    }

    #[test]
    fn factorization_table() {
        let t = ricci_factorization(4);
        assert_eq!(t.row1_trace, vec!["0", "2"]);
        assert_eq!(t.row3_trace, vec!["0", "8"]);
        assert_eq!(t.row4_tracefree, vec!["0", "4"]);
    }

    fn chart() -> std::sync::Arc<Chart> {
        Chart::periodic(3, vec![6, 5, 1]).unwrap()
    }

    fn tf_field(c: &std::sync::Arc<Chart>) -> SpatialField {
        let flat = SpatialMetric::flat(c);
        let t = SpatialField::sym2_from_fn(c, |i, j, x| ((i + 2 * j) as f64 + x[0]).cos() + x[1].sin());
        crate::grid::tracefree_part(&flat, &t).unwrap()
    }

    fn opts() -> SolveOptions {
        SolveOptions {
            compat_tol: 1e-9,
            log_level: 0,
        }
    }

    #[test]
    fn solve_examples() {
        let c = chart();
        let zero = Block4::zeros(&c);
        let r = solve_order(q(5), &zero, 3, None, opts()).unwrap();
        assert_eq!(r.h3.sup_norm() + r.h4.sup_norm(), 0.0);
        assert!(r.log_h4.is_none());

        let w = tf_field(&c);
        let f = Block4 {
            h4: w.clone(),
            ..Block4::zeros(&c)
        };
        // Undoubled row 4 at n = 3, lambda = 4 is 4 * 1 / 2.
        let r = solve_order(q(4), &f, 3, None, opts()).unwrap();
        assert!(r.h4.max_abs_diff(&w.scale(0.5)) < 1e-15);

        let r = solve_order(q(4), &f, 4, None, opts()).unwrap();
        assert!(r.log_h4.unwrap().max_abs_diff(&w.scale(0.5)) < 1e-15);
        assert_eq!(r.h4.sup_norm(), 0.0);

        let r = solve_order(q(4), &f, 4, Some(&w), opts()).unwrap();
        assert_eq!(r.h4, w);

        assert!(matches!(
            solve_order(q(3), &f, 3, None, opts()),
            Err(FgError::Solvability { what: "order-n forcing", .. })
        ));
        assert!(matches!(
            solve_order(q(0), &f, 3, None, opts()),
            Err(FgError::InadmissibleOrder(_))
        ));
    }

    #[test]
    fn solve_rejects_incompatible_forcing() {
        let c = chart();
        let f = Block4 {
            h1: SpatialField::constant_scalar(&c, 1.0),
            ..Block4::zeros(&c)
        };
        assert!(matches!(
            solve_order(q(5), &f, 3, None, opts()),
            Err(FgError::Solvability { what: "kernel compatibility", order: 5, .. })
        ));
        let f = Block4 {
            h2: SpatialField::from_fn(&c, 1, |_, x| 1e-3 * x[0].cos()),
            ..Block4::zeros(&c)
        };
        let e = solve_order(q(4), &f, 3, None, opts()).unwrap_err();
        assert_eq!(e.violation().unwrap().0, 4);
        assert!((e.violation().unwrap().1 - 1e-3).abs() < 1e-4);
    }

    /// Applies the undoubled family at `lambda` to `(0, 0, h3, h4)`.
    fn apply(n: usize, lambda: Q, h3: &SpatialField, h4: &SpatialField) -> Block4 {
        let m = ricci_indicial(n).scale(qf(1, 2)).eval(lambda);
        let c = h3.chart();
        Block4 {
            h1: h3.scale(q_to_f64(m.get(0, 2))),
            h2: SpatialField::zeros(c, 1),
            h3: h3.scale(q_to_f64(m.get(2, 2))),
            h4: h4.scale(q_to_f64(m.get(3, 3))),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn solution_reproduces_compatible_forcing(n in 3usize..9, lam in 1i128..20, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            prop_assume!(lam != n as i128);
            let c = chart();
            let nf = n as f64;
            let l = lam as f64;
            // Compatible (f1, f3) lie in the range: f = I (0, 0, u, .)
            let u = SpatialField::scalar_from_fn(&c, |x| a * x[0].cos() + b);
            let w = tf_field(&c).scale(a);
            let f = apply(n, q(lam), &u, &w);
            let r = solve_order(q(lam), &f, n, None, opts()).unwrap();
            let back = apply(n, q(lam), &r.h3, &r.h4);
            let scale = 1.0 + nf * l * l;
            prop_assert!(back.h1.max_abs_diff(&f.h1) < 1e-11 * scale);
            prop_assert!(back.h3.max_abs_diff(&f.h3) < 1e-11 * scale);
            prop_assert!(back.h4.max_abs_diff(&f.h4) < 1e-11 * scale);
            prop_assert!(r.defects.kernel_defect < 1e-11 * scale);
        }

        #[test]
        fn kernel_and_range_characterizations(n in 3usize..9, num in 1i128..400, den in 1i128..37) {
            let lam = qf(num, den);
            let nn = n as i128;
            let m = eval_rows(&ricci_indicial(n), lam);
            let ds = eval_rows(&deltastar_indicial(), lam);
            let dg = eval_rows(&delta_g_indicial(n), lam);
            if lam != q(nn) {
                // ker I = ran I(delta^*): rank 2 on both sides with I I(delta^*) = 0.
                prop_assert_eq!(m.rank(), 2);
                prop_assert_eq!(ds.rank(), 2);
            } else {
                // A three-dimensional kernel, spanned by ran I(delta^*) and the trace-free slot.
                prop_assert_eq!(m.rank(), 1);
                let e4 = QMatrix::new(4, 1, vec![q(0), q(0), q(0), q(1)]);
                prop_assert_eq!(ds.hcat(&e4).rank(), 3);
                prop_assert_eq!(m.mul_vec(&[q(0), q(0), q(0), q(1)]), vec![q(0); 4]);
            }
            if lam != q(nn + 1) {
                prop_assert_eq!(dg.rank(), 2);
                let v1 = [q(nn) * (lam - q(2)), q(0), q(2 * nn) - lam, q(0)];
                prop_assert_eq!(dg.mul_vec(&v1), vec![q(0), q(0)]);
                prop_assert_eq!(dg.mul_vec(&[q(0), q(0), q(0), q(1)]), vec![q(0), q(0)]);
            }
        }
    }
}
