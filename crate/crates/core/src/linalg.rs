//! Dense kernels for the small per-grid-point matrices (at most 9x9).

/// In-place Cholesky factorization of a row-major `d x d` symmetric matrix.
///
/// Returns the smallest pivot on success, or `Err(pivot)` with the first pivot
/// that fell below `min_pivot`.
pub(crate) fn cholesky(a: &mut [f64], d: usize, min_pivot: f64) -> Result<f64, f64> {
    let mut smallest = f64::INFINITY;
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > min_pivot) {
            return Err(diag);
        }
        smallest = smallest.min(diag);
        let ljj = diag.sqrt();
        a[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / ljj;
        }
        for i in 0..j {
            a[i * d + j] = 0.0;
        }
    }
    Ok(smallest)
}

/// Inverse of a row-major `d x d` matrix by Gauss-Jordan elimination with
/// partial pivoting. Returns `None` if a pivot is below `eps` relative to the
/// largest entry.
pub(crate) fn invert(a: &[f64], d: usize, eps: f64) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let mut m = a.to_vec();
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        inv[i * d + i] = 1.0;
    }
    for col in 0..d {
        let mut piv = col;
        for r in (col + 1)..d {
            if m[r * d + col].abs() > m[piv * d + col].abs() {
                piv = r;
            }
        }
        if m[piv * d + col].abs() <= eps * scale {
            return None;
        }
        if piv != col {
            for c in 0..d {
                m.swap(piv * d + c, col * d + c);
                inv.swap(piv * d + c, col * d + c);
            }
        }
        let p = m[col * d + col];
        for c in 0..d {
            m[col * d + c] /= p;
            inv[col * d + c] /= p;
        }
        for r in 0..d {
            if r == col {
                continue;
            }
            let f = m[r * d + col];
            if f != 0.0 {
                for c in 0..d {
                    m[r * d + c] -= f * m[col * d + c];
                    inv[r * d + c] -= f * inv[col * d + c];
                }
            }
        }
    }
    Some(inv)
}

/// Inverse of a symmetric positive definite matrix from its Cholesky factor.
pub(crate) fn spd_inverse_from_cholesky(l: &[f64], d: usize) -> Vec<f64> {
    // Invert the lower-triangular factor, then form L^{-T} L^{-1}.
    let mut linv = vec![0.0; d * d];
    for i in 0..d {
        linv[i * d + i] = 1.0 / l[i * d + i];
        for j in 0..i {
            let mut v = 0.0;
            for k in j..i {
                v -= l[i * d + k] * linv[k * d + j];
            }
            linv[i * d + j] = v / l[i * d + i];
        }
    }
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut v = 0.0;
            for k in i..d {
                v += linv[k * d + i] * linv[k * d + j];
            }
            out[i * d + j] = v;
            out[j * d + i] = v;
        }
    }
    out
}
