//! Eigenvalues of symmetric tridiagonal matrices by the implicit QL method.

/// All eigenvalues of the tridiagonal matrix with diagonal `diag` and
/// off-diagonal `off` (`off.len() + 1 == diag.len()`), in ascending order.
///
/// # Panics
/// If the lengths do not fit or the iteration fails to converge.
pub fn eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert!(n >= 1 && off.len() + 1 == n, "{} diagonal and {} off-diagonal entries", n, off.len());
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter <= 60, "QL iteration did not converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // underflow: split the matrix here and start over
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(f64::total_cmp);
    d
}

/// Smallest eigenvalue of the tridiagonal matrix built from Lanczos
/// coefficients: `alpha` on the diagonal, `beta` beside it.
pub fn min_eigenvalue(alpha: &[f64], beta: &[f64]) -> f64 {
    eigenvalues(alpha, beta)[0]
}
