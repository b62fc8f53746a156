//! Small numeric helpers: adaptive quadrature and a dense linear solve.

/// Adaptive Simpson quadrature of `f` over `[a, b]` to the given absolute
/// tolerance.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Integrate `f` over `[0, inf)` by doubling the horizon until the last
/// slab contributes less than `tol`. Returns `None` when the integral
/// fails to settle within the iteration budget (numerically divergent).
pub fn integrate_to_infinity(f: &impl Fn(f64) -> f64, tol: f64) -> Option<f64> {
    let mut total = 0.0;
    let mut lo = 0.0;
    let mut hi = 1.0;
    for _ in 0..64 {
        let slab = adaptive_simpson(f, lo, hi, tol / 4.0);
        total += slab;
        if !total.is_finite() {
            return None;
        }
        if slab.abs() < tol && hi > 16.0 {
            return Some(total);
        }
        lo = hi;
        hi *= 2.0;
    }
    None
}

/// Solve the dense system `A x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` for singular (or numerically singular)
/// systems.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let pivot_row = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot_row][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomial_exactly() {
        // Simpson is exact for cubics.
        let v = adaptive_simpson(&|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_exponential() {
        let v = adaptive_simpson(&|x| (-x).exp(), 0.0, 10.0, 1e-12);
        assert!((v - (1.0 - (-10.0f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn tail_integration_converges_for_decaying() {
        let v = integrate_to_infinity(&|x| 0.5 * (-x).exp(), 1e-10).unwrap();
        assert!((v - 0.5).abs() < 1e-8);
    }

    #[test]
    fn tail_integration_detects_divergence() {
        assert!(integrate_to_infinity(&|x| 1.0 / (1.0 + x), 1e-10).is_none());
    }

    #[test]
    fn linear_solve_two_by_two() {
        let x = solve_linear(vec![vec![0.8, -0.4], vec![-0.3, 0.9]], vec![1.0, 1.0]).unwrap();
        assert!((x[0] - 13.0 / 6.0).abs() < 1e-12);
        assert!((x[1] - 11.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn linear_solve_singular_returns_none() {
        assert!(solve_linear(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 1.0]).is_none());
    }
}
