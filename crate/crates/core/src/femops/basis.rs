//! One-dimensional Lagrange bases on equispaced points of [0, 1], Gauss
//! rules, and tensor-index helpers.

/// Gauss–Legendre rule with `n` points mapped to [0, 1]; weights sum to 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "a quadrature rule needs at least one point");
    let mut pts = vec![0.0; n];
    let mut wts = vec![0.0; n];
    for i in 0..n {
        // Newton on P_n from the Chebyshev guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        pts[n - 1 - i] = 0.5 * (1.0 + x);
        wts[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (pts, wts)
}

/// `(P_n(x), P_n'(x))`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Values of the `p + 1` Lagrange polynomials through `k / p` at `t`.
pub fn lagrange(p: usize, t: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate().take(p + 1) {
        let tk = k as f64 / p as f64;
        let mut v = 1.0;
        for m in 0..=p {
            if m != k {
                let tm = m as f64 / p as f64;
                v *= (t - tm) / (tk - tm);
            }
        }
        *o = v;
    }
    out
}

/// Derivatives of [`lagrange`] with respect to `t`.
pub fn lagrange_deriv(p: usize, t: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate().take(p + 1) {
        let tk = k as f64 / p as f64;
        let mut sum = 0.0;
        for j in 0..=p {
            if j == k {
                continue;
            }
            let tj = j as f64 / p as f64;
            let mut term = 1.0 / (tk - tj);
            for m in 0..=p {
                if m != k && m != j {
                    let tm = m as f64 / p as f64;
                    term *= (t - tm) / (tk - tm);
                }
            }
            sum += term;
        }
        *o = sum;
    }
    out
}

/// Parent-grid weights along one axis for node `i` of the child on side
/// `bit` (0 low, 1 high).
pub fn child_weights(p: usize, bit: u32, i: usize) -> [f64; 3] {
    let t = (bit as usize * p + i) as f64 / (2 * p) as f64;
    lagrange(p, t)
}

/// Number of nodes of one element.
pub fn nodes_per_element(dim: usize, p: usize) -> usize {
    (p + 1).pow(dim as u32)
}

/// Per-axis indices of tensor position `a` (axis 0 fastest).
#[inline]
pub fn split_index(dim: usize, p: usize, mut a: usize) -> [usize; 3] {
    let mut out = [0; 3];
    for o in out.iter_mut().take(dim) {
        *o = a % (p + 1);
        a /= p + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rules_integrate_polynomials() {
        for n in 1..=6 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!((q - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn lagrange_is_cardinal_and_a_partition_of_unity() {
        for p in 1..=2 {
            for k in 0..=p {
                let v = lagrange(p, k as f64 / p as f64);
                for m in 0..=p {
                    assert_eq!(v[m], if m == k { 1.0 } else { 0.0 });
                }
            }
            for t in [0.1, 0.37, 0.9] {
                let s: f64 = lagrange(p, t)[..=p].iter().sum();
                assert!((s - 1.0).abs() < 1e-15);
                let d: f64 = lagrange_deriv(p, t)[..=p].iter().sum();
                assert!(d.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = 1e-6;
        for p in 1..=2 {
            for t in [0.2, 0.5, 0.8] {
                let d = lagrange_deriv(p, t);
                let a = lagrange(p, t + h);
                let b = lagrange(p, t - h);
                for k in 0..=p {
                    assert!((d[k] - (a[k] - b[k]) / (2.0 * h)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn child_weights_reproduce_polynomials() {
        for p in 1..=2usize {
            for bit in 0..2 {
                for i in 0..=p {
                    let w = child_weights(p, bit, i);
                    let t = (bit as usize * p + i) as f64 / (2 * p) as f64;
                    for deg in 0..=p as i32 {
                        let interp: f64 = (0..=p).map(|k| w[k] * (k as f64 / p as f64).powi(deg)).sum();
                        assert!((interp - t.powi(deg)).abs() < 1e-15);
                    }
                }
            }
        }
    }
}
