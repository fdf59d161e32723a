//! Gauss–Legendre quadrature support for the misalignment integrals.

use crate::num::Scalar;

/// Nodes and weights of the n-point Gauss–Legendre rule on `[-1, 1]`,
/// computed by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre<T: Scalar>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 2);
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    let nf = T::of(n as f64);
    for i in 0..n.div_ceil(2) {
        // Chebyshev-based initial guess
        let mut x = (T::pi() * (T::of(i as f64) + T::of(0.75)) / (nf + T::of(0.5))).cos();
        let mut dp = T::one();
        for _ in 0..100 {
            // Legendre polynomial and derivative by recurrence
            let mut p0 = T::one();
            let mut p1 = x;
            for k in 2..=n {
                let kf = T::of(k as f64);
                let p2 = ((T::of(2.0) * kf - T::one()) * x * p1 - (kf - T::one()) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - T::one());
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < T::of(1e-15) {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = T::of(2.0) / ((T::one() - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integrates `f` over `[a, b] × [c, d]` with an n×m tensor Gauss–Legendre
/// rule.
pub fn tensor_integrate<T: Scalar>(
    f: impl Fn(T, T) -> T,
    (a, b): (T, T),
    (c, d): (T, T),
    n: usize,
    m: usize,
) -> T {
    let (xs, wxs) = gauss_legendre::<T>(n);
    let (ys, wys) = gauss_legendre::<T>(m);
    let half = T::of(0.5);
    let mid_x = (a + b) * half;
    let len_x = (b - a) * half;
    let mid_y = (c + d) * half;
    let len_y = (d - c) * half;
    let mut total = T::zero();
    for (x, wx) in xs.iter().zip(&wxs) {
        let xv = mid_x + len_x * *x;
        let mut inner = T::zero();
        for (y, wy) in ys.iter().zip(&wys) {
            inner += *wy * f(xv, mid_y + len_y * *y);
        }
        total += *wx * inner;
    }
    total * len_x * len_y
}

/// Integrates `f` over `[a, b]` with an n-point Gauss–Legendre rule.
pub fn integrate_1d<T: Scalar>(f: impl Fn(T) -> T, (a, b): (T, T), n: usize) -> T {
    let (xs, ws) = gauss_legendre::<T>(n);
    let half = T::of(0.5);
    let mid = (a + b) * half;
    let len = (b - a) * half;
    let mut total = T::zero();
    for (x, w) in xs.iter().zip(&ws) {
        total += *w * f(mid + len * *x);
    }
    total * len
}
