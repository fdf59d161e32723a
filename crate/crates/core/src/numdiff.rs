//! Central finite-difference Jacobians, used to validate every analytic
//! gradient in the crate.

use nalgebra::{SMatrix, SVector};

use crate::num::Scalar;

/// Central-difference Jacobian of `f` at `x0` with the given step.
pub fn jacobian<T: Scalar, const M: usize, const N: usize>(
    f: impl Fn(&SVector<T, N>) -> SVector<T, M>,
    x0: &SVector<T, N>,
    step: T,
) -> SMatrix<T, M, N> {
    let mut jac = SMatrix::<T, M, N>::zeros();
    for j in 0..N {
        let mut hi = *x0;
        let mut lo = *x0;
        hi[j] += step;
        lo[j] -= step;
        let df = (f(&hi) - f(&lo)) / (step + step);
        jac.set_column(j, &df);
    }
    jac
}

/// Largest entry-wise relative error between two matrices.
///
/// Each entry is compared against `max(|a|, |b|, floor)` where the floor is
/// a fraction of the largest magnitude in either matrix, so near-zero entries
/// are judged on the scale of the matrix instead of blowing up the ratio.
pub fn max_relative_error<T: Scalar, const M: usize, const N: usize>(
    a: &SMatrix<T, M, N>,
    b: &SMatrix<T, M, N>,
) -> T {
    let mut scale = T::zero();
    for i in 0..M {
        for j in 0..N {
            scale = scale.max(a[(i, j)].abs()).max(b[(i, j)].abs());
        }
    }
    let floor = (scale * T::of(1e-3)).max(T::of(1e-12));
    let mut worst = T::zero();
    for i in 0..M {
        for j in 0..N {
            let denom = a[(i, j)].abs().max(b[(i, j)].abs()).max(floor);
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};

    #[test]
    fn linear_map_recovered_exactly() {
        let a = Matrix2::new(1.0, 2.0, -0.5, 3.0);
        let jac = jacobian(|x: &Vector2<f64>| a * x, &Vector2::new(0.3, -0.7), 1e-6);
        assert!(max_relative_error(&jac, &a) < 1e-9);
    }

    #[test]
    fn nonlinear_map_matches_analytic() {
        let f = |x: &Vector2<f64>| Vector2::new(x[0].sin() * x[1], x[0] * x[0]);
        let x0 = Vector2::new(0.9, 1.7);
        let jac = jacobian(f, &x0, 1e-6);
        let analytic = Matrix2::new(x0[0].cos() * x0[1], x0[0].sin(), 2.0 * x0[0], 0.0);
        assert!(max_relative_error(&jac, &analytic) < 1e-7);
    }
}
