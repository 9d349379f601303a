//! Central finite differences, the independent oracle for every backward
//! implementation in this crate. Only calls the forward closure; never
//! touches the tape's own backward path.

use super::Tensor;
use crate::scalar::Scalar;

/// Central-difference gradient (f(x+h·e)−f(x−h·e))/(2h) per coordinate.
/// `f` must be a pure function of its input. Use 64-bit tensors: finite
/// differences are unreliable at 32-bit.
pub fn finite_diff_grad<T, F>(f: F, x: &Tensor<T>, h: f64) -> Tensor<T>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> T,
{
    assert!(h > 0.0, "step must be positive");
    let step = T::from_f64(h);
    let two_h = T::from_f64(2.0 * h);
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + step;
        let plus = f(&probe);
        probe.values_mut()[i] = orig - step;
        let minus = f(&probe);
        probe.values_mut()[i] = orig;
        grad.values_mut()[i] = (plus - minus) / two_h;
    }
    grad
}

/// Central difference of a single coordinate; avoids the full sweep when
/// only sampled coordinates of a large tensor are checked.
pub fn finite_diff_partial<T, F>(f: F, x: &Tensor<T>, coord: usize, h: f64) -> T
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> T,
{
    assert!(h > 0.0, "step must be positive");
    let step = T::from_f64(h);
    let mut probe = x.clone();
    let orig = probe.values()[coord];
    probe.values_mut()[coord] = orig + step;
    let plus = f(&probe);
    probe.values_mut()[coord] = orig - step;
    let minus = f(&probe);
    (plus - minus) / T::from_f64(2.0 * h)
}

/// |analytic − numeric| / max(1, |analytic|).
pub fn rel_error<T: Scalar>(analytic: T, numeric: T) -> f64 {
    let a = analytic.to_f64();
    let n = numeric.to_f64();
    (a - n).abs() / a.abs().max(1.0)
}

/// Worst relative error over all coordinates.
pub fn max_rel_error<T: Scalar>(analytic: &[T], numeric: &[T]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::<f64>::from_fn(&[4], |i| i as f64 - 1.5);
        let g = finite_diff_grad(|t| t.values().iter().sum(), &x, 1e-5);
        for &v in g.values() {
            assert!((v - 1.0).abs() < 1e-8, "got {v}");
        }
    }

    #[test]
    fn sum_of_squares_gradient_is_2x() {
        let x = Tensor::<f64>::new(vec![1], vec![3.0]).unwrap();
        let g = finite_diff_grad(|t| t.values().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!((g.values()[0] - 6.0).abs() < 1e-6, "got {}", g.values()[0]);
    }
}
