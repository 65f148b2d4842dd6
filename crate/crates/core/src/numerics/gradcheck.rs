//! Central finite differences, the reference for every hand-written gradient.

use super::Matrix;

/// Estimates `∂f/∂p` for every coordinate of every tensor in `params` with
/// `(f(p + h) - f(p - h)) / 2h`.
pub fn finite_diff_grad<F>(mut f: F, params: &[Matrix], h: f64) -> Vec<Matrix>
where
    F: FnMut(&[Matrix]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for t in 0..params.len() {
        let (rows, cols) = params[t].shape();
        let mut g = Matrix::zeros(rows, cols);
        for i in 0..rows * cols {
            let orig = work[t].as_slice()[i];
            work[t].as_mut_slice()[i] = orig + h;
            let plus = f(&work);
            work[t].as_mut_slice()[i] = orig - h;
            let minus = f(&work);
            work[t].as_mut_slice()[i] = orig;
            g.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// `‖a - b‖ / max(‖a‖ + ‖b‖, floor)`: the norm-wise relative error used to
/// compare an analytic gradient tensor with its numeric estimate.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix, floor: f64) -> f64 {
    let diff = analytic
        .sub(numeric)
        .expect("gradient shapes agree")
        .frobenius_norm();
    diff / (analytic.frobenius_norm() + numeric.frobenius_norm()).max(floor)
}
