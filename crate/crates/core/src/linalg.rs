//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Singular values in descending order and the numeric rank, counting
/// `sigma_i > tol_rel * sigma_max`. An all-zero matrix has rank 0.
pub fn numeric_rank(m: &DMatrix<f64>, tol_rel: f64) -> (Vec<f64>, usize) {
    if m.nrows() == 0 || m.ncols() == 0 {
        return (Vec::new(), 0);
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let max = sv.first().copied().unwrap_or(0.0);
    let rank = if max > 0.0 {
        sv.iter().filter(|s| **s > tol_rel * max).count()
    } else {
        0
    };
    (sv, rank)
}

/// Ratio of extreme singular values; infinite for singular matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Minimum-norm solution of the (possibly underdetermined) system `J dx = r`.
pub fn min_norm_solve(j: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = j.clone().svd(true, true);
    let max = svd.singular_values.max();
    if max == 0.0 {
        return None;
    }
    svd.solve(r, max * 1e-13).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_simple_matrices() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(numeric_rank(&m, 1e-9).1, 1);
        let z = DMatrix::<f64>::zeros(1, 3);
        assert_eq!(numeric_rank(&z, 1e-9).1, 0);
        let dup = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(numeric_rank(&dup, 1e-9).1, 1);
    }

    #[test]
    fn min_norm_step() {
        let j = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let r = DVector::from_vec(vec![25.0]);
        let dx = min_norm_solve(&j, &r).unwrap();
        assert!((dx[0] - 3.0).abs() < 1e-12 && (dx[1] - 4.0).abs() < 1e-12);
    }
}
