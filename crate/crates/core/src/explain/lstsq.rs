use nalgebra::{DMatrix, DVector};

pub(crate) const RIDGE_LAMBDA: f64 = 1e-6;
const RANK_TOL: f64 = 1e-10;

pub(crate) struct Fit {
    pub coef: Vec<f64>,
    /// The design was rank-deficient and the ridge solution was used.
    pub ridge: bool,
}

/// Minimizes `Σ wᵢ (yᵢ − xᵢ·β)²`; falls back to ridge regression with
/// `RIDGE_LAMBDA` when the weighted design is rank-deficient.
pub(crate) fn weighted_lstsq(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Fit {
    let (n, p) = x.shape();
    debug_assert_eq!(n, y.len());
    debug_assert_eq!(n, w.len());
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let a = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * sw[i]);
    let b = DVector::from_iterator(n, y.iter().zip(&sw).map(|(v, s)| v * s));

    if n >= p && p > 0 {
        let svd = a.clone().svd(true, true);
        let max = svd.singular_values.max();
        let min = svd.singular_values.min();
        if max > 0.0 && min > RANK_TOL * max {
            let coef = svd.solve(&b, 0.0).expect("U and Vᵀ were computed");
            return Fit {
                coef: coef.iter().copied().collect(),
                ridge: false,
            };
        }
    }
    let mut normal = a.transpose() * &a;
    for i in 0..p {
        normal[(i, i)] += RIDGE_LAMBDA;
    }
    let rhs = a.transpose() * b;
    let coef = normal
        .cholesky()
        .expect("ridge system is positive definite")
        .solve(&rhs);
    Fit {
        coef: coef.iter().copied().collect(),
        ridge: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let fit = weighted_lstsq(&x, &[1.0, 3.0, 5.0], &[1.0, 2.0, 0.5]);
        assert!(!fit.ridge);
        assert!((fit.coef[0] - 1.0).abs() < 1e-12 && (fit.coef[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weights_shift_the_compromise() {
        // Two inconsistent observations of a constant; weights pick the mean.
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let fit = weighted_lstsq(&x, &[0.0, 1.0], &[1.0, 3.0]);
        assert!((fit.coef[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_uses_ridge() {
        // Duplicate columns.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let fit = weighted_lstsq(&x, &[2.0, 4.0, 6.0], &[1.0; 3]);
        assert!(fit.ridge);
        assert!((fit.coef[0] - 1.0).abs() < 1e-6 && (fit.coef[1] - 1.0).abs() < 1e-6);
        // Fewer rows than unknowns.
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(weighted_lstsq(&x, &[1.0], &[1.0]).ridge);
    }
}
