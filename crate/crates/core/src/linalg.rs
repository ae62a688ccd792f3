use nalgebra::DMatrix;

/// Condition number above which an information matrix counts as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Cholesky-based log-determinant and inverse of a symmetric matrix.
pub(crate) struct SpdFactor {
    pub condition: f64,
    pub log_det: Option<f64>,
    pub inverse: Option<DMatrix<f64>>,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let eig = m.clone().symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        let condition = if min > 0.0 && max.is_finite() { max / min } else { f64::INFINITY };
        if condition > SINGULAR_CONDITION {
            return Self { condition, log_det: None, inverse: None };
        }
        match m.clone().cholesky() {
            Some(chol) => {
                let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let inverse = chol.inverse();
                Self { condition, log_det: Some(log_det), inverse: Some(inverse) }
            }
            None => Self { condition: f64::INFINITY, log_det: None, inverse: None },
        }
    }
}

/// `f(x)^T A f(x)` for `f(x) = (1, x)` with `x` given by a bit mask.
pub(crate) fn binary_quad_form(a: &DMatrix<f64>, mask: u64) -> f64 {
    let mut idx = [0usize; 65];
    let mut n = 1;
    let mut bits = mask;
    while bits != 0 {
        idx[n] = bits.trailing_zeros() as usize + 1;
        n += 1;
        bits &= bits - 1;
    }
    let idx = &idx[..n];
    let mut total = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        total += a[(i, i)];
        for &j in &idx[r + 1..] {
            total += 2.0 * a[(i, j)];
        }
    }
    total
}
