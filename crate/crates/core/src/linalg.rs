//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{HhsmmError, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let p = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, p, |i, j| rows[i][j])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Symmetrize and factor `sigma`; on failure add `base * trace/p * I`,
/// escalating by x10 up to three times. Returns the (possibly jittered)
/// matrix and its factor.
pub(crate) fn cholesky_with_jitter(
    sigma: &DMatrix<f64>,
    base: f64,
) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    let sym = (sigma + sigma.transpose()) * 0.5;
    if let Some(c) = Cholesky::new(sym.clone()) {
        if c.l().diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
            return Ok((sym, c));
        }
    }
    let p = sym.nrows().max(1) as f64;
    let tr = sym.trace() / p;
    let scale = if tr.is_finite() && tr > 0.0 { tr } else { 1.0 };
    let mut eps = base * scale;
    for _ in 0..4 {
        let jittered = &sym + DMatrix::identity(sym.nrows(), sym.ncols()) * eps;
        if let Some(c) = Cholesky::new(jittered.clone()) {
            if c.l().diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
                return Ok((jittered, c));
            }
        }
        eps *= 10.0;
    }
    Err(HhsmmError::Numeric(
        "covariance matrix is not positive definite".into(),
    ))
}

/// Precomputed multivariate normal.
#[derive(Debug, Clone)]
pub(crate) struct Gaussian {
    pub mean: DVector<f64>,
    pub chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        let (_, chol) = cholesky_with_jitter(cov, 1e-8)?;
        let logdet: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let p = mean.len() as f64;
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            chol,
            log_norm: -0.5 * (p * LN_2PI + logdet),
        })
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Solve a symmetric positive-definite system after unit-diagonal scaling,
/// failing if the scaled matrix is numerically singular.
pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut scale = DVector::<f64>::zeros(n);
    for i in 0..n {
        if !(a[(i, i)] > 0.0) {
            return None;
        }
        scale[i] = 1.0 / a[(i, i)].sqrt();
    }
    let mut m = (a + a.transpose()) * 0.5;
    for r in 0..n {
        for c in 0..n {
            m[(r, c)] *= scale[r] * scale[c];
        }
    }
    let c = Cholesky::new(m)?;
    let d = c.l().diagonal();
    let (mn, mx) = d
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !(mn > 0.0) || (mn / mx).powi(2) < 1e-14 {
        return None;
    }
    let mut rhs = b.clone();
    for r in 0..n {
        for c in 0..rhs.ncols() {
            rhs[(r, c)] *= scale[r];
        }
    }
    let mut sol = c.solve(&rhs);
    for r in 0..n {
        for c in 0..sol.ncols() {
            sol[(r, c)] *= scale[r];
        }
    }
    Some(sol)
}

/// Standard normal draws via the supplied RNG.
pub(crate) fn standard_normals<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
