//! Small dense-matrix primitives and spectral stability functionals.
//!
//! Dimensions in this crate are tiny (r <= 10), so the symmetric eigensolver
//! is a cyclic Jacobi sweep and general spectra come from a real Schur
//! iteration. All routines are pure.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance shared by rank and semi-definiteness tests.
pub const REL_TOL: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 100;
const SCHUR_MAX_ITER: usize = 10_000;

pub(crate) fn require_square(m: &Mat, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub(crate) fn require_finite(m: &Mat, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `(A + A') / 2`, averaged entrywise so the result is exactly symmetric.
pub fn symmetric_part(a: &Mat) -> Mat {
    let n = a.nrows();
    let mut s = Mat::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = a[(i, i)];
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Exact in-place symmetrization.
pub fn symmetrize(a: &mut Mat) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn frobenius(a: &Mat) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Eigen decomposition of a symmetric matrix.
///
/// Eigenvalues are sorted ascending; column `k` of `vectors` pairs with
/// `values[k]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vector,
    pub vectors: Mat,
}

impl SymmetricEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `V f(D) V'`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.values.len();
        let mut out = Mat::zeros(n, n);
        for k in 0..n {
            let w = f(self.values[k]);
            let v = self.vectors.column(k);
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] += w * v[i] * v[j];
                }
            }
        }
        symmetrize(&mut out);
        out
    }
}

/// Cyclic Jacobi eigensolver. Only the symmetric part of `a` is used.
pub fn symmetric_eigen(a: &Mat) -> Result<SymmetricEigen> {
    let n = require_square(a, "symmetric eigen input")?;
    require_finite(a, "symmetric eigen input")?;
    let mut m = symmetric_part(a);
    let mut v = Mat::identity(n, n);
    let scale = frobenius(&m);
    if scale == 0.0 {
        return Ok(SymmetricEigen {
            values: Vector::zeros(n),
            vectors: v,
        });
    }
    let off = |m: &Mat| {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[(i, j)] * m[(i, j)];
            }
        }
        s.sqrt()
    };
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off(&m) <= 1e-16 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off(&m) > 1e-12 * scale {
        return Err(Error::EigenNonConvergence {
            matrix: format!("{a:?}"),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = Vector::from_iterator(n, order.iter().map(|&k| m[(k, k)]));
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok(SymmetricEigen { values, vectors })
}

pub fn lambda_max_sym(a: &Mat) -> Result<f64> {
    Ok(symmetric_eigen(a)?.max())
}

pub fn lambda_min_sym(a: &Mat) -> Result<f64> {
    Ok(symmetric_eigen(a)?.min())
}

/// Logarithmic norm `mu(A) = lambda_max((A + A') / 2)`.
pub fn log_norm(a: &Mat) -> Result<f64> {
    lambda_max_sym(&symmetric_part(a))
}

/// Spectrum of a general real square matrix.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex<f64>>> {
    require_square(a, "eigenvalue input")?;
    require_finite(a, "eigenvalue input")?;
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or_else(|| {
        Error::EigenNonConvergence {
            matrix: format!("{a:?}"),
        }
    })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Maximal real part of the spectrum.
pub fn spectral_abscissa(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Largest singular value.
pub fn spectral_norm(a: &Mat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Rank counting singular values above `REL_TOL * largest`.
pub fn numerical_rank(a: &Mat) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let largest = sv.iter().copied().fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > REL_TOL * largest).count()
}

/// 2-norm condition number, infinite for singular input.
pub fn condition_number(a: &Mat) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport {
    pub log_norm: f64,
    pub spectral_abscissa: f64,
    pub frobenius: f64,
}

pub fn spectral_report(a: &Mat) -> Result<SpectralReport> {
    Ok(SpectralReport {
        log_norm: log_norm(a)?,
        spectral_abscissa: spectral_abscissa(a)?,
        frobenius: frobenius(a),
    })
}

/// `e^{tA}` by scaling and squaring of a truncated Taylor series.
pub fn matrix_exponential(a: &Mat, t: f64) -> Result<Mat> {
    let n = require_square(a, "matrix exponential input")?;
    require_finite(a, "matrix exponential input")?;
    let b = a * t;
    let norm1 = (0..n)
        .map(|j| b.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if !norm1.is_finite() || norm1 > 1e6 {
        return Err(Error::ExpOverflow { scaled_norm: norm1 });
    }
    let squarings = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = b / 2f64.powi(squarings);
    let mut sum = Mat::identity(n, n);
    let mut term = Mat::identity(n, n);
    for k in 1..40 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if frobenius(&term) <= 1e-18 * frobenius(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    if sum.iter().any(|x| !x.is_finite()) {
        return Err(Error::ExpOverflow { scaled_norm: norm1 });
    }
    Ok(sum)
}

/// Schur-type bound on `||e^{tA}||_2`:
/// `e^{s(A) t} * sum_{i=0..=r} (||T|| t)^i / i!`, with `T` the strictly
/// triangular part of a complex Schur form.
///
/// `||T||_F` is the departure from normality
/// `sqrt(||A||_F^2 - sum |lambda_i|^2)`, which is the same for every Schur
/// form and dominates the spectral norm of `T`.
pub fn schur_exp_bound(a: &Mat, t: f64) -> Result<f64> {
    let n = require_square(a, "Schur bound input")?;
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("t must be >= 0, got {t}")));
    }
    let spectrum = eigenvalues(a)?;
    let abscissa = spectrum.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let fro2 = a.iter().map(|x| x * x).sum::<f64>();
    let eig2: f64 = spectrum.iter().map(|z| z.norm_sqr()).sum();
    let departure = (fro2 - eig2).max(0.0).sqrt();
    // Exactly normal matrices leave rounding noise of order eps*||A||.
    let departure = if departure <= 1e-7 * fro2.sqrt() {
        0.0
    } else {
        departure
    };
    let x = departure * t;
    let mut kappa = 0.0;
    let mut term = 1.0;
    for i in 0..=n {
        if i > 0 {
            term *= x / i as f64;
        }
        kappa += term;
    }
    Ok(kappa * (abscissa * t).exp())
}

/// Symmetric square root of a positive semi-definite matrix.
///
/// Eigenvalues in `[-REL_TOL * ||P||, 0)` are clipped to zero.
pub fn psd_sqrt(p: &Mat) -> Result<Mat> {
    let eig = psd_eigen(p)?;
    Ok(eig.map(|l| l.max(0.0).sqrt()))
}

/// Eigen decomposition after checking semi-definiteness; negative
/// eigenvalues inside the tolerance band are reported as zero.
pub fn psd_eigen(p: &Mat) -> Result<SymmetricEigen> {
    require_square(p, "PSD input")?;
    require_finite(p, "PSD input")?;
    let asym = frobenius(&(p - p.transpose()));
    let scale = frobenius(p);
    if asym > 1e-8 * scale.max(1e-300) {
        return Err(Error::InvalidArgument(format!(
            "matrix is not symmetric (asymmetry {asym:e})"
        )));
    }
    let mut eig = symmetric_eigen(p)?;
    let spread = eig.values.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let tol = REL_TOL * spread;
    if eig.min() < -tol {
        return Err(Error::NotPositiveSemiDefinite {
            min_eigenvalue: eig.min(),
        });
    }
    for v in eig.values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(eig)
}

/// Inverse of the symmetric square root of a positive definite matrix.
pub fn pd_inv_sqrt(p: &Mat) -> Result<Mat> {
    let eig = psd_eigen(p)?;
    let spread = eig.max();
    if eig.min() <= REL_TOL * spread || spread <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "smallest eigenvalue {:e}",
            eig.min()
        )));
    }
    Ok(eig.map(|l| 1.0 / l.sqrt()))
}

/// Inverse of a symmetric positive definite matrix via its eigenbasis.
pub fn pd_inverse(p: &Mat) -> Result<Mat> {
    let eig = psd_eigen(p)?;
    let spread = eig.max();
    if eig.min() <= REL_TOL * spread || spread <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "smallest eigenvalue {:e}",
            eig.min()
        )));
    }
    Ok(eig.map(|l| 1.0 / l))
}

/// Returns `rho` when `S = rho * Id` up to `REL_TOL` relative Frobenius error.
pub fn isotropy_check(s: &Mat) -> Option<f64> {
    let r = s.nrows();
    if r == 0 || r != s.ncols() {
        return None;
    }
    let rho = s.trace() / r as f64;
    if rho <= 0.0 {
        return None;
    }
    let dev = frobenius(&(s - Mat::identity(r, r) * rho));
    (dev <= REL_TOL * frobenius(s)).then_some(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> Mat {
        Mat::from_row_slice(2, 2, &[a, b, c, d])
    }

    #[test]
    fn symmetric_part_examples() {
        assert_eq!(symmetric_part(&m2(0.0, 2.0, 0.0, 0.0)), m2(0.0, 1.0, 1.0, 0.0));
        let s = m2(2.0, -1.0, -1.0, 5.0);
        assert_eq!(symmetric_part(&s), s);
        assert_eq!(symmetric_part(&m2(1.0, 2.0, 1.0, 3.0)), m2(1.0, 1.5, 1.5, 3.0));
    }

    #[test]
    fn log_norm_examples() {
        assert_relative_eq!(log_norm(&-Mat::identity(2, 2)).unwrap(), -1.0, epsilon = 1e-14);
        let expected = 2.0 + 3.25f64.sqrt();
        assert_relative_eq!(log_norm(&m2(1.0, 2.0, 1.0, 3.0)).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn spectral_abscissa_examples() {
        assert_relative_eq!(
            spectral_abscissa(&m2(-1.0, 0.0, 0.0, -2.0)).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        // trace -4.74, det 3.74: roots -1 and -3.74
        let abar = m2(-7.74, 2.0, -13.48, 3.0);
        assert_relative_eq!(spectral_abscissa(&abar).unwrap(), -1.0, epsilon = 1e-9);
        assert_relative_eq!(
            spectral_abscissa(&m2(0.0, -1.0, 1.0, 0.0)).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = Mat::from_row_slice(3, 3, &[4.0, 1.0, -2.0, 1.0, 2.0, 0.5, -2.0, 0.5, 3.0]);
        let eig = symmetric_eigen(&a).unwrap();
        let rebuilt = eig.map(|l| l);
        assert!(frobenius(&(rebuilt - &a)) < 1e-12);
        assert!(eig.values[0] <= eig.values[1] && eig.values[1] <= eig.values[2]);
        let vtv = eig.vectors.transpose() * &eig.vectors;
        assert!(frobenius(&(vtv - Mat::identity(3, 3))) < 1e-12);
    }

    #[test]
    fn exponential_examples() {
        let a = m2(1.0, 2.0, 1.0, 3.0);
        assert_eq!(matrix_exponential(&a, 0.0).unwrap(), Mat::identity(2, 2));
        let d = matrix_exponential(&m2(-0.5, 0.0, 0.0, 1.5), 2.0).unwrap();
        assert_relative_eq!(d[(0, 0)], (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(d[(1, 1)], 3.0f64.exp(), max_relative = 1e-12);
        assert_eq!(d[(0, 1)], 0.0);
        let n = matrix_exponential(&m2(0.0, 1.0, 0.0, 0.0), 1.0).unwrap();
        assert!(frobenius(&(n - m2(1.0, 1.0, 0.0, 1.0))) < 1e-14);
    }

    #[test]
    fn exponential_group_property() {
        let a = m2(-0.3, 1.7, -2.2, 0.4);
        let e1 = matrix_exponential(&a, 0.7).unwrap();
        let e2 = matrix_exponential(&a, 1.3).unwrap();
        let e3 = matrix_exponential(&a, 2.0).unwrap();
        assert!(frobenius(&(&e1 * &e2 - &e3)) < 1e-11 * frobenius(&e3));
    }

    #[test]
    fn exponential_overflow_is_error() {
        let a = m2(1.0, 0.0, 0.0, 1.0);
        assert!(matches!(matrix_exponential(&a, 1e7), Err(Error::ExpOverflow { .. })));
        assert!(matches!(matrix_exponential(&a, 800.0), Err(Error::ExpOverflow { .. })));
    }

    #[test]
    fn schur_bound_examples() {
        let d = m2(-1.0, 0.0, 0.0, 0.5);
        for t in [0.0, 0.3, 2.0] {
            assert_relative_eq!(schur_exp_bound(&d, t).unwrap(), (0.5 * t).exp(), max_relative = 1e-12);
        }
        let a = m2(1.0, 2.0, 1.0, 3.0);
        let bound = schur_exp_bound(&a, 1.0).unwrap();
        let exact = spectral_norm(&matrix_exponential(&a, 1.0).unwrap());
        assert!(bound >= exact, "{bound} < {exact}");
        // normal, non-diagonal: the lower bound e^{s t} still holds
        let rot = m2(-0.2, -1.0, 1.0, -0.2);
        for t in [0.5, 1.0, 4.0] {
            assert!(schur_exp_bound(&rot, t).unwrap() >= (-0.2 * t).exp() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn psd_sqrt_examples() {
        assert!(frobenius(&(psd_sqrt(&Mat::identity(3, 3)).unwrap() - Mat::identity(3, 3))) < 1e-14);
        let r = psd_sqrt(&m2(4.0, 0.0, 0.0, 9.0)).unwrap();
        assert!(frobenius(&(r - m2(2.0, 0.0, 0.0, 3.0))) < 1e-14);
        assert!(matches!(
            psd_sqrt(&m2(1.0, 2.0, 2.0, 1.0)),
            Err(Error::NotPositiveSemiDefinite { .. })
        ));
        // rank-deficient with roundoff-level negative eigenvalue
        let v = Vector::from_vec(vec![1.0, 2.0]);
        let mut p = &v * v.transpose();
        p[(0, 0)] -= 1e-14;
        let r = psd_sqrt(&p).unwrap();
        assert!(frobenius(&(&r * &r - &p)) < 1e-10 * frobenius(&p));
    }

    #[test]
    fn isotropy_examples() {
        assert_relative_eq!(isotropy_check(&(Mat::identity(3, 3) * 3.0)).unwrap(), 3.0);
        assert_eq!(isotropy_check(&m2(1.0, 0.0, 0.0, 0.0)), None);
        // b X dt + sigma2 dV sensor, S = (b/sigma2)^2 Id
        let (b, sigma2) = (1.5, 0.5);
        let c = Mat::identity(2, 2) * b;
        let r2inv = Mat::identity(2, 2) / (sigma2 * sigma2);
        let s = c.transpose() * r2inv * &c;
        assert_relative_eq!(isotropy_check(&s).unwrap(), (b / sigma2).powi(2), max_relative = 1e-14);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&Mat::zeros(2, 2)), 0);
        assert_eq!(numerical_rank(&m2(1.0, 2.0, 2.0, 4.0)), 1);
        assert_eq!(numerical_rank(&m2(1.0, 0.0, 1.0, 2.0)), 2);
    }

    fn arb_square(max_dim: usize) -> impl Strategy<Value = Mat> {
        (1..=max_dim).prop_flat_map(|n| {
            proptest::collection::vec(-3.0f64..3.0, n * n).prop_map(move |v| Mat::from_row_slice(n, n, &v))
        })
    }

    fn arb_pair(max_dim: usize) -> impl Strategy<Value = (Mat, Mat)> {
        (1..=max_dim).prop_flat_map(|n| {
            let entries = proptest::collection::vec(-3.0f64..3.0, n * n);
            (entries.clone(), entries)
                .prop_map(move |(a, b)| (Mat::from_row_slice(n, n, &a), Mat::from_row_slice(n, n, &b)))
        })
    }

    fn gram(a: &Mat) -> Mat {
        let mut g = a * a.transpose();
        symmetrize(&mut g);
        g
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn log_norm_bounds_abscissa_and_is_subadditive((a, b) in arb_pair(4)) {
            let mu = log_norm(&a).unwrap();
            prop_assert!(mu >= spectral_abscissa(&a).unwrap() - 1e-9 * (1.0 + frobenius(&a)));
            let sum = log_norm(&(&a + &b)).unwrap();
            prop_assert!(sum <= mu + log_norm(&b).unwrap() + 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn exponential_obeys_log_norm_bound(a in arb_square(4), t in 0.0f64..5.0) {
            let e = matrix_exponential(&(&a * 0.3), t).unwrap();
            let bound = (log_norm(&(&a * 0.3)).unwrap() * t).exp();
            prop_assert!(spectral_norm(&e) <= bound * (1.0 + 1e-9));
        }

        #[test]
        fn schur_bound_dominates_exponential(a in arb_square(3), t in 0.0f64..3.0) {
            let a = &a * 0.3;
            let e = spectral_norm(&matrix_exponential(&a, t).unwrap());
            prop_assert!(schur_exp_bound(&a, t).unwrap() >= e * (1.0 - 1e-9));
        }

        #[test]
        fn trace_inequalities((a, b) in arb_pair(4)) {
            let (p, q) = (gram(&a), gram(&b));
            let tpq = (&p * &q).trace();
            let (lo, hi) = (lambda_min_sym(&p).unwrap(), lambda_max_sym(&p).unwrap());
            let tol = 1e-9 * (1.0 + frobenius(&p) * frobenius(&q));
            prop_assert!(lo * q.trace() <= tpq + tol);
            prop_assert!(tpq <= hi * q.trace() + tol);
            let (tp, tp2) = (p.trace(), (&p * &p).trace());
            let r = p.nrows() as f64;
            prop_assert!(tp2 <= tp * tp * (1.0 + 1e-12));
            prop_assert!(tp * tp <= r * tp2 * (1.0 + 1e-12));
        }

        #[test]
        fn trace_cauchy_schwarz((a, b) in arb_pair(4)) {
            let (p, q) = (gram(&a), &b + b.transpose());
            prop_assert!((&p * &q).trace().abs() <= frobenius(&p) * frobenius(&q) * (1.0 + 1e-12));
        }
    }
}
