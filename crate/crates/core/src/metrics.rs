//! Distances between Gaussian laws and positive definite matrices, and
//! Monte Carlo error functionals.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    frobenius, pd_inv_sqrt, pd_inverse, psd_eigen, psd_sqrt, symmetric_eigen, symmetrize, Mat, Vector,
};
use crate::model::GaussianLaw;
use crate::rng::{NormalStream, StreamKey};

fn same_dim(g1: &GaussianLaw, g2: &GaussianLaw) -> Result<()> {
    if g1.dim() != g2.dim() {
        return Err(Error::Dimension(format!(
            "laws of dimension {} and {}",
            g1.dim(),
            g2.dim()
        )));
    }
    Ok(())
}

/// `tr(P1 + P2 - 2 (P2^{1/2} P1 P2^{1/2})^{1/2})`, clipped at zero.
pub fn bures_squared(p1: &Mat, p2: &Mat) -> Result<f64> {
    let s2 = psd_sqrt(p2)?;
    let mut inner = &s2 * p1 * &s2;
    symmetrize(&mut inner);
    let cross = psd_sqrt(&inner)?;
    Ok((p1.trace() + p2.trace() - 2.0 * cross.trace()).max(0.0))
}

/// Wasserstein-2 distance between two Gaussian laws.
pub fn gaussian_w2(g1: &GaussianLaw, g2: &GaussianLaw) -> Result<f64> {
    same_dim(g1, g2)?;
    let dm = (&g1.mean - &g2.mean).norm_squared();
    Ok((dm + bures_squared(&g1.cov, &g2.cov)?).sqrt())
}

/// `Ent(g1 | g2) = 1/2 [tr(P2^{-1} P1) - r + Δ' P2^{-1} Δ - ln det(P1 P2^{-1})]`.
pub fn gaussian_relative_entropy(g1: &GaussianLaw, g2: &GaussianLaw) -> Result<f64> {
    same_dim(g1, g2)?;
    let inv = pd_inverse(&g2.cov)?;
    let r = g1.dim() as f64;
    let delta = &g1.mean - &g2.mean;
    let quad = (delta.transpose() * &inv * &delta)[(0, 0)];
    // ln det(P1 P2^{-1}) through the symmetric form P2^{-1/2} P1 P2^{-1/2}.
    let w = pd_inv_sqrt(&g2.cov)?;
    let mut m = &w * &g1.cov * &w;
    symmetrize(&mut m);
    let eig = psd_eigen(&m)?;
    let logdet: f64 = eig.values.iter().map(|l| l.ln()).sum();
    if !logdet.is_finite() {
        return Err(Error::NotPositiveDefinite("first covariance is singular".into()));
    }
    Ok((0.5 * ((&inv * &g1.cov).trace() - r + quad - logdet)).max(0.0))
}

/// `ln max(λmax(P2^{-1} P1), λmax(P1^{-1} P2))`.
pub fn thompson_metric(p1: &Mat, p2: &Mat) -> Result<f64> {
    let w = pd_inv_sqrt(p2)?;
    pd_inverse(p1)?;
    let mut m = &w * p1 * &w;
    symmetrize(&mut m);
    let eig = symmetric_eigen(&m)?;
    Ok(eig.max().ln().max(-eig.min().ln()).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LnError {
    pub value: f64,
    pub std_error: f64,
}

/// `(mean |s - reference|^n)^{1/n}` with a delta-method standard error.
pub fn ln_error(samples: &[Vector], reference: &Vector, n: u32) -> Result<LnError> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("moment order must be at least 1".into()));
    }
    let powers: Vec<f64> = samples.iter().map(|s| (s - reference).norm().powi(n as i32)).collect();
    let est = crate::stats::mean_estimate(&powers);
    let value = est.mean.powf(1.0 / n as f64);
    let std_error = if value > 0.0 {
        est.std_error / (n as f64 * value.powi(n as i32 - 1))
    } else {
        0.0
    };
    Ok(LnError { value, std_error })
}

/// Both sides of the covariance regularity inequality
/// `(|tr(P1 - P2)| / 4) v |P1 - P2|_F <= W2 |π2(e2)|^{1/2} + W2^2 / sqrt(2)`,
/// where `|π2(e2)|` is the second moment `E|X2|^2` of the second law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub trace_side: f64,
    pub frobenius_side: f64,
    pub w2: f64,
    pub second_moment: f64,
    pub rhs: f64,
}

impl LipschitzReport {
    fn new(p1: &Mat, p2: &Mat, w2: f64, second_moment: f64) -> Self {
        let d = p1 - p2;
        Self {
            trace_side: d.trace().abs() / 4.0,
            frobenius_side: frobenius(&d),
            w2,
            second_moment,
            rhs: w2 * second_moment.sqrt() + w2 * w2 / 2f64.sqrt(),
        }
    }

    pub fn lhs(&self) -> f64 {
        self.trace_side.max(self.frobenius_side)
    }

    /// `rhs - lhs`; non-negative when the inequality holds.
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs()
    }

    pub fn holds(&self) -> bool {
        self.lhs() <= self.rhs * (1.0 + 1e-12) + 1e-14
    }
}

/// Exact form for two Gaussian laws.
pub fn covariance_lipschitz_gaussian(g1: &GaussianLaw, g2: &GaussianLaw) -> Result<LipschitzReport> {
    let w2 = gaussian_w2(g1, g2)?;
    let second = g2.cov.trace() + g2.mean.norm_squared();
    Ok(LipschitzReport::new(&g1.cov, &g2.cov, w2, second))
}

/// Empirical form with `m` coupled draws.
///
/// Draw `i` of both samplers reads a clone of the same stream, so the pairs
/// form a coupling of the two empirical measures. `W2` is replaced by the
/// cost of that coupling, which bounds the empirical `W2` from above; the
/// covariances are the `1/m` empirical ones. The inequality then holds for
/// the two empirical measures, so a violation signals an implementation
/// error rather than sampling noise.
pub fn covariance_lipschitz_check<F1, F2>(
    mut sampler1: F1,
    mut sampler2: F2,
    m: usize,
    key: StreamKey,
) -> Result<LipschitzReport>
where
    F1: FnMut(&mut NormalStream) -> Vector,
    F2: FnMut(&mut NormalStream) -> Vector,
{
    if m == 0 {
        return Err(Error::Empty("samples"));
    }
    let mut xs = Vec::with_capacity(m);
    let mut ys = Vec::with_capacity(m);
    for i in 0..m {
        let stream = key.with_index(i as u64).rng();
        xs.push(sampler1(&mut stream.clone()));
        ys.push(sampler2(&mut stream.clone()));
    }
    let r = xs[0].len();
    if xs.iter().chain(&ys).any(|v| v.len() != r) {
        return Err(Error::Dimension("samplers disagree on dimension".into()));
    }
    let moments = |s: &[Vector]| {
        let mean = s.iter().fold(Vector::zeros(r), |acc, v| acc + v) / m as f64;
        let mut cov = Mat::zeros(r, r);
        for v in s {
            let d = v - &mean;
            cov += &d * d.transpose();
        }
        (mean, cov / m as f64)
    };
    let (_, p1) = moments(&xs);
    let (_, p2) = moments(&ys);
    let cost = xs.iter().zip(&ys).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / m as f64;
    let second = ys.iter().map(|y| y.norm_squared()).sum::<f64>() / m as f64;
    Ok(LipschitzReport::new(&p1, &p2, cost.sqrt(), second))
}

/// Gaussian law fitted to the columns of `states` (unbiased covariance).
pub fn fitted_gaussian(states: &Mat) -> GaussianLaw {
    let (mean, cov) = crate::kalman_bucy::column_stats(states);
    GaussianLaw { mean, cov }
}
