//! Differential and algebraic Riccati equations.
//!
//! `Ricc(Q) = A Q + Q A' - Q S Q + R` with `R = R1` and `S = C' R2^{-1} C`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    frobenius, lambda_min_sym, log_norm, psd_eigen, require_square, spectral_abscissa, symmetrize, Mat,
};
use crate::model::{controllability_observability_ranks, Model};
use crate::stats::{fit_rate, RateFit, Scale};

/// Norm at which an integrated covariance is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

pub fn riccati_drift(p: &Mat, model: &Model) -> Mat {
    let a = model.drift();
    let ap = a * p;
    let mut out = &ap + ap.transpose() - p * model.sensor_gram() * p + model.signal_noise();
    symmetrize(&mut out);
    out
}

/// One classical RK4 step for `dP/dt = f(P)`, symmetrized afterwards.
pub fn rk4_step(p: &Mat, dt: f64, f: impl Fn(&Mat) -> Mat) -> Mat {
    let k1 = f(p);
    let k2 = f(&(p + &k1 * (0.5 * dt)));
    let k3 = f(&(p + &k2 * (0.5 * dt)));
    let k4 = f(&(p + &k3 * dt));
    let mut next = p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    symmetrize(&mut next);
    next
}

/// Covariances on the uniform grid `t_k = k dt`.
#[derive(Debug, Clone)]
pub struct RiccatiTrajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub covariances: Vec<Mat>,
    /// `|Ricc(P_t)|_F` at each grid point.
    pub residuals: Vec<f64>,
}

impl RiccatiTrajectory {
    pub fn last(&self) -> &Mat {
        self.covariances
            .last()
            .expect("trajectory has at least the initial point")
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
}

pub(crate) fn step_count(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "horizon must be non-negative, got {horizon}"
        )));
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::GridMismatch(format!(
            "horizon {horizon} is not a multiple of dt = {dt}"
        )));
    }
    Ok(n as usize)
}

fn check_initial(p0: &Mat, model: &Model) -> Result<()> {
    let r = require_square(p0, "P0")?;
    if r != model.state_dim() {
        return Err(Error::Dimension(format!(
            "P0 is {r}x{r} but the state has dimension {}",
            model.state_dim()
        )));
    }
    psd_eigen(p0)?;
    Ok(())
}

/// RK4 on `dP/dt = Ricc(P)` from `P0` up to `horizon`.
pub fn integrate_riccati(p0: &Mat, model: &Model, dt: f64, horizon: f64) -> Result<RiccatiTrajectory> {
    check_initial(p0, model)?;
    let steps = step_count(dt, horizon)?;
    let mut p = p0.clone();
    symmetrize(&mut p);
    let mut traj = RiccatiTrajectory {
        dt,
        times: Vec::with_capacity(steps + 1),
        covariances: Vec::with_capacity(steps + 1),
        residuals: Vec::with_capacity(steps + 1),
    };
    traj.times.push(0.0);
    traj.residuals.push(frobenius(&riccati_drift(&p, model)));
    traj.covariances.push(p.clone());
    for k in 1..=steps {
        p = rk4_step(&p, dt, |q| riccati_drift(q, model));
        let t = k as f64 * dt;
        let norm = frobenius(&p);
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::RiccatiDivergence { t, norm });
        }
        traj.times.push(t);
        traj.residuals.push(frobenius(&riccati_drift(&p, model)));
        traj.covariances.push(p.clone());
    }
    Ok(traj)
}

/// Closed-form solution of `dP = (2 A P - S P^2 + R) dt` for scalars.
///
/// Written around the positive root `z2` of `-S z^2 + 2 A z + R`, which is
/// also the limit as `t -> infinity`.
pub fn scalar_riccati_closed_form(p0: f64, a: f64, s: f64, r: f64, t: f64) -> Result<f64> {
    if s == 0.0 {
        return Err(Error::NoSensorUseOuBranch);
    }
    let disc = a * a + s * r;
    if !(s > 0.0) || !(r >= 0.0) || !(disc > 0.0) || !(p0 >= 0.0) || !(t >= 0.0) {
        return Err(Error::ScalarRiccatiDomain(format!(
            "need S > 0, R >= 0, A^2 + S R > 0, P0 >= 0, t >= 0; got A = {a}, S = {s}, R = {r}, P0 = {p0}, t = {t}"
        )));
    }
    let d = disc.sqrt();
    let z2 = (a + d) / s;
    let k = 2.0 * d;
    let u0 = p0 - z2;
    let e = (-k * t).exp();
    Ok(z2 + u0 * e / (1.0 + s * u0 / k * (1.0 - e)))
}

/// Stationary-in-law variance of the scalar OU branch `dg = (2 a g + r) dt`.
pub fn scalar_ou_variance(g0: f64, a: f64, r: f64, t: f64) -> f64 {
    let e = (2.0 * a * t).exp();
    if a == 0.0 {
        g0 + r * t
    } else {
        e * g0 + r * (e - 1.0) / (2.0 * a)
    }
}

/// `P^X_t`, the covariance of the signal, via RK4 on `dQ = A Q + Q A' + R`.
pub fn signal_covariance(p0: &Mat, model: &Model, t: f64, dt: f64) -> Result<Mat> {
    check_initial(p0, model)?;
    let steps = step_count(dt, t)?;
    let a = model.drift();
    let lyap = |q: &Mat| {
        let aq = a * q;
        &aq + aq.transpose() + model.signal_noise()
    };
    let mut q = p0.clone();
    symmetrize(&mut q);
    for _ in 0..steps {
        q = rk4_step(&q, dt, lyap);
    }
    Ok(q)
}

/// Solves `B X + X B' + Q = 0` through the Kronecker form of size `r^2`.
pub fn lyapunov_solve(b: &Mat, q: &Mat) -> Result<Mat> {
    let r = require_square(b, "B")?;
    if q.shape() != (r, r) {
        return Err(Error::Dimension(format!("Lyapunov right-hand side is {:?}", q.shape())));
    }
    let n = r * r;
    // Column-major vec: vec(B X) = (I (x) B) vec X, vec(X B') = (B (x) I) vec X.
    let mut k = Mat::zeros(n, n);
    for j in 0..r {
        for i in 0..r {
            let row = i + j * r;
            for l in 0..r {
                k[(row, i + l * r)] += b[(j, l)];
                k[(row, l + j * r)] += b[(i, l)];
            }
        }
    }
    let rhs = crate::linalg::Vector::from_iterator(n, q.iter().map(|v| -v));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator is singular".into()))?;
    let mut x = Mat::from_column_slice(r, r, sol.as_slice());
    symmetrize(&mut x);
    Ok(x)
}

#[derive(Debug, Clone, Serialize)]
pub struct AreSolution {
    #[serde(skip)]
    pub p: Mat,
    pub residual: f64,
    /// `log_norm(A - P S)`.
    pub closed_loop_log_norm: f64,
    /// `spectral_abscissa(A - P S)`; negative for the stabilizing root.
    pub closed_loop_abscissa: f64,
    pub newton_iterations: usize,
    pub used_fallback: bool,
}

fn are_target(p: &Mat) -> f64 {
    1e-9 * (1.0 + frobenius(p))
}

fn newton_kleinman(seed: &Mat, model: &Model, max_iter: usize) -> Option<(Mat, usize)> {
    let a = model.drift();
    let s = model.sensor_gram();
    let step = |p: &Mat| -> Option<Mat> {
        let closed = a - p * s;
        let mut rhs = model.signal_noise() + p * s * p;
        symmetrize(&mut rhs);
        let next = lyapunov_solve(&closed, &rhs).ok()?;
        next.iter().all(|v| v.is_finite()).then_some(next)
    };
    let mut p = seed.clone();
    for it in 1..=max_iter {
        p = step(&p)?;
        let mut residual = frobenius(&riccati_drift(&p, model));
        if residual <= are_target(&p) {
            // Polish while the residual still drops.
            for _ in 0..3 {
                let Some(next) = step(&p) else { break };
                let r = frobenius(&riccati_drift(&next, model));
                if !(r < residual) {
                    break;
                }
                (p, residual) = (next, r);
            }
            return Some((p, it));
        }
    }
    None
}

/// Stabilizing solution of `Ricc(P) = 0`.
///
/// Newton-Kleinman seeded by integrating the Riccati flow from the identity
/// until `|Ricc|_F < 1e-3`. Falls back to pure integration with a finer step
/// when the iteration stalls.
pub fn solve_are(model: &Model) -> Result<AreSolution> {
    let r1 = model.state_dim();
    let (rank_c, rank_o) = controllability_observability_ranks(model);
    if rank_c < r1 || rank_o < r1 {
        return Err(Error::NotObservableControllable { rank_c, rank_o, r1 });
    }
    let scale = frobenius(model.drift()) + frobenius(model.sensor_gram()) + 1.0;
    let dt = (1e-2 / scale).min(1e-2);

    let mut p = Mat::identity(r1, r1);
    let mut integrated = 0usize;
    let chunk = (1.0 / dt).ceil() as usize;
    let budget = 10_000usize;
    while frobenius(&riccati_drift(&p, model)) >= 1e-3 && integrated < budget * chunk / 10 {
        for _ in 0..chunk {
            p = rk4_step(&p, dt, |q| riccati_drift(q, model));
        }
        integrated += chunk;
        if !(frobenius(&p) <= DIVERGENCE_NORM) {
            return Err(Error::RiccatiDivergence {
                t: integrated as f64 * dt,
                norm: frobenius(&p),
            });
        }
    }

    let (p, iterations, used_fallback) = match newton_kleinman(&p, model, 50) {
        Some((p, it)) => (p, it, false),
        None => {
            let fine = dt / 10.0;
            let mut q = p.clone();
            let mut steps = 0usize;
            while frobenius(&riccati_drift(&q, model)) > are_target(&q) && steps < budget * chunk {
                q = rk4_step(&q, fine, |x| riccati_drift(x, model));
                steps += 1;
            }
            let residual = frobenius(&riccati_drift(&q, model));
            if residual > are_target(&q) {
                return Err(Error::AreNotConverged {
                    residual,
                    target: are_target(&q),
                });
            }
            (q, 0, true)
        }
    };
    let closed = model.drift() - &p * model.sensor_gram();
    Ok(AreSolution {
        residual: frobenius(&riccati_drift(&p, model)),
        closed_loop_log_norm: log_norm(&closed)?,
        closed_loop_abscissa: spectral_abscissa(&closed)?,
        newton_iterations: iterations,
        used_fallback,
        p,
    })
}

/// Scalar majorant `g_t` of `tr(P_t)`, solving
/// `dg = (2 alpha g - beta g^2 + r) dt` with `alpha = mu(A)`,
/// `beta = lambda_min(S) / r1`, `r = tr(R)` and `g_0 = tr(P0)`.
pub fn trace_bound(p0: &Mat, model: &Model, t: f64) -> Result<f64> {
    let mu = log_norm(model.drift())?;
    if !(mu < 0.0) {
        return Err(Error::UnstableDrift { mu });
    }
    let beta = lambda_min_sym(model.sensor_gram())?.max(0.0) / model.state_dim() as f64;
    let r = model.signal_noise().trace();
    let g0 = p0.trace();
    if beta <= 1e-14 {
        Ok(scalar_ou_variance(g0, mu, r, t))
    } else {
        scalar_riccati_closed_form(g0.max(0.0), mu, beta, r, t)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    /// `|P_t - P̌_t|_F`.
    pub differences: Vec<f64>,
    /// Log-linear fit over the second half of the horizon, if the
    /// differences there are positive.
    pub fit: Option<RateFit>,
}

pub fn riccati_contraction_report(
    p0: &Mat,
    p0_check: &Mat,
    model: &Model,
    dt: f64,
    horizon: f64,
) -> Result<ContractionReport> {
    let a = integrate_riccati(p0, model, dt, horizon)?;
    let b = integrate_riccati(p0_check, model, dt, horizon)?;
    let differences: Vec<f64> = a
        .covariances
        .iter()
        .zip(&b.covariances)
        .map(|(x, y)| frobenius(&(x - y)))
        .collect();
    let half = horizon / 2.0;
    let (tx, dy): (Vec<f64>, Vec<f64>) = a
        .times
        .iter()
        .zip(&differences)
        .filter(|(t, d)| **t >= half && **d > 0.0)
        .map(|(t, d)| (*t, *d))
        .unzip();
    let fit = fit_rate(&tx, &dy, Scale::LogLinear).ok();
    Ok(ContractionReport {
        times: a.times,
        differences,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{isotropy_check, lambda_max_sym};
    use crate::model::LinearGaussianModel;
    use proptest::prelude::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    fn scalar(a: f64, s: f64, r: f64) -> Model {
        LinearGaussianModel::centered(m(1, 1, &[a]), m(1, 1, &[s.sqrt()]), m(1, 1, &[r]), m(1, 1, &[1.0]))
            .validate()
            .unwrap()
    }

    fn blind(a: Mat, r: Mat) -> Model {
        let n = a.nrows();
        LinearGaussianModel::centered(a, Mat::zeros(1, n), r, Mat::identity(1, 1))
            .validate()
            .unwrap()
    }

    pub(crate) fn appendix() -> Model {
        LinearGaussianModel::centered(
            m(2, 2, &[1.0, 2.0, 1.0, 3.0]),
            m(1, 2, &[1.0, 0.0]),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        )
        .validate()
        .unwrap()
    }

    #[test]
    fn drift_examples() {
        let model = scalar(0.0, 1.0, 1.0);
        assert_eq!(riccati_drift(&m(1, 1, &[0.0]), &model)[(0, 0)], 1.0);
        assert_eq!(riccati_drift(&m(1, 1, &[1.0]), &model)[(0, 0)], 0.0);
    }

    #[test]
    fn tanh_closed_form_and_integration() {
        for t in [0.0, 0.3, 1.0, 4.0] {
            let v = scalar_riccati_closed_form(0.0, 0.0, 1.0, 1.0, t).unwrap();
            assert!((v - f64::tanh(t)).abs() < 1e-15);
        }
        let traj = integrate_riccati(&m(1, 1, &[0.0]), &scalar(0.0, 1.0, 1.0), 1e-3, 5.0).unwrap();
        for (t, p) in traj.times.iter().zip(&traj.covariances) {
            assert!((p[(0, 0)] - t.tanh()).abs() < 1e-8);
        }
        assert_eq!(scalar_riccati_closed_form(0.7, 0.3, 2.0, 1.0, 0.0).unwrap(), 0.7);
        assert!(matches!(
            scalar_riccati_closed_form(0.0, 1.0, 0.0, 1.0, 1.0),
            Err(Error::NoSensorUseOuBranch)
        ));
    }

    #[test]
    fn rk4_is_fourth_order() {
        let model = scalar(0.0, 1.0, 1.0);
        let err = |dt: f64| {
            let traj = integrate_riccati(&m(1, 1, &[0.0]), &model, dt, 2.0).unwrap();
            (traj.last()[(0, 0)] - 2f64.tanh()).abs()
        };
        assert!(err(0.02) / err(0.01) >= 12.0);
    }

    #[test]
    fn blind_sensor_reduces_to_signal_covariance() {
        let a = m(2, 2, &[-1.0, 0.5, -0.2, -0.8]);
        let r = m(2, 2, &[1.0, 0.2, 0.2, 0.6]);
        let model = blind(a, r);
        let p0 = m(2, 2, &[2.0, 0.1, 0.1, 1.0]);
        let traj = integrate_riccati(&p0, &model, 1e-3, 3.0).unwrap();
        let px = signal_covariance(&p0, &model, 3.0, 1e-3).unwrap();
        assert!(frobenius(&(traj.last() - px)) < 1e-12);
    }

    #[test]
    fn noiseless_scalar_information_form() {
        // With R -> 0 the flow integrates to (P0^{-1} + S t)^{-1}; the model
        // needs R > 0, so the drift is integrated directly.
        let p0 = 2.0;
        let s = 1.5;
        let f = |q: &Mat| -q * q * s;
        let mut p = m(1, 1, &[p0]);
        for _ in 0..3000 {
            p = rk4_step(&p, 1e-3, f);
        }
        assert!((p[(0, 0)] - 1.0 / (1.0 / p0 + s * 3.0)).abs() < 1e-10);
    }

    #[test]
    fn ou_variance_limit() {
        let model = blind(m(1, 1, &[-1.0]), m(1, 1, &[2.0]));
        let q = signal_covariance(&m(1, 1, &[0.0]), &model, 20.0, 1e-3).unwrap();
        assert!((q[(0, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(
            signal_covariance(&m(1, 1, &[0.4]), &model, 0.0, 1e-3).unwrap()[(0, 0)],
            0.4
        );
    }

    #[test]
    fn divergence_is_reported() {
        let model = blind(m(1, 1, &[5.0]), m(1, 1, &[1.0]));
        match integrate_riccati(&m(1, 1, &[1.0]), &model, 1e-2, 10.0) {
            Err(Error::RiccatiDivergence { t, .. }) => assert!(t > 2.0 && t < 3.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn lyapunov_solution_satisfies_equation() {
        let b = m(3, 3, &[-2.0, 1.0, 0.3, 0.0, -1.0, 0.5, 0.2, -0.4, -3.0]);
        let q = m(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 3.0]);
        let x = lyapunov_solve(&b, &q).unwrap();
        assert!(frobenius(&(&b * &x + &x * b.transpose() + &q)) < 1e-12);
    }

    #[test]
    fn scalar_are_is_positive_root() {
        let sol = solve_are(&scalar(0.0, 1.0, 1.0)).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn appendix_are() {
        let sol = solve_are(&appendix()).unwrap();
        let p = &sol.p;
        assert!(sol.residual < 1e-9);
        let target = [[8.74, 14.48], [14.48, 29.94]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((p[(i, j)] - target[i][j]).abs() < 0.05, "P = {p}");
            }
        }
        assert!((p[(0, 0)] - (5.0 + 14f64.sqrt())).abs() < 1e-9);
        assert!((sol.closed_loop_log_norm - 5.4913).abs() < 0.02);
        // Closed-loop spectrum is {-1, -sqrt(14)}.
        assert!((sol.closed_loop_abscissa + 1.0).abs() < 1e-8);
    }

    #[test]
    fn are_rejects_unobservable_pair() {
        let model = blind(m(2, 2, &[1.0, 2.0, 1.0, 3.0]), Mat::identity(2, 2));
        assert!(matches!(
            solve_are(&model),
            Err(Error::NotObservableControllable { .. })
        ));
    }

    #[test]
    fn trace_bound_examples() {
        let model = scalar(-0.5, 2.0, 1.0);
        let p0 = m(1, 1, &[3.0]);
        assert_eq!(trace_bound(&p0, &model, 0.0).unwrap(), 3.0);
        let traj = integrate_riccati(&p0, &model, 1e-3, 4.0).unwrap();
        let g = trace_bound(&p0, &model, 4.0).unwrap();
        assert!((traj.last()[(0, 0)] - g).abs() < 1e-10);
        assert!(matches!(
            trace_bound(&p0, &appendix(), 1.0),
            Err(Error::UnstableDrift { .. })
        ));
    }

    #[test]
    fn appendix_contraction_rate_is_twice_abscissa() {
        let model = appendix();
        let rep =
            riccati_contraction_report(&Mat::identity(2, 2), &(Mat::identity(2, 2) * 3.0), &model, 1e-3, 10.0).unwrap();
        let fit = rep.fit.unwrap();
        assert!((fit.slope + 2.0).abs() < 0.2, "slope {}", fit.slope);
        let same = riccati_contraction_report(&Mat::identity(2, 2), &Mat::identity(2, 2), &model, 1e-2, 1.0).unwrap();
        assert!(same.differences.iter().all(|d| *d == 0.0));
        assert!(same.fit.is_none());
    }

    #[test]
    fn monotone_tail_below_steady_state() {
        let model = appendix();
        let p = solve_are(&model).unwrap().p;
        let p0 = &p * 0.5;
        let traj = integrate_riccati(&p0, &model, 1e-3, 8.0).unwrap();
        assert!(traj.covariances.iter().all(|q| q.trace() <= p.trace() + 1e-8));
    }

    fn arb_stable_isotropic() -> impl Strategy<Value = Model> {
        (
            proptest::collection::vec(-1.0f64..1.0, 4),
            0.3f64..2.0,
            proptest::collection::vec(-1.0f64..1.0, 4),
            0.2f64..3.0,
        )
            .prop_map(|(a, shift, l, rho)| {
                let mut a = m(2, 2, &a);
                let mu = log_norm(&a).unwrap();
                a -= Mat::identity(2, 2) * (mu + shift);
                let l = m(2, 2, &l);
                let r = &l * l.transpose() + Mat::identity(2, 2) * 0.1;
                LinearGaussianModel::centered(a, Mat::identity(2, 2) * rho.sqrt(), r, Mat::identity(2, 2))
                    .validate()
                    .unwrap()
            })
    }

    fn arb_psd() -> impl Strategy<Value = Mat> {
        proptest::collection::vec(-2.0f64..2.0, 4).prop_map(|v| {
            let l = m(2, 2, &v);
            &l * l.transpose()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn scalar_closed_form_bound(
            a in -2.0f64..2.0, s in 0.1f64..3.0, r in 0.0f64..3.0, p0 in 0.0f64..10.0, t in 0.0f64..5.0
        ) {
            let d = (a * a + s * r).sqrt();
            prop_assume!(d > 1e-3);
            let z2 = (a + d) / s;
            let p = scalar_riccati_closed_form(p0, a, s, r, t).unwrap();
            prop_assert!(p >= -1e-12);
            prop_assert!(p <= z2 + (p0 - z2).max(0.0) * (-2.0 * t * d).exp() + 1e-10);
        }

        #[test]
        fn contraction_under_isotropic_sensor(model in arb_stable_isotropic(), p0 in arb_psd(), q0 in arb_psd()) {
            let mu = log_norm(model.drift()).unwrap();
            let rep = riccati_contraction_report(&p0, &q0, &model, 1e-2, 3.0).unwrap();
            let d0 = rep.differences[0];
            for (t, d) in rep.times.iter().zip(&rep.differences) {
                prop_assert!(*d <= (2.0 * mu * t).exp() * d0 * (1.0 + 1e-9) + 1e-12);
            }
        }

        #[test]
        fn trace_below_scalar_majorant(model in arb_stable_isotropic(), p0 in arb_psd()) {
            let traj = integrate_riccati(&p0, &model, 1e-2, 4.0).unwrap();
            for (t, p) in traj.times.iter().zip(&traj.covariances) {
                prop_assert!(p.trace() <= trace_bound(&p0, &model, *t).unwrap() + 1e-6);
            }
        }

        #[test]
        fn triangle_inequality_at_steady_state(model in arb_stable_isotropic()) {
            let rho = isotropy_check(model.sensor_gram()).unwrap();
            let p = solve_are(&model).unwrap().p;
            let mu_a = log_norm(model.drift()).unwrap();
            let mu_closed = log_norm(&(model.drift() - &p * model.sensor_gram())).unwrap();
            prop_assert!(mu_a - rho * lambda_max_sym(&p).unwrap() <= mu_closed + 1e-9);
            prop_assert!(mu_closed <= mu_a - rho * lambda_min_sym(&p).unwrap() + 1e-9);
        }
    }
}
