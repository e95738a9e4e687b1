//! Ensemble Kalman-Bucy filter
//!
//! ```text
//! dξ^i = (A ξ^i + a) dt + R1^{1/2} dW^i + p_t C' R2^{-1} [dY - ((C ξ^i + c) dt + R2^{1/2} dV^i)]
//! ```
//!
//! with `p_t` the unbiased sample covariance of the ensemble, frozen over each
//! Euler step.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kalman_bucy::{check_grid, nonzero, PathBundle, StepKernel};
use crate::linalg::{frobenius, Mat, Vector};
use crate::model::{GaussianLaw, Model};
use crate::riccati::RiccatiTrajectory;
use crate::rng::{NormalStream, Role, StreamKey};

/// Norm of `p_t` flagged as catastrophic divergence.
pub const CATASTROPHIC_NORM: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub time: f64,
    /// `r1 x N`, one particle per column.
    pub states: Mat,
}

impl Ensemble {
    pub fn new(states: Mat, time: f64) -> Result<Self> {
        if states.ncols() == 0 || states.nrows() == 0 {
            return Err(Error::Empty("ensemble"));
        }
        Ok(Self { time, states })
    }

    pub fn size(&self) -> usize {
        self.states.ncols()
    }

    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    /// Draws `n` independent particles with the given law.
    pub fn sample(law: &GaussianLaw, n: usize, key: StreamKey) -> Result<Self> {
        let sampler = law.sampler()?;
        let mut states = Mat::zeros(law.dim(), n);
        for i in 0..n {
            let mut s = key.with_index(i as u64).rng();
            states.set_column(i, &sampler.sample(&mut s));
        }
        Self::new(states, 0.0)
    }
}

/// Mean and unbiased covariance of column-major particle states.
pub(crate) fn stats_into(states: &[f64], r: usize, mean: &mut [f64], cov: &mut Mat) {
    let n = states.len() / r;
    mean.iter_mut().for_each(|m| *m = 0.0);
    for x in states.chunks_exact(r) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    cov.fill(0.0);
    if n < 2 {
        return;
    }
    for x in states.chunks_exact(r) {
        for j in 0..r {
            let dj = x[j] - mean[j];
            for i in j..r {
                cov[(i, j)] += (x[i] - mean[i]) * dj;
            }
        }
    }
    let w = 1.0 / (n - 1) as f64;
    for j in 0..r {
        for i in j..r {
            let v = cov[(i, j)] * w;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
}

/// `(m, p)` with `p = (N-1)^{-1} sum (ξ^i - m)(ξ^i - m)'`; `p = 0` for `N = 1`.
pub fn sample_stats(e: &Ensemble) -> (Vector, Mat) {
    let r = e.dim();
    let mut mean = vec![0.0; r];
    let mut cov = Mat::zeros(r, r);
    stats_into(e.states.as_slice(), r, &mut mean, &mut cov);
    (Vector::from_vec(mean), cov)
}

#[derive(Debug, Clone, Copy)]
pub struct EnkfOptions {
    /// Record `(m_t, p_t)` every this many steps (and at the end).
    pub record_stride: usize,
    pub stop_on_divergence: bool,
}

impl Default for EnkfOptions {
    fn default() -> Self {
        Self {
            record_stride: 1,
            stop_on_divergence: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnkfRun {
    pub times: Vec<f64>,
    pub means: Vec<Vector>,
    pub covariances: Vec<Mat>,
    pub final_ensemble: Ensemble,
    /// First time `|p_t|_F` exceeded [`CATASTROPHIC_NORM`].
    pub divergence: Option<f64>,
}

struct Particles {
    r1: usize,
    states: Mat,
    streams: Vec<NormalStream>,
    w: Vec<f64>,
    v: Vec<f64>,
    scratch: Vec<f64>,
    innovation: Vec<f64>,
}

impl Particles {
    /// Particle `i` reads stream `key.with_role(Particle).with_index(i)`.
    fn init(kernel: &StepKernel, law: &GaussianLaw, n: usize, key: StreamKey) -> Result<Self> {
        if law.dim() != kernel.r1 {
            return Err(Error::Dimension(format!(
                "initial law has dimension {}, state has {}",
                law.dim(),
                kernel.r1
            )));
        }
        if n == 0 {
            return Err(Error::Empty("ensemble"));
        }
        let sampler = law.sampler()?;
        let mut streams: Vec<NormalStream> = (0..n)
            .map(|i| key.with_role(Role::Particle).with_index(i as u64).rng())
            .collect();
        let mut states = Mat::zeros(kernel.r1, n);
        for (i, s) in streams.iter_mut().enumerate() {
            states.set_column(i, &sampler.sample(s));
        }
        Ok(Self {
            r1: kernel.r1,
            states,
            streams,
            w: vec![0.0; kernel.r1],
            v: vec![0.0; kernel.r2],
            scratch: vec![0.0; kernel.r1],
            innovation: vec![0.0; kernel.r2],
        })
    }

    fn step(&mut self, kernel: &StepKernel, dy: &[f64], gain: Option<&[f64]>) {
        for (x, stream) in self
            .states
            .as_mut_slice()
            .chunks_exact_mut(self.r1)
            .zip(self.streams.iter_mut())
        {
            kernel.draw(stream, &mut self.w, &mut self.v);
            kernel.particle_step(x, dy, &self.w, &self.v, gain, &mut self.scratch, &mut self.innovation);
        }
    }
}

/// Runs the EnKF on the observation increments of `paths`.
pub fn enkf_run(
    model: &Model,
    paths: &PathBundle,
    x0_law: &GaussianLaw,
    n: usize,
    key: StreamKey,
    options: EnkfOptions,
) -> Result<EnkfRun> {
    let kernel = StepKernel::new(model, paths.dt);
    let mut particles = Particles::init(&kernel, x0_law, n, key)?;
    let r1 = kernel.r1;
    let stride = options.record_stride.max(1);
    let mut mean = vec![0.0; r1];
    let mut cov = Mat::zeros(r1, r1);
    stats_into(particles.states.as_slice(), r1, &mut mean, &mut cov);
    let mut run = EnkfRun {
        times: vec![0.0],
        means: vec![Vector::from_column_slice(&mean)],
        covariances: vec![cov.clone()],
        final_ensemble: Ensemble::new(Mat::zeros(r1, 1), 0.0)?,
        divergence: None,
    };
    let mut t_end = 0.0;
    for k in 0..paths.steps {
        let gain = kernel.gain(&cov);
        particles.step(&kernel, paths.dy.column(k).as_slice(), nonzero(&gain));
        stats_into(particles.states.as_slice(), r1, &mut mean, &mut cov);
        t_end = paths.time(k + 1);
        let norm = frobenius(&cov);
        let diverged_now = run.divergence.is_none() && !(norm <= CATASTROPHIC_NORM);
        if diverged_now {
            run.divergence = Some(t_end);
        }
        if (k + 1) % stride == 0 || k + 1 == paths.steps || (diverged_now && options.stop_on_divergence) {
            run.times.push(t_end);
            run.means.push(Vector::from_column_slice(&mean));
            run.covariances.push(cov.clone());
        }
        if diverged_now && options.stop_on_divergence {
            break;
        }
    }
    run.final_ensemble = Ensemble::new(particles.states, t_end)?;
    Ok(run)
}

/// Paired EnKF / reference statistics on identical noise.
#[derive(Debug, Clone, Serialize)]
pub struct CoupledRun {
    pub times: Vec<f64>,
    /// `|ξ^1_t - ζ^1_t|`.
    pub particle_gap: Vec<f64>,
    /// `|p_t - P_t|_F`.
    pub covariance_gap: Vec<f64>,
    /// `m_t - X̂_t`, one entry per recorded time.
    #[serde(skip)]
    pub mean_error: Vec<Vector>,
    pub divergence: Option<f64>,
}

impl CoupledRun {
    pub fn mean_gap(&self) -> Vec<f64> {
        self.mean_error.iter().map(|e| e.norm()).collect()
    }
}

/// Runs the EnKF next to the reference particle `ζ^1`, which uses `P_t` in
/// place of `p_t` and shares the streams and initial state of `ξ^1`, and the
/// Kalman-Bucy mean `X̂_t` started at the mean of `x0_law`.
pub fn coupled_reference_run(
    model: &Model,
    paths: &PathBundle,
    x0_law: &GaussianLaw,
    covariances: &RiccatiTrajectory,
    n: usize,
    key: StreamKey,
    record_stride: usize,
) -> Result<CoupledRun> {
    check_grid(paths, covariances)?;
    let kernel = StepKernel::new(model, paths.dt);
    let r1 = kernel.r1;
    let mut particles = Particles::init(&kernel, x0_law, n, key)?;
    let stride = record_stride.max(1);
    // ζ^1 replays the stream of ξ^1.
    let mut ref_stream = key.with_role(Role::Particle).with_index(0).rng();
    let _ = x0_law.sampler()?.sample(&mut ref_stream);
    let mut zeta = particles.states.column(0).iter().copied().collect::<Vec<_>>();
    let mut xhat = x0_law.mean.as_slice().to_vec();
    let (mut w, mut v) = (vec![0.0; r1], vec![0.0; kernel.r2]);
    let (mut scratch, mut innovation) = (vec![0.0; r1], vec![0.0; kernel.r2]);

    let mut mean = vec![0.0; r1];
    let mut cov = Mat::zeros(r1, r1);
    stats_into(particles.states.as_slice(), r1, &mut mean, &mut cov);
    let gap = |xi: &[f64], z: &[f64]| xi.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let mut run = CoupledRun {
        times: vec![0.0],
        particle_gap: vec![gap(particles.states.column(0).as_slice(), &zeta)],
        covariance_gap: vec![frobenius(&(&cov - &covariances.covariances[0]))],
        mean_error: vec![Vector::from_iterator(r1, mean.iter().zip(&xhat).map(|(a, b)| a - b))],
        divergence: None,
    };
    for k in 0..paths.steps {
        let dy = paths.dy.column(k);
        let gain = kernel.gain(&cov);
        particles.step(&kernel, dy.as_slice(), nonzero(&gain));
        let ref_gain = kernel.gain(&covariances.covariances[k]);
        kernel.draw(&mut ref_stream, &mut w, &mut v);
        kernel.particle_step(
            &mut zeta,
            dy.as_slice(),
            &w,
            &v,
            nonzero(&ref_gain),
            &mut scratch,
            &mut innovation,
        );
        kernel.mean_step(&mut xhat, dy.as_slice(), &ref_gain, &mut scratch, &mut innovation);
        stats_into(particles.states.as_slice(), r1, &mut mean, &mut cov);
        if run.divergence.is_none() && !(frobenius(&cov) <= CATASTROPHIC_NORM) {
            run.divergence = Some(paths.time(k + 1));
        }
        if (k + 1) % stride == 0 || k + 1 == paths.steps {
            run.times.push(paths.time(k + 1));
            run.particle_gap.push(gap(particles.states.column(0).as_slice(), &zeta));
            run.covariance_gap
                .push(frobenius(&(&cov - &covariances.covariances[k + 1])));
            run.mean_error
                .push(Vector::from_iterator(r1, mean.iter().zip(&xhat).map(|(a, b)| a - b)));
        }
    }
    Ok(run)
}

/// `(alpha, beta, gamma)` drift terms of `d|p - P|_F^2`.
pub fn fluctuation_drift_terms(p: &Mat, p_ref: &Mat, model: &Model) -> (f64, f64, f64) {
    let a = model.drift();
    let s = model.sensor_gram();
    let d = p - p_ref;
    let sum = p + p_ref;
    let inner = a + a.transpose() - (&sum * s + s * &sum) * 0.5;
    let alpha = 2.0 * (inner * &d * &d).trace();
    let sigma = model.signal_noise() + p * s * p;
    let gamma = (&sigma * p).trace();
    let beta = 2.0 * (gamma + sigma.trace() * p.trace());
    (alpha, beta, gamma)
}

/// One bracket comparison.
#[derive(Debug, Clone, Serialize)]
pub struct BracketEntry {
    pub name: String,
    pub empirical: f64,
    pub theoretical: f64,
    pub std_error: f64,
}

impl BracketEntry {
    /// `|empirical - theoretical|` in standard errors.
    pub fn z_score(&self) -> f64 {
        let diff = (self.empirical - self.theoretical).abs();
        if self.std_error > 0.0 {
            diff / self.std_error
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn relative_error(&self) -> f64 {
        (self.empirical - self.theoretical).abs() / self.theoretical.abs().max(1e-300)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BracketReport {
    pub replicas: usize,
    pub dt: f64,
    pub mean_bracket: Vec<BracketEntry>,
    pub covariance_bracket: Vec<BracketEntry>,
    pub norm_bracket: BracketEntry,
}

impl BracketReport {
    pub fn entries(&self) -> impl Iterator<Item = &BracketEntry> {
        self.mean_bracket
            .iter()
            .chain(&self.covariance_bracket)
            .chain(std::iter::once(&self.norm_bracket))
    }

    pub fn max_z_score(&self) -> f64 {
        self.entries().map(BracketEntry::z_score).fold(0.0, f64::max)
    }
}

/// Covariance of two sample series with a delta-method standard error.
fn covariance_estimate(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let c = prods.iter().sum::<f64>() / n;
    let var = prods.iter().map(|v| (v - c).powi(2)).sum::<f64>() / (n - 1.0);
    (c, (var / n).sqrt())
}

/// Brackets of `(m_t, p_t)` and `|p_t - P|_F^2` from `replicas` independent
/// one-step transitions of a frozen ensemble.
///
/// The observation increment is held at `(C m + c) dt` so only the particle
/// noise is random. Empirical (co)variances of the increments, divided by
/// `dt`, are compared to
/// `Cov(sqrt(N) dm) = (R + pSp) dt`,
/// `Cov(sqrt(N-1) dp(k,l), sqrt(N-1) dp(k',l'))` from the four-term formula,
/// and `Var(d|p - P|_F^2) = 4/(N-1) * 4 tr(p (p-P) (R+pSp) (p-P)) dt`.
pub fn bracket_check(
    state: &Ensemble,
    model: &Model,
    p_ref: &Mat,
    dt: f64,
    replicas: usize,
    key: StreamKey,
) -> Result<BracketReport> {
    const MIN_REPLICAS: usize = 1000;
    if replicas < MIN_REPLICAS {
        return Err(Error::InsufficientReplicas {
            got: replicas,
            min: MIN_REPLICAS,
        });
    }
    let r1 = model.state_dim();
    if state.dim() != r1 || p_ref.shape() != (r1, r1) {
        return Err(Error::Dimension(
            "ensemble and reference must match the state dimension".into(),
        ));
    }
    let n = state.size();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "bracket check needs at least two particles".into(),
        ));
    }
    let kernel = StepKernel::new(model, dt);
    let (m0, p0) = sample_stats(state);
    let gain = kernel.gain(&p0);
    let mut dy = vec![0.0; kernel.r2];
    kernel.observe(m0.as_slice(), &vec![0.0; kernel.r2], &mut dy);

    let pairs: Vec<(usize, usize)> = (0..r1).flat_map(|k| (k..r1).map(move |l| (k, l))).collect();
    let mut dm = vec![Vec::with_capacity(replicas); r1];
    let mut dp = vec![Vec::with_capacity(replicas); pairs.len()];
    let mut dnorm = Vec::with_capacity(replicas);
    let norm0 = frobenius(&(&p0 - p_ref)).powi(2);

    let (mut w, mut v) = (vec![0.0; r1], vec![0.0; kernel.r2]);
    let (mut scratch, mut innovation) = (vec![0.0; r1], vec![0.0; kernel.r2]);
    let mut mean = vec![0.0; r1];
    let mut cov = Mat::zeros(r1, r1);
    let mut states = state.states.clone();
    for rep in 0..replicas {
        states.copy_from(&state.states);
        let mut stream = key.with_role(Role::Transition).with_index(rep as u64).rng();
        for x in states.as_mut_slice().chunks_exact_mut(r1) {
            kernel.draw(&mut stream, &mut w, &mut v);
            kernel.particle_step(x, &dy, &w, &v, Some(&gain), &mut scratch, &mut innovation);
        }
        stats_into(states.as_slice(), r1, &mut mean, &mut cov);
        for i in 0..r1 {
            dm[i].push((n as f64).sqrt() * (mean[i] - m0[i]));
        }
        for (j, &(k, l)) in pairs.iter().enumerate() {
            dp[j].push(((n - 1) as f64).sqrt() * (cov[(k, l)] - p0[(k, l)]));
        }
        dnorm.push(frobenius(&(&cov - p_ref)).powi(2) - norm0);
    }

    let sigma = model.signal_noise() + &p0 * model.sensor_gram() * &p0;
    let mut mean_bracket = Vec::new();
    for i in 0..r1 {
        for j in i..r1 {
            let (c, se) = covariance_estimate(&dm[i], &dm[j]);
            mean_bracket.push(BracketEntry {
                name: format!("m({i},{j})"),
                empirical: c / dt,
                theoretical: sigma[(i, j)],
                std_error: se / dt,
            });
        }
    }
    let mut covariance_bracket = Vec::new();
    for (a, &(k, l)) in pairs.iter().enumerate() {
        for (b, &(k2, l2)) in pairs.iter().enumerate().skip(a) {
            let theory = sigma[(k, k2)] * p0[(l, l2)]
                + sigma[(l, l2)] * p0[(k, k2)]
                + sigma[(l2, k)] * p0[(k2, l)]
                + sigma[(l, k2)] * p0[(k, l2)];
            let (c, se) = covariance_estimate(&dp[a], &dp[b]);
            covariance_bracket.push(BracketEntry {
                name: format!("p({k},{l})x p({k2},{l2})"),
                empirical: c / dt,
                theoretical: theory,
                std_error: se / dt,
            });
        }
    }
    let d = &p0 - p_ref;
    let norm_theory = 4.0 / (n - 1) as f64 * 4.0 * (&p0 * &d * &sigma * &d).trace();
    let (c, se) = covariance_estimate(&dnorm, &dnorm);
    Ok(BracketReport {
        replicas,
        dt,
        mean_bracket,
        covariance_bracket,
        norm_bracket: BracketEntry {
            name: "norm".into(),
            empirical: c / dt,
            theoretical: norm_theory,
            std_error: se / dt,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman_bucy::simulate_signal_observation;
    use crate::linalg::{log_norm, numerical_rank};
    use crate::model::LinearGaussianModel;
    use crate::riccati::{integrate_riccati, solve_are};
    use crate::stats::mean_estimate;
    use proptest::prelude::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    fn key(rep: u64) -> StreamKey {
        StreamKey::new(99, rep, Role::Signal)
    }

    fn benchmark() -> Model {
        let a = m(2, 2, &[-1.0, 0.2, -0.2, -1.0]);
        LinearGaussianModel::centered(a, Mat::identity(2, 2), Mat::identity(2, 2), Mat::identity(2, 2))
            .validate()
            .unwrap()
    }

    #[test]
    fn sample_stats_examples() {
        let one = Ensemble::new(m(2, 1, &[1.0, 2.0]), 0.0).unwrap();
        assert_eq!(sample_stats(&one).1, Mat::zeros(2, 2));
        let two = Ensemble::new(m(1, 2, &[0.0, 2.0]), 0.0).unwrap();
        let (mean, p) = sample_stats(&two);
        assert_eq!((mean[0], p[(0, 0)]), (1.0, 2.0));
        let same = Ensemble::new(m(2, 3, &[1.0, 1.0, 1.0, 3.0, 3.0, 3.0]), 0.0).unwrap();
        assert_eq!(sample_stats(&same).1, Mat::zeros(2, 2));
        assert!(Ensemble::new(Mat::zeros(2, 0), 0.0).is_err());
    }

    #[test]
    fn blind_enkf_is_independent_signal_copies() {
        let model = LinearGaussianModel::centered(
            m(2, 2, &[-0.5, 1.0, -1.0, -0.5]),
            Mat::zeros(1, 2),
            m(2, 2, &[1.0, 0.3, 0.3, 0.5]),
            Mat::identity(1, 1),
        )
        .validate()
        .unwrap();
        let law = GaussianLaw::new(v(&[1.0, 0.0]), Mat::identity(2, 2)).unwrap();
        let paths = simulate_signal_observation(&model, &law, 1e-2, 1.0, key(0)).unwrap();
        let run = enkf_run(&model, &paths, &law, 5, key(1), EnkfOptions::default()).unwrap();
        for i in 0..5 {
            let leg =
                simulate_signal_observation(&model, &law, 1e-2, 1.0, key(1).with_role(Role::Particle).with_index(i))
                    .unwrap();
            assert_eq!(
                run.final_ensemble.states.column(i as usize),
                leg.signal.column(leg.steps)
            );
        }
    }

    #[test]
    fn exchangeable_statistics() {
        let model = benchmark();
        let law = GaussianLaw::new(v(&[0.0, 0.0]), Mat::identity(2, 2)).unwrap();
        let paths = simulate_signal_observation(&model, &law, 1e-2, 0.5, key(0)).unwrap();
        let run = enkf_run(&model, &paths, &law, 6, key(3), EnkfOptions::default()).unwrap();
        let mut permuted = run.final_ensemble.states.clone();
        permuted.swap_columns(0, 5);
        permuted.swap_columns(1, 3);
        let (m1, p1) = sample_stats(&run.final_ensemble);
        let (m2, p2) = sample_stats(&Ensemble::new(permuted, 0.5).unwrap());
        assert!((m1 - m2).amax() < 1e-14 && (p1 - p2).amax() < 1e-14);
    }

    #[test]
    fn small_ensembles_are_rank_deficient() {
        let model = LinearGaussianModel::centered(
            Mat::identity(3, 3) * -0.5,
            m(1, 3, &[1.0, 0.0, 0.0]),
            Mat::identity(3, 3),
            Mat::identity(1, 1),
        )
        .validate()
        .unwrap();
        let law = GaussianLaw::new(v(&[0.0, 0.0, 0.0]), Mat::identity(3, 3)).unwrap();
        let paths = simulate_signal_observation(&model, &law, 1e-2, 1.0, key(0)).unwrap();
        let run = enkf_run(&model, &paths, &law, 2, key(4), EnkfOptions::default()).unwrap();
        for p in &run.covariances {
            assert!(numerical_rank(p) <= 1);
            assert_eq!(p, &p.transpose());
        }
    }

    #[test]
    fn forced_reference_equals_particle() {
        // Feeding the reference its own ensemble covariances makes the recursions agree.
        let model = benchmark();
        let law = GaussianLaw::new(v(&[0.3, -0.2]), Mat::identity(2, 2)).unwrap();
        let paths = simulate_signal_observation(&model, &law, 1e-2, 0.5, key(0)).unwrap();
        let enkf = enkf_run(&model, &paths, &law, 4, key(2), EnkfOptions::default()).unwrap();
        let forced = RiccatiTrajectory {
            dt: 1e-2,
            times: enkf.times.clone(),
            covariances: enkf.covariances.clone(),
            residuals: vec![0.0; enkf.times.len()],
        };
        let run = coupled_reference_run(&model, &paths, &law, &forced, 4, key(2), 1).unwrap();
        assert!(run.particle_gap.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn divergence_flag() {
        let model = LinearGaussianModel::centered(m(1, 1, &[30.0]), Mat::zeros(1, 1), m(1, 1, &[1.0]), m(1, 1, &[1.0]))
            .validate()
            .unwrap();
        let law = GaussianLaw::new(v(&[0.0]), m(1, 1, &[1.0])).unwrap();
        let paths = simulate_signal_observation(&model, &law, 1e-2, 2.0, key(0)).unwrap();
        let run = enkf_run(
            &model,
            &paths,
            &law,
            4,
            key(1),
            EnkfOptions {
                record_stride: 10,
                stop_on_divergence: true,
            },
        )
        .unwrap();
        let t = run.divergence.expect("diverges");
        assert!(t < 1.0);
        assert_eq!(*run.times.last().unwrap(), t);
    }

    #[test]
    fn brownian_counterexample_grows_linearly() {
        let model = LinearGaussianModel::centered(m(1, 1, &[0.0]), Mat::zeros(1, 1), m(1, 1, &[1.0]), m(1, 1, &[1.0]))
            .validate()
            .unwrap();
        let law = GaussianLaw::dirac(v(&[0.0]));
        let (n, t, reps) = (8usize, 2.0, 2000u64);
        let traj = integrate_riccati(&Mat::zeros(1, 1), &model, 1e-2, t).unwrap();
        let samples: Vec<f64> = (0..reps)
            .map(|r| {
                let paths = simulate_signal_observation(&model, &law, 1e-2, t, key(r)).unwrap();
                let run = coupled_reference_run(&model, &paths, &law, &traj, n, key(r), 200).unwrap();
                n as f64 * run.mean_error.last().unwrap()[0].powi(2)
            })
            .collect();
        let est = mean_estimate(&samples);
        assert!((est.mean - t).abs() < 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn single_particle_error_is_twice_signal_variance() {
        let model = LinearGaussianModel::centered(m(1, 1, &[-1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]))
            .validate()
            .unwrap();
        let law = GaussianLaw::new(v(&[0.0]), m(1, 1, &[0.5])).unwrap();
        let t = 1.0;
        let samples: Vec<f64> = (0..4000u64)
            .map(|r| {
                let paths = simulate_signal_observation(&model, &law, 1e-2, t, key(r)).unwrap();
                let run = enkf_run(
                    &model,
                    &paths,
                    &law,
                    1,
                    key(r),
                    EnkfOptions {
                        record_stride: 100,
                        stop_on_divergence: false,
                    },
                )
                .unwrap();
                (run.means.last().unwrap()[0] - paths.signal[(0, paths.steps)]).powi(2)
            })
            .collect();
        // Var(X_t) = 0.5 for the stationary OU started at its invariant law.
        let est = mean_estimate(&samples);
        assert!((est.mean - 1.0).abs() < 3.0 * est.std_error + 0.02, "{est:?}");
    }

    #[test]
    fn initial_covariance_error_shrinks_like_inverse_root() {
        let model = benchmark();
        let p = solve_are(&model).unwrap().p;
        let law = GaussianLaw::new(v(&[0.0, 0.0]), p.clone()).unwrap();
        let err = |n: usize| {
            let s: Vec<f64> = (0..400u64)
                .map(|r| {
                    let e = Ensemble::sample(&law, n, key(r).with_role(Role::Auxiliary)).unwrap();
                    frobenius(&(sample_stats(&e).1 - &p))
                })
                .collect();
            mean_estimate(&s).mean
        };
        let ratio = err(16) / err(256);
        assert!((ratio - 4.0).abs() < 0.6, "ratio {ratio}");
    }

    #[test]
    fn bracket_requires_replicas() {
        let model = benchmark();
        let e = Ensemble::new(m(2, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 1.0]), 0.0).unwrap();
        assert!(matches!(
            bracket_check(&e, &model, &Mat::identity(2, 2), 1e-4, 10, key(0)),
            Err(Error::InsufficientReplicas { .. })
        ));
    }

    #[test]
    fn bracket_blind_sensor_mean_term() {
        let model = LinearGaussianModel::centered(
            m(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
            Mat::zeros(1, 2),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        )
        .validate()
        .unwrap();
        let law = GaussianLaw::new(v(&[0.0, 0.0]), Mat::identity(2, 2)).unwrap();
        let e = Ensemble::sample(&law, 6, key(0).with_role(Role::Auxiliary)).unwrap();
        let rep = bracket_check(&e, &model, &Mat::identity(2, 2), 1e-5, 20_000, key(1)).unwrap();
        for b in &rep.mean_bracket {
            assert!(b.z_score() < 4.0, "{b:?}");
        }
        assert_eq!(rep.mean_bracket[0].theoretical, 1.0);
        assert_eq!(rep.mean_bracket[1].theoretical, 0.0);
    }

    #[test]
    fn norm_bracket_vanishes_at_reference() {
        let model = benchmark();
        let law = GaussianLaw::new(v(&[0.0, 0.0]), Mat::identity(2, 2)).unwrap();
        let e = Ensemble::sample(&law, 5, key(0).with_role(Role::Auxiliary)).unwrap();
        let p = sample_stats(&e).1;
        let rep = bracket_check(&e, &model, &p, 1e-5, 2000, key(2)).unwrap();
        let half = bracket_check(&e, &model, &p, 5e-6, 2000, key(2)).unwrap();
        assert_eq!(rep.norm_bracket.theoretical, 0.0);
        // Var of the increment is O(dt^2), so divided by dt it scales like dt.
        let ratio = rep.norm_bracket.empirical / half.norm_bracket.empirical;
        assert!(ratio > 1.5 && ratio < 2.7, "ratio = {ratio}");
    }

    #[test]
    fn scalar_alpha_reduction() {
        let (a, s) = (0.3f64, 2.0f64);
        let model =
            LinearGaussianModel::centered(m(1, 1, &[a]), m(1, 1, &[s.sqrt()]), m(1, 1, &[1.0]), m(1, 1, &[1.0]))
                .validate()
                .unwrap();
        let (p, pr) = (1.7, 0.4);
        let (alpha, _, _) = fluctuation_drift_terms(&m(1, 1, &[p]), &m(1, 1, &[pr]), &model);
        let expected = 2.0 * (2.0 * a - (p + pr) * s) * (p - pr) * (p - pr);
        assert!((alpha - expected).abs() < 1e-12);
        let (alpha0, _, _) = fluctuation_drift_terms(&m(1, 1, &[pr]), &m(1, 1, &[pr]), &model);
        assert_eq!(alpha0, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn alpha_is_bounded_under_isotropic_sensor(
            a in proptest::collection::vec(-1.0f64..1.0, 4),
            rho in 0.1f64..3.0,
            l1 in proptest::collection::vec(-2.0f64..2.0, 4),
            l2 in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            let a = m(2, 2, &a);
            let model = LinearGaussianModel::centered(a.clone(), Mat::identity(2, 2) * rho.sqrt(), Mat::identity(2, 2), Mat::identity(2, 2))
                .validate()
                .unwrap();
            let (l1, l2) = (m(2, 2, &l1), m(2, 2, &l2));
            let p = &l1 * l1.transpose();
            let q = &l2 * l2.transpose();
            let (alpha, _, _) = fluctuation_drift_terms(&p, &q, &model);
            let d = frobenius(&(&p - &q)).powi(2);
            prop_assert!(alpha <= 4.0 * log_norm(&a).unwrap() * d + 1e-9 * (1.0 + d));
        }
    }
}
