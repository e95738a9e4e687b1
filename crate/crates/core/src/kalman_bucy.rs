//! Signal/observation paths, the Kalman-Bucy filter, the conditional
//! McKean-Vlasov diffusion and perturbed observers.
//!
//! All schemes are Euler-Maruyama on a uniform grid. Every agent (signal,
//! particle, copy) reads its own keyed stream in the same order: the initial
//! state first, then at each step `r1` normals for `W` followed by `r2`
//! normals for `V`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{log_norm, psd_eigen, Mat, Vector};
use crate::model::{GaussianLaw, Model};
use crate::riccati::{solve_are, step_count, RiccatiTrajectory};
use crate::rng::{NormalStream, Role, StreamKey};

/// Row-major copies of the model matrices for allocation-free stepping.
#[derive(Debug, Clone)]
pub(crate) struct StepKernel {
    pub r1: usize,
    pub r2: usize,
    pub dt: f64,
    sqrt_dt: f64,
    drift: Vec<f64>,
    drift_offset: Vec<f64>,
    sensor: Vec<f64>,
    sensor_offset: Vec<f64>,
    signal_sqrt: Vec<f64>,
    obs_sqrt: Vec<f64>,
    gain_factor: Mat,
}

fn row_major(m: &Mat) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[inline]
fn mat_vec(m: &[f64], cols: usize, x: &[f64], i: usize) -> f64 {
    let row = &m[i * cols..(i + 1) * cols];
    row.iter().zip(x).map(|(a, b)| a * b).sum()
}

impl StepKernel {
    pub fn new(model: &Model, dt: f64) -> Self {
        Self {
            r1: model.state_dim(),
            r2: model.obs_dim(),
            dt,
            sqrt_dt: dt.sqrt(),
            drift: row_major(model.drift()),
            drift_offset: model.drift_offset().as_slice().to_vec(),
            sensor: row_major(model.sensor()),
            sensor_offset: model.sensor_offset().as_slice().to_vec(),
            signal_sqrt: row_major(model.signal_noise_sqrt()),
            obs_sqrt: row_major(model.observation_noise_sqrt()),
            gain_factor: model.gain_factor().clone(),
        }
    }

    /// Row-major `P C' R2^{-1}`.
    pub fn gain(&self, p: &Mat) -> Vec<f64> {
        row_major(&(p * &self.gain_factor))
    }

    /// Brownian increments for one step, `W` then `V`.
    #[inline]
    pub fn draw(&self, stream: &mut NormalStream, dw: &mut [f64], dv: &mut [f64]) {
        for x in dw.iter_mut() {
            *x = self.sqrt_dt * stream.normal();
        }
        for x in dv.iter_mut() {
            *x = self.sqrt_dt * stream.normal();
        }
    }

    /// `(C x + c) dt + R2^{1/2} dv`.
    #[inline]
    pub fn observe(&self, x: &[f64], dv: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (mat_vec(&self.sensor, self.r1, x, i) + self.sensor_offset[i]) * self.dt
                + mat_vec(&self.obs_sqrt, self.r2, dv, i);
        }
    }

    /// `x <- x + (A x + a) dt + R1^{1/2} dw`.
    #[inline]
    pub fn signal_step(&self, x: &mut [f64], dw: &[f64], scratch: &mut [f64]) {
        for (i, s) in scratch.iter_mut().enumerate().take(self.r1) {
            *s = (mat_vec(&self.drift, self.r1, x, i) + self.drift_offset[i]) * self.dt
                + mat_vec(&self.signal_sqrt, self.r1, dw, i);
        }
        for (xi, s) in x.iter_mut().zip(scratch.iter()) {
            *xi += s;
        }
    }

    /// One particle step: signal move plus the gain times the innovation
    /// `dY - ((C x + c) dt + R2^{1/2} dv)`, both evaluated at the old state.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn particle_step(
        &self,
        x: &mut [f64],
        dy: &[f64],
        dw: &[f64],
        dv: &[f64],
        gain: Option<&[f64]>,
        scratch: &mut [f64],
        innovation: &mut [f64],
    ) {
        if let Some(gain) = gain {
            self.observe(x, dv, innovation);
            for (v, y) in innovation.iter_mut().zip(dy) {
                *v = y - *v;
            }
            self.signal_step(x, dw, scratch);
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += mat_vec(gain, self.r2, innovation, i);
            }
        } else {
            self.signal_step(x, dw, scratch);
        }
    }

    /// Deterministic filter-mean step
    /// `x <- x + (A x + a) dt + G (dY - (C x + c) dt)`.
    #[inline]
    pub fn mean_step(&self, x: &mut [f64], dy: &[f64], gain: &[f64], scratch: &mut [f64], innovation: &mut [f64]) {
        for (i, v) in innovation.iter_mut().enumerate() {
            *v = dy[i] - (mat_vec(&self.sensor, self.r1, x, i) + self.sensor_offset[i]) * self.dt;
        }
        for (i, s) in scratch.iter_mut().enumerate().take(self.r1) {
            *s = (mat_vec(&self.drift, self.r1, x, i) + self.drift_offset[i]) * self.dt
                + mat_vec(gain, self.r2, innovation, i);
        }
        for (xi, s) in x.iter_mut().zip(scratch.iter()) {
            *xi += s;
        }
    }
}

impl StepKernel {
    /// Observer error step
    /// `e <- e + A e dt - R1^{1/2} dw + G (R2^{1/2} dv - C e dt)`.
    #[inline]
    pub fn error_step(
        &self,
        e: &mut [f64],
        dw: &[f64],
        dv: &[f64],
        gain: &[f64],
        scratch: &mut [f64],
        innovation: &mut [f64],
    ) {
        for (i, v) in innovation.iter_mut().enumerate() {
            *v = mat_vec(&self.obs_sqrt, self.r2, dv, i) - mat_vec(&self.sensor, self.r1, e, i) * self.dt;
        }
        for (i, s) in scratch.iter_mut().enumerate().take(self.r1) {
            *s = mat_vec(&self.drift, self.r1, e, i) * self.dt - mat_vec(&self.signal_sqrt, self.r1, dw, i)
                + mat_vec(gain, self.r2, innovation, i);
        }
        for (ei, s) in e.iter_mut().zip(scratch.iter()) {
            *ei += s;
        }
    }
}

/// Gain is skipped when identically zero so blind-sensor particles reproduce
/// signal legs bit for bit.
pub(crate) fn nonzero(gain: &[f64]) -> Option<&[f64]> {
    gain.iter().any(|g| *g != 0.0).then_some(gain)
}

/// One realization of `(X, Y, W, V)` on a uniform grid; `Y_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub dt: f64,
    pub steps: usize,
    /// `r1 x (steps + 1)`, column `k` is `X_{k dt}`.
    pub signal: Mat,
    /// `r2 x steps`.
    pub dy: Mat,
    /// `r1 x steps`, unscaled Brownian increments.
    pub dw: Mat,
    /// `r2 x steps`.
    pub dv: Mat,
}

impl PathBundle {
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn state(&self, k: usize) -> Vector {
        self.signal.column(k).into_owned()
    }
}

/// Euler-Maruyama path of the signal and observation increments.
pub fn simulate_signal_observation(
    model: &Model,
    x0_law: &GaussianLaw,
    dt: f64,
    horizon: f64,
    key: StreamKey,
) -> Result<PathBundle> {
    let steps = step_count(dt, horizon)?;
    if x0_law.dim() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "initial law has dimension {}, state has {}",
            x0_law.dim(),
            model.state_dim()
        )));
    }
    let kernel = StepKernel::new(model, dt);
    let (r1, r2) = (kernel.r1, kernel.r2);
    let mut stream = key.rng();
    let x0 = x0_law.sampler()?.sample(&mut stream);
    let mut signal = Mat::zeros(r1, steps + 1);
    let mut dy = Mat::zeros(r2, steps);
    let mut dw = Mat::zeros(r1, steps);
    let mut dv = Mat::zeros(r2, steps);
    let mut x = x0.as_slice().to_vec();
    let mut scratch = vec![0.0; r1];
    let mut w = vec![0.0; r1];
    let mut v = vec![0.0; r2];
    let mut y = vec![0.0; r2];
    signal.column_mut(0).copy_from_slice(&x);
    for k in 0..steps {
        kernel.draw(&mut stream, &mut w, &mut v);
        kernel.observe(&x, &v, &mut y);
        kernel.signal_step(&mut x, &w, &mut scratch);
        signal.column_mut(k + 1).copy_from_slice(&x);
        dy.column_mut(k).copy_from_slice(&y);
        dw.column_mut(k).copy_from_slice(&w);
        dv.column_mut(k).copy_from_slice(&v);
    }
    Ok(PathBundle {
        dt,
        steps,
        signal,
        dy,
        dw,
        dv,
    })
}

/// Covariance attached to a filter run.
#[derive(Debug, Clone)]
pub enum FilterCovariance {
    Flow(Arc<RiccatiTrajectory>),
    Steady(Mat),
}

impl FilterCovariance {
    pub fn at(&self, k: usize) -> &Mat {
        match self {
            Self::Flow(traj) => &traj.covariances[k],
            Self::Steady(p) => p,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterTrajectory {
    pub dt: f64,
    /// `r1 x (steps + 1)`.
    pub means: Mat,
    pub covariance: FilterCovariance,
}

impl FilterTrajectory {
    pub fn steps(&self) -> usize {
        self.means.ncols() - 1
    }

    pub fn mean(&self, k: usize) -> Vector {
        self.means.column(k).into_owned()
    }
}

pub(crate) fn check_grid(paths: &PathBundle, traj: &RiccatiTrajectory) -> Result<()> {
    if (traj.dt - paths.dt).abs() > 1e-15 * paths.dt || traj.steps() < paths.steps {
        return Err(Error::GridMismatch(format!(
            "paths use dt = {} over {} steps, covariance uses dt = {} over {} steps",
            paths.dt,
            paths.steps,
            traj.dt,
            traj.steps()
        )));
    }
    Ok(())
}

fn run_mean(model: &Model, paths: &PathBundle, x0: &Vector, covariance: FilterCovariance) -> Result<FilterTrajectory> {
    if x0.len() != model.state_dim() || paths.signal.nrows() != model.state_dim() {
        return Err(Error::Dimension(
            "initial mean and paths must match the state dimension".into(),
        ));
    }
    let kernel = StepKernel::new(model, paths.dt);
    let mut means = Mat::zeros(kernel.r1, paths.steps + 1);
    let mut x = x0.as_slice().to_vec();
    let mut scratch = vec![0.0; kernel.r1];
    let mut innovation = vec![0.0; kernel.r2];
    means.column_mut(0).copy_from_slice(&x);
    let steady_gain = match &covariance {
        FilterCovariance::Steady(p) => Some(kernel.gain(p)),
        FilterCovariance::Flow(_) => None,
    };
    for k in 0..paths.steps {
        let gain = match &steady_gain {
            Some(g) => g.clone(),
            None => kernel.gain(covariance.at(k)),
        };
        kernel.mean_step(
            &mut x,
            paths.dy.column(k).as_slice(),
            &gain,
            &mut scratch,
            &mut innovation,
        );
        means.column_mut(k + 1).copy_from_slice(&x);
    }
    Ok(FilterTrajectory {
        dt: paths.dt,
        means,
        covariance,
    })
}

/// Euler scheme for the filter mean driven by the gain `P_t C' R2^{-1}`.
pub fn kalman_bucy_filter(
    model: &Model,
    paths: &PathBundle,
    x0: &Vector,
    covariances: Arc<RiccatiTrajectory>,
) -> Result<FilterTrajectory> {
    check_grid(paths, &covariances)?;
    run_mean(model, paths, x0, FilterCovariance::Flow(covariances))
}

/// Filter with the constant gain of the algebraic Riccati solution.
pub fn steady_state_filter(model: &Model, paths: &PathBundle, x0: &Vector) -> Result<FilterTrajectory> {
    let p = solve_are(model)?.p;
    run_mean(model, paths, x0, FilterCovariance::Steady(p))
}

/// Filter with a caller-supplied constant covariance.
pub fn constant_gain_filter(model: &Model, paths: &PathBundle, x0: &Vector, p: &Mat) -> Result<FilterTrajectory> {
    run_mean(model, paths, x0, FilterCovariance::Steady(p.clone()))
}

/// Snapshots of `M` conditional copies of the Kalman-Bucy diffusion.
#[derive(Debug, Clone)]
pub struct DiffusionSample {
    pub times: Vec<f64>,
    pub steps: Vec<usize>,
    /// `r1 x M` per recorded time.
    pub snapshots: Vec<Mat>,
}

/// Copies `dX = (A X + a) dt + R1^{1/2} dW + P_t C' R2^{-1} [dY - ((C X + c) dt + R2^{1/2} dV)]`
/// sharing the observation path of `paths`, each with independent
/// `(X_0, W, V)` streams keyed by `key` with role [`Role::Copy`].
///
/// States are recorded every `record_stride` steps and at the final step.
pub fn kb_diffusion_sample(
    model: &Model,
    paths: &PathBundle,
    x0_law: &GaussianLaw,
    covariances: &RiccatiTrajectory,
    copies: usize,
    key: StreamKey,
    record_stride: usize,
) -> Result<DiffusionSample> {
    check_grid(paths, covariances)?;
    if copies == 0 {
        return Err(Error::Empty("copies"));
    }
    let stride = record_stride.max(1);
    let kernel = StepKernel::new(model, paths.dt);
    let (r1, r2) = (kernel.r1, kernel.r2);
    let sampler = x0_law.sampler()?;
    let mut streams: Vec<NormalStream> = (0..copies)
        .map(|i| key.with_role(Role::Copy).with_index(i as u64).rng())
        .collect();
    let mut states = Mat::zeros(r1, copies);
    for (i, s) in streams.iter_mut().enumerate() {
        states.set_column(i, &sampler.sample(s));
    }
    let mut out = DiffusionSample {
        times: vec![0.0],
        steps: vec![0],
        snapshots: vec![states.clone()],
    };
    let (mut w, mut v) = (vec![0.0; r1], vec![0.0; r2]);
    let (mut scratch, mut innovation) = (vec![0.0; r1], vec![0.0; r2]);
    for k in 0..paths.steps {
        let gain = kernel.gain(&covariances.covariances[k]);
        let gain = nonzero(&gain);
        let dy = paths.dy.column(k);
        for (x, stream) in states.as_mut_slice().chunks_exact_mut(r1).zip(streams.iter_mut()) {
            kernel.draw(stream, &mut w, &mut v);
            kernel.particle_step(x, dy.as_slice(), &w, &v, gain, &mut scratch, &mut innovation);
        }
        if (k + 1) % stride == 0 || k + 1 == paths.steps {
            out.times.push(paths.time(k + 1));
            out.steps.push(k + 1);
            out.snapshots.push(states.clone());
        }
    }
    Ok(out)
}

/// Perturbation flow `t -> Q_t` of the observer covariance.
pub enum QFlow {
    Constant(Mat),
    Flow(Box<dyn Fn(f64) -> Mat + Send + Sync>),
}

impl std::fmt::Debug for QFlow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant(q) => f.debug_tuple("Constant").field(q).finish(),
            Self::Flow(_) => f.write_str("Flow(..)"),
        }
    }
}

impl QFlow {
    pub fn at(&self, t: f64) -> Mat {
        match self {
            Self::Constant(q) => q.clone(),
            Self::Flow(f) => f(t),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ObserverOptions {
    /// `|Z_t - X_t|` level counted as divergence.
    pub divergence_threshold: f64,
    /// Stop integrating at the first crossing.
    pub stop_on_divergence: bool,
}

impl Default for ObserverOptions {
    fn default() -> Self {
        Self {
            divergence_threshold: 1e6,
            stop_on_divergence: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObserverRun {
    pub times: Vec<f64>,
    /// `r1 x (recorded steps + 1)`.
    pub path: Mat,
    /// `|Z_t - X_t|` at each recorded step.
    pub error_norms: Vec<f64>,
    /// Running left-point integral of `mu(A - P S - Q_s S)`.
    pub log_norm_integral: Vec<f64>,
    pub first_crossing: Option<f64>,
}

impl ObserverRun {
    pub fn diverged(&self) -> bool {
        self.first_crossing.is_some()
    }

    pub fn max_error(&self) -> f64 {
        self.error_norms.iter().copied().fold(0.0, f64::max)
    }
}

fn check_admissible(p: &Mat, q: &Mat, t: f64) -> Result<()> {
    let total = p + q;
    match psd_eigen(&total) {
        Ok(_) => Ok(()),
        Err(Error::NotPositiveSemiDefinite { min_eigenvalue }) => {
            Err(Error::InadmissiblePerturbation { t, min_eigenvalue })
        }
        Err(e) => Err(e),
    }
}

struct GainSchedule<'a> {
    p: &'a Mat,
    q_flow: &'a QFlow,
    sensor_gram: &'a Mat,
    closed: Mat,
    constant: Option<(Vec<f64>, f64)>,
}

impl<'a> GainSchedule<'a> {
    fn new(model: &'a Model, kernel: &StepKernel, p: &'a Mat, q_flow: &'a QFlow) -> Result<Self> {
        let closed = model.drift() - p * model.sensor_gram();
        let constant = match q_flow {
            QFlow::Constant(q) => {
                check_admissible(p, q, 0.0)?;
                Some((kernel.gain(&(p + q)), log_norm(&(&closed - q * model.sensor_gram()))?))
            }
            QFlow::Flow(_) => None,
        };
        Ok(Self {
            p,
            q_flow,
            sensor_gram: model.sensor_gram(),
            closed,
            constant,
        })
    }

    /// Gain `(P + Q_t) C' R2^{-1}` and `mu(A - (P + Q_t) S)`.
    fn at(&self, kernel: &StepKernel, t: f64) -> Result<(Vec<f64>, f64)> {
        match &self.constant {
            Some((g, mu)) => Ok((g.clone(), *mu)),
            None => {
                let q = self.q_flow.at(t);
                check_admissible(self.p, &q, t)?;
                Ok((
                    kernel.gain(&(self.p + &q)),
                    log_norm(&(&self.closed - &q * self.sensor_gram))?,
                ))
            }
        }
    }
}

/// Shared loop: `advance(k, gain)` moves the state one step and returns
/// `(state, |Z - X|)`.
fn observer_loop(
    kernel: &StepKernel,
    schedule: &GainSchedule,
    steps: usize,
    start: &[f64],
    start_error: f64,
    options: ObserverOptions,
    mut advance: impl FnMut(usize, &[f64]) -> (Vec<f64>, f64),
) -> Result<ObserverRun> {
    let dt = kernel.dt;
    let mut run = ObserverRun {
        times: vec![0.0],
        path: Mat::zeros(kernel.r1, steps + 1),
        error_norms: vec![start_error],
        log_norm_integral: vec![0.0],
        first_crossing: None,
    };
    run.path.column_mut(0).copy_from_slice(start);
    let mut integral = 0.0;
    let mut recorded = 0;
    for k in 0..steps {
        let (gain, mu) = schedule.at(kernel, k as f64 * dt)?;
        let (state, e) = advance(k, &gain);
        integral += mu * dt;
        recorded = k + 1;
        let t = (k + 1) as f64 * dt;
        run.path.column_mut(k + 1).copy_from_slice(&state);
        run.times.push(t);
        run.error_norms.push(e);
        run.log_norm_integral.push(integral);
        if run.first_crossing.is_none() && !(e <= options.divergence_threshold) {
            run.first_crossing = Some(t);
            if options.stop_on_divergence {
                break;
            }
        }
        if !e.is_finite() {
            break;
        }
    }
    run.path = run.path.columns(0, recorded + 1).into_owned();
    Ok(run)
}

/// Observer `dZ = (A Z + a) dt + (P + Q_t) C' R2^{-1} (dY - (C Z + c) dt)`.
pub fn stochastic_observer(
    model: &Model,
    p: &Mat,
    q_flow: &QFlow,
    paths: &PathBundle,
    z0: &Vector,
    options: ObserverOptions,
) -> Result<ObserverRun> {
    let kernel = StepKernel::new(model, paths.dt);
    if z0.len() != kernel.r1 {
        return Err(Error::Dimension("observer start must match the state dimension".into()));
    }
    let schedule = GainSchedule::new(model, &kernel, p, q_flow)?;
    let error = |z: &[f64], k: usize| -> f64 {
        z.iter()
            .zip(paths.signal.column(k).iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut z = z0.as_slice().to_vec();
    let mut scratch = vec![0.0; kernel.r1];
    let mut innovation = vec![0.0; kernel.r2];
    let start_error = error(&z, 0);
    let kern = &kernel;
    observer_loop(
        kern,
        &schedule,
        paths.steps,
        z0.as_slice(),
        start_error,
        options,
        |k, gain| {
            kern.mean_step(
                &mut z,
                paths.dy.column(k).as_slice(),
                gain,
                &mut scratch,
                &mut innovation,
            );
            (z.clone(), error(&z, k + 1))
        },
    )
}

/// Error `E_t = Z_t - X_t` of the perturbed observer, integrated directly:
/// `dE = (A - (P + Q_t) S) E dt - R1^{1/2} dW + (P + Q_t) C' R2^{-1} R2^{1/2} dV`.
///
/// Reads the same stream as [`simulate_signal_observation`] with the same
/// key, so it is the error of [`stochastic_observer`] on those paths, without
/// the cancellation of subtracting two large states when `A` is unstable.
/// `path` holds `E_t`.
#[allow(clippy::too_many_arguments)]
pub fn observer_error_run(
    model: &Model,
    p: &Mat,
    q_flow: &QFlow,
    x0_law: &GaussianLaw,
    z0: &Vector,
    dt: f64,
    horizon: f64,
    key: StreamKey,
    options: ObserverOptions,
) -> Result<ObserverRun> {
    let steps = step_count(dt, horizon)?;
    let kernel = StepKernel::new(model, dt);
    if z0.len() != kernel.r1 || x0_law.dim() != kernel.r1 {
        return Err(Error::Dimension("observer start must match the state dimension".into()));
    }
    let schedule = GainSchedule::new(model, &kernel, p, q_flow)?;
    let mut stream = key.rng();
    let x0 = x0_law.sampler()?.sample(&mut stream);
    let mut e: Vec<f64> = z0.iter().zip(x0.iter()).map(|(z, x)| z - x).collect();
    let start = e.clone();
    let norm = |e: &[f64]| e.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (mut w, mut v) = (vec![0.0; kernel.r1], vec![0.0; kernel.r2]);
    let mut scratch = vec![0.0; kernel.r1];
    let mut innovation = vec![0.0; kernel.r2];
    let kern = &kernel;
    observer_loop(kern, &schedule, steps, &start, norm(&start), options, |_, gain| {
        kern.draw(&mut stream, &mut w, &mut v);
        kern.error_step(&mut e, &w, &v, gain, &mut scratch, &mut innovation);
        (e.clone(), norm(&e))
    })
}

/// `|x - y|_2` column by column.
pub fn column_distances(a: &Mat, b: &Mat) -> Vec<f64> {
    a.column_iter()
        .zip(b.column_iter())
        .map(|(x, y)| (x - y).norm())
        .collect()
}

/// Sample mean and unbiased sample covariance of the columns of `states`.
pub fn column_stats(states: &Mat) -> (Vector, Mat) {
    let n = states.ncols();
    let r = states.nrows();
    let mean = states.column_mean();
    let mut cov = Mat::zeros(r, r);
    if n > 1 {
        for col in states.column_iter() {
            let d = col - &mean;
            cov += &d * d.transpose();
        }
        cov /= (n - 1) as f64;
    }
    (mean, cov)
}

/// Entrywise Monte Carlo standard errors of a sample covariance, estimated
/// from fourth moments.
pub fn covariance_standard_errors(states: &Mat) -> Mat {
    let n = states.ncols();
    let r = states.nrows();
    let mean = states.column_mean();
    let mut m2 = Mat::zeros(r, r);
    let mut m4 = Mat::zeros(r, r);
    for col in states.column_iter() {
        let d = col - &mean;
        for i in 0..r {
            for j in 0..r {
                let v = d[i] * d[j];
                m2[(i, j)] += v;
                m4[(i, j)] += v * v;
            }
        }
    }
    let nf = n as f64;
    Mat::from_fn(r, r, |i, j| {
        let mu = m2[(i, j)] / nf;
        let var = (m4[(i, j)] / nf - mu * mu).max(0.0);
        (var / nf).sqrt()
    })
}
