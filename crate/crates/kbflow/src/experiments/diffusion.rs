use std::sync::Arc;

use anyhow::{bail, Result};
use kbflow_core::kalman_bucy::{
    column_stats, constant_gain_filter, covariance_standard_errors, kalman_bucy_filter, kb_diffusion_sample,
    simulate_signal_observation,
};
use kbflow_core::metrics::gaussian_relative_entropy;
use kbflow_core::riccati::{integrate_riccati, solve_are};
use kbflow_core::rng::Role;
use kbflow_core::stats::{fit_rate, Scale};
use kbflow_core::{GaussianLaw, Mat, Vector};

use super::{par_map, Context};
use crate::record::Criterion;

const GRID_TIMES: usize = 20;
const PATHS: usize = 2;

struct PathSummary {
    times: Vec<f64>,
    /// `|mean - X̂_t| / (3 sqrt(tr P_t / M))`.
    mean_ratio: Vec<f64>,
    /// Largest `|cov - P_t| / se` over entries.
    cov_z: Vec<f64>,
    covs: Vec<Mat>,
    ses: Vec<Mat>,
}

pub fn kb_diffusion_consistency(ctx: &mut Context) -> Result<()> {
    let model = ctx.model()?.clone();
    let (dt, copies) = (ctx.config.dt, ctx.config.replicas);
    let steps = ctx.steps();
    if steps < GRID_TIMES || !steps.is_multiple_of(GRID_TIMES) {
        bail!("horizon / dt = {steps} must be a multiple of {GRID_TIMES}");
    }
    let r1 = model.state_dim();
    let law = GaussianLaw::new(Vector::zeros(r1), Mat::identity(r1, r1))?;
    let traj = Arc::new(integrate_riccati(&law.cov, &model, dt, ctx.config.horizon)?);
    let (signal_key, copy_key) = (ctx.key(0, Role::Signal), ctx.key(0, Role::Copy));
    let horizon = ctx.config.horizon;
    let summaries = par_map(PATHS, |j| {
        let paths = simulate_signal_observation(&model, &law, dt, horizon, signal_key.with_replica(j as u64))?;
        let filter = kalman_bucy_filter(&model, &paths, &law.mean, traj.clone())?;
        let sample = kb_diffusion_sample(
            &model,
            &paths,
            &law,
            &traj,
            copies,
            copy_key.with_replica(j as u64),
            steps / GRID_TIMES,
        )?;
        let mut out = PathSummary {
            times: Vec::new(),
            mean_ratio: Vec::new(),
            cov_z: Vec::new(),
            covs: Vec::new(),
            ses: Vec::new(),
        };
        for (idx, &k) in sample.steps.iter().enumerate().skip(1) {
            let snap = &sample.snapshots[idx];
            let (mean, cov) = column_stats(snap);
            let se = covariance_standard_errors(snap);
            let p = &traj.covariances[k];
            let band = 3.0 * (p.trace() / copies as f64).sqrt();
            out.times.push(sample.times[idx]);
            out.mean_ratio.push((mean - filter.mean(k)).norm() / band);
            out.cov_z.push(max_z(&(&cov - p), &se, &Mat::zeros(r1, r1)));
            out.covs.push(cov);
            out.ses.push(se);
        }
        Ok(out)
    })?;
    // The mean band is checked on the first observation path; the second one
    // only enters the covariance comparison.
    let mut worst_mean: f64 = 0.0;
    let mut worst_cov: f64 = 0.0;
    for (j, s) in summaries.iter().enumerate() {
        for (i, t) in s.times.iter().enumerate() {
            ctx.row(*t, j as i64, "mean_error_over_band", s.mean_ratio[i]);
            ctx.row(*t, j as i64, "covariance_max_z", s.cov_z[i]);
            for (a, b) in upper(r1) {
                ctx.row(*t, j as i64, &format!("cov_{}{}", a + 1, b + 1), s.covs[i][(a, b)]);
            }
            if j == 0 {
                worst_mean = worst_mean.max(s.mean_ratio[i]);
            }
            worst_cov = worst_cov.max(s.cov_z[i]);
        }
    }
    let (a, b) = (&summaries[0], &summaries[1]);
    let mut worst_pair: f64 = 0.0;
    for i in 0..a.times.len() {
        let z = max_z(&(&a.covs[i] - &b.covs[i]), &a.ses[i], &b.ses[i]);
        ctx.aggregate(a.times[i], "path_covariance_max_z", z);
        worst_pair = worst_pair.max(z);
    }
    ctx.check(Criterion::at_most("copy_mean_over_3_sigma_band", worst_mean, 1.0, 0.0));
    ctx.check(Criterion::at_most("copy_covariance_max_z", worst_cov, 4.0, 0.0));
    ctx.check(Criterion::at_most(
        "path_covariance_difference_max_z",
        worst_pair,
        4.0,
        0.0,
    ));
    Ok(())
}

fn upper(r: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..r).flat_map(move |a| (a..r).map(move |b| (a, b)))
}

/// Largest `|d| / sqrt(se1^2 + se2^2)` over the upper triangle.
fn max_z(d: &Mat, se1: &Mat, se2: &Mat) -> f64 {
    upper(d.nrows())
        .map(|(a, b)| d[(a, b)].abs() / (se1[(a, b)].powi(2) + se2[(a, b)].powi(2)).sqrt())
        .fold(0.0, f64::max)
}

const ENTROPY_T0: f64 = 2.0;
/// `P0 = P + ENTROPY_P0_SHIFT * I`; small enough that the transient growth of
/// `P_t - P` under the non-normal closed loop is over by `ENTROPY_T0`.
const ENTROPY_P0_SHIFT: f64 = 0.1;
const ENTROPY_SPACING: f64 = 0.25;

pub fn entropy_decay(ctx: &mut Context) -> Result<()> {
    let model = ctx.model()?.clone();
    let (dt, horizon, n) = (ctx.config.dt, ctx.config.horizon, ctx.config.replicas);
    let r1 = model.state_dim();
    let p = solve_are(&model)?.p;
    let p0 = &p + Mat::identity(r1, r1) * ENTROPY_P0_SHIFT;
    let law = GaussianLaw::new(Vector::zeros(r1), p0.clone())?;
    let offset = Vector::from_element(r1, 1.0);
    let traj = Arc::new(integrate_riccati(&p0, &model, dt, horizon)?);
    let stride = (ENTROPY_SPACING / dt).round().max(1.0) as usize;
    let key = ctx.key(0, Role::Signal);
    let curves = par_map(n, |i| {
        let paths = simulate_signal_observation(&model, &law, dt, horizon, key.with_replica(i as u64))?;
        let full = kalman_bucy_filter(&model, &paths, &law.mean, traj.clone())?;
        let steady = constant_gain_filter(&model, &paths, &offset, &p)?;
        let mut curve = Vec::new();
        for k in (0..=paths.steps).step_by(stride) {
            let eta = GaussianLaw::new(full.mean(k), traj.covariances[k].clone())?;
            let check = GaussianLaw::new(steady.mean(k), p.clone())?;
            curve.push((paths.time(k), gaussian_relative_entropy(&eta, &check)?));
        }
        Ok(curve)
    })?;
    let mut monotone = 0usize;
    let mut mean_curve = vec![0.0; curves[0].len()];
    for (i, curve) in curves.iter().enumerate() {
        let tail: Vec<&(f64, f64)> = curve.iter().filter(|(t, _)| *t >= ENTROPY_T0 - 1e-9).collect();
        let decreasing = tail.windows(2).all(|w| w[1].1 < w[0].1);
        monotone += usize::from(decreasing);
        for (j, (t, v)) in curve.iter().enumerate() {
            ctx.row(*t, i as i64, "relative_entropy", *v);
            mean_curve[j] += v / n as f64;
        }
        ctx.row(horizon, i as i64, "monotone_after_t0", f64::from(u8::from(decreasing)));
    }
    let (ts, vs): (Vec<f64>, Vec<f64>) = curves[0]
        .iter()
        .zip(&mean_curve)
        .filter(|((t, _), _)| *t >= ENTROPY_T0 - 1e-9)
        .map(|((t, _), v)| (*t, *v))
        .unzip();
    for (t, v) in curves[0].iter().map(|(t, _)| *t).zip(&mean_curve) {
        ctx.aggregate(t, "mean_relative_entropy", *v);
    }
    let fit = fit_rate(&ts, &vs, Scale::LogLinear)?;
    ctx.aggregate(horizon, "entropy_decay_rate", fit.slope);
    ctx.aggregate(horizon, "monotone_seeds", monotone as f64);
    ctx.check(Criterion::at_most("entropy_decay_rate", fit.slope, 0.0, 0.0));
    ctx.check(Criterion::at_least(
        "monotone_seeds_after_t0",
        monotone as f64,
        (0.9 * n as f64).ceil(),
        0.0,
    ));
    Ok(())
}
