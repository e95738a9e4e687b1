use std::sync::Arc;

use anyhow::{bail, Result};
use kbflow_core::enkf::{self, coupled_reference_run, sample_stats, BracketReport, Ensemble};
use kbflow_core::kalman_bucy::simulate_signal_observation;
use kbflow_core::riccati::{integrate_riccati, solve_are};
use kbflow_core::rng::Role;
use kbflow_core::stats::{fit_rate, mean_estimate, Scale};
use kbflow_core::{GaussianLaw, LinearGaussianModel, Mat, Model, Vector};

use super::{m, par_map, Context};
use crate::record::Criterion;

const BRACKET_BAND: f64 = 3.0;

fn three_state_model() -> Result<Model> {
    Ok(LinearGaussianModel::centered(
        m(3, 3, &[0.5, 1.0, 0.0, 0.0, -1.0, 1.0, 0.2, 0.0, -1.5]),
        m(1, 3, &[1.0, 0.0, 0.0]),
        Mat::identity(3, 3),
        Mat::identity(1, 1),
    )
    .validate()?)
}

fn record_bracket(ctx: &mut Context, state: &str, rep: &BracketReport) {
    for (i, e) in rep.entries().enumerate() {
        let id = i as i64;
        ctx.row(rep.dt, id, &format!("{state}:{}:empirical", e.name), e.empirical);
        ctx.row(rep.dt, id, &format!("{state}:{}:theoretical", e.name), e.theoretical);
        ctx.row(rep.dt, id, &format!("{state}:{}:std_error", e.name), e.std_error);
    }
    ctx.aggregate(rep.dt, &format!("{state}:max_z"), rep.max_z_score());
}

/// Three frozen ensembles: `p` close to `P`, `p` far above `P`, and a
/// two-particle ensemble in three dimensions.
pub fn bracket_check(ctx: &mut Context) -> Result<()> {
    let model = ctx.model()?.clone();
    let (dt, replicas) = (ctx.config.dt, ctx.config.replicas);
    let counts = match ctx.config.particle_counts.as_slice() {
        [] => [500, 50, 2],
        [a, b, c] => [*a, *b, *c],
        other => bail!("bracket-check takes three particle counts, got {}", other.len()),
    };
    if counts[2] >= 3 {
        bail!(
            "the rank-deficient state needs fewer than 3 particles, got {}",
            counts[2]
        );
    }
    let r1 = model.state_dim();
    let p = solve_are(&model)?.p;
    let small = three_state_model()?;
    let p_small = solve_are(&small)?.p;
    let zero = Vector::zeros(r1);
    let states: Vec<(&str, &Model, &Mat, GaussianLaw, usize)> = vec![
        (
            "near_reference",
            &model,
            &p,
            GaussianLaw::new(zero.clone(), p.clone())?,
            counts[0],
        ),
        (
            "far_above_reference",
            &model,
            &p,
            GaussianLaw::new(zero, &p * 10.0)?,
            counts[1],
        ),
        (
            "rank_deficient",
            &small,
            &p_small,
            GaussianLaw::new(Vector::zeros(3), p_small.clone())?,
            counts[2],
        ),
    ];
    let reports = par_map(states.len(), |i| {
        let (_, model, p_ref, law, n) = &states[i];
        let ensemble = Ensemble::sample(law, *n, ctx.key(i as u64, Role::Auxiliary))?;
        let rep = enkf::bracket_check(
            &ensemble,
            model,
            p_ref,
            dt,
            replicas,
            ctx.key(i as u64, Role::Transition),
        )?;
        let (_, sample) = sample_stats(&ensemble);
        Ok((rep, kbflow_core::linalg::frobenius(&(&sample - *p_ref))))
    })?;
    for ((name, ..), (rep, gap)) in states.iter().zip(&reports) {
        record_bracket(ctx, name, rep);
        ctx.aggregate(0.0, &format!("{name}:initial_gap"), *gap);
        ctx.check(Criterion::at_most(
            format!("{name}_max_z"),
            rep.max_z_score(),
            BRACKET_BAND,
            0.0,
        ));
    }
    Ok(())
}

fn default_counts(ctx: &Context, fallback: &[usize]) -> Vec<usize> {
    if ctx.config.particle_counts.is_empty() {
        fallback.to_vec()
    } else {
        ctx.config.particle_counts.clone()
    }
}

/// Fluctuation rates in `N` at the horizon on the configured model.
pub fn chaos_rate(ctx: &mut Context) -> Result<()> {
    let model = ctx.model()?.clone();
    let (dt, horizon, replicas) = (ctx.config.dt, ctx.config.horizon, ctx.config.replicas);
    let counts = default_counts(ctx, &[8, 16, 32, 64, 128, 256, 512]);
    if counts.len() < 3 {
        bail!("chaos-rate needs at least three particle counts");
    }
    let r1 = model.state_dim();
    let law = GaussianLaw::new(Vector::zeros(r1), Mat::identity(r1, r1))?;
    let traj = Arc::new(integrate_riccati(&law.cov, &model, dt, horizon)?);
    let steps = ctx.steps();
    let (signal_key, particle_key) = (ctx.key(0, Role::Signal), ctx.key(0, Role::Particle));
    let gaps = par_map(replicas, |r| {
        let paths = simulate_signal_observation(&model, &law, dt, horizon, signal_key.with_replica(r as u64))?;
        counts
            .iter()
            .map(|&n| {
                let run = coupled_reference_run(
                    &model,
                    &paths,
                    &law,
                    &traj,
                    n,
                    particle_key.with_replica(r as u64),
                    steps,
                )?;
                let last = run.times.len() - 1;
                Ok((run.covariance_gap[last], run.particle_gap[last]))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut cov_means = Vec::new();
    let mut particle_means = Vec::new();
    for (j, &n) in counts.iter().enumerate() {
        let cov: Vec<f64> = gaps.iter().map(|g| g[j].0).collect();
        let part: Vec<f64> = gaps.iter().map(|g| g[j].1).collect();
        for (r, (c, p)) in cov.iter().zip(&part).enumerate() {
            ctx.row(horizon, r as i64, &format!("covariance_gap_n{n}"), *c);
            ctx.row(horizon, r as i64, &format!("particle_gap_n{n}"), *p);
        }
        let (ce, pe) = (mean_estimate(&cov), mean_estimate(&part));
        ctx.aggregate(horizon, &format!("mean_covariance_gap_n{n}"), ce.mean);
        ctx.aggregate(horizon, &format!("se_covariance_gap_n{n}"), ce.std_error);
        ctx.aggregate(horizon, &format!("mean_particle_gap_n{n}"), pe.mean);
        ctx.aggregate(horizon, &format!("se_particle_gap_n{n}"), pe.std_error);
        cov_means.push(ce.mean);
        particle_means.push(pe.mean);
    }
    let ns: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
    let cov_fit = fit_rate(&ns, &cov_means, Scale::LogLog)?;
    let particle_fit = fit_rate(&ns, &particle_means, Scale::LogLog)?;
    ctx.aggregate(horizon, "covariance_gap_slope", cov_fit.slope);
    ctx.aggregate(horizon, "particle_gap_slope", particle_fit.slope);
    ctx.check(Criterion::within("covariance_gap_slope", cov_fit.slope, -0.5, 0.15));
    ctx.check(Criterion::within("particle_gap_slope", particle_fit.slope, -0.5, 0.15));
    Ok(())
}

const EARLY_T: f64 = 5.0;
const COUNTEREXAMPLE_TIMES: [f64; 3] = [5.0, 20.0, 50.0];

fn blind_random_walk() -> Result<Model> {
    Ok(LinearGaussianModel::centered(m(1, 1, &[0.0]), m(1, 1, &[0.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0])).validate()?)
}

/// Index of the grid time `t` among times recorded every `stride` steps.
fn record_index(t: f64, dt: f64, stride: usize) -> Result<usize> {
    let k = (t / dt).round() as usize;
    if !k.is_multiple_of(stride) {
        bail!("time {t} is not on the recording grid");
    }
    Ok(k / stride)
}

pub fn uniform_time(ctx: &mut Context) -> Result<()> {
    let model = ctx.model()?.clone();
    let (dt, horizon, replicas) = (ctx.config.dt, ctx.config.horizon, ctx.config.replicas);
    let n = default_counts(ctx, &[32])[0];
    if n < 2 {
        bail!("uniform-time needs at least two particles");
    }
    if horizon < COUNTEREXAMPLE_TIMES[2] - 1e-9 {
        bail!("uniform-time needs a horizon of at least {}", COUNTEREXAMPLE_TIMES[2]);
    }
    let stride = (EARLY_T / dt).round() as usize;
    let r1 = model.state_dim();
    let law = GaussianLaw::new(Vector::zeros(r1), Mat::identity(r1, r1))?;
    let traj = Arc::new(integrate_riccati(&law.cov, &model, dt, horizon)?);
    let blind = blind_random_walk()?;
    let blind_law = GaussianLaw::dirac(Vector::zeros(1));
    let blind_traj = Arc::new(integrate_riccati(&blind_law.cov, &blind, dt, horizon)?);
    let (signal_key, particle_key) = (ctx.key(0, Role::Signal), ctx.key(0, Role::Particle));
    let runs = par_map(replicas, |r| {
        let key = signal_key.with_replica(r as u64);
        let paths = simulate_signal_observation(&model, &law, dt, horizon, key)?;
        let run = coupled_reference_run(
            &model,
            &paths,
            &law,
            &traj,
            n,
            particle_key.with_replica(r as u64),
            stride,
        )?;
        let blind_paths = simulate_signal_observation(&blind, &blind_law, dt, horizon, key)?;
        let blind_run = coupled_reference_run(
            &blind,
            &blind_paths,
            &blind_law,
            &blind_traj,
            n,
            particle_key.with_replica(r as u64),
            stride,
        )?;
        let scaled: Vec<f64> = blind_run.mean_error.iter().map(|e| n as f64 * e[0] * e[0]).collect();
        Ok((run.times.clone(), run.mean_gap(), scaled))
    })?;
    let times = runs[0].0.clone();
    for (k, t) in times.iter().enumerate() {
        let gap: Vec<f64> = runs.iter().map(|r| r.1[k]).collect();
        let scaled: Vec<f64> = runs.iter().map(|r| r.2[k]).collect();
        let (g, s) = (mean_estimate(&gap), mean_estimate(&scaled));
        ctx.aggregate(*t, "mean_gap", g.mean);
        ctx.aggregate(*t, "mean_gap_se", g.std_error);
        ctx.aggregate(*t, "blind_scaled_square_error", s.mean);
        ctx.aggregate(*t, "blind_scaled_square_error_se", s.std_error);
    }
    for (r, run) in runs.iter().enumerate() {
        for (k, t) in times.iter().enumerate() {
            ctx.row(*t, r as i64, "mean_gap", run.1[k]);
        }
    }
    let mean_at = |k: usize| mean_estimate(&runs.iter().map(|r| r.1[k]).collect::<Vec<_>>()).mean;
    let early = mean_at(record_index(EARLY_T, dt, stride)?);
    let late = mean_at(record_index(COUNTEREXAMPLE_TIMES[2], dt, stride)?);
    ctx.check(Criterion::at_most(
        "late_over_early_log_ratio",
        (late / early).ln().abs(),
        0.0,
        2f64.ln(),
    ));
    for t in COUNTEREXAMPLE_TIMES {
        let k = record_index(t, dt, stride)?;
        let est = mean_estimate(&runs.iter().map(|r| r.2[k]).collect::<Vec<_>>());
        ctx.check(Criterion::within(
            format!("blind_n_times_square_error_t{t}"),
            est.mean,
            t,
            3.0 * est.std_error,
        ));
    }
    Ok(())
}
