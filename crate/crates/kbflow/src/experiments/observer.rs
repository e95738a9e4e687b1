use anyhow::Result;
use kbflow_core::kalman_bucy::{observer_error_run, ObserverOptions, QFlow};
use kbflow_core::regions::{self, GridSpec, Region};
use kbflow_core::riccati::solve_are;
use kbflow_core::rng::Role;
use kbflow_core::{GaussianLaw, Mat, Vector};

use super::{par_map, Context};
use crate::record::Criterion;

const GRID: GridSpec = GridSpec {
    q11_min: -10.0,
    q11_max: 5.0,
    q12_min: -25.0,
    q12_max: 10.0,
    n11: 200,
    n12: 200,
};

fn class_code(r: Region) -> f64 {
    match r {
        Region::Stable => 0.0,
        Region::DivergentSaddle => 1.0,
        Region::DivergentTrace => 2.0,
        Region::Inadmissible => 3.0,
        Region::Boundary => 4.0,
    }
}

pub fn region_scan(ctx: &mut Context) -> Result<()> {
    let model = ctx.model()?.clone();
    let p = solve_are(&model)?.p;
    let scan = regions::region_scan(&model, &p, &GRID, 0.0)?;
    for (i, cell) in scan.cells.iter().enumerate() {
        ctx.row(0.0, i as i64, "q11", cell.q11);
        ctx.row(0.0, i as i64, "q12", cell.q12);
        ctx.row(0.0, i as i64, "class", class_code(cell.class));
        ctx.row(0.0, i as i64, "abscissa", cell.abscissa);
    }
    let b = scan.boundaries;
    for (name, v) in [
        ("saddle_slope", b.saddle_slope),
        ("saddle_intercept", b.saddle_intercept),
        ("trace_q11", b.trace_q11),
        ("admissible_q11", b.admissible_q11),
        ("fitted_slope", b.fitted_slope),
        ("fitted_intercept", b.fitted_intercept),
        ("fitted_trace_q11", b.fitted_trace_q11),
        ("fitted_admissible_q11", b.fitted_admissible_q11),
        ("compared_cells", scan.compared_cells as f64),
        ("boundary_cells", scan.boundary_cells as f64),
        ("mismatches", scan.mismatches as f64),
    ] {
        ctx.aggregate(0.0, name, v);
    }
    ctx.check(Criterion::within("saddle_line_slope", b.fitted_slope, 1.5, 0.02));
    ctx.check(Criterion::within(
        "saddle_line_intercept",
        b.fitted_intercept,
        -1.87,
        0.02,
    ));
    ctx.check(Criterion::within("trace_strip_edge", b.fitted_trace_q11, -4.74, 0.02));
    ctx.check(Criterion::within(
        "admissible_strip_edge",
        b.fitted_admissible_q11,
        -8.74,
        0.02,
    ));
    ctx.check(Criterion::at_most(
        "closed_form_oracle_mismatches",
        scan.mismatches as f64,
        0.0,
        0.0,
    ));
    Ok(())
}

/// Divergent member of the diagonal family, twice the figure's `Q11 = 1.4`.
const DIVERGENT_Q11: f64 = 2.8;
/// The figure's member; its growth rate is only about 0.074.
const FIGURE_Q11: f64 = 1.4;
/// Stable member, below the saddle threshold `Q11 ~ 1.247`.
const STABLE_Q11: f64 = 1.1;
const DIVERGENT_LEVEL: f64 = 1e6;
const STABLE_LEVEL: f64 = 1e3;
const STABLE_HORIZON: f64 = 100.0;

pub fn observer_run(ctx: &mut Context) -> Result<()> {
    let model = ctx.model()?.clone();
    let (dt, horizon, n) = (ctx.config.dt, ctx.config.horizon, ctx.config.replicas);
    let p = solve_are(&model)?.p;
    let r1 = model.state_dim();
    let law = GaussianLaw::new(Vector::zeros(r1), Mat::identity(r1, r1))?;
    let z0 = Vector::zeros(r1);
    let diag = |q11: f64| {
        let mut q = Mat::zeros(r1, r1);
        q[(0, 0)] = q11;
        q
    };
    let divergent = QFlow::Constant(diag(DIVERGENT_Q11));
    let stable = QFlow::Constant(diag(STABLE_Q11));
    let figure = QFlow::Constant(diag(FIGURE_Q11));
    let stable_horizon = STABLE_HORIZON.min(horizon);
    let key = ctx.key(0, Role::Signal);
    let runs = par_map(n, |i| {
        let key = key.with_replica(i as u64);
        let d = observer_error_run(
            &model,
            &p,
            &divergent,
            &law,
            &z0,
            dt,
            horizon,
            key,
            ObserverOptions {
                divergence_threshold: DIVERGENT_LEVEL,
                stop_on_divergence: true,
            },
        )?;
        let s = observer_error_run(
            &model,
            &p,
            &stable,
            &law,
            &z0,
            dt,
            stable_horizon,
            key,
            ObserverOptions {
                divergence_threshold: STABLE_LEVEL,
                stop_on_divergence: false,
            },
        )?;
        let f = observer_error_run(
            &model,
            &p,
            &figure,
            &law,
            &z0,
            dt,
            horizon,
            key,
            ObserverOptions {
                divergence_threshold: DIVERGENT_LEVEL,
                stop_on_divergence: true,
            },
        )?;
        Ok((d.first_crossing, s.max_error(), s.diverged(), f.diverged()))
    })?;
    let (mut crossed, mut contained, mut figure_crossed) = (0usize, 0usize, 0usize);
    for (i, (crossing, stable_max, stable_diverged, figure_diverged)) in runs.iter().enumerate() {
        figure_crossed += usize::from(*figure_diverged);
        if let Some(t) = crossing {
            crossed += 1;
            ctx.row(*t, i as i64, "divergent_crossing_time", *t);
        }
        if !stable_diverged {
            contained += 1;
        }
        ctx.row(stable_horizon, i as i64, "stable_max_error", *stable_max);
    }
    ctx.aggregate(horizon, "divergent_q11", DIVERGENT_Q11);
    ctx.aggregate(stable_horizon, "stable_q11", STABLE_Q11);
    ctx.aggregate(horizon, "divergent_crossed", crossed as f64);
    ctx.aggregate(horizon, "figure_q11_crossed", figure_crossed as f64);
    ctx.aggregate(stable_horizon, "stable_contained", contained as f64);
    let need = (0.95 * n as f64).ceil();
    ctx.check(Criterion::at_least(
        "divergent_seeds_above_1e6",
        crossed as f64,
        need,
        0.0,
    ));
    ctx.check(Criterion::at_least(
        "stable_seeds_below_1e3",
        contained as f64,
        need,
        0.0,
    ));
    Ok(())
}
