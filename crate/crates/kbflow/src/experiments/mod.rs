//! One function per named experiment; each pushes metric rows and criteria
//! into a [`Context`].

mod diffusion;
mod ensemble;
mod metrics;
mod observer;
mod riccati;

use std::time::Instant;

use anyhow::{anyhow, Context as _, Result};
use kbflow_core::rng::{Role, StreamKey};
use kbflow_core::{LinearGaussianModel, Mat, Model};
use rayon::prelude::*;

use crate::config::{Experiment, ExperimentConfig};
use crate::record::{Criterion, MetricRow, RunRecord, AGGREGATE};

pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    model: Option<Model>,
    rows: Vec<MetricRow>,
    criteria: Vec<Criterion>,
}

impl<'a> Context<'a> {
    fn new(config: &'a ExperimentConfig) -> Result<Self> {
        let model = match &config.model {
            Some(path) => Some(
                LinearGaussianModel::load(path)
                    .and_then(LinearGaussianModel::validate)
                    .with_context(|| format!("cannot load model {}", path.display()))?,
            ),
            None => None,
        };
        Ok(Self {
            config,
            model,
            rows: Vec::new(),
            criteria: Vec::new(),
        })
    }

    pub fn model(&self) -> Result<&Model> {
        self.model
            .as_ref()
            .ok_or_else(|| anyhow!("experiment {} needs a model file", self.config.experiment))
    }

    pub fn key(&self, replica: u64, role: Role) -> StreamKey {
        StreamKey::new(self.config.seed, replica, role)
    }

    pub fn row(&mut self, t: f64, replica: i64, metric: &str, value: f64) {
        self.rows.push(MetricRow {
            t,
            replica,
            metric: metric.to_string(),
            value,
        });
    }

    pub fn aggregate(&mut self, t: f64, metric: &str, value: f64) {
        self.row(t, AGGREGATE, metric, value);
    }

    pub fn check(&mut self, criterion: Criterion) {
        self.criteria.push(criterion);
    }

    /// Number of grid steps in the configured horizon.
    pub fn steps(&self) -> usize {
        (self.config.horizon / self.config.dt).round() as usize
    }
}

/// Maps `f` over `0..n` on the current pool; results keep index order.
pub fn par_map<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Runs on rayon's global pool.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    let start = Instant::now();
    let mut ctx = Context::new(config)?;
    match config.experiment {
        Experiment::ScalarRiccatiOracle => riccati::scalar_riccati_oracle(&mut ctx)?,
        Experiment::AreSolve => riccati::are_solve(&mut ctx)?,
        Experiment::Contraction => riccati::contraction(&mut ctx)?,
        Experiment::TraceBound => riccati::trace_bound(&mut ctx)?,
        Experiment::RegionScan => observer::region_scan(&mut ctx)?,
        Experiment::ObserverRun => observer::observer_run(&mut ctx)?,
        Experiment::KbDiffusionConsistency => diffusion::kb_diffusion_consistency(&mut ctx)?,
        Experiment::EntropyDecay => diffusion::entropy_decay(&mut ctx)?,
        Experiment::BracketCheck => ensemble::bracket_check(&mut ctx)?,
        Experiment::ChaosRate => ensemble::chaos_rate(&mut ctx)?,
        Experiment::UniformTime => ensemble::uniform_time(&mut ctx)?,
        Experiment::MetricsSelftest => metrics::metrics_selftest(&mut ctx)?,
    }
    Ok(RunRecord {
        experiment: config.experiment.name().to_string(),
        config: config.clone(),
        rows: ctx.rows,
        criteria: ctx.criteria,
        wallclock_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs on a dedicated pool of `workers` threads.
pub fn run_experiment_with_workers(config: &ExperimentConfig, workers: usize) -> Result<RunRecord> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("cannot build worker pool")?;
    pool.install(|| run_experiment(config))
}

pub(crate) fn m(rows: usize, cols: usize, v: &[f64]) -> Mat {
    Mat::from_row_slice(rows, cols, v)
}

/// Random `L L' + floor I` with entries of `L` uniform in `[-scale, scale]`.
pub(crate) fn random_psd(stream: &mut kbflow_core::rng::NormalStream, r: usize, scale: f64, floor: f64) -> Mat {
    let l = Mat::from_fn(r, r, |_, _| scale * (2.0 * stream.uniform() - 1.0));
    let mut p = &l * l.transpose() + Mat::identity(r, r) * floor;
    kbflow_core::linalg::symmetrize(&mut p);
    p
}

pub(crate) fn uniform(stream: &mut kbflow_core::rng::NormalStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * stream.uniform()
}
