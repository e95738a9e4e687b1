//! Stability classes of constant perturbations `Q` of the steady-state
//! observer for two-dimensional signals observed through their first
//! coordinate (`C = [1, 0]`, `R2 = 1`).
//!
//! With `S = diag(1, 0)` the observer drift is
//! `M = A - (P + Q) S`, whose first column is `A_1 - P_1 - Q_1` and whose
//! second column is `A_2`. Divergence happens when `det M < 0` (saddle, a
//! line in the `(Q11, Q12)` plane) or `tr M > 0` (a vertical strip).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, psd_eigen, spectral_abscissa, Mat};
use crate::model::Model;
use crate::stats::fit_linear;

/// Half-width of the band around a boundary labelled [`Region::Boundary`].
pub const DEAD_BAND: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Stable,
    DivergentSaddle,
    DivergentTrace,
    Inadmissible,
    Boundary,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stable => "stable",
            Self::DivergentSaddle => "divergent_saddle",
            Self::DivergentTrace => "divergent_trace",
            Self::Inadmissible => "inadmissible",
            Self::Boundary => "boundary",
        }
    }

    pub fn is_divergent(self) -> bool {
        matches!(self, Self::DivergentSaddle | Self::DivergentTrace)
    }
}

/// Phase portrait of the observer error dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Portrait {
    Node,
    Spiral,
    Saddle,
    Degenerate,
}

/// Symmetric 2x2 perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Perturbation2D {
    pub q11: f64,
    pub q12: f64,
    pub q22: f64,
}

impl Perturbation2D {
    pub fn new(q11: f64, q12: f64, q22: f64) -> Self {
        Self { q11, q12, q22 }
    }

    pub fn matrix(&self) -> Mat {
        Mat::from_row_slice(2, 2, &[self.q11, self.q12, self.q12, self.q22])
    }

    pub fn from_matrix(q: &Mat) -> Result<Self> {
        if q.shape() != (2, 2) || q[(0, 1)] != q[(1, 0)] {
            return Err(Error::InvalidArgument(
                "perturbation must be a symmetric 2x2 matrix".into(),
            ));
        }
        Ok(Self::new(q[(0, 0)], q[(0, 1)], q[(1, 1)]))
    }
}

/// `u ∧ v = u1 v2 - u2 v1`.
pub fn wedge(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[1] - u[1] * v[0]
}

fn col(m: &Mat, j: usize) -> [f64; 2] {
    [m[(0, j)], m[(1, j)]]
}

/// `P + Q` positive semi-definite, by eigenvalues.
pub fn admissible(q: &Perturbation2D, p: &Mat) -> bool {
    psd_eigen(&(p + q.matrix())).is_ok()
}

/// Column form of admissibility:
/// `[-P1 - Q1/2] ∧ Q2 + [P2 + Q2/2] ∧ Q1 <= P1 ∧ P2` together with
/// `Q11 >= -P11` and `Q22 >= -P22`. Equivalent to `det(P + Q) >= 0` plus the
/// diagonal conditions.
pub fn admissible_cross_product(q: &Perturbation2D, p: &Mat) -> bool {
    let qm = q.matrix();
    let (p1, p2) = (col(p, 0), col(p, 1));
    let (q1, q2) = (col(&qm, 0), col(&qm, 1));
    let a = [-p1[0] - 0.5 * q1[0], -p1[1] - 0.5 * q1[1]];
    let b = [p2[0] + 0.5 * q2[0], p2[1] + 0.5 * q2[1]];
    wedge(a, q2) + wedge(b, q1) <= wedge(p1, p2) && q.q11 >= -p[(0, 0)] && q.q22 >= -p[(1, 1)]
}

/// Checks the observation structure and returns `(A, P)` for the classifier.
#[derive(Debug, Clone)]
pub struct RegionModel {
    a: Mat,
    p: Mat,
}

impl RegionModel {
    pub fn new(model: &Model, p: &Mat) -> Result<Self> {
        if model.state_dim() != 2 || model.obs_dim() != 1 {
            return Err(Error::OutsideAppendixSetting(format!(
                "need (r1, r2) = (2, 1), got ({}, {})",
                model.state_dim(),
                model.obs_dim()
            )));
        }
        let c = model.sensor();
        if c[(0, 0)] != 1.0 || c[(0, 1)] != 0.0 || model.observation_noise()[(0, 0)] != 1.0 {
            return Err(Error::OutsideAppendixSetting("need C = [1, 0] and R2 = 1".into()));
        }
        if model.drift()[(0, 1)] == 0.0 {
            return Err(Error::OutsideAppendixSetting(
                "A12 = 0 leaves the pair unobservable".into(),
            ));
        }
        if p.shape() != (2, 2) {
            return Err(Error::Dimension("steady state must be 2x2".into()));
        }
        Ok(Self {
            a: model.drift().clone(),
            p: p.clone(),
        })
    }

    pub fn steady_state(&self) -> &Mat {
        &self.p
    }

    /// `A - (P + Q) S`.
    pub fn observer_drift(&self, q: &Perturbation2D) -> Mat {
        let mut m = self.a.clone();
        m[(0, 0)] -= self.p[(0, 0)] + q.q11;
        m[(1, 0)] -= self.p[(1, 0)] + q.q12;
        m
    }

    /// Saddle line `Q12 = slope Q11 + intercept` where `det M = 0`.
    pub fn saddle_line(&self) -> (f64, f64) {
        let (a, p) = (&self.a, &self.p);
        let slope = a[(1, 1)] / a[(0, 1)];
        let intercept = a[(1, 0)] - p[(0, 1)] + a[(1, 1)] * (p[(0, 0)] - a[(0, 0)]) / a[(0, 1)];
        (slope, intercept)
    }

    /// `Q11 = tr(A) - P11`, where `tr M = 0`.
    pub fn trace_line(&self) -> f64 {
        self.a.trace() - self.p[(0, 0)]
    }

    /// `Q11 = -P11`, the left edge of the admissible set.
    pub fn admissible_edge(&self) -> f64 {
        -self.p[(0, 0)]
    }

    /// `det M < 0` in terms of the cross products of the columns.
    fn saddle_value(&self, q: &Perturbation2D) -> f64 {
        // det M = (A_1 - P_1 - Q_1) ∧ A_2
        let m = self.observer_drift(q);
        wedge(col(&m, 0), col(&m, 1))
    }

    /// Closed-form classification.
    pub fn classify(&self, q: &Perturbation2D) -> Region {
        if !admissible(q, &self.p) {
            return Region::Inadmissible;
        }
        self.closed_form_class(q)
    }

    /// Closed-form classification ignoring admissibility.
    pub fn closed_form_class(&self, q: &Perturbation2D) -> Region {
        let det = self.saddle_value(q);
        let tr = self.trace_line() - q.q11;
        let scale = 1.0 + self.a.amax() + self.p.amax() + q.q11.abs().max(q.q12.abs());
        let band = DEAD_BAND * scale * scale;
        if det < -band {
            Region::DivergentSaddle
        } else if tr > DEAD_BAND * scale && det > band {
            Region::DivergentTrace
        } else if tr < -DEAD_BAND * scale && det > band {
            Region::Stable
        } else {
            Region::Boundary
        }
    }

    /// Eigenvalue oracle: sign of the spectral abscissa of `M`, ignoring
    /// admissibility.
    pub fn spectral_class(&self, q: &Perturbation2D) -> Result<Region> {
        let m = self.observer_drift(q);
        let abscissa = spectral_abscissa(&m)?;
        let scale = 1.0 + self.a.amax() + self.p.amax() + q.q11.abs().max(q.q12.abs());
        Ok(if abscissa > DEAD_BAND * scale {
            let det = m.determinant();
            if det < 0.0 {
                Region::DivergentSaddle
            } else {
                Region::DivergentTrace
            }
        } else if abscissa < -DEAD_BAND * scale {
            Region::Stable
        } else {
            Region::Boundary
        })
    }

    pub fn portrait(&self, q: &Perturbation2D) -> Result<Portrait> {
        let m = self.observer_drift(q);
        let ev = eigenvalues(&m)?;
        let det = m.determinant();
        Ok(if det < 0.0 {
            Portrait::Saddle
        } else if ev.iter().any(|z| z.im.abs() > 0.0) {
            Portrait::Spiral
        } else if det > 0.0 {
            Portrait::Node
        } else {
            Portrait::Degenerate
        })
    }
}

/// Closed-form class of `q` for the model with steady state `p`.
pub fn classify(q: &Perturbation2D, model: &Model, p: &Mat) -> Result<Region> {
    Ok(RegionModel::new(model, p)?.classify(q))
}

/// Eigenvalue-oracle class, without the admissibility check.
pub fn spectral_class(q: &Perturbation2D, model: &Model, p: &Mat) -> Result<Region> {
    RegionModel::new(model, p)?.spectral_class(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub q11_min: f64,
    pub q11_max: f64,
    pub q12_min: f64,
    pub q12_max: f64,
    pub n11: usize,
    pub n12: usize,
}

impl GridSpec {
    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub q11: f64,
    pub q12: f64,
    pub class: Region,
    pub abscissa: f64,
    pub portrait: Portrait,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Boundaries {
    pub saddle_slope: f64,
    pub saddle_intercept: f64,
    pub trace_q11: f64,
    pub admissible_q11: f64,
    /// Least-squares line through saddle crossings located by bisection on
    /// the eigenvalue oracle.
    pub fitted_slope: f64,
    pub fitted_intercept: f64,
    pub fitted_trace_q11: f64,
    pub fitted_admissible_q11: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionScan {
    pub q22: f64,
    pub cells: Vec<Cell>,
    pub boundaries: Boundaries,
    /// Cells where the closed form and the oracle disagree, boundary cells
    /// excluded.
    pub mismatches: usize,
    pub boundary_cells: usize,
    pub compared_cells: usize,
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> bool) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) == flo {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() < 1e-13 * (1.0 + lo.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Classifies every grid cell and recovers the boundary lines.
pub fn region_scan(model: &Model, p: &Mat, grid: &GridSpec, q22: f64) -> Result<RegionScan> {
    let rm = RegionModel::new(model, p)?;
    if !(grid.q11_min.is_finite() && grid.q11_max.is_finite() && grid.q12_min.is_finite() && grid.q12_max.is_finite())
        || grid.n11 == 0
        || grid.n12 == 0
    {
        return Err(Error::InvalidArgument(
            "grid bounds must be finite with at least one cell".into(),
        ));
    }
    let mut cells = Vec::with_capacity(grid.n11 * grid.n12);
    let (mut mismatches, mut boundary_cells, mut compared) = (0, 0, 0);
    for &q11 in &GridSpec::axis(grid.q11_min, grid.q11_max, grid.n11) {
        for &q12 in &GridSpec::axis(grid.q12_min, grid.q12_max, grid.n12) {
            let q = Perturbation2D::new(q11, q12, q22);
            let class = rm.classify(&q);
            let abscissa = spectral_abscissa(&rm.observer_drift(&q))?;
            if class != Region::Inadmissible {
                let oracle = rm.spectral_class(&q)?;
                if class == Region::Boundary || oracle == Region::Boundary {
                    boundary_cells += 1;
                } else {
                    compared += 1;
                    if class.is_divergent() != oracle.is_divergent() {
                        mismatches += 1;
                    }
                }
            }
            cells.push(Cell {
                q11,
                q12,
                class,
                abscissa,
                portrait: rm.portrait(&q)?,
            });
        }
    }

    let (slope, intercept) = rm.saddle_line();
    let trace_q11 = rm.trace_line();
    // Saddle crossings to the right of the strip, where tr M < 0.
    let lo11 = trace_q11 + 1.0;
    let hi11 = lo11 + 10.0;
    let span = 50.0 * (1.0 + slope.abs()) + intercept.abs();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..21 {
        let q11 = lo11 + (hi11 - lo11) * i as f64 / 20.0;
        let centre = slope * q11 + intercept;
        let q12 = bisect(centre - span, centre + span, |q12| {
            spectral_abscissa(&rm.observer_drift(&Perturbation2D::new(q11, q12, q22)))
                .map(|s| s > 0.0)
                .unwrap_or(false)
        });
        xs.push(q11);
        ys.push(q12);
    }
    let fit = fit_linear(&xs, &ys)?;
    // Trace line at a Q12 well inside the non-saddle side.
    let q12_safe = slope * trace_q11 + intercept + 10.0 * rm.a[(0, 1)].signum();
    let fitted_trace = bisect(trace_q11 - 3.0, trace_q11 + 3.0, |q11| {
        spectral_abscissa(&rm.observer_drift(&Perturbation2D::new(q11, q12_safe, q22)))
            .map(|s| s > 0.0)
            .unwrap_or(false)
    });
    // Admissible edge at the widest point Q12 = -P12, Q22 = 0.
    let edge = rm.admissible_edge();
    let fitted_edge = bisect(edge - 3.0, edge + 3.0, |q11| {
        admissible(&Perturbation2D::new(q11, -p[(0, 1)], 0.0), p)
    });
    Ok(RegionScan {
        q22,
        cells,
        boundaries: Boundaries {
            saddle_slope: slope,
            saddle_intercept: intercept,
            trace_q11,
            admissible_q11: edge,
            fitted_slope: fit.slope,
            fitted_intercept: fit.intercept,
            fitted_trace_q11: fitted_trace,
            fitted_admissible_q11: fitted_edge,
        },
        mismatches,
        boundary_cells,
        compared_cells: compared,
    })
}
