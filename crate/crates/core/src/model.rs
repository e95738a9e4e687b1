//! The time-homogeneous linear-Gaussian filtering problem
//!
//! ```text
//! dX = (A X + a) dt + R1^{1/2} dW
//! dY = (C X + c) dt + R2^{1/2} dV,   Y_0 = 0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    condition_number, frobenius, numerical_rank, pd_inv_sqrt, psd_eigen, psd_sqrt, require_finite, require_square,
    symmetrize, Mat, Vector, REL_TOL,
};
use crate::rng::NormalStream;

/// On-disk model: raw matrices as nested row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(rename = "A")]
    pub drift: Vec<Vec<f64>>,
    #[serde(rename = "a")]
    pub drift_offset: Vec<f64>,
    #[serde(rename = "C")]
    pub sensor: Vec<Vec<f64>>,
    #[serde(rename = "c")]
    pub sensor_offset: Vec<f64>,
    #[serde(rename = "R1")]
    pub signal_noise: Vec<Vec<f64>>,
    #[serde(rename = "R2")]
    pub observation_noise: Vec<Vec<f64>>,
}

fn rows_to_mat(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "{what} must be a non-empty rectangular array"
        )));
    }
    Ok(Mat::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// The raw quintuple `(A, a, C, c, R1, R2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    pub drift: Mat,
    pub drift_offset: Vector,
    pub sensor: Mat,
    pub sensor_offset: Vector,
    pub signal_noise: Mat,
    pub observation_noise: Mat,
}

impl LinearGaussianModel {
    /// Zero offsets.
    pub fn centered(drift: Mat, sensor: Mat, signal_noise: Mat, observation_noise: Mat) -> Self {
        let r1 = drift.nrows();
        let r2 = sensor.nrows();
        Self {
            drift,
            drift_offset: Vector::zeros(r1),
            sensor,
            sensor_offset: Vector::zeros(r2),
            signal_noise,
            observation_noise,
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        Ok(Self {
            drift: rows_to_mat(&file.drift, "A")?,
            drift_offset: Vector::from_vec(file.drift_offset.clone()),
            sensor: rows_to_mat(&file.sensor, "C")?,
            sensor_offset: Vector::from_vec(file.sensor_offset.clone()),
            signal_noise: rows_to_mat(&file.signal_noise, "R1")?,
            observation_noise: rows_to_mat(&file.observation_noise, "R2")?,
        })
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            drift: mat_to_rows(&self.drift),
            drift_offset: self.drift_offset.iter().copied().collect(),
            sensor: mat_to_rows(&self.sensor),
            sensor_offset: self.sensor_offset.iter().copied().collect(),
            signal_noise: mat_to_rows(&self.signal_noise),
            observation_noise: mat_to_rows(&self.observation_noise),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(self) -> Result<Model> {
        validate(self)
    }
}

/// A validated model with derived quantities.
///
/// Derived fields are recomputed on every validation and never persisted.
#[derive(Debug, Clone)]
pub struct Model {
    raw: LinearGaussianModel,
    r1: usize,
    r2: usize,
    signal_noise_sqrt: Mat,
    observation_noise_sqrt: Mat,
    observation_noise_inv_sqrt: Mat,
    observation_noise_inv: Mat,
    sensor_gram: Mat,
    gain_factor: Mat,
    innovation_noise_factor: Mat,
}

fn check_pd(m: &Mat, what: &str) -> Result<()> {
    let asym = frobenius(&(m - m.transpose()));
    if asym > 1e-12 * frobenius(m).max(1e-300) {
        return Err(Error::InvalidModel(format!("{what} is not symmetric")));
    }
    let eig = psd_eigen(m).map_err(|e| Error::InvalidModel(format!("{what}: {e}")))?;
    if eig.min() <= REL_TOL * eig.max() || eig.max() <= 0.0 {
        return Err(Error::InvalidModel(format!(
            "{what} is not positive definite (smallest eigenvalue {:e})",
            eig.min()
        )));
    }
    Ok(())
}

/// Checks dimensions and noise covariances; attaches `r1`, `r2`,
/// `R1^{1/2}`, `R2^{-1/2}`, `R2^{-1}` and `S = C' R2^{-1} C`.
pub fn validate(raw: LinearGaussianModel) -> Result<Model> {
    let r1 = require_square(&raw.drift, "A").map_err(|e| Error::InvalidModel(e.to_string()))?;
    let r2 = raw.sensor.nrows();
    let dims_ok = raw.drift_offset.len() == r1
        && raw.sensor.ncols() == r1
        && r2 >= 1
        && raw.sensor_offset.len() == r2
        && raw.signal_noise.shape() == (r1, r1)
        && raw.observation_noise.shape() == (r2, r2);
    if !dims_ok {
        return Err(Error::InvalidModel(format!(
            "inconsistent dimensions: A {:?}, a {}, C {:?}, c {}, R1 {:?}, R2 {:?}",
            raw.drift.shape(),
            raw.drift_offset.len(),
            raw.sensor.shape(),
            raw.sensor_offset.len(),
            raw.signal_noise.shape(),
            raw.observation_noise.shape()
        )));
    }
    for (m, what) in [
        (&raw.drift, "A"),
        (&raw.sensor, "C"),
        (&raw.signal_noise, "R1"),
        (&raw.observation_noise, "R2"),
    ] {
        require_finite(m, what)?;
    }
    if raw
        .drift_offset
        .iter()
        .chain(raw.sensor_offset.iter())
        .any(|x| !x.is_finite())
    {
        return Err(Error::NonFinite("offsets"));
    }
    check_pd(&raw.signal_noise, "R1")?;
    check_pd(&raw.observation_noise, "R2")?;

    let signal_noise_sqrt = psd_sqrt(&raw.signal_noise)?;
    let observation_noise_sqrt = psd_sqrt(&raw.observation_noise)?;
    let observation_noise_inv_sqrt = pd_inv_sqrt(&raw.observation_noise)?;
    let mut observation_noise_inv = &observation_noise_inv_sqrt * &observation_noise_inv_sqrt;
    symmetrize(&mut observation_noise_inv);
    let gain_factor = raw.sensor.transpose() * &observation_noise_inv;
    let mut sensor_gram = &gain_factor * &raw.sensor;
    symmetrize(&mut sensor_gram);
    let innovation_noise_factor = raw.sensor.transpose() * &observation_noise_inv_sqrt;
    Ok(Model {
        raw,
        r1,
        r2,
        signal_noise_sqrt,
        observation_noise_sqrt,
        observation_noise_inv_sqrt,
        observation_noise_inv,
        sensor_gram,
        gain_factor,
        innovation_noise_factor,
    })
}

impl Model {
    pub fn raw(&self) -> &LinearGaussianModel {
        &self.raw
    }
    pub fn state_dim(&self) -> usize {
        self.r1
    }
    pub fn obs_dim(&self) -> usize {
        self.r2
    }
    pub fn drift(&self) -> &Mat {
        &self.raw.drift
    }
    pub fn drift_offset(&self) -> &Vector {
        &self.raw.drift_offset
    }
    pub fn sensor(&self) -> &Mat {
        &self.raw.sensor
    }
    pub fn sensor_offset(&self) -> &Vector {
        &self.raw.sensor_offset
    }
    /// `R = R1`.
    pub fn signal_noise(&self) -> &Mat {
        &self.raw.signal_noise
    }
    pub fn observation_noise(&self) -> &Mat {
        &self.raw.observation_noise
    }
    pub fn signal_noise_sqrt(&self) -> &Mat {
        &self.signal_noise_sqrt
    }
    pub fn observation_noise_sqrt(&self) -> &Mat {
        &self.observation_noise_sqrt
    }
    pub fn observation_noise_inv_sqrt(&self) -> &Mat {
        &self.observation_noise_inv_sqrt
    }
    pub fn observation_noise_inv(&self) -> &Mat {
        &self.observation_noise_inv
    }
    /// `S = C' R2^{-1} C`.
    pub fn sensor_gram(&self) -> &Mat {
        &self.sensor_gram
    }
    /// `C' R2^{-1}`; the Kalman gain is `P C' R2^{-1}`.
    pub fn gain_factor(&self) -> &Mat {
        &self.gain_factor
    }
    /// `C' R2^{-1/2}`.
    pub fn innovation_noise_factor(&self) -> &Mat {
        &self.innovation_noise_factor
    }
}

/// `S = C' R2^{-1} C`.
pub fn sensor_gram(model: &Model) -> Mat {
    model.sensor_gram.clone()
}

/// Numerical ranks of `[R1^{1/2}, A R1^{1/2}, ..]` and `[C; CA; ..]`.
pub fn controllability_observability_ranks(model: &Model) -> (usize, usize) {
    let r1 = model.r1;
    let a = model.drift();
    let b = model.signal_noise_sqrt();
    let mut ctrl = Mat::zeros(r1, r1 * b.ncols());
    let mut block = b.clone();
    for k in 0..r1 {
        ctrl.view_mut((0, k * b.ncols()), (r1, b.ncols())).copy_from(&block);
        block = a * block;
    }
    let c = model.sensor();
    let mut obs = Mat::zeros(r1 * c.nrows(), r1);
    let mut block = c.clone();
    for k in 0..r1 {
        obs.view_mut((k * c.nrows(), 0), (c.nrows(), r1)).copy_from(&block);
        block *= a;
    }
    (numerical_rank(&ctrl), numerical_rank(&obs))
}

/// Change of basis `X' = R2^{-1/2} C X`, `Y' = R2^{-1/2} Y` producing an
/// identity sensor and unit observation noise.
pub fn to_identity_sensor(model: &Model) -> Result<Model> {
    if model.r1 != model.r2 {
        return Err(Error::NotSimilarToFullyObserved(format!(
            "r1 = {} differs from r2 = {}",
            model.r1, model.r2
        )));
    }
    let transform = model.observation_noise_inv_sqrt() * model.sensor();
    let cond = condition_number(&transform);
    if !(cond < 1e12) {
        return Err(Error::NotSimilarToFullyObserved(format!(
            "R2^(-1/2) C is singular (condition number {cond:e})"
        )));
    }
    let inv = transform
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotSimilarToFullyObserved("R2^(-1/2) C is singular".into()))?;
    let r = model.r1;
    let mut noise = &transform * model.signal_noise() * transform.transpose();
    symmetrize(&mut noise);
    let raw = LinearGaussianModel {
        drift: &transform * model.drift() * &inv,
        drift_offset: &transform * model.drift_offset(),
        sensor: Mat::identity(r, r),
        sensor_offset: model.observation_noise_inv_sqrt() * model.sensor_offset(),
        signal_noise: noise,
        observation_noise: Mat::identity(r, r),
    };
    validate(raw)
}

/// Mean vector and covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: Vector,
    pub cov: Mat,
}

impl GaussianLaw {
    pub fn new(mean: Vector, cov: Mat) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::Dimension(format!(
                "mean of length {} with covariance {:?}",
                mean.len(),
                cov.shape()
            )));
        }
        psd_eigen(&cov)?;
        let mut cov = cov;
        symmetrize(&mut cov);
        Ok(Self { mean, cov })
    }

    pub fn dirac(mean: Vector) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: Mat::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sampler(&self) -> Result<GaussianSampler> {
        Ok(GaussianSampler {
            mean: self.mean.clone(),
            sqrt_cov: psd_sqrt(&self.cov)?,
        })
    }
}

/// Draws `mean + cov^{1/2} z`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: Vector,
    sqrt_cov: Mat,
}

impl GaussianSampler {
    pub fn sample(&self, stream: &mut NormalStream) -> Vector {
        let z = stream.normal_vector(self.mean.len());
        &self.mean + &self.sqrt_cov * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::log_norm;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, v)
    }

    fn appendix() -> Model {
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
    fn validation_rejects_bad_noise() {
        let bad_r2 = LinearGaussianModel::centered(
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            m(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        );
        assert!(matches!(bad_r2.validate(), Err(Error::InvalidModel(_))));
        let zero_r1 = LinearGaussianModel::centered(
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::zeros(2, 2),
            Mat::identity(2, 2),
        );
        assert!(matches!(zero_r1.validate(), Err(Error::InvalidModel(_))));
        let mismatch = LinearGaussianModel::centered(
            Mat::identity(2, 2),
            Mat::identity(3, 3),
            Mat::identity(2, 2),
            Mat::identity(3, 3),
        );
        assert!(matches!(mismatch.validate(), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn validated_model_carries_derived_quantities() {
        let model = appendix();
        assert_eq!((model.state_dim(), model.obs_dim()), (2, 1));
        assert_eq!(model.sensor_gram(), &m(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(model.signal_noise_sqrt(), &Mat::identity(2, 2));
    }

    #[test]
    fn sensor_gram_examples() {
        let zero_c = LinearGaussianModel::centered(
            Mat::identity(2, 2),
            Mat::zeros(1, 2),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        )
        .validate()
        .unwrap();
        assert_eq!(sensor_gram(&zero_c), Mat::zeros(2, 2));
        let alpha = -0.7;
        let model = LinearGaussianModel::centered(
            Mat::identity(2, 2),
            m(1, 2, &[1.0, alpha]),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        )
        .validate()
        .unwrap();
        let expected = m(2, 2, &[1.0, alpha, alpha, alpha * alpha]);
        assert!(frobenius(&(sensor_gram(&model) - expected)) < 1e-15);
    }

    #[test]
    fn ranks_of_appendix_model() {
        assert_eq!(controllability_observability_ranks(&appendix()), (2, 2));
        let blind = LinearGaussianModel::centered(
            m(2, 2, &[1.0, 2.0, 1.0, 3.0]),
            Mat::zeros(1, 2),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        )
        .validate()
        .unwrap();
        assert_eq!(controllability_observability_ranks(&blind).1, 0);
    }

    #[test]
    fn identity_sensor_transform() {
        let model = LinearGaussianModel::centered(
            m(2, 2, &[-1.0, 0.3, 0.2, -2.0]),
            m(2, 2, &[1.0, 0.5, -0.2, 2.0]),
            m(2, 2, &[1.0, 0.1, 0.1, 0.5]),
            m(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .validate()
        .unwrap();
        let t = to_identity_sensor(&model).unwrap();
        assert!(frobenius(&(sensor_gram(&t) - Mat::identity(2, 2))) < 1e-10);

        let id = LinearGaussianModel::centered(
            m(2, 2, &[-1.0, 0.3, 0.2, -2.0]),
            Mat::identity(2, 2),
            m(2, 2, &[1.0, 0.1, 0.1, 0.5]),
            Mat::identity(2, 2),
        )
        .validate()
        .unwrap();
        let same = to_identity_sensor(&id).unwrap();
        assert!(frobenius(&(same.drift() - id.drift())) < 1e-12);
        assert!(frobenius(&(same.signal_noise() - id.signal_noise())) < 1e-12);

        let (th, a) = (0.4f64, m(2, 2, &[-1.0, 0.8, -0.3, -0.5]));
        let rot = m(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let rotated = LinearGaussianModel::centered(a.clone(), rot, Mat::identity(2, 2), Mat::identity(2, 2))
            .validate()
            .unwrap();
        let t = to_identity_sensor(&rotated).unwrap();
        assert!((log_norm(t.drift()).unwrap() - log_norm(&a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn identity_sensor_rejects_partial_observation() {
        assert!(matches!(
            to_identity_sensor(&appendix()),
            Err(Error::NotSimilarToFullyObserved(_))
        ));
        let singular = LinearGaussianModel::centered(
            Mat::identity(2, 2),
            m(2, 2, &[1.0, 2.0, 2.0, 4.0]),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
        )
        .validate()
        .unwrap();
        assert!(matches!(
            to_identity_sensor(&singular),
            Err(Error::NotSimilarToFullyObserved(_))
        ));
    }

    #[test]
    fn model_file_rejects_unknown_keys() {
        let ok = r#"{"A":[[1,2],[1,3]],"a":[0,0],"C":[[1,0]],"c":[0],"R1":[[1,0],[0,1]],"R2":[[1]]}"#;
        let model = LinearGaussianModel::from_json(ok).unwrap();
        assert_eq!(model.drift, m(2, 2, &[1.0, 2.0, 1.0, 3.0]));
        let extra = r#"{"A":[[1]],"a":[0],"C":[[1]],"c":[0],"R1":[[1]],"R2":[[1]],"P":[[1]]}"#;
        assert!(LinearGaussianModel::from_json(extra).is_err());
        let ragged = r#"{"A":[[1,2],[1]],"a":[0,0],"C":[[1,0]],"c":[0],"R1":[[1,0],[0,1]],"R2":[[1]]}"#;
        assert!(LinearGaussianModel::from_json(ragged).is_err());
    }

    fn observability_rank(a: &[f64; 4], alpha: f64) -> usize {
        let model = LinearGaussianModel::centered(
            m(2, 2, a),
            m(1, 2, &[1.0, alpha]),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        )
        .validate()
        .unwrap();
        controllability_observability_ranks(&model).1
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(200))]

        #[test]
        fn sensor_direction_observability(
            v in proptest::collection::vec(-3.0f64..3.0, 3),
            alpha in -2.0f64..2.0,
            shift in 0.1f64..2.0,
        ) {
            let (a11, a21, a22) = (v[0], v[1], v[2]);
            let a12 = alpha * (a11 + alpha * a21) - alpha * a22;
            proptest::prop_assert_eq!(observability_rank(&[a11, a12, a21, a22], alpha), 1);
            proptest::prop_assert_eq!(observability_rank(&[a11, a12 + shift, a21, a22], alpha), 2);
        }
    }
}
