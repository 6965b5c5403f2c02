//! Ensemble transform Kalman filter (ETKF) and the assimilation loop.
//!
//! The analysis ensemble is a right-multiplication of the background
//! deviations by a transform computed in the E-dimensional ensemble space:
//!
//! ```text
//! X^b   = background deviations (dim x E)
//! Y^b   = H X^b
//! S     = (E-1) I / rho  +  (Y^b)^T R^-1 Y^b
//! P~^a  = S^-1                      (analysis covariance in ensemble space)
//! W^a   = [(E-1) P~^a]^(1/2)        (symmetric square root)
//! w-^a  = P~^a (Y^b)^T R^-1 (y - H x-^b)
//! x^a_k = x-^b + X^b (W^a_k + w-^a)
//! ```
//!
//! `rho >= 1` is multiplicative covariance inflation. A single symmetric
//! eigendecomposition of S provides both the inverse and the square root.

use crate::dynamics::{Model, State};
use crate::error::{Error, Result};
use crate::observation::{MeasurementOperator, MeasurementRecord, NoiseModel};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

/// Eigenvalues of S below `-RELATIVE_NEGATIVE_FLOOR * max` are an error…
const RELATIVE_NEGATIVE_FLOOR: f64 = 1e-8;
/// …while smaller dips are clamped up to this multiple of the largest one.
const RELATIVE_CLAMP: f64 = 1e-12;

/// An ensemble of physical states, one member per column.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    /// Wrap a dim x E matrix of member columns; E must be at least 2.
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::Config(format!(
                "ensemble needs at least 2 members, got {}",
                members.ncols()
            )));
        }
        if members.nrows() == 0 {
            return Err(Error::Config("ensemble state dimension is zero".into()));
        }
        Ok(Self { members })
    }

    pub fn from_members(members: &[State]) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("ensemble member list"));
        }
        let dim = members[0].len();
        if members.iter().any(|m| m.len() != dim) {
            return Err(Error::Dimension("ensemble members differ in length".into()));
        }
        let mat = DMatrix::from_fn(dim, members.len(), |i, k| members[k][i]);
        Self::new(mat)
    }

    /// `center + spread * xi` with iid standard-normal `xi` per component.
    pub fn random_around(
        center: &State,
        spread: f64,
        size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut members = DMatrix::zeros(center.len(), size);
        for k in 0..size {
            for i in 0..center.len() {
                let xi: f64 = rng.sample(StandardNormal);
                members[(i, k)] = center[i] + spread * xi;
            }
        }
        Self::new(members)
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn member(&self, k: usize) -> State {
        self.members.column(k).into_owned()
    }

    /// Ensemble mean.
    pub fn mean(&self) -> State {
        let e = self.size() as f64;
        let mut mean = DVector::zeros(self.dim());
        for k in 0..self.size() {
            mean += self.members.column(k);
        }
        mean / e
    }

    /// Deviations from the mean (columns sum to zero).
    pub fn deviations(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut dev = self.members.clone();
        for mut col in dev.column_iter_mut() {
            col -= &mean;
        }
        dev
    }

    /// Sample covariance X X^T / (E-1).
    pub fn covariance(&self) -> DMatrix<f64> {
        let dev = self.deviations();
        let devt = dev.transpose();
        (&dev * &devt) / (self.size() as f64 - 1.0)
    }
}

/// ETKF tuning and measurement geometry, fixed across a DA run.
#[derive(Clone, Debug)]
pub struct DAConfig {
    pub h: MeasurementOperator,
    pub noise: NoiseModel,
    /// Multiplicative covariance inflation, at least 1.
    pub rho: f64,
}

impl DAConfig {
    pub fn new(h: MeasurementOperator, noise: NoiseModel, rho: f64) -> Result<Self> {
        let cfg = Self { h, noise, rho };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 1.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!(
                "covariance inflation rho must be >= 1, got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// One ETKF analysis update of `background` given the measurement `y`.
pub fn etkf_analysis(background: &Ensemble, y: &DVector<f64>, cfg: &DAConfig) -> Result<Ensemble> {
    cfg.validate()?;
    let e = background.size();
    let ef = e as f64;
    if background.dim() != cfg.h.state_dim() {
        return Err(Error::Dimension(format!(
            "ensemble dimension {} does not match operator state dimension {}",
            background.dim(),
            cfg.h.state_dim()
        )));
    }
    if y.len() != cfg.h.measured_dim() {
        return Err(Error::Dimension(format!(
            "measurement has {} components, operator yields {}",
            y.len(),
            cfg.h.measured_dim()
        )));
    }

    let mean = background.mean();
    let xb = background.deviations();
    // Y^b = H X^b: select the measured rows of the deviations.
    let yb = xb.select_rows(cfg.h.indices().iter());
    let r_inv = 1.0 / cfg.noise.variance();

    // S = (E-1)/rho I + (Y^b)^T R^-1 Y^b  (E x E, symmetric PSD).
    let mut s = yb.transpose() * &yb * r_inv;
    let diag_add = (ef - 1.0) / cfg.rho;
    for k in 0..e {
        s[(k, k)] += diag_add;
    }

    let eig = SymmetricEigen::new(s);
    let max_eig = eig.eigenvalues.max();
    if !(max_eig > 0.0 && max_eig.is_finite()) {
        return Err(Error::NonFinite("ETKF eigendecomposition"));
    }
    let negative_floor = -RELATIVE_NEGATIVE_FLOOR * max_eig;
    let clamp = RELATIVE_CLAMP * max_eig;
    let mut inv = DVector::zeros(e);
    let mut sqrt_scaled = DVector::zeros(e);
    for k in 0..e {
        let lambda = eig.eigenvalues[k];
        if lambda < negative_floor {
            return Err(Error::IndefiniteCovariance {
                value: lambda,
                floor: negative_floor,
            });
        }
        let lambda = lambda.max(clamp);
        inv[k] = 1.0 / lambda;
        sqrt_scaled[k] = ((ef - 1.0) / lambda).sqrt();
    }

    // w-^a = S^-1 (Y^b)^T R^-1 (y - H x-^b)
    let innovation = (y - cfg.h.observe(&mean)?) * r_inv;
    let c_innov = yb.transpose() * innovation;
    let wbar = &eig.eigenvectors * (inv.component_mul(&(eig.eigenvectors.transpose() * c_innov)));

    // W^a = [(E-1) S^-1]^(1/2), then add w-^a to every column.
    let mut w =
        &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_scaled) * eig.eigenvectors.transpose();
    for mut col in w.column_iter_mut() {
        col += &wbar;
    }

    // x^a_k = x-^b + X^b w_k.
    let mut analysis = &xb * &w;
    for mut col in analysis.column_iter_mut() {
        col += &mean;
    }
    Ensemble::new(analysis)
}

/// Advance every member by one sampling interval.
pub fn forecast_ensemble(model: &dyn Model, ensemble: &Ensemble) -> Result<Ensemble> {
    let mut out = DMatrix::zeros(ensemble.dim(), ensemble.size());
    for k in 0..ensemble.size() {
        let next = model.step(&ensemble.member(k))?;
        out.column_mut(k).copy_from(&next);
    }
    Ensemble::new(out)
}

/// Analysis means over a DA run, 1:1 with the measurements consumed.
#[derive(Clone, Debug)]
pub struct AnalysisSeries {
    /// Analysis ensemble mean at each measurement time.
    pub means: Vec<State>,
    /// Ensemble after the final analysis (for continuing the run).
    pub last: Ensemble,
}

/// Run the forecast/analysis cycle over consecutive measurements.
///
/// `init` is the background at the time of `measurements[0]`; the first
/// analysis applies the ETKF directly to it, then each subsequent cycle
/// forecasts one sampling interval and assimilates the next measurement.
pub fn run_da(
    model: &dyn Model,
    measurements: &[MeasurementRecord],
    cfg: &DAConfig,
    init: Ensemble,
) -> Result<AnalysisSeries> {
    if measurements.is_empty() {
        return Err(Error::Empty("measurement series"));
    }
    if !measurements.windows(2).all(|w| w[1].step == w[0].step + 1) {
        return Err(Error::Config(
            "measurements must be at consecutive sampling steps".into(),
        ));
    }
    let mut means = Vec::with_capacity(measurements.len());
    let mut ensemble = init;
    for (i, record) in measurements.iter().enumerate() {
        if i > 0 {
            ensemble = forecast_ensemble(model, &ensemble)?;
        }
        ensemble = etkf_analysis(&ensemble, &record.y, cfg)?;
        means.push(ensemble.mean());
    }
    Ok(AnalysisSeries {
        means,
        last: ensemble,
    })
}
