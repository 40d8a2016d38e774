//! Per-subject feature objects for a whole panel and their conversion into
//! model predictors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, TensorProjector};
use crate::fit::{FitConfig, ModelKind, Predictor};
use crate::grid::{Grid, GridError};
use crate::ingest::{aggregate_epochs, ActivityPanel, IngestError, SubjectSeries, DEFAULT_MIN_DAY_FRACTION};
use crate::linalg::Mat;
use crate::scalar::Real;
use crate::tdobject::{
    diurnal_curve, subject_mean, subject_quantile_function, td_surface, time_varying_l_moments, BoundaryPolicy,
    LMomentCurveSet, TdError, TdSurface, WindowOptions,
};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Td(#[from] TdError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("panel epoch width {panel} does not match the time-grid stride {stride}")]
    EpochMismatch { panel: usize, stride: usize },
    #[error("subject `{0}` has no feature row")]
    MissingSubject(String),
    #[error("invalid feature settings: {0}")]
    Config(String),
}

impl FeatureError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Td(e) => e.code(),
            Self::Ingest(e) => e.code(),
            Self::Grid(_) => "features.grid",
            Self::Basis(e) => e.code(),
            Self::EpochMismatch { .. } => "features.epoch_mismatch",
            Self::MissingSubject(_) => "features.missing_subject",
            Self::Config(_) => "features.config",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Minutes between time-grid nodes; also the diurnal-curve epoch.
    pub t_stride: usize,
    /// Number of quantile levels `k / (m + 1)`.
    pub p_levels: usize,
    pub half_width: usize,
    pub boundary: BoundaryPolicy,
    pub min_day_fraction: f64,
    pub l_moment_orders: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            t_stride: 10,
            p_levels: 99,
            half_width: 5,
            boundary: BoundaryPolicy::Truncate,
            min_day_fraction: DEFAULT_MIN_DAY_FRACTION,
            l_moment_orders: 4,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.half_width < 1 {
            return Err(TdError::BadHalfWidth.into());
        }
        if self.p_levels < 2 {
            return Err(FeatureError::Config("p_levels must be >= 2".into()));
        }
        if self.l_moment_orders < 1 {
            return Err(FeatureError::Config("l_moment_orders must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_day_fraction) {
            return Err(FeatureError::Config("min_day_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn window(&self) -> WindowOptions {
        WindowOptions {
            half_width: self.half_width,
            boundary: self.boundary,
            min_day_fraction: self.min_day_fraction,
        }
    }

    pub fn t_grid<T: Real>(&self) -> Result<Grid<T>, FeatureError> {
        Ok(Grid::time_of_day(self.t_stride)?)
    }

    pub fn p_grid<T: Real>(&self) -> Result<Grid<T>, FeatureError> {
        Ok(Grid::quantile_levels(self.p_levels)?)
    }
}

/// Every functional and scalar summary of every subject, in panel order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    pub subject_ids: Vec<String>,
    pub t_grid: Grid<T>,
    pub p_grid: Grid<T>,
    /// Subject mean activity `X̄_i`.
    pub means: Vec<T>,
    /// `n x |t_grid|` diurnal curves at the grid stride.
    pub diurnal: Mat<T>,
    /// `n x |p_grid|` subject quantile functions.
    pub quantiles: Mat<T>,
    pub surfaces: Vec<TdSurface<T>>,
    pub lmoments: Vec<LMomentCurveSet<T>>,
}

fn only_valid_days<T: Real>(s: &SubjectSeries<T>, min_fraction: f64) -> SubjectSeries<T> {
    SubjectSeries::new(s.subject_id.clone(), s.valid_days(min_fraction).cloned().collect())
}

struct SubjectFeatures<T> {
    mean: T,
    diurnal: Vec<T>,
    quantiles: Vec<T>,
    surface: TdSurface<T>,
    lmoments: LMomentCurveSet<T>,
}

/// Builds all features from a minute-level (or stride-aggregated) panel.
/// Subjects are processed in parallel; output order follows the panel.
pub fn build_features<T: Real>(panel: &ActivityPanel<T>, cfg: &FeatureConfig) -> Result<FeatureSet<T>, FeatureError> {
    cfg.validate()?;
    let t_grid: Grid<T> = cfg.t_grid()?;
    let p_grid: Grid<T> = cfg.p_grid()?;
    let window = cfg.window();
    let valid = ActivityPanel::new(
        panel
            .subjects()
            .iter()
            .map(|s| only_valid_days(s, cfg.min_day_fraction))
            .collect(),
        panel.epoch_width(),
    )?;
    let coarse = if valid.epoch_width() == cfg.t_stride {
        valid.clone()
    } else if valid.epoch_width() == 1 {
        aggregate_epochs(&valid, cfg.t_stride)?
    } else {
        return Err(FeatureError::EpochMismatch {
            panel: valid.epoch_width(),
            stride: cfg.t_stride,
        });
    };
    let rows: Vec<SubjectFeatures<T>> = panel
        .subjects()
        .par_iter()
        .zip(coarse.subjects().par_iter())
        .map(|(series, coarse)| -> Result<SubjectFeatures<T>, FeatureError> {
            Ok(SubjectFeatures {
                mean: subject_mean(series, cfg.min_day_fraction)?,
                diurnal: diurnal_curve(coarse, 0.0)?.values,
                quantiles: subject_quantile_function(series, &p_grid, cfg.min_day_fraction)?.values,
                surface: td_surface(series, &t_grid, &p_grid, &window)?,
                lmoments: time_varying_l_moments(series, &t_grid, cfg.l_moment_orders, &window)?,
            })
        })
        .collect::<Result<_, _>>()?;
    let n = rows.len();
    let mut diurnal = Mat::zeros(n, t_grid.len());
    let mut quantiles = Mat::zeros(n, p_grid.len());
    let mut means = Vec::with_capacity(n);
    let mut surfaces = Vec::with_capacity(n);
    let mut lmoments = Vec::with_capacity(n);
    for (i, r) in rows.into_iter().enumerate() {
        diurnal.row_mut(i).copy_from_slice(&r.diurnal);
        quantiles.row_mut(i).copy_from_slice(&r.quantiles);
        means.push(r.mean);
        surfaces.push(r.surface);
        lmoments.push(r.lmoments);
    }
    Ok(FeatureSet {
        subject_ids: panel.subjects().iter().map(|s| s.subject_id.clone()).collect(),
        t_grid,
        p_grid,
        means,
        diurnal,
        quantiles,
        surfaces,
        lmoments,
    })
}

impl<T: Real> FeatureSet<T> {
    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    /// Rows reordered to follow `ids`.
    pub fn align(&self, ids: &[String]) -> Result<Self, FeatureError> {
        let index: std::collections::HashMap<&str, usize> =
            self.subject_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let rows = ids
            .iter()
            .map(|id| index.get(id.as_str()).copied().ok_or_else(|| FeatureError::MissingSubject(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.select_rows(&rows))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            subject_ids: rows.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            t_grid: self.t_grid.clone(),
            p_grid: self.p_grid.clone(),
            means: rows.iter().map(|&i| self.means[i]).collect(),
            diurnal: self.diurnal.select_rows(rows),
            quantiles: self.quantiles.select_rows(rows),
            surfaces: rows.iter().map(|&i| self.surfaces[i].clone()).collect(),
            lmoments: rows.iter().map(|&i| self.lmoments[i].clone()).collect(),
        }
    }

    /// `n x |t_grid|` curves of L-moment order `r` (1-based).
    pub fn lmoment_order(&self, r: usize) -> Mat<T> {
        let m = self.t_grid.len();
        let mut out = Mat::zeros(self.len(), m);
        for (i, set) in self.lmoments.iter().enumerate() {
            out.row_mut(i).copy_from_slice(set.order(r));
        }
        out
    }

    /// Tensor design rows `W_i` under the configured surface bases.
    pub fn tensor_features(&self, cfg: &FitConfig) -> Result<Predictor<T>, FeatureError> {
        let (tlo, thi) = self.t_grid.domain();
        let (plo, phi) = self.p_grid.domain();
        let basis_t = cfg.surface_basis_t.spec(cfg.k_t, tlo, thi)?;
        let basis_p = cfg.surface_basis_p.spec(cfg.l_p, plo, phi)?;
        let proj = TensorProjector::new(&self.t_grid, &self.p_grid, &basis_t, &basis_p)?;
        let rows: Vec<Vec<T>> = self
            .surfaces
            .par_iter()
            .map(|s| proj.project(&s.values))
            .collect::<Result<_, _>>()?;
        let mut w = Mat::zeros(self.len(), proj.len());
        for (i, r) in rows.iter().enumerate() {
            w.row_mut(i).copy_from_slice(r);
        }
        Ok(Predictor::Tensor {
            t_grid: self.t_grid.clone(),
            p_grid: self.p_grid.clone(),
            basis_t,
            basis_p,
            w,
        })
    }

    /// Predictor for `kind` under `cfg`.
    pub fn predictor(&self, kind: ModelKind, cfg: &FitConfig) -> Result<Predictor<T>, FeatureError> {
        Ok(match kind {
            ModelKind::M1 => Predictor::Mean(self.means.clone()),
            ModelKind::M2 => Predictor::Curves {
                grid: self.t_grid.clone(),
                values: self.diurnal.clone(),
            },
            ModelKind::M3 => Predictor::Curves {
                grid: self.p_grid.clone(),
                values: self.quantiles.clone(),
            },
            ModelKind::M4 => self.tensor_features(cfg)?,
            ModelKind::SotdrL => {
                let r = cfg.l_moment_orders.min(self.lmoments.first().map_or(0, |s| s.max_order()));
                Predictor::LMoments {
                    grid: self.t_grid.clone(),
                    orders: (1..=r).map(|k| self.lmoment_order(k)).collect(),
                }
            }
        })
    }
}
