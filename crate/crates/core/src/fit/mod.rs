//! Estimation of the scalar, functional and time-by-distribution regression
//! models.
//!
//! The numerical engines are [`irls`] (unpenalised GLM), [`fit_penalized`]
//! (coordinate descent for lasso and group exponential lasso penalties) and
//! [`fit_smooth`] (roughness-penalised IRLS with GCV). The model-level entry
//! points assemble designs from subject features and return a [`ModelFit`].

mod cd;
mod glm;
mod models;
mod smooth;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};
use thiserror::Error;

use crate::basis::{BasisError, BasisSpec, FpcaResult};
use crate::grid::Grid;
use crate::ingest::SubjectRecord;
use crate::linalg::{LinalgError, Mat};
use crate::scalar::Real;

pub use cd::{
    cv_penalized, fit_gel, fit_lasso_glm, fit_penalized, kkt_violation, lambda_grid, lambda_max, penalized_path,
    CvPath, LassoFit, LassoOptions, Penalty,
};
pub use glm::{fit_glm, fit_glm_matrix, irls, GlmFit, GlmOptions};
pub use models::{fit_model, fit_scalar, fit_sofr_quantile, fit_sofr_temporal, fit_sotdr_l, two_step_sotdr};
pub use smooth::{fit_smooth, gcv_search, SmoothFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need more observations than parameters (n = {n}, p = {p})")]
    TooFewRows { n: usize, p: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("logit family needs 0/1 outcomes; observation {index} is {value}")]
    NonBinary { index: usize, value: f64 },
    #[error("perfect separation: coefficients diverge (norm {norm:.3e})")]
    Separation { norm: f64 },
    #[error("design is rank deficient; offending columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },
    #[error("coordinate descent did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("more than {limit} penalised columns became active")]
    ActiveLimit { limit: usize },
    #[error("penalty weight must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("model {model} needs {needed} input")]
    WrongPredictor { model: &'static str, needed: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl FitError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::TooFewRows { .. } => "fit.too_few_rows",
            Self::NonFinite(_) => "fit.non_finite",
            Self::NonBinary { .. } => "fit.non_binary",
            Self::Separation { .. } => "fit.separation",
            Self::RankDeficient { .. } => "fit.rank_deficient",
            Self::NoConvergence { .. } => "fit.no_convergence",
            Self::ActiveLimit { .. } => "fit.active_limit",
            Self::NegativeLambda(_) => "fit.negative_lambda",
            Self::Dimension(_) => "fit.dimension",
            Self::WrongPredictor { .. } => "fit.wrong_predictor",
            Self::Config(_) => "fit.config",
            Self::Basis(e) => e.code(),
            Self::Linalg(_) => "fit.linalg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Identity,
    #[default]
    Logit,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Identity => "identity",
            Family::Logit => "logit",
        }
    }

    pub fn linkinv<T: Real>(self, eta: T) -> T {
        match self {
            Family::Identity => eta,
            Family::Logit => {
                if eta >= T::zero() {
                    T::one() / (T::one() + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (T::one() + e)
                }
            }
        }
    }

    pub fn link<T: Real>(self, mu: T) -> T {
        match self {
            Family::Identity => mu,
            Family::Logit => (mu / (T::one() - mu)).ln(),
        }
    }

    /// IRLS weight and working response at `eta`.
    pub(crate) fn working<T: Real>(self, y: T, eta: T) -> (T, T) {
        match self {
            Family::Identity => (T::one(), y),
            Family::Logit => {
                let mu = self.linkinv(eta);
                let w = (mu * (T::one() - mu)).max(T::lit(1e-10));
                (w, eta + (y - mu) / w)
            }
        }
    }

    /// `-2 log L` up to a constant: residual sum of squares for identity,
    /// binomial deviance for logit.
    pub fn deviance<T: Real>(self, y: &[T], eta: &[T]) -> T {
        match self {
            Family::Identity => y.iter().zip(eta).map(|(&a, &b)| (a - b) * (a - b)).sum(),
            Family::Logit => {
                let ll: T = y.iter().zip(eta).map(|(&yi, &e)| yi * e - softplus(e)).sum();
                -T::two() * ll
            }
        }
    }

    /// Maximised log-likelihood (Gaussian with MLE variance for identity).
    pub fn log_likelihood<T: Real>(self, y: &[T], eta: &[T]) -> T {
        let dev = self.deviance(y, eta);
        match self {
            Family::Identity => {
                let n = T::from_usize_lossy(y.len());
                let s2 = (dev / n).max(T::min_positive_value());
                -n * T::half() * ((T::lit(std::f64::consts::TAU) * s2).ln() + T::one())
            }
            Family::Logit => -dev * T::half(),
        }
    }
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Outcomes and scalar covariates for a set of subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub subject_ids: Vec<String>,
    pub y: Vec<T>,
    /// `n x |Z|`
    pub z: Mat<T>,
    pub z_names: Vec<String>,
    pub family: Family,
}

impl<T: Real> Dataset<T> {
    pub fn new(subject_ids: Vec<String>, y: Vec<T>, z: Mat<T>, z_names: Vec<String>, family: Family) -> Result<Self, FitError> {
        let n = subject_ids.len();
        if y.len() != n || z.rows() != n || z.cols() != z_names.len() {
            return Err(FitError::Dimension(format!(
                "{n} subjects, {} outcomes, {}x{} covariates, {} names",
                y.len(),
                z.rows(),
                z.cols(),
                z_names.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(FitError::NonFinite("outcome".into()));
        }
        if !z.is_finite() {
            return Err(FitError::NonFinite("covariates".into()));
        }
        if family == Family::Logit {
            check_binary(&y)?;
        }
        Ok(Self {
            subject_ids,
            y,
            z,
            z_names,
            family,
        })
    }

    pub fn from_records(records: &[SubjectRecord], z_names: Vec<String>, family: Family) -> Result<Self, FitError> {
        let k = z_names.len();
        let mut z = Mat::zeros(records.len(), k);
        for (i, r) in records.iter().enumerate() {
            if r.covariates.len() != k {
                return Err(FitError::Dimension(format!(
                    "subject {} has {} covariates, expected {k}",
                    r.subject_id,
                    r.covariates.len()
                )));
            }
            for (j, &v) in r.covariates.iter().enumerate() {
                z[(i, j)] = T::lit(v);
            }
        }
        Self::new(
            records.iter().map(|r| r.subject_id.clone()).collect(),
            records.iter().map(|r| T::lit(r.outcome)).collect(),
            z,
            z_names,
            family,
        )
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            subject_ids: rows.iter().map(|&r| self.subject_ids[r].clone()).collect(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            z: self.z.select_rows(rows),
            z_names: self.z_names.clone(),
            family: self.family,
        }
    }

    /// Outcomes as class labels (`y > 0.5`).
    pub fn labels(&self) -> Vec<bool> {
        self.y.iter().map(|&v| v > T::half()).collect()
    }
}

pub(crate) fn check_binary<T: Real>(y: &[T]) -> Result<(), FitError> {
    match y.iter().position(|&v| v != T::zero() && v != T::one()) {
        Some(index) => Err(FitError::NonBinary {
            index,
            value: y[index].to_f64_lossy(),
        }),
        None => Ok(()),
    }
}

/// Per-subject functional input to a model.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor<T> {
    /// Subject mean activity.
    Mean(Vec<T>),
    /// Curves on a common grid: diurnal curves (Model 2) or quantile functions (Model 3).
    Curves { grid: Grid<T>, values: Mat<T> },
    /// Quadrature-projected TD surfaces, one row `W_i` per subject.
    Tensor {
        t_grid: Grid<T>,
        p_grid: Grid<T>,
        basis_t: BasisSpec<T>,
        basis_p: BasisSpec<T>,
        w: Mat<T>,
    },
    /// Time-varying L-moment curves, one `n x |t|` matrix per order.
    LMoments { grid: Grid<T>, orders: Vec<Mat<T>> },
}

impl<T: Real> Predictor<T> {
    pub fn n_rows(&self) -> usize {
        match self {
            Predictor::Mean(v) => v.len(),
            Predictor::Curves { values, .. } => values.rows(),
            Predictor::Tensor { w, .. } => w.rows(),
            Predictor::LMoments { orders, .. } => orders.first().map_or(0, |m| m.rows()),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        match self {
            Predictor::Mean(v) => Predictor::Mean(rows.iter().map(|&r| v[r]).collect()),
            Predictor::Curves { grid, values } => Predictor::Curves {
                grid: grid.clone(),
                values: values.select_rows(rows),
            },
            Predictor::Tensor {
                t_grid,
                p_grid,
                basis_t,
                basis_p,
                w,
            } => Predictor::Tensor {
                t_grid: t_grid.clone(),
                p_grid: p_grid.clone(),
                basis_t: basis_t.clone(),
                basis_p: basis_p.clone(),
                w: w.select_rows(rows),
            },
            Predictor::LMoments { grid, orders } => Predictor::LMoments {
                grid: grid.clone(),
                orders: orders.iter().map(|m| m.select_rows(rows)).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Scalar GLM on mean activity.
    M1,
    /// Scalar-on-function regression on diurnal curves.
    M2,
    /// Scalar-on-function regression on quantile functions.
    M3,
    /// Scalar-on-TD regression with two-step lasso estimation.
    M4,
    /// Additive model on time-varying L-moment curves with GEL selection.
    SotdrL,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::M1, ModelKind::M2, ModelKind::M3, ModelKind::M4, ModelKind::SotdrL];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::M1 => "m1",
            ModelKind::M2 => "m2",
            ModelKind::M3 => "m3",
            ModelKind::M4 => "m4",
            ModelKind::SotdrL => "sotdr_l",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| FitError::Config(format!("unknown model '{s}' (expected m1, m2, m3, m4 or sotdr_l)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// Minimum cross-validated deviance.
    Min,
    /// Largest penalty within one standard error of the minimum.
    #[default]
    OneSe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    #[default]
    CrossValidated,
    /// Fixed penalty weight on the standardised features.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    #[default]
    Bspline,
    Legendre,
}

impl BasisFamily {
    pub fn spec<T: Real>(self, size: usize, lo: T, hi: T) -> Result<BasisSpec<T>, BasisError> {
        match self {
            Self::Bspline => BasisSpec::bspline(size, lo, hi),
            Self::Legendre => BasisSpec::legendre(size, lo, hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroupMultiplier {
    #[default]
    SqrtSize,
    Unit,
}

/// Settings shared by all model fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Time-direction basis size `K0` (Models 2 and 4).
    pub k_t: usize,
    /// Quantile-direction basis size `L0` (Models 3 and 4).
    pub l_p: usize,
    pub quantile_basis: BasisFamily,
    /// Model 4 basis families; Legendre of size 1 is the constant basis.
    pub surface_basis_t: BasisFamily,
    pub surface_basis_p: BasisFamily,
    pub lambda: LambdaChoice,
    pub lambda_rule: LambdaRule,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub lambda_folds: usize,
    pub standardize: bool,
    pub gcv_points: usize,
    /// `log10` range of the GCV grid relative to the data-driven scale.
    pub gcv_log10_range: (f64, f64),
    pub l_moment_orders: usize,
    pub pve: f64,
    pub max_components: Option<usize>,
    pub gel_tau: f64,
    pub group_multiplier: GroupMultiplier,
    pub alpha: f64,
    pub seed: u64,
    pub glm: GlmOptions,
    pub lasso: LassoOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_t: 12,
            l_p: 12,
            quantile_basis: BasisFamily::Bspline,
            surface_basis_t: BasisFamily::Bspline,
            surface_basis_p: BasisFamily::Bspline,
            lambda: LambdaChoice::CrossValidated,
            lambda_rule: LambdaRule::OneSe,
            n_lambda: 50,
            lambda_min_ratio: 1e-3,
            lambda_folds: 10,
            standardize: true,
            gcv_points: 20,
            gcv_log10_range: (-6.0, 4.0),
            l_moment_orders: 4,
            pve: 0.99,
            max_components: None,
            gel_tau: 1.0 / 3.0,
            group_multiplier: GroupMultiplier::SqrtSize,
            alpha: 0.05,
            seed: 0,
            glm: GlmOptions::default(),
            lasso: LassoOptions {
                max_active_fraction: Some(0.25),
                ..LassoOptions::default()
            },
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::Config(m.to_string()));
        if self.k_t < 1 || self.l_p < 1 {
            return bad("k_t and l_p must be >= 1");
        }
        if self.n_lambda < 2 || !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return bad("lambda path needs n_lambda >= 2 and 0 < lambda_min_ratio < 1");
        }
        if self.lambda_folds < 2 {
            return bad("lambda_folds must be >= 2");
        }
        if let LambdaChoice::Fixed(l) = self.lambda {
            if !(l >= 0.0) {
                return Err(FitError::NegativeLambda(l));
            }
        }
        if self.gcv_points < 2 || !(self.gcv_log10_range.0 < self.gcv_log10_range.1) {
            return bad("GCV grid needs >= 2 points over an increasing range");
        }
        if self.l_moment_orders == 0 {
            return bad("l_moment_orders must be >= 1");
        }
        if !(self.pve > 0.0 && self.pve <= 1.0) {
            return bad("pve must lie in (0, 1]");
        }
        if !(self.gel_tau > 0.0) {
            return bad("gel_tau must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One line of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub statistic: f64,
    pub p_value: f64,
}

/// Wald test that a set of coefficients is jointly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveDomain {
    Time,
    Quantile,
}

/// Estimated coefficient function `β(t)` or `β(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFit<T> {
    pub domain: CurveDomain,
    pub basis: BasisSpec<T>,
    pub grid: Grid<T>,
    pub theta: Vec<T>,
    /// `β̂` on the grid.
    pub beta: Vec<T>,
    /// Pointwise standard errors of `β̂` on the grid.
    pub std_error: Vec<T>,
    pub lambda: T,
    pub edf: T,
}

impl<T: Real> CurveFit<T> {
    /// Pointwise `β̂ ± 2 SE` bands.
    pub fn band(&self) -> (Vec<T>, Vec<T>) {
        let two = T::two();
        let lo = self.beta.iter().zip(&self.std_error).map(|(&b, &s)| b - two * s).collect();
        let hi = self.beta.iter().zip(&self.std_error).map(|(&b, &s)| b + two * s).collect();
        (lo, hi)
    }
}

/// Estimated coefficient surface `β(t, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFit<T> {
    pub basis_t: BasisSpec<T>,
    pub basis_p: BasisSpec<T>,
    pub t_grid: Grid<T>,
    pub p_grid: Grid<T>,
    /// `θ_{k,l}` at index `k * L0 + l`; exactly zero when unselected.
    pub theta: Vec<T>,
    pub selected: Vec<usize>,
    /// `β̂` on `t_grid x p_grid`.
    pub beta: Mat<T>,
}

/// Estimated L-moment coefficient curves `β*_r(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LMomentFit<T> {
    pub grid: Grid<T>,
    pub fpca: Vec<FpcaResult<T>>,
    /// `β_{r,s}` per order; zero when unselected.
    pub coefficients: Vec<Vec<T>>,
    /// `R x |t|`
    pub curves: Mat<T>,
    /// Orders (1-based) with at least one selected score.
    pub selected_orders: Vec<usize>,
    /// Selected `(order, component)` pairs, both 1-based.
    pub selected: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalFit<T> {
    /// No activity term (empty selection).
    None,
    Scalar { beta: T },
    Curve(CurveFit<T>),
    Surface(SurfaceFit<T>),
    LMoment(LMomentFit<T>),
}

/// A fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit<T> {
    pub kind: ModelKind,
    pub family: Family,
    pub intercept: T,
    pub gamma: Vec<T>,
    pub covariate_names: Vec<String>,
    pub functional: FunctionalFit<T>,
    pub coefficients: Vec<CoefficientRow>,
    /// Joint test of all activity coefficients in the final fit.
    pub joint_test: Option<JointTest>,
    pub log_likelihood: f64,
    pub deviance: f64,
    pub dispersion: f64,
    pub n_obs: usize,
    /// Intercept + covariates + activity coefficients (effective count for smooths).
    pub n_params: f64,
    pub lambda: Option<f64>,
    /// Inference ignores the selection step.
    pub post_selection: bool,
    pub warnings: Vec<String>,
    pub fitted_eta: Vec<T>,
    pub config: FitConfig,
}

impl<T: Real> ModelFit<T> {
    /// Linear predictor for subjects described by `z` and `predictor`.
    pub fn predict_eta(&self, z: &Mat<T>, predictor: &Predictor<T>) -> Result<Vec<T>, FitError> {
        let n = z.rows();
        if z.cols() != self.gamma.len() {
            return Err(FitError::Dimension(format!(
                "{} covariates supplied, model has {}",
                z.cols(),
                self.gamma.len()
            )));
        }
        if predictor.n_rows() != n {
            return Err(FitError::Dimension(format!("{} predictor rows for {n} subjects", predictor.n_rows())));
        }
        let mut eta: Vec<T> = (0..n)
            .map(|i| self.intercept + z.row(i).iter().zip(&self.gamma).map(|(&a, &b)| a * b).sum::<T>())
            .collect();
        match (&self.functional, predictor) {
            (FunctionalFit::None, _) => {}
            (FunctionalFit::Scalar { beta }, Predictor::Mean(x)) => {
                for (e, &xi) in eta.iter_mut().zip(x) {
                    *e += *beta * xi;
                }
            }
            (FunctionalFit::Curve(c), Predictor::Curves { grid, values }) => {
                if values.cols() != c.grid.len() || grid.points() != c.grid.points() {
                    return Err(FitError::Dimension("curve grid differs from the fitted grid".into()));
                }
                let wb: Vec<T> = c.grid.weights().iter().zip(&c.beta).map(|(&w, &b)| w * b).collect();
                for (i, e) in eta.iter_mut().enumerate() {
                    *e += values.row(i).iter().zip(&wb).map(|(&a, &b)| a * b).sum::<T>();
                }
            }
            (FunctionalFit::Surface(s), Predictor::Tensor { w, .. }) => {
                if w.cols() != s.theta.len() {
                    return Err(FitError::Dimension("tensor features differ from fitted basis".into()));
                }
                for (i, e) in eta.iter_mut().enumerate() {
                    *e += s.selected.iter().map(|&j| w[(i, j)] * s.theta[j]).sum::<T>();
                }
            }
            (FunctionalFit::LMoment(l), Predictor::LMoments { orders, .. }) => {
                for &r in &l.selected_orders {
                    let curves = orders
                        .get(r - 1)
                        .ok_or_else(|| FitError::Dimension(format!("L-moment order {r} missing")))?;
                    let scores = l.fpca[r - 1].project(curves)?;
                    let coef = &l.coefficients[r - 1];
                    for (i, e) in eta.iter_mut().enumerate() {
                        *e += scores.row(i).iter().zip(coef).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
            }
            (_, _) => {
                return Err(FitError::WrongPredictor {
                    model: self.kind.as_str(),
                    needed: match self.kind {
                        ModelKind::M1 => "subject-mean",
                        ModelKind::M2 | ModelKind::M3 => "curve",
                        ModelKind::M4 => "tensor-feature",
                        ModelKind::SotdrL => "L-moment-curve",
                    },
                })
            }
        }
        Ok(eta)
    }

    /// Predicted means on the response scale.
    pub fn predict(&self, z: &Mat<T>, predictor: &Predictor<T>) -> Result<Vec<T>, FitError> {
        Ok(self
            .predict_eta(z, predictor)?
            .into_iter()
            .map(|e| self.family.linkinv(e))
            .collect())
    }

    /// Number of activity coefficients in the final fit.
    pub fn n_functional(&self) -> usize {
        match &self.functional {
            FunctionalFit::None => 0,
            FunctionalFit::Scalar { .. } => 1,
            FunctionalFit::Curve(c) => c.theta.len(),
            FunctionalFit::Surface(s) => s.selected.len(),
            FunctionalFit::LMoment(l) => l.selected.len(),
        }
    }
}

/// Wald statistics and p-values: `t` with `df` residual degrees of freedom for
/// identity, standard normal for logit.
pub(crate) fn wald_rows(names: &[String], est: &[f64], se: &[f64], family: Family, df: f64) -> Vec<CoefficientRow> {
    names
        .iter()
        .zip(est.iter().zip(se))
        .map(|(name, (&b, &s))| {
            let stat = if s > 0.0 { b / s } else { f64::NAN };
            let p = two_sided_p(stat, family, df);
            CoefficientRow {
                name: name.clone(),
                estimate: b,
                std_error: s,
                statistic: stat,
                p_value: p,
            }
        })
        .collect()
}

fn two_sided_p(stat: f64, family: Family, df: f64) -> f64 {
    if !stat.is_finite() {
        return f64::NAN;
    }
    let tail = match family {
        Family::Logit => Normal::new(0.0, 1.0).ok().map(|d| d.sf(stat.abs())),
        Family::Identity => StudentsT::new(0.0, 1.0, df.max(1.0)).ok().map(|d| d.sf(stat.abs())),
    };
    tail.map(|t| (2.0 * t).min(1.0)).unwrap_or(f64::NAN)
}

/// Joint Wald test of `b = 0` with covariance `v`: chi-square for logit,
/// `F(k, df)` for identity, with `k` the numerical rank of `v`.
pub(crate) fn joint_wald(b: &[f64], v: &Mat<f64>, family: Family, df: f64) -> Option<JointTest> {
    let k = b.len();
    if k == 0 {
        return None;
    }
    let eig = crate::linalg::SymmetricEigen::new(v).ok()?;
    let sol = eig.pseudo_solve(b, 1e-12);
    let w: f64 = b.iter().zip(&sol).map(|(a, c)| a * c).sum();
    let top = eig.values.first().copied().unwrap_or(0.0);
    let k = eig.values.iter().filter(|&&l| l > 1e-12 * top).count().max(1);
    let p = match family {
        Family::Logit => ChiSquared::new(k as f64).ok()?.sf(w),
        Family::Identity => FisherSnedecor::new(k as f64, df.max(1.0)).ok()?.sf(w / k as f64),
    };
    Some(JointTest {
        statistic: w,
        df: k,
        p_value: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logit_link_round_trip_and_deviance() {
        let f = Family::Logit;
        for &e in &[-40.0, -3.0, 0.0, 2.5, 40.0] {
            let mu: f64 = f.linkinv(e);
            assert!((0.0..=1.0).contains(&mu));
            if e.abs() < 10.0 {
                assert_abs_diff_eq!(f.link(mu), e, epsilon = 1e-10);
            }
        }
        // deviance of y against eta = 0 is 2 n ln 2
        let y = [0.0, 1.0, 1.0];
        assert_abs_diff_eq!(f.deviance(&y, &[0.0; 3]), 6.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn model_kind_parses() {
        assert_eq!("sotdr_l".parse::<ModelKind>().unwrap(), ModelKind::SotdrL);
        assert!("m9".parse::<ModelKind>().is_err());
    }

    #[test]
    fn wald_p_values() {
        let rows = wald_rows(&["a".into()], &[1.959_963_984_540_054], &[1.0], Family::Logit, 0.0);
        assert_abs_diff_eq!(rows[0].p_value, 0.05, epsilon = 1e-9);
        let j = joint_wald(&[1.0, 1.0], &Mat::identity(2), Family::Logit, 0.0).unwrap();
        assert_abs_diff_eq!(j.statistic, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(j.p_value, (-1.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn dataset_rejects_non_binary_logit() {
        let e = Dataset::new(vec!["a".into()], vec![0.5], Mat::zeros(1, 0), vec![], Family::Logit).unwrap_err();
        assert_eq!(e.code(), "fit.non_binary");
    }
}
