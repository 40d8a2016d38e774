//! Cross-validated discrimination and fit metrics, and biomarker scores.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureSet};
use crate::fit::{fit_model, Dataset, Family, FitConfig, FitError, FunctionalFit, ModelFit, ModelKind};
use crate::grid::Grid;
use crate::linalg::Mat;
use crate::resample::{derive_seed, fold_assignment};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("{0} needs the identity family")]
    NotIdentity(&'static str),
    #[error("{q} parameters leave no residual degrees of freedom with {n} observations")]
    TooManyParameters { q: usize, n: usize },
    #[error("no fitted {0} model supplied")]
    MissingFit(ModelKind),
    #[error("invalid cross-validation settings: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("fold {fold} of repeat {repeat}: {source}")]
    Fold {
        repeat: usize,
        fold: usize,
        #[source]
        source: FitError,
    },
    #[error("csv output failed: {0}")]
    Output(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Features(#[from] FeatureError),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::SingleClass => "evaluate.single_class",
            Self::NotIdentity(_) => "evaluate.not_identity",
            Self::TooManyParameters { .. } => "evaluate.too_many_parameters",
            Self::MissingFit(_) => "evaluate.missing_fit",
            Self::Config(_) => "evaluate.config",
            Self::Dimension(_) => "evaluate.dimension",
            Self::Fold { source, .. } => source.code(),
            Self::Output(_) => "evaluate.output",
            Self::Fit(e) => e.code(),
            Self::Features(e) => e.code(),
        }
    }
}

/// Area under the ROC curve: the Mann–Whitney probability that a positive
/// outscores a negative, ties counted one half.
pub fn auc<T: Real>(scores: &[T], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Dimension(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    // midranks over runs of tied scores
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum_pos += mid * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSpec {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Balance class proportions across folds (binary outcomes only).
    pub stratified: bool,
    /// AUC of the pooled out-of-fold scores instead of the mean per-fold AUC.
    pub pooled: bool,
}

impl Default for CvSpec {
    fn default() -> Self {
        Self {
            folds: 5,
            repeats: 20,
            seed: 0,
            stratified: true,
            pooled: false,
        }
    }
}

impl CvSpec {
    pub fn validate(&self, n: usize) -> Result<(), EvalError> {
        if self.folds < 2 {
            return Err(EvalError::Config("folds must be >= 2".into()));
        }
        if self.repeats < 1 {
            return Err(EvalError::Config("repeats must be >= 1".into()));
        }
        if self.folds > n {
            return Err(EvalError::Config(format!("{} folds for {n} observations", self.folds)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auc,
    /// `1 − Σ(y − ŷ)² / Σ(y − ȳ)²` over out-of-fold predictions.
    R2,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "cv_auc",
            Metric::R2 => "cv_r2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub model: ModelKind,
    pub metric: Metric,
    pub mean: f64,
    /// Standard deviation across repeats.
    pub sd: f64,
    pub per_repeat: Vec<f64>,
    pub spec: CvSpec,
    pub warnings: Vec<String>,
}

impl CvResult {
    pub fn summary(&self) -> String {
        format!(
            "{}: {} = {:.4} (sd {:.4}) over {} x {}-fold",
            self.model,
            self.metric.name(),
            self.mean,
            self.sd,
            self.spec.repeats,
            self.spec.folds
        )
    }
}

/// Fold labels for one repeat. Unstratified splits that leave a training or
/// test fold with a single class are redrawn.
fn repeat_folds(labels: Option<&[bool]>, n: usize, spec: &CvSpec, seed: u64, warnings: &mut Vec<String>) -> Vec<usize> {
    let strata = labels.filter(|_| spec.stratified);
    let assign = fold_assignment(n, spec.folds, strata, seed);
    let Some(labels) = labels.filter(|_| !spec.stratified) else {
        return assign;
    };
    let mixed = |assign: &[usize]| {
        (0..spec.folds).all(|f| {
            let classes = |inside: bool| {
                let (mut pos, mut neg) = (false, false);
                for i in (0..n).filter(|&i| (assign[i] == f) == inside) {
                    if labels[i] {
                        pos = true;
                    } else {
                        neg = true;
                    }
                }
                pos && neg
            };
            classes(true) && classes(false)
        })
    };
    let mut assign = assign;
    for attempt in 1..=1000u64 {
        if mixed(&assign) {
            break;
        }
        let msg = format!("single-class fold under seed {seed}; split redrawn");
        log::warn!("{msg}");
        warnings.push(msg);
        assign = fold_assignment(n, spec.folds, None, derive_seed(seed, attempt));
    }
    assign
}

struct FoldOutput<T> {
    test: Vec<usize>,
    eta: Vec<T>,
    warnings: Vec<String>,
}

/// Repeated `k`-fold cross-validation of one model kind. Features are built
/// per subject from that subject's own data, so they are computed once;
/// everything estimated across subjects (FPCA, `λ`, GCV) is re-run inside each
/// training fold. Repeat `r` uses seed `derive_seed(spec.seed, r)`.
pub fn cv_metric<T: Real>(
    kind: ModelKind,
    data: &Dataset<T>,
    features: &FeatureSet<T>,
    cfg: &FitConfig,
    spec: &CvSpec,
) -> Result<CvResult, EvalError> {
    let n = data.len();
    spec.validate(n)?;
    cfg.validate()?;
    if features.subject_ids != data.subject_ids {
        return Err(EvalError::Dimension("features and outcomes list different subjects".into()));
    }
    let labels = (data.family == Family::Logit).then(|| data.labels());
    if let Some(l) = &labels {
        if l.iter().all(|&v| v) || l.iter().all(|&v| !v) {
            return Err(EvalError::SingleClass);
        }
    }
    let predictor = features.predictor(kind, cfg)?;
    let mut warnings = Vec::new();
    let assignments: Vec<(u64, Vec<usize>)> = (0..spec.repeats)
        .map(|r| {
            let seed = derive_seed(spec.seed, r as u64);
            (seed, repeat_folds(labels.as_deref(), n, spec, seed, &mut warnings))
        })
        .collect();
    let tasks: Vec<(usize, usize)> = (0..spec.repeats)
        .flat_map(|r| (0..spec.folds).map(move |f| (r, f)))
        .collect();
    let outputs: Vec<FoldOutput<T>> = tasks
        .par_iter()
        .map(|&(r, f)| -> Result<FoldOutput<T>, EvalError> {
            let (seed, assign) = &assignments[r];
            let train: Vec<usize> = (0..n).filter(|&i| assign[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| assign[i] == f).collect();
            let fold_cfg = FitConfig {
                seed: derive_seed(*seed, f as u64 + 1),
                ..cfg.clone()
            };
            let wrap = |source| EvalError::Fold { repeat: r, fold: f, source };
            let fit = fit_model(kind, &data.select_rows(&train), &predictor.select_rows(&train), &fold_cfg).map_err(wrap)?;
            let eta = fit
                .predict_eta(&data.z.select_rows(&test), &predictor.select_rows(&test))
                .map_err(wrap)?;
            Ok(FoldOutput {
                test,
                eta,
                warnings: fit.warnings,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut per_repeat = Vec::with_capacity(spec.repeats);
    for (r, chunk) in outputs.chunks(spec.folds).enumerate() {
        for o in chunk {
            warnings.extend(o.warnings.iter().cloned());
        }
        let value = match &labels {
            Some(labels) if !spec.pooled => {
                let mut fold_aucs = Vec::new();
                for (f, o) in chunk.iter().enumerate() {
                    let l: Vec<bool> = o.test.iter().map(|&i| labels[i]).collect();
                    match auc(&o.eta, &l) {
                        Ok(a) => fold_aucs.push(a),
                        Err(EvalError::SingleClass) => {
                            let msg = format!("repeat {r} fold {f} has a single class; its AUC is skipped");
                            log::warn!("{msg}");
                            warnings.push(msg);
                        }
                        Err(e) => return Err(e),
                    }
                }
                if fold_aucs.is_empty() {
                    return Err(EvalError::SingleClass);
                }
                fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64
            }
            Some(labels) => {
                let (eta, l) = pooled(chunk, n, |i| labels[i]);
                auc(&eta, &l)?
            }
            None => {
                let (eta, y) = pooled(chunk, n, |i| data.y[i]);
                let ybar = y.iter().copied().sum::<T>() / T::from_usize_lossy(n);
                let tss: T = y.iter().map(|&v| (v - ybar) * (v - ybar)).sum();
                let press: T = y.iter().zip(&eta).map(|(&v, &e)| (v - e) * (v - e)).sum();
                (T::one() - press / tss).to_f64_lossy()
            }
        };
        per_repeat.push(value);
    }
    let k = per_repeat.len() as f64;
    let mean = per_repeat.iter().sum::<f64>() / k;
    let sd = if per_repeat.len() > 1 {
        (per_repeat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    warnings.sort();
    warnings.dedup();
    Ok(CvResult {
        model: kind,
        metric: if labels.is_some() { Metric::Auc } else { Metric::R2 },
        mean,
        sd,
        per_repeat,
        spec: spec.clone(),
        warnings,
    })
}

/// Out-of-fold linear predictors of one repeat in subject order, with `target`.
fn pooled<T: Real, V: Copy>(chunk: &[FoldOutput<T>], n: usize, target: impl Fn(usize) -> V) -> (Vec<T>, Vec<V>) {
    let mut eta = vec![T::zero(); n];
    for o in chunk {
        for (&i, &e) in o.test.iter().zip(&o.eta) {
            eta[i] = e;
        }
    }
    (eta, (0..n).map(target).collect())
}

/// `1 − [RSS/(n − q)] / [TSS/(n − 1)]` with `q = 1 + |Z| + ` the number of
/// activity coefficients in the final fit.
pub fn adjusted_r2<T: Real>(fit: &ModelFit<T>, data: &Dataset<T>) -> Result<f64, EvalError> {
    if fit.family != Family::Identity || data.family != Family::Identity {
        return Err(EvalError::NotIdentity("adjusted R²"));
    }
    let n = data.len();
    if fit.fitted_eta.len() != n {
        return Err(EvalError::Dimension(format!("{} fitted values for {n} observations", fit.fitted_eta.len())));
    }
    let q = 1 + fit.gamma.len() + fit.n_functional();
    if q >= n {
        return Err(EvalError::TooManyParameters { q, n });
    }
    let y: Vec<f64> = data.y.iter().map(|v| v.to_f64_lossy()).collect();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    let rss: f64 = y
        .iter()
        .zip(&fit.fitted_eta)
        .map(|(v, e)| (v - e.to_f64_lossy()).powi(2))
        .sum();
    Ok(1.0 - (rss / (n - q) as f64) / (tss / (n - 1) as f64))
}

/// Per-subject scores `bm_a`, `bm_T`, `bm_D`, `bm_TD`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiomarkerTable<T> {
    pub subject_ids: Vec<String>,
    pub bm_a: Vec<T>,
    pub bm_t: Vec<T>,
    pub bm_d: Vec<T>,
    pub bm_td: Vec<T>,
}

impl<T: Real> BiomarkerTable<T> {
    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let err = |e: csv::Error| EvalError::Output(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subject_id", "bm_a", "bm_T", "bm_D", "bm_TD"]).map_err(err)?;
        for i in 0..self.len() {
            w.write_record([
                self.subject_ids[i].clone(),
                format!("{}", self.bm_a[i]),
                format!("{}", self.bm_t[i]),
                format!("{}", self.bm_d[i]),
                format!("{}", self.bm_td[i]),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| EvalError::Output(e.to_string()))
    }
}

/// `∫ x(s) β(s) ds` for every row of `curves`.
pub fn curve_scores<T: Real>(curves: &Mat<T>, grid: &Grid<T>, beta: &[T]) -> Result<Vec<T>, EvalError> {
    if curves.cols() != grid.len() || beta.len() != grid.len() {
        return Err(EvalError::Dimension(format!(
            "{} curve columns, {} grid points, {} coefficient values",
            curves.cols(),
            grid.len(),
            beta.len()
        )));
    }
    Ok((0..curves.rows()).map(|i| grid.inner(curves.row(i), beta)).collect())
}

/// `∫∫ Q(t, p) β(t, p) dt dp` under the tensor quadrature of the two grids.
pub fn surface_score<T: Real>(q: &Mat<T>, beta: &Mat<T>, t_grid: &Grid<T>, p_grid: &Grid<T>) -> Result<T, EvalError> {
    if q.rows() != t_grid.len() || q.cols() != p_grid.len() || beta.rows() != q.rows() || beta.cols() != q.cols() {
        return Err(EvalError::Dimension(format!(
            "surface {}x{}, coefficient {}x{}, grids {}x{}",
            q.rows(),
            q.cols(),
            beta.rows(),
            beta.cols(),
            t_grid.len(),
            p_grid.len()
        )));
    }
    let rows: Vec<T> = (0..t_grid.len()).map(|i| p_grid.inner(q.row(i), beta.row(i))).collect();
    Ok(t_grid.integrate(&rows))
}

fn find<T: Real>(fits: &[ModelFit<T>], kind: ModelKind) -> Result<&ModelFit<T>, EvalError> {
    fits.iter().find(|f| f.kind == kind).ok_or(EvalError::MissingFit(kind))
}

/// Biomarkers from fitted Models 1-4: each subject's feature object
/// integrated against the matching coefficient function. A model without an
/// activity term scores zero.
pub fn biomarker_scores<T: Real>(fits: &[ModelFit<T>], features: &FeatureSet<T>) -> Result<BiomarkerTable<T>, EvalError> {
    let n = features.len();
    let zeros = || vec![T::zero(); n];
    let bm_a = match &find(fits, ModelKind::M1)?.functional {
        FunctionalFit::Scalar { beta } => features.means.iter().map(|&x| x * *beta).collect(),
        _ => zeros(),
    };
    let bm_t = match &find(fits, ModelKind::M2)?.functional {
        FunctionalFit::Curve(c) => curve_scores(&features.diurnal, &c.grid, &c.beta)?,
        _ => zeros(),
    };
    let bm_d = match &find(fits, ModelKind::M3)?.functional {
        FunctionalFit::Curve(c) => curve_scores(&features.quantiles, &c.grid, &c.beta)?,
        _ => zeros(),
    };
    let bm_td = match &find(fits, ModelKind::M4)?.functional {
        FunctionalFit::Surface(s) => features
            .surfaces
            .iter()
            .map(|q| surface_score(&q.values, &s.beta, &s.t_grid, &s.p_grid))
            .collect::<Result<_, _>>()?,
        _ => zeros(),
    };
    let table = BiomarkerTable {
        subject_ids: features.subject_ids.clone(),
        bm_a,
        bm_t,
        bm_d,
        bm_td,
    };
    let finite = [&table.bm_a, &table.bm_t, &table.bm_d, &table.bm_td]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()));
    if !finite {
        return Err(FitError::NonFinite("biomarker scores".into()).into());
    }
    Ok(table)
}
