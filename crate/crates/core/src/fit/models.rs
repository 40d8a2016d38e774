use super::{
    cv_penalized, fit_glm_matrix, gcv_search, joint_wald, lambda_grid, lambda_max, penalized_path, wald_rows,
    CoefficientRow, CurveDomain, CurveFit, Dataset, FitConfig, FitError, FunctionalFit, GlmFit, JointTest, LMomentFit,
    LambdaChoice, LambdaRule, LassoFit, ModelFit, ModelKind, Penalty, Predictor, BasisFamily, SurfaceFit,
};
use crate::basis::{assemble_surface, eval_basis, fpca, project_curves, BasisSpec};
use crate::grid::Grid;
use crate::linalg::Mat;
use crate::scalar::{max_abs, mean, sample_variance, Real};

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn intercept_col<T: Real>(n: usize) -> Mat<T> {
    Mat::from_fn(n, 1, |_, _| T::one())
}

fn check_rows<T: Real>(data: &Dataset<T>, rows: usize) -> Result<(), FitError> {
    if rows != data.len() {
        return Err(FitError::Dimension(format!("{rows} predictor rows for {} subjects", data.len())));
    }
    Ok(())
}

fn coefficient_names<T>(data: &Dataset<T>, extra: impl IntoIterator<Item = String>) -> Vec<String> {
    std::iter::once("(intercept)".to_string())
        .chain(data.z_names.iter().cloned())
        .chain(extra)
        .collect()
}

/// Coefficient table and joint test of the trailing `k` coefficients.
fn glm_tables<T: Real>(glm: &GlmFit<T>, names: &[String], family: super::Family, k: usize) -> (Vec<CoefficientRow>, Option<JointTest>) {
    let df = glm.df_residual as f64;
    let rows = wald_rows(names, &to_f64(&glm.coef), &to_f64(&glm.std_errors), family, df);
    let p = glm.coef.len();
    let idx: Vec<usize> = (p - k..p).collect();
    let b: Vec<f64> = idx.iter().map(|&i| glm.coef[i].to_f64_lossy()).collect();
    let v = Mat::from_fn(k, k, |a, c| glm.cov[(idx[a], idx[c])].to_f64_lossy());
    (rows, joint_wald(&b, &v, family, df))
}

#[allow(clippy::too_many_arguments)]
fn from_glm<T: Real>(
    kind: ModelKind,
    data: &Dataset<T>,
    glm: &GlmFit<T>,
    names: &[String],
    n_functional: usize,
    functional: FunctionalFit<T>,
    cfg: &FitConfig,
    lambda: Option<f64>,
    post_selection: bool,
    warnings: Vec<String>,
) -> ModelFit<T> {
    let q = 1 + data.z.cols();
    let (coefficients, joint_test) = glm_tables(glm, names, data.family, n_functional);
    ModelFit {
        kind,
        family: data.family,
        intercept: glm.coef[0],
        gamma: glm.coef[1..q].to_vec(),
        covariate_names: data.z_names.clone(),
        functional,
        coefficients,
        joint_test,
        log_likelihood: glm.log_likelihood.to_f64_lossy(),
        deviance: glm.deviance.to_f64_lossy(),
        dispersion: glm.dispersion.to_f64_lossy(),
        n_obs: data.len(),
        n_params: glm.coef.len() as f64,
        lambda,
        post_selection,
        warnings,
        fitted_eta: glm.eta.clone(),
        config: cfg.clone(),
    }
}

/// Model 1: GLM on scalar covariates and subject mean activity.
pub fn fit_scalar<T: Real>(data: &Dataset<T>, mean_activity: &[T], cfg: &FitConfig) -> Result<ModelFit<T>, FitError> {
    check_rows(data, mean_activity.len())?;
    let x = data.z.hcat(&Mat::from_vec(data.len(), 1, mean_activity.to_vec()));
    let glm = fit_glm_matrix(&x, &data.y, data.family, &cfg.glm)?;
    let beta = *glm.coef.last().expect("activity coefficient");
    let names = coefficient_names(data, ["activity_mean".to_string()]);
    Ok(from_glm(
        ModelKind::M1,
        data,
        &glm,
        &names,
        1,
        FunctionalFit::Scalar { beta },
        cfg,
        None,
        false,
        Vec::new(),
    ))
}

/// `b(t)ᵀ V b(t)` on every grid point.
fn pointwise_se<T: Real>(basis_vals: &Mat<T>, cov: &Mat<T>) -> Vec<T> {
    (0..basis_vals.rows())
        .map(|i| {
            let b = basis_vals.row(i);
            let vb = cov.matvec(b);
            b.iter().zip(&vb).map(|(&a, &c)| a * c).sum::<T>().max(T::zero()).sqrt()
        })
        .collect()
}

fn block<T: Real>(m: &Mat<T>, start: usize, len: usize) -> Mat<T> {
    Mat::from_fn(len, len, |i, j| m[(start + i, start + j)])
}

/// Roughness-penalised functional regression shared by Models 2 and 3.
fn fit_penalized_curve<T: Real>(
    kind: ModelKind,
    domain: CurveDomain,
    data: &Dataset<T>,
    grid: &Grid<T>,
    curves: &Mat<T>,
    basis: BasisSpec<T>,
    cfg: &FitConfig,
) -> Result<ModelFit<T>, FitError> {
    check_rows(data, curves.rows())?;
    let n = data.len();
    let nz = data.z.cols();
    let k = basis.size;
    let f = project_curves(curves, grid, &basis)?;
    let x = intercept_col(n).hcat(&data.z).hcat(&f);
    let p = x.cols();
    let dd = basis.difference_penalty(2);
    let mut s = Mat::zeros(p, p);
    for i in 0..k {
        for j in 0..k {
            s[(1 + nz + i, 1 + nz + j)] = dd[(i, j)];
        }
    }
    let ftf: T = (0..n).map(|i| f.row(i).iter().map(|&v| v * v).sum::<T>()).sum();
    let scale = if dd.trace() > T::zero() && ftf > T::zero() {
        ftf / dd.trace()
    } else {
        T::one()
    };
    let (lo, hi) = cfg.gcv_log10_range;
    let m = cfg.gcv_points;
    let lambdas: Vec<T> = (0..m)
        .map(|i| scale * T::lit(10f64.powf(lo + (hi - lo) * i as f64 / (m - 1) as f64)))
        .collect();
    let (fit, _) = gcv_search(&x, &data.y, data.family, &s, &lambdas, &cfg.glm)?;
    let theta = fit.coef[1 + nz..].to_vec();
    let bvals = eval_basis(&basis, grid.points())?;
    let beta = bvals.matvec(&theta);
    let std_error = pointwise_se(&bvals, &block(&fit.cov, 1 + nz, k));
    let se: Vec<f64> = (0..p).map(|j| fit.cov[(j, j)].max(T::zero()).sqrt().to_f64_lossy()).collect();
    let df = (T::from_usize_lossy(n) - fit.edf).to_f64_lossy();
    let names = coefficient_names(data, (1..=k).map(|j| format!("theta_{j}")));
    let coefficients = wald_rows(&names, &to_f64(&fit.coef), &se, data.family, df);
    let b: Vec<f64> = to_f64(&theta);
    let v = Mat::from_fn(k, k, |i, j| fit.cov[(1 + nz + i, 1 + nz + j)].to_f64_lossy());
    let joint_test = joint_wald(&b, &v, data.family, df);
    let mut warnings = Vec::new();
    if !fit.converged {
        warnings.push("penalised IRLS did not converge".to_string());
    }
    Ok(ModelFit {
        kind,
        family: data.family,
        intercept: fit.coef[0],
        gamma: fit.coef[1..1 + nz].to_vec(),
        covariate_names: data.z_names.clone(),
        functional: FunctionalFit::Curve(CurveFit {
            domain,
            basis,
            grid: grid.clone(),
            theta,
            beta,
            std_error,
            lambda: fit.lambda,
            edf: fit.edf,
        }),
        coefficients,
        joint_test,
        log_likelihood: data.family.log_likelihood(&data.y, &fit.eta).to_f64_lossy(),
        deviance: fit.deviance.to_f64_lossy(),
        dispersion: fit.dispersion.to_f64_lossy(),
        n_obs: n,
        n_params: fit.edf.to_f64_lossy(),
        lambda: Some(fit.lambda.to_f64_lossy()),
        post_selection: false,
        warnings,
        fitted_eta: fit.eta,
        config: cfg.clone(),
    })
}

/// Model 2: scalar-on-function regression on diurnal curves with a cubic
/// B-spline `β(t)`, second-difference penalty and GCV.
pub fn fit_sofr_temporal<T: Real>(data: &Dataset<T>, grid: &Grid<T>, curves: &Mat<T>, cfg: &FitConfig) -> Result<ModelFit<T>, FitError> {
    cfg.validate()?;
    let (lo, hi) = grid.domain();
    let basis = BasisSpec::bspline(cfg.k_t, lo, hi)?;
    fit_penalized_curve(ModelKind::M2, CurveDomain::Time, data, grid, curves, basis, cfg)
}

/// Model 3: scalar-on-function regression on quantile functions. With the
/// Legendre basis the fit is an unpenalised GLM whose coefficients are
/// L-moment effects.
pub fn fit_sofr_quantile<T: Real>(data: &Dataset<T>, p_grid: &Grid<T>, quantiles: &Mat<T>, cfg: &FitConfig) -> Result<ModelFit<T>, FitError> {
    cfg.validate()?;
    let (lo, hi) = p_grid.domain();
    match cfg.quantile_basis {
        BasisFamily::Bspline => {
            let basis = BasisSpec::bspline(cfg.l_p, lo, hi)?;
            fit_penalized_curve(ModelKind::M3, CurveDomain::Quantile, data, p_grid, quantiles, basis, cfg)
        }
        BasisFamily::Legendre => {
            check_rows(data, quantiles.rows())?;
            let basis = BasisSpec::legendre(cfg.l_p, lo, hi)?;
            let l0 = basis.size;
            let f = project_curves(quantiles, p_grid, &basis)?;
            let glm = fit_glm_matrix(&data.z.hcat(&f), &data.y, data.family, &cfg.glm)?;
            let nz = data.z.cols();
            let theta = glm.coef[1 + nz..].to_vec();
            let bvals = eval_basis(&basis, p_grid.points())?;
            let std_error = pointwise_se(&bvals, &block(&glm.cov, 1 + nz, l0));
            let names = coefficient_names(data, (1..=l0).map(|r| format!("l_moment_{r}")));
            let functional = FunctionalFit::Curve(CurveFit {
                domain: CurveDomain::Quantile,
                beta: bvals.matvec(&theta),
                basis,
                grid: p_grid.clone(),
                theta,
                std_error,
                lambda: T::zero(),
                edf: T::from_usize_lossy(glm.coef.len()),
            });
            Ok(from_glm(ModelKind::M3, data, &glm, &names, l0, functional, cfg, None, false, Vec::new()))
        }
    }
}

/// Column means and sample standard deviations.
fn column_moments<T: Real>(x: &Mat<T>) -> (Vec<T>, Vec<T>) {
    (0..x.cols())
        .map(|j| {
            let c = x.col(j);
            (mean(&c), sample_variance(&c).sqrt())
        })
        .unzip()
}

/// Outcome of penalised selection followed by an unpenalised refit.
struct Selection<T> {
    /// Selected feature columns (indices into the feature matrix).
    selected: Vec<usize>,
    refit: GlmFit<T>,
    lambda: Option<f64>,
    warnings: Vec<String>,
}

fn choose_index(path: &super::CvPath<impl Real>, rule: LambdaRule) -> usize {
    match rule {
        LambdaRule::Min => path.index_min,
        LambdaRule::OneSe => path.index_1se,
    }
}

/// Step 1 selects features by penalised likelihood on standardised columns
/// (covariates unpenalised); step 2 refits the selected raw features with the
/// covariates by unpenalised GLM. A refit that fails for rank deficiency or
/// separation falls back to the next larger penalty with fewer features.
fn select_and_refit<T: Real>(
    data: &Dataset<T>,
    features: &Mat<T>,
    groups: Option<&[usize]>,
    cfg: &FitConfig,
) -> Result<Selection<T>, FitError> {
    let n = data.len();
    let nz = data.z.cols();
    let mut warnings = Vec::new();
    let (fmean, fsd) = column_moments(features);
    let fmax: Vec<T> = (0..features.cols()).map(|j| max_abs(&features.col(j))).collect();
    let kept: Vec<usize> = (0..features.cols())
        .filter(|&j| fsd[j] > T::lit(1e-10) * fmax[j].max(T::min_positive_value()))
        .collect();
    if kept.len() < features.cols() {
        log::debug!("{} zero-variance feature columns excluded", features.cols() - kept.len());
    }
    let covariates_only = |warnings: &mut Vec<String>| -> Result<Selection<T>, FitError> {
        warnings.push("no activity features selected; returning covariate-only model".to_string());
        log::warn!("no activity features selected; returning covariate-only model");
        Ok(Selection {
            selected: Vec::new(),
            refit: fit_glm_matrix(&data.z, &data.y, data.family, &cfg.glm)?,
            lambda: None,
            warnings: std::mem::take(warnings),
        })
    };
    if kept.is_empty() {
        return covariates_only(&mut warnings);
    }

    let (zmean, zsd) = column_moments(&data.z);
    let p = nz + kept.len();
    let standardize = cfg.standardize;
    let xs = Mat::from_fn(n, p, |i, j| {
        if j < nz {
            let s = if zsd[j] > T::zero() { zsd[j] } else { T::one() };
            (data.z[(i, j)] - zmean[j]) / s
        } else {
            let c = kept[j - nz];
            if standardize {
                (features[(i, c)] - fmean[c]) / fsd[c]
            } else {
                features[(i, c)]
            }
        }
    });
    let penalty: Penalty<T> = match groups {
        None => Penalty::lasso((0..p).map(|j| j >= nz).collect()),
        Some(g) => Penalty::gel(
            (0..p).map(|j| if j < nz { None } else { Some(g[kept[j - nz]]) }).collect(),
            cfg.group_multiplier,
            T::lit(cfg.gel_tau),
        ),
    };

    let (fits, mut idx): (Vec<LassoFit<T>>, usize) = match cfg.lambda {
        LambdaChoice::Fixed(l) => {
            let l = T::lit(l);
            let lmax = lambda_max(&xs, &data.y, data.family, &penalty, &cfg.lasso)?;
            let mut grid = if lmax > l {
                lambda_grid(lmax, cfg.n_lambda, (l / lmax).to_f64_lossy().max(1e-12))
            } else {
                Vec::new()
            };
            grid.retain(|&v| v > l);
            grid.push(l);
            let full = grid.len();
            let path = penalized_path(&xs, &data.y, data.family, &penalty, &grid, &cfg.lasso)?;
            if path.len() < full {
                let msg = format!(
                    "active-set limit reached; using λ = {:.4e} instead of the requested value",
                    path[path.len() - 1].lambda.to_f64_lossy()
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            let last = path.len() - 1;
            (path, last)
        }
        LambdaChoice::CrossValidated => {
            let lmax = lambda_max(&xs, &data.y, data.family, &penalty, &cfg.lasso)?;
            if !(lmax > T::zero()) {
                return covariates_only(&mut warnings);
            }
            let grid = lambda_grid(lmax, cfg.n_lambda, cfg.lambda_min_ratio);
            let cv = cv_penalized(&xs, &data.y, data.family, &penalty, &grid, cfg.lambda_folds, cfg.seed, &cfg.lasso)?;
            let path = penalized_path(&xs, &data.y, data.family, &penalty, &grid, &cfg.lasso)?;
            let i = choose_index(&cv, cfg.lambda_rule).min(path.len() - 1);
            (path, i)
        }
    };

    loop {
        let support: Vec<usize> = fits[idx].support().into_iter().filter(|&j| j >= nz).collect();
        if support.is_empty() {
            return covariates_only(&mut warnings);
        }
        let selected: Vec<usize> = support.iter().map(|&j| kept[j - nz]).collect();
        let x = data.z.hcat(&features.select_cols(&selected));
        match fit_glm_matrix(&x, &data.y, data.family, &cfg.glm) {
            Ok(refit) => {
                return Ok(Selection {
                    selected,
                    refit,
                    lambda: Some(fits[idx].lambda.to_f64_lossy()),
                    warnings,
                })
            }
            Err(e @ (FitError::RankDeficient { .. } | FitError::Separation { .. } | FitError::TooFewRows { .. })) => {
                let msg = format!(
                    "refit with {} features failed ({e}); falling back to a larger penalty",
                    selected.len()
                );
                log::warn!("{msg}");
                warnings.push(msg);
                let size = support.len();
                match (0..idx).rev().find(|&i| fits[i].support().iter().filter(|&&j| j >= nz).count() < size) {
                    Some(i) => idx = i,
                    None => return covariates_only(&mut warnings),
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Model 4: two-step scalar-on-TD regression. Step 1 is a lasso on the
/// standardised tensor features `W` with covariates unpenalised; step 2 refits
/// the selected features without penalty.
pub fn two_step_sotdr<T: Real>(data: &Dataset<T>, predictor: &Predictor<T>, cfg: &FitConfig) -> Result<ModelFit<T>, FitError> {
    cfg.validate()?;
    let Predictor::Tensor {
        t_grid,
        p_grid,
        basis_t,
        basis_p,
        w,
    } = predictor
    else {
        return Err(FitError::WrongPredictor {
            model: "m4",
            needed: "tensor-feature",
        });
    };
    check_rows(data, w.rows())?;
    let l0 = basis_p.size;
    if w.cols() != basis_t.size * l0 {
        return Err(FitError::Dimension(format!(
            "{} tensor features for a {}x{} basis",
            w.cols(),
            basis_t.size,
            l0
        )));
    }
    let sel = select_and_refit(data, w, None, cfg)?;
    let nz = data.z.cols();
    let mut theta = vec![T::zero(); w.cols()];
    for (k, &j) in sel.selected.iter().enumerate() {
        theta[j] = sel.refit.coef[1 + nz + k];
    }
    let functional = if sel.selected.is_empty() {
        FunctionalFit::None
    } else {
        let beta = assemble_surface(&theta, basis_t, basis_p, t_grid.points(), p_grid.points())?;
        FunctionalFit::Surface(SurfaceFit {
            basis_t: basis_t.clone(),
            basis_p: basis_p.clone(),
            t_grid: t_grid.clone(),
            p_grid: p_grid.clone(),
            theta,
            selected: sel.selected.clone(),
            beta,
        })
    };
    let names = coefficient_names(
        data,
        sel.selected.iter().map(|&j| format!("theta_{}_{}", j / l0 + 1, j % l0 + 1)),
    );
    Ok(from_glm(
        ModelKind::M4,
        data,
        &sel.refit,
        &names,
        sel.selected.len(),
        functional,
        cfg,
        sel.lambda,
        true,
        sel.warnings,
    ))
}

/// SOTDR-L: FPCA of each time-varying L-moment order, GEL selection over the
/// score groups (one group per order), then an unpenalised refit of the
/// selected scores.
pub fn fit_sotdr_l<T: Real>(data: &Dataset<T>, predictor: &Predictor<T>, cfg: &FitConfig) -> Result<ModelFit<T>, FitError> {
    cfg.validate()?;
    let Predictor::LMoments { grid, orders } = predictor else {
        return Err(FitError::WrongPredictor {
            model: "sotdr_l",
            needed: "L-moment-curve",
        });
    };
    let r_max = cfg.l_moment_orders.min(orders.len());
    if r_max == 0 {
        return Err(FitError::Config("no L-moment curves supplied".into()));
    }
    let n = data.len();
    let mut warnings = Vec::new();
    let mut fpcas = Vec::with_capacity(r_max);
    let mut score_blocks: Vec<Mat<T>> = Vec::with_capacity(r_max);
    let mut groups = Vec::new();
    let mut owner = Vec::new();
    for (r, curves) in orders.iter().take(r_max).enumerate() {
        check_rows(data, curves.rows())?;
        let mut res = fpca(curves, grid, cfg.pve)?;
        if let Some(cap) = cfg.max_components {
            res.truncate(cap);
        }
        if res.degenerate {
            warnings.push(format!("order {} curves have no variation; group dropped", r + 1));
        }
        for s in 0..res.retained {
            groups.push(r);
            owner.push((r, s));
        }
        score_blocks.push(res.scores.clone());
        fpcas.push(res);
    }
    let features = score_blocks
        .iter()
        .fold(Mat::zeros(n, 0), |acc, b| acc.hcat(b));
    let mut sel = select_and_refit(data, &features, Some(&groups), cfg)?;
    warnings.append(&mut sel.warnings);
    let nz = data.z.cols();
    let mut coefficients: Vec<Vec<T>> = fpcas.iter().map(|f| vec![T::zero(); f.retained]).collect();
    let mut selected = Vec::new();
    for (k, &j) in sel.selected.iter().enumerate() {
        let (r, s) = owner[j];
        coefficients[r][s] = sel.refit.coef[1 + nz + k];
        selected.push((r + 1, s + 1));
    }
    let mut selected_orders: Vec<usize> = selected.iter().map(|&(r, _)| r).collect();
    selected_orders.dedup();
    let functional = if selected.is_empty() {
        FunctionalFit::None
    } else {
        let m = grid.len();
        let mut curves = Mat::zeros(r_max, m);
        for r in 0..r_max {
            let c = fpcas[r].curve_from_coefficients(&coefficients[r]);
            curves.row_mut(r).copy_from_slice(&c);
        }
        FunctionalFit::LMoment(LMomentFit {
            grid: grid.clone(),
            fpca: fpcas,
            coefficients,
            curves,
            selected_orders,
            selected: selected.clone(),
        })
    };
    let names = coefficient_names(data, selected.iter().map(|&(r, s)| format!("order{r}_pc{s}")));
    Ok(from_glm(
        ModelKind::SotdrL,
        data,
        &sel.refit,
        &names,
        selected.len(),
        functional,
        cfg,
        sel.lambda,
        true,
        warnings,
    ))
}

/// Fits `kind` to matching predictor input.
pub fn fit_model<T: Real>(kind: ModelKind, data: &Dataset<T>, predictor: &Predictor<T>, cfg: &FitConfig) -> Result<ModelFit<T>, FitError> {
    let wrong = |needed| FitError::WrongPredictor {
        model: kind.as_str(),
        needed,
    };
    match (kind, predictor) {
        (ModelKind::M1, Predictor::Mean(x)) => fit_scalar(data, x, cfg),
        (ModelKind::M2, Predictor::Curves { grid, values }) => fit_sofr_temporal(data, grid, values, cfg),
        (ModelKind::M3, Predictor::Curves { grid, values }) => fit_sofr_quantile(data, grid, values, cfg),
        (ModelKind::M4, p @ Predictor::Tensor { .. }) => two_step_sotdr(data, p, cfg),
        (ModelKind::SotdrL, p @ Predictor::LMoments { .. }) => fit_sotdr_l(data, p, cfg),
        (ModelKind::M1, _) => Err(wrong("subject-mean")),
        (ModelKind::M2 | ModelKind::M3, _) => Err(wrong("curve")),
        (ModelKind::M4, _) => Err(wrong("tensor-feature")),
        (ModelKind::SotdrL, _) => Err(wrong("L-moment-curve")),
    }
}
