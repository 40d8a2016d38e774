use super::{check_binary, Family, FitError, GlmOptions};
use crate::linalg::{Mat, SymmetricEigen};
use crate::scalar::Real;

/// Penalised IRLS fit at one smoothing parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothFit<T> {
    pub coef: Vec<T>,
    pub eta: Vec<T>,
    /// Bayesian posterior covariance `dispersion * (Xᵀ W X + λ S)⁺`.
    pub cov: Mat<T>,
    /// `tr((Xᵀ W X + λ S)⁺ Xᵀ W X)`
    pub edf: T,
    pub gcv: T,
    pub lambda: T,
    pub deviance: T,
    pub dispersion: T,
    pub converged: bool,
}

/// Jacobi-scaled eigen pseudo-inverse, robust to the exact singularity that
/// appears when the penalty null space meets collinear features.
fn scaled_pinv<T: Real>(a: &Mat<T>) -> Result<Mat<T>, FitError> {
    let p = a.rows();
    let s: Vec<T> = (0..p)
        .map(|j| if a[(j, j)] > T::zero() { T::one() / a[(j, j)].sqrt() } else { T::one() })
        .collect();
    let scaled = Mat::from_fn(p, p, |i, j| a[(i, j)] * s[i] * s[j]);
    let inv = SymmetricEigen::new(&scaled)?.pseudo_inverse(T::lit(1e-11));
    Ok(Mat::from_fn(p, p, |i, j| inv[(i, j)] * s[i] * s[j]))
}

fn quad_form<T: Real>(s: &Mat<T>, b: &[T]) -> T {
    s.matvec(b).iter().zip(b).map(|(&a, &c)| a * c).sum()
}

/// Minimises `dev(β) + λ βᵀ S β` by penalised IRLS. `x` holds every column,
/// including any intercept.
#[allow(clippy::too_many_arguments)]
pub fn fit_smooth<T: Real>(
    x: &Mat<T>,
    y: &[T],
    family: Family,
    penalty: &Mat<T>,
    lambda: T,
    opts: &GlmOptions,
    warm: Option<&[T]>,
) -> Result<SmoothFit<T>, FitError> {
    let n = x.rows();
    let p = x.cols();
    if y.len() != n || penalty.rows() != p || penalty.cols() != p {
        return Err(FitError::Dimension(format!(
            "design {n}x{p}, {} outcomes, penalty {}x{}",
            y.len(),
            penalty.rows(),
            penalty.cols()
        )));
    }
    if !(lambda >= T::zero()) {
        return Err(FitError::NegativeLambda(lambda.to_f64_lossy()));
    }
    if !x.is_finite() {
        return Err(FitError::NonFinite("design".into()));
    }
    if family == Family::Logit {
        check_binary(y)?;
    }
    let mut eta: Vec<T> = match warm {
        Some(b) => x.matvec(b),
        None => match family {
            Family::Identity => y.to_vec(),
            Family::Logit => y.iter().map(|&v| family.link((v + T::half()) / T::two())).collect(),
        },
    };
    let mut coef: Option<Vec<T>> = None;
    let mut pdev = T::infinity();
    let mut converged = false;
    let tol = T::lit(opts.tol);
    for _ in 0..opts.max_iter {
        let (w, z): (Vec<T>, Vec<T>) = y.iter().zip(&eta).map(|(&yi, &e)| family.working(yi, e)).unzip();
        let mut a = x.weighted_gram(&w);
        a.add_scaled(penalty, lambda);
        let wz: Vec<T> = w.iter().zip(&z).map(|(&a, &b)| a * b).collect();
        let mut next = scaled_pinv(&a)?.matvec(&x.tmatvec(&wz));
        let mut next_eta = x.matvec(&next);
        let mut next_pdev = family.deviance(y, &next_eta) + lambda * quad_form(penalty, &next);
        if let Some(prev) = &coef {
            let mut halvings = 0;
            while !(next_pdev <= pdev * (T::one() + T::lit(1e-12)) + T::lit(1e-12)) && halvings < 30 {
                for (a, &b) in next.iter_mut().zip(prev) {
                    *a = (*a + b) * T::half();
                }
                next_eta = x.matvec(&next);
                next_pdev = family.deviance(y, &next_eta) + lambda * quad_form(penalty, &next);
                halvings += 1;
            }
        }
        let change = coef.as_ref().map_or(T::infinity(), |prev| {
            prev.iter().zip(&next).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
        });
        let norm = next.iter().map(|&v| (v * v).to_f64_lossy()).sum::<f64>().sqrt();
        if family == Family::Logit && norm > opts.separation_norm {
            return Err(FitError::Separation { norm });
        }
        coef = Some(next);
        eta = next_eta;
        pdev = next_pdev;
        if family == Family::Identity || change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("penalised IRLS stopped after {} iterations without converging", opts.max_iter);
    }
    let coef = coef.expect("at least one iteration");
    let w: Vec<T> = y.iter().zip(&eta).map(|(&yi, &e)| family.working(yi, e).0).collect();
    let h = x.weighted_gram(&w);
    let mut a = h.clone();
    a.add_scaled(penalty, lambda);
    let ainv = scaled_pinv(&a)?;
    let edf = ainv.matmul(&h).trace();
    let deviance = family.deviance(y, &eta);
    let nf = T::from_usize_lossy(n);
    let resid_df = (nf - edf).max(T::lit(1e-8));
    let gcv = nf * deviance / (resid_df * resid_df);
    let dispersion = match family {
        Family::Identity => deviance / resid_df,
        Family::Logit => T::one(),
    };
    let cov = Mat::from_fn(p, p, |i, j| ainv[(i, j)] * dispersion);
    Ok(SmoothFit {
        coef,
        eta,
        cov,
        edf,
        gcv,
        lambda,
        deviance,
        dispersion,
        converged,
    })
}

/// Fits every `λ` (increasing order, warm-started) and returns the fit with the
/// smallest GCV score together with the `(λ, GCV)` profile.
pub fn gcv_search<T: Real>(
    x: &Mat<T>,
    y: &[T],
    family: Family,
    penalty: &Mat<T>,
    lambdas: &[T],
    opts: &GlmOptions,
) -> Result<(SmoothFit<T>, Vec<(T, T)>), FitError> {
    let mut best: Option<SmoothFit<T>> = None;
    let mut profile = Vec::with_capacity(lambdas.len());
    let mut warm: Option<Vec<T>> = None;
    for &l in lambdas {
        let fit = fit_smooth(x, y, family, penalty, l, opts, warm.as_deref())?;
        profile.push((l, fit.gcv));
        warm = Some(fit.coef.clone());
        if best.as_ref().is_none_or(|b| fit.gcv < b.gcv) {
            best = Some(fit);
        }
    }
    best.map(|b| (b, profile))
        .ok_or_else(|| FitError::Config("empty smoothing-parameter grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::fit_glm_matrix;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_penalty_is_glm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Mat::from_fn(60, 3, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..60).map(|i| (x[(i, 0)] + rng.random::<f64>() > 1.0) as u8 as f64).collect();
        let full = Mat::from_fn(60, 1, |_, _| 1.0).hcat(&x);
        let s = fit_smooth(&full, &y, Family::Logit, &Mat::zeros(4, 4), 0.0, &GlmOptions::default(), None).unwrap();
        let g = fit_glm_matrix(&x, &y, Family::Logit, &GlmOptions::default()).unwrap();
        for (a, b) in s.coef.iter().zip(&g.coef) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
        assert_abs_diff_eq!(s.edf, 4.0, epsilon = 1e-8);
        for j in 0..4 {
            assert_abs_diff_eq!(s.cov[(j, j)].sqrt(), g.std_errors[j], epsilon = 1e-6);
        }
    }

    #[test]
    fn ridge_closed_form() {
        // identity family with S = I has the ridge solution (XᵀX + λI)⁻¹ Xᵀy
        let x = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let y = [1.0, 2.0, 3.0];
        let fit = fit_smooth(&x, &y, Family::Identity, &Mat::identity(2), 1.0, &GlmOptions::default(), None).unwrap();
        // XᵀX + I = [[3,1],[1,3]], Xᵀy = [4,5]
        assert_abs_diff_eq!(fit.coef[0], (3.0 * 4.0 - 5.0) / 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coef[1], (3.0 * 5.0 - 4.0) / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn gcv_prefers_smoothing_for_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 80;
        let x = Mat::from_fn(n, 8, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let full = Mat::from_fn(n, 1, |_, _| 1.0).hcat(&x);
        let pen = Mat::from_fn(9, 9, |i, j| if i == j && i > 0 { 1.0 } else { 0.0 });
        let lambdas: Vec<f64> = (0..20).map(|k| 10f64.powf(-4.0 + 0.4 * k as f64)).collect();
        let (best, profile) = gcv_search(&full, &y, Family::Identity, &pen, &lambdas, &GlmOptions::default()).unwrap();
        assert_eq!(profile.len(), 20);
        assert!(best.lambda > 1e-2);
        assert!(best.edf < 9.0);
    }
}
