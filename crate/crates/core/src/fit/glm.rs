use serde::{Deserialize, Serialize};

use super::{check_binary, Family, FitError};
use crate::linalg::{Cholesky, LinalgError, Mat};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlmOptions {
    /// Stop when the largest coefficient change falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficient norm beyond which a logit fit is declared separated.
    pub separation_norm: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            separation_norm: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit<T> {
    pub coef: Vec<T>,
    /// `dispersion * (Xᵀ W X)⁻¹`
    pub cov: Mat<T>,
    pub std_errors: Vec<T>,
    pub eta: Vec<T>,
    pub deviance: T,
    pub log_likelihood: T,
    pub dispersion: T,
    pub iterations: usize,
    pub converged: bool,
    pub df_residual: usize,
}

/// Jacobi-scaled Cholesky solve of `A x = b`.
struct ScaledSystem<T> {
    chol: Cholesky<T>,
    scale: Vec<T>,
}

impl<T: Real> ScaledSystem<T> {
    fn new(a: &Mat<T>) -> Result<Self, LinalgError> {
        let p = a.rows();
        let scale: Vec<T> = (0..p)
            .map(|j| {
                let d = a[(j, j)];
                if d > T::zero() {
                    T::one() / d.sqrt()
                } else {
                    T::one()
                }
            })
            .collect();
        let s = Mat::from_fn(p, p, |i, j| a[(i, j)] * scale[i] * scale[j]);
        Ok(Self {
            chol: Cholesky::new(&s)?,
            scale,
        })
    }

    fn solve(&self, b: &[T]) -> Vec<T> {
        let bs: Vec<T> = b.iter().zip(&self.scale).map(|(&v, &s)| v * s).collect();
        self.chol
            .solve(&bs)
            .into_iter()
            .zip(&self.scale)
            .map(|(v, &s)| v * s)
            .collect()
    }

    fn inverse(&self) -> Mat<T> {
        let inv = self.chol.inverse();
        Mat::from_fn(inv.rows(), inv.cols(), |i, j| inv[(i, j)] * self.scale[i] * self.scale[j])
    }
}

/// Columns that are linearly dependent on earlier ones.
fn dependent_columns<T: Real>(x: &Mat<T>) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..x.cols() {
        let mut trial = kept.clone();
        trial.push(j);
        let g = x.select_cols(&trial).weighted_gram(&vec![T::one(); x.rows()]);
        if ScaledSystem::new(&g).is_ok() && g[(trial.len() - 1, trial.len() - 1)] > T::zero() {
            kept = trial;
        } else {
            bad.push(j);
        }
    }
    bad
}

fn validate<T: Real>(x: &Mat<T>, y: &[T], family: Family) -> Result<(), FitError> {
    if x.rows() != y.len() {
        return Err(FitError::Dimension(format!("{} design rows, {} outcomes", x.rows(), y.len())));
    }
    if x.rows() <= x.cols() {
        return Err(FitError::TooFewRows { n: x.rows(), p: x.cols() });
    }
    if !x.is_finite() {
        return Err(FitError::NonFinite("design".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite("outcome".into()));
    }
    if family == Family::Logit {
        check_binary(y)?;
    }
    Ok(())
}

/// Maximum likelihood by iteratively reweighted least squares. `x` holds every
/// column, including any intercept.
pub fn irls<T: Real>(x: &Mat<T>, y: &[T], family: Family, opts: &GlmOptions) -> Result<GlmFit<T>, FitError> {
    validate(x, y, family)?;
    let n = x.rows();
    let p = x.cols();
    let rank_error = || FitError::RankDeficient {
        columns: dependent_columns(x),
    };
    if ScaledSystem::new(&x.weighted_gram(&vec![T::one(); n])).is_err() {
        return Err(rank_error());
    }

    let mut eta: Vec<T> = match family {
        Family::Identity => y.to_vec(),
        Family::Logit => y
            .iter()
            .map(|&v| family.link((v + T::half()) / T::two()))
            .collect(),
    };
    let mut coef: Option<Vec<T>> = None;
    let mut dev = T::infinity();
    let mut converged = false;
    let mut iterations = 0;
    let tol = T::lit(opts.tol);

    for it in 1..=opts.max_iter {
        iterations = it;
        let (w, z): (Vec<T>, Vec<T>) = y.iter().zip(&eta).map(|(&yi, &e)| family.working(yi, e)).unzip();
        let a = x.weighted_gram(&w);
        let wz: Vec<T> = w.iter().zip(&z).map(|(&a, &b)| a * b).collect();
        let b = x.tmatvec(&wz);
        let sys = match ScaledSystem::new(&a) {
            Ok(s) => s,
            Err(_) => {
                let norm = coef.as_deref().map_or(0.0, |c| norm2(c));
                if family == Family::Logit && it > 1 {
                    return Err(FitError::Separation { norm });
                }
                return Err(rank_error());
            }
        };
        let mut next = sys.solve(&b);
        let mut next_eta = x.matvec(&next);
        let mut next_dev = family.deviance(y, &next_eta);
        if let Some(prev) = &coef {
            let mut halvings = 0;
            while !(next_dev <= dev * (T::one() + T::lit(1e-12)) + T::lit(1e-12)) && halvings < 30 {
                for (a, &b) in next.iter_mut().zip(prev) {
                    *a = (*a + b) * T::half();
                }
                next_eta = x.matvec(&next);
                next_dev = family.deviance(y, &next_eta);
                halvings += 1;
            }
        }
        let change = match &coef {
            Some(prev) => prev
                .iter()
                .zip(&next)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())),
            None => T::infinity(),
        };
        let norm = norm2(&next);
        if family == Family::Logit && norm > opts.separation_norm {
            return Err(FitError::Separation { norm });
        }
        coef = Some(next);
        eta = next_eta;
        dev = next_dev;
        if family == Family::Identity || change < tol {
            converged = true;
            break;
        }
    }
    let coef = coef.expect("at least one iteration");
    if family == Family::Logit {
        let mu: Vec<T> = eta.iter().map(|&e| family.linkinv(e)).collect();
        let perfect = y.iter().zip(&mu).all(|(&a, &b)| (a - b).abs() < T::lit(1e-8));
        if perfect || (!converged && eta.iter().any(|e| e.abs() > T::lit(30.0))) {
            return Err(FitError::Separation { norm: norm2(&coef) });
        }
        if !converged {
            log::warn!("IRLS stopped after {} iterations without converging", opts.max_iter);
        }
    }

    let w: Vec<T> = y.iter().zip(&eta).map(|(&yi, &e)| family.working(yi, e).0).collect();
    let sys = ScaledSystem::new(&x.weighted_gram(&w)).map_err(|_| rank_error())?;
    let df_residual = n - p;
    let dispersion = match family {
        Family::Identity => dev / T::from_usize_lossy(df_residual),
        Family::Logit => T::one(),
    };
    let inv = sys.inverse();
    let cov = Mat::from_fn(p, p, |i, j| inv[(i, j)] * dispersion);
    let std_errors = (0..p).map(|j| cov[(j, j)].max(T::zero()).sqrt()).collect();
    Ok(GlmFit {
        log_likelihood: family.log_likelihood(y, &eta),
        coef,
        cov,
        std_errors,
        eta,
        deviance: dev,
        dispersion,
        iterations,
        converged,
        df_residual,
    })
}

fn norm2<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|&a| (a * a).to_f64_lossy()).sum::<f64>().sqrt()
}

/// GLM with an intercept prepended to `x`. Rank-deficiency reports use the
/// column indices of `x`.
pub fn fit_glm_matrix<T: Real>(x: &Mat<T>, y: &[T], family: Family, opts: &GlmOptions) -> Result<GlmFit<T>, FitError> {
    let design = Mat::from_fn(x.rows(), 1, |_, _| T::one()).hcat(x);
    irls(&design, y, family, opts).map_err(|e| match e {
        FitError::RankDeficient { columns } => FitError::RankDeficient {
            columns: columns.into_iter().map(|c| c.saturating_sub(1)).collect(),
        },
        FitError::TooFewRows { n, p } => FitError::TooFewRows { n, p },
        other => other,
    })
}

/// GLM on a [`DesignMatrix`](crate::basis::DesignMatrix) with an intercept.
pub fn fit_glm<T: Real>(x: &crate::basis::DesignMatrix<T>, y: &[T], family: Family) -> Result<GlmFit<T>, FitError> {
    fit_glm_matrix(&x.x, y, family, &GlmOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Least squares by modified Gram-Schmidt QR, independent of the normal equations.
    fn qr_least_squares(x: &Mat<f64>, y: &[f64]) -> Vec<f64> {
        let (n, p) = (x.rows(), x.cols());
        let mut q: Vec<Vec<f64>> = (0..p).map(|j| x.col(j)).collect();
        let mut r = vec![vec![0.0; p]; p];
        for j in 0..p {
            for k in 0..j {
                let d: f64 = (0..n).map(|i| q[k][i] * q[j][i]).sum();
                r[k][j] = d;
                for i in 0..n {
                    q[j][i] -= d * q[k][i];
                }
            }
            let nrm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            r[j][j] = nrm;
            q[j].iter_mut().for_each(|v| *v /= nrm);
        }
        let qty: Vec<f64> = (0..p).map(|j| (0..n).map(|i| q[j][i] * y[i]).sum()).collect();
        let mut b = vec![0.0; p];
        for j in (0..p).rev() {
            let s: f64 = (j + 1..p).map(|k| r[j][k] * b[k]).sum();
            b[j] = (qty[j] - s) / r[j][j];
        }
        b
    }

    #[test]
    fn three_point_toy() {
        let x = Mat::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let fit = fit_glm_matrix(&x, &[1.0, 2.0, 3.0], Family::Identity, &GlmOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.coef[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coef[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_matches_qr() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let n = rng.random_range(10..60);
            let p = rng.random_range(1..6);
            let x = Mat::from_fn(n, p, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
            let fit = fit_glm_matrix(&x, &y, Family::Identity, &GlmOptions::default()).unwrap();
            let full = Mat::from_fn(n, 1, |_, _| 1.0).hcat(&x);
            let oracle = qr_least_squares(&full, &y);
            for (a, b) in fit.coef.iter().zip(&oracle) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn logit_intercept_only_is_logit_of_mean() {
        let y = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let fit = fit_glm_matrix(&Mat::zeros(8, 0), &y, Family::Logit, &GlmOptions::default()).unwrap();
        let m = 5.0 / 8.0;
        assert_abs_diff_eq!(fit.coef[0], (m / (1.0 - m) as f64).ln(), epsilon = 1e-10);
        assert!(fit.converged);
    }

    #[test]
    fn logit_score_equations_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let x = Mat::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let e = 0.3 + 1.5 * x[(i, 0)] - x[(i, 1)];
                (rng.random::<f64>() < 1.0 / (1.0 + (-e).exp())) as u8 as f64
            })
            .collect();
        let fit = fit_glm_matrix(&x, &y, Family::Logit, &GlmOptions::default()).unwrap();
        let full = Mat::from_fn(n, 1, |_, _| 1.0).hcat(&x);
        let resid: Vec<f64> = (0..n).map(|i| y[i] - Family::Logit.linkinv(fit.eta[i])).collect();
        for s in full.tmatvec(&resid) {
            assert!(s.abs() < 1e-8);
        }
        assert!(fit.std_errors.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn separation_is_reported() {
        let x = Mat::from_rows(&[vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]]);
        let err = fit_glm_matrix(&x, &[0.0, 0.0, 1.0, 1.0], Family::Logit, &GlmOptions::default()).unwrap_err();
        assert_eq!(err.code(), "fit.separation");
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let x = Mat::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![2.0, 4.0, 1.0],
            vec![3.0, 6.0, 0.0],
            vec![4.0, 8.0, 2.0],
            vec![5.0, 10.0, 5.0],
        ]);
        let err = fit_glm_matrix(&x, &[1.0, 2.0, 3.0, 4.0, 6.0], Family::Identity, &GlmOptions::default()).unwrap_err();
        assert_eq!(err, FitError::RankDeficient { columns: vec![1] });
        let err = fit_glm_matrix(&Mat::zeros(3, 3), &[1.0, 2.0, 3.0], Family::Identity, &GlmOptions::default()).unwrap_err();
        assert!(matches!(err, FitError::TooFewRows { .. }));
    }
}
