use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_binary, Family, FitError, GroupMultiplier};
use crate::linalg::{dot, Cholesky, Mat};
use crate::resample::fold_assignment;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoOptions {
    /// Convergence threshold on `max_j d_j |Δθ_j|`, the largest change of a
    /// coordinate measured in score units (`d_j = Σ w x_j²`).
    pub tol: f64,
    pub max_sweeps: usize,
    pub intercept: bool,
    /// Along a path, stop before the first `λ` at which more than this
    /// fraction of the rows' worth of penalised columns is active.
    pub max_active_fraction: Option<f64>,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_sweeps: 10_000,
            intercept: true,
            max_active_fraction: None,
        }
    }
}

/// Penalty on the coefficients of `−2 log L + pen(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Penalty<T> {
    /// `λ Σ_j |θ_j|` over columns with `penalize[j]`.
    Lasso { penalize: Vec<bool> },
    /// Group exponential lasso: `Σ_g (λ_g² / τ)(1 − exp(−τ ‖θ_g‖₁ / λ_g))`
    /// with `λ_g = λ m_g`. Columns with group `None` are unpenalised.
    Gel {
        groups: Vec<Option<usize>>,
        multipliers: Vec<T>,
        tau: T,
    },
}

impl<T: Real> Penalty<T> {
    pub fn lasso(penalize: Vec<bool>) -> Self {
        Penalty::Lasso { penalize }
    }

    /// GEL with multipliers derived from group sizes.
    pub fn gel(groups: Vec<Option<usize>>, multiplier: GroupMultiplier, tau: T) -> Self {
        let n_groups = groups.iter().flatten().map(|&g| g + 1).max().unwrap_or(0);
        let mut sizes = vec![0usize; n_groups];
        for g in groups.iter().flatten() {
            sizes[*g] += 1;
        }
        let multipliers = sizes
            .iter()
            .map(|&k| match multiplier {
                GroupMultiplier::SqrtSize => T::from_usize_lossy(k.max(1)).sqrt(),
                GroupMultiplier::Unit => T::one(),
            })
            .collect();
        Penalty::Gel {
            groups,
            multipliers,
            tau,
        }
    }

    pub fn n_cols(&self) -> usize {
        match self {
            Penalty::Lasso { penalize } => penalize.len(),
            Penalty::Gel { groups, .. } => groups.len(),
        }
    }

    pub fn is_penalized(&self, j: usize) -> bool {
        match self {
            Penalty::Lasso { penalize } => penalize[j],
            Penalty::Gel { groups, .. } => groups[j].is_some(),
        }
    }

    fn n_groups(&self) -> usize {
        match self {
            Penalty::Lasso { .. } => 0,
            Penalty::Gel { multipliers, .. } => multipliers.len(),
        }
    }

    fn group_norms(&self, beta: &[T]) -> Vec<T> {
        let mut norms = vec![T::zero(); self.n_groups()];
        if let Penalty::Gel { groups, .. } = self {
            for (g, b) in groups.iter().zip(beta) {
                if let Some(g) = g {
                    norms[*g] += b.abs();
                }
            }
        }
        norms
    }

    /// Marginal penalty rate of column `j` given current group norms.
    fn rate(&self, j: usize, lambda: T, norms: &[T]) -> T {
        match self {
            Penalty::Lasso { penalize } => {
                if penalize[j] {
                    lambda
                } else {
                    T::zero()
                }
            }
            Penalty::Gel {
                groups,
                multipliers,
                tau,
            } => match groups[j] {
                None => T::zero(),
                Some(g) => {
                    let lg = lambda * multipliers[g];
                    if lg <= T::zero() || norms[g] == T::zero() {
                        lg
                    } else {
                        lg * (-*tau * norms[g] / lg).exp()
                    }
                }
            },
        }
    }

    pub fn value(&self, lambda: T, beta: &[T]) -> T {
        match self {
            Penalty::Lasso { penalize } => {
                let s: T = beta.iter().zip(penalize).filter(|(_, &p)| p).map(|(b, _)| b.abs()).sum();
                if s == T::zero() {
                    T::zero()
                } else {
                    lambda * s
                }
            }
            Penalty::Gel {
                multipliers, tau, ..
            } => self
                .group_norms(beta)
                .iter()
                .zip(multipliers)
                .map(|(&a, &m)| {
                    let lg = lambda * m;
                    if a == T::zero() || lg <= T::zero() {
                        T::zero()
                    } else {
                        lg * lg / *tau * (T::one() - (-*tau * a / lg).exp())
                    }
                })
                .sum(),
        }
    }

    /// Divisor turning a score into the penalty weight at which the column
    /// would enter from zero.
    fn entry_scale(&self, j: usize) -> Option<T> {
        match self {
            Penalty::Lasso { penalize } => penalize[j].then(T::one),
            Penalty::Gel {
                groups, multipliers, ..
            } => groups[j].map(|g| multipliers[g]),
        }
    }
}

/// Penalised fit at a single `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit<T> {
    pub lambda: T,
    pub intercept: T,
    pub coef: Vec<T>,
    pub deviance: T,
    pub objective: T,
    /// Objective after each sweep (identity) or each IRLS step (logit).
    pub objective_trace: Vec<T>,
    pub sweeps: usize,
}

impl<T: Real> LassoFit<T> {
    pub fn support(&self) -> Vec<usize> {
        (0..self.coef.len()).filter(|&j| self.coef[j] != T::zero()).collect()
    }

    pub fn eta(&self, x: &Mat<T>) -> Vec<T> {
        x.matvec(&self.coef).into_iter().map(|v| v + self.intercept).collect()
    }
}

/// Active-set sweeps between exact active-set solves.
const POLISH_EVERY: usize = 5;

struct Problem<'a, T> {
    cols: Vec<Vec<T>>,
    y: &'a [T],
    family: Family,
    penalty: &'a Penalty<T>,
    opts: &'a LassoOptions,
}

struct PolishCache<T> {
    active: Vec<usize>,
    g: Mat<T>,
    scale: Vec<T>,
    chol: Option<Cholesky<T>>,
}

struct State<T> {
    b0: T,
    beta: Vec<T>,
    eta: Vec<T>,
    res: Vec<T>,
    w: Vec<T>,
    d: Vec<T>,
    d0: T,
    norms: Vec<T>,
}

/// `Σ a_i b_i c_i`
fn dot3<T: Real>(a: &[T], b: &[T], c: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let n = a.len();
    let m = n - n % 4;
    for i in (0..m).step_by(4) {
        for k in 0..4 {
            acc[k] += a[i + k] * b[i + k] * c[i + k];
        }
    }
    let tail: T = (m..n).map(|i| a[i] * b[i] * c[i]).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn soft<T: Real>(u: T, t: T) -> T {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        T::zero()
    }
}

impl<'a, T: Real> Problem<'a, T> {
    fn new(x: &Mat<T>, y: &'a [T], family: Family, penalty: &'a Penalty<T>, opts: &'a LassoOptions) -> Result<Self, FitError> {
        if x.rows() != y.len() {
            return Err(FitError::Dimension(format!("{} design rows, {} outcomes", x.rows(), y.len())));
        }
        if penalty.n_cols() != x.cols() {
            return Err(FitError::Dimension(format!(
                "penalty covers {} columns, design has {}",
                penalty.n_cols(),
                x.cols()
            )));
        }
        if y.is_empty() {
            return Err(FitError::TooFewRows { n: 0, p: x.cols() });
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
        Ok(Self {
            cols: (0..x.cols()).map(|j| x.col(j)).collect(),
            y,
            family,
            penalty,
            opts,
        })
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn init_state(&self, warm: Option<(T, &[T])>) -> State<T> {
        let n = self.n();
        let p = self.cols.len();
        let (b0, beta) = match warm {
            Some((b, c)) => (b, c.to_vec()),
            None => {
                let b0 = if self.opts.intercept {
                    let m = self.y.iter().copied().sum::<T>() / T::from_usize_lossy(n);
                    match self.family {
                        Family::Identity => m,
                        Family::Logit => {
                            let m = m.max(T::lit(1e-6)).min(T::one() - T::lit(1e-6));
                            self.family.link(m)
                        }
                    }
                } else {
                    T::zero()
                };
                (b0, vec![T::zero(); p])
            }
        };
        let mut eta = vec![b0; n];
        for (j, &b) in beta.iter().enumerate() {
            if b != T::zero() {
                for (e, &x) in eta.iter_mut().zip(&self.cols[j]) {
                    *e += b * x;
                }
            }
        }
        State {
            norms: self.penalty.group_norms(&beta),
            b0,
            beta,
            eta,
            res: vec![T::zero(); n],
            w: vec![T::one(); n],
            d: vec![T::zero(); p],
            d0: T::zero(),
        }
    }

    fn objective(&self, lambda: T, s: &State<T>) -> (T, T) {
        let dev = self.family.deviance(self.y, &s.eta);
        (dev, dev + self.penalty.value(lambda, &s.beta))
    }

    /// Refreshes IRLS weights, working residuals and curvature at the current `eta`.
    fn linearise(&self, s: &mut State<T>) {
        for i in 0..self.n() {
            let (w, z) = self.family.working(self.y[i], s.eta[i]);
            s.w[i] = w;
            s.res[i] = z - s.eta[i];
        }
        s.d0 = s.w.iter().copied().sum();
        for (j, col) in self.cols.iter().enumerate() {
            s.d[j] = col.iter().zip(&s.w).map(|(&x, &w)| w * x * x).sum();
        }
    }

    fn sweep(&self, lambda: T, s: &mut State<T>, active_only: bool) -> T {
        let mut change = T::zero();
        if self.opts.intercept && s.d0 > T::zero() {
            let delta = s.w.iter().zip(&s.res).map(|(&w, &r)| w * r).sum::<T>() / s.d0;
            if delta != T::zero() {
                s.b0 += delta;
                for i in 0..s.res.len() {
                    s.res[i] -= delta;
                    s.eta[i] += delta;
                }
                change = change.max(s.d0 * delta.abs());
            }
        }
        for j in 0..self.cols.len() {
            let old = s.beta[j];
            if active_only && old == T::zero() && self.penalty.is_penalized(j) {
                continue;
            }
            let dj = s.d[j];
            if dj <= T::zero() {
                continue;
            }
            let col = &self.cols[j];
            let g = dot3(col, &s.w, &s.res);
            let rate = self.penalty.rate(j, lambda, &s.norms);
            let new = soft(g + dj * old, rate * T::half()) / dj;
            let delta = new - old;
            if delta != T::zero() {
                s.beta[j] = new;
                for i in 0..col.len() {
                    s.res[i] -= delta * col[i];
                    s.eta[i] += delta * col[i];
                }
                if let Penalty::Gel { groups, .. } = self.penalty {
                    if let Some(g) = groups[j] {
                        s.norms[g] += new.abs() - old.abs();
                    }
                }
                change = change.max(dj * delta.abs());
            }
        }
        change
    }

    /// Exact minimiser of the current quadratic model over the active set with
    /// signs held fixed (penalty rates frozen at the current group norms). The
    /// step stops where the first coefficient would change sign, which keeps
    /// the objective nonincreasing. Returns false when the active system is
    /// singular and nothing was changed.
    fn polish(&self, lambda: T, s: &mut State<T>, cache: &mut Option<PolishCache<T>>) -> bool {
        let n = self.n();
        let active: Vec<usize> = (0..self.cols.len())
            .filter(|&j| s.d[j] > T::zero() && (s.beta[j] != T::zero() || !self.penalty.is_penalized(j)))
            .collect();
        let icpt = usize::from(self.opts.intercept);
        let k = icpt + active.len();
        if k == 0 || k >= n {
            return false;
        }
        let ones = vec![T::one(); n];
        let cols: Vec<&[T]> = (0..k)
            .map(|c| if c < icpt { ones.as_slice() } else { self.cols[active[c - icpt]].as_slice() })
            .collect();
        if cache.as_ref().is_none_or(|c| c.active != active) {
            *cache = Some(self.active_system(&active, &cols, &s.w));
        }
        let Some(PolishCache { g, scale, chol: Some(chol), .. }) = cache.as_ref() else {
            return false;
        };
        let z: Vec<T> = s.res.iter().zip(&s.eta).map(|(&r, &e)| r + e).collect();
        let wz: Vec<T> = z.iter().zip(&s.w).map(|(&z, &w)| z * w).collect();
        let xtwz: Vec<T> = cols.iter().map(|c| dot(&wz, c)).collect();
        let mut rhs = xtwz.clone();
        let mut sign = vec![T::zero(); k];
        let mut rate = vec![T::zero(); k];
        for (c, &j) in active.iter().enumerate() {
            let b = s.beta[j];
            if self.penalty.is_penalized(j) {
                sign[icpt + c] = b.signum();
                rate[icpt + c] = self.penalty.rate(j, lambda, &s.norms);
                rhs[icpt + c] -= rate[icpt + c] * T::half() * b.signum();
            }
        }
        let rs: Vec<T> = rhs.iter().zip(scale).map(|(&r, &c)| r * c).collect();
        let target: Vec<T> = chol.solve(&rs).iter().zip(scale).map(|(&v, &c)| v * c).collect();
        let current: Vec<T> = (0..k)
            .map(|c| if c < icpt { s.b0 } else { s.beta[active[c - icpt]] })
            .collect();
        // surrogate objective up to a constant: θᵀGθ - 2θᵀXᵀWz + Σ rate |θ|
        let model = |theta: &[T]| -> T {
            let gt = g.matvec(theta);
            (0..k)
                .map(|c| theta[c] * (gt[c] - T::two() * xtwz[c]) + rate[c] * theta[c].abs())
                .sum()
        };
        let crosses = |c: usize| sign[c] != T::zero() && target[c] * sign[c] <= T::zero();
        let mut step = T::one();
        let mut blocking = None;
        for c in icpt..k {
            if crosses(c) {
                let t = current[c] / (current[c] - target[c]);
                if t < step {
                    step = t;
                    blocking = Some(c);
                }
            }
        }
        let blocked: Vec<T> = (0..k)
            .map(|c| {
                if Some(c) == blocking {
                    T::zero()
                } else {
                    current[c] + step * (target[c] - current[c])
                }
            })
            .collect();
        let next = if blocking.is_some() {
            let projected: Vec<T> = (0..k).map(|c| if crosses(c) { T::zero() } else { target[c] }).collect();
            if model(&projected) < model(&blocked) {
                projected
            } else {
                blocked
            }
        } else {
            blocked
        };
        let mut delta_eta = vec![T::zero(); n];
        for c in 0..k {
            let d = next[c] - current[c];
            if d == T::zero() {
                continue;
            }
            for (de, &x) in delta_eta.iter_mut().zip(cols[c]) {
                *de += d * x;
            }
            if c < icpt {
                s.b0 = next[c];
            } else {
                s.beta[active[c - icpt]] = next[c];
            }
        }
        for i in 0..n {
            s.eta[i] += delta_eta[i];
            s.res[i] -= delta_eta[i];
        }
        s.norms = self.penalty.group_norms(&s.beta);
        true
    }

    fn active_limit(&self) -> Option<usize> {
        self.opts
            .max_active_fraction
            .map(|f| (f * self.n() as f64).floor() as usize)
    }

    /// Jacobi-scaled Gram matrix of the active columns under weights `w`.
    fn active_system(&self, active: &[usize], cols: &[&[T]], w: &[T]) -> PolishCache<T> {
        let k = cols.len();
        let mut g = Mat::zeros(k, k);
        let mut wx = vec![T::zero(); w.len()];
        for a in 0..k {
            for (o, (&x, &w)) in wx.iter_mut().zip(cols[a].iter().zip(w)) {
                *o = x * w;
            }
            for b in a..k {
                let v = dot(&wx, cols[b]);
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        let scale: Vec<T> = (0..k).map(|a| T::one() / g[(a, a)].sqrt()).collect();
        let gs = Mat::from_fn(k, k, |a, b| g[(a, b)] * scale[a] * scale[b]);
        PolishCache {
            active: active.to_vec(),
            chol: Cholesky::new(&gs).ok(),
            g,
            scale,
        }
    }

    fn solve(&self, lambda: T, warm: Option<(T, &[T])>) -> Result<LassoFit<T>, FitError> {
        let tol = T::lit(self.opts.tol);
        let max_sweeps = self.opts.max_sweeps;
        if warm.is_none() && lambda.is_finite() {
            // start from the fit of the unpenalised columns alone
            let null = self.solve(T::infinity(), None)?;
            return self.solve(lambda, Some((null.intercept, &null.coef)));
        }
        let mut s = self.init_state(warm);
        let (_, mut obj) = self.objective(lambda, &s);
        let mut trace = vec![obj];
        let mut sweeps = 0usize;
        loop {
            self.linearise(&mut s);
            let mut cache = None;
            let b0_old = s.b0;
            let beta_old = s.beta.clone();
            loop {
                let c = self.sweep(lambda, &mut s, false);
                sweeps += 1;
                if let Some(limit) = self.active_limit() {
                    let active = (0..s.beta.len())
                        .filter(|&j| s.beta[j] != T::zero() && self.penalty.is_penalized(j))
                        .count();
                    if active > limit {
                        return Err(FitError::ActiveLimit { limit });
                    }
                }
                if self.family == Family::Identity {
                    trace.push(self.objective(lambda, &s).1);
                }
                if c < tol {
                    break;
                }
                let mut inner = 0usize;
                loop {
                    let mut c = self.sweep(lambda, &mut s, true);
                    sweeps += 1;
                    inner += 1;
                    if c >= tol && inner % POLISH_EVERY == 0 && self.polish(lambda, &mut s, &mut cache) {
                        c = self.sweep(lambda, &mut s, true);
                        sweeps += 1;
                    }
                    if self.family == Family::Identity {
                        trace.push(self.objective(lambda, &s).1);
                    }
                    if c < tol {
                        break;
                    }
                    if sweeps >= max_sweeps {
                        return Err(FitError::NoConvergence { sweeps });
                    }
                }
                if sweeps >= max_sweeps {
                    return Err(FitError::NoConvergence { sweeps });
                }
            }
            if self.family == Family::Identity {
                break;
            }
            let (d0_lin, d_lin) = (s.d0, s.d.clone());
            let (_, mut new_obj) = self.objective(lambda, &s);
            let mut halvings = 0;
            while new_obj > obj + T::lit(1e-12) * (T::one() + obj.abs()) && halvings < 30 {
                s.b0 = (s.b0 + b0_old) * T::half();
                for (b, &o) in s.beta.iter_mut().zip(&beta_old) {
                    *b = (*b + o) * T::half();
                }
                s = self.init_state(Some((s.b0, &s.beta.clone())));
                new_obj = self.objective(lambda, &s).1;
                halvings += 1;
            }
            trace.push(new_obj);
            obj = new_obj;
            let mut change = d0_lin * (s.b0 - b0_old).abs();
            for j in 0..s.beta.len() {
                change = change.max(d_lin[j] * (s.beta[j] - beta_old[j]).abs());
            }
            if change < tol {
                break;
            }
            if sweeps >= max_sweeps {
                return Err(FitError::NoConvergence { sweeps });
            }
        }
        let (deviance, objective) = self.objective(lambda, &s);
        Ok(LassoFit {
            lambda,
            intercept: s.b0,
            coef: s.beta,
            deviance,
            objective,
            objective_trace: trace,
            sweeps,
        })
    }

    fn scores(&self, fit: &LassoFit<T>) -> Vec<T> {
        let mut eta = vec![fit.intercept; self.n()];
        for (j, &b) in fit.coef.iter().enumerate() {
            if b != T::zero() {
                for (e, &x) in eta.iter_mut().zip(&self.cols[j]) {
                    *e += b * x;
                }
            }
        }
        let r: Vec<T> = self
            .y
            .iter()
            .zip(&eta)
            .map(|(&y, &e)| y - self.family.linkinv(e))
            .collect();
        self.cols
            .iter()
            .map(|c| T::two() * c.iter().zip(&r).map(|(&a, &b)| a * b).sum::<T>())
            .collect()
    }
}

fn check_lambda<T: Real>(lambda: T) -> Result<(), FitError> {
    if !(lambda >= T::zero()) {
        return Err(FitError::NegativeLambda(lambda.to_f64_lossy()));
    }
    Ok(())
}

/// Minimiser of `−2 log L(α, θ) + pen_λ(θ)` by coordinate descent over IRLS
/// quadratic approximations, with step halving on the exact objective.
pub fn fit_penalized<T: Real>(
    x: &Mat<T>,
    y: &[T],
    family: Family,
    penalty: &Penalty<T>,
    lambda: T,
    opts: &LassoOptions,
) -> Result<LassoFit<T>, FitError> {
    check_lambda(lambda)?;
    Problem::new(x, y, family, penalty, opts)?.solve(lambda, None)
}

/// Lasso GLM; columns with `penalize[j] == false` are left unpenalised.
pub fn fit_lasso_glm<T: Real>(
    x: &Mat<T>,
    y: &[T],
    family: Family,
    lambda: T,
    penalize: &[bool],
    opts: &LassoOptions,
) -> Result<LassoFit<T>, FitError> {
    fit_penalized(x, y, family, &Penalty::lasso(penalize.to_vec()), lambda, opts)
}

/// Group exponential lasso GLM.
#[allow(clippy::too_many_arguments)]
pub fn fit_gel<T: Real>(
    x: &Mat<T>,
    y: &[T],
    family: Family,
    lambda: T,
    groups: &[Option<usize>],
    multiplier: GroupMultiplier,
    tau: T,
    opts: &LassoOptions,
) -> Result<LassoFit<T>, FitError> {
    fit_penalized(x, y, family, &Penalty::gel(groups.to_vec(), multiplier, tau), lambda, opts)
}

/// Largest KKT violation of `fit`: `|score_j| − rate_j` for zero coefficients,
/// `|score_j − rate_j sign θ_j|` for nonzero ones, `|score_j|` for unpenalised
/// columns (scores are `2 x_jᵀ (y − μ)`).
pub fn kkt_violation<T: Real>(x: &Mat<T>, y: &[T], family: Family, penalty: &Penalty<T>, fit: &LassoFit<T>) -> Result<T, FitError> {
    let opts = LassoOptions::default();
    let prob = Problem::new(x, y, family, penalty, &opts)?;
    let scores = prob.scores(fit);
    let norms = penalty.group_norms(&fit.coef);
    let mut worst = T::zero();
    let eta = fit.eta(x);
    let r0: T = y.iter().zip(&eta).map(|(&a, &e)| a - family.linkinv(e)).sum();
    worst = worst.max((T::two() * r0).abs());
    for (j, &s) in scores.iter().enumerate() {
        let rate = penalty.rate(j, fit.lambda, &norms);
        let b = fit.coef[j];
        let v = if !penalty.is_penalized(j) {
            s.abs()
        } else if b == T::zero() {
            (s.abs() - rate).max(T::zero())
        } else {
            (s - rate * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Smallest `λ` at which every penalised coefficient is zero.
pub fn lambda_max<T: Real>(x: &Mat<T>, y: &[T], family: Family, penalty: &Penalty<T>, opts: &LassoOptions) -> Result<T, FitError> {
    let tight = LassoOptions {
        tol: opts.tol * 1e-4,
        ..opts.clone()
    };
    let prob = Problem::new(x, y, family, penalty, &tight)?;
    let null = prob.solve(T::infinity(), None)?;
    let scores = prob.scores(&null);
    let max = (0..scores.len())
        .filter_map(|j| penalty.entry_scale(j).map(|m| scores[j].abs() / m))
        .fold(T::zero(), T::max);
    Ok(max * T::lit(1.0 + 1e-9))
}

/// `n` log-spaced values from `lmax` down to `ratio * lmax`.
pub fn lambda_grid<T: Real>(lmax: T, n: usize, ratio: f64) -> Vec<T> {
    if n == 1 {
        return vec![lmax];
    }
    let step = ratio.ln() / (n - 1) as f64;
    (0..n).map(|k| lmax * T::lit((step * k as f64).exp())).collect()
}

/// Fits along a decreasing `λ` sequence with warm starts.
pub fn penalized_path<T: Real>(
    x: &Mat<T>,
    y: &[T],
    family: Family,
    penalty: &Penalty<T>,
    lambdas: &[T],
    opts: &LassoOptions,
) -> Result<Vec<LassoFit<T>>, FitError> {
    for &l in lambdas {
        check_lambda(l)?;
    }
    let prob = Problem::new(x, y, family, penalty, opts)?;
    let mut out: Vec<LassoFit<T>> = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let fit = match out.last() {
            Some(prev) => prob.solve(l, Some((prev.intercept, &prev.coef))),
            None => prob.solve(l, None),
        };
        match fit {
            Ok(f) => out.push(f),
            Err(FitError::ActiveLimit { limit }) if !out.is_empty() => {
                log::debug!("path stopped at λ = {:?}: more than {limit} active columns", l.to_f64());
                break;
            }
            Err(FitError::NoConvergence { sweeps }) if !out.is_empty() => {
                log::warn!(
                    "no convergence at λ = {:?} after {sweeps} sweeps; path truncated to {} values",
                    l.to_f64(),
                    out.len()
                );
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Cross-validated deviance along a `λ` path.
#[derive(Debug, Clone, PartialEq)]
pub struct CvPath<T> {
    pub lambdas: Vec<T>,
    /// Mean held-out deviance per observation.
    pub mean: Vec<T>,
    /// Standard error of `mean` across folds.
    pub se: Vec<T>,
    pub index_min: usize,
    pub index_1se: usize,
}

/// `folds`-fold cross-validation of the path; folds are stratified for logit
/// and evaluated in parallel, reduced in fold order.
#[allow(clippy::too_many_arguments)]
pub fn cv_penalized<T: Real>(
    x: &Mat<T>,
    y: &[T],
    family: Family,
    penalty: &Penalty<T>,
    lambdas: &[T],
    folds: usize,
    seed: u64,
    opts: &LassoOptions,
) -> Result<CvPath<T>, FitError> {
    let n = y.len();
    let folds = folds.min(n).max(2);
    let labels: Vec<bool> = y.iter().map(|&v| v > T::half()).collect();
    let strata = (family == Family::Logit).then_some(labels.as_slice());
    let assign = fold_assignment(n, folds, strata, seed);
    let per_fold: Vec<Vec<T>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| assign[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| assign[i] == f).collect();
            let xt = x.select_rows(&train);
            let yt: Vec<T> = train.iter().map(|&i| y[i]).collect();
            let path = penalized_path(&xt, &yt, family, penalty, lambdas, opts)?;
            let xv = x.select_rows(&test);
            let yv: Vec<T> = test.iter().map(|&i| y[i]).collect();
            let m = T::from_usize_lossy(test.len().max(1));
            Ok(path.iter().map(|fit| family.deviance(&yv, &fit.eta(&xv)) / m).collect())
        })
        .collect::<Result<_, FitError>>()?;
    let k = T::from_usize_lossy(folds);
    let len = per_fold.iter().map(Vec::len).min().unwrap_or(0);
    let mut mean = Vec::with_capacity(len);
    let mut se = Vec::with_capacity(len);
    for l in 0..len {
        let m = per_fold.iter().map(|v| v[l]).sum::<T>() / k;
        let var = per_fold.iter().map(|v| (v[l] - m) * (v[l] - m)).sum::<T>() / (k - T::one());
        mean.push(m);
        se.push((var / k).sqrt());
    }
    let index_min = (0..mean.len())
        .fold(0, |best, l| if mean[l] < mean[best] { l } else { best });
    let bound = mean[index_min] + se[index_min];
    let index_1se = (0..=index_min).find(|&l| mean[l] <= bound).unwrap_or(index_min);
    Ok(CvPath {
        lambdas: lambdas[..len].to_vec(),
        mean,
        se,
        index_min,
        index_1se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_glm_matrix, GlmOptions};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(seed: u64, n: usize, p: usize, family: Family) -> (Mat<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Mat::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = (0..n)
            .map(|i| {
                let e = 0.5 * x[(i, 0)] - 0.8 * x[(i, 1 % p)] + 0.2;
                match family {
                    Family::Identity => e + rng.random::<f64>() - 0.5,
                    Family::Logit => (rng.random::<f64>() < 1.0 / (1.0 + (-2.0 * e).exp())) as u8 as f64,
                }
            })
            .collect();
        (x, y)
    }

    #[test]
    fn zero_lambda_matches_glm() {
        for family in [Family::Identity, Family::Logit] {
            let (x, y) = toy(5, 120, 4, family);
            let fit = fit_lasso_glm(&x, &y, family, 0.0, &[true; 4], &LassoOptions::default()).unwrap();
            let glm = fit_glm_matrix(&x, &y, family, &GlmOptions::default()).unwrap();
            assert_abs_diff_eq!(fit.intercept, glm.coef[0], epsilon = 1e-6);
            for j in 0..4 {
                assert_abs_diff_eq!(fit.coef[j], glm.coef[j + 1], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        for family in [Family::Identity, Family::Logit] {
            let (x, y) = toy(6, 80, 5, family);
            let mask = [true, true, false, true, true];
            let pen = Penalty::lasso(mask.to_vec());
            let lmax = lambda_max(&x, &y, family, &pen, &LassoOptions::default()).unwrap();
            let fit = fit_penalized(&x, &y, family, &pen, lmax, &LassoOptions::default()).unwrap();
            for j in [0, 1, 3, 4] {
                assert_eq!(fit.coef[j], 0.0);
            }
            let below = fit_penalized(&x, &y, family, &pen, lmax * 0.9, &LassoOptions::default()).unwrap();
            assert!(below.support().iter().any(|&j| j != 2));
        }
    }

    #[test]
    fn single_feature_soft_threshold() {
        let x: Vec<f64> = vec![-1.5, -0.5, 0.2, 0.7, 1.1];
        let xm = x.iter().sum::<f64>() / 5.0;
        let x: Vec<f64> = x.iter().map(|v| v - xm).collect();
        let y: Vec<f64> = vec![-2.0, -0.3, 0.1, 0.9, 1.3];
        let opts = LassoOptions {
            intercept: false,
            ..Default::default()
        };
        let xm = Mat::from_vec(5, 1, x.clone());
        let xty: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let xtx: f64 = x.iter().map(|a| a * a).sum();
        for lambda in [0.0, 0.5, 2.0, 5.0, 100.0] {
            let fit = fit_lasso_glm(&xm, &y, Family::Identity, lambda, &[true], &opts).unwrap();
            let expect = soft(xty, lambda / 2.0) / xtx;
            assert_abs_diff_eq!(fit.coef[0], expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn kkt_and_monotone_objective() {
        for (seed, family) in [(1, Family::Identity), (2, Family::Logit)] {
            let (x, y) = toy(seed, 150, 12, family);
            let pen = Penalty::lasso(vec![true; 12]);
            let lmax = lambda_max(&x, &y, family, &pen, &LassoOptions::default()).unwrap();
            for frac in [0.5, 0.1, 0.01] {
                let fit = fit_penalized(&x, &y, family, &pen, lmax * frac, &LassoOptions::default()).unwrap();
                assert!(kkt_violation(&x, &y, family, &pen, &fit).unwrap() < 1e-6);
                for w in fit.objective_trace.windows(2) {
                    assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()));
                }
            }
        }
    }

    #[test]
    fn gel_small_tau_is_lasso() {
        let (x, y) = toy(11, 100, 6, Family::Logit);
        let groups: Vec<Option<usize>> = vec![Some(0), Some(0), Some(1), Some(1), Some(1), None];
        let mask: Vec<bool> = groups.iter().map(|g| g.is_some()).collect();
        let lasso = fit_lasso_glm(&x, &y, Family::Logit, 4.0, &mask, &LassoOptions::default()).unwrap();
        let gel = fit_gel(&x, &y, Family::Logit, 4.0, &groups, GroupMultiplier::Unit, 1e-9, &LassoOptions::default()).unwrap();
        for (a, b) in lasso.coef.iter().zip(&gel.coef) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-4);
        }
    }

    #[test]
    fn gel_kkt_and_group_zeroing() {
        let (x, y) = toy(12, 200, 8, Family::Logit);
        let groups: Vec<Option<usize>> = (0..8).map(|j| Some(j / 2)).collect();
        let pen = Penalty::gel(groups, GroupMultiplier::SqrtSize, 1.0 / 3.0);
        let lmax = lambda_max(&x, &y, Family::Logit, &pen, &LassoOptions::default()).unwrap();
        let at_max = fit_penalized(&x, &y, Family::Logit, &pen, lmax, &LassoOptions::default()).unwrap();
        assert!(at_max.support().is_empty());
        let fit = fit_penalized(&x, &y, Family::Logit, &pen, lmax * 0.2, &LassoOptions::default()).unwrap();
        assert!(!fit.support().is_empty());
        assert!(kkt_violation(&x, &y, Family::Logit, &pen, &fit).unwrap() < 1e-6);
    }

    #[test]
    fn cv_path_is_deterministic() {
        let (x, y) = toy(13, 90, 6, Family::Logit);
        let pen = Penalty::lasso(vec![true; 6]);
        let lmax = lambda_max(&x, &y, Family::Logit, &pen, &LassoOptions::default()).unwrap();
        let grid = lambda_grid(lmax, 10, 1e-2);
        assert_abs_diff_eq!(grid[9], lmax * 1e-2, epsilon = 1e-12);
        let a = cv_penalized(&x, &y, Family::Logit, &pen, &grid, 5, 3, &LassoOptions::default()).unwrap();
        let b = cv_penalized(&x, &y, Family::Logit, &pen, &grid, 5, 3, &LassoOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.index_1se <= a.index_min);
    }

    #[test]
    fn negative_lambda_rejected() {
        let (x, y) = toy(1, 10, 2, Family::Identity);
        let e = fit_lasso_glm(&x, &y, Family::Identity, -1.0, &[true, true], &LassoOptions::default()).unwrap_err();
        assert_eq!(e.code(), "fit.negative_lambda");
    }
}
