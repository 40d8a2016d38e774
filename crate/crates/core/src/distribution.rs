//! Empirical quantile functions, sample L-moments and shifted Legendre
//! polynomials.
//!
//! L-moments are available through two independent routes: the unbiased
//! order-statistic estimator ([`l_moment_direct`]) and quadrature of the
//! quantile function against a shifted Legendre polynomial
//! ([`l_moment_via_quantile`]).

use thiserror::Error;

use crate::grid::Grid;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("sample is empty")]
    EmptySample,
    #[error("quantile level {0} outside (0, 1)")]
    LevelOutOfRange(f64),
    #[error("L-moment order {order} needs at least {order} observations, sample has {size}")]
    OrderTooLarge { order: usize, size: usize },
    #[error("L-moment order must be at least 1")]
    ZeroOrder,
    #[error("order {order} exceeds basis capacity {capacity}")]
    BasisTooSmall { order: usize, capacity: usize },
    #[error("quantile grid has {0} levels; at least 11 are needed for quadrature")]
    GridTooCoarse(usize),
    #[error("sample contains non-finite values")]
    NonFinite,
    #[error("point {0} outside [0, 1]")]
    Domain(f64),
}

impl DistributionError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptySample => "distribution.empty_sample",
            Self::LevelOutOfRange(_) => "distribution.level_out_of_range",
            Self::OrderTooLarge { .. } => "distribution.order_too_large",
            Self::ZeroOrder => "distribution.zero_order",
            Self::BasisTooSmall { .. } => "distribution.basis_too_small",
            Self::GridTooCoarse(_) => "distribution.grid_too_coarse",
            Self::NonFinite => "distribution.non_finite",
            Self::Domain(_) => "distribution.domain",
        }
    }
}

/// Parzen's interpolated quantile of a sorted sample: with `(n+1)p = j + w`,
/// `Q(p) = (1 - w) X_(j) + w X_(j+1)`. Positions below 1 or above `n` clamp
/// to the extreme order statistics.
pub fn empirical_quantile<T: Real>(sorted: &[T], p: T) -> Result<T, DistributionError> {
    let n = sorted.len();
    if n == 0 {
        return Err(DistributionError::EmptySample);
    }
    if !(p > T::zero() && p < T::one()) {
        return Err(DistributionError::LevelOutOfRange(p.to_f64_lossy()));
    }
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]), "sample must be sorted");
    Ok(parzen_unchecked(sorted, p))
}

#[inline]
fn parzen_unchecked<T: Real>(sorted: &[T], p: T) -> T {
    let n = sorted.len();
    let pos = T::from_usize_lossy(n + 1) * p;
    if pos < T::one() {
        return sorted[0];
    }
    if pos >= T::from_usize_lossy(n) {
        return sorted[n - 1];
    }
    let j = pos.floor();
    let w = pos - j;
    // 1-based j in [1, n-1]
    let j = j.to_usize().unwrap_or(1).clamp(1, n - 1);
    let lo = sorted[j - 1];
    let hi = sorted[j];
    if w == T::zero() {
        lo
    } else {
        (T::one() - w) * lo + w * hi
    }
}

/// A quantile function evaluated on a level grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFunction<T> {
    pub p_grid: Grid<T>,
    pub values: Vec<T>,
    /// Number of pooled observations behind the estimate.
    pub sample_size: usize,
}

impl<T: Real> QuantileFunction<T> {
    /// `∫ Q(p) dp` under the grid's quadrature.
    pub fn integral(&self) -> T {
        self.p_grid.integrate(&self.values)
    }
}

/// Sorts a copy of `sample`, rejecting non-finite entries.
pub fn sorted_copy<T: Real>(sample: &[T]) -> Result<Vec<T>, DistributionError> {
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(DistributionError::NonFinite);
    }
    let mut v = sample.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values are ordered"));
    Ok(v)
}

/// Evaluates the Parzen quantile estimator on every level of `p_grid`.
pub fn quantile_function<T: Real>(sample: &[T], p_grid: &Grid<T>) -> Result<QuantileFunction<T>, DistributionError> {
    if sample.is_empty() {
        return Err(DistributionError::EmptySample);
    }
    let sorted = sorted_copy(sample)?;
    quantile_function_sorted(&sorted, p_grid)
}

/// Like [`quantile_function`] for an already sorted sample.
pub fn quantile_function_sorted<T: Real>(sorted: &[T], p_grid: &Grid<T>) -> Result<QuantileFunction<T>, DistributionError> {
    if sorted.is_empty() {
        return Err(DistributionError::EmptySample);
    }
    let values = p_grid
        .points()
        .iter()
        .map(|&p| empirical_quantile(sorted, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuantileFunction {
        p_grid: p_grid.clone(),
        values,
        sample_size: sorted.len(),
    })
}

/// Exact integer coefficient `(-1)^(r-k) (r+k)! / ((k!)^2 (r-k)!)`.
pub fn legendre_coefficient(r: usize, k: usize) -> i128 {
    if k > r {
        return 0;
    }
    // C(r, k) * C(r + k, k)
    let binom = |n: usize, k: usize| -> i128 {
        let k = k.min(n - k);
        let mut acc: i128 = 1;
        for i in 0..k {
            acc = acc * (n - i) as i128 / (i + 1) as i128;
        }
        acc
    };
    let mag = binom(r, k) * binom(r + k, k);
    if (r - k) % 2 == 0 {
        mag
    } else {
        -mag
    }
}

/// Shifted Legendre polynomials `P_0 .. P_R` on [0, 1] through their
/// coefficient table.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreBasis<T> {
    max_order: usize,
    /// `coefficients[r][k] = s_{r,k}`
    coefficients: Vec<Vec<T>>,
}

impl<T: Real> LegendreBasis<T> {
    pub fn new(max_order: usize) -> Self {
        let coefficients = (0..=max_order)
            .map(|r| {
                (0..=r)
                    .map(|k| T::lit(legendre_coefficient(r, k) as f64))
                    .collect()
            })
            .collect();
        Self {
            max_order,
            coefficients,
        }
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn coefficient(&self, r: usize, k: usize) -> T {
        self.coefficients
            .get(r)
            .and_then(|c| c.get(k))
            .copied()
            .unwrap_or(T::zero())
    }

    /// `P_r(p) = Σ_k s_{r,k} p^k` by Horner's rule.
    pub fn eval(&self, r: usize, p: T) -> T {
        let c = &self.coefficients[r];
        c.iter().rev().fold(T::zero(), |acc, &a| acc * p + a)
    }

    /// Table of `P_r(p_i)`, one row per grid point, columns `r = 0..=R`.
    pub fn table(&self, points: &[T]) -> Vec<Vec<T>> {
        points
            .iter()
            .map(|&p| (0..=self.max_order).map(|r| self.eval(r, p)).collect())
            .collect()
    }
}

/// Shifted Legendre polynomial of degree `r` at `p ∈ [0, 1]`.
pub fn shifted_legendre<T: Real>(r: usize, p: T) -> Result<T, DistributionError> {
    if !(p >= T::zero() && p <= T::one()) {
        return Err(DistributionError::Domain(p.to_f64_lossy()));
    }
    Ok((0..=r)
        .rev()
        .fold(T::zero(), |acc, k| acc * p + T::lit(legendre_coefficient(r, k) as f64)))
}

/// Unbiased sample L-moment of order `r` (Hosking's U-statistic), computed
/// through probability-weighted moments
/// `b_k = n⁻¹ Σ_i [C(i-1, k) / C(n-1, k)] X_(i)` and `L_r = Σ_k s_{r-1,k} b_k`.
pub fn l_moment_direct<T: Real>(sample: &[T], r: usize) -> Result<T, DistributionError> {
    if r == 0 {
        return Err(DistributionError::ZeroOrder);
    }
    if sample.is_empty() {
        return Err(DistributionError::EmptySample);
    }
    if r > sample.len() {
        return Err(DistributionError::OrderTooLarge {
            order: r,
            size: sample.len(),
        });
    }
    let sorted = sorted_copy(sample)?;
    Ok(l_moments_sorted(&sorted, r)[r - 1])
}

/// All sample L-moments of orders `1..=r` of a sorted sample (`r <= n`).
pub fn l_moments_sorted<T: Real>(sorted: &[T], r: usize) -> Vec<T> {
    let n = sorted.len();
    debug_assert!(r >= 1 && r <= n);
    let nf = T::from_usize_lossy(n);
    let mut b = vec![T::zero(); r];
    for (idx, &x) in sorted.iter().enumerate() {
        // weight for k: Π_{j<k} (i-1-j)/(n-1-j) with i = idx + 1
        let mut wgt = T::one();
        b[0] += x;
        for (k, bk) in b.iter_mut().enumerate().skip(1) {
            let j = k - 1;
            if idx < k {
                wgt = T::zero();
            } else {
                wgt *= T::from_usize_lossy(idx - j) / T::from_usize_lossy(n - 1 - j);
            }
            *bk += wgt * x;
        }
    }
    for bk in b.iter_mut() {
        *bk /= nf;
    }
    (1..=r)
        .map(|order| {
            (0..order)
                .map(|k| T::lit(legendre_coefficient(order - 1, k) as f64) * b[k])
                .sum()
        })
        .collect()
}

/// `L_r ≈ ∫_0^1 Q(p) P_{r-1}(p) dp` under the quantile grid's quadrature.
pub fn l_moment_via_quantile<T: Real>(q: &QuantileFunction<T>, basis: &LegendreBasis<T>, r: usize) -> Result<T, DistributionError> {
    if r == 0 {
        return Err(DistributionError::ZeroOrder);
    }
    if r > basis.max_order() + 1 {
        return Err(DistributionError::BasisTooSmall {
            order: r,
            capacity: basis.max_order() + 1,
        });
    }
    if q.p_grid.len() < 11 {
        return Err(DistributionError::GridTooCoarse(q.p_grid.len()));
    }
    let poly: Vec<T> = q.p_grid.points().iter().map(|&p| basis.eval(r - 1, p)).collect();
    Ok(q.p_grid.inner(&q.values, &poly))
}
