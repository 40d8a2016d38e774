//! Evaluation grids with attached quadrature weights.
//!
//! Functional objects in this crate live on finite grids; every integral is a
//! weighted sum over the grid's nodes. The default rule is the trapezoid rule
//! on the nodes, extended by a constant to the ends of the domain so that the
//! weights always sum to the domain length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::MINUTES_PER_DAY;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least {min} points, got {got}")]
    TooFew { min: usize, got: usize },
    #[error("grid points must be strictly increasing")]
    NotIncreasing,
    #[error("grid point {point} lies outside the domain [{lo}, {hi}]")]
    OutsideDomain { point: f64, lo: f64, hi: f64 },
    #[error("degenerate domain [{0}, {1}]")]
    DegenerateDomain(f64, f64),
    #[error("stride {0} does not divide 1440")]
    BadStride(usize),
    #[error("Simpson's rule needs an odd number of points, got {0}")]
    EvenSimpson(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    /// Trapezoid on the nodes plus constant extension to the domain ends.
    Trapezoid,
    Simpson,
    GaussLegendre,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    points: Vec<T>,
    weights: Vec<T>,
    lo: T,
    hi: T,
    rule: QuadratureRule,
}

fn check_domain<T: Real>(lo: T, hi: T) -> Result<(), GridError> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(GridError::DegenerateDomain(lo.to_f64_lossy(), hi.to_f64_lossy()));
    }
    Ok(())
}

fn check_points<T: Real>(points: &[T], lo: T, hi: T) -> Result<(), GridError> {
    if points.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(GridError::NotIncreasing);
    }
    if let Some(&p) = points.iter().find(|&&p| p < lo || p > hi || !p.is_finite()) {
        return Err(GridError::OutsideDomain {
            point: p.to_f64_lossy(),
            lo: lo.to_f64_lossy(),
            hi: hi.to_f64_lossy(),
        });
    }
    Ok(())
}

impl<T: Real> Grid<T> {
    /// Arbitrary increasing nodes inside `[lo, hi]` with extended trapezoid weights.
    pub fn trapezoid(points: Vec<T>, lo: T, hi: T) -> Result<Self, GridError> {
        check_domain(lo, hi)?;
        if points.is_empty() {
            return Err(GridError::TooFew { min: 1, got: 0 });
        }
        check_points(&points, lo, hi)?;
        let m = points.len();
        let mut weights = vec![T::zero(); m];
        for k in 0..m.saturating_sub(1) {
            let h = (points[k + 1] - points[k]) * T::half();
            weights[k] += h;
            weights[k + 1] += h;
        }
        weights[0] += points[0] - lo;
        weights[m - 1] += hi - points[m - 1];
        Ok(Self {
            points,
            weights,
            lo,
            hi,
            rule: QuadratureRule::Trapezoid,
        })
    }

    /// `m` equally spaced quantile levels `k / (m + 1)`, `k = 1..=m`, on (0, 1).
    /// `m = 99` gives 0.01, ..., 0.99.
    pub fn quantile_levels(m: usize) -> Result<Self, GridError> {
        if m == 0 {
            return Err(GridError::TooFew { min: 1, got: 0 });
        }
        let denom = T::from_usize_lossy(m + 1);
        let points = (1..=m).map(|k| T::from_usize_lossy(k) / denom).collect();
        Self::trapezoid(points, T::zero(), T::one())
    }

    /// Time-of-day grid in minutes: `stride / 2 + k * stride` on `[0, 1440]`.
    /// With `stride = 10` the nodes are the centres of the 10-minute epochs.
    pub fn time_of_day(stride: usize) -> Result<Self, GridError> {
        if stride == 0 || MINUTES_PER_DAY % stride != 0 {
            return Err(GridError::BadStride(stride));
        }
        let points = (0..MINUTES_PER_DAY / stride)
            .map(|k| T::from_usize_lossy(k * stride + stride / 2))
            .collect();
        Self::trapezoid(points, T::zero(), T::from_usize_lossy(MINUTES_PER_DAY))
    }

    /// `m` equally spaced nodes including both ends, trapezoid weights.
    pub fn uniform_closed(lo: T, hi: T, m: usize) -> Result<Self, GridError> {
        check_domain(lo, hi)?;
        if m < 2 {
            return Err(GridError::TooFew { min: 2, got: m });
        }
        let step = (hi - lo) / T::from_usize_lossy(m - 1);
        let mut points: Vec<T> = (0..m).map(|k| lo + step * T::from_usize_lossy(k)).collect();
        points[m - 1] = hi;
        Self::trapezoid(points, lo, hi)
    }

    /// Composite Simpson weights on `m` (odd) equally spaced closed nodes.
    pub fn simpson(lo: T, hi: T, m: usize) -> Result<Self, GridError> {
        if m % 2 == 0 {
            return Err(GridError::EvenSimpson(m));
        }
        let mut g = Self::uniform_closed(lo, hi, m.max(3))?;
        let h = (hi - lo) / T::from_usize_lossy(g.len() - 1);
        let third = h / T::lit(3.0);
        let last = g.len() - 1;
        for (k, w) in g.weights.iter_mut().enumerate() {
            *w = if k == 0 || k == last {
                third
            } else if k % 2 == 1 {
                third * T::lit(4.0)
            } else {
                third * T::two()
            };
        }
        g.rule = QuadratureRule::Simpson;
        Ok(g)
    }

    /// Gauss-Legendre nodes and weights mapped to `[lo, hi]`; exact for
    /// polynomials of degree `2m - 1`.
    pub fn gauss_legendre(lo: T, hi: T, m: usize) -> Result<Self, GridError> {
        check_domain(lo, hi)?;
        if m == 0 {
            return Err(GridError::TooFew { min: 1, got: 0 });
        }
        let (nodes, wts) = gauss_legendre_unit(m);
        let half = (hi - lo) * T::half();
        let mid = (hi + lo) * T::half();
        let points = nodes.iter().map(|&x| mid + half * T::lit(x)).collect();
        let weights = wts.iter().map(|&w| half * T::lit(w)).collect();
        Ok(Self {
            points,
            weights,
            lo,
            hi,
            rule: QuadratureRule::GaussLegendre,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn domain(&self) -> (T, T) {
        (self.lo, self.hi)
    }

    pub fn domain_length(&self) -> T {
        self.hi - self.lo
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    /// `Σ w_k f_k`
    pub fn integrate(&self, values: &[T]) -> T {
        assert_eq!(values.len(), self.len(), "integrand length must match grid");
        self.weights.iter().zip(values).map(|(&w, &v)| w * v).sum()
    }

    /// `Σ w_k f_k g_k`
    pub fn inner(&self, f: &[T], g: &[T]) -> T {
        assert_eq!(f.len(), self.len());
        assert_eq!(g.len(), self.len());
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(&w, (&a, &b))| w * a * b)
            .sum()
    }
}

/// Nodes and weights on [-1, 1] by Newton iteration on the Legendre recurrence.
fn gauss_legendre_unit(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..m {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = mf * (z * p0 - p1) / (z * z - 1.0);
            let z_old = z;
            z = z_old - p0 / dp;
            if (z - z_old).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_levels_sum_to_one() {
        let g = Grid::<f64>::quantile_levels(99).unwrap();
        assert_abs_diff_eq!(g.points()[0], 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(g.points()[98], 0.99, epsilon = 1e-15);
        assert_abs_diff_eq!(g.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.weights()[0], 0.015, epsilon = 1e-15);
    }

    #[test]
    fn time_grid_is_epoch_centres_with_equal_weights() {
        let g = Grid::<f64>::time_of_day(10).unwrap();
        assert_eq!(g.len(), 144);
        assert_eq!(g.points()[0], 5.0);
        assert_eq!(g.points()[143], 1435.0);
        assert!(g.weights().iter().all(|&w| (w - 10.0).abs() < 1e-12));
        assert!(Grid::<f64>::time_of_day(7).is_err());
    }

    #[test]
    fn rules_integrate_polynomials() {
        let f = |x: f64| 3.0 * x * x - x + 2.0; // ∫_0^2 = 8 - 2 + 4 = 10
        let s = Grid::simpson(0.0, 2.0, 11).unwrap();
        let vals: Vec<f64> = s.points().iter().map(|&x| f(x)).collect();
        assert_abs_diff_eq!(s.integrate(&vals), 10.0, epsilon = 1e-12);
        let gl = Grid::gauss_legendre(0.0, 2.0, 3).unwrap();
        let vals: Vec<f64> = gl.points().iter().map(|&x| f(x)).collect();
        assert_abs_diff_eq!(gl.integrate(&vals), 10.0, epsilon = 1e-12);
        let t = Grid::uniform_closed(0.0, 2.0, 2001).unwrap();
        let vals: Vec<f64> = t.points().iter().map(|&x| f(x)).collect();
        assert_abs_diff_eq!(t.integrate(&vals), 10.0, epsilon = 1e-5);
    }

    #[test]
    fn rejects_bad_points() {
        assert_eq!(
            Grid::trapezoid(vec![0.2, 0.1], 0.0, 1.0).unwrap_err(),
            GridError::NotIncreasing
        );
        assert!(matches!(
            Grid::trapezoid(vec![0.2, 1.1], 0.0, 1.0),
            Err(GridError::OutsideDomain { .. })
        ));
        assert!(Grid::<f64>::simpson(0.0, 1.0, 4).is_err());
    }
}
