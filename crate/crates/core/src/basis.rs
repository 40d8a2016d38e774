//! Basis evaluation, quadrature projection of functional predictors, design
//! matrix assembly and functional principal components.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::legendre_coefficient;
use crate::grid::Grid;
use crate::linalg::{LinalgError, Mat, SymmetricEigen};
use crate::scalar::Real;
use crate::tdobject::TdSurface;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("cubic B-spline basis needs at least 4 functions, got {0}")]
    TooSmall(usize),
    #[error("basis size must be positive")]
    Empty,
    #[error("degenerate basis domain [{0}, {1}]")]
    DegenerateDomain(f64, f64),
    #[error("point {point} outside basis domain [{lo}, {hi}]")]
    OutsideDomain { point: f64, lo: f64, hi: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("FPCA needs at least 2 curves, got {0}")]
    TooFewCurves(usize),
    #[error("PVE threshold {0} outside (0, 1]")]
    BadPve(f64),
    #[error("design matrix contains non-finite entries (row {row}, column {col})")]
    NonFinite { row: usize, col: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl BasisError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::TooSmall(_) => "basis.too_small",
            Self::Empty => "basis.empty",
            Self::DegenerateDomain(..) => "basis.degenerate_domain",
            Self::OutsideDomain { .. } => "basis.outside_domain",
            Self::Dimension(_) => "basis.dimension",
            Self::TooFewCurves(_) => "basis.too_few_curves",
            Self::BadPve(_) => "basis.bad_pve",
            Self::NonFinite { .. } => "basis.non_finite",
            Self::Linalg(_) => "basis.linalg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// Cubic B-splines on clamped, equally spaced knots.
    BsplineCubic,
    /// Shifted Legendre polynomials `P_0 .. P_{size-1}` mapped onto the domain.
    Legendre,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec<T> {
    pub kind: BasisKind,
    pub size: usize,
    pub lo: T,
    pub hi: T,
}

impl<T: Real> BasisSpec<T> {
    pub fn new(kind: BasisKind, size: usize, lo: T, hi: T) -> Result<Self, BasisError> {
        if !(hi > lo) {
            return Err(BasisError::DegenerateDomain(lo.to_f64_lossy(), hi.to_f64_lossy()));
        }
        match kind {
            BasisKind::BsplineCubic if size < 4 => return Err(BasisError::TooSmall(size)),
            BasisKind::Legendre if size == 0 => return Err(BasisError::Empty),
            _ => {}
        }
        Ok(Self { kind, size, lo, hi })
    }

    pub fn bspline(size: usize, lo: T, hi: T) -> Result<Self, BasisError> {
        Self::new(BasisKind::BsplineCubic, size, lo, hi)
    }

    pub fn legendre(size: usize, lo: T, hi: T) -> Result<Self, BasisError> {
        Self::new(BasisKind::Legendre, size, lo, hi)
    }

    /// The single constant function on `[lo, hi]`.
    pub fn constant(lo: T, hi: T) -> Result<Self, BasisError> {
        Self::legendre(1, lo, hi)
    }

    /// Clamped knot vector (cubic splines only): four copies of each end plus
    /// `size - 4` equally spaced interior knots.
    pub fn knots(&self) -> Vec<T> {
        let interior = self.size.saturating_sub(4);
        let mut k = vec![self.lo; 4];
        let step = (self.hi - self.lo) / T::from_usize_lossy(interior + 1);
        for j in 1..=interior {
            k.push(self.lo + step * T::from_usize_lossy(j));
        }
        k.extend([self.hi; 4]);
        k
    }

    /// Second-difference roughness penalty `DᵀD` on the coefficients.
    pub fn difference_penalty(&self, order: usize) -> Mat<T> {
        let k = self.size;
        if order == 0 || order >= k {
            return Mat::identity(k);
        }
        // rows of the order-th difference operator
        let mut d = Mat::identity(k);
        for _ in 0..order {
            let r = d.rows() - 1;
            let mut next = Mat::zeros(r, k);
            for i in 0..r {
                for j in 0..k {
                    next[(i, j)] = d[(i + 1, j)] - d[(i, j)];
                }
            }
            d = next;
        }
        d.transpose().matmul(&d)
    }
}

/// Values of the `p + 1` nonzero cubic B-splines at `x` and the index of the
/// first one (The NURBS Book, A2.1/A2.2).
fn bspline_nonzero<T: Real>(knots: &[T], size: usize, x: T) -> (usize, [T; 4]) {
    const P: usize = 3;
    let n = size - 1;
    let span = if x >= knots[n + 1] {
        n
    } else {
        let (mut low, mut high) = (P, n + 1);
        let mut mid = (low + high) / 2;
        while x < knots[mid] || x >= knots[mid + 1] {
            if x < knots[mid] {
                high = mid;
            } else {
                low = mid;
            }
            mid = (low + high) / 2;
        }
        mid
    };
    let mut vals = [T::zero(); 4];
    let mut left = [T::zero(); 4];
    let mut right = [T::zero(); 4];
    vals[0] = T::one();
    for j in 1..=P {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = T::zero();
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == T::zero() { T::zero() } else { vals[r] / denom };
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
    }
    (span - P, vals)
}

/// Evaluates every basis function at every point: `|points| x size`.
pub fn eval_basis<T: Real>(spec: &BasisSpec<T>, points: &[T]) -> Result<Mat<T>, BasisError> {
    let tol = (spec.hi - spec.lo) * T::epsilon() * T::lit(16.0);
    if let Some(&x) = points
        .iter()
        .find(|&&x| !(x >= spec.lo - tol && x <= spec.hi + tol))
    {
        return Err(BasisError::OutsideDomain {
            point: x.to_f64_lossy(),
            lo: spec.lo.to_f64_lossy(),
            hi: spec.hi.to_f64_lossy(),
        });
    }
    let mut out = Mat::zeros(points.len(), spec.size);
    match spec.kind {
        BasisKind::BsplineCubic => {
            let knots = spec.knots();
            for (i, &x) in points.iter().enumerate() {
                let x = x.max(spec.lo).min(spec.hi);
                let (first, vals) = bspline_nonzero(&knots, spec.size, x);
                for (j, &v) in vals.iter().enumerate() {
                    out[(i, first + j)] = v;
                }
            }
        }
        BasisKind::Legendre => {
            let coeffs: Vec<Vec<T>> = (0..spec.size)
                .map(|r| (0..=r).map(|k| T::lit(legendre_coefficient(r, k) as f64)).collect())
                .collect();
            let width = spec.hi - spec.lo;
            for (i, &x) in points.iter().enumerate() {
                let u = ((x - spec.lo) / width).max(T::zero()).min(T::one());
                for (r, c) in coeffs.iter().enumerate() {
                    out[(i, r)] = c.iter().rev().fold(T::zero(), |acc, &a| acc * u + a);
                }
            }
        }
    }
    Ok(out)
}

/// Projects functions sampled on a grid onto a basis:
/// `F[i, k] = ∫ X_i(t) B_k(t) dt` by the grid quadrature.
pub fn project_curves<T: Real>(curves: &Mat<T>, grid: &Grid<T>, spec: &BasisSpec<T>) -> Result<Mat<T>, BasisError> {
    if curves.cols() != grid.len() {
        return Err(BasisError::Dimension(format!(
            "curves have {} points, grid has {}",
            curves.cols(),
            grid.len()
        )));
    }
    let b = eval_basis(spec, grid.points())?;
    let wb = Mat::from_fn(b.rows(), b.cols(), |i, k| b[(i, k)] * grid.weights()[i]);
    Ok(curves.matmul(&wb))
}

/// Precomputed tensor-product quadrature for surfaces on fixed grids.
#[derive(Debug, Clone)]
pub struct TensorProjector<T> {
    /// `diag(w_t) B_T`, `|t| x K0`
    wbt: Mat<T>,
    /// `diag(w_p) B_P`, `|p| x L0`
    wbp: Mat<T>,
    pub basis_t: BasisSpec<T>,
    pub basis_p: BasisSpec<T>,
    t_points: Vec<T>,
    p_points: Vec<T>,
}

impl<T: Real> TensorProjector<T> {
    pub fn new(t_grid: &Grid<T>, p_grid: &Grid<T>, basis_t: &BasisSpec<T>, basis_p: &BasisSpec<T>) -> Result<Self, BasisError> {
        let bt = eval_basis(basis_t, t_grid.points())?;
        let bp = eval_basis(basis_p, p_grid.points())?;
        let wbt = Mat::from_fn(bt.rows(), bt.cols(), |i, k| bt[(i, k)] * t_grid.weights()[i]);
        let wbp = Mat::from_fn(bp.rows(), bp.cols(), |j, l| bp[(j, l)] * p_grid.weights()[j]);
        Ok(Self {
            wbt,
            wbp,
            basis_t: basis_t.clone(),
            basis_p: basis_p.clone(),
            t_points: t_grid.points().to_vec(),
            p_points: p_grid.points().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.basis_t.size * self.basis_p.size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row `W` with entry `k * L0 + l` holding `∫∫ Q B_{T,k} B_{P,l}`.
    pub fn project(&self, values: &Mat<T>) -> Result<Vec<T>, BasisError> {
        if values.rows() != self.t_points.len() || values.cols() != self.p_points.len() {
            return Err(BasisError::Dimension(format!(
                "surface is {}x{}, projector expects {}x{}",
                values.rows(),
                values.cols(),
                self.t_points.len(),
                self.p_points.len()
            )));
        }
        let inner = values.matmul(&self.wbp); // |t| x L0
        let w = self.wbt.transpose().matmul(&inner); // K0 x L0
        Ok(w.as_slice().to_vec())
    }

    pub fn project_surface(&self, surface: &TdSurface<T>) -> Result<Vec<T>, BasisError> {
        if surface.t_grid.points() != self.t_points.as_slice() || surface.p_grid.points() != self.p_points.as_slice() {
            return Err(BasisError::Dimension("surface grids differ from projector grids".into()));
        }
        self.project(&surface.values)
    }
}

/// `W_i` for one surface; see [`TensorProjector`] when projecting many.
pub fn tensor_design_row<T: Real>(surface: &TdSurface<T>, basis_t: &BasisSpec<T>, basis_p: &BasisSpec<T>) -> Result<Vec<T>, BasisError> {
    TensorProjector::new(&surface.t_grid, &surface.p_grid, basis_t, basis_p)?.project(&surface.values)
}

/// Evaluates `Σ θ_{k,l} B_{T,k}(t) B_{P,l}(p)` on the grids, `|t| x |p|`.
pub fn assemble_surface<T: Real>(theta: &[T], basis_t: &BasisSpec<T>, basis_p: &BasisSpec<T>, t_points: &[T], p_points: &[T]) -> Result<Mat<T>, BasisError> {
    let k0 = basis_t.size;
    let l0 = basis_p.size;
    if theta.len() != k0 * l0 {
        return Err(BasisError::Dimension(format!("theta has {} entries, expected {}", theta.len(), k0 * l0)));
    }
    let bt = eval_basis(basis_t, t_points)?;
    let bp = eval_basis(basis_p, p_points)?;
    let th = Mat::from_vec(k0, l0, theta.to_vec());
    Ok(bt.matmul(&th).matmul(&bp.transpose()))
}

/// Evaluates `Σ θ_k B_k(t)` on the points.
pub fn assemble_curve<T: Real>(theta: &[T], basis: &BasisSpec<T>, points: &[T]) -> Result<Vec<T>, BasisError> {
    if theta.len() != basis.size {
        return Err(BasisError::Dimension(format!("theta has {} entries, expected {}", theta.len(), basis.size)));
    }
    Ok(eval_basis(basis, points)?.matvec(theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Covariates,
    Functional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub start: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Subject-by-feature matrix with named column blocks. The intercept is not
/// stored; fitting routines add it.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    pub x: Mat<T>,
    pub blocks: Vec<Block>,
    pub subject_ids: Vec<String>,
}

impl<T: Real> DesignMatrix<T> {
    pub fn new(subject_ids: Vec<String>) -> Self {
        Self {
            x: Mat::zeros(subject_ids.len(), 0),
            blocks: Vec::new(),
            subject_ids,
        }
    }

    /// Appends a block of columns; rejects row-count mismatch and non-finite entries.
    pub fn push_block(mut self, name: impl Into<String>, kind: BlockKind, cols: Mat<T>) -> Result<Self, BasisError> {
        if cols.rows() != self.x.rows() {
            return Err(BasisError::Dimension(format!(
                "block has {} rows, design has {}",
                cols.rows(),
                self.x.rows()
            )));
        }
        for i in 0..cols.rows() {
            if let Some(j) = cols.row(i).iter().position(|v| !v.is_finite()) {
                return Err(BasisError::NonFinite {
                    row: i,
                    col: self.x.cols() + j,
                });
            }
        }
        self.blocks.push(Block {
            name: name.into(),
            kind,
            start: self.x.cols(),
            len: cols.cols(),
        });
        self.x = self.x.hcat(&cols);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.cols()
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Column mask that is true on functional blocks.
    pub fn functional_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_cols()];
        for b in self.blocks.iter().filter(|b| b.kind == BlockKind::Functional) {
            for j in b.range() {
                mask[j] = true;
            }
        }
        mask
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            blocks: self.blocks.clone(),
            subject_ids: rows.iter().map(|&r| self.subject_ids[r].clone()).collect(),
        }
    }
}

/// Functional principal components of curves sampled on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FpcaResult<T> {
    pub mean: Vec<T>,
    /// `n_r x |grid|`, orthonormal under the grid quadrature.
    pub eigenfunctions: Mat<T>,
    /// All eigenvalues, descending, clipped at zero.
    pub eigenvalues: Vec<T>,
    /// `subjects x n_r`
    pub scores: Mat<T>,
    pub pve_threshold: f64,
    pub retained: usize,
    /// True when every curve is identical (no variance to decompose).
    pub degenerate: bool,
    weights: Vec<T>,
}

impl<T: Real> FpcaResult<T> {
    /// Scores of new curves against the stored mean and eigenfunctions.
    pub fn project(&self, curves: &Mat<T>) -> Result<Mat<T>, BasisError> {
        if curves.cols() != self.mean.len() {
            return Err(BasisError::Dimension(format!(
                "curves have {} points, FPCA grid has {}",
                curves.cols(),
                self.mean.len()
            )));
        }
        let mut out = Mat::zeros(curves.rows(), self.retained);
        for i in 0..curves.rows() {
            let c = curves.row(i);
            for s in 0..self.retained {
                let psi = self.eigenfunctions.row(s);
                let mut acc = T::zero();
                for t in 0..c.len() {
                    acc += self.weights[t] * (c[t] - self.mean[t]) * psi[t];
                }
                out[(i, s)] = acc;
            }
        }
        Ok(out)
    }

    /// Cumulative proportion of variance explained by the retained components.
    pub fn retained_pve(&self) -> f64 {
        let total: T = self.eigenvalues.iter().copied().sum();
        if total <= T::zero() {
            return 1.0;
        }
        let kept: T = self.eigenvalues.iter().take(self.retained).copied().sum();
        (kept / total).to_f64_lossy()
    }

    /// Keeps at most `k` leading components.
    pub fn truncate(&mut self, k: usize) {
        if k >= self.retained {
            return;
        }
        self.retained = k;
        self.eigenfunctions = Mat::from_fn(k, self.eigenfunctions.cols(), |i, j| self.eigenfunctions[(i, j)]);
        self.scores = Mat::from_fn(self.scores.rows(), k, |i, j| self.scores[(i, j)]);
    }

    /// `Σ_s β_s ψ_s(t)`
    pub fn curve_from_coefficients(&self, beta: &[T]) -> Vec<T> {
        let m = self.mean.len();
        let mut out = vec![T::zero(); m];
        for (s, &b) in beta.iter().enumerate().take(self.retained) {
            for (o, &psi) in out.iter_mut().zip(self.eigenfunctions.row(s)) {
                *o += b * psi;
            }
        }
        out
    }
}

/// Eigen-decomposition of the quadrature-weighted sample covariance. Keeps the
/// smallest number of components whose cumulative PVE reaches `pve`.
pub fn fpca<T: Real>(curves: &Mat<T>, grid: &Grid<T>, pve: f64) -> Result<FpcaResult<T>, BasisError> {
    let n = curves.rows();
    let m = curves.cols();
    if n < 2 {
        return Err(BasisError::TooFewCurves(n));
    }
    if !(pve > 0.0 && pve <= 1.0) {
        return Err(BasisError::BadPve(pve));
    }
    if m != grid.len() {
        return Err(BasisError::Dimension(format!("curves have {m} points, grid has {}", grid.len())));
    }
    let w = grid.weights().to_vec();
    let nf = T::from_usize_lossy(n);
    let mean: Vec<T> = (0..m)
        .map(|t| (0..n).map(|i| curves[(i, t)]).sum::<T>() / nf)
        .collect();
    let centred = Mat::from_fn(n, m, |i, t| curves[(i, t)] - mean[t]);
    let denom = T::from_usize_lossy(n - 1);

    // eigenpairs (lambda, psi) with psi on the grid
    let mut pairs: Vec<(T, Vec<T>)> = Vec::new();
    if n <= m {
        // dual: G = C W Cᵀ / (n-1); psi = Cᵀ v / sqrt((n-1) λ)
        let g = Mat::from_fn(n, n, |a, b| {
            let (ra, rb) = (centred.row(a), centred.row(b));
            (0..m).map(|t| ra[t] * w[t] * rb[t]).sum::<T>() / denom
        });
        let eig = SymmetricEigen::new(&g)?;
        let top = eig.values.first().copied().unwrap_or(T::zero()).max(T::zero());
        for (k, &lam) in eig.values.iter().enumerate() {
            let lam = lam.max(T::zero());
            if lam <= top * T::lit(1e-12) || lam == T::zero() {
                pairs.push((T::zero(), vec![]));
                continue;
            }
            let scale = T::one() / (denom * lam).sqrt();
            let psi: Vec<T> = (0..m)
                .map(|t| (0..n).map(|i| centred[(i, t)] * eig.vectors[(i, k)]).sum::<T>() * scale)
                .collect();
            pairs.push((lam, psi));
        }
    } else {
        // primal: W^{1/2} K W^{1/2} u = λ u; psi = W^{-1/2} u
        let sw: Vec<T> = w.iter().map(|x| x.sqrt()).collect();
        let a = Mat::from_fn(m, m, |s, t| {
            let k: T = (0..n).map(|i| centred[(i, s)] * centred[(i, t)]).sum::<T>() / denom;
            sw[s] * k * sw[t]
        });
        let eig = SymmetricEigen::new(&a)?;
        let top = eig.values.first().copied().unwrap_or(T::zero()).max(T::zero());
        for (k, &lam) in eig.values.iter().enumerate() {
            let lam = lam.max(T::zero());
            if lam <= top * T::lit(1e-12) || lam == T::zero() {
                pairs.push((T::zero(), vec![]));
                continue;
            }
            let psi: Vec<T> = (0..m).map(|t| eig.vectors[(t, k)] / sw[t]).collect();
            pairs.push((lam, psi));
        }
    }

    let eigenvalues: Vec<T> = pairs.iter().map(|p| p.0).collect();
    let total: T = eigenvalues.iter().copied().sum();
    let positive = pairs.iter().take_while(|p| p.0 > T::zero()).count();
    let degenerate = positive == 0 || total <= T::zero();
    let retained = if degenerate {
        log::warn!("FPCA: all curves identical; no components retained");
        0
    } else {
        let mut cum = T::zero();
        let mut r = positive;
        for (k, p) in pairs.iter().take(positive).enumerate() {
            cum += p.0;
            if (cum / total).to_f64_lossy() >= pve - 1e-12 {
                r = k + 1;
                break;
            }
        }
        r
    };

    let mut eigenfunctions = Mat::zeros(retained, m);
    for s in 0..retained {
        let psi = &pairs[s].1;
        let mut best = 0;
        for t in 1..m {
            if psi[t].abs() > psi[best].abs() {
                best = t;
            }
        }
        let sign = if psi[best] < T::zero() { -T::one() } else { T::one() };
        for t in 0..m {
            eigenfunctions[(s, t)] = sign * psi[t];
        }
    }
    let mut result = FpcaResult {
        mean,
        eigenfunctions,
        eigenvalues: if degenerate { vec![T::zero()] } else { eigenvalues },
        scores: Mat::zeros(n, retained),
        pve_threshold: pve,
        retained,
        degenerate,
        weights: w,
    };
    result.scores = result.project(curves)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tdobject::TdSurface;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn surface_from(t_grid: Grid<f64>, p_grid: Grid<f64>, f: impl Fn(f64, f64) -> f64) -> TdSurface<f64> {
        let values = Mat::from_fn(t_grid.len(), p_grid.len(), |i, j| f(t_grid.points()[i], p_grid.points()[j]));
        TdSurface {
            subject_id: "s".into(),
            pooled_counts: vec![1; t_grid.len()],
            t_grid,
            p_grid,
            values,
            half_width: 5,
        }
    }

    #[test]
    fn spec_validation() {
        assert_eq!(BasisSpec::bspline(3, 0.0, 1.0).unwrap_err(), BasisError::TooSmall(3));
        assert!(BasisSpec::bspline(4, 1.0, 1.0).is_err());
        assert!(BasisSpec::<f64>::legendre(0, 0.0, 1.0).is_err());
    }

    #[test]
    fn bspline_partition_of_unity_and_endpoint() {
        let spec = BasisSpec::bspline(12, 0.0, 1440.0).unwrap();
        let pts: Vec<f64> = (0..=1440).map(|k| k as f64).collect();
        let b = eval_basis(&spec, &pts).unwrap();
        for i in 0..b.rows() {
            assert_abs_diff_eq!(b.row(i).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(b.row(i).iter().all(|&v| v >= -1e-15));
        }
        let four = BasisSpec::bspline(4, 0.0, 1.0).unwrap();
        let b = eval_basis(&four, &[0.0, 1.0, 0.5]).unwrap();
        assert_eq!(b.row(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(b.row(1), &[0.0, 0.0, 0.0, 1.0]);
        // Bernstein cubic at 1/2
        for (v, e) in b.row(2).iter().zip([0.125, 0.375, 0.375, 0.125]) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-15);
        }
        assert!(matches!(
            eval_basis(&four, &[1.5]),
            Err(BasisError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn bspline_matches_recursive_definition() {
        // Plain Cox-de Boor recursion as an independent check.
        fn cox(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
            if p == 0 {
                return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
            }
            let mut v = 0.0;
            let d1 = knots[i + p] - knots[i];
            if d1 > 0.0 {
                v += (x - knots[i]) / d1 * cox(knots, i, p - 1, x);
            }
            let d2 = knots[i + p + 1] - knots[i + 1];
            if d2 > 0.0 {
                v += (knots[i + p + 1] - x) / d2 * cox(knots, i + 1, p - 1, x);
            }
            v
        }
        let spec = BasisSpec::bspline(9, -1.0, 2.0).unwrap();
        let knots = spec.knots();
        let pts = [-1.0, -0.3, 0.0, 0.41, 1.2, 1.99];
        let b = eval_basis(&spec, &pts).unwrap();
        for (i, &x) in pts.iter().enumerate() {
            for k in 0..9 {
                assert_abs_diff_eq!(b[(i, k)], cox(&knots, k, 3, x), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn legendre_spec_first_column_is_one() {
        let spec = BasisSpec::legendre(4, 0.0, 1440.0).unwrap();
        let b = eval_basis(&spec, &[0.0, 360.0, 720.0, 1440.0]).unwrap();
        for i in 0..4 {
            assert_eq!(b[(i, 0)], 1.0);
        }
        assert_abs_diff_eq!(b[(2, 1)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[(3, 3)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tensor_row_examples() {
        let tg = Grid::time_of_day(10).unwrap();
        let pg = Grid::quantile_levels(99).unwrap();
        let bt = BasisSpec::bspline(6, 0.0, 1440.0).unwrap();
        let bp = BasisSpec::legendre(4, 0.0, 1.0).unwrap();

        let zero = surface_from(tg.clone(), pg.clone(), |_, _| 0.0);
        assert!(tensor_design_row(&zero, &bt, &bp).unwrap().iter().all(|&v| v == 0.0));

        // Constant surface: P_1 and P_3 vanish by symmetry on any symmetric grid,
        // P_2 only under a polynomial-exact rule.
        let one = surface_from(tg.clone(), pg.clone(), |_, _| 1.0);
        let w = tensor_design_row(&one, &bt, &bp).unwrap();
        for k in 0..6 {
            assert_abs_diff_eq!(w[k * 4 + 1], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(w[k * 4 + 3], 0.0, epsilon = 1e-10);
            assert!(w[k * 4 + 2].abs() < 1e-3 * w[k * 4].abs());
        }
        let gl = Grid::gauss_legendre(0.0, 1.0, 20).unwrap();
        let one_gl = surface_from(tg.clone(), gl, |_, _| 1.0);
        let w = tensor_design_row(&one_gl, &bt, &bp).unwrap();
        for k in 0..6 {
            for l in 1..4 {
                assert_abs_diff_eq!(w[k * 4 + l], 0.0, epsilon = 1e-10);
            }
        }

        // Q(t, p) = p with a constant time basis: ∫p dp = 1/2, ∫p(2p-1) dp = 1/6
        let gl = Grid::gauss_legendre(0.0, 1.0, 10).unwrap();
        let lin = surface_from(tg.clone(), gl, |_, p| p);
        let bt1 = BasisSpec::constant(0.0, 1440.0).unwrap();
        let w = tensor_design_row(&lin, &bt1, &bp).unwrap();
        assert_abs_diff_eq!(w[0], 0.5 * 1440.0, epsilon = 1e-9);
        assert_abs_diff_eq!(w[1], 1440.0 / 6.0, epsilon = 1e-9);
        // default grid agrees up to quadrature error
        let lin = surface_from(tg, pg, |_, p| p);
        let w = tensor_design_row(&lin, &bt1, &bp).unwrap();
        assert!((w[0] / 1440.0 - 0.5).abs() < 1e-12);
        assert!((w[1] / 1440.0 - 1.0 / 6.0).abs() < 1e-3);
    }

    #[test]
    fn tensor_row_quadrature_converges() {
        let f = |t: f64, p: f64| (t / 1440.0 * 6.0).sin() + p * p + 0.3 * p * (t / 300.0).cos();
        let bt = BasisSpec::bspline(8, 0.0, 1440.0).unwrap();
        let bp = BasisSpec::bspline(6, 0.0, 1.0).unwrap();
        let coarse = surface_from(
            Grid::uniform_closed(0.0, 1440.0, 721).unwrap(),
            Grid::uniform_closed(0.0, 1.0, 501).unwrap(),
            f,
        );
        let fine = surface_from(
            Grid::uniform_closed(0.0, 1440.0, 1441).unwrap(),
            Grid::uniform_closed(0.0, 1.0, 1001).unwrap(),
            f,
        );
        let a = tensor_design_row(&coarse, &bt, &bp).unwrap();
        let b = tensor_design_row(&fine, &bt, &bp).unwrap();
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-4 * scale);
        }
    }

    #[test]
    fn surface_assembly_reconstructs() {
        let bt = BasisSpec::bspline(5, 0.0, 1440.0).unwrap();
        let bp = BasisSpec::bspline(4, 0.0, 1.0).unwrap();
        let theta: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let tp = [10.0, 700.0];
        let pp = [0.2, 0.9];
        let s = assemble_surface(&theta, &bt, &bp, &tp, &pp).unwrap();
        let bt_v = eval_basis(&bt, &tp).unwrap();
        let bp_v = eval_basis(&bp, &pp).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..5 {
                    for l in 0..4 {
                        acc += theta[k * 4 + l] * bt_v[(i, k)] * bp_v[(j, l)];
                    }
                }
                assert_abs_diff_eq!(s[(i, j)], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn difference_penalty_nullspace() {
        let spec = BasisSpec::<f64>::bspline(7, 0.0, 1.0).unwrap();
        let p = spec.difference_penalty(2);
        let ones = vec![1.0; 7];
        let lin: Vec<f64> = (0..7).map(|k| k as f64).collect();
        assert!(p.matvec(&ones).iter().all(|v| v.abs() < 1e-12));
        assert!(p.matvec(&lin).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn design_matrix_blocks() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let d = DesignMatrix::new(ids)
            .push_block("z", BlockKind::Covariates, Mat::from_rows(&[vec![1.0], vec![2.0]]))
            .unwrap()
            .push_block("w", BlockKind::Functional, Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]))
            .unwrap();
        assert_eq!(d.functional_mask(), vec![false, true, true]);
        assert_eq!(d.block("w").unwrap().range(), 1..3);
        let bad = DesignMatrix::new(vec!["a".into()]).push_block("x", BlockKind::Functional, Mat::from_rows(&[vec![f64::NAN]]));
        assert!(matches!(bad, Err(BasisError::NonFinite { row: 0, col: 0 })));
    }

    #[test]
    fn fpca_rank_one() {
        let grid = Grid::<f64>::time_of_day(60).unwrap();
        let f: Vec<f64> = grid.points().iter().map(|t| (t / 200.0).sin() + 0.5).collect();
        let cs = [0.3, -1.2, 2.0, 0.7, 1.1];
        let curves = Mat::from_fn(5, grid.len(), |i, t| cs[i] * f[t]);
        let res = fpca(&curves, &grid, 0.99).unwrap();
        assert_eq!(res.retained, 1);
        assert!(res.eigenvalues[1] <= 1e-9 * res.eigenvalues[0]);
        // first eigenfunction proportional to f
        let psi = res.eigenfunctions.row(0);
        let ratio = psi[0] / f[0];
        for t in 0..grid.len() {
            assert_abs_diff_eq!(psi[t], ratio * f[t], epsilon = 1e-9);
        }
        assert_abs_diff_eq!(grid.inner(psi, psi), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn fpca_full_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (n, m) in [(8usize, 24usize), (30, 12)] {
            let grid = Grid::trapezoid((0..m).map(|k| k as f64 + 0.5).collect(), 0.0, m as f64).unwrap();
            let curves = Mat::from_fn(n, m, |_, _| rng.random::<f64>());
            let res = fpca(&curves, &grid, 1.0).unwrap();
            for a in 0..res.retained {
                for b in 0..res.retained {
                    let ip = grid.inner(res.eigenfunctions.row(a), res.eigenfunctions.row(b));
                    assert_abs_diff_eq!(ip, (a == b) as u8 as f64, epsilon = 1e-6);
                }
            }
            for w in res.eigenvalues.windows(2) {
                assert!(w[0] >= w[1] && w[1] >= 0.0);
            }
            for i in 0..n {
                let rec = res.curve_from_coefficients(res.scores.row(i));
                for t in 0..m {
                    assert_abs_diff_eq!(rec[t], curves[(i, t)] - res.mean[t], epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn fpca_two_subject_toy() {
        // unit quadrature weights on a 2-point grid
        let grid = Grid::<f64>::trapezoid(vec![0.5, 1.5], 0.0, 2.0).unwrap();
        let curves = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let res = fpca(&curves, &grid, 1.0).unwrap();
        assert_eq!(res.retained, 1);
        assert_abs_diff_eq!(res.eigenvalues[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(res.eigenvalues[1], 0.0, epsilon = 1e-12);
        let half_root2 = 0.5 * 2f64.sqrt();
        assert_abs_diff_eq!(res.scores[(0, 0)].abs(), half_root2, epsilon = 1e-12);
        assert_abs_diff_eq!(res.scores[(0, 0)], -res.scores[(1, 0)], epsilon = 1e-12);
    }

    #[test]
    fn fpca_degenerate_and_errors() {
        let grid = Grid::time_of_day(720).unwrap();
        let same = Mat::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        let res = fpca(&same, &grid, 0.99).unwrap();
        assert!(res.degenerate);
        assert_eq!(res.retained, 0);
        assert_eq!(res.eigenvalues, vec![0.0]);
        assert_eq!(fpca(&Mat::from_rows(&[vec![1.0, 2.0]]), &grid, 0.9).unwrap_err(), BasisError::TooFewCurves(1));
        assert_eq!(fpca(&same, &grid, 0.0).unwrap_err(), BasisError::BadPve(0.0));
    }

    #[test]
    fn fpca_scores_ignore_common_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let grid = Grid::<f64>::time_of_day(60).unwrap();
        let curves = Mat::from_fn(10, grid.len(), |_, _| rng.random::<f64>());
        let shift: Vec<f64> = grid.points().iter().map(|t| (t / 100.0).cos() * 3.0).collect();
        let shifted = Mat::from_fn(10, grid.len(), |i, t| curves[(i, t)] + shift[t]);
        let a = fpca(&curves, &grid, 0.95).unwrap();
        let b = fpca(&shifted, &grid, 0.95).unwrap();
        assert_eq!(a.retained, b.retained);
        for (x, y) in a.scores.as_slice().iter().zip(b.scores.as_slice()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-8);
        }
    }

    #[test]
    fn constant_bases_recover_scaled_mean() {
        let tg = Grid::time_of_day(10).unwrap();
        let pg = Grid::quantile_levels(99).unwrap();
        let s = surface_from(tg, pg, |t, p| 2.0 + (t / 300.0).sin() + p);
        let bt = BasisSpec::constant(0.0, 1440.0).unwrap();
        let bp = BasisSpec::constant(0.0, 1.0).unwrap();
        let w = tensor_design_row(&s, &bt, &bp).unwrap();
        assert_eq!(w.len(), 1);
        assert_abs_diff_eq!(w[0], s.integral(), epsilon = 1e-9);
    }
}
