//! Dense matrix primitives and subspace arithmetic.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Subspaces always carry
//! an orthonormal basis, and every rank decision goes through a singular value
//! cutoff of the form `rank_tol * max(σ_max, scale)`, where `scale` is the size
//! of the operator that produced the matrix (zero for a purely relative test).

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Tolerance set shared by every numerical decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative singular value cutoff for rank decisions.
    pub rank_tol: f64,
    /// Bound on matrix-equation residuals.
    pub residual_tol: f64,
    /// Slack allowed below zero for eigenvalues of PSD matrices.
    pub psd_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank_tol: 1e-9,
            residual_tol: 1e-7,
            psd_tol: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn new(rank_tol: f64, residual_tol: f64, psd_tol: f64) -> Result<Self> {
        let t = Tolerances {
            rank_tol,
            residual_tol,
            psd_tol,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rank_tol", self.rank_tol),
            ("residual_tol", self.residual_tol),
            ("psd_tol", self.psd_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidOption(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Default projection residual used when comparing subspaces.
pub const SUBSPACE_TOL: f64 = 1e-8;

pub fn ensure_finite(m: &Matrix, name: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name))
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m` (`+inf` for an empty matrix).
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    svd(m).s.iter().cloned().fold(0.0, f64::max)
}

/// Thin singular value decomposition `m = u diag(s) vᵀ`, `s` descending.
#[derive(Debug, Clone)]
pub(crate) struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    fn is_accurate(&self, m: &Matrix) -> bool {
        let k = self.s.len();
        let eye = Matrix::identity(k, k);
        let rebuilt = &self.u * Matrix::from_diagonal(&DVector::from_column_slice(&self.s)) * self.v.transpose();
        let slack = 1e3 * f64::EPSILON * (1.0 + (m.nrows() + m.ncols()) as f64);
        (rebuilt - m).norm() <= slack * m.norm().max(f64::MIN_POSITIVE)
            && (self.u.transpose() * &self.u - &eye).amax() <= slack
            && (self.v.transpose() * &self.v - &eye).amax() <= slack
    }
}

/// SVD from nalgebra, validated; falls back to one-sided Jacobi when the
/// factors do not reproduce `m` (nalgebra's bidiagonal QR occasionally
/// returns wrong vectors for rank-deficient input).
pub(crate) fn svd(m: &Matrix) -> Svd {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return Svd {
            u: Matrix::zeros(m.nrows(), 0),
            s: Vec::new(),
            v: Matrix::zeros(m.ncols(), 0),
        };
    }
    let f = SVD::new_unordered(m.clone(), true, true);
    let (u, vt) = (f.u.expect("requested"), f.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| f.singular_values[j].total_cmp(&f.singular_values[i]));
    let cand = Svd {
        u: select_columns(&u, &order),
        s: order.iter().map(|&i| f.singular_values[i]).collect(),
        v: select_columns(&vt.transpose(), &order),
    };
    if cand.is_accurate(m) {
        return cand;
    }
    debug!("library SVD inaccurate on a {}×{} matrix; using Jacobi", m.nrows(), m.ncols());
    jacobi_svd(m)
}

fn jacobi_svd(m: &Matrix) -> Svd {
    let (rows, cols) = m.shape();
    if rows < cols {
        let t = jacobi_svd(&m.transpose());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let mut a = m.clone();
    let mut v = Matrix::identity(cols, cols);
    for _ in 0..80 {
        let mut rotated = false;
        for i in 0..cols {
            for j in i + 1..cols {
                let alpha = a.column(i).norm_squared();
                let beta = a.column(j).norm_squared();
                let gamma = a.column(i).dot(&a.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for r in 0..mat.nrows() {
                        let (x, y) = (mat[(r, i)], mat[(r, j)]);
                        mat[(r, i)] = c * x - s * y;
                        mat[(r, j)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..cols).map(|i| a.column(i).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let mut u = Matrix::zeros(rows, cols);
    let mut filled = 0;
    for &i in &order {
        if norms[i] > f64::EPSILON * smax * rows as f64 && norms[i] > 0.0 {
            u.set_column(filled, &(a.column(i) / norms[i]));
            filled += 1;
        }
    }
    // Complete the left basis for the negligible columns.
    let mut e = 0;
    while filled < cols {
        let mut w = Vector::zeros(rows);
        w[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for k in 0..filled {
                let d = u.column(k).dot(&w);
                w -= u.column(k) * d;
            }
        }
        if w.norm() > 0.5 {
            u.set_column(filled, &w.normalize());
            filled += 1;
        }
    }
    Svd {
        u,
        s: order.iter().map(|&i| norms[i]).collect(),
        v: select_columns(&v, &order),
    }
}

fn cutoff(sigma_max: f64, scale: f64, tol: &Tolerances) -> f64 {
    tol.rank_tol * sigma_max.max(scale)
}

/// Orthonormal basis of `im m`, treating singular values at or below
/// `rank_tol * max(σ_max, scale)` as zero.
pub(crate) fn image_scaled(m: &Matrix, scale: f64, tol: &Tolerances) -> Matrix {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Matrix::zeros(rows, 0);
    }
    let Svd { u, s, .. } = svd(m);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let cut = cutoff(smax, scale, tol);
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > cut && s[i] > 0.0).collect();
    select_columns(&u, &keep)
}

/// Orthonormal basis of `ker m` with the same cutoff rule as [`image_scaled`].
pub(crate) fn kernel_scaled(m: &Matrix, scale: f64, tol: &Tolerances) -> Matrix {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Matrix::zeros(0, 0);
    }
    if rows == 0 {
        return Matrix::identity(cols, cols);
    }
    // Pad with zero rows so that the SVD returns a complete right basis.
    let padded = if rows < cols {
        let mut p = Matrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let Svd { v, s, .. } = svd(&padded);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let cut = cutoff(smax, scale, tol);
    let keep: Vec<usize> = (0..cols).filter(|&i| i >= s.len() || s[i] <= cut).collect();
    select_columns(&v, &keep)
}

fn select_columns(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), idx.len());
    for (j, &i) in idx.iter().enumerate() {
        out.set_column(j, &m.column(i));
    }
    out
}

/// Moore–Penrose pseudo-inverse via the SVD.
pub fn pseudo_inverse(m: &Matrix, tol: &Tolerances) -> Matrix {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Matrix::zeros(cols, rows);
    }
    let Svd { u, s, v } = svd(m);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let cut = cutoff(smax, 0.0, tol);
    let mut out = Matrix::zeros(cols, rows);
    for (i, &si) in s.iter().enumerate() {
        if si > cut && si > 0.0 {
            out += v.column(i) * u.column(i).transpose() / si;
        }
    }
    out
}

/// A linear subspace of `R^ambient`, stored through an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    ambient: usize,
    basis: Matrix,
}

impl Subspace {
    pub fn zero(ambient: usize) -> Self {
        Subspace {
            ambient,
            basis: Matrix::zeros(ambient, 0),
        }
    }

    pub fn full(ambient: usize) -> Self {
        Subspace {
            ambient,
            basis: Matrix::identity(ambient, ambient),
        }
    }

    /// Wraps a basis that is already orthonormal.
    pub fn from_orthonormal(basis: Matrix) -> Result<Self> {
        let k = basis.ncols();
        let gram = basis.transpose() * &basis;
        let err = (gram - Matrix::identity(k, k)).amax();
        if err > 1e-10 {
            return Err(Error::Inconsistent(format!(
                "basis is not orthonormal (deviation {err:.3e})"
            )));
        }
        Ok(Subspace {
            ambient: basis.nrows(),
            basis,
        })
    }

    /// Span of the columns of `m` under a relative rank cutoff.
    pub fn span(m: &Matrix, tol: &Tolerances) -> Self {
        orthonormal_image(m, tol)
    }

    pub(crate) fn from_basis_unchecked(basis: Matrix) -> Self {
        Subspace {
            ambient: basis.nrows(),
            basis,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn is_zero(&self) -> bool {
        self.dim() == 0
    }

    pub fn is_full(&self) -> bool {
        self.dim() == self.ambient
    }

    /// Orthogonal projector onto the subspace.
    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }

    /// Largest distance from the unit ball of `im m` (columns of `m` scaled to
    /// unit length) to this subspace.
    pub fn residual_of(&self, m: &Matrix) -> f64 {
        let mut worst: f64 = 0.0;
        for col in m.column_iter() {
            let norm = col.norm();
            if norm == 0.0 {
                continue;
            }
            let proj = &self.basis * (self.basis.transpose() * col);
            worst = worst.max((col - proj).norm() / norm);
        }
        worst
    }

    /// Projection residual of `other` onto `self`: zero iff `other ⊆ self`.
    pub fn containment_residual(&self, other: &Subspace) -> f64 {
        assert_eq!(self.ambient, other.ambient, "ambient dimension mismatch");
        if other.dim() == 0 {
            return 0.0;
        }
        let r = other.basis() - self.projector() * other.basis();
        spectral_norm(&r)
    }

    pub fn contains(&self, other: &Subspace, eps: f64) -> bool {
        self.containment_residual(other) <= eps
    }

    /// Symmetric distance: the larger of both containment residuals.
    pub fn distance(&self, other: &Subspace) -> f64 {
        self.containment_residual(other)
            .max(other.containment_residual(self))
    }

    pub fn same_as(&self, other: &Subspace, eps: f64) -> bool {
        self.ambient == other.ambient && self.distance(other) <= eps
    }

    /// Orthogonal complement in the ambient space.
    pub fn complement(&self) -> Subspace {
        let n = self.ambient;
        if self.dim() == 0 {
            return Subspace::full(n);
        }
        if self.dim() == n {
            return Subspace::zero(n);
        }
        // Eigenvalues of I - PPᵀ are exactly 0 or 1, so the split is clean.
        let comp = Matrix::identity(n, n) - self.projector();
        let eig = SymmetricEigen::new(symmetrize(&comp));
        let idx: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        Subspace::from_basis_unchecked(select_columns(&eig.eigenvectors, &idx))
    }

    /// Image of the subspace under `m`, with the cutoff scaled by `‖m‖`.
    pub fn mapped(&self, m: &Matrix, tol: &Tolerances) -> Subspace {
        assert_eq!(m.ncols(), self.ambient, "map does not act on this space");
        if self.dim() == 0 {
            return Subspace::zero(m.nrows());
        }
        let scale = spectral_norm(m);
        Subspace::from_basis_unchecked(image_scaled(&(m * &self.basis), scale, tol))
    }
}

pub fn orthonormal_image(m: &Matrix, tol: &Tolerances) -> Subspace {
    Subspace::from_basis_unchecked(image_scaled(m, 0.0, tol))
}

pub fn orthonormal_kernel(m: &Matrix, tol: &Tolerances) -> Subspace {
    Subspace::from_basis_unchecked(kernel_scaled(m, 0.0, tol))
}

fn check_ambient(u: &Subspace, w: &Subspace) -> Result<()> {
    if u.ambient != w.ambient {
        return Err(Error::Dimension(format!(
            "subspaces live in R^{} and R^{}",
            u.ambient, w.ambient
        )));
    }
    Ok(())
}

pub fn subspace_sum(u: &Subspace, w: &Subspace, tol: &Tolerances) -> Result<Subspace> {
    check_ambient(u, w)?;
    let n = u.ambient;
    let mut stacked = Matrix::zeros(n, u.dim() + w.dim());
    stacked.view_mut((0, 0), (n, u.dim())).copy_from(&u.basis);
    stacked.view_mut((0, u.dim()), (n, w.dim())).copy_from(&w.basis);
    Ok(Subspace::from_basis_unchecked(image_scaled(&stacked, 1.0, tol)))
}

pub fn subspace_intersection(u: &Subspace, w: &Subspace, tol: &Tolerances) -> Result<Subspace> {
    check_ambient(u, w)?;
    let n = u.ambient;
    if u.dim() == 0 || w.dim() == 0 {
        return Ok(Subspace::zero(n));
    }
    // x = U a = W b  <=>  [U  -W] (a, b) = 0
    let (k, l) = (u.dim(), w.dim());
    let mut stacked = Matrix::zeros(n, k + l);
    stacked.view_mut((0, 0), (n, k)).copy_from(&u.basis);
    stacked.view_mut((0, k), (n, l)).copy_from(&(-&w.basis));
    let coeffs = kernel_scaled(&stacked, 1.0, tol);
    if coeffs.ncols() == 0 {
        return Ok(Subspace::zero(n));
    }
    let from_u = &u.basis * coeffs.rows(0, k);
    let from_w = &w.basis * coeffs.rows(k, l);
    let avg = (from_u + from_w) * 0.5;
    Ok(Subspace::from_basis_unchecked(image_scaled(&avg, 1.0, tol)))
}

/// `{x : m x ∈ w}`.
pub fn subspace_preimage(m: &Matrix, w: &Subspace, tol: &Tolerances) -> Result<Subspace> {
    if m.nrows() != w.ambient {
        return Err(Error::Dimension(format!(
            "map has {} rows but the subspace lives in R^{}",
            m.nrows(),
            w.ambient
        )));
    }
    let n = m.nrows();
    let perp = Matrix::identity(n, n) - w.projector();
    let scale = spectral_norm(m);
    Ok(Subspace::from_basis_unchecked(kernel_scaled(
        &(perp * m),
        scale,
        tol,
    )))
}

// ---------------------------------------------------------------------------
// Real Schur form and spectral helpers

/// Real Schur form `a = q t qᵀ` together with its diagonal block sizes.
#[derive(Debug, Clone)]
pub struct RealSchur {
    pub q: Matrix,
    pub t: Matrix,
    pub blocks: Vec<usize>,
}

impl RealSchur {
    pub fn new(a: &Matrix) -> Result<Self> {
        assert!(a.is_square(), "Schur form needs a square matrix");
        let n = a.nrows();
        if n == 0 {
            return Ok(RealSchur {
                q: Matrix::zeros(0, 0),
                t: Matrix::zeros(0, 0),
                blocks: vec![],
            });
        }
        let scale = 1.0 + a.norm();
        // The unshifted double-shift QR can stall on highly structured
        // matrices; a fixed orthogonal similarity breaks the symmetry.
        for attempt in 0..4 {
            let h = if attempt == 0 {
                Matrix::identity(n, n)
            } else {
                scramble(n, attempt)
            };
            let b = h.transpose() * a * &h;
            if let Some(s) = nalgebra::Schur::try_new(b, f64::EPSILON, 200 * n.max(10)) {
                let (q, t) = s.unpack();
                let q = &h * q;
                let recon = &q * &t * q.transpose();
                if (recon - a).norm() <= 1e-11 * scale * n as f64 {
                    let blocks = block_sizes(&t);
                    return Ok(RealSchur { q, t, blocks });
                }
            }
        }
        Err(Error::SchurFailed)
    }

    /// Real parts of the eigenvalues, one entry per diagonal block.
    pub fn block_real_parts(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut i = 0;
        for &b in &self.blocks {
            if b == 1 {
                out.push(self.t[(i, i)]);
            } else {
                out.push(0.5 * (self.t[(i, i)] + self.t[(i + 1, i + 1)]));
            }
            i += b;
        }
        out
    }

    /// Eigenvalues as `(re, im)` pairs.
    pub fn eigenvalues(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.t.nrows());
        let mut i = 0;
        for &b in &self.blocks {
            if b == 1 {
                out.push((self.t[(i, i)], 0.0));
            } else {
                let (a, bb, c, d) = (
                    self.t[(i, i)],
                    self.t[(i, i + 1)],
                    self.t[(i + 1, i)],
                    self.t[(i + 1, i + 1)],
                );
                let re = 0.5 * (a + d);
                let disc = 0.25 * (a - d) * (a - d) + bb * c;
                if disc >= 0.0 {
                    out.push((re + disc.sqrt(), 0.0));
                    out.push((re - disc.sqrt(), 0.0));
                } else {
                    out.push((re, (-disc).sqrt()));
                    out.push((re, -(-disc).sqrt()));
                }
            }
            i += b;
        }
        out
    }
}

fn block_sizes(t: &Matrix) -> Vec<usize> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            blocks.push(2);
            i += 2;
        } else {
            blocks.push(1);
            i += 1;
        }
    }
    blocks
}

/// Deterministic orthogonal matrix (a Householder reflector).
fn scramble(n: usize, seed: usize) -> Matrix {
    let golden = 0.618_033_988_749_894_9_f64;
    let v = Vector::from_fn(n, |i, _| ((i + 1) as f64 * golden * (seed as f64 + 0.5)).fract() - 0.5);
    let vv = v.dot(&v);
    if vv == 0.0 {
        return Matrix::identity(n, n);
    }
    Matrix::identity(n, n) - (&v * v.transpose()) * (2.0 / vv)
}

/// All eigenvalues as `(re, im)` pairs.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<(f64, f64)>> {
    Ok(RealSchur::new(a)?.eigenvalues())
}

/// Largest real part of the spectrum (`-inf` for an empty matrix).
pub fn spectral_abscissa(a: &Matrix) -> Result<f64> {
    Ok(RealSchur::new(a)?
        .block_real_parts()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Solves `t11 x - x t22 = rhs` for blocks of size at most 2.
fn small_sylvester(t11: &Matrix, t22: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    let p = t11.nrows();
    let q = t22.nrows();
    let mut k = Matrix::zeros(p * q, p * q);
    // column-major vec: vec(t11 x) = (I ⊗ t11) vec x, vec(x t22) = (t22ᵀ ⊗ I) vec x
    for j in 0..q {
        for i in 0..p {
            let row = j * p + i;
            for a in 0..p {
                k[(row, j * p + a)] += t11[(i, a)];
            }
            for b in 0..q {
                k[(row, b * p + i)] -= t22[(b, j)];
            }
        }
    }
    let rhs_vec = Vector::from_iterator(p * q, rhs.iter().cloned());
    let sol = k
        .lu()
        .solve(&rhs_vec)
        .ok_or(Error::Singular("Schur block swap"))?;
    Ok(Matrix::from_iterator(p, q, sol.iter().cloned()))
}

/// Swaps the adjacent diagonal blocks starting at `pos` (sizes `p` then `q`).
fn swap_blocks(s: &mut RealSchur, pos: usize, p: usize, q: usize) -> Result<()> {
    let k = p + q;
    let t11 = s.t.view((pos, pos), (p, p)).into_owned();
    let t12 = s.t.view((pos, pos + p), (p, q)).into_owned();
    let t22 = s.t.view((pos + p, pos + p), (q, q)).into_owned();
    // [x; I] spans the invariant subspace of the t22 eigenvalues when
    // t11 x - x t22 = -t12.
    let x = small_sylvester(&t11, &t22, &(-t12))?;
    let mut gen = Matrix::zeros(k, k);
    gen.view_mut((0, 0), (p, q)).copy_from(&x);
    gen.view_mut((p, 0), (q, q)).fill_with_identity();
    gen.view_mut((0, q), (p, p)).fill_with_identity();
    let qr = gen.qr();
    let qs = qr.q();

    let rows = s.t.rows(pos, k).into_owned();
    s.t.rows_mut(pos, k).copy_from(&(qs.transpose() * rows));
    let cols = s.t.columns(pos, k).into_owned();
    s.t.columns_mut(pos, k).copy_from(&(cols * &qs));
    let qcols = s.q.columns(pos, k).into_owned();
    s.q.columns_mut(pos, k).copy_from(&(qcols * &qs));

    // New layout: block of size q at pos, block of size p after it.
    for j in pos..pos + q {
        for i in pos + q..pos + k {
            s.t[(i, j)] = 0.0;
        }
    }
    Ok(())
}

/// Reorders the Schur form so that blocks with `select` true come first.
/// Returns the number of leading columns spanning the selected subspace.
fn reorder_schur(s: &mut RealSchur, select: &[bool]) -> Result<usize> {
    let mut blocks: Vec<(usize, bool)> = s.blocks.iter().cloned().zip(select.iter().cloned()).collect();
    let mut dest = 0; // first block index not yet known to be selected
    for k in 0..blocks.len() {
        if !blocks[k].1 {
            continue;
        }
        let mut cur = k;
        while cur > dest {
            let pos: usize = blocks[..cur - 1].iter().map(|b| b.0).sum();
            let p = blocks[cur - 1].0;
            let q = blocks[cur].0;
            swap_blocks(s, pos, p, q)?;
            blocks.swap(cur - 1, cur);
            cur -= 1;
        }
        dest += 1;
    }
    s.blocks = blocks.iter().map(|b| b.0).collect();
    Ok(blocks.iter().filter(|b| b.1).map(|b| b.0).sum())
}

/// Invariant subspace for the open left half-plane, plus the number of
/// eigenvalues judged marginal (|Re λ| at or below the threshold).
#[derive(Debug, Clone)]
pub struct StableSubspace {
    pub subspace: Subspace,
    pub marginal: usize,
}

/// Real `a`-invariant subspace of the eigenvalues with negative real part,
/// obtained from an ordered real Schur form. Eigenvalues with
/// `|Re λ| ≤ rank_tol·max(1, ‖a‖)` are excluded and counted as marginal.
pub fn stable_invariant_subspace(a: &Matrix, tol: &Tolerances) -> Result<StableSubspace> {
    let n = a.nrows();
    if n == 0 {
        return Ok(StableSubspace {
            subspace: Subspace::zero(0),
            marginal: 0,
        });
    }
    let threshold = tol.rank_tol * a.norm().max(1.0);
    let mut schur = RealSchur::new(a)?;
    let re = schur.block_real_parts();
    let select: Vec<bool> = re.iter().map(|&r| r < -threshold).collect();
    let marginal: usize = re
        .iter()
        .zip(&schur.blocks)
        .filter(|(r, _)| r.abs() <= threshold)
        .map(|(_, b)| *b)
        .sum();
    if marginal > 0 {
        warn!("{marginal} eigenvalue(s) on the imaginary axis excluded from the stable subspace");
    }
    let k = reorder_schur(&mut schur, &select)?;
    let basis = schur.q.columns(0, k).into_owned();
    let sub = Subspace::from_basis_unchecked(image_scaled(&basis, 1.0, tol));
    if sub.dim() != k {
        return Err(Error::Inconsistent(
            "stable subspace basis lost rank during reordering".into(),
        ));
    }
    Ok(StableSubspace {
        subspace: sub,
        marginal,
    })
}

/// Solves `fᵀ p + p f + w = 0` for Hurwitz `f` by the Bartels–Stewart method.
pub fn lyapunov_solve(f: &Matrix, w: &Matrix) -> Result<Matrix> {
    let n = f.nrows();
    if !f.is_square() || w.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov data {:?} and {:?}",
            f.shape(),
            w.shape()
        )));
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let schur = RealSchur::new(f)?;
    let abscissa = schur
        .block_real_parts()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz { abscissa });
    }
    let u = &schur.q;
    let t = &schur.t;
    let c = -(u.transpose() * symmetrize(w) * u);

    let offsets: Vec<usize> = schur
        .blocks
        .iter()
        .scan(0, |acc, &b| {
            let o = *acc;
            *acc += b;
            Some(o)
        })
        .collect();
    let nb = schur.blocks.len();
    let mut y = Matrix::zeros(n, n);
    // tᵀ y + y t = c, solved block by block in increasing (k, l).
    for k in 0..nb {
        let (ok, sk) = (offsets[k], schur.blocks[k]);
        for l in 0..nb {
            let (ol, sl) = (offsets[l], schur.blocks[l]);
            let mut rhs = c.view((ok, ol), (sk, sl)).into_owned();
            if ok > 0 {
                let t_ik = t.view((0, ok), (ok, sk));
                let y_il = y.view((0, ol), (ok, sl));
                rhs -= t_ik.transpose() * y_il;
            }
            if ol > 0 {
                let y_kj = y.view((ok, 0), (sk, ol));
                let t_jl = t.view((0, ol), (ol, sl));
                rhs -= y_kj * t_jl;
            }
            let tkk_t = t.view((ok, ok), (sk, sk)).transpose();
            let tll = t.view((ol, ol), (sl, sl)).into_owned();
            // tkkᵀ y + y tll = rhs  <=>  tkkᵀ y - y (-tll) = rhs
            let blk = small_sylvester(&tkk_t, &(-tll), &rhs)?;
            y.view_mut((ok, ol), (sk, sl)).copy_from(&blk);
        }
    }
    Ok(symmetrize(&(u * y * u.transpose())))
}

/// Matrix exponential by scaling and squaring with a Padé approximant.
pub fn matrix_exponential(m: &Matrix) -> Matrix {
    assert!(m.is_square(), "exponential of a non-square matrix");
    if m.nrows() == 0 {
        return Matrix::zeros(0, 0);
    }
    m.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn svd_survives_rank_deficient_padding() {
        // The library SVD returns factors that do not reproduce this matrix.
        let m = dmatrix![
            0.609483114435361, 0.31035179207273966, -0.4085845592832952;
            -0.11261884736235536, 0.33439359290484527, 0.1305748900005751;
            0.2997765339847682, -0.8762440961930693, -0.3456234056194627;
            0.6256722924144796, 0.14419229869947353, -0.4439580744764866;
            -0.36676360317490186, -0.05716253199414174, 0.26409131382132356;
            0.0, 0.0, 0.0;
            0.0, 0.0, 0.0;
            0.0, 0.0, 0.0
        ];
        let f = svd(&m);
        assert!(f.is_accurate(&m));
        assert!(f.s[2] < 1e-14 && f.s[1] > 0.9);
        let span = Subspace::span(&m, &Tolerances::default());
        assert_eq!(span.dim(), 2);
        assert!(span.residual_of(&m) < 1e-14);
    }

    #[test]
    fn jacobi_matches_library_on_generic_input() {
        for (r, c) in [(5, 3), (3, 5), (4, 4)] {
            let m = Matrix::from_fn(r, c, |i, j| ((i * 7 + j * 3) as f64).sin());
            let j = jacobi_svd(&m);
            assert!(j.is_accurate(&m));
            let lib = SVD::new(m.clone(), false, false);
            let mut expect: Vec<f64> = lib.singular_values.iter().cloned().collect();
            expect.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in j.s.iter().zip(&expect) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn e(n: usize, i: usize) -> Matrix {
        let mut v = Matrix::zeros(n, 1);
        v[(i, 0)] = 1.0;
        v
    }

    #[test]
    fn pinv_examples() {
        let i3 = Matrix::identity(3, 3);
        assert_relative_eq!(pseudo_inverse(&i3, &tol()), i3, epsilon = 1e-14);
        let z = Matrix::zeros(2, 2);
        assert_eq!(pseudo_inverse(&z, &tol()), z);
        let d = dmatrix![2.0, 0.0; 0.0, 0.0];
        assert_relative_eq!(
            pseudo_inverse(&d, &tol()),
            dmatrix![0.5, 0.0; 0.0, 0.0],
            epsilon = 1e-14
        );
    }

    #[test]
    fn pinv_of_empty_is_transposed_shape() {
        let m = Matrix::zeros(0, 3);
        assert_eq!(pseudo_inverse(&m, &tol()).shape(), (3, 0));
    }

    #[test]
    fn image_examples() {
        let im = orthonormal_image(&dmatrix![0.0; 1.0], &tol());
        assert_eq!(im.dim(), 1);
        assert!(im.same_as(&Subspace::span(&e(2, 1), &tol()), 1e-12));

        assert!(orthonormal_image(&Matrix::zeros(2, 2), &tol()).is_zero());

        let im = orthonormal_image(&dmatrix![1.0, 1.0; 1.0, 1.0], &tol());
        assert_eq!(im.dim(), 1);
        let b = im.basis();
        let s = 1.0 / 2f64.sqrt();
        assert_relative_eq!(b[(0, 0)].abs(), s, epsilon = 1e-12);
        assert_relative_eq!(b[(1, 0)].abs(), s, epsilon = 1e-12);
        assert!(b[(0, 0)] * b[(1, 0)] > 0.0);
    }

    #[test]
    fn kernel_examples() {
        assert!(orthonormal_kernel(&Matrix::identity(2, 2), &tol()).is_zero());
        assert!(orthonormal_kernel(&Matrix::zeros(1, 2), &tol()).is_full());
        let r = Matrix::zeros(3, 3);
        let ker = orthonormal_kernel(&r, &tol());
        assert!(ker.is_full());
        assert_relative_eq!(ker.projector(), Matrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn sum_examples() {
        let e1 = Subspace::span(&e(2, 0), &tol());
        let e2 = Subspace::span(&e(2, 1), &tol());
        assert!(subspace_sum(&e1, &e2, &tol()).unwrap().is_full());
        assert!(subspace_sum(&e1, &Subspace::zero(2), &tol())
            .unwrap()
            .same_as(&e1, 1e-12));
        let diag = Subspace::span(&dmatrix![1.0; 1.0], &tol());
        assert!(subspace_sum(&e1, &diag, &tol()).unwrap().is_full());
    }

    #[test]
    fn intersection_examples() {
        let u = Subspace::span(&dmatrix![1.0, 0.0; 2.0, 1.0; 0.0, 3.0], &tol());
        assert!(subspace_intersection(&u, &u, &tol()).unwrap().same_as(&u, 1e-10));

        let e1 = Subspace::span(&e(2, 0), &tol());
        let e2 = Subspace::span(&e(2, 1), &tol());
        assert!(subspace_intersection(&e1, &e2, &tol()).unwrap().is_zero());

        let u12 = Subspace::span(&dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0], &tol());
        let u23 = Subspace::span(&dmatrix![0.0, 0.0; 1.0, 0.0; 0.0, 1.0], &tol());
        let cap = subspace_intersection(&u12, &u23, &tol()).unwrap();
        assert_eq!(cap.dim(), 1);
        assert!(cap.same_as(&Subspace::span(&e(3, 1), &tol()), 1e-12));
    }

    #[test]
    fn ambient_mismatch_is_an_error() {
        let a = Subspace::full(2);
        let b = Subspace::full(3);
        assert!(subspace_sum(&a, &b, &tol()).is_err());
        assert!(subspace_intersection(&a, &b, &tol()).is_err());
        assert!(subspace_preimage(&Matrix::identity(2, 2), &b, &tol()).is_err());
    }

    #[test]
    fn preimage_examples() {
        let w = Subspace::span(&dmatrix![1.0; 2.0], &tol());
        let pre = subspace_preimage(&Matrix::identity(2, 2), &w, &tol()).unwrap();
        assert!(pre.same_as(&w, 1e-12));

        let m = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0];
        assert!(subspace_preimage(&m, &Subspace::full(2), &tol())
            .unwrap()
            .is_full());

        let m = dmatrix![1.0, 0.0];
        let pre = subspace_preimage(&m, &Subspace::zero(1), &tol()).unwrap();
        assert!(pre.same_as(&Subspace::span(&e(2, 1), &tol()), 1e-12));
    }

    #[test]
    fn complement_is_orthogonal() {
        let u = Subspace::span(&dmatrix![1.0; 1.0; 0.0], &tol());
        let c = u.complement();
        assert_eq!(c.dim(), 2);
        assert!((u.basis().transpose() * c.basis()).amax() < 1e-12);
    }

    #[test]
    fn stable_subspace_examples() {
        let s = stable_invariant_subspace(&dmatrix![-1.0, 0.0; 0.0, 2.0], &tol()).unwrap();
        assert!(s.subspace.same_as(&Subspace::span(&e(2, 0), &tol()), 1e-12));
        assert_eq!(s.marginal, 0);

        let s = stable_invariant_subspace(&Matrix::identity(2, 2), &tol()).unwrap();
        assert!(s.subspace.is_zero());

        let s = stable_invariant_subspace(&dmatrix![0.0, 0.0; 0.0, 1.0], &tol()).unwrap();
        assert!(s.subspace.is_zero());
        assert_eq!(s.marginal, 1);
    }

    #[test]
    fn stable_subspace_needs_reordering() {
        // unstable eigenvalue first on the diagonal, coupled to a stable one
        let a = dmatrix![3.0, 1.0, 0.5; 0.0, -2.0, 1.0; 0.0, 0.0, -1.0];
        let s = stable_invariant_subspace(&a, &tol()).unwrap();
        assert_eq!(s.subspace.dim(), 2);
        let p = s.subspace.basis();
        assert!(s.subspace.residual_of(&(&a * p)) < 1e-10);
    }

    #[test]
    fn stable_subspace_with_complex_pair() {
        let a = dmatrix![
            1.0, 2.0, 0.3, 0.1;
            -3.0, 0.5, 0.2, 0.0;
            0.0, 0.0, -0.5, 4.0;
            0.0, 0.0, -4.0, -0.5
        ];
        let s = stable_invariant_subspace(&a, &tol()).unwrap();
        assert_eq!(s.subspace.dim(), 2);
        let p = s.subspace.basis().clone();
        let resid = (Matrix::identity(4, 4) - s.subspace.projector()) * &a * &p;
        assert!(resid.norm() < 1e-10);
        let restricted = p.transpose() * &a * &p;
        assert!(spectral_abscissa(&restricted).unwrap() < 0.0);
    }

    #[test]
    fn lyapunov_examples() {
        let p = lyapunov_solve(&dmatrix![-1.0], &dmatrix![1.0]).unwrap();
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-14);

        let f = dmatrix![-1.0, 3.0; 0.0, -2.0];
        let p = lyapunov_solve(&f, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(p, Matrix::zeros(2, 2));

        let p = lyapunov_solve(&dmatrix![-1.0, 0.0; 0.0, -2.0], &Matrix::identity(2, 2)).unwrap();
        assert_relative_eq!(p, dmatrix![0.5, 0.0; 0.0, 0.25], epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_refuses_unstable() {
        let err = lyapunov_solve(&dmatrix![-1.0, 0.0; 0.0, 0.5], &Matrix::identity(2, 2));
        match err {
            Err(Error::NotHurwitz { abscissa }) => assert_relative_eq!(abscissa, 0.5, epsilon = 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lyapunov_with_complex_modes() {
        let f = dmatrix![-0.2, 5.0, 1.0; -5.0, -0.2, 0.0; 0.0, 0.0, -3.0];
        let w = dmatrix![2.0, 0.5, 0.0; 0.5, 1.0, 0.1; 0.0, 0.1, 3.0];
        let p = lyapunov_solve(&f, &w).unwrap();
        let res = f.transpose() * &p + &p * &f + &w;
        assert!(res.norm() < 1e-12 * (1.0 + w.norm()));
    }

    #[test]
    fn exponential_examples() {
        let z = Matrix::zeros(3, 3);
        assert_eq!(matrix_exponential(&z), Matrix::identity(3, 3));
        assert_relative_eq!(
            matrix_exponential(&dmatrix![1.0])[(0, 0)],
            std::f64::consts::E,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            matrix_exponential(&dmatrix![0.0, 1.0; 0.0, 0.0]),
            dmatrix![1.0, 1.0; 0.0, 1.0],
            epsilon = 1e-14
        );
    }

    #[test]
    fn tolerances_must_be_positive() {
        assert!(Tolerances::new(0.0, 1e-7, 1e-9).is_err());
        assert!(Tolerances::new(1e-9, -1.0, 1e-9).is_err());
        assert!(Tolerances::new(1e-9, 1e-7, f64::NAN).is_err());
    }
}
