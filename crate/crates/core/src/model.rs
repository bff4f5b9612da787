//! The LQ problem `(A, B, Π)` and the objects derived from it: the Popov
//! factorization `Π = [C D]ᵀ[C D]`, the split of the input space along
//! `im R ⊕ ker R`, the deflected data `(A0, Q0, C0)` and the bundle of
//! matrices attached to a symmetric `X`.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::matlib::{min_eigenvalue, pseudo_inverse, spectral_norm, symmetrize, Matrix, Tolerances};

/// Relative asymmetry tolerated (and silently removed) in `Q` and `R`.
const SYMMETRY_SLACK: f64 = 1e-6;

/// A validated problem: dynamics `ẋ = Ax + Bu` and the Popov weight
/// `Π = [[Q, S], [Sᵀ, R]] ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    a: Matrix,
    b: Matrix,
    q: Matrix,
    s: Matrix,
    r: Matrix,
    r_pinv: Matrix,
    g: Matrix,
    pi: Matrix,
}

impl Problem {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn q(&self) -> &Matrix {
        &self.q
    }
    pub fn s(&self) -> &Matrix {
        &self.s
    }
    pub fn r(&self) -> &Matrix {
        &self.r
    }
    /// `R†`, computed once at validation.
    pub fn r_pinv(&self) -> &Matrix {
        &self.r_pinv
    }
    /// Orthogonal projector `G` onto `ker R` (equal to `I − R†R`).
    pub fn kernel_projector(&self) -> &Matrix {
        &self.g
    }
    /// The Popov matrix `Π`.
    pub fn popov(&self) -> &Matrix {
        &self.pi
    }
    /// Frobenius norm of `Π`, the scale used by residual bounds.
    pub fn popov_norm(&self) -> f64 {
        self.pi.norm()
    }
}

fn check_shape(m: &Matrix, rows: usize, cols: usize, name: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{name} is {}×{}, expected {rows}×{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn symmetrized(m: &Matrix, name: &'static str) -> Result<Matrix> {
    let asym = (m - m.transpose()).norm();
    let allowed = SYMMETRY_SLACK * m.norm();
    if asym > allowed {
        return Err(Error::NotSymmetric {
            name,
            asymmetry: asym,
            allowed,
        });
    }
    Ok(symmetrize(m))
}

pub(crate) fn popov_matrix(q: &Matrix, s: &Matrix, r: &Matrix) -> Matrix {
    let n = q.nrows();
    let m = r.nrows();
    let mut pi = Matrix::zeros(n + m, n + m);
    pi.view_mut((0, 0), (n, n)).copy_from(q);
    pi.view_mut((0, n), (n, m)).copy_from(s);
    pi.view_mut((n, 0), (m, n)).copy_from(&s.transpose());
    pi.view_mut((n, n), (m, m)).copy_from(r);
    pi
}

/// Orthonormal eigenvector bases of `im R` and `ker R`, with the same
/// relative cutoff as every other rank decision.
fn range_and_kernel(r: &Matrix, tol: &Tolerances) -> (Matrix, Matrix) {
    let m = r.nrows();
    if m == 0 {
        return (Matrix::zeros(0, 0), Matrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(r));
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = tol.rank_tol * lmax;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let range: Vec<usize> = order
        .iter()
        .cloned()
        .filter(|&i| eig.eigenvalues[i] > cut && eig.eigenvalues[i] > 0.0)
        .collect();
    let kernel: Vec<usize> = order.iter().cloned().filter(|i| !range.contains(i)).collect();
    let pick = |idx: &[usize]| {
        let mut out = Matrix::zeros(m, idx.len());
        for (j, &i) in idx.iter().enumerate() {
            out.set_column(j, &canonical_sign(eig.eigenvectors.column(i).into_owned()));
        }
        out
    };
    (pick(&range), pick(&kernel))
}

/// Flips a vector so that its largest-magnitude entry is positive.
fn canonical_sign(v: nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    let pivot = v.iter().cloned().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 {
        -v
    } else {
        v
    }
}

/// Builds a [`Problem`], symmetrizing `Q` and `R` and checking every standing
/// assumption on `Π`.
pub fn validate_problem(
    a: Matrix,
    b: Matrix,
    q: Matrix,
    s: Matrix,
    r: Matrix,
    tol: &Tolerances,
) -> Result<Problem> {
    tol.validate()?;
    let n = a.nrows();
    let m = b.ncols();
    check_shape(&a, n, n, "A")?;
    check_shape(&b, n, m, "B")?;
    check_shape(&q, n, n, "Q")?;
    check_shape(&s, n, m, "S")?;
    check_shape(&r, m, m, "R")?;
    for (mat, name) in [(&a, "A"), (&b, "B"), (&q, "Q"), (&s, "S"), (&r, "R")] {
        crate::matlib::ensure_finite(mat, name)?;
    }
    let q = symmetrized(&q, "Q")?;
    let r = symmetrized(&r, "R")?;
    let pi = popov_matrix(&q, &s, &r);
    let lmin = min_eigenvalue(&pi);
    let scale = spectral_norm(&pi).max(1.0);
    if lmin < -tol.psd_tol * scale {
        return Err(Error::PopovIndefinite { min_eigenvalue: lmin });
    }
    // ker R ⊆ ker S follows from Π ⪰ 0; a violation signals an
    // inconsistent rank decision on R.
    let (_, ker) = range_and_kernel(&r, tol);
    let sg = (&s * &ker).norm();
    let bound = 10.0 * (tol.rank_tol + tol.psd_tol).sqrt() * (1.0 + pi.norm());
    if sg > bound {
        return Err(Error::KernelCondition { norm: sg });
    }
    let r_pinv = symmetrize(&pseudo_inverse(&r, tol));
    let g = &ker * ker.transpose();
    Ok(Problem {
        a,
        b,
        q,
        s,
        r,
        r_pinv,
        g,
        pi,
    })
}

/// Full-row-rank factor `[C D]` of the Popov matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PopovFactorization {
    pub c: Matrix,
    pub d: Matrix,
}

impl PopovFactorization {
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// Accepts an externally supplied factor after checking it reproduces `Π`.
    pub fn from_parts(c: Matrix, d: Matrix, problem: &Problem, tol: &Tolerances) -> Result<Self> {
        let (n, m) = (problem.n(), problem.m());
        if c.ncols() != n || d.ncols() != m || c.nrows() != d.nrows() {
            return Err(Error::Dimension(format!(
                "factor C is {:?} and D is {:?} for n = {n}, m = {m}",
                c.shape(),
                d.shape()
            )));
        }
        let fact = PopovFactorization { c, d };
        let err = fact.reconstruction_error(problem);
        if err > tol.residual_tol * (1.0 + problem.popov_norm()) {
            return Err(Error::Inconsistent(format!(
                "[C D]ᵀ[C D] differs from Π by {err:.3e}"
            )));
        }
        Ok(fact)
    }

    pub fn stacked(&self) -> Matrix {
        let p = self.p();
        let (n, m) = (self.c.ncols(), self.d.ncols());
        let mut cd = Matrix::zeros(p, n + m);
        cd.view_mut((0, 0), (p, n)).copy_from(&self.c);
        cd.view_mut((0, n), (p, m)).copy_from(&self.d);
        cd
    }

    /// `‖[C D]ᵀ[C D] − Π‖_F`.
    pub fn reconstruction_error(&self, problem: &Problem) -> f64 {
        let cd = self.stacked();
        (cd.transpose() * cd - problem.popov()).norm()
    }
}

/// Factor `Π` through its eigendecomposition: one row `√λ vᵀ` per eigenvalue
/// above `rank_tol·λ_max`, in descending order, so `p = rank Π`.
pub fn factor_popov(problem: &Problem, tol: &Tolerances) -> PopovFactorization {
    let (n, m) = (problem.n(), problem.m());
    let dim = n + m;
    if dim == 0 {
        return PopovFactorization {
            c: Matrix::zeros(0, n),
            d: Matrix::zeros(0, m),
        };
    }
    let eig = SymmetricEigen::new(problem.popov().clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = tol.rank_tol * lmax;
    let mut order: Vec<usize> = (0..dim)
        .filter(|&i| eig.eigenvalues[i] > cut && eig.eigenvalues[i] > 0.0)
        .collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let p = order.len();
    let mut cd = Matrix::zeros(p, dim);
    for (row, &i) in order.iter().enumerate() {
        let v = canonical_sign(eig.eigenvectors.column(i).into_owned());
        cd.set_row(row, &(v * eig.eigenvalues[i].sqrt()).transpose());
    }
    PopovFactorization {
        c: cd.columns(0, n).into_owned(),
        d: cd.columns(n, m).into_owned(),
    }
}

/// Orthonormal change of input basis `T = [T1 | T2]` with `im T1 = im R`
/// and `im T2 = ker R`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSplit {
    pub t1: Matrix,
    pub t2: Matrix,
    pub b1: Matrix,
    pub b2: Matrix,
    pub d1: Matrix,
    /// Orthogonal projector onto `ker R`.
    pub g: Matrix,
    pub rank: usize,
}

pub fn input_split(problem: &Problem, fact: &PopovFactorization, tol: &Tolerances) -> InputSplit {
    let (t1, t2) = range_and_kernel(problem.r(), tol);
    let g = problem.kernel_projector().clone();
    InputSplit {
        b1: problem.b() * &t1,
        b2: problem.b() * &t2,
        d1: &fact.d * &t1,
        rank: t1.ncols(),
        t1,
        t2,
        g,
    }
}

/// The matrices attached to a symmetric `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociatedData {
    pub qx: Matrix,
    pub sx: Matrix,
    pub kx: Matrix,
    pub ax: Matrix,
    pub pix: Matrix,
}

pub(crate) fn check_symmetric_x(x: &Matrix, n: usize) -> Result<()> {
    if x.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "X is {}×{}, expected {n}×{n}",
            x.nrows(),
            x.ncols()
        )));
    }
    let asym = (x - x.transpose()).amax();
    if asym > 1e-8 * x.amax().max(1.0) {
        return Err(Error::NotSymmetric {
            name: "X",
            asymmetry: asym,
            allowed: 1e-8 * x.amax().max(1.0),
        });
    }
    Ok(())
}

pub fn associated(x: &Matrix, problem: &Problem) -> Result<AssociatedData> {
    check_symmetric_x(x, problem.n())?;
    let (a, b) = (problem.a(), problem.b());
    let qx = problem.q() + a.transpose() * x + x * a;
    let sx = problem.s() + x * b;
    let kx = problem.r_pinv() * sx.transpose();
    let ax = a - b * &kx;
    let pix = popov_matrix(&qx, &sx, problem.r());
    Ok(AssociatedData {
        qx,
        sx,
        kx,
        ax,
        pix,
    })
}

/// Data after the preliminary feedback `u = −R†Sᵀx + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeflectedSystem {
    pub a0: Matrix,
    pub q0: Matrix,
    pub c0: Matrix,
}

pub fn deflected(
    problem: &Problem,
    fact: &PopovFactorization,
    tol: &Tolerances,
) -> Result<DeflectedSystem> {
    let gain = problem.r_pinv() * problem.s().transpose();
    let a0 = problem.a() - problem.b() * &gain;
    let q0 = symmetrize(&(problem.q() - problem.s() * &gain));
    let c0 = &fact.c - &fact.d * &gain;
    let lmin = min_eigenvalue(&q0);
    if lmin < -tol.psd_tol * spectral_norm(problem.popov()).max(1.0) {
        return Err(Error::Inconsistent(format!(
            "generalized Schur complement Q0 is indefinite (λ_min = {lmin})"
        )));
    }
    Ok(DeflectedSystem { a0, q0, c0 })
}
