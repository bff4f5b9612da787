//! Geometric subspaces of a quadruple `(A, B, C, D)`: the largest
//! output-nulling subspace `V*`, the smallest input-containing subspace `S*`,
//! their intersection `R*`, reachable subspaces and the finiteness test.

use log::debug;

use crate::error::{Error, Result};
use crate::matlib::{
    orthonormal_kernel, stable_invariant_subspace, subspace_intersection, subspace_preimage, subspace_sum, Matrix,
    Subspace, Tolerances, SUBSPACE_TOL,
};
use crate::model::{DeflectedSystem, InputSplit, PopovFactorization, Problem};

#[derive(Debug, Clone, PartialEq)]
pub struct Quadruple {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

impl Quadruple {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self> {
        let n = a.nrows();
        let (m, p) = (b.ncols(), c.nrows());
        if !a.is_square() || b.nrows() != n || c.ncols() != n || d.shape() != (p, m) {
            return Err(Error::Dimension(format!(
                "quadruple shapes A {:?}, B {:?}, C {:?}, D {:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        Ok(Quadruple { a, b, c, d })
    }

    /// `(A, B, C, D)` with `[C D]` a factor of the Popov matrix.
    pub fn from_problem(problem: &Problem, fact: &PopovFactorization) -> Self {
        Quadruple {
            a: problem.a().clone(),
            b: problem.b().clone(),
            c: fact.c.clone(),
            d: fact.d.clone(),
        }
    }

    /// `(A0, B, C0, D)` after the preliminary feedback.
    pub fn deflected(problem: &Problem, fact: &PopovFactorization, defl: &DeflectedSystem) -> Self {
        Quadruple {
            a: defl.a0.clone(),
            b: problem.b().clone(),
            c: defl.c0.clone(),
            d: fact.d.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// `[A; C]`, acting from `R^n` to `R^{n+p}`.
    fn state_map(&self) -> Matrix {
        let (n, p) = (self.n(), self.p());
        let mut out = Matrix::zeros(n + p, n);
        out.view_mut((0, 0), (n, n)).copy_from(&self.a);
        out.view_mut((n, 0), (p, n)).copy_from(&self.c);
        out
    }

    /// `[A B]`, acting from `R^{n+m}` to `R^n`.
    fn forward_map(&self) -> Matrix {
        let (n, m) = (self.n(), self.m());
        let mut out = Matrix::zeros(n, n + m);
        out.view_mut((0, 0), (n, n)).copy_from(&self.a);
        out.view_mut((0, n), (n, m)).copy_from(&self.b);
        out
    }

    /// `[C D]`.
    fn output_map(&self) -> Matrix {
        let (n, m, p) = (self.n(), self.m(), self.p());
        let mut out = Matrix::zeros(p, n + m);
        out.view_mut((0, 0), (p, n)).copy_from(&self.c);
        out.view_mut((0, n), (p, m)).copy_from(&self.d);
        out
    }

    /// `(V × {0}) + im[B; D]` inside `R^{n+p}`.
    fn nulling_target(&self, v: &Subspace, tol: &Tolerances) -> Subspace {
        let (n, m, p) = (self.n(), self.m(), self.p());
        let k = v.dim();
        let mut gen = Matrix::zeros(n + p, k + m);
        gen.view_mut((0, 0), (n, k)).copy_from(v.basis());
        gen.view_mut((0, k), (n, m)).copy_from(&self.b);
        gen.view_mut((n, k), (p, m)).copy_from(&self.d);
        Subspace::span(&gen, tol)
    }

    /// `S × R^m` inside `R^{n+m}`.
    fn with_all_inputs(&self, s: &Subspace) -> Subspace {
        let (n, m) = (self.n(), self.m());
        let k = s.dim();
        let mut basis = Matrix::zeros(n + m, k + m);
        basis.view_mut((0, 0), (n, k)).copy_from(s.basis());
        basis.view_mut((n, k), (m, m)).copy_from(&Matrix::identity(m, m));
        Subspace::from_orthonormal(basis).expect("block basis is orthonormal")
    }
}

/// Limit of a monotone subspace recursion with the dimension of every
/// iterate, starting with the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterates {
    pub limit: Subspace,
    pub dims: Vec<usize>,
}

pub fn vstar_iterates(q: &Quadruple, tol: &Tolerances) -> Result<Iterates> {
    let n = q.n();
    let map = q.state_map();
    let mut v = Subspace::full(n);
    let mut dims = vec![n];
    for _ in 0..=n {
        let next = subspace_preimage(&map, &q.nulling_target(&v, tol), tol)?;
        let done = next.dim() == v.dim();
        dims.push(next.dim());
        v = next;
        if done {
            break;
        }
    }
    debug!("V* recursion dims {dims:?}");
    Ok(Iterates { limit: v, dims })
}

pub fn sstar_iterates(q: &Quadruple, tol: &Tolerances) -> Result<Iterates> {
    let n = q.n();
    let fwd = q.forward_map();
    let nulls = orthonormal_kernel(&q.output_map(), tol);
    let mut s = Subspace::zero(n);
    let mut dims = vec![0];
    for _ in 0..=n {
        let feasible = subspace_intersection(&q.with_all_inputs(&s), &nulls, tol)?;
        let next = feasible.mapped(&fwd, tol);
        let done = next.dim() == s.dim();
        dims.push(next.dim());
        s = next;
        if done {
            break;
        }
    }
    debug!("S* recursion dims {dims:?}");
    Ok(Iterates { limit: s, dims })
}

/// Largest output-nulling subspace.
pub fn vstar(q: &Quadruple, tol: &Tolerances) -> Result<Subspace> {
    Ok(vstar_iterates(q, tol)?.limit)
}

/// Smallest input-containing subspace.
pub fn sstar(q: &Quadruple, tol: &Tolerances) -> Result<Subspace> {
    Ok(sstar_iterates(q, tol)?.limit)
}

/// Largest reachability output-nulling subspace `V* ∩ S*`.
pub fn rstar(q: &Quadruple, tol: &Tolerances) -> Result<Subspace> {
    subspace_intersection(&vstar(q, tol)?, &sstar(q, tol)?, tol)
}

/// Smallest `a`-invariant subspace containing `im b`.
pub fn reachable(a: &Matrix, b: &Matrix, tol: &Tolerances) -> Result<Subspace> {
    let n = a.nrows();
    if b.nrows() != n || !a.is_square() {
        return Err(Error::Dimension(format!(
            "pair shapes A {:?}, B {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut r = Subspace::span(b, tol);
    for _ in 0..n {
        let next = subspace_sum(&r, &r.mapped(a, tol), tol)?;
        if next.dim() == r.dim() {
            break;
        }
        r = next;
    }
    Ok(r)
}

/// Reachable subspace of the deflected pair `(A0, BG)`.
pub fn reach_deflected(
    problem: &Problem,
    split: &InputSplit,
    defl: &DeflectedSystem,
    tol: &Tolerances,
) -> Result<Subspace> {
    reachable(&defl.a0, &(problem.b() * &split.g), tol)
}

/// Outcome of the test `V* + ⟨A, im B⟩ + X_stab = R^n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Finiteness {
    pub finite: bool,
    /// Dimension of the left-hand sum.
    pub dim: usize,
    /// Some eigenvalue of `A` sits on the imaginary axis within tolerance,
    /// so the stable subspace (and possibly the verdict) is sensitive.
    pub fragile: bool,
}

pub fn finiteness_test(problem: &Problem, q: &Quadruple, tol: &Tolerances) -> Result<Finiteness> {
    let v = vstar(q, tol)?;
    let r = reachable(problem.a(), problem.b(), tol)?;
    finiteness_from(problem, &v, &r, tol)
}

fn finiteness_from(
    problem: &Problem,
    v: &Subspace,
    r: &Subspace,
    tol: &Tolerances,
) -> Result<Finiteness> {
    let stab = stable_invariant_subspace(problem.a(), tol)?;
    let total = subspace_sum(&subspace_sum(v, r, tol)?, &stab.subspace, tol)?;
    Ok(Finiteness {
        finite: total.is_full(),
        dim: total.dim(),
        fragile: stab.marginal > 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricSummary {
    pub vstar: Subspace,
    pub sstar: Subspace,
    pub rstar: Subspace,
    pub reachable: Subspace,
    pub xstab: Subspace,
    pub finiteness: Finiteness,
    pub sstar_eq_rstar: bool,
}

pub fn summarize(problem: &Problem, q: &Quadruple, tol: &Tolerances) -> Result<GeometricSummary> {
    let vstar = vstar(q, tol)?;
    let sstar = sstar(q, tol)?;
    let rstar = subspace_intersection(&vstar, &sstar, tol)?;
    let reachable = reachable(problem.a(), problem.b(), tol)?;
    let finiteness = finiteness_from(problem, &vstar, &reachable, tol)?;
    let xstab = stable_invariant_subspace(problem.a(), tol)?.subspace;
    let sstar_eq_rstar = sstar.same_as(&rstar, SUBSPACE_TOL);
    Ok(GeometricSummary {
        vstar,
        sstar,
        rstar,
        reachable,
        xstab,
        finiteness,
        sstar_eq_rstar,
    })
}
