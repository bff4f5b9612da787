//! Seeded random instance families. Every instance is assembled from a
//! random factor `[C D]`, so its Popov matrix is semidefinite by
//! construction.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use singlq::matlib::{spectral_abscissa, symmetrize, Matrix, Tolerances};
use singlq::model::{validate_problem, Problem};

use crate::document::ProblemDocument;
use crate::CliError;

pub const MAX_N: usize = 12;
pub const MAX_M: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceClass {
    /// Random `A, B, C, D`; `D` of random rank, so `R` is usually singular.
    Quadruple,
    /// `D` stacked on an identity block: `R` positive definite.
    Regular,
    /// `D = 0` and `C` vanishing on a reachable subspace of random
    /// dimension.
    Cheap,
    /// Like `Quadruple` with `A` shifted to be Hurwitz.
    Hurwitz,
}

impl InstanceClass {
    pub const ALL: [InstanceClass; 4] = [
        InstanceClass::Quadruple,
        InstanceClass::Regular,
        InstanceClass::Cheap,
        InstanceClass::Hurwitz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InstanceClass::Quadruple => "quadruple",
            InstanceClass::Regular => "regular",
            InstanceClass::Cheap => "cheap",
            InstanceClass::Hurwitz => "hurwitz",
        }
    }
}

impl FromStr for InstanceClass {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        InstanceClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown class {s:?} (quadruple, regular, cheap, hurwitz)")))
    }
}

/// One generated instance with the factor it was built from.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub class: InstanceClass,
    pub problem: Problem,
    pub c: Matrix,
    pub d: Matrix,
    /// Orthonormal basis of the reachable subspace for the cheap class.
    pub reachable_basis: Option<Matrix>,
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..=1.0))
}

fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    uniform(rng, n, n).qr().q()
}

/// Shifts `a` so that its spectral abscissa is at most −0.5.
fn make_hurwitz(a: &mut Matrix) -> Result<(), CliError> {
    let alpha = spectral_abscissa(a)?;
    if alpha > -0.5 {
        let n = a.nrows();
        *a -= Matrix::identity(n, n) * (alpha + 1.0);
    }
    Ok(())
}

pub fn check_dims(n: usize, m: usize) -> Result<(), CliError> {
    if !(1..=MAX_N).contains(&n) || !(1..=MAX_M).contains(&m) {
        return Err(CliError::Usage(format!(
            "dimensions n = {n}, m = {m} outside 1..={MAX_N} × 1..={MAX_M}"
        )));
    }
    Ok(())
}

/// Parameters of an instance stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Family {
    pub seed: u64,
    pub class: InstanceClass,
    pub n: usize,
    pub m: usize,
    /// Shift `A` to be Hurwitz whatever the class.
    pub stable: bool,
}

impl Family {
    pub fn new(seed: u64, class: InstanceClass, n: usize, m: usize) -> Self {
        Family {
            seed,
            class,
            n,
            m,
            stable: false,
        }
    }

    pub fn stable(self) -> Self {
        Family { stable: true, ..self }
    }
}

/// Instance `index` of a stream.
pub fn instance(fam: &Family, index: usize) -> Result<Instance, CliError> {
    let Family { seed, class, n, m, stable } = *fam;
    check_dims(n, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let name = if stable && class != InstanceClass::Hurwitz {
        format!("{}-stable-{seed}-{index}", class.name())
    } else {
        format!("{}-{seed}-{index}", class.name())
    };
    let mut reachable_basis = None;
    let (mut a, b, c, d) = match class {
        InstanceClass::Quadruple | InstanceClass::Hurwitz => {
            let a = uniform(&mut rng, n, n);
            let b = uniform(&mut rng, n, m);
            let p = rng.gen_range(1..=n + m);
            let c = uniform(&mut rng, p, n);
            let rank = rng.gen_range(0..=m.min(p));
            let d = uniform(&mut rng, p, rank) * uniform(&mut rng, rank, m);
            (a, b, c, d)
        }
        InstanceClass::Regular => {
            let a = uniform(&mut rng, n, n);
            let b = uniform(&mut rng, n, m);
            let p = rng.gen_range(1..=n);
            let mut c = Matrix::zeros(p + m, n);
            c.view_mut((0, 0), (p, n)).copy_from(&uniform(&mut rng, p, n));
            let mut d = Matrix::zeros(p + m, m);
            d.view_mut((0, 0), (p, m)).copy_from(&uniform(&mut rng, p, m));
            d.view_mut((p, 0), (m, m)).copy_from(&Matrix::identity(m, m));
            (a, b, c, d)
        }
        InstanceClass::Cheap => {
            // A = U [[A11, A12], [0, A22]] Uᵀ, B = U [B1; 0]: the first k
            // columns of U span the reachable subspace.
            let k = rng.gen_range(1..=n);
            let u = orthogonal(&mut rng, n);
            let mut blk = uniform(&mut rng, n, n);
            blk.view_mut((k, 0), (n - k, k)).fill(0.0);
            let mut b1 = Matrix::zeros(n, m);
            b1.view_mut((0, 0), (k, m)).copy_from(&uniform(&mut rng, k, m));
            let p = rng.gen_range(1..=n);
            let c = uniform(&mut rng, p, n - k) * u.columns(k, n - k).transpose();
            reachable_basis = Some(u.columns(0, k).into_owned());
            (&u * blk * u.transpose(), &u * b1, c, Matrix::zeros(p, m))
        }
    };
    if stable || class == InstanceClass::Hurwitz {
        make_hurwitz(&mut a)?;
    }
    let problem = validate_problem(
        a,
        b,
        symmetrize(&(c.transpose() * &c)),
        c.transpose() * &d,
        symmetrize(&(d.transpose() * &d)),
        &Tolerances::default(),
    )?;
    Ok(Instance {
        name,
        class,
        problem,
        c,
        d,
        reachable_basis,
    })
}

pub fn documents(fam: &Family, count: usize) -> Result<Vec<ProblemDocument>, CliError> {
    (0..count)
        .map(|i| instance(fam, i).map(|inst| ProblemDocument::from_problem(&inst.name, &inst.problem)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use singlq::geometry::reachable;
    use singlq::matlib::{spectral_abscissa, Subspace, SUBSPACE_TOL};

    #[test]
    fn deterministic_and_distinct() {
        let fam = Family::new(4, InstanceClass::Quadruple, 3, 2);
        let a = documents(&fam, 3).unwrap();
        assert_eq!(a, documents(&fam, 3).unwrap());
        assert_ne!(a[0], a[1]);
        assert_eq!(documents(&fam, 0).unwrap(), vec![]);
    }

    #[test]
    fn class_structure() {
        let tol = Tolerances::default();
        for i in 0..10 {
            let r = instance(&Family::new(9, InstanceClass::Regular, 4, 2), i).unwrap();
            assert!(singlq::matlib::min_eigenvalue(r.problem.r()) >= 1.0 - 1e-12);

            let h = instance(&Family::new(9, InstanceClass::Hurwitz, 4, 2), i).unwrap();
            assert!(spectral_abscissa(h.problem.a()).unwrap() <= -0.5 + 1e-9);

            let c = instance(&Family::new(9, InstanceClass::Cheap, 4, 2).stable(), i).unwrap();
            assert!(spectral_abscissa(c.problem.a()).unwrap() <= -0.5 + 1e-9);
            assert_eq!(c.problem.r().amax(), 0.0);
            let basis = c.reachable_basis.clone().unwrap();
            let reach = reachable(c.problem.a(), c.problem.b(), &tol).unwrap();
            assert!(reach.same_as(&Subspace::from_orthonormal(basis.clone()).unwrap(), SUBSPACE_TOL));
            assert!((&c.c * &basis).amax() < 1e-12);
        }
    }

    #[test]
    fn rejects_large_dimensions() {
        for (n, m) in [(13, 2), (3, 7), (0, 1)] {
            assert!(instance(&Family::new(1, InstanceClass::Regular, n, m), 0).is_err());
        }
    }
}
