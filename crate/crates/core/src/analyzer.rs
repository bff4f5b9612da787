//! Decides the four equivalent conditions for existence of a regular optimal
//! control, synthesizes the optimal feedback and checks it by simulation.

use log::{debug, info};

use crate::error::{Error, Result};
use crate::geometry::{summarize, vstar, Finiteness, GeometricSummary, Quadruple};
use crate::matlib::{eigenvalues, matrix_exponential, Matrix, Tolerances, Vector};
use crate::model::{factor_popov, PopovFactorization, Problem};
use crate::ode::{no_cap, DormandPrince, Flow, StepControl, StopReason};
use crate::riccati::{
    cgcare_check, integrate_rde, integrate_rde_deflated, residual_floor, CgcareVerdict, RdeOptions, RdeOutcome,
    RdeStatus,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Holds,
    Fails,
    Undecided,
}

impl Verdict {
    pub fn from_flag(flag: bool) -> Self {
        if flag {
            Verdict::Holds
        } else {
            Verdict::Fails
        }
    }

    pub fn is_decided(self) -> bool {
        self != Verdict::Undecided
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Holds => "holds",
            Verdict::Fails => "fails",
            Verdict::Undecided => "undecided",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVerdicts {
    pub a: Verdict,
    pub b: Verdict,
    pub c: Verdict,
    pub d: Verdict,
    pub finiteness: Verdict,
    /// Marginal eigenvalues of `A` make the finiteness verdict sensitive.
    pub finiteness_fragile: bool,
    pub sstar_eq_rstar: bool,
    pub consistency_ok: bool,
    pub notes: Vec<String>,
}

impl ConditionVerdicts {
    pub fn any_undecided(&self) -> bool {
        [self.a, self.b, self.c, self.d].iter().any(|v| !v.is_decided())
    }
}

/// Constructive check of condition (B) through the Riccati flow.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionB {
    pub verdict: Verdict,
    pub x_bar: Option<Matrix>,
    pub rde: RdeOutcome,
    pub cgcare: Option<CgcareVerdict>,
    pub note: Option<String>,
}

pub fn check_condition_b(p: &Problem, opts: &RdeOptions, tol: &Tolerances) -> Result<ConditionB> {
    let rde = integrate_rde(p, opts)?;
    let (verdict, cgcare, note) = classify(p, &rde, tol);
    if verdict != Verdict::Holds && rde.status != RdeStatus::Converged {
        if let Some(rescued) = deflated_retry(p, opts, tol, &rde)? {
            return Ok(rescued);
        }
    }
    let x_bar = if verdict == Verdict::Holds {
        rde.x_limit.clone()
    } else {
        None
    };
    Ok(ConditionB {
        verdict,
        x_bar,
        rde,
        cgcare,
        note,
    })
}

fn classify(p: &Problem, rde: &RdeOutcome, tol: &Tolerances) -> (Verdict, Option<CgcareVerdict>, Option<String>) {
    match rde.status {
        RdeStatus::Converged => {
            let x = rde.x_limit.as_ref().expect("converged flow has a limit");
            let v = cgcare_check(x, p, tol);
            let res_ok = v.residual_norm <= (tol.residual_tol * (1.0 + p.popov_norm())).max(residual_floor(x, p));
            if v.is_solution {
                (Verdict::Holds, Some(v), None)
            } else if res_ok {
                // A bounded flow whose limit breaks the kernel constraint: had a
                // constrained solution existed, the flow would have reached one.
                let note = format!(
                    "flow limit violates the kernel constraint (‖(S+XB)G‖ = {:.3e})",
                    v.constraint_norm
                );
                (Verdict::Fails, Some(v), Some(note))
            } else {
                let note = format!("flow limit has residual {:.3e}", v.residual_norm);
                (Verdict::Undecided, Some(v), Some(note))
            }
        }
        RdeStatus::Diverged => (Verdict::Fails, None, rde.diagnostic.clone()),
        RdeStatus::HorizonExhausted => (Verdict::Undecided, None, rde.diagnostic.clone()),
    }
}

/// Reruns the flow compressed off `V*`. Every `x0 ∈ V*` admits an input
/// with zero output, so `V* ⊆ ker X(t)` along the exact flow and the
/// compressed flow differs from it only by discarded round-off. Its outcome
/// replaces the plain one when it reaches a decision; a `Holds` still needs
/// the full check of the limit.
fn deflated_retry(p: &Problem, opts: &RdeOptions, tol: &Tolerances, plain: &RdeOutcome) -> Result<Option<ConditionB>> {
    let v = vstar(&Quadruple::from_problem(p, &factor_popov(p, tol)), tol)?;
    if v.dim() == 0 {
        return Ok(None);
    }
    let rde = integrate_rde_deflated(p, opts, &v)?;
    let (verdict, cgcare, note) = classify(p, &rde, tol);
    if !verdict.is_decided() {
        return Ok(None);
    }
    debug!("flow compressed off V* (dim {}): {verdict} at t = {}", v.dim(), rde.final_time);
    let mut text = format!(
        "plain flow {:?} at t = {} ({}); used the flow compressed off V*",
        plain.status,
        plain.final_time,
        plain.diagnostic.as_deref().unwrap_or("no diagnostic")
    );
    if let Some(n) = note {
        text.push_str(&format!(": {n}"));
    }
    Ok(Some(ConditionB {
        verdict,
        x_bar: (verdict == Verdict::Holds).then(|| rde.x_limit.clone()).flatten(),
        rde,
        cgcare,
        note: Some(text),
    }))
}

/// Geometric check of condition (D).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionD {
    pub verdict: Verdict,
    pub sstar_eq_rstar: bool,
    pub finiteness: Finiteness,
    pub geometry: GeometricSummary,
}

pub fn check_condition_d(p: &Problem, fact: &PopovFactorization, tol: &Tolerances) -> Result<ConditionD> {
    let geometry = summarize(p, &Quadruple::from_problem(p, fact), tol)?;
    Ok(ConditionD {
        verdict: Verdict::from_flag(geometry.sstar_eq_rstar && geometry.finiteness.finite),
        sstar_eq_rstar: geometry.sstar_eq_rstar,
        finiteness: geometry.finiteness,
        geometry,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub verdicts: ConditionVerdicts,
    pub factorization: PopovFactorization,
    pub condition_b: ConditionB,
    pub condition_d: ConditionD,
}

impl Analysis {
    pub fn x_bar(&self) -> Option<&Matrix> {
        self.condition_b.x_bar.as_ref()
    }
}

pub fn analyze(p: &Problem, opts: &RdeOptions, tol: &Tolerances) -> Result<Analysis> {
    let fact = factor_popov(p, tol);
    let cb = check_condition_b(p, opts, tol)?;
    let cd = check_condition_d(p, &fact, tol)?;
    let mut notes = Vec::new();
    if let Some(n) = &cb.note {
        notes.push(format!("B: {n}"));
    }
    let finiteness = Verdict::from_flag(cd.finiteness.finite);
    let fragile = cd.finiteness.fragile;
    if fragile {
        notes.push("A has eigenvalues on the imaginary axis; the finiteness verdict is fragile".into());
    }

    let c = match (cb.verdict, finiteness) {
        (Verdict::Holds, _) => Verdict::Holds,
        (_, Verdict::Fails) => Verdict::Fails,
        (Verdict::Fails, _) => Verdict::Fails,
        _ => Verdict::Undecided,
    };
    notes.push("C: the symmetric-solution clause is certified only through the semidefinite solution".into());

    let a = if cb.verdict == Verdict::Holds {
        Verdict::Holds
    } else if [cb.verdict, c, cd.verdict].contains(&Verdict::Fails) {
        Verdict::Fails
    } else {
        Verdict::Undecided
    };

    let decided: Vec<(char, Verdict)> = [('A', a), ('B', cb.verdict), ('C', c), ('D', cd.verdict)]
        .into_iter()
        .filter(|(_, v)| v.is_decided())
        .collect();
    let mut consistency_ok = decided.windows(2).all(|w| w[0].1 == w[1].1);
    if !consistency_ok {
        let list: Vec<String> = decided.iter().map(|(k, v)| format!("{k} {v}")).collect();
        notes.push(format!("decided verdicts disagree: {}", list.join(", ")));
    }
    if cb.verdict == Verdict::Holds && !cd.finiteness.finite {
        consistency_ok = false;
        notes.push("a semidefinite solution exists but the finiteness test fails".into());
    }
    info!(
        "A {a}, B {}, C {c}, D {}, finiteness {finiteness}, consistent {consistency_ok}",
        cb.verdict, cd.verdict
    );
    Ok(Analysis {
        verdicts: ConditionVerdicts {
            a,
            b: cb.verdict,
            c,
            d: cd.verdict,
            finiteness,
            finiteness_fragile: fragile,
            sstar_eq_rstar: cd.sstar_eq_rstar,
            consistency_ok,
            notes,
        },
        factorization: fact,
        condition_b: cb,
        condition_d: cd,
    })
}

/// The optimal feedback `u = −Kx + Gv` built from `X̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub x_bar: Matrix,
    pub k: Matrix,
    pub a_k: Matrix,
    /// Projector onto `ker R`; `v` enters through it.
    pub g: Matrix,
}

impl Synthesis {
    pub fn optimal_cost_matrix(&self) -> &Matrix {
        &self.x_bar
    }

    /// Builds a feedback from an arbitrary gain, with `X̄ = 0` and no free
    /// input. Used to simulate laws that are not certified optimal.
    pub fn from_gain(p: &Problem, k: Matrix) -> Result<Self> {
        if k.shape() != (p.m(), p.n()) {
            return Err(Error::Dimension(format!(
                "gain is {:?}, expected {:?}",
                k.shape(),
                (p.m(), p.n())
            )));
        }
        Ok(Synthesis {
            x_bar: Matrix::zeros(p.n(), p.n()),
            a_k: p.a() - p.b() * &k,
            k,
            g: Matrix::zeros(p.m(), p.m()),
        })
    }
}

pub fn synthesize(p: &Problem, x_bar: &Matrix, tol: &Tolerances) -> Result<Synthesis> {
    crate::model::check_symmetric_x(x_bar, p.n())?;
    let v = cgcare_check(x_bar, p, tol);
    if !v.is_solution {
        return Err(Error::NotASolution {
            residual: v.residual_norm,
            constraint: v.constraint_norm,
        });
    }
    let k = p.r_pinv() * (p.s().transpose() + p.b().transpose() * x_bar);
    Ok(Synthesis {
        x_bar: x_bar.clone(),
        a_k: p.a() - p.b() * &k,
        k,
        g: p.kernel_projector().clone(),
    })
}

/// Sampled closed-loop trajectory; row `i` of `states`/`inputs` belongs to
/// `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Matrix,
    pub inputs: Matrix,
    pub running_cost: Vec<f64>,
    /// Largest relative deviation from `e^{A_K t}x0` when no free input is
    /// applied.
    pub expm_deviation: Option<f64>,
}

impl Trajectory {
    pub fn final_cost(&self) -> f64 {
        *self.running_cost.last().unwrap_or(&0.0)
    }
}

fn stage_cost(p: &Problem, x: &Vector, u: &Vector) -> f64 {
    let val = (x.transpose() * p.q() * x)[(0, 0)]
        + 2.0 * (x.transpose() * p.s() * u)[(0, 0)]
        + (u.transpose() * p.r() * u)[(0, 0)];
    val.max(0.0)
}

/// Free input `v(t)`, mapped through `G`.
pub type FreeInput<'a> = &'a dyn Fn(f64) -> Vector;

/// Integrates the closed loop `ẋ = A_K x + BGv(t)` from `x0` and accumulates
/// the cost with Simpson's rule on each sampling interval.
pub fn simulate(
    p: &Problem,
    syn: &Synthesis,
    x0: &Vector,
    v: Option<FreeInput<'_>>,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    let (n, m) = (p.n(), p.m());
    if x0.len() != n {
        return Err(Error::Dimension(format!("x0 has length {}, expected {n}", x0.len())));
    }
    if !(horizon > 0.0 && horizon.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidOption(format!(
            "need positive horizon and step, got T = {horizon}, dt = {dt}"
        )));
    }
    let steps = (horizon / dt).ceil().max(1.0) as usize;
    if steps > 5_000_000 {
        return Err(Error::InvalidOption(format!("{steps} sampling intervals requested")));
    }
    let h = horizon / steps as f64;
    let bg = p.b() * &syn.g;
    let free = |t: f64| -> Vector {
        match v {
            Some(f) => {
                let val = f(t);
                assert_eq!(val.len(), m, "free input has the wrong length");
                &syn.g * val
            }
            None => Vector::zeros(m),
        }
    };
    let input = |t: f64, x: &Vector| -> Vector { -(&syn.k * x) + free(t) };
    let rhs = |t: f64, y: &Matrix| -> Matrix {
        let x = y.column(0).into_owned();
        let mut d = &syn.a_k * &x;
        if v.is_some() {
            d += &bg * free(t);
        }
        Matrix::from_column_slice(n, 1, d.as_slice())
    };

    let scale = 1.0 + x0.amax();
    let mut dp = DormandPrince::new(
        StepControl {
            rtol: 1e-11,
            atol: 1e-13 * scale,
            h_max: h,
            ..Default::default()
        },
        h.min(1e-3),
    );
    let mut y = Matrix::from_column_slice(n, 1, x0.as_slice());
    let mut t = 0.0;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Matrix::zeros(steps + 1, n);
    let mut inputs = Matrix::zeros(steps + 1, m);
    let mut running = Vec::with_capacity(steps + 1);
    let mut advance = |t: &mut f64, y: &mut Matrix, to: f64| -> Result<()> {
        match dp.integrate(rhs, t, y, to, no_cap, |_| {}, |_, _| Flow::Continue) {
            StopReason::Reached => Ok(()),
            r => Err(Error::IntegrationFailed {
                t: *t,
                reason: format!("{r:?}"),
            }),
        }
    };

    let mut x = x0.clone();
    let mut u = input(0.0, &x);
    let mut ell = stage_cost(p, &x, &u);
    times.push(0.0);
    states.set_row(0, &x.transpose());
    inputs.set_row(0, &u.transpose());
    running.push(0.0);
    let mut cost = 0.0;
    for k in 1..=steps {
        let t_mid = (k as f64 - 0.5) * h;
        let t_k = if k == steps { horizon } else { k as f64 * h };
        advance(&mut t, &mut y, t_mid)?;
        let xm = y.column(0).into_owned();
        let ell_mid = stage_cost(p, &xm, &input(t_mid, &xm));
        advance(&mut t, &mut y, t_k)?;
        x = y.column(0).into_owned();
        u = input(t_k, &x);
        let ell_next = stage_cost(p, &x, &u);
        cost += (t_k - (k as f64 - 1.0) * h) / 6.0 * (ell + 4.0 * ell_mid + ell_next);
        ell = ell_next;
        times.push(t_k);
        states.set_row(k, &x.transpose());
        inputs.set_row(k, &u.transpose());
        running.push(cost);
    }

    let expm_deviation = if v.is_none() {
        let stride = (steps / 16).max(1);
        let mut worst: f64 = 0.0;
        for k in (0..=steps).step_by(stride).chain(std::iter::once(steps)) {
            let expected = matrix_exponential(&(&syn.a_k * times[k])) * x0;
            let got = states.row(k).transpose();
            worst = worst.max((got - &expected).norm() / (1.0 + expected.norm()));
        }
        Some(worst)
    } else {
        None
    };
    debug!(
        "simulated {steps} intervals to T = {horizon}, cost {cost:.12e}, {} integrator steps",
        dp.steps_taken
    );
    Ok(Trajectory {
        times,
        states,
        inputs,
        running_cost: running,
        expm_deviation,
    })
}

/// Horizon and sampling step for checking `x0ᵀX̄x0` by simulation.
pub fn verification_grid(a_k: &Matrix) -> Result<(f64, f64)> {
    let eig = eigenvalues(a_k)?;
    let slowest = eig
        .iter()
        .map(|&(re, _)| re)
        .filter(|&re| re < -1e-12)
        .fold(f64::NEG_INFINITY, f64::max);
    let horizon = if slowest.is_finite() {
        (40.0 / slowest.abs()).clamp(20.0, 1e4)
    } else {
        20.0
    };
    let radius = eig
        .iter()
        .map(|&(re, im)| re.hypot(im))
        .fold(0.0, f64::max);
    let dt = (horizon / 2000.0).min(0.25 / radius.max(1e-12)).max(horizon / 1e5);
    Ok((horizon, dt))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostCheck {
    pub verdict: Verdict,
    pub predicted: f64,
    pub simulated: f64,
    pub horizon: f64,
    /// `|J(T) − x0ᵀX̄x0| / (1 + x0ᵀX̄x0)`.
    pub relative_error: f64,
    /// Stage cost at the horizon.
    pub tail: f64,
}

/// Simulates the optimal closed loop with `v ≡ 0` and compares the cost with
/// `x0ᵀX̄x0`. Undecided when the stage cost has not decayed by the horizon.
pub fn verify_optimal_cost(p: &Problem, syn: &Synthesis, x0: &Vector) -> Result<CostCheck> {
    let predicted = (x0.transpose() * &syn.x_bar * x0)[(0, 0)];
    let (horizon, dt) = verification_grid(&syn.a_k)?;
    let traj = simulate(p, syn, x0, None, horizon, dt)?;
    let last = traj.times.len() - 1;
    let xt = traj.states.row(last).transpose();
    let ut = traj.inputs.row(last).transpose();
    let tail = stage_cost(p, &xt, &ut);
    let simulated = traj.final_cost();
    let relative_error = (simulated - predicted).abs() / (1.0 + predicted.abs());
    let verdict = Verdict::from_flag(tail <= 1e-10 * (1.0 + predicted.abs()));
    let verdict = if verdict == Verdict::Holds {
        Verdict::Holds
    } else {
        Verdict::Undecided
    };
    Ok(CostCheck {
        verdict,
        predicted,
        simulated,
        horizon,
        relative_error,
        tail,
    })
}
