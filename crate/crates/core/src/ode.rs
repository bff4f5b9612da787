//! Adaptive Dormand–Prince 5(4) integrator for matrix-valued ODEs.

use crate::matlib::Matrix;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    /// Steps shorter than `h_min_rel * max(1, |t|)` count as underflow.
    pub h_min_rel: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-8,
            atol: 1e-10,
            h_max: f64::INFINITY,
            h_min_rel: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Reached the requested end time.
    Reached,
    /// The step callback asked to stop.
    Requested,
    /// The step size collapsed.
    Underflow,
    /// Step budget exhausted.
    Budget,
}

/// Stateful integrator: carries the step size across successive calls so
/// that integrating over a grid of output times stays cheap.
#[derive(Debug, Clone)]
pub struct DormandPrince {
    pub control: StepControl,
    pub h: f64,
    pub max_steps: usize,
    pub steps_taken: usize,
}

impl DormandPrince {
    pub fn new(control: StepControl, h0: f64) -> Self {
        DormandPrince {
            control,
            h: h0,
            max_steps: 2_000_000,
            steps_taken: 0,
        }
    }

    fn error_norm(&self, y: &Matrix, y_new: &Matrix, err: &Matrix) -> f64 {
        let c = &self.control;
        let mut acc = 0.0;
        for ((e, a), b) in err.iter().zip(y.iter()).zip(y_new.iter()) {
            let sc = c.atol + c.rtol * a.abs().max(b.abs());
            acc += (e / sc) * (e / sc);
        }
        (acc / err.len().max(1) as f64).sqrt()
    }

    /// One trial step of size `h` from `(t0, y)` with `k1 = f(t0, y)`.
    /// Returns the candidate state and the scaled error norm.
    fn trial<F>(&self, f: &F, t0: f64, y: &Matrix, k1: &Matrix, h: f64) -> (Matrix, f64)
    where
        F: Fn(f64, &Matrix) -> Matrix,
    {
        let k2 = f(t0 + C2 * h, &(y + k1 * (h * A21)));
        let k3 = f(t0 + C3 * h, &(y + (k1 * A31 + &k2 * A32) * h));
        let k4 = f(t0 + C4 * h, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h));
        let k5 = f(
            t0 + C5 * h,
            &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
        );
        let k6 = f(
            t0 + h,
            &(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
        );
        let y_new = y + (k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * h;
        let k7 = f(t0 + h, &y_new);
        let err = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
        let en = self.error_norm(y, &y_new, &err);
        (y_new, en)
    }

    fn growth(en: f64) -> f64 {
        if en == 0.0 {
            5.0
        } else {
            (0.9 * en.powf(-0.2)).clamp(0.2, 5.0)
        }
    }

    /// Advances `y` from `*t` to `t_end`. After every accepted step `project`
    /// may adjust the state in place and `on_step` sees the result. `cap`
    /// bounds the next step given the current state, on top of
    /// `control.h_max`.
    ///
    /// Trial steps are never shortened in advance to hit `t_end`: an accepted
    /// step that would overshoot is replaced by one landing exactly on it. The
    /// accepted steps before `t_end` therefore depend only on the initial
    /// data, so two runs with different end times agree bit for bit on their
    /// common prefix.
    #[allow(clippy::too_many_arguments)]
    pub fn integrate<F, C, P, S>(
        &mut self,
        f: F,
        t: &mut f64,
        y: &mut Matrix,
        t_end: f64,
        cap: C,
        mut project: P,
        mut on_step: S,
    ) -> StopReason
    where
        F: Fn(f64, &Matrix) -> Matrix,
        C: Fn(&Matrix) -> f64,
        P: FnMut(&mut Matrix),
        S: FnMut(f64, &Matrix) -> Flow,
    {
        if *t >= t_end {
            return StopReason::Reached;
        }
        let mut k1 = f(*t, y);
        let mut h_cap = cap(y).min(self.control.h_max);
        let mut landing = false;
        loop {
            if self.steps_taken >= self.max_steps {
                return StopReason::Budget;
            }
            let t0 = *t;
            let h = if landing {
                t_end - t0
            } else {
                self.h.min(h_cap)
            };
            if h <= self.control.h_min_rel * t0.abs().max(1.0) && !(landing && h > 0.0) {
                return StopReason::Underflow;
            }
            let (y_new, en) = self.trial(&f, t0, y, &k1, h);
            self.steps_taken += 1;
            if !en.is_finite() || en > 1.0 {
                let shrink = if en.is_finite() { Self::growth(en).min(1.0) } else { 0.2 };
                if landing {
                    // landing step rejected: fall back to ordinary steps
                    landing = false;
                }
                self.h = h * shrink;
                continue;
            }
            let t_new = t0 + h;
            if !landing && t_new > t_end {
                landing = true;
                continue;
            }
            let reached = landing || t_new == t_end;
            *t = if reached { t_end } else { t_new };
            *y = y_new;
            project(y);
            if !landing {
                self.h = h * Self::growth(en);
            }
            landing = false;
            if on_step(*t, y) == Flow::Stop {
                return StopReason::Requested;
            }
            if reached {
                return StopReason::Reached;
            }
            k1 = f(*t, y);
            h_cap = cap(y).min(self.control.h_max);
        }
    }
}

/// A `cap` that imposes nothing.
pub fn no_cap(_: &Matrix) -> f64 {
    f64::INFINITY
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn exponential_decay() {
        let mut dp = DormandPrince::new(StepControl::default(), 1e-3);
        let mut t = 0.0;
        let mut y = dmatrix![1.0];
        let r = dp.integrate(|_, y| -y, &mut t, &mut y, 3.0, no_cap, |_| {}, |_, _| Flow::Continue);
        assert_eq!(r, StopReason::Reached);
        assert_eq!(t, 3.0);
        assert!((y[(0, 0)] - (-3.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn harmonic_oscillator_matrix_state() {
        let mut dp = DormandPrince::new(
            StepControl {
                rtol: 1e-10,
                atol: 1e-12,
                ..Default::default()
            },
            1e-2,
        );
        let mut t = 0.0;
        let mut y = dmatrix![1.0, 0.0; 0.0, 1.0];
        let rot = dmatrix![0.0, 1.0; -1.0, 0.0];
        dp.integrate(|_, y| &rot * y, &mut t, &mut y, 1.0, no_cap, |_| {}, |_, _| Flow::Continue);
        let expect = dmatrix![1f64.cos(), 1f64.sin(); -1f64.sin(), 1f64.cos()];
        assert!((y - expect).amax() < 1e-9);
    }

    #[test]
    fn callback_can_stop() {
        let mut dp = DormandPrince::new(StepControl::default(), 0.1);
        let mut t = 0.0;
        let mut y = dmatrix![0.0];
        let mut n = 0;
        let r = dp.integrate(
            |_, _| dmatrix![1.0],
            &mut t,
            &mut y,
            100.0,
            no_cap,
            |_| {},
            |_, _| {
                n += 1;
                if n == 3 {
                    Flow::Stop
                } else {
                    Flow::Continue
                }
            },
        );
        assert_eq!(r, StopReason::Requested);
        assert_eq!(n, 3);
    }
}
