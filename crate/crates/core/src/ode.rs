//! Adaptive Dormand–Prince 5(4) integrator for complex state vectors, with
//! FSAL stepping and the fourth-order continuous extension used to report
//! solutions on an output grid independent of the internal steps.

use crate::error::{Error, Result};
use crate::scalar::{Cplx, Real};

/// Right-hand side y' = f(t, y).
pub trait OdeSystem<T: Real> {
    fn dim(&self) -> usize;
    fn rhs(&self, t: T, y: &[Cplx<T>], dy: &mut [Cplx<T>]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Receives interpolated outputs and accepted steps.
pub trait Observer<T: Real> {
    /// Called once per requested output time, in order.
    fn output(&mut self, index: usize, t: T, y: &[Cplx<T>]) -> Control;

    /// Called after each accepted step with the new state, the embedded
    /// local error estimate and f(t_new, y_new).
    fn step(&mut self, _t_new: T, _y_new: &[Cplx<T>], _local_error: &[Cplx<T>], _dy_new: &[Cplx<T>]) -> Control {
        Control::Continue
    }
}

/// Mixed relative/absolute local error tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance<T> {
    pub rtol: T,
    pub atol: T,
}

impl<T: Real> Tolerance<T> {
    /// `rtol` with `atol = rtol / 100`.
    pub fn new(rtol: T) -> Self {
        Self {
            rtol,
            atol: rtol * T::of(1e-2),
        }
    }
}

impl<T: Real> Default for Tolerance<T> {
    fn default() -> Self {
        Self {
            rtol: T::of(1e-8),
            atol: T::of(1e-10),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DormandPrince<T> {
    pub tol: Tolerance<T>,
    pub h_init: Option<T>,
    pub h_max: Option<T>,
    pub max_steps: usize,
}

impl<T: Real> DormandPrince<T> {
    pub fn new(tol: Tolerance<T>) -> Self {
        Self {
            tol,
            h_init: None,
            h_max: None,
            max_steps: 10_000_000,
        }
    }
}

// Butcher tableau.
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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// y5 − y4
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn lin<T: Real>(out: &mut [Cplx<T>], y: &[Cplx<T>], h: T, terms: &[(f64, &[Cplx<T>])]) {
    let coefs: Vec<T> = terms.iter().map(|(c, _)| h * T::of(*c)).collect();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = y[i];
        for (c, (_, k)) in coefs.iter().zip(terms) {
            acc.re += *c * k[i].re;
            acc.im += *c * k[i].im;
        }
        *o = acc;
    }
}

impl<T: Real> DormandPrince<T> {
    fn error_norm(&self, y0: &[Cplx<T>], y1: &[Cplx<T>], err: &[Cplx<T>]) -> T {
        let mut sum = T::zero();
        for i in 0..y0.len() {
            let sc = self.tol.atol + self.tol.rtol * y0[i].norm().max(y1[i].norm());
            sum += err[i].norm_sqr() / (sc * sc);
        }
        (sum / T::of_usize(y0.len().max(1))).sqrt()
    }

    fn initial_step<S: OdeSystem<T>>(&self, sys: &S, t0: T, y0: &[Cplx<T>], f0: &[Cplx<T>], span: T) -> T {
        let n = y0.len();
        let scale = |i: usize| self.tol.atol + self.tol.rtol * y0[i].norm();
        let rms = |v: &dyn Fn(usize) -> T| {
            let s: T = (0..n).map(|i| v(i) * v(i)).sum();
            (s / T::of_usize(n.max(1))).sqrt()
        };
        let d0 = rms(&|i| y0[i].norm() / scale(i));
        let d1 = rms(&|i| f0[i].norm() / scale(i));
        let mut h0 = if d0 < T::of(1e-5) || d1 < T::of(1e-5) {
            T::of(1e-6)
        } else {
            T::of(0.01) * d0 / d1
        };
        h0 = h0.min(span);
        let mut y1 = vec![Cplx::new(T::zero(), T::zero()); n];
        for i in 0..n {
            y1[i] = y0[i] + f0[i] * h0;
        }
        let mut f1 = vec![Cplx::new(T::zero(), T::zero()); n];
        sys.rhs(t0 + h0, &y1, &mut f1);
        let d2 = rms(&|i| (f1[i] - f0[i]).norm() / scale(i)) / h0;
        let h1 = if d1.max(d2) <= T::of(1e-15) {
            (h0 * T::of(1e-3)).max(T::of(1e-6))
        } else {
            (T::of(0.01) / d1.max(d2)).powf(T::of(0.2))
        };
        (T::of(100.0) * h0).min(h1).min(span)
    }

    /// Integrates from `t0` over the (sorted, ≥ t0) `outputs` grid.
    pub fn integrate<S, O>(&self, sys: &S, t0: T, y0: &[Cplx<T>], outputs: &[T], obs: &mut O) -> Result<Stats>
    where
        S: OdeSystem<T>,
        O: Observer<T>,
    {
        let n = sys.dim();
        if y0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y0.len() });
        }
        if outputs.windows(2).any(|w| w[1] < w[0]) || outputs.first().is_some_and(|t| *t < t0) {
            return Err(Error::invalid("output times must be sorted and not before t0"));
        }
        let mut stats = Stats::default();
        let Some(&t_end) = outputs.last() else {
            return Ok(stats);
        };
        let zero = Cplx::new(T::zero(), T::zero());
        let mut y = y0.to_vec();
        let mut next_out = 0;
        while next_out < outputs.len() && outputs[next_out] <= t0 {
            if obs.output(next_out, outputs[next_out], &y) == Control::Stop {
                return Ok(stats);
            }
            next_out += 1;
        }
        if next_out == outputs.len() {
            return Ok(stats);
        }

        let mut k1 = vec![zero; n];
        let mut k2 = vec![zero; n];
        let mut k3 = vec![zero; n];
        let mut k4 = vec![zero; n];
        let mut k5 = vec![zero; n];
        let mut k6 = vec![zero; n];
        let mut k7 = vec![zero; n];
        let mut ytmp = vec![zero; n];
        let mut ynew = vec![zero; n];
        let mut err = vec![zero; n];
        let mut interp = vec![zero; n];

        sys.rhs(t0, &y, &mut k1);
        stats.rhs_evals += 1;
        let span = t_end - t0;
        let h_max = self.h_max.unwrap_or(span).min(span);
        let mut h = self.h_init.unwrap_or_else(|| {
            stats.rhs_evals += 1;
            self.initial_step(sys, t0, &y, &k1, span)
        });
        h = h.min(h_max);
        let mut t = t0;
        let mut err_prev = T::of(1e-4);
        let mut last_rejected = false;
        let h_floor = T::of(16.0) * T::epsilon() * t_end.abs().max(T::one());

        loop {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(Error::Integration {
                    t: t.as_f64(),
                    reason: format!("exceeded {} steps", self.max_steps),
                });
            }
            if t + h > t_end {
                h = t_end - t;
            }
            if h < h_floor {
                return Err(Error::Integration {
                    t: t.as_f64(),
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
            lin(&mut ytmp, &y, h, &[(A21, &k1)]);
            sys.rhs(t + h * T::of(C2), &ytmp, &mut k2);
            lin(&mut ytmp, &y, h, &[(A31, &k1), (A32, &k2)]);
            sys.rhs(t + h * T::of(C3), &ytmp, &mut k3);
            lin(&mut ytmp, &y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
            sys.rhs(t + h * T::of(C4), &ytmp, &mut k4);
            lin(&mut ytmp, &y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
            sys.rhs(t + h * T::of(C5), &ytmp, &mut k5);
            lin(&mut ytmp, &y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
            sys.rhs(t + h, &ytmp, &mut k6);
            lin(&mut ynew, &y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            sys.rhs(t + h, &ynew, &mut k7);
            stats.rhs_evals += 6;
            for i in 0..n {
                let e = k1[i] * T::of(E1)
                    + k3[i] * T::of(E3)
                    + k4[i] * T::of(E4)
                    + k5[i] * T::of(E5)
                    + k6[i] * T::of(E6)
                    + k7[i] * T::of(E7);
                err[i] = e * h;
            }
            let en = self.error_norm(&y, &ynew, &err);
            if !en.is_finite() {
                stats.rejected += 1;
                h *= T::of(0.2);
                last_rejected = true;
                continue;
            }
            if en <= T::one() {
                // accepted: PI step-size control
                let t_new = t + h;
                let t_new = if t_end - t_new <= h_floor { t_end } else { t_new };
                // dense output for every output time in (t, t_new]
                while next_out < outputs.len() && outputs[next_out] <= t_new {
                    let theta = (outputs[next_out] - t) / h;
                    dense(&mut interp, &y, &ynew, &k1, &k3, &k4, &k5, &k6, &k7, h, theta);
                    if obs.output(next_out, outputs[next_out], &interp) == Control::Stop {
                        stats.accepted += 1;
                        return Ok(stats);
                    }
                    next_out += 1;
                }
                stats.accepted += 1;
                if obs.step(t_new, &ynew, &err, &k7) == Control::Stop {
                    return Ok(stats);
                }
                t = t_new;
                std::mem::swap(&mut y, &mut ynew);
                std::mem::swap(&mut k1, &mut k7);
                if next_out == outputs.len() {
                    return Ok(stats);
                }
                let en_c = en.max(T::of(1e-10));
                let mut fac = T::of(0.9) * en_c.powf(T::of(-0.17)) * err_prev.powf(T::of(0.04));
                fac = fac.max(T::of(0.2)).min(T::of(10.0));
                if last_rejected {
                    fac = fac.min(T::one());
                }
                err_prev = en_c;
                h = (h * fac).min(h_max);
                last_rejected = false;
            } else {
                stats.rejected += 1;
                let fac = (T::of(0.9) * en.powf(T::of(-0.2))).max(T::of(0.2));
                h *= fac;
                last_rejected = true;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dense<T: Real>(
    out: &mut [Cplx<T>],
    y0: &[Cplx<T>],
    y1: &[Cplx<T>],
    k1: &[Cplx<T>],
    k3: &[Cplx<T>],
    k4: &[Cplx<T>],
    k5: &[Cplx<T>],
    k6: &[Cplx<T>],
    k7: &[Cplx<T>],
    h: T,
    theta: T,
) {
    let theta1 = T::one() - theta;
    for i in 0..out.len() {
        let r2 = y1[i] - y0[i];
        let r3 = k1[i] * h - r2;
        let r4 = r2 - k7[i] * h - r3;
        let r5 = (k1[i] * T::of(D1)
            + k3[i] * T::of(D3)
            + k4[i] * T::of(D4)
            + k5[i] * T::of(D5)
            + k6[i] * T::of(D6)
            + k7[i] * T::of(D7))
            * h;
        out[i] = y0[i] + (r2 + (r3 + (r4 + r5 * theta1) * theta) * theta1) * theta;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;

    struct Rotation {
        omega: f64,
        decay: f64,
    }

    impl OdeSystem<f64> for Rotation {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[Cplx<f64>], dy: &mut [Cplx<f64>]) {
            dy[0] = cplx(-self.decay, -self.omega) * y[0];
        }
    }

    struct Collect(Vec<(f64, Cplx<f64>)>);

    impl Observer<f64> for Collect {
        fn output(&mut self, _i: usize, t: f64, y: &[Cplx<f64>]) -> Control {
            self.0.push((t, y[0]));
            Control::Continue
        }
    }

    #[test]
    fn damped_rotation_matches_closed_form() {
        let sys = Rotation { omega: 3.0, decay: 0.2 };
        let grid: Vec<f64> = (0..=200).map(|k| k as f64 * 0.05).collect();
        let mut c = Collect(Vec::new());
        let dp = DormandPrince::new(Tolerance { rtol: 1e-10, atol: 1e-12 });
        dp.integrate(&sys, 0.0, &[cplx(1.0, 0.0)], &grid, &mut c).unwrap();
        assert_eq!(c.0.len(), grid.len());
        for (t, y) in c.0 {
            let exact = cplx(-0.2 * t, -3.0 * t).exp();
            assert!((y - exact).norm() < 1e-8, "t={t}: {y} vs {exact}");
        }
    }

    #[test]
    fn tighter_tolerance_is_more_accurate() {
        let sys = Rotation { omega: 5.0, decay: 0.0 };
        let grid = [7.3];
        let run = |rtol: f64| {
            let mut c = Collect(Vec::new());
            DormandPrince::new(Tolerance::new(rtol))
                .integrate(&sys, 0.0, &[cplx(1.0, 0.0)], &grid, &mut c)
                .unwrap();
            (c.0[0].1 - cplx(0.0, -5.0 * 7.3).exp()).norm()
        };
        assert!(run(1e-9) < run(1e-5));
    }

    #[test]
    fn outputs_at_start_time_are_reported() {
        let sys = Rotation { omega: 1.0, decay: 0.0 };
        let mut c = Collect(Vec::new());
        DormandPrince::new(Tolerance::default())
            .integrate(&sys, 0.0, &[cplx(1.0, 0.0)], &[0.0, 0.0, 1.0], &mut c)
            .unwrap();
        assert_eq!(c.0.len(), 3);
        assert_eq!(c.0[0].1, cplx(1.0, 0.0));
    }

    #[test]
    fn unsorted_outputs_are_rejected() {
        let sys = Rotation { omega: 1.0, decay: 0.0 };
        let mut c = Collect(Vec::new());
        let r = DormandPrince::new(Tolerance::default()).integrate(&sys, 0.0, &[cplx(1.0, 0.0)], &[1.0, 0.5], &mut c);
        assert!(r.is_err());
    }

    struct Blowup;

    impl OdeSystem<f64> for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[Cplx<f64>], dy: &mut [Cplx<f64>]) {
            dy[0] = y[0] * y[0];
        }
    }

    #[test]
    fn finite_time_blowup_reports_failure() {
        // y' = y², y(0) = 1 blows up at t = 1
        let mut c = Collect(Vec::new());
        let err = DormandPrince::new(Tolerance::default())
            .integrate(&Blowup, 0.0, &[cplx(1.0, 0.0)], &[2.0], &mut c)
            .unwrap_err();
        match err {
            Error::Integration { t, ref reason } => assert!((t - 1.0).abs() < 1e-3, "{t} {reason}"),
            other => panic!("{other:?}"),
        }
    }
}
