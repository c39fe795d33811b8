//! Levenberg–Marquardt for small dense least-squares problems, with
//! Marquardt's diagonal scaling (the running maximum of diag JᵀJ) so that
//! parameters of very different magnitude are damped evenly.

use nalgebra::DMatrix;

use crate::scalar::{cholesky_solve, Real};

/// A residual vector r(p) ∈ ℝᵐ with Jacobian.
pub trait LeastSquares<T: Real> {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;

    /// Fills `r` and, when requested, the row-major m × n Jacobian. Returns
    /// false when the point is not evaluable (non-finite values).
    fn eval(&self, p: &[T], r: &mut [T], jac: Option<&mut [T]>) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions<T> {
    pub max_iterations: usize,
    /// Relative reduction of the cost below which an accepted step counts as
    /// converged.
    pub ftol: T,
    /// Relative step length convergence threshold.
    pub xtol: T,
    /// Scaled-gradient convergence threshold.
    pub gtol: T,
    /// Stop with [`Termination::SlowProgress`] once the last `progress_window`
    /// accepted steps together reduced the cost by less than this fraction.
    /// Zero disables the check.
    pub progress_tol: T,
    pub progress_window: usize,
}

impl<T: Real> Default for LmOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            ftol: T::of(1e-10),
            xtol: T::of(1e-10),
            gtol: T::of(1e-12),
            progress_tol: T::zero(),
            progress_window: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    SmallReduction,
    SmallStep,
    SmallGradient,
    ZeroResidual,
    MaxIterations,
    /// Damping grew without finding a decreasing step.
    Stalled,
    /// Accepted steps kept reducing the cost, but too slowly to matter.
    SlowProgress,
    NotEvaluable,
}

impl Termination {
    pub fn converged(self) -> bool {
        !matches!(self, Termination::MaxIterations | Termination::NotEvaluable)
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome<T> {
    pub params: Vec<T>,
    /// Σ r² at `params`.
    pub cost: T,
    /// Cost after the start and after every accepted step.
    pub history: Vec<T>,
    pub iterations: usize,
    pub termination: Termination,
}

fn sum_sq<T: Real>(r: &[T]) -> T {
    r.iter().map(|x| *x * *x).sum()
}

pub fn levenberg_marquardt<T: Real, P: LeastSquares<T>>(problem: &P, p0: &[T], opts: &LmOptions<T>) -> LmOutcome<T> {
    let n = problem.n_params();
    let m = problem.n_residuals();
    let mut p = p0.to_vec();
    let mut r = vec![T::zero(); m];
    let mut jac = vec![T::zero(); m * n];
    if !problem.eval(&p, &mut r, Some(&mut jac)) {
        return LmOutcome {
            cost: T::infinity(),
            params: p,
            history: Vec::new(),
            iterations: 0,
            termination: Termination::NotEvaluable,
        };
    }
    let mut cost = sum_sq(&r);
    let mut history = vec![cost];
    let mut scale = vec![T::zero(); n];
    let mut mu = T::of(1e-3);
    let mut nu = T::of(2.0);
    let mut r_trial = vec![T::zero(); m];
    let mut jac_trial = vec![T::zero(); m * n];
    let mut jtj = vec![T::zero(); n * n];
    let mut grad = vec![T::zero(); n];
    let mut fresh = true;
    let mut iterations = 0;

    let termination = loop {
        if cost == T::zero() {
            break Termination::ZeroResidual;
        }
        if fresh {
            // JᵀJ and Jᵀr; the product goes through a blocked f64 kernel
            let jm = DMatrix::from_fn(m, n, |k, i| jac[k * n + i].as_f64());
            let prod = jm.transpose() * &jm;
            for i in 0..n {
                grad[i] = (0..m).map(|k| jac[k * n + i] * r[k]).sum();
                for j in 0..n {
                    jtj[i * n + j] = T::of(prod[(i, j)]);
                }
                scale[i] = scale[i].max(jtj[i * n + i]);
            }
            let gmax = (0..n)
                .map(|i| {
                    let s = scale[i].sqrt();
                    if s > T::zero() {
                        grad[i].abs() / (s * cost.sqrt())
                    } else {
                        T::zero()
                    }
                })
                .fold(T::zero(), T::max);
            if gmax <= opts.gtol {
                break Termination::SmallGradient;
            }
            fresh = false;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let floor = scale.iter().fold(T::zero(), |a, b| a.max(*b)) * T::epsilon();
        let mut a = jtj.clone();
        for i in 0..n {
            a[i * n + i] += mu * scale[i].max(floor);
        }
        let rhs: Vec<T> = grad.iter().map(|g| -*g).collect();
        let Some(step) = cholesky_solve(n, &a, &rhs) else {
            mu *= nu;
            nu *= T::of(2.0);
            if mu > T::of(1e30) {
                break Termination::Stalled;
            }
            continue;
        };
        let pnorm = p.iter().map(|x| *x * *x).sum::<T>().sqrt();
        let snorm = step.iter().map(|x| *x * *x).sum::<T>().sqrt();
        let trial: Vec<T> = p.iter().zip(&step).map(|(a, b)| *a + *b).collect();
        let ok = problem.eval(&trial, &mut r_trial, Some(&mut jac_trial));
        let cost_trial = if ok { sum_sq(&r_trial) } else { T::infinity() };
        // predicted reduction of the local quadratic model: −(2gᵀs + sᵀJᵀJs)
        let mut predicted = T::zero();
        for i in 0..n {
            let mut js = T::zero();
            for j in 0..n {
                js += jtj[i * n + j] * step[j];
            }
            predicted -= step[i] * (T::of(2.0) * grad[i] + js);
        }
        let actual = cost - cost_trial;
        if ok && cost_trial.is_finite() && actual > T::zero() && predicted > T::zero() {
            let rho = actual / predicted;
            p = trial;
            std::mem::swap(&mut r, &mut r_trial);
            std::mem::swap(&mut jac, &mut jac_trial);
            let old = cost;
            cost = cost_trial;
            history.push(cost);
            fresh = true;
            let t = T::of(2.0) * rho - T::one();
            mu *= (T::one() - t * t * t).max(T::one() / T::of(3.0));
            mu = mu.max(T::of(1e-15));
            nu = T::of(2.0);
            if actual <= opts.ftol * old && predicted <= opts.ftol * old {
                break Termination::SmallReduction;
            }
            if snorm <= opts.xtol * (pnorm + opts.xtol) {
                break Termination::SmallStep;
            }
            let w = opts.progress_window;
            if opts.progress_tol > T::zero() && w > 0 && history.len() > w {
                let before = history[history.len() - 1 - w];
                if before - cost <= opts.progress_tol * before {
                    break Termination::SlowProgress;
                }
            }
        } else {
            if snorm <= opts.xtol * (pnorm + opts.xtol) {
                break Termination::SmallStep;
            }
            mu *= nu;
            nu *= T::of(2.0);
            if mu > T::of(1e30) {
                break Termination::Stalled;
            }
        }
    };
    LmOutcome {
        params: p,
        cost,
        history,
        iterations,
        termination,
    }
}
