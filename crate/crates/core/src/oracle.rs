//! Reference dynamics: the continuum is replaced by many lossless modes on a
//! uniform frequency grid, and the closed emitter + modes system is
//! propagated as a state vector. The result is exact up to the recurrence
//! time 2π/Δω of the discretized bath and the excitation truncation.

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::fock::{build_hamiltonian, Basis, BasisSpec, EmitterSpec, EmitterState, OperatorMatrix, Parity};
use crate::ode::{Control, DormandPrince, Observer, OdeSystem, Tolerance};
use crate::scalar::{cplx, Cplx, Real};
use crate::spectral::{ModeModel, SpectralDensity};
use crate::units::EnergyUnit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationSpec<T> {
    pub omega_min: T,
    pub omega_max: T,
    pub n_points: usize,
    #[serde(default)]
    pub scheme: Scheme,
}

impl<T: Real> DiscretizationSpec<T> {
    pub fn uniform(omega_min: T, omega_max: T, n_points: usize) -> Self {
        Self {
            omega_min,
            omega_max,
            n_points,
            scheme: Scheme::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_min < self.omega_max) {
            return Err(Error::invalid("discretization window must have omega_min < omega_max"));
        }
        if self.n_points < 2 {
            return Err(Error::invalid("discretization needs at least 2 points"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> T {
        (self.omega_max - self.omega_min) / T::of_usize(self.n_points)
    }

    /// 2π/Δω.
    pub fn recurrence_time(&self) -> T {
        T::TAU() / self.spacing()
    }

    /// Cell midpoints.
    pub fn nodes(&self) -> Vec<T> {
        let d = self.spacing();
        (0..self.n_points)
            .map(|k| self.omega_min + d * (T::of_usize(k) + T::of(0.5)))
            .collect()
    }

    /// Same window with twice the points.
    pub fn doubled(&self) -> Self {
        Self {
            n_points: 2 * self.n_points,
            ..*self
        }
    }
}

/// Diagonal lossless model with ω_k at the cell midpoints and
/// g_k = √(J(ω_k)Δω).
pub fn discretize<T: Real, S: SpectralDensity<T> + ?Sized>(target: &S, d: &DiscretizationSpec<T>) -> Result<ModeModel<T>> {
    d.validate()?;
    let dw = d.spacing();
    let nodes = d.nodes();
    let mut g = Vec::with_capacity(nodes.len());
    for w in &nodes {
        let j = target.eval(*w);
        if !j.is_finite() || j < T::zero() {
            return Err(Error::TargetNotEvaluable {
                omega: w.as_f64(),
                reason: format!("discretization needs J ≥ 0, got {j}"),
            });
        }
        g.push((j * dw).sqrt());
    }
    ModeModel::diagonal_closed(&nodes, g)
}

struct Schrodinger<'a, T> {
    h: &'a OperatorMatrix<T>,
}

impl<T: Real> OdeSystem<T> for Schrodinger<'_, T> {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn rhs(&self, _t: T, y: &[Cplx<T>], dy: &mut [Cplx<T>]) {
        self.h.mul_vec(y, dy);
        for v in dy.iter_mut() {
            *v = cplx(v.im, -v.re);
        }
    }
}

struct StateRecorder<'a, T> {
    basis: &'a Basis,
    traj: Trajectory<T>,
    err: T,
}

impl<T: Real> Observer<T> for StateRecorder<'_, T> {
    fn output(&mut self, _i: usize, t: T, y: &[Cplx<T>]) -> Control {
        let mut pe = T::zero();
        let mut norm = T::zero();
        let mut n = vec![T::zero(); self.basis.n_modes()];
        for (s, a) in self.basis.states().iter().zip(y) {
            let p = a.norm_sqr();
            norm += p;
            if s.is_excited() {
                pe += p;
            }
            for &m in s.photons() {
                n[m as usize] += p;
            }
        }
        self.traj.times.push(t);
        self.traj.emitter_population.push(pe);
        self.traj.mode_populations.push(n);
        self.traj.bath_photons.push(T::zero());
        self.traj.purity.push(norm * norm);
        self.traj.trace_defect.push((norm - T::one()).abs());
        self.traj.error_bound.push(self.err);
        Control::Continue
    }

    fn step(&mut self, _t: T, _y: &[Cplx<T>], e: &[Cplx<T>], _dy: &[Cplx<T>]) -> Control {
        // |Δ⟨O⟩| ≤ 2‖O‖‖δψ‖ for a normalized state
        self.err += T::of(2.0) * e.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
        Control::Continue
    }
}

/// Propagates emitter ⊗ vacuum under the closed Hamiltonian of `model`.
///
/// The Hamiltonian conserves the parity of the total excitation number, so
/// when `spec` has no parity set the matching sector of the initial state is
/// used. `recurrence_time`, when given, is stored on the trajectory and sets
/// the warning flag if the grid runs past it.
pub fn exact_propagate<T: Real>(
    model: &ModeModel<T>,
    emitter: &EmitterSpec<T>,
    spec: &BasisSpec,
    t_grid: &[T],
    tol: Tolerance<T>,
    recurrence_time: Option<T>,
) -> Result<Trajectory<T>> {
    if model.kappa().iter().any(|k| *k != T::zero()) {
        return Err(Error::invalid("the reference propagation needs a lossless (closed) model"));
    }
    let excited = emitter.initial_state == EmitterState::Excited;
    let mut spec = *spec;
    if spec.parity.is_none() {
        spec.parity = Some(Parity::of(usize::from(excited)));
    }
    let basis = Basis::build(spec)?;
    let h = build_hamiltonian(model, emitter, &basis)?;
    let k0 = basis
        .vacuum_index(excited)
        .ok_or_else(|| Error::invalid("initial state is outside the requested parity sector"))?;
    let mut psi0 = vec![Cplx::new(T::zero(), T::zero()); basis.dim()];
    psi0[k0] = Cplx::new(T::one(), T::zero());
    let Some(&t0) = t_grid.first() else {
        return Err(Error::invalid("empty time grid"));
    };
    let mut rec = StateRecorder {
        basis: &basis,
        traj: Trajectory::with_capacity(t_grid.len(), EnergyUnit::default()),
        err: T::zero(),
    };
    DormandPrince::new(tol).integrate(&Schrodinger { h: &h }, t0, &psi0, t_grid, &mut rec)?;
    let mut traj = rec.traj;
    traj.oracle = true;
    traj.recurrence_time = recurrence_time;
    traj.recurrence_warning = recurrence_time.is_some_and(|tr| t_grid.last().is_some_and(|t| *t > tr));
    Ok(traj)
}

/// Number of odd-parity states for `n_modes` modes at truncation `n_exc`,
/// which is the size of the reference propagation's basis.
pub fn reference_dimension(n_modes: usize, n_exc: usize) -> usize {
    BasisSpec::new(n_modes, n_exc).with_parity(Parity::Odd).with_cap(usize::MAX).dimension()
}

/// Discretizes `target` and propagates; the trajectory carries T_rec.
pub fn reference_trajectory<T: Real, S: SpectralDensity<T> + ?Sized>(
    target: &S,
    d: &DiscretizationSpec<T>,
    emitter: &EmitterSpec<T>,
    max_total_excitations: usize,
    cap: usize,
    t_grid: &[T],
    tol: Tolerance<T>,
) -> Result<Trajectory<T>> {
    let model = discretize(target, d)?;
    let spec = BasisSpec::new(d.n_points, max_total_excitations).with_cap(cap);
    exact_propagate(&model, emitter, &spec, t_grid, tol, Some(d.recurrence_time()))
}

/// Sup-norm change in P_e when the number of points is doubled.
pub fn doubling_change<T: Real>(a: &Trajectory<T>, b: &Trajectory<T>) -> T {
    a.emitter_population
        .iter()
        .zip(&b.emitter_population)
        .map(|(x, y)| (*x - *y).abs())
        .fold(T::zero(), T::max)
}
