//! Lindblad propagation of the emitter ⊗ mode-network density matrix,
//! observables along the way, and the steady state.
//!
//! The density matrix is stored row-major. Every right-hand side is computed
//! on the upper triangle and mirrored, so ρ stays exactly Hermitian through
//! the integrator's real linear combinations.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{build_hamiltonian, build_jump_operators, Basis, BasisSpec, EmitterSpec, EmitterState, OperatorMatrix};
use crate::ode::{Control, DormandPrince, Observer, OdeSystem, Tolerance};
use crate::scalar::{cplx, Cplx, Real};
use crate::spectral::ModeModel;
use crate::units::EnergyUnit;

/// Density matrix over a truncated basis.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState<T> {
    dim: usize,
    rho: Vec<Cplx<T>>,
}

impl<T: Real> QuantumState<T> {
    /// Wraps a row-major matrix after checking shape, Hermiticity and trace.
    pub fn from_matrix(dim: usize, rho: Vec<Cplx<T>>) -> Result<Self> {
        if rho.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: rho.len(),
            });
        }
        let s = Self { dim, rho };
        let tol = T::of(1e-8).max(T::epsilon() * T::of(100.0));
        if s.hermiticity_defect() > tol {
            return Err(Error::invalid("density matrix is not Hermitian"));
        }
        if (s.trace() - T::one()).abs() > tol {
            return Err(Error::invalid(format!("density matrix has trace {}", s.trace())));
        }
        Ok(s)
    }

    /// |k⟩⟨k|.
    pub fn basis_projector(dim: usize, k: usize) -> Self {
        let mut rho = vec![Cplx::new(T::zero(), T::zero()); dim * dim];
        rho[k * dim + k] = Cplx::new(T::one(), T::zero());
        Self { dim, rho }
    }

    /// |ψ⟩⟨ψ| for a normalized ψ.
    pub fn from_pure(psi: &[Cplx<T>]) -> Self {
        let dim = psi.len();
        let mut rho = Vec::with_capacity(dim * dim);
        for a in psi {
            for b in psi {
                rho.push(a * b.conj());
            }
        }
        Self { dim, rho }
    }

    pub(crate) fn from_raw(dim: usize, rho: Vec<Cplx<T>>) -> Self {
        Self { dim, rho }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[Cplx<T>] {
        &self.rho
    }

    pub fn get(&self, r: usize, c: usize) -> Cplx<T> {
        self.rho[r * self.dim + c]
    }

    pub fn trace(&self) -> T {
        (0..self.dim).map(|k| self.rho[k * self.dim + k].re).sum()
    }

    /// Tr ρ².
    pub fn purity(&self) -> T {
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    /// max |ρ − ρᴴ|.
    pub fn hermiticity_defect(&self) -> T {
        let n = self.dim;
        let mut worst = T::zero();
        for r in 0..n {
            for c in r..n {
                worst = worst.max((self.rho[r * n + c] - self.rho[c * n + r].conj()).norm());
            }
        }
        worst
    }

    /// ρ ← (ρ + ρᴴ)/2.
    pub fn symmetrize(&mut self) {
        let n = self.dim;
        let half = T::of(0.5);
        for r in 0..n {
            for c in r..n {
                let m = (self.rho[r * n + c] + self.rho[c * n + r].conj()) * half;
                self.rho[r * n + c] = m;
                self.rho[c * n + r] = m.conj();
            }
        }
    }

    /// Tr(Dρ) for a diagonal operator D.
    pub fn expectation_diag(&self, d: &[T]) -> T {
        d.iter().enumerate().map(|(k, v)| *v * self.rho[k * self.dim + k].re).sum()
    }

    /// Tr(Aρ) for a sparse operator.
    pub fn expectation(&self, op: &OperatorMatrix<T>) -> Cplx<T> {
        let mut acc = Cplx::new(T::zero(), T::zero());
        for r in 0..self.dim {
            for (c, v) in op.row(r) {
                acc += self.rho[c * self.dim + r] * v;
            }
        }
        acc
    }

    /// ⟨ψ|ρ|ψ⟩.
    pub fn overlap(&self, psi: &[Cplx<T>]) -> T {
        let n = self.dim;
        let mut acc = Cplx::new(T::zero(), T::zero());
        for r in 0..n {
            let row: Cplx<T> = self.rho[r * n..(r + 1) * n].iter().zip(psi).map(|(a, b)| *a * *b).sum();
            acc += psi[r].conj() * row;
        }
        acc.re
    }

    /// Smallest eigenvalue, computed densely in double precision.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.dim;
        // Hermitian n×n → real symmetric 2n×2n [[A, −B], [B, A]]; spectrum doubles
        let m = DMatrix::from_fn(2 * n, 2 * n, |i, j| {
            let z = self.rho[(i % n) * n + (j % n)];
            let (re, im) = (z.re.as_f64(), z.im.as_f64());
            match (i < n, j < n) {
                (true, true) | (false, false) => re,
                (true, false) => -im,
                (false, true) => im,
            }
        });
        SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Checks the state invariants (trace, Hermiticity, and optionally
    /// positivity) to within `tol`.
    pub fn validate(&self, tol: T, check_positivity: bool) -> Result<()> {
        if (self.trace() - T::one()).abs() > tol {
            return Err(Error::invalid(format!("trace defect {}", (self.trace() - T::one()).abs())));
        }
        if self.hermiticity_defect() > tol {
            return Err(Error::invalid("state is not Hermitian"));
        }
        if check_positivity {
            let lmin = self.min_eigenvalue();
            if lmin < -tol.as_f64() {
                return Err(Error::invalid(format!("negative eigenvalue {lmin:e}")));
            }
        }
        Ok(())
    }
}

/// Dissipative part: Σκ_i L_i†L_i is kept diagonal when it is (always, for
/// mode annihilators in the number basis).
#[derive(Debug, Clone)]
enum Decay<T> {
    Diagonal(Vec<T>),
    General(OperatorMatrix<T>),
}

#[derive(Debug, Clone)]
struct Channel<T> {
    rate: T,
    op: OperatorMatrix<T>,
    active_rows: Vec<usize>,
}

/// Generator L[ρ] = −i[H,ρ] + Σ κ_i (L_i ρ L_i† − ½{L_i†L_i, ρ}).
#[derive(Debug, Clone)]
pub struct Lindbladian<T> {
    h: OperatorMatrix<T>,
    channels: Vec<Channel<T>>,
    decay: Decay<T>,
}

impl<T: Real> Lindbladian<T> {
    pub fn new(h: OperatorMatrix<T>, jumps: Vec<(OperatorMatrix<T>, T)>) -> Result<Self> {
        let dim = h.dim();
        let mut decay_ops: Vec<(usize, usize, T)> = Vec::new();
        let mut channels = Vec::with_capacity(jumps.len());
        for (op, rate) in jumps {
            if op.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: op.dim() });
            }
            if !(rate >= T::zero()) {
                return Err(Error::invalid("jump rates must be non-negative"));
            }
            if rate == T::zero() {
                continue;
            }
            let ltl = op.transpose().matmul(&op);
            for r in 0..dim {
                for (c, v) in ltl.row(r) {
                    decay_ops.push((r, c, rate * v));
                }
            }
            let active_rows = (0..dim).filter(|&r| op.row(r).next().is_some()).collect();
            channels.push(Channel { rate, op, active_rows });
        }
        let d = OperatorMatrix::from_triplets(dim, decay_ops);
        let diagonal = (0..dim).all(|r| d.row(r).all(|(c, _)| c == r));
        let decay = if diagonal {
            Decay::Diagonal((0..dim).map(|r| d.get(r, r)).collect())
        } else {
            Decay::General(d)
        };
        Ok(Self { h, channels, decay })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn hamiltonian(&self) -> &OperatorMatrix<T> {
        &self.h
    }

    /// Tr(Σκ_i L_i†L_i ρ): the instantaneous rate of quanta leaving the system.
    pub fn loss_rate(&self, rho: &[Cplx<T>]) -> T {
        let n = self.dim();
        match &self.decay {
            Decay::Diagonal(d) => d.iter().enumerate().map(|(k, v)| *v * rho[k * n + k].re).sum(),
            Decay::General(m) => {
                let mut acc = T::zero();
                for r in 0..n {
                    for (c, v) in m.row(r) {
                        acc += v * rho[c * n + r].re;
                    }
                }
                acc
            }
        }
    }

    /// Writes L[ρ] into `out`. ρ must be Hermitian.
    pub fn apply(&self, rho: &[Cplx<T>], out: &mut [Cplx<T>]) {
        let n = self.dim();
        // W = (−iH − ½D)ρ, so L[ρ] = W + Wᴴ + Σκ LρLᴴ
        self.h.mul_dense(rho, out);
        let half = T::of(0.5);
        for o in out.iter_mut() {
            *o = cplx(o.im, -o.re);
        }
        match &self.decay {
            Decay::Diagonal(d) => {
                for r in 0..n {
                    let dr = d[r] * half;
                    for c in 0..n {
                        out[r * n + c] -= rho[r * n + c] * dr;
                    }
                }
            }
            Decay::General(m) => {
                let mut dr = vec![Cplx::new(T::zero(), T::zero()); n * n];
                m.mul_dense(rho, &mut dr);
                for (o, x) in out.iter_mut().zip(&dr) {
                    *o -= x * half;
                }
            }
        }
        for r in 0..n {
            let d = out[r * n + r];
            out[r * n + r] = cplx(d.re + d.re, T::zero());
            for c in r + 1..n {
                let v = out[r * n + c] + out[c * n + r].conj();
                out[r * n + c] = v;
            }
        }
        for ch in &self.channels {
            for (ia, &r) in ch.active_rows.iter().enumerate() {
                for &c in &ch.active_rows[ia..] {
                    let mut acc = Cplx::new(T::zero(), T::zero());
                    for (a, la) in ch.op.row(r) {
                        for (b, lb) in ch.op.row(c) {
                            acc += rho[a * n + b] * (la * lb);
                        }
                    }
                    out[r * n + c] += acc * ch.rate;
                }
            }
        }
        for r in 0..n {
            out[r * n + r].im = T::zero();
            for c in r + 1..n {
                out[c * n + r] = out[r * n + c].conj();
            }
        }
    }
}

impl<T: Real> OdeSystem<T> for Lindbladian<T> {
    fn dim(&self) -> usize {
        let n = Lindbladian::dim(self);
        n * n
    }

    fn rhs(&self, _t: T, y: &[Cplx<T>], dy: &mut [Cplx<T>]) {
        self.apply(y, dy);
    }
}

/// L[ρ] as a new matrix.
pub fn lindblad_rhs<T: Real>(
    rho: &QuantumState<T>,
    h: &OperatorMatrix<T>,
    jumps: &[(OperatorMatrix<T>, T)],
) -> Result<Vec<Cplx<T>>> {
    if rho.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: rho.dim(),
        });
    }
    let l = Lindbladian::new(h.clone(), jumps.to_vec())?;
    let mut out = vec![Cplx::new(T::zero(), T::zero()); rho.dim() * rho.dim()];
    l.apply(rho.as_slice(), &mut out);
    Ok(out)
}

/// Diagonal observables recorded along a trajectory.
#[derive(Debug, Clone)]
pub struct Observables<T> {
    pub excited: Vec<T>,
    pub numbers: Vec<Vec<T>>,
}

impl<T: Real> Observables<T> {
    pub fn from_basis(basis: &Basis) -> Self {
        Self {
            excited: basis.excited_diagonal(),
            numbers: (0..basis.n_modes()).map(|i| basis.number_diagonal(i)).collect(),
        }
    }
}

/// Observable records on an output grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub emitter_population: Vec<T>,
    /// `mode_populations[k][i]` = ⟨a_i†a_i⟩ at `times[k]`.
    pub mode_populations: Vec<Vec<T>>,
    pub bath_photons: Vec<T>,
    pub purity: Vec<T>,
    pub trace_defect: Vec<T>,
    /// Accumulated local integration error in trace norm, which bounds the
    /// error of any observable with unit operator norm (such as P_e).
    pub error_bound: Vec<T>,
    pub units: EnergyUnit,
    pub oracle: bool,
    pub recurrence_time: Option<T>,
    pub recurrence_warning: bool,
}

impl<T: Real> Trajectory<T> {
    pub fn with_capacity(n: usize, units: EnergyUnit) -> Self {
        Self {
            times: Vec::with_capacity(n),
            emitter_population: Vec::with_capacity(n),
            mode_populations: Vec::with_capacity(n),
            bath_photons: Vec::with_capacity(n),
            purity: Vec::with_capacity(n),
            trace_defect: Vec::with_capacity(n),
            error_bound: Vec::with_capacity(n),
            units,
            oracle: false,
            recurrence_time: None,
            recurrence_warning: false,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_modes(&self) -> usize {
        self.mode_populations.first().map_or(0, Vec::len)
    }

    /// P_bath + Σ⟨n_i⟩ at each output time.
    pub fn total_photons(&self) -> Vec<T> {
        self.bath_photons
            .iter()
            .zip(&self.mode_populations)
            .map(|(b, n)| *b + n.iter().copied().sum::<T>())
            .collect()
    }

    pub fn final_emitter_population(&self) -> Option<T> {
        self.emitter_population.last().copied()
    }
}

/// Least-squares slope of `y` against `x`.
pub fn linear_slope<T: Real>(x: &[T], y: &[T]) -> T {
    let n = T::of_usize(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (a, b) in x.iter().zip(y) {
        sxy += (*a - mx) * (*b - my);
        sxx += (*a - mx) * (*a - mx);
    }
    if sxx == T::zero() {
        T::zero()
    } else {
        sxy / sxx
    }
}

struct Recorder<'a, T: Real> {
    lind: &'a Lindbladian<T>,
    obs: &'a Observables<T>,
    traj: Trajectory<T>,
    n: usize,
    last_t: T,
    last_rate: T,
    last_slope: T,
    bath: T,
    /// (row, time) of outputs inside the current step, waiting for its end
    /// derivative.
    pending: Vec<(usize, T)>,
    err: T,
    final_state: Option<Vec<Cplx<T>>>,
    keep_final: bool,
    n_outputs: usize,
}

impl<T: Real> Recorder<'_, T> {
    /// Integrates the loss rate over the step ending at `t` with the cubic
    /// Hermite interpolant of rate and slope, filling pending output rows.
    fn advance_bath(&mut self, t: T, rho: &[Cplx<T>], drho: &[Cplx<T>]) {
        let (r0, d0) = (self.last_rate, self.last_slope);
        let r1 = self.lind.loss_rate(rho);
        let d1 = self.lind.loss_rate(drho);
        let h = t - self.last_t;
        let partial = |th: T| {
            let (t2, t3, t4) = (th * th, th * th * th, th * th * th * th);
            let half = T::of(0.5);
            let third = T::one() / T::of(3.0);
            let h00 = th - t3 + half * t4;
            let h10 = half * t2 - T::of(2.0) * third * t3 + T::of(0.25) * t4;
            let h01 = t3 - half * t4;
            let h11 = -third * t3 + T::of(0.25) * t4;
            h * (h00 * r0 + h10 * h * d0 + h01 * r1 + h11 * h * d1)
        };
        for (k, tk) in std::mem::take(&mut self.pending) {
            self.traj.bath_photons[k] = self.bath + partial((tk - self.last_t) / h);
        }
        if h > T::zero() {
            self.bath += partial(T::one());
        }
        self.last_t = t;
        self.last_rate = r1;
        self.last_slope = d1;
    }
}

impl<T: Real> Observer<T> for Recorder<'_, T> {
    fn output(&mut self, index: usize, t: T, y: &[Cplx<T>]) -> Control {
        let n = self.n;
        let diag = |d: &[T]| d.iter().enumerate().map(|(k, v)| *v * y[k * n + k].re).sum::<T>();
        let tr: T = (0..n).map(|k| y[k * n + k].re).sum();
        self.traj.times.push(t);
        self.traj.emitter_population.push(diag(&self.obs.excited));
        self.traj
            .mode_populations
            .push(self.obs.numbers.iter().map(|d| diag(d)).collect());
        if t > self.last_t {
            self.pending.push((self.traj.bath_photons.len(), t));
        }
        self.traj.bath_photons.push(self.bath);
        self.traj.purity.push(y.iter().map(|z| z.norm_sqr()).sum());
        self.traj.trace_defect.push((tr - T::one()).abs());
        self.traj.error_bound.push(self.err);
        if self.keep_final && index + 1 == self.n_outputs {
            self.final_state = Some(y.to_vec());
        }
        Control::Continue
    }

    fn step(&mut self, t_new: T, y_new: &[Cplx<T>], local_error: &[Cplx<T>], dy: &[Cplx<T>]) -> Control {
        self.advance_bath(t_new, y_new, dy);
        self.err += local_error.iter().map(|z| z.norm()).sum::<T>();
        Control::Continue
    }
}

/// Result of [`evolve`]: the trajectory plus ρ at the last output time.
#[derive(Debug, Clone)]
pub struct Evolution<T> {
    pub trajectory: Trajectory<T>,
    pub final_state: QuantumState<T>,
}

/// Propagates ρ0 over `t_grid` (starting at `t_grid[0]`), recording observables.
pub fn evolve<T: Real>(
    rho0: &QuantumState<T>,
    lind: &Lindbladian<T>,
    obs: &Observables<T>,
    t_grid: &[T],
    tol: Tolerance<T>,
) -> Result<Evolution<T>> {
    let n = lind.dim();
    if rho0.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: rho0.dim() });
    }
    if obs.excited.len() != n || obs.numbers.iter().any(|d| d.len() != n) {
        return Err(Error::invalid("observables do not match the operator dimension"));
    }
    let Some(&t0) = t_grid.first() else {
        return Err(Error::invalid("empty time grid"));
    };
    let mut drho0 = vec![Cplx::new(T::zero(), T::zero()); n * n];
    lind.apply(rho0.as_slice(), &mut drho0);
    let mut rec = Recorder {
        lind,
        obs,
        traj: Trajectory::with_capacity(t_grid.len(), EnergyUnit::default()),
        n,
        last_t: t0,
        last_rate: lind.loss_rate(rho0.as_slice()),
        last_slope: lind.loss_rate(&drho0),
        bath: T::zero(),
        pending: Vec::new(),
        err: T::zero(),
        final_state: None,
        keep_final: true,
        n_outputs: t_grid.len(),
    };
    DormandPrince::new(tol).integrate(lind, t0, rho0.as_slice(), t_grid, &mut rec)?;
    let final_state = QuantumState::from_raw(n, rec.final_state.take().unwrap_or_else(|| rho0.as_slice().to_vec()));
    Ok(Evolution {
        trajectory: rec.traj,
        final_state,
    })
}

/// Propagates and returns the observable records.
pub fn propagate<T: Real>(
    rho0: &QuantumState<T>,
    lind: &Lindbladian<T>,
    obs: &Observables<T>,
    t_grid: &[T],
    tol: Tolerance<T>,
) -> Result<Trajectory<T>> {
    Ok(evolve(rho0, lind, obs, t_grid, tol)?.trajectory)
}

/// Outcome of a long-time propagation.
#[derive(Debug, Clone)]
pub struct SteadyState<T> {
    pub state: QuantumState<T>,
    /// Hilbert–Schmidt norm of L[ρ] at the returned state.
    pub residual: T,
    pub time: T,
    pub stationary: bool,
}

struct StationarityWatch<T> {
    tol: T,
    residual: T,
    time: T,
    state: Option<Vec<Cplx<T>>>,
}

impl<T: Real> Observer<T> for StationarityWatch<T> {
    fn output(&mut self, _i: usize, t: T, y: &[Cplx<T>]) -> Control {
        self.time = t;
        self.state = Some(y.to_vec());
        Control::Continue
    }

    fn step(&mut self, t_new: T, y_new: &[Cplx<T>], _e: &[Cplx<T>], dy_new: &[Cplx<T>]) -> Control {
        self.residual = hs_norm(dy_new);
        self.time = t_new;
        if self.residual < self.tol {
            self.state = Some(y_new.to_vec());
            Control::Stop
        } else {
            Control::Continue
        }
    }
}

fn hs_norm<T: Real>(m: &[Cplx<T>]) -> T {
    m.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
}

/// Propagates from ρ0 until ‖L[ρ]‖_HS < `stationarity_tol` or `horizon`.
pub fn steady_state<T: Real>(
    rho0: &QuantumState<T>,
    lind: &Lindbladian<T>,
    horizon: T,
    stationarity_tol: T,
    tol: Tolerance<T>,
) -> Result<SteadyState<T>> {
    let n = lind.dim();
    if rho0.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: rho0.dim() });
    }
    let mut dy = vec![Cplx::new(T::zero(), T::zero()); n * n];
    lind.apply(rho0.as_slice(), &mut dy);
    let r0 = hs_norm(&dy);
    if r0 < stationarity_tol {
        return Ok(SteadyState {
            state: rho0.clone(),
            residual: r0,
            time: T::zero(),
            stationary: true,
        });
    }
    let mut watch = StationarityWatch {
        tol: stationarity_tol,
        residual: r0,
        time: T::zero(),
        state: None,
    };
    DormandPrince::new(tol).integrate(lind, T::zero(), rho0.as_slice(), &[horizon], &mut watch)?;
    let state = QuantumState::from_raw(n, watch.state.unwrap_or_else(|| rho0.as_slice().to_vec()));
    lind.apply(state.as_slice(), &mut dy);
    let residual = hs_norm(&dy);
    Ok(SteadyState {
        stationary: residual < stationarity_tol,
        state,
        residual,
        time: watch.time,
    })
}

/// Eigenstate of a real symmetric H with the smallest mean excitation number
/// (ties broken by energy). Returns (energy, ⟨N_exc⟩, eigenvector).
pub fn lowest_excitation_eigenstate<T: Real>(h: &OperatorMatrix<T>, basis: &Basis) -> (f64, f64, Vec<Cplx<T>>) {
    let n = h.dim();
    let dense = h.to_dense();
    let m = DMatrix::from_fn(n, n, |i, j| dense[i * n + j].as_f64());
    let eig = SymmetricEigen::new(m);
    let exc: Vec<f64> = basis.excitation_diagonal::<f64>();
    let mut best = (f64::INFINITY, f64::INFINITY, 0usize);
    for k in 0..n {
        let v = eig.eigenvectors.column(k);
        let mean: f64 = v.iter().zip(&exc).map(|(a, e)| a * a * e).sum();
        let e = eig.eigenvalues[k];
        let better = mean < best.0 - 1e-9 || ((mean - best.0).abs() <= 1e-9 && e < best.1);
        if better {
            best = (mean, e, k);
        }
    }
    let v = eig.eigenvectors.column(best.2);
    (best.1, best.0, v.iter().map(|x| cplx(T::of(*x), T::zero())).collect())
}

/// Convenience bundle: basis, generator and observables of one model.
#[derive(Debug, Clone)]
pub struct MasterEquation<T> {
    pub basis: Basis,
    pub lindbladian: Lindbladian<T>,
    pub observables: Observables<T>,
}

impl<T: Real> MasterEquation<T> {
    pub fn new(model: &ModeModel<T>, emitter: &EmitterSpec<T>, spec: BasisSpec) -> Result<Self> {
        let basis = Basis::build(spec)?;
        let h = build_hamiltonian(model, emitter, &basis)?;
        let jumps = build_jump_operators(model, &basis)?;
        Ok(Self {
            lindbladian: Lindbladian::new(h, jumps)?,
            observables: Observables::from_basis(&basis),
            basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Emitter in the requested state, all modes in vacuum.
    pub fn initial_state(&self, state: EmitterState) -> QuantumState<T> {
        let k = self
            .basis
            .vacuum_index(state == EmitterState::Excited)
            .expect("vacuum states are always in the basis");
        QuantumState::basis_projector(self.dim(), k)
    }

    pub fn evolve(&self, rho0: &QuantumState<T>, t_grid: &[T], tol: Tolerance<T>) -> Result<Evolution<T>> {
        evolve(rho0, &self.lindbladian, &self.observables, t_grid, tol)
    }

    pub fn propagate(&self, rho0: &QuantumState<T>, t_grid: &[T], tol: Tolerance<T>) -> Result<Trajectory<T>> {
        propagate(rho0, &self.lindbladian, &self.observables, t_grid, tol)
    }

    pub fn steady_state(
        &self,
        rho0: &QuantumState<T>,
        horizon: T,
        stationarity_tol: T,
        tol: Tolerance<T>,
    ) -> Result<SteadyState<T>> {
        steady_state(rho0, &self.lindbladian, horizon, stationarity_tol, tol)
    }

    pub fn lowest_excitation_eigenstate(&self) -> (f64, f64, Vec<Cplx<T>>) {
        lowest_excitation_eigenstate(self.lindbladian.hamiltonian(), &self.basis)
    }
}

/// Uniform grid of `n_outputs` points on [0, t_max].
pub fn uniform_grid<T: Real>(t_max: T, n_outputs: usize) -> Vec<T> {
    if n_outputs < 2 {
        return vec![t_max];
    }
    let dt = t_max / T::of_usize(n_outputs - 1);
    (0..n_outputs).map(|k| dt * T::of_usize(k)).collect()
}

/// Sup-norm change in P_e between truncations N_exc and N_exc + 1.
pub fn truncation_change<T: Real>(
    model: &ModeModel<T>,
    emitter: &EmitterSpec<T>,
    spec: BasisSpec,
    t_grid: &[T],
    tol: Tolerance<T>,
) -> Result<T> {
    let run = |s: BasisSpec| -> Result<Trajectory<T>> {
        let me = MasterEquation::new(model, emitter, s)?;
        me.propagate(&me.initial_state(emitter.initial_state), t_grid, tol)
    };
    let a = run(spec)?;
    let b = run(BasisSpec {
        max_total_excitations: spec.max_total_excitations + 1,
        ..spec
    })?;
    Ok(a.emitter_population
        .iter()
        .zip(&b.emitter_population)
        .map(|(x, y)| (*x - *y).abs())
        .fold(T::zero(), T::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::annihilation;

    fn emitter(we: f64) -> EmitterSpec<f64> {
        EmitterSpec::new(we, EmitterState::Excited).unwrap()
    }

    fn rabi(g: f64) -> MasterEquation<f64> {
        let m = ModeModel::new(vec![0.58], vec![0.1], vec![g]).unwrap();
        MasterEquation::new(&m, &emitter(0.58), BasisSpec::new(1, 4)).unwrap()
    }

    #[test]
    fn vacuum_ground_state_is_stationary_without_coupling() {
        let me = rabi(0.0);
        let rho = me.initial_state(EmitterState::Ground);
        let out = lindblad_rhs(&rho, me.lindbladian.hamiltonian(), &build_jump_operators(
            &ModeModel::new(vec![0.58], vec![0.1], vec![0.0]).unwrap(),
            &me.basis,
        ).unwrap())
        .unwrap();
        assert!(out.iter().all(|z| z.norm() == 0.0));
    }

    fn random_state(dim: usize, seed: u64) -> QuantumState<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // ρ = A Aᴴ / Tr
        let a: Vec<Cplx<f64>> = (0..dim * dim)
            .map(|_| cplx(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let mut rho = vec![cplx(0.0, 0.0); dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                for k in 0..dim {
                    rho[r * dim + c] += a[r * dim + k] * a[c * dim + k].conj();
                }
            }
        }
        let tr: f64 = (0..dim).map(|k| rho[k * dim + k].re).sum();
        rho.iter_mut().for_each(|z| *z /= tr);
        QuantumState::from_matrix(dim, rho).unwrap()
    }

    #[test]
    fn rhs_is_traceless_and_hermitian() {
        let me = rabi(0.25);
        let rho = random_state(me.dim(), 3);
        let mut out = vec![cplx(0.0, 0.0); me.dim() * me.dim()];
        me.lindbladian.apply(rho.as_slice(), &mut out);
        let n = me.dim();
        let tr: Cplx<f64> = (0..n).map(|k| out[k * n + k]).sum();
        assert!(tr.norm() < 1e-14);
        let d = QuantumState::from_raw(n, out);
        assert_eq!(d.hermiticity_defect(), 0.0);
    }

    /// Dense reference: −i[H,ρ] + Σκ(LρLᵀ − ½{LᵀL, ρ}).
    fn dense_rhs(h: &OperatorMatrix<f64>, jumps: &[(OperatorMatrix<f64>, f64)], rho: &[Cplx<f64>]) -> Vec<Cplx<f64>> {
        let n = h.dim();
        let mm = |a: &[Cplx<f64>], b: &[Cplx<f64>]| {
            let mut c = vec![cplx(0.0, 0.0); n * n];
            for i in 0..n {
                for k in 0..n {
                    let x = a[i * n + k];
                    if x.norm() == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        c[i * n + j] += x * b[k * n + j];
                    }
                }
            }
            c
        };
        let real = |m: &OperatorMatrix<f64>| m.to_dense().into_iter().map(|v| cplx(v, 0.0)).collect::<Vec<_>>();
        let hd = real(h);
        let hr = mm(&hd, rho);
        let rh = mm(rho, &hd);
        let mut out: Vec<Cplx<f64>> = hr.iter().zip(&rh).map(|(a, b)| (a - b) * cplx(0.0, -1.0)).collect();
        for (l, k) in jumps {
            let ld = real(l);
            let lt = real(&l.transpose());
            let ltl = mm(&lt, &ld);
            let s = mm(&mm(&ld, rho), &lt);
            let a1 = mm(&ltl, rho);
            let a2 = mm(rho, &ltl);
            for i in 0..n * n {
                out[i] += (s[i] - (a1[i] + a2[i]) * 0.5) * *k;
            }
        }
        out
    }

    #[test]
    fn rhs_matches_dense_reference() {
        let m = ModeModel::new(vec![0.5, 0.07, 0.07, 0.8], vec![0.1, 0.3], vec![0.2, -0.15]).unwrap();
        let me = MasterEquation::new(&m, &emitter(0.6), BasisSpec::new(2, 3)).unwrap();
        let jumps = build_jump_operators(&m, &me.basis).unwrap();
        let rho = random_state(me.dim(), 9);
        let got = lindblad_rhs(&rho, me.lindbladian.hamiltonian(), &jumps).unwrap();
        let want = dense_rhs(me.lindbladian.hamiltonian(), &jumps, rho.as_slice());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn general_jump_path_matches_dense_reference() {
        // a jump that is not a single-entry-per-row operator
        let me = rabi(0.3);
        let a = annihilation::<f64>(&me.basis, 0).unwrap();
        let sx = crate::fock::sigma_x::<f64>(&me.basis);
        let mixed = OperatorMatrix::from_triplets(
            me.dim(),
            (0..me.dim()).flat_map(|r| a.row(r).chain(sx.row(r)).map(move |(c, v)| (r, c, v)).collect::<Vec<_>>()),
        );
        let jumps = vec![(mixed, 0.2)];
        let rho = random_state(me.dim(), 4);
        let got = lindblad_rhs(&rho, me.lindbladian.hamiltonian(), &jumps).unwrap();
        let want = dense_rhs(me.lindbladian.hamiltonian(), &jumps, rho.as_slice());
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).norm() < 1e-13);
        }
    }

    #[test]
    fn damped_mode_decays_exponentially() {
        // H = 0, single photon: ⟨n⟩(t) = e^{−κt}
        let basis = Basis::build(BasisSpec::new(1, 2)).unwrap();
        let h = OperatorMatrix::from_triplets(basis.dim(), std::iter::empty());
        let a = annihilation::<f64>(&basis, 0).unwrap();
        let lind = Lindbladian::new(h, vec![(a, 0.3)]).unwrap();
        let one = crate::fock::FockState::from_occupations(false, &[1]).unwrap();
        let rho = QuantumState::basis_projector(basis.dim(), basis.index_of(&one).unwrap());
        let obs = Observables::from_basis(&basis);
        let grid = uniform_grid(10.0, 51);
        let tr = propagate(&rho, &lind, &obs, &grid, Tolerance::default()).unwrap();
        for (t, n) in tr.times.iter().zip(&tr.mode_populations) {
            assert!((n[0] - (-0.3 * t).exp()).abs() < 1e-8);
        }
        // every lost photon lands in the bath
        for (n, b) in tr.mode_populations.iter().zip(&tr.bath_photons) {
            assert!((n[0] + b - 1.0).abs() < 1e-6, "{} {}", n[0], b);
        }
    }

    #[test]
    fn uncoupled_emitter_stays_excited() {
        let me = rabi(0.0);
        let tr = me
            .propagate(&me.initial_state(EmitterState::Excited), &uniform_grid(50.0, 20), Tolerance::default())
            .unwrap();
        assert!(tr.emitter_population.iter().all(|p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn unitary_evolution_keeps_purity() {
        let m = ModeModel::new_closed(vec![0.58], vec![0.25]).unwrap();
        let me = MasterEquation::new(&m, &emitter(0.58), BasisSpec::new(1, 5)).unwrap();
        let tr = me
            .propagate(&me.initial_state(EmitterState::Excited), &uniform_grid(40.0, 30), Tolerance::default())
            .unwrap();
        assert!(tr.purity.iter().all(|p| (p - 1.0).abs() < 1e-7));
        assert!(tr.bath_photons.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn steady_state_without_coupling_is_ground_vacuum() {
        let me = rabi(0.0);
        let ss = me
            .steady_state(&me.initial_state(EmitterState::Ground), 100.0, 1e-9, Tolerance::default())
            .unwrap();
        assert!(ss.stationary);
        let g0 = me.basis.vacuum_index(false).unwrap();
        assert!((ss.state.get(g0, g0).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rabi_steady_state_is_nearly_pure_dressed_ground_state() {
        let me = rabi(0.25);
        let ss = me
            .steady_state(&me.initial_state(EmitterState::Excited), 2000.0, 1e-7, Tolerance::default())
            .unwrap();
        assert!(ss.stationary, "residual {}", ss.residual);
        assert!((ss.state.trace() - 1.0).abs() < 1e-6);
        assert!(ss.state.min_eigenvalue() > -1e-6);
        // a lossy resonator coupled with counter-rotating terms is not
        // exactly in the Hamiltonian ground state, but close
        let (_, _, psi) = me.lowest_excitation_eigenstate();
        assert!(ss.state.overlap(&psi) > 0.9);
    }

    #[test]
    fn lowest_excitation_eigenstate_of_uncoupled_system() {
        let me = rabi(0.0);
        let (e, nexc, psi) = me.lowest_excitation_eigenstate();
        assert!((e + 0.29).abs() < 1e-12);
        assert!(nexc.abs() < 1e-12);
        let g0 = me.basis.vacuum_index(false).unwrap();
        assert!((psi[g0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn min_eigenvalue_of_mixture() {
        let mut rho = vec![cplx(0.0, 0.0); 4];
        rho[0] = cplx(0.75, 0.0);
        rho[3] = cplx(0.25, 0.0);
        rho[1] = cplx(0.0, 0.1);
        rho[2] = cplx(0.0, -0.1);
        let s = QuantumState::from_matrix(2, rho).unwrap();
        // eigenvalues 0.5 ± sqrt(0.0625 + 0.01)
        assert!((s.min_eigenvalue() - (0.5 - 0.0725f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn from_matrix_rejects_bad_input() {
        assert!(QuantumState::<f64>::from_matrix(2, vec![cplx(1.0, 0.0); 3]).is_err());
        let bad = vec![cplx(0.5, 0.0), cplx(0.1, 0.0), cplx(0.2, 0.0), cplx(0.5, 0.0)];
        assert!(QuantumState::from_matrix(2, bad).is_err());
        let untraced = vec![cplx(1.0, 0.0), cplx(0.0, 0.0), cplx(0.0, 0.0), cplx(1.0, 0.0)];
        assert!(QuantumState::from_matrix(2, untraced).is_err());
    }

    #[test]
    fn slope_of_a_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        assert!((linear_slope(&x, &y) - 2.0f64).abs() < 1e-14);
    }

    #[test]
    fn works_in_single_precision() {
        let m = ModeModel::<f32>::new(vec![0.58], vec![0.1], vec![0.25]).unwrap();
        let e = EmitterSpec::new(0.58f32, EmitterState::Excited).unwrap();
        let me = MasterEquation::new(&m, &e, BasisSpec::new(1, 3)).unwrap();
        let tr = me
            .propagate(&me.initial_state(EmitterState::Excited), &uniform_grid(20.0f32, 5), Tolerance::new(1e-5))
            .unwrap();
        assert!(tr.trace_defect.iter().all(|d| *d < 1e-4));
    }
}
