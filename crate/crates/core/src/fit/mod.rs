//! Constrained fit of a mode network to a target spectral density.
//!
//! The positive-frequency residual is relative, (J_mod − J_t)/(J_t + ε), so
//! every decade of the target counts. Negative frequencies enter through a
//! hinge on log J_mod: zero below `hinge_margin · neg_threshold`, growing
//! logarithmically above it. A log hinge is used because the thresholds of
//! interest (down to 1e-8 of a peak of order 1) are invisible to a hinge on
//! J itself. The penalty weight is raised stage by stage.

mod init;
pub mod lm;

use rayon::prelude::*;

pub use init::{chain_model, initialize_model};
use lm::{levenberg_marquardt, LeastSquares, LmOptions, Termination};

use crate::error::{Error, Result};
use crate::scalar::{complex_solve, cplx, Cplx, Real};
use crate::spectral::{ModeModel, SpectralDensity};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig<T> {
    pub n_modes: usize,
    /// J_mod must stay below this value on `neg_grid`.
    pub neg_threshold: T,
    pub pos_grid: Vec<T>,
    /// Empty for an unconstrained fit.
    pub neg_grid: Vec<T>,
    /// Levenberg–Marquardt iterations per penalty stage.
    pub max_iterations: usize,
    pub n_restarts: usize,
    pub rng_seed: u64,
    pub penalty_schedule: Vec<T>,
    /// The hinge switches on at `hinge_margin · neg_threshold`.
    pub hinge_margin: T,
    /// ε in the relative weight, as a fraction of max J_t.
    pub weight_floor: T,
    /// Use the Lanczos chain as the first restart's starting point.
    pub chain_start: bool,
    /// Upper bound on each κ_i. Modes much broader than the window barely
    /// change J there but make the master equation stiff.
    pub max_kappa: T,
}

/// `n` uniform points on [lo, hi].
pub fn linear_grid<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![lo];
    }
    let d = (hi - lo) / T::of_usize(n - 1);
    (0..n).map(|k| lo + d * T::of_usize(k)).collect()
}

/// `n` points −|ω| with |ω| log-spaced on [lo_abs, hi_abs], nearest to zero first.
pub fn negative_log_grid<T: Real>(lo_abs: T, hi_abs: T, n: usize) -> Vec<T> {
    let (a, b) = (lo_abs.ln(), hi_abs.ln());
    if n == 1 {
        return vec![-lo_abs];
    }
    let d = (b - a) / T::of_usize(n - 1);
    (0..n).map(|k| -(a + d * T::of_usize(k)).exp()).collect()
}

/// Doubles the density of a grid by inserting midpoints (geometric midpoints
/// between same-sign points, so log-spaced grids stay log-spaced).
pub fn refine_grid<T: Real>(grid: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * grid.len());
    for w in grid.windows(2) {
        out.push(w[0]);
        let mid = if w[0] * w[1] > T::zero() {
            w[0].signum() * (w[0] * w[1]).sqrt()
        } else {
            (w[0] + w[1]) * T::of(0.5)
        };
        out.push(mid);
    }
    out.extend(grid.last());
    out
}

impl<T: Real> FitConfig<T> {
    /// Default grids for an emitter at `omega_e`: 2000 uniform points on
    /// [0.05, 5]·ω_e and 400 log-spaced points from −10⁻³·ω_e to −5·ω_e.
    pub fn for_emitter(n_modes: usize, neg_threshold: T, omega_e: T) -> Self {
        Self::with_window(n_modes, neg_threshold, omega_e * T::of(0.05), omega_e * T::of(5.0), omega_e * T::of(1e-3))
    }

    pub fn with_window(n_modes: usize, neg_threshold: T, pos_lo: T, pos_hi: T, neg_lo_abs: T) -> Self {
        Self {
            n_modes,
            neg_threshold,
            pos_grid: linear_grid(pos_lo, pos_hi, 2000),
            neg_grid: negative_log_grid(neg_lo_abs, pos_hi, 400),
            max_iterations: 3000,
            n_restarts: 4,
            rng_seed: 0,
            penalty_schedule: [1e-2, 1.0, 1e2, 1e4].iter().map(|v| T::of(*v)).collect(),
            hinge_margin: T::of(0.5),
            weight_floor: T::of(1e-3),
            chain_start: true,
            max_kappa: pos_hi * T::of(4.0),
        }
    }

    /// Drops the negative-frequency constraint.
    pub fn unconstrained(mut self) -> Self {
        self.neg_grid.clear();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::invalid("n_modes must be positive"));
        }
        if !(self.neg_threshold > T::zero()) {
            return Err(Error::invalid("neg_threshold must be > 0"));
        }
        if self.pos_grid.len() < 3 {
            return Err(Error::invalid("pos_grid needs at least 3 points"));
        }
        if self.pos_grid.iter().any(|w| !(*w > T::zero())) {
            return Err(Error::invalid("pos_grid must lie at ω > 0"));
        }
        if self.pos_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("pos_grid must be increasing"));
        }
        if self.neg_grid.iter().any(|w| !(*w < T::zero())) {
            return Err(Error::invalid("neg_grid must lie at ω < 0"));
        }
        if self.n_restarts == 0 {
            return Err(Error::invalid("n_restarts must be ≥ 1"));
        }
        if self.penalty_schedule.is_empty() || self.penalty_schedule.iter().any(|l| !(*l >= T::zero())) {
            return Err(Error::invalid("penalty_schedule must be a non-empty list of weights ≥ 0"));
        }
        if !(self.hinge_margin > T::zero() && self.hinge_margin <= T::one()) {
            return Err(Error::invalid("hinge_margin must be in (0, 1]"));
        }
        if !(self.weight_floor > T::zero()) {
            return Err(Error::invalid("weight_floor must be > 0"));
        }
        if !(self.max_kappa > T::zero() && self.max_kappa.is_finite()) {
            return Err(Error::invalid("max_kappa must be a finite value > 0"));
        }
        Ok(())
    }

    /// The negative grid at doubled density, used to verify the constraint.
    pub fn verification_grid(&self) -> Vec<T> {
        refine_grid(&self.neg_grid)
    }
}

/// One penalty stage of one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct StageHistory<T> {
    pub penalty: T,
    /// Objective at the start of the stage and after each accepted step.
    pub objective: Vec<T>,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub model: ModeModel<T>,
    /// RMS of (J_mod − J_t)/(J_t + ε) over `pos_grid`.
    pub pos_residual: T,
    /// max(0, J_mod − neg_threshold) over `neg_grid`.
    pub neg_violation: T,
    /// Same over the doubled-density verification grid.
    pub verified_neg_violation: T,
    /// max J_mod over the verification grid (0 when unconstrained).
    pub max_negative_density: T,
    /// The final penalty stage met a convergence test. Earlier stages only
    /// warm-start the next one and may stop at the iteration cap.
    pub converged: bool,
    /// Final objective of the selected restart.
    pub objective: T,
    pub objective_history: Vec<StageHistory<T>>,
    pub restart_index: usize,
}

impl<T: Real> FitResult<T> {
    /// Feasible on both the fit grid and the verification grid.
    pub fn is_feasible(&self) -> bool {
        self.neg_violation == T::zero() && self.verified_neg_violation == T::zero()
    }
}

/// Parameter vector: upper triangle of ω (row-major), s, g with
/// κ = κ_max / (1 + e^(−s)), so κ ≈ κ_max·e^s while κ ≪ κ_max.
fn n_params(n: usize) -> usize {
    n * (n + 1) / 2 + 2 * n
}

fn pack<T: Real>(m: &ModeModel<T>, kmax: T) -> Vec<T> {
    let n = m.n_modes();
    let mut p = Vec::with_capacity(n_params(n));
    for i in 0..n {
        for j in i..n {
            p.push(m.omega_ij(i, j));
        }
    }
    p.extend(m.kappa().iter().map(|k| {
        let k = k.max(T::min_positive_value()).min(kmax * T::of(0.99));
        (k / (kmax - k)).ln()
    }));
    p.extend_from_slice(m.g());
    p
}

fn unpack<T: Real>(n: usize, p: &[T], kmax: T) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut omega = vec![T::zero(); n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            omega[i * n + j] = p[k];
            omega[j * n + i] = p[k];
            k += 1;
        }
    }
    let kappa = p[k..k + n].iter().map(|x| kmax / (T::one() + (-*x).exp())).collect();
    let g = p[k + n..k + 2 * n].to_vec();
    (omega, kappa, g)
}

fn to_model<T: Real>(n: usize, p: &[T], kmax: T) -> Result<ModeModel<T>> {
    let (omega, kappa, g) = unpack(n, p, kmax);
    ModeModel::new(omega, kappa, g)
}

/// J(ω) and ∂J/∂p for the packed parameters. Returns `None` if H̃ − ω is
/// singular or values are not finite.
#[allow(clippy::too_many_arguments)]
fn density_and_gradient<T: Real>(
    n: usize,
    omega: &[T],
    kappa: &[T],
    kmax: T,
    g: &[T],
    w: T,
    grad: Option<&mut [T]>,
    scratch: &mut Vec<Cplx<T>>,
) -> Option<T> {
    scratch.clear();
    scratch.extend(omega.iter().map(|x| cplx(*x, T::zero())));
    for i in 0..n {
        scratch[i * n + i] = cplx(omega[i * n + i] - w, -T::of(0.5) * kappa[i]);
    }
    let mut u: Vec<Cplx<T>> = g.iter().map(|x| cplx(*x, T::zero())).collect();
    if !complex_solve(n, scratch, &mut u) {
        return None;
    }
    let inv_2pi = T::one() / (T::of(2.0) * T::PI());
    let j = u.iter().zip(kappa).map(|(u, k)| *k * u.norm_sqr()).sum::<T>() * inv_2pi;
    if !j.is_finite() {
        return None;
    }
    if let Some(d) = grad {
        // J = Im(gᵀ A⁻¹ g)/π with A = H̃ − ω (complex symmetric)
        let inv_pi = T::FRAC_1_PI();
        let mut k = 0;
        for a in 0..n {
            for b in a..n {
                let f = if a == b { T::one() } else { T::of(2.0) };
                d[k] = -(u[a] * u[b]).im * f * inv_pi;
                k += 1;
            }
        }
        for a in 0..n {
            // ∂/∂ln κ_a = (i/2) κ_a u_a², and ∂ln κ/∂s = 1 − κ/κ_max
            d[k + a] = (u[a] * u[a]).re * T::of(0.5) * kappa[a] * (T::one() - kappa[a] / kmax) * inv_pi;
        }
        for a in 0..n {
            d[k + n + a] = T::of(2.0) * u[a].im * inv_pi;
        }
    }
    Some(j)
}

struct Objective<'a, T> {
    n: usize,
    pos: &'a [T],
    target: &'a [T],
    weight: Vec<T>,
    neg: &'a [T],
    kmax: T,
    hinge: T,
    penalty_scale: T,
}

impl<T: Real> LeastSquares<T> for Objective<'_, T> {
    fn n_params(&self) -> usize {
        n_params(self.n)
    }

    fn n_residuals(&self) -> usize {
        self.pos.len() + self.neg.len()
    }

    fn eval(&self, p: &[T], r: &mut [T], mut jac: Option<&mut [T]>) -> bool {
        let np = n_params(self.n);
        let (omega, kappa, g) = unpack(self.n, p, self.kmax);
        if kappa.iter().any(|k| !k.is_finite() || *k <= T::zero()) {
            return false;
        }
        let mut scratch = Vec::with_capacity(self.n * self.n);
        for (k, w) in self.pos.iter().enumerate() {
            let row = jac.as_deref_mut().map(|j| &mut j[k * np..(k + 1) * np]);
            let Some(j) = density_and_gradient(self.n, &omega, &kappa, self.kmax, &g, *w, row, &mut scratch) else {
                return false;
            };
            r[k] = (j - self.target[k]) * self.weight[k];
            if let Some(jm) = jac.as_deref_mut() {
                jm[k * np..(k + 1) * np].iter_mut().for_each(|v| *v *= self.weight[k]);
            }
        }
        let off = self.pos.len();
        for (k, w) in self.neg.iter().enumerate() {
            let idx = off + k;
            let row = jac.as_deref_mut().map(|j| &mut j[idx * np..(idx + 1) * np]);
            let Some(j) = density_and_gradient(self.n, &omega, &kappa, self.kmax, &g, *w, row, &mut scratch) else {
                return false;
            };
            let active = j > self.hinge;
            r[idx] = if active { self.penalty_scale * (j / self.hinge).ln() } else { T::zero() };
            if let Some(jm) = jac.as_deref_mut() {
                let row = &mut jm[idx * np..(idx + 1) * np];
                if active {
                    let f = self.penalty_scale / j;
                    row.iter_mut().for_each(|v| *v *= f);
                } else {
                    row.iter_mut().for_each(|v| *v = T::zero());
                }
            }
        }
        r.iter().all(|v| v.is_finite())
    }
}

struct Prepared<T> {
    target_pos: Vec<T>,
    weight: Vec<T>,
}

fn prepare<T: Real, S: SpectralDensity<T> + ?Sized>(target: &S, cfg: &FitConfig<T>) -> Result<Prepared<T>> {
    cfg.validate()?;
    let mut target_pos = Vec::with_capacity(cfg.pos_grid.len());
    for w in &cfg.pos_grid {
        let v = target.eval(*w);
        if !v.is_finite() || v < T::zero() {
            return Err(Error::TargetNotEvaluable {
                omega: w.as_f64(),
                reason: format!("value {v}"),
            });
        }
        target_pos.push(v);
    }
    for w in &cfg.neg_grid {
        let v = target.eval(*w);
        if !v.is_finite() {
            return Err(Error::TargetNotEvaluable {
                omega: w.as_f64(),
                reason: format!("value {v}"),
            });
        }
    }
    let peak = target_pos.iter().copied().fold(T::zero(), T::max);
    let eps = if peak > T::zero() { cfg.weight_floor * peak } else { T::one() };
    let scale = T::one() / T::of_usize(cfg.pos_grid.len()).sqrt();
    let weight = target_pos.iter().map(|j| scale / (*j + eps)).collect();
    Ok(Prepared { target_pos, weight })
}

struct RestartOutcome<T> {
    params: Vec<T>,
    objective: T,
    history: Vec<StageHistory<T>>,
}

fn run_stages<T: Real>(prep: &Prepared<T>, cfg: &FitConfig<T>, p0: Vec<T>) -> RestartOutcome<T> {
    // long valleys otherwise crawl until max_iterations for no visible gain
    let opts = LmOptions {
        max_iterations: cfg.max_iterations,
        progress_tol: T::of(1e-2),
        progress_window: 200,
        ..LmOptions::default()
    };
    let hinge = cfg.hinge_margin * cfg.neg_threshold;
    let n_neg = T::of_usize(cfg.neg_grid.len().max(1));
    let mut p = p0;
    let mut objective = T::infinity();
    let mut history = Vec::with_capacity(cfg.penalty_schedule.len());
    for &lambda in &cfg.penalty_schedule {
        let problem = Objective {
            n: cfg.n_modes,
            pos: &cfg.pos_grid,
            target: &prep.target_pos,
            weight: prep.weight.clone(),
            neg: &cfg.neg_grid,
            kmax: cfg.max_kappa,
            hinge,
            penalty_scale: (lambda / n_neg).sqrt(),
        };
        let out = levenberg_marquardt(&problem, &p, &opts);
        p = out.params;
        objective = out.cost;
        history.push(StageHistory {
            penalty: lambda,
            objective: out.history,
            iterations: out.iterations,
            termination: out.termination,
        });
        if cfg.neg_grid.is_empty() {
            // the penalty has nothing to act on
            break;
        }
    }
    RestartOutcome { params: p, objective, history }
}

/// Max of J_mod over `grid`, or 0 for an empty grid.
pub fn max_density<T: Real>(model: &ModeModel<T>, grid: &[T]) -> T {
    grid.iter().map(|w| model.eval(*w)).fold(T::zero(), T::max)
}

/// RMS of the relative residual (J_mod − J_t)/(J_t + ε) over `cfg.pos_grid`.
pub fn relative_rms<T: Real, S: SpectralDensity<T> + ?Sized>(model: &ModeModel<T>, target: &S, cfg: &FitConfig<T>) -> T {
    let jt: Vec<T> = cfg.pos_grid.iter().map(|w| target.eval(*w)).collect();
    let peak = jt.iter().copied().fold(T::zero(), T::max);
    let eps = if peak > T::zero() { cfg.weight_floor * peak } else { T::one() };
    let s: T = cfg
        .pos_grid
        .iter()
        .zip(&jt)
        .map(|(w, t)| {
            let r = (model.eval(*w) - *t) / (*t + eps);
            r * r
        })
        .sum();
    (s / T::of_usize(cfg.pos_grid.len())).sqrt()
}

fn finish<T: Real, S: SpectralDensity<T> + ?Sized>(
    target: &S,
    cfg: &FitConfig<T>,
    best: RestartOutcome<T>,
    restart_index: usize,
) -> Result<FitResult<T>> {
    let model = to_model(cfg.n_modes, &best.params, cfg.max_kappa)?.with_nonnegative_couplings();
    let thr = cfg.neg_threshold;
    let neg_max = max_density(&model, &cfg.neg_grid);
    let ver_max = max_density(&model, &cfg.verification_grid());
    Ok(FitResult {
        pos_residual: relative_rms(&model, target, cfg),
        neg_violation: (neg_max - thr).max(T::zero()),
        verified_neg_violation: (ver_max - thr).max(T::zero()),
        max_negative_density: ver_max.max(neg_max),
        converged: best.history.last().is_some_and(|s| s.termination.converged()),
        objective: best.objective,
        objective_history: best.history,
        restart_index,
        model,
    })
}

/// Fits `cfg.n_modes` modes to `target`. Restarts run in parallel; the
/// lowest final objective wins, ties going to the lowest restart index.
pub fn fit_model<T: Real, S: SpectralDensity<T> + ?Sized>(target: &S, cfg: &FitConfig<T>) -> Result<FitResult<T>> {
    let prep = prepare(target, cfg)?;
    let starts: Vec<Vec<T>> = (0..cfg.n_restarts)
        .map(|k| {
            let chain = if k == 0 && cfg.chain_start { chain_model(target, cfg) } else { None };
            let m = match chain {
                Some(m) => m,
                None => initialize_model(target, cfg, k)?,
            };
            Ok(pack(&m, cfg.max_kappa))
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<RestartOutcome<T>> = starts.into_par_iter().map(|p0| run_stages(&prep, cfg, p0)).collect();
    let (idx, best) = outcomes
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            let key = |o: &RestartOutcome<T>| if o.objective.is_nan() { T::infinity() } else { o.objective };
            key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal).then(ia.cmp(ib))
        })
        .expect("at least one restart");
    finish(target, cfg, best, idx)
}

/// Single fit from a given starting model (no restarts).
pub fn fit_model_from<T: Real, S: SpectralDensity<T> + ?Sized>(
    target: &S,
    cfg: &FitConfig<T>,
    start: &ModeModel<T>,
) -> Result<FitResult<T>> {
    if start.n_modes() != cfg.n_modes {
        return Err(Error::DimensionMismatch {
            expected: cfg.n_modes,
            got: start.n_modes(),
        });
    }
    let prep = prepare(target, cfg)?;
    let out = run_stages(&prep, cfg, pack(start, cfg.max_kappa));
    finish(target, cfg, out, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Positive,
    Negative,
    Verification,
}

impl Region {
    pub fn label(self) -> &'static str {
        match self {
            Region::Positive => "pos",
            Region::Negative => "neg",
            Region::Verification => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow<T> {
    pub region: Region,
    pub omega: T,
    pub target: T,
    pub model: T,
    /// Relative residual on the positive grid, J_mod − threshold elsewhere.
    pub residual: T,
}

/// Tabulated diagnostics of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<T> {
    pub rows: Vec<ReportRow<T>>,
    pub resonances: Vec<Cplx<T>>,
    pub neg_threshold: T,
    pub pos_residual: T,
    pub neg_violation: T,
    pub verified_neg_violation: T,
    pub converged: bool,
}

pub fn fit_report<T: Real, S: SpectralDensity<T> + ?Sized>(r: &FitResult<T>, target: &S, cfg: &FitConfig<T>) -> FitReport<T> {
    let jt: Vec<T> = cfg.pos_grid.iter().map(|w| target.eval(*w)).collect();
    let peak = jt.iter().copied().fold(T::zero(), T::max);
    let eps = if peak > T::zero() { cfg.weight_floor * peak } else { T::one() };
    let mut rows: Vec<ReportRow<T>> = cfg
        .pos_grid
        .iter()
        .zip(&jt)
        .map(|(w, t)| {
            let m = r.model.eval(*w);
            ReportRow {
                region: Region::Positive,
                omega: *w,
                target: *t,
                model: m,
                residual: (m - *t) / (*t + eps),
            }
        })
        .collect();
    for (region, grid) in [(Region::Negative, cfg.neg_grid.clone()), (Region::Verification, cfg.verification_grid())] {
        rows.extend(grid.iter().map(|w| {
            let m = r.model.eval(*w);
            ReportRow {
                region,
                omega: *w,
                target: target.eval(*w),
                model: m,
                residual: m - cfg.neg_threshold,
            }
        }));
    }
    FitReport {
        rows,
        resonances: r.model.resonances(),
        neg_threshold: cfg.neg_threshold,
        pos_residual: r.pos_residual,
        neg_violation: r.neg_violation,
        verified_neg_violation: r.verified_neg_violation,
        converged: r.converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{LorentzianParams, ZeroDensity};

    #[test]
    fn gradient_matches_central_differences() {
        let n = 3;
        let m = ModeModel::<f64>::new(
            vec![0.5, 0.1, -0.05, 0.1, 0.7, 0.2, -0.05, 0.2, 1.1],
            vec![0.1, 0.3, 0.05],
            vec![0.2, -0.1, 0.15],
        )
        .unwrap();
        let kmax = 0.5;
        let p = pack(&m, kmax);
        let mut scratch = Vec::new();
        for w in [-0.8, 0.05, 0.6, 1.3] {
            let (o, k, g) = unpack(n, &p, kmax);
            let mut d = vec![0.0; n_params(n)];
            density_and_gradient(n, &o, &k, kmax, &g, w, Some(&mut d), &mut scratch).unwrap();
            for i in 0..p.len() {
                let h = 1e-6;
                let mut pp = p.clone();
                pp[i] += h;
                let (o1, k1, g1) = unpack(n, &pp, kmax);
                let f1 = density_and_gradient(n, &o1, &k1, kmax, &g1, w, None, &mut scratch).unwrap();
                pp[i] -= 2.0 * h;
                let (o2, k2, g2) = unpack(n, &pp, kmax);
                let f2 = density_and_gradient(n, &o2, &k2, kmax, &g2, w, None, &mut scratch).unwrap();
                let fd = (f1 - f2) / (2.0 * h);
                assert!((fd - d[i]).abs() < 1e-6 * (1.0 + fd.abs()), "w={w} i={i}: {fd} vs {}", d[i]);
            }
        }
    }

    #[test]
    fn density_matches_model_eval() {
        let m = ModeModel::<f64>::new(vec![0.5, 0.1, 0.1, 0.9], vec![0.1, 0.2], vec![0.3, 0.1]).unwrap();
        let (o, k, g) = unpack(2, &pack(&m, 10.0), 10.0);
        let mut s = Vec::new();
        for w in [-1.0, 0.2, 0.5, 2.0] {
            let a = density_and_gradient(2, &o, &k, 10.0, &g, w, None, &mut s).unwrap();
            assert!((a - m.eval(w)).abs() < 1e-14);
        }
    }

    #[test]
    fn grids() {
        let g = negative_log_grid::<f64>(1e-3, 1.0, 4);
        assert!((g[0] + 1e-3).abs() < 1e-15 && (g[3] + 1.0).abs() < 1e-12);
        assert!((g[1] + 1e-2).abs() < 1e-12);
        let r = refine_grid(&g);
        assert_eq!(r.len(), 7);
        assert!((r[1] + 10f64.powf(-2.5)).abs() < 1e-12);
        let l = linear_grid(1.0, 2.0, 5);
        assert_eq!(l, vec![1.0, 1.25, 1.5, 1.75, 2.0]);
    }

    #[test]
    fn config_validation() {
        let mut c = FitConfig::<f64>::for_emitter(2, 1e-8, 0.58);
        assert!(c.validate().is_ok());
        c.neg_grid.push(0.1);
        assert!(c.validate().is_err());
        let mut c = FitConfig::<f64>::for_emitter(2, 1e-8, 0.58);
        c.n_restarts = 0;
        assert!(c.validate().is_err());
        let c = FitConfig::<f64>::for_emitter(2, -1.0, 0.58);
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_target_fits_to_zero() {
        let mut c = FitConfig::<f64>::for_emitter(2, 1e-8, 0.58).unconstrained();
        c.n_restarts = 1;
        let r = fit_model(&ZeroDensity, &c).unwrap();
        assert!(r.objective < 1e-20);
        assert!(r.model.g().iter().all(|g| g.abs() < 1e-8));
    }

    #[test]
    fn lorentzian_self_fit_recovers_parameters() {
        let l = LorentzianParams::<f64>::new(0.58, 0.25, 0.1).unwrap();
        let mut c = FitConfig::<f64>::for_emitter(1, 1e-8, 0.58).unconstrained();
        c.n_restarts = 2;
        let r = fit_model(&l, &c).unwrap();
        let m = &r.model;
        assert!((m.omega_ij(0, 0) / 0.58 - 1.0).abs() < 1e-6, "{m:?}");
        assert!((m.g()[0] / 0.25 - 1.0).abs() < 1e-6);
        assert!((m.kappa()[0] / 0.1 - 1.0).abs() < 1e-6);
        assert!(r.pos_residual < 1e-8);
        assert!(r.converged);
    }

    #[test]
    fn report_has_every_grid() {
        let l = LorentzianParams::<f64>::new(0.58, 0.25, 0.1).unwrap();
        let mut c = FitConfig::<f64>::for_emitter(1, 1e-8, 0.58);
        c.n_restarts = 1;
        c.pos_grid = linear_grid(0.1, 2.0, 50);
        c.neg_grid = negative_log_grid::<f64>(1e-3, 2.0, 10);
        let r = fit_model_from(&l, &c, &l.to_mode_model()).unwrap();
        let rep = fit_report(&r, &l, &c);
        assert_eq!(rep.rows.len(), 50 + 10 + 19);
        assert_eq!(rep.resonances.len(), 1);
    }
}
