//! Comparison of emitter-population trajectories and the threshold sweep.

use rayon::prelude::*;

use crate::dynamics::{MasterEquation, Trajectory};
use crate::error::{Error, Result};
use crate::fit::{fit_model, FitConfig, FitResult};
use crate::fock::{BasisSpec, EmitterSpec};
use crate::ode::Tolerance;
use crate::scalar::Real;
use crate::spectral::SpectralDensity;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport<T> {
    /// Reference times at which ε was evaluated.
    pub times: Vec<T>,
    pub rel_error_t: Vec<T>,
    pub avg_rel_error: T,
    pub max_rel_error: T,
    pub normalization_floor: T,
}

/// Linear interpolation of (xs, ys) at `x`; `xs` increasing and `x` inside.
fn interpolate<T: Real>(xs: &[T], ys: &[T], x: T) -> T {
    let k = xs.partition_point(|v| *v < x);
    if k == 0 {
        return ys[0];
    }
    if k >= xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[k - 1], xs[k]);
    if x1 == x0 {
        return ys[k];
    }
    let f = (x - x0) / (x1 - x0);
    ys[k - 1] + (ys[k] - ys[k - 1]) * f
}

/// ε(t) = |P_a − P_b| / max(P_b, floor) with `b` the reference. `a` is
/// resampled linearly onto the reference times inside the common range.
pub fn relative_error<T: Real>(a: &Trajectory<T>, b: &Trajectory<T>, floor: T) -> Result<ErrorReport<T>> {
    if !(floor > T::zero()) {
        return Err(Error::invalid("normalization floor must be > 0"));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::DisjointTimeRanges);
    }
    let (a0, a1) = (a.times[0], a.times[a.len() - 1]);
    let mut times = Vec::with_capacity(b.len());
    let mut eps = Vec::with_capacity(b.len());
    for (t, pb) in b.times.iter().zip(&b.emitter_population) {
        if *t < a0 || *t > a1 {
            continue;
        }
        let pa = interpolate(&a.times, &a.emitter_population, *t);
        times.push(*t);
        eps.push((pa - *pb).abs() / pb.max(floor));
    }
    if times.is_empty() {
        return Err(Error::DisjointTimeRanges);
    }
    let avg = eps.iter().copied().sum::<T>() / T::of_usize(eps.len());
    let max = eps.iter().copied().fold(T::zero(), T::max);
    Ok(ErrorReport {
        times,
        rel_error_t: eps,
        avg_rel_error: avg,
        max_rel_error: max,
        normalization_floor: floor,
    })
}

/// Everything a sweep cell needs besides (N, threshold).
#[derive(Debug, Clone)]
pub struct SweepSettings<T> {
    /// Fit settings; `n_modes` and `neg_threshold` are overridden per cell.
    pub fit: FitConfig<T>,
    pub emitter: EmitterSpec<T>,
    pub max_total_excitations: usize,
    pub cap: usize,
    pub tol: Tolerance<T>,
    pub floor: T,
}

#[derive(Debug, Clone)]
pub struct CellOutcome<T> {
    pub fit: FitResult<T>,
    pub trajectory: Trajectory<T>,
    pub error: ErrorReport<T>,
}

#[derive(Debug, Clone)]
pub struct SweepCell<T> {
    pub n_modes: usize,
    pub threshold: T,
    /// A failed cell keeps its error message; the sweep carries on.
    pub outcome: std::result::Result<CellOutcome<T>, String>,
}

impl<T: Real> SweepCell<T> {
    pub fn avg_rel_error(&self) -> Option<T> {
        self.outcome.as_ref().ok().map(|o| o.error.avg_rel_error)
    }
}

#[derive(Debug, Clone)]
pub struct SweepTable<T> {
    pub cells: Vec<SweepCell<T>>,
}

impl<T: Real> SweepTable<T> {
    pub fn get(&self, n_modes: usize, threshold: T) -> Option<&SweepCell<T>> {
        self.cells.iter().find(|c| c.n_modes == n_modes && c.threshold == threshold)
    }

    /// Average errors for one N in threshold order as listed.
    pub fn row(&self, n_modes: usize) -> Vec<(T, Option<T>)> {
        self.cells
            .iter()
            .filter(|c| c.n_modes == n_modes)
            .map(|c| (c.threshold, c.avg_rel_error()))
            .collect()
    }
}

/// Fits, propagates and scores one (N, threshold) cell against the reference.
pub fn sweep_cell<T: Real, S: SpectralDensity<T> + ?Sized>(
    target: &S,
    reference: &Trajectory<T>,
    n_modes: usize,
    threshold: T,
    settings: &SweepSettings<T>,
) -> Result<CellOutcome<T>> {
    let mut cfg = settings.fit.clone();
    cfg.n_modes = n_modes;
    cfg.neg_threshold = threshold;
    let fit = fit_model(target, &cfg)?;
    let spec = BasisSpec::new(n_modes, settings.max_total_excitations).with_cap(settings.cap);
    let me = MasterEquation::new(&fit.model, &settings.emitter, spec)?;
    let trajectory = me.propagate(&me.initial_state(settings.emitter.initial_state), &reference.times, settings.tol)?;
    let error = relative_error(&trajectory, reference, settings.floor)?;
    Ok(CellOutcome { fit, trajectory, error })
}

/// Runs every (N, threshold) combination. Cells run in parallel and are
/// returned in (n_modes_list × threshold_list) order.
pub fn threshold_sweep<T: Real, S: SpectralDensity<T> + ?Sized>(
    target: &S,
    reference: &Trajectory<T>,
    n_modes_list: &[usize],
    threshold_list: &[T],
    settings: &SweepSettings<T>,
) -> SweepTable<T> {
    let jobs: Vec<(usize, T)> = n_modes_list
        .iter()
        .flat_map(|n| threshold_list.iter().map(move |t| (*n, *t)))
        .collect();
    let cells = jobs
        .into_par_iter()
        .map(|(n, thr)| SweepCell {
            n_modes: n,
            threshold: thr,
            outcome: sweep_cell(target, reference, n, thr, settings).map_err(|e| e.to_string()),
        })
        .collect();
    SweepTable { cells }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::EnergyUnit;

    fn traj(times: Vec<f64>, pe: Vec<f64>) -> Trajectory<f64> {
        let mut t = Trajectory::with_capacity(times.len(), EnergyUnit::default());
        t.times = times;
        t.emitter_population = pe;
        t
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let a = traj(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.2]);
        let r = relative_error(&a, &a, 1e-3).unwrap();
        assert!(r.rel_error_t.iter().all(|e| *e == 0.0));
        assert_eq!(r.avg_rel_error, 0.0);
    }

    #[test]
    fn constant_offset() {
        let pb = vec![1.0, 0.5, 0.2, 0.1];
        let b = traj(vec![0.0, 1.0, 2.0, 3.0], pb.clone());
        let a = traj(b.times.clone(), pb.iter().map(|p| p + 1e-3).collect());
        let r = relative_error(&a, &b, 1e-3).unwrap();
        let want = pb.iter().map(|p| 1e-3 / p).sum::<f64>() / 4.0;
        assert!((r.avg_rel_error - want).abs() < 1e-15);
        assert!((r.max_rel_error - 1e-2).abs() < 1e-12);
    }

    #[test]
    fn floor_guards_small_reference() {
        let b = traj(vec![0.0], vec![0.0]);
        let a = traj(vec![0.0], vec![1e-4]);
        let r = relative_error(&a, &b, 1e-3).unwrap();
        assert!((r.avg_rel_error - 0.1).abs() < 1e-12);
    }

    #[test]
    fn resamples_onto_reference_grid() {
        let b = traj(vec![0.0, 0.5, 1.0], vec![1.0, 1.0, 1.0]);
        // a is linear in t, sampled coarsely
        let a = traj(vec![0.0, 1.0], vec![1.0, 2.0]);
        let r = relative_error(&a, &b, 1e-3).unwrap();
        assert_eq!(r.times, vec![0.0, 0.5, 1.0]);
        assert!((r.rel_error_t[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn disjoint_ranges_are_an_error() {
        let a = traj(vec![0.0, 1.0], vec![1.0, 1.0]);
        let b = traj(vec![2.0, 3.0], vec![1.0, 1.0]);
        assert!(matches!(relative_error(&a, &b, 1e-3), Err(Error::DisjointTimeRanges)));
    }

    #[test]
    fn scale_invariance() {
        let b = traj(vec![0.0, 1.0, 2.0], vec![0.9, 0.4, 0.05]);
        let a = traj(vec![0.0, 1.0, 2.0], vec![0.8, 0.45, 0.01]);
        let s = 3.7;
        let scale = |t: &Trajectory<f64>| traj(t.times.clone(), t.emitter_population.iter().map(|p| p * s).collect());
        let r1 = relative_error(&a, &b, 1e-3).unwrap();
        let r2 = relative_error(&scale(&a), &scale(&b), 1e-3 * s).unwrap();
        for (x, y) in r1.rel_error_t.iter().zip(&r2.rel_error_t) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
