//! Starting points for the spectral-density fit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FitConfig;
use crate::error::Result;
use crate::scalar::Real;
use crate::spectral::{ModeModel, SpectralDensity};

fn restart_rng(seed: u64, restart_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (restart_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct Peak<T> {
    omega: T,
    height: T,
    width: T,
}

fn find_peaks<T: Real>(grid: &[T], j: &[T]) -> Vec<Peak<T>> {
    let n = grid.len();
    let step = if n > 1 { (grid[n - 1] - grid[0]) / T::of_usize(n - 1) } else { T::one() };
    let mut peaks = Vec::new();
    for k in 1..n.saturating_sub(1) {
        if !(j[k] > j[k - 1] && j[k] >= j[k + 1] && j[k] > T::zero()) {
            continue;
        }
        let half = j[k] * T::of(0.5);
        let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<T> {
            let mut prev = k;
            for i in range {
                if j[i] < half {
                    // linear interpolation between prev and i
                    let f = (j[prev] - half) / (j[prev] - j[i]);
                    return Some(grid[prev] + (grid[i] - grid[prev]) * f);
                }
                prev = i;
            }
            None
        };
        let left = crossing(&mut (0..k).rev());
        let right = crossing(&mut (k + 1..n));
        let width = match (left, right) {
            (Some(l), Some(r)) => r - l,
            (Some(l), None) => T::of(2.0) * (grid[k] - l),
            (None, Some(r)) => T::of(2.0) * (r - grid[k]),
            (None, None) => grid[n - 1] - grid[0],
        };
        peaks.push(Peak {
            omega: grid[k],
            height: j[k],
            width: width.max(step),
        });
    }
    peaks.sort_by(|a, b| b.height.partial_cmp(&a.height).unwrap_or(std::cmp::Ordering::Equal));
    peaks
}

/// Peak-picking start: one mode per local maximum of the target (highest
/// first) with κ from the half-maximum width and g from the peak height;
/// leftover modes are spread uniformly over the window. Off-diagonal
/// couplings are drawn uniformly in ±5% of the window span from a stream
/// fixed by `(rng_seed, restart_index)`.
pub fn initialize_model<T: Real, S: SpectralDensity<T> + ?Sized>(
    target: &S,
    cfg: &FitConfig<T>,
    restart_index: usize,
) -> Result<ModeModel<T>> {
    cfg.validate()?;
    let n = cfg.n_modes;
    let grid = &cfg.pos_grid;
    let jt: Vec<T> = grid.iter().map(|w| target.eval(*w)).collect();
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    let span = hi - lo;
    let peaks = find_peaks(grid, &jt);
    let half_pi = T::FRAC_PI_2();

    let mut freqs = Vec::with_capacity(n);
    let mut kappa = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for p in peaks.iter().take(n) {
        freqs.push(p.omega);
        kappa.push(p.width);
        g.push((half_pi * p.width * p.height).sqrt());
    }
    let n_fill = n - freqs.len();
    let filler_weight = if peaks.is_empty() { T::one() } else { T::of(0.1) };
    let interp = |w: T| -> T {
        let pos = grid.partition_point(|x| *x < w).min(grid.len() - 1);
        jt[pos]
    };
    for k in 0..n_fill {
        let spacing = span / T::of_usize(n_fill + 1);
        let w = lo + spacing * T::of_usize(k + 1);
        freqs.push(w);
        kappa.push(spacing);
        g.push((half_pi * spacing * interp(w) * filler_weight).sqrt());
    }

    let mut rng = restart_rng(cfg.rng_seed, restart_index);
    let mut omega = vec![T::zero(); n * n];
    for i in 0..n {
        omega[i * n + i] = freqs[i];
        for j in i + 1..n {
            let v = span * T::of(0.05 * (2.0 * rng.random::<f64>() - 1.0));
            omega[i * n + j] = v;
            omega[j * n + i] = v;
        }
    }
    ModeModel::new(omega, kappa, g)
}

/// Chain start: Lanczos tridiagonalization of the target measure J(ω)dω on
/// (0, ω_max] gives a nearest-neighbour chain whose first site carries all of
/// the coupling; the last site is damped to mimic the truncated remainder of
/// the chain. Returns `None` for a target with no weight.
pub fn chain_model<T: Real, S: SpectralDensity<T> + ?Sized>(target: &S, cfg: &FitConfig<T>) -> Option<ModeModel<T>> {
    let n = cfg.n_modes;
    let hi = *cfg.pos_grid.last()?;
    let n_fine = 20_000;
    let dw = hi / T::of_usize(n_fine);
    let w: Vec<T> = (0..n_fine).map(|k| dw * (T::of_usize(k) + T::of(0.5))).collect();
    let weights: Vec<T> = w.iter().map(|x| target.eval(*x).max(T::zero()) * dw).collect();
    let eta2: T = weights.iter().copied().sum();
    if !(eta2 > T::zero()) || !eta2.is_finite() {
        return None;
    }
    let eta = eta2.sqrt();
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(n + 1);
    let mut v: Vec<T> = weights.iter().map(|x| x.sqrt() / eta).collect();
    let mut eps = Vec::with_capacity(n);
    let mut hop = Vec::with_capacity(n);
    for _ in 0..n {
        let a: T = v.iter().zip(&w).map(|(v, x)| *v * *v * *x).sum();
        let mut next: Vec<T> = v.iter().zip(&w).map(|(v, x)| *v * *x).collect();
        basis.push(v);
        // full reorthogonalization against every previous Lanczos vector
        for _ in 0..2 {
            for b in &basis {
                let c: T = b.iter().zip(&next).map(|(b, x)| *b * *x).sum();
                next.iter_mut().zip(b).for_each(|(x, b)| *x -= c * *b);
            }
        }
        let t = next.iter().map(|x| *x * *x).sum::<T>().sqrt();
        eps.push(a);
        hop.push(t);
        if !(t > T::epsilon() * hi) {
            return None;
        }
        v = next.into_iter().map(|x| x / t).collect();
    }
    let mut omega = vec![T::zero(); n * n];
    for i in 0..n {
        omega[i * n + i] = eps[i];
        if i + 1 < n {
            omega[i * n + i + 1] = hop[i];
            omega[(i + 1) * n + i] = hop[i];
        }
    }
    // small intrinsic loss on the inner sites keeps H̃ well conditioned
    let mut kappa = vec![hi * T::of(3.5e-5); n];
    kappa[n - 1] = T::of(2.0) * hop[n - 1];
    let mut g = vec![T::zero(); n];
    g[0] = eta;
    ModeModel::new(omega, kappa, g).ok()
}
