#![allow(dead_code)]

use rand::Rng;
use usc_lindblad::spectral::ModeModel;

/// Adaptive Simpson on [a, b] to absolute tolerance `tol`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

/// ∫J over the real axis: quadrature on [−W, W] split around the resonances
/// plus the analytic ω⁻² tails, (1/π)Σκ_i g_i²/W.
pub fn total_weight(m: &ModeModel<f64>, rel_tol: f64) -> f64 {
    let scale: f64 = m.g().iter().map(|g| g * g).sum();
    let w_cut = 2000.0;
    let mut cuts = vec![-w_cut, w_cut];
    for z in m.resonances() {
        for k in -4..=4 {
            cuts.push(z.re + k as f64 * z.im.abs());
        }
    }
    cuts.retain(|c| c.abs() <= w_cut);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let f = |w: f64| m.eval(w);
    let body: f64 = cuts.windows(2).map(|c| simpson(&f, c[0], c[1], rel_tol * scale)).sum();
    let tail: f64 = m.kappa().iter().zip(m.g()).map(|(k, g)| k * g * g).sum::<f64>() / std::f64::consts::PI / w_cut;
    body + tail
}

/// Symmetric ω with entries in [−2, 3), κ in [1e-3, 1), g in [−0.5, 0.5).
pub fn random_model<R: Rng>(rng: &mut R, n: usize) -> ModeModel<f64> {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-2.0..3.0);
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    let kappa = (0..n).map(|_| rng.random_range(1e-3..1.0)).collect();
    let g = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    ModeModel::new(w, kappa, g).unwrap()
}
