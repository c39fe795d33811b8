//! Spectral densities: analytic targets, tabulated targets and the density
//! generated by a network of lossy, interacting modes.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{complex_solve, cplx, real, Cplx, Real};
use crate::units::EnergyUnit;

/// Anything that maps a real frequency to a spectral density value.
///
/// Implementations are immutable and may be evaluated from several threads.
pub trait SpectralDensity<T: Real>: Send + Sync {
    fn eval(&self, omega: T) -> T;
}

impl<T: Real, S: SpectralDensity<T> + ?Sized> SpectralDensity<T> for &S {
    fn eval(&self, omega: T) -> T {
        (**self).eval(omega)
    }
}

impl<T: Real, S: SpectralDensity<T> + ?Sized> SpectralDensity<T> for Box<S> {
    fn eval(&self, omega: T) -> T {
        (**self).eval(omega)
    }
}

/// Wraps a closure as a spectral density.
#[derive(Clone, Copy)]
pub struct FnDensity<F>(pub F);

impl<T: Real, F: Fn(T) -> T + Send + Sync> SpectralDensity<T> for FnDensity<F> {
    fn eval(&self, omega: T) -> T {
        (self.0)(omega)
    }
}

/// J(ω) = 0 everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDensity;

impl<T: Real> SpectralDensity<T> for ZeroDensity {
    fn eval(&self, _omega: T) -> T {
        T::zero()
    }
}

/// Multiplies another density by a constant factor.
#[derive(Debug, Clone)]
pub struct ScaledDensity<S, T> {
    pub inner: S,
    pub factor: T,
}

impl<T: Real, S: SpectralDensity<T>> SpectralDensity<T> for ScaledDensity<S, T> {
    fn eval(&self, omega: T) -> T {
        self.factor * self.inner.eval(omega)
    }
}

/// Single lossy mode: the density of the conventional quantum Rabi model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianParams<T> {
    pub omega_c: T,
    pub g: T,
    pub kappa: T,
}

impl<T: Real> LorentzianParams<T> {
    pub fn new(omega_c: T, g: T, kappa: T) -> Result<Self> {
        let p = Self { omega_c, g, kappa };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > T::zero()) {
            return Err(Error::invalid(format!("lorentzian kappa must be > 0, got {}", self.kappa)));
        }
        if !(self.g >= T::zero()) {
            return Err(Error::invalid(format!("lorentzian g must be >= 0, got {}", self.g)));
        }
        if !self.omega_c.is_finite() {
            return Err(Error::invalid("lorentzian omega_c must be finite"));
        }
        Ok(())
    }

    /// (g²/π)·(κ/2)/((ω_c−ω)² + κ²/4), on the whole real axis.
    pub fn eval(&self, omega: T) -> T {
        let half = self.kappa * T::of(0.5);
        let d = self.omega_c - omega;
        self.g * self.g / T::PI() * half / (d * d + half * half)
    }

    /// Peak value 2g²/(πκ), reached at ω = ω_c.
    pub fn peak(&self) -> T {
        T::of(2.0) * self.g * self.g / (T::PI() * self.kappa)
    }

    /// The equivalent one-mode network.
    pub fn to_mode_model(&self) -> ModeModel<T> {
        ModeModel::new(vec![self.omega_c], vec![self.kappa], vec![self.g])
            .expect("validated lorentzian is a valid one-mode model")
    }
}

impl<T: Real> SpectralDensity<T> for LorentzianParams<T> {
    fn eval(&self, omega: T) -> T {
        LorentzianParams::eval(self, omega)
    }
}

/// A single mode broadened by an Ohmic background bath. Only positive
/// frequencies carry weight and the density vanishes linearly as ω → 0⁺.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleModeOhmicParams<T> {
    pub omega_c: T,
    pub g: T,
    pub kappa: T,
}

impl<T: Real> SingleModeOhmicParams<T> {
    pub fn new(omega_c: T, g: T, kappa: T) -> Result<Self> {
        let p = Self { omega_c, g, kappa };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > T::zero()) {
            return Err(Error::invalid(format!("ohmic kappa must be > 0, got {}", self.kappa)));
        }
        if !(self.g >= T::zero()) {
            return Err(Error::invalid(format!("ohmic g must be >= 0, got {}", self.g)));
        }
        if !(self.omega_c > T::zero()) {
            return Err(Error::invalid(format!("ohmic omega_c must be > 0, got {}", self.omega_c)));
        }
        Ok(())
    }

    /// θ(ω)·(2g²/π)·κω_cω/((ω_c²−ω²)² + κ²ω²).
    pub fn eval(&self, omega: T) -> T {
        if omega <= T::zero() {
            return T::zero();
        }
        let wc2 = self.omega_c * self.omega_c;
        let d = wc2 - omega * omega;
        let num = T::of(2.0) * self.g * self.g / T::PI() * self.kappa * self.omega_c * omega;
        num / (d * d + self.kappa * self.kappa * omega * omega)
    }
}

impl<T: Real> SpectralDensity<T> for SingleModeOhmicParams<T> {
    fn eval(&self, omega: T) -> T {
        SingleModeOhmicParams::eval(self, omega)
    }
}

/// Sampled spectral density, linearly interpolated.
///
/// Support is confined to positive frequencies inside the sampled range;
/// everything else evaluates to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedSd<T> {
    omega: Vec<T>,
    j: Vec<T>,
}

impl<T: Real> TabulatedSd<T> {
    pub fn new(samples: Vec<(T, T)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("tabulated spectral density has no samples"));
        }
        let (omega, j): (Vec<T>, Vec<T>) = samples.into_iter().unzip();
        for (k, w) in omega.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::invalid(format!(
                    "tabulated omegas must be strictly increasing (rows {} and {})",
                    k + 1,
                    k + 2
                )));
            }
        }
        if let Some(k) = j.iter().position(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::invalid(format!("tabulated j must be finite and >= 0 (row {})", k + 1)));
        }
        Ok(Self { omega, j })
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.omega.iter().copied().zip(self.j.iter().copied())
    }

    pub fn range(&self) -> (T, T) {
        (self.omega[0], self.omega[self.omega.len() - 1])
    }

    pub fn eval(&self, omega: T) -> T {
        let n = self.omega.len();
        if omega <= T::zero() || omega < self.omega[0] || omega > self.omega[n - 1] {
            return T::zero();
        }
        if n == 1 {
            return self.j[0];
        }
        // first index with omega[k] > omega
        let k = self.omega.partition_point(|w| *w <= omega);
        if k == n {
            return self.j[n - 1];
        }
        let (w0, w1) = (self.omega[k - 1], self.omega[k]);
        let t = (omega - w0) / (w1 - w0);
        self.j[k - 1] + t * (self.j[k] - self.j[k - 1])
    }

    /// Parses the `omega,j` CSV format. `origin` is only used in diagnostics.
    pub fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut samples = Vec::new();
        let mut header_seen = false;
        let mut last: Option<T> = None;
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if !header_seen {
                let cols: Vec<_> = trimmed.split(',').map(str::trim).collect();
                if cols != ["omega", "j"] {
                    return Err(parse_err(lineno, format!("expected header \"omega,j\", found \"{trimmed}\"")));
                }
                header_seen = true;
                continue;
            }
            let mut cols = trimmed.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(parse_err(lineno, "expected two columns".into()));
            };
            let w: f64 = a.parse().map_err(|_| parse_err(lineno, format!("bad omega \"{a}\"")))?;
            let v: f64 = b.parse().map_err(|_| parse_err(lineno, format!("bad j \"{b}\"")))?;
            if !w.is_finite() || !v.is_finite() {
                return Err(parse_err(lineno, "non-finite value".into()));
            }
            if v < 0.0 {
                return Err(parse_err(lineno, format!("negative spectral density {v}")));
            }
            let w = T::of(w);
            if let Some(prev) = last {
                if !(w > prev) {
                    return Err(parse_err(lineno, "omega is not strictly increasing".into()));
                }
            }
            last = Some(w);
            samples.push((w, T::of(v)));
        }
        if !header_seen {
            return Err(parse_err(1, "missing header \"omega,j\"".into()));
        }
        if samples.is_empty() {
            return Err(parse_err(1, "no samples".into()));
        }
        Self::new(samples)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, path)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "omega,j")?;
        for (a, b) in self.samples() {
            writeln!(w, "{:e},{:e}", a.as_f64(), b.as_f64())?;
        }
        Ok(())
    }
}

impl<T: Real> SpectralDensity<T> for TabulatedSd<T> {
    fn eval(&self, omega: T) -> T {
        TabulatedSd::eval(self, omega)
    }
}

/// A network of N bosonic modes with symmetric energy/coupling matrix ω_ij,
/// decay rates κ_i and emitter couplings g_i.
///
/// The generated density is J(ω) = (1/π) g·Im[(H̃ − ω)⁻¹]·g with
/// H̃ = ω − (i/2)diag(κ). Because H̃ is complex symmetric, this equals
/// (1/2π) Σ_i κ_i |u_i|² with u = (H̃ − ω)⁻¹ g, which is how it is evaluated:
/// the sum of non-negative terms cannot cancel.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeModel<T> {
    n: usize,
    omega: Vec<T>,
    kappa: Vec<T>,
    g: Vec<T>,
    closed: bool,
}

impl<T: Real> ModeModel<T> {
    /// `omega` is the row-major N×N matrix. Every κ_i must be > 0.
    pub fn new(omega: Vec<T>, kappa: Vec<T>, g: Vec<T>) -> Result<Self> {
        let m = Self::build(omega, kappa, g, false)?;
        if let Some(i) = m.kappa.iter().position(|k| !(*k > T::zero())) {
            return Err(Error::invalid(format!("kappa[{i}] = {} must be > 0", m.kappa[i])));
        }
        Ok(m)
    }

    /// Lossless model (κ = 0), as produced by discretizing a continuum.
    /// Its spectral density is a sum of delta functions, so [`Self::eval`]
    /// is not meaningful for it.
    pub fn new_closed(omega: Vec<T>, g: Vec<T>) -> Result<Self> {
        let n = g.len();
        Self::build(omega, vec![T::zero(); n], g, true)
    }

    /// Diagonal lossless model, one mode per frequency.
    pub fn diagonal_closed(freqs: &[T], g: Vec<T>) -> Result<Self> {
        let n = freqs.len();
        let mut omega = vec![T::zero(); n * n];
        for (i, w) in freqs.iter().enumerate() {
            omega[i * n + i] = *w;
        }
        Self::new_closed(omega, g)
    }

    fn build(omega: Vec<T>, kappa: Vec<T>, g: Vec<T>, closed: bool) -> Result<Self> {
        let n = g.len();
        if n == 0 {
            return Err(Error::invalid("mode model needs at least one mode"));
        }
        if kappa.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: kappa.len() });
        }
        if omega.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: omega.len() });
        }
        if omega.iter().chain(&kappa).chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::invalid("mode model parameters must be finite"));
        }
        let scale = omega.iter().fold(T::one(), |a, v| a.max(v.abs()));
        let tol = T::of(64.0) * T::epsilon() * scale;
        for i in 0..n {
            for j in i + 1..n {
                if (omega[i * n + j] - omega[j * n + i]).abs() > tol {
                    return Err(Error::invalid(format!("omega matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        if kappa.iter().any(|k| *k < T::zero()) {
            return Err(Error::invalid("kappa must be non-negative"));
        }
        Ok(Self { n, omega, kappa, g, closed })
    }

    pub fn n_modes(&self) -> usize {
        self.n
    }

    /// Row-major ω_ij.
    pub fn omega_mat(&self) -> &[T] {
        &self.omega
    }

    pub fn omega_ij(&self, i: usize, j: usize) -> T {
        self.omega[i * self.n + j]
    }

    pub fn kappa(&self) -> &[T] {
        &self.kappa
    }

    pub fn g(&self) -> &[T] {
        &self.g
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Σ g_i², the total weight ∫J dω.
    pub fn coupling_weight(&self) -> T {
        self.g.iter().map(|g| *g * *g).sum()
    }

    /// Same network with every emitter coupling multiplied by `factor`.
    pub fn with_scaled_couplings(&self, factor: T) -> Self {
        let mut m = self.clone();
        for g in &mut m.g {
            *g *= factor;
        }
        m
    }

    /// H̃_ij = ω_ij − (i/2)δ_ij κ_i, row-major.
    pub fn effective_hamiltonian(&self) -> Vec<Cplx<T>> {
        let n = self.n;
        let mut h: Vec<Cplx<T>> = self.omega.iter().map(|w| real(*w)).collect();
        for i in 0..n {
            h[i * n + i].im = -T::of(0.5) * self.kappa[i];
        }
        h
    }

    /// u = (H̃ − ω)⁻¹ g, or `None` if the shifted matrix is singular.
    pub fn resolvent_vector(&self, omega: T) -> Option<Vec<Cplx<T>>> {
        let n = self.n;
        let mut a = self.effective_hamiltonian();
        for i in 0..n {
            a[i * n + i].re -= omega;
        }
        let mut u: Vec<Cplx<T>> = self.g.iter().map(|g| real(*g)).collect();
        complex_solve(n, &mut a, &mut u).then_some(u)
    }

    /// Model spectral density at `omega`.
    pub fn eval(&self, omega: T) -> T {
        match self.resolvent_vector(omega) {
            Some(u) => {
                let s: T = u.iter().zip(&self.kappa).map(|(u, k)| *k * u.norm_sqr()).sum();
                s / (T::of(2.0) * T::PI())
            }
            None => T::infinity(),
        }
    }

    /// Complex eigenvalues of H̃ (computed in double precision), sorted by
    /// real part. For κ_i ≥ 0 all imaginary parts are ≤ 0.
    pub fn resonances(&self) -> Vec<Cplx<T>> {
        let n = self.n;
        let h = self.effective_hamiltonian();
        let m = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let v = h[i * n + j];
            Complex64::new(v.re.as_f64(), v.im.as_f64())
        });
        let mut ev: Vec<Complex64> = match m.clone().try_schur(1e-15, 10_000) {
            Some(s) => {
                let (_, t) = s.unpack();
                (0..n).map(|i| t[(i, i)]).collect()
            }
            None => m.eigenvalues().map(|v| v.iter().copied().collect()).unwrap_or_default(),
        };
        ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        ev.into_iter().map(|z| cplx(T::of(z.re), T::of(z.im))).collect()
    }

    /// Flips the sign of mode `i` (a_i → −a_i). Leaves J(ω) and all
    /// dynamics unchanged.
    pub(crate) fn flip_mode(&mut self, i: usize) {
        let n = self.n;
        self.g[i] = -self.g[i];
        for j in 0..n {
            if j != i {
                self.omega[i * n + j] = -self.omega[i * n + j];
                self.omega[j * n + i] = -self.omega[j * n + i];
            }
        }
    }

    /// Gauge-fixes all couplings to be non-negative.
    pub fn with_nonnegative_couplings(mut self) -> Self {
        for i in 0..self.n {
            if self.g[i] < T::zero() {
                self.flip_mode(i);
            }
        }
        self
    }

    pub fn to_document(&self, units: EnergyUnit) -> ModelDocument {
        ModelDocument {
            n_modes: self.n,
            omega_mat: self.omega.iter().map(|v| v.as_f64()).collect(),
            kappa: self.kappa.iter().map(|v| v.as_f64()).collect(),
            g: self.g.iter().map(|v| v.as_f64()).collect(),
            units,
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.omega_mat.len() != doc.n_modes * doc.n_modes {
            return Err(Error::DimensionMismatch {
                expected: doc.n_modes * doc.n_modes,
                got: doc.omega_mat.len(),
            });
        }
        if doc.g.len() != doc.n_modes {
            return Err(Error::DimensionMismatch { expected: doc.n_modes, got: doc.g.len() });
        }
        let conv = |v: &[f64]| v.iter().map(|x| T::of(*x)).collect::<Vec<T>>();
        let omega = conv(&doc.omega_mat);
        let g = conv(&doc.g);
        let kappa = conv(&doc.kappa);
        if kappa.iter().all(|k| *k == T::zero()) {
            Self::new_closed(omega, g)
        } else {
            Self::new(omega, kappa, g)
        }
    }
}

impl<T: Real> SpectralDensity<T> for ModeModel<T> {
    fn eval(&self, omega: T) -> T {
        ModeModel::eval(self, omega)
    }
}

impl<T: Real> fmt::Display for ModeModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModeModel(N={}, Σg²={:.4e})", self.n, self.coupling_weight())
    }
}

/// JSON form of a fitted network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub n_modes: usize,
    /// Row-major N×N.
    pub omega_mat: Vec<f64>,
    pub kappa: Vec<f64>,
    pub g: Vec<f64>,
    pub units: EnergyUnit,
}

impl ModelDocument {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: PathBuf::from(path),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_lorentzian() -> LorentzianParams<f64> {
        LorentzianParams::<f64>::new(0.58, 0.25, 0.1).unwrap()
    }

    #[test]
    fn lorentzian_peak_and_half_width() {
        let p = reference_lorentzian();
        let peak = 2.0 * 0.25 * 0.25 / (std::f64::consts::PI * 0.1);
        assert!((p.eval(0.58) - peak).abs() < 1e-15);
        assert!((peak - 0.39789).abs() < 1e-5);
        assert!((p.eval(0.63) - 0.5 * peak).abs() < 1e-12);
        assert!((p.eval(0.63) - 0.19894).abs() < 1e-5);
        let zero = LorentzianParams::<f64>::new(0.58, 0.0, 0.1).unwrap();
        assert_eq!(zero.eval(0.3), 0.0);
    }

    #[test]
    fn lorentzian_rejects_bad_params() {
        assert!(LorentzianParams::<f64>::new(0.58, 0.25, 0.0).is_err());
        assert!(LorentzianParams::<f64>::new(0.58, -0.1, 0.1).is_err());
    }

    #[test]
    fn single_mode_ohmic_values() {
        let p = SingleModeOhmicParams::<f64>::new(0.58, 0.25, 0.1).unwrap();
        assert_eq!(p.eval(-1.0), 0.0);
        assert_eq!(p.eval(0.0), 0.0);
        let peak = 2.0 * 0.25 * 0.25 / (std::f64::consts::PI * 0.1);
        assert!((p.eval(0.58) - peak).abs() < 1e-14);
        // linear onset
        let a = p.eval(1e-6);
        let b = p.eval(2e-6);
        assert!(((b / a) - 2.0).abs() < 1e-6);
        assert!(SingleModeOhmicParams::<f64>::new(0.0, 0.25, 0.1).is_err());
    }

    #[test]
    fn single_mode_ohmic_matches_antisymmetrized_shape() {
        // Both vanish on ω ≤ 0 and share the large-ω exponent: ω⁻³, since
        // the ω⁻² terms of the two lorentzians cancel.
        let p = SingleModeOhmicParams::<f64>::new(0.58, 0.25, 0.1).unwrap();
        let l = LorentzianParams::<f64>::new(0.58, 0.25, 0.1).unwrap();
        let anti = |w: f64| if w > 0.0 { l.eval(w) - l.eval(-w) } else { 0.0 };
        assert_eq!(anti(-0.3), 0.0);
        let slope = |f: &dyn Fn(f64) -> f64| (f(2e3).ln() - f(1e3).ln()) / 2f64.ln();
        let s_ohm = slope(&|w| p.eval(w));
        let s_anti = slope(&anti);
        assert!((s_ohm - s_anti).abs() < 1e-2, "{s_ohm} vs {s_anti}");
    }

    #[test]
    fn tabulated_interpolation() {
        let t = TabulatedSd::<f64>::new(vec![(1.0, 0.5), (2.0, 1.0)]).unwrap();
        assert!((t.eval(1.5) - 0.75).abs() < 1e-15);
        assert_eq!(t.eval(-0.3), 0.0);
        assert_eq!(t.eval(3.0), 0.0);
        assert_eq!(t.eval(1.0), 0.5);
        assert_eq!(t.eval(2.0), 1.0);
    }

    #[test]
    fn tabulated_rejects_bad_tables() {
        assert!(TabulatedSd::<f64>::new(vec![]).is_err());
        assert!(TabulatedSd::<f64>::new(vec![(1.0, 0.5), (1.0, 1.0)]).is_err());
        assert!(TabulatedSd::<f64>::new(vec![(1.0, -0.5)]).is_err());
    }

    #[test]
    fn tabulated_csv_diagnostics_carry_line_numbers() {
        let text = "omega,j\n1.0,0.5\n0.5,0.2\n";
        let err = TabulatedSd::<f64>::read_csv(text.as_bytes(), Path::new("t.csv")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "omega,j\n1.0,-0.5\n";
        assert!(matches!(
            TabulatedSd::<f64>::read_csv(text.as_bytes(), Path::new("t.csv")),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = "w,J\n1.0,0.5\n";
        assert!(matches!(
            TabulatedSd::<f64>::read_csv(text.as_bytes(), Path::new("t.csv")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn tabulated_csv_roundtrip() {
        let t = TabulatedSd::<f64>::new(vec![(0.5, 0.1), (1.0, 0.25), (1.7, 0.0)]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = TabulatedSd::<f64>::read_csv(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn one_mode_model_is_the_lorentzian() {
        let l = reference_lorentzian();
        let m = l.to_mode_model();
        let peak = l.peak();
        let worst = (0..=4000)
            .map(|k| -3.0 + 8.0 * k as f64 / 4000.0)
            .map(|w| (m.eval(w) - l.eval(w)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12 * peak, "{worst}");
    }

    #[test]
    fn zero_couplings_give_zero_density() {
        let m = ModeModel::<f64>::new(vec![1.0, 0.2, 0.2, 2.0], vec![0.1, 0.3], vec![0.0, 0.0]).unwrap();
        for w in [-2.0, 0.0, 1.0, 5.0] {
            assert_eq!(m.eval(w), 0.0);
        }
    }

    #[test]
    fn model_validation() {
        assert!(ModeModel::<f64>::new(vec![1.0, 0.2, 0.3, 2.0], vec![0.1, 0.3], vec![0.1, 0.1]).is_err());
        assert!(ModeModel::<f64>::new(vec![1.0], vec![0.0], vec![0.1]).is_err());
        assert!(ModeModel::<f64>::new(vec![1.0, 0.0], vec![0.1], vec![0.1]).is_err());
        assert!(ModeModel::<f64>::new_closed(vec![1.0], vec![0.1]).is_ok());
    }

    #[test]
    fn resonances_of_diagonal_models() {
        let m = ModeModel::<f64>::new(vec![0.58], vec![0.1], vec![0.25]).unwrap();
        let r = m.resonances();
        assert!((r[0] - cplx(0.58, -0.05)).norm() < 1e-14);
        let m = ModeModel::<f64>::new(vec![2.0, 0.0, 0.0, 1.0], vec![0.4, 0.2], vec![0.1, 0.1]).unwrap();
        let r = m.resonances();
        assert!((r[0] - cplx(1.0, -0.1)).norm() < 1e-13);
        assert!((r[1] - cplx(2.0, -0.2)).norm() < 1e-13);
    }

    #[test]
    fn sign_flip_leaves_density_unchanged() {
        let m = ModeModel::<f64>::new(vec![1.0, 0.3, 0.3, 2.0], vec![0.2, 0.5], vec![0.4, -0.2]).unwrap();
        let f = m.clone().with_nonnegative_couplings();
        assert!(f.g().iter().all(|g| *g >= 0.0));
        for w in [-1.0, 0.5, 1.0, 1.7, 3.0] {
            assert!((m.eval(w) - f.eval(w)).abs() < 1e-15);
        }
    }

    #[test]
    fn document_roundtrip() {
        let m = ModeModel::<f64>::new(vec![1.0, 0.3, 0.3, 2.0], vec![0.2, 0.5], vec![0.4, 0.2]).unwrap();
        let doc = m.to_document(EnergyUnit::MilliElectronVolt);
        let text = serde_json::to_string(&doc).unwrap();
        let back: ModelDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(ModeModel::<f64>::from_document(&back).unwrap(), m);
    }

    #[test]
    fn works_in_single_precision() {
        let l = LorentzianParams::new(0.58f32, 0.25, 0.1).unwrap();
        let m = l.to_mode_model();
        assert!((m.eval(0.6) - l.eval(0.6)).abs() < 1e-5);
    }
}
