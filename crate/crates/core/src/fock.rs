//! Emitter ⊗ N-mode bosonic space truncated by total excitation number, and
//! the operators acting on it.
//!
//! A basis state |s; n_1 … n_N⟩ is kept when Σn_i + [s = e] ≤ N_exc.
//! Enumeration order: shells k = 0, 1, …, N_exc of total excitation; inside a
//! shell, excited-emitter states come before ground states; inside each of
//! those, photon configurations are ordered lexicographically by their sorted
//! list of occupied mode indices (repeated for multiple quanta). For one mode
//! and N_exc = 1 that gives |g;0⟩, |e;0⟩, |g;1⟩.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Cplx, Real};
use crate::spectral::ModeModel;

/// Largest supported excitation truncation.
pub const MAX_EXCITATIONS: usize = 8;

/// Default cap on the basis dimension.
pub const DEFAULT_DIMENSION_CAP: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmitterState {
    #[default]
    Excited,
    Ground,
}

/// Two-level emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterSpec<T> {
    pub omega_e: T,
    #[serde(default)]
    pub initial_state: EmitterState,
}

impl<T: Real> EmitterSpec<T> {
    pub fn new(omega_e: T, initial_state: EmitterState) -> Result<Self> {
        let e = Self { omega_e, initial_state };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_e > T::zero()) || !self.omega_e.is_finite() {
            return Err(Error::invalid(format!("omega_e must be > 0, got {}", self.omega_e)));
        }
        Ok(())
    }
}

/// Excitation-number parity sector. σ_x(a + a†) changes the excitation count
/// by 0 or ±2, so a closed system never leaves its sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of(excitations: usize) -> Self {
        if excitations.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub n_modes: usize,
    pub max_total_excitations: usize,
    /// Restrict to one parity sector (closed-system propagation only).
    #[serde(default)]
    pub parity: Option<Parity>,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_DIMENSION_CAP
}

impl BasisSpec {
    pub fn new(n_modes: usize, max_total_excitations: usize) -> Self {
        Self {
            n_modes,
            max_total_excitations,
            parity: None,
            cap: DEFAULT_DIMENSION_CAP,
        }
    }

    pub fn with_parity(mut self, parity: Parity) -> Self {
        self.parity = Some(parity);
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::invalid("basis needs at least one mode"));
        }
        if self.n_modes > u16::MAX as usize {
            return Err(Error::invalid(format!("at most {} modes are supported", u16::MAX)));
        }
        if self.max_total_excitations == 0 || self.max_total_excitations > MAX_EXCITATIONS {
            return Err(Error::invalid(format!(
                "max_total_excitations must be in 1..={MAX_EXCITATIONS}, got {}",
                self.max_total_excitations
            )));
        }
        Ok(())
    }

    fn shell_allowed(&self, k: usize) -> bool {
        self.parity.is_none_or(|p| Parity::of(k) == p)
    }

    /// Number of basis states, computed combinatorially (saturating).
    pub fn dimension(&self) -> usize {
        let multisets = |n: usize, m: usize| -> u128 {
            // C(n + m − 1, m)
            let mut c: u128 = 1;
            for i in 0..m as u128 {
                c = c.saturating_mul(n as u128 + i) / (i + 1);
            }
            c
        };
        let mut total: u128 = 0;
        for k in 0..=self.max_total_excitations {
            if !self.shell_allowed(k) {
                continue;
            }
            if k >= 1 {
                total = total.saturating_add(multisets(self.n_modes, k - 1));
            }
            total = total.saturating_add(multisets(self.n_modes, k));
        }
        usize::try_from(total).unwrap_or(usize::MAX)
    }
}

/// One basis vector: emitter level plus the sorted multiset of occupied modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FockState {
    excited: bool,
    len: u8,
    modes: [u16; MAX_EXCITATIONS],
}

impl FockState {
    pub fn vacuum(excited: bool) -> Self {
        Self {
            excited,
            len: 0,
            modes: [0; MAX_EXCITATIONS],
        }
    }

    /// Builds a state from per-mode occupations.
    pub fn from_occupations(excited: bool, occ: &[usize]) -> Option<Self> {
        let mut s = Self::vacuum(excited);
        for (i, &n) in occ.iter().enumerate() {
            for _ in 0..n {
                if s.len as usize == MAX_EXCITATIONS {
                    return None;
                }
                s.modes[s.len as usize] = i as u16;
                s.len += 1;
            }
        }
        Some(s)
    }

    pub fn is_excited(&self) -> bool {
        self.excited
    }

    /// Sorted occupied mode indices, one entry per quantum.
    pub fn photons(&self) -> &[u16] {
        &self.modes[..self.len as usize]
    }

    pub fn total_photons(&self) -> usize {
        self.len as usize
    }

    pub fn excitations(&self) -> usize {
        self.len as usize + usize::from(self.excited)
    }

    pub fn occupation(&self, mode: usize) -> usize {
        self.photons().iter().filter(|&&m| m as usize == mode).count()
    }

    pub fn occupations(&self, n_modes: usize) -> Vec<usize> {
        let mut occ = vec![0; n_modes];
        for &m in self.photons() {
            occ[m as usize] += 1;
        }
        occ
    }

    fn flipped(&self) -> Self {
        let mut s = *self;
        s.excited = !s.excited;
        s
    }

    fn with_added(&self, mode: u16) -> Option<Self> {
        let len = self.len as usize;
        if len == MAX_EXCITATIONS {
            return None;
        }
        let mut s = *self;
        let pos = self.photons().partition_point(|&m| m <= mode);
        s.modes.copy_within(pos..len, pos + 1);
        s.modes[pos] = mode;
        s.len += 1;
        Some(s)
    }

    fn with_removed(&self, mode: u16) -> Option<Self> {
        let len = self.len as usize;
        let pos = self.photons().iter().position(|&m| m == mode)?;
        let mut s = *self;
        s.modes.copy_within(pos + 1..len, pos);
        s.len -= 1;
        s.modes[s.len as usize] = 0;
        Some(s)
    }

    /// Distinct occupied modes with their occupation numbers.
    fn occupied(&self) -> impl Iterator<Item = (u16, usize)> + '_ {
        let p = self.photons();
        let mut i = 0;
        std::iter::from_fn(move || {
            if i >= p.len() {
                return None;
            }
            let m = p[i];
            let mut j = i;
            while j < p.len() && p[j] == m {
                j += 1;
            }
            let n = j - i;
            i = j;
            Some((m, n))
        })
    }
}

/// Indexed basis: a bijection between [`FockState`]s and `0..dim`.
#[derive(Debug, Clone)]
pub struct Basis {
    spec: BasisSpec,
    states: Vec<FockState>,
    index: HashMap<FockState, u32>,
}

/// Visits all sorted multisets of size `m` drawn from `0..n` in
/// lexicographic order.
fn for_each_multiset(n: usize, m: usize, mut f: impl FnMut(&[u16])) {
    let mut cur: Vec<u16> = vec![0; m];
    if m == 0 {
        f(&cur);
        return;
    }
    loop {
        f(&cur);
        // advance: rightmost position that can still grow
        let mut pos = m;
        while pos > 0 {
            pos -= 1;
            if (cur[pos] as usize) + 1 < n {
                let v = cur[pos] + 1;
                for c in cur.iter_mut().skip(pos) {
                    *c = v;
                }
                break;
            }
            if pos == 0 {
                return;
            }
        }
    }
}

impl Basis {
    pub fn build(spec: BasisSpec) -> Result<Self> {
        spec.validate()?;
        let count = spec.dimension();
        if count > spec.cap {
            return Err(Error::DimensionCap { count, cap: spec.cap });
        }
        let mut states = Vec::with_capacity(count);
        for k in 0..=spec.max_total_excitations {
            if !spec.shell_allowed(k) {
                continue;
            }
            if k >= 1 {
                for_each_multiset(spec.n_modes, k - 1, |ms| states.push(state_from(true, ms)));
            }
            for_each_multiset(spec.n_modes, k, |ms| states.push(state_from(false, ms)));
        }
        debug_assert_eq!(states.len(), count);
        let index = states.iter().enumerate().map(|(i, s)| (*s, i as u32)).collect();
        Ok(Self { spec, states, index })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn n_modes(&self) -> usize {
        self.spec.n_modes
    }

    pub fn state(&self, idx: usize) -> &FockState {
        &self.states[idx]
    }

    pub fn states(&self) -> &[FockState] {
        &self.states
    }

    pub fn index_of(&self, s: &FockState) -> Option<usize> {
        self.index.get(s).map(|i| *i as usize)
    }

    /// Index of |s; 0…0⟩ if it belongs to the basis.
    pub fn vacuum_index(&self, excited: bool) -> Option<usize> {
        self.index_of(&FockState::vacuum(excited))
    }

    /// Diagonal of ⟨a_i† a_i⟩.
    pub fn number_diagonal<T: Real>(&self, mode: usize) -> Vec<T> {
        self.states.iter().map(|s| T::of_usize(s.occupation(mode))).collect()
    }

    /// Diagonal of the excited-state projector σ⁺σ⁻.
    pub fn excited_diagonal<T: Real>(&self) -> Vec<T> {
        self.states
            .iter()
            .map(|s| if s.excited { T::one() } else { T::zero() })
            .collect()
    }

    /// Diagonal of the total excitation number Σn_i + σ⁺σ⁻.
    pub fn excitation_diagonal<T: Real>(&self) -> Vec<T> {
        self.states.iter().map(|s| T::of_usize(s.excitations())).collect()
    }
}

fn state_from(excited: bool, ms: &[u16]) -> FockState {
    let mut s = FockState::vacuum(excited);
    s.modes[..ms.len()].copy_from_slice(ms);
    s.len = ms.len() as u8;
    s
}

/// Real sparse matrix in compressed-row form. Every operator of this model
/// has real matrix elements in the number basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<T>,
}

/// Operators on the truncated space.
pub type OperatorMatrix<T> = SparseMatrix<T>;

impl<T: Real> SparseMatrix<T> {
    /// Assembles from per-row entry lists; duplicates are summed and exact
    /// zeros dropped.
    pub fn from_rows(dim: usize, rows: Vec<Vec<(u32, T)>>) -> Self {
        debug_assert_eq!(rows.len(), dim);
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = row[k].1;
                k += 1;
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                if v != T::zero() {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { dim, row_ptr, cols, vals }
    }

    pub fn from_triplets(dim: usize, triplets: impl IntoIterator<Item = (usize, usize, T)>) -> Self {
        let mut rows = vec![Vec::new(); dim];
        for (r, c, v) in triplets {
            rows[r].push((c as u32, v));
        }
        Self::from_rows(dim, rows)
    }

    pub fn diagonal(d: &[T]) -> Self {
        Self::from_triplets(d.len(), d.iter().enumerate().map(|(i, v)| (i, i, *v)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].iter().zip(&self.vals[a..b]).map(|(c, v)| (*c as usize, *v))
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.row(r).find(|e| e.0 == c).map_or(T::zero(), |e| e.1)
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.dim];
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                rows[c].push((r as u32, v));
            }
        }
        Self::from_rows(self.dim, rows)
    }

    pub fn to_dense(&self) -> Vec<T> {
        let n = self.dim;
        let mut d = vec![T::zero(); n * n];
        for r in 0..n {
            for (c, v) in self.row(r) {
                d[r * n + c] += v;
            }
        }
        d
    }

    /// max |A − Aᵀ|.
    pub fn asymmetry(&self) -> T {
        let t = self.transpose();
        let mut worst = T::zero();
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                worst = worst.max((v - t.get(r, c)).abs());
            }
            for (c, v) in t.row(r) {
                worst = worst.max((v - self.get(r, c)).abs());
            }
        }
        worst
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[Cplx<T>], y: &mut [Cplx<T>]) {
        for (r, out) in y.iter_mut().enumerate().take(self.dim) {
            let mut acc = Cplx::new(T::zero(), T::zero());
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += x[self.cols[k] as usize] * self.vals[k];
            }
            *out = acc;
        }
    }

    /// Y = A X for a row-major dim × dim complex matrix X.
    pub fn mul_dense(&self, x: &[Cplx<T>], y: &mut [Cplx<T>]) {
        let n = self.dim;
        debug_assert_eq!(x.len(), n * n);
        for r in 0..n {
            let out = &mut y[r * n..(r + 1) * n];
            out.iter_mut().for_each(|v| *v = Cplx::new(T::zero(), T::zero()));
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[k] as usize;
                let a = self.vals[k];
                let src = &x[c * n..(c + 1) * n];
                for (o, s) in out.iter_mut().zip(src) {
                    o.re += a * s.re;
                    o.im += a * s.im;
                }
            }
        }
    }

    /// A·B for two sparse operators (used in tests and diagnostics).
    pub fn matmul(&self, other: &Self) -> Self {
        let mut rows = vec![Vec::new(); self.dim];
        for (r, row) in rows.iter_mut().enumerate() {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    row.push((c as u32, a * b));
                }
            }
        }
        Self::from_rows(self.dim, rows)
    }

    pub fn is_lower_in(&self, grading: &[usize]) -> bool {
        (0..self.dim).all(|r| self.row(r).all(|(c, _)| grading[r] < grading[c]))
    }
}

fn check_modes(model_modes: usize, basis: &Basis) -> Result<()> {
    if model_modes != basis.n_modes() {
        return Err(Error::DimensionMismatch {
            expected: basis.n_modes(),
            got: model_modes,
        });
    }
    Ok(())
}

/// H = (ω_e/2)σ_z + Σ_ij ω_ij a_i†a_j + Σ_i g_i(a_i† + a_i)σ_x, projected onto
/// the truncated basis (matrix elements leaving it are dropped).
pub fn build_hamiltonian<T: Real>(
    model: &ModeModel<T>,
    emitter: &EmitterSpec<T>,
    basis: &Basis,
) -> Result<OperatorMatrix<T>> {
    check_modes(model.n_modes(), basis)?;
    emitter.validate()?;
    let n = model.n_modes();
    let half_e = emitter.omega_e * T::of(0.5);
    // off-diagonal neighbours per mode, so sparse networks stay cheap
    let hops: Vec<Vec<(u16, T)>> = (0..n)
        .map(|j| {
            (0..n)
                .filter(|&i| i != j && model.omega_ij(i, j) != T::zero())
                .map(|i| (i as u16, model.omega_ij(i, j)))
                .collect()
        })
        .collect();
    let coupled: Vec<(u16, T)> = model
        .g()
        .iter()
        .enumerate()
        .filter(|(_, g)| **g != T::zero())
        .map(|(i, g)| (i as u16, *g))
        .collect();

    let rows = basis
        .states()
        .iter()
        .enumerate()
        .map(|(r, s)| {
            let mut row: Vec<(u32, T)> = Vec::new();
            let mut diag = if s.excited { half_e } else { -half_e };
            for &m in s.photons() {
                diag += model.omega_ij(m as usize, m as usize);
            }
            row.push((r as u32, diag));
            // ω_ij a_i† a_j
            for (j, nj) in s.occupied() {
                let lowered = s.with_removed(j).expect("occupied");
                for &(i, w) in &hops[j as usize] {
                    let ni = lowered.occupation(i as usize);
                    if let Some(t) = lowered.with_added(i).and_then(|t| basis.index_of(&t)) {
                        // one sqrt of the integer product keeps H exactly symmetric
                        let amp = w * T::of_usize(nj * (ni + 1)).sqrt();
                        row.push((t as u32, amp));
                    }
                }
            }
            // g_i (a_i† + a_i) σ_x
            let f = s.flipped();
            for &(i, g) in &coupled {
                let ni = s.occupation(i as usize);
                if let Some(t) = f.with_added(i).and_then(|t| basis.index_of(&t)) {
                    row.push((t as u32, g * T::of_usize(ni + 1).sqrt()));
                }
            }
            for (j, nj) in s.occupied() {
                let g = model.g()[j as usize];
                if g == T::zero() {
                    continue;
                }
                if let Some(t) = f.with_removed(j).and_then(|t| basis.index_of(&t)) {
                    row.push((t as u32, g * T::of_usize(nj).sqrt()));
                }
            }
            row
        })
        .collect();
    Ok(SparseMatrix::from_rows(basis.dim(), rows))
}

/// a_i on the truncated basis.
pub fn annihilation<T: Real>(basis: &Basis, mode: usize) -> Result<OperatorMatrix<T>> {
    if mode >= basis.n_modes() {
        return Err(Error::invalid(format!("mode {mode} out of range")));
    }
    if basis.spec().parity.is_some() {
        return Err(Error::invalid("ladder operators leave a parity-restricted basis"));
    }
    let m = mode as u16;
    let rows = basis
        .states()
        .iter()
        .map(|s| {
            let n = s.occupation(mode);
            s.with_added(m)
                .and_then(|c| basis.index_of(&c))
                .map(|c| vec![(c as u32, T::of_usize(n + 1).sqrt())])
                .unwrap_or_default()
        })
        .collect();
    Ok(SparseMatrix::from_rows(basis.dim(), rows))
}

/// a_i†.
pub fn creation<T: Real>(basis: &Basis, mode: usize) -> Result<OperatorMatrix<T>> {
    Ok(annihilation(basis, mode)?.transpose())
}

/// Decay channels (a_i, κ_i), one per mode.
pub fn build_jump_operators<T: Real>(
    model: &ModeModel<T>,
    basis: &Basis,
) -> Result<Vec<(OperatorMatrix<T>, T)>> {
    check_modes(model.n_modes(), basis)?;
    (0..model.n_modes())
        .map(|i| Ok((annihilation(basis, i)?, model.kappa()[i])))
        .collect()
}

fn emitter_op<T: Real>(basis: &Basis, f: impl Fn(&FockState) -> Option<(FockState, T)>) -> OperatorMatrix<T> {
    let rows = basis
        .states()
        .iter()
        .map(|s| {
            f(s).and_then(|(t, v)| basis.index_of(&t).map(|c| vec![(c as u32, v)]))
                .unwrap_or_default()
        })
        .collect();
    SparseMatrix::from_rows(basis.dim(), rows)
}

/// σ_z = |e⟩⟨e| − |g⟩⟨g|.
pub fn sigma_z<T: Real>(basis: &Basis) -> OperatorMatrix<T> {
    emitter_op(basis, |s| Some((*s, if s.excited { T::one() } else { -T::one() })))
}

/// σ_x = σ⁺ + σ⁻, projected onto the basis.
pub fn sigma_x<T: Real>(basis: &Basis) -> OperatorMatrix<T> {
    emitter_op(basis, |s| Some((s.flipped(), T::one())))
}

/// σ⁺ = |e⟩⟨g|.
pub fn sigma_plus<T: Real>(basis: &Basis) -> OperatorMatrix<T> {
    // row |e…⟩ picks column |g…⟩
    emitter_op(basis, |s| s.excited.then(|| (s.flipped(), T::one())))
}

/// σ⁻ = |g⟩⟨e|.
pub fn sigma_minus<T: Real>(basis: &Basis) -> OperatorMatrix<T> {
    emitter_op(basis, |s| (!s.excited).then(|| (s.flipped(), T::one())))
}
