//! Run configuration (JSON). Unknown fields are rejected, and cross-field
//! consistency is checked on load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{linear_grid, negative_log_grid, FitConfig};
use crate::fock::{BasisSpec, EmitterSpec, DEFAULT_DIMENSION_CAP};
use crate::ode::Tolerance;
use crate::oracle::DiscretizationSpec;
use crate::spectral::{LorentzianParams, SingleModeOhmicParams, SpectralDensity, TabulatedSd};
use crate::units::EnergyUnit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Lorentzian { omega_c: f64, g: f64, kappa: f64 },
    SingleModeOhmic { omega_c: f64, g: f64, kappa: f64 },
    /// CSV file with header `omega,j`; relative paths resolve against the
    /// config file's directory.
    Tabulated { path: PathBuf },
}

fn default_n_pos() -> usize {
    2000
}
fn default_n_neg() -> usize {
    400
}
fn default_true() -> bool {
    true
}
fn default_max_iterations() -> usize {
    3000
}
fn default_restarts() -> usize {
    4
}
fn default_schedule() -> Vec<f64> {
    vec![1e-2, 1.0, 1e2, 1e4]
}
fn default_margin() -> f64 {
    0.5
}
fn default_weight_floor() -> f64 {
    1e-3
}
fn default_n_exc() -> usize {
    3
}
fn default_cap() -> usize {
    DEFAULT_DIMENSION_CAP
}
fn default_outputs() -> usize {
    601
}
fn default_tol() -> f64 {
    1e-8
}
fn default_points() -> usize {
    400
}
fn default_floor() -> f64 {
    1e-3
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub n_modes: usize,
    pub neg_threshold: f64,
    /// [lo, hi] of the uniform positive grid.
    pub pos_window: [f64; 2],
    #[serde(default = "default_n_pos")]
    pub n_pos: usize,
    /// Innermost |ω| of the negative grid; defaults to 10⁻³·ω_e.
    #[serde(default)]
    pub neg_min_abs: Option<f64>,
    /// Outermost |ω| of the negative grid; defaults to the positive window edge.
    #[serde(default)]
    pub neg_max_abs: Option<f64>,
    #[serde(default = "default_n_neg")]
    pub n_neg: usize,
    /// false fits the positive window only.
    #[serde(default = "default_true")]
    pub constrain_negative: bool,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_restarts")]
    pub n_restarts: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_schedule")]
    pub penalty_schedule: Vec<f64>,
    #[serde(default = "default_margin")]
    pub hinge_margin: f64,
    #[serde(default = "default_weight_floor")]
    pub weight_floor: f64,
    #[serde(default = "default_true")]
    pub chain_start: bool,
    /// Defaults to 4 × pos_window[1].
    #[serde(default)]
    pub max_kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    /// Must match `fit.n_modes` when given.
    #[serde(default)]
    pub n_modes: Option<usize>,
    #[serde(default = "default_n_exc")]
    pub max_total_excitations: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

impl Default for BasisSection {
    fn default() -> Self {
        Self {
            n_modes: None,
            max_total_excitations: default_n_exc(),
            cap: default_cap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadySection {
    pub horizon: f64,
    /// Stationarity threshold on ‖L[ρ]‖₁.
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    /// In ħ / energy unit.
    pub t_max: f64,
    #[serde(default = "default_outputs")]
    pub n_outputs: usize,
    /// Relative local error tolerance.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Absolute tolerance; defaults to tol / 100.
    #[serde(default)]
    pub atol: Option<f64>,
    /// Repeat the run at N_exc + 1 and report the change in P_e.
    #[serde(default)]
    pub check_truncation: bool,
    #[serde(default)]
    pub steady_state: Option<SteadySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub omega_min: f64,
    pub omega_max: f64,
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default = "default_n_exc")]
    pub max_total_excitations: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Repeat with twice the points and report the change in P_e.
    #[serde(default)]
    pub check_doubling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub n_modes: Vec<usize>,
    pub thresholds: Vec<f64>,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub units: EnergyUnit,
    pub target: TargetSpec,
    pub emitter: EmitterSpec<f64>,
    pub fit: FitSection,
    #[serde(default)]
    pub basis: BasisSection,
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub oracle: Option<OracleSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    /// Output directory; relative paths resolve against the config file.
    #[serde(default = "default_out_dir")]
    pub outputs: PathBuf,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.outputs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match &self.target {
            TargetSpec::Lorentzian { omega_c, g, kappa } => {
                LorentzianParams::new(*omega_c, *g, *kappa)?;
            }
            TargetSpec::SingleModeOhmic { omega_c, g, kappa } => {
                SingleModeOhmicParams::new(*omega_c, *g, *kappa)?;
            }
            TargetSpec::Tabulated { .. } => {}
        }
        self.emitter.validate()?;
        let f = &self.fit;
        if f.pos_window[0] <= 0.0 || f.pos_window[1] <= f.pos_window[0] {
            return bad(format!("fit.pos_window must satisfy 0 < lo < hi, got {:?}", f.pos_window));
        }
        if let Some(n) = self.basis.n_modes {
            if n != f.n_modes {
                return bad(format!("basis.n_modes = {n} but fit.n_modes = {}", f.n_modes));
            }
        }
        self.fit_config().validate()?;
        self.basis_spec().validate()?;
        let d = &self.dynamics;
        if !(d.t_max > 0.0) || d.n_outputs < 2 || !(d.tol > 0.0) {
            return bad("dynamics needs t_max > 0, n_outputs ≥ 2 and tol > 0".into());
        }
        if let Some(o) = &self.oracle {
            self.discretization().expect("oracle present").validate()?;
            BasisSpec::new(o.n_points, o.max_total_excitations).validate()?;
        }
        if let Some(s) = &self.sweep {
            if s.n_modes.is_empty() || s.thresholds.is_empty() || !(s.floor > 0.0) {
                return bad("sweep needs non-empty n_modes and thresholds and floor > 0".into());
            }
            if self.oracle.is_none() {
                return bad("sweep needs an oracle section".into());
            }
        }
        Ok(())
    }

    /// Loads or constructs the target density.
    pub fn target(&self) -> Result<Box<dyn SpectralDensity<f64>>> {
        Ok(match &self.target {
            TargetSpec::Lorentzian { omega_c, g, kappa } => Box::new(LorentzianParams::new(*omega_c, *g, *kappa)?),
            TargetSpec::SingleModeOhmic { omega_c, g, kappa } => {
                Box::new(SingleModeOhmicParams::new(*omega_c, *g, *kappa)?)
            }
            TargetSpec::Tabulated { path } => Box::new(TabulatedSd::<f64>::from_csv_path(self.resolve(path))?),
        })
    }

    pub fn fit_config(&self) -> FitConfig<f64> {
        let f = &self.fit;
        let neg_lo = f.neg_min_abs.unwrap_or(1e-3 * self.emitter.omega_e);
        let neg_hi = f.neg_max_abs.unwrap_or(f.pos_window[1]);
        FitConfig {
            n_modes: f.n_modes,
            neg_threshold: f.neg_threshold,
            pos_grid: linear_grid(f.pos_window[0], f.pos_window[1], f.n_pos),
            neg_grid: if f.constrain_negative {
                negative_log_grid(neg_lo, neg_hi, f.n_neg)
            } else {
                Vec::new()
            },
            max_iterations: f.max_iterations,
            n_restarts: f.n_restarts,
            rng_seed: f.rng_seed,
            penalty_schedule: f.penalty_schedule.clone(),
            hinge_margin: f.hinge_margin,
            weight_floor: f.weight_floor,
            chain_start: f.chain_start,
            max_kappa: f.max_kappa.unwrap_or(4.0 * f.pos_window[1]),
        }
    }

    pub fn basis_spec(&self) -> BasisSpec {
        BasisSpec::new(self.fit.n_modes, self.basis.max_total_excitations).with_cap(self.basis.cap)
    }

    pub fn tolerance(&self) -> Tolerance<f64> {
        Tolerance {
            rtol: self.dynamics.tol,
            atol: self.dynamics.atol.unwrap_or(self.dynamics.tol * 1e-2),
        }
    }

    pub fn time_grid(&self) -> Vec<f64> {
        crate::dynamics::uniform_grid(self.dynamics.t_max, self.dynamics.n_outputs)
    }

    pub fn discretization(&self) -> Option<DiscretizationSpec<f64>> {
        self.oracle
            .as_ref()
            .map(|o| DiscretizationSpec::uniform(o.omega_min, o.omega_max, o.n_points))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "target": {"type": "single_mode_ohmic", "omega_c": 0.58, "g": 0.25, "kappa": 0.1},
        "emitter": {"omega_e": 0.58},
        "fit": {"n_modes": 3, "neg_threshold": 1e-8, "pos_window": [0.029, 2.9]},
        "dynamics": {"t_max": 100.0}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_json(MINIMAL, ".").unwrap();
        assert_eq!(c.units, EnergyUnit::MilliElectronVolt);
        assert_eq!(c.basis.max_total_excitations, 3);
        let f = c.fit_config();
        assert_eq!(f.pos_grid.len(), 2000);
        assert_eq!(f.neg_grid.len(), 400);
        assert!((f.neg_grid[0] + 0.58e-3).abs() < 1e-15);
        assert_eq!(c.time_grid().len(), 601);
        assert!((c.tolerance().atol - 1e-10).abs() < 1e-24);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL.replace("\"t_max\": 100.0", "\"t_max\": 100.0, \"tmax\": 3");
        assert!(matches!(RunConfig::from_json(&text, "."), Err(Error::Config(_))));
    }

    #[test]
    fn inconsistent_mode_counts_are_rejected() {
        let text = MINIMAL.replace("\"dynamics\"", "\"basis\": {\"n_modes\": 4}, \"dynamics\"");
        let err = RunConfig::from_json(&text, ".").unwrap_err();
        assert!(err.to_string().contains("n_modes"), "{err}");
    }

    #[test]
    fn unconstrained_fit_has_no_negative_grid() {
        let text = MINIMAL.replace("\"pos_window\"", "\"constrain_negative\": false, \"pos_window\"");
        let c = RunConfig::from_json(&text, ".").unwrap();
        assert!(c.fit_config().neg_grid.is_empty());
    }

    #[test]
    fn tabulated_paths_resolve_against_config_dir() {
        let text = MINIMAL.replace(
            r#"{"type": "single_mode_ohmic", "omega_c": 0.58, "g": 0.25, "kappa": 0.1}"#,
            r#"{"type": "tabulated", "path": "sd.csv"}"#,
        );
        let c = RunConfig::from_json(&text, "/data/run").unwrap();
        assert_eq!(c.resolve(Path::new("sd.csv")), PathBuf::from("/data/run/sd.csv"));
        assert!(c.target().is_err());
    }

    #[test]
    fn sweep_requires_oracle() {
        let text = MINIMAL.replace("\"dynamics\"", "\"sweep\": {\"n_modes\": [3], \"thresholds\": [1e-3]}, \"dynamics\"");
        assert!(RunConfig::from_json(&text, ".").is_err());
    }
}
