use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use usc_lindblad::config::{RunConfig, TargetSpec};
use usc_lindblad::dynamics::{truncation_change, MasterEquation, Trajectory};
use usc_lindblad::fit::{fit_model, fit_report, FitResult};
use usc_lindblad::io;
use usc_lindblad::metrics::{relative_error, threshold_sweep, SweepSettings};
use usc_lindblad::oracle::{doubling_change, reference_trajectory};
use usc_lindblad::plot::{line_plot, Series};
use usc_lindblad::spectral::{LorentzianParams, ModeModel, ModelDocument, SpectralDensity};
use usc_lindblad::Error;

#[derive(Parser)]
#[command(name = "usc-lindblad", version, about = "Few-mode Lindblad models of emitters in structured environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fit RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a mode network to the target spectral density.
    Fit(Common),
    /// Propagate the master equation for a fitted model.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Model JSON; defaults to <out>/model.json, or the exact one-mode
        /// model for a Lorentzian target.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Propagate the discretized-continuum reference.
    Oracle(Common),
    /// Relative error of trajectory A against reference B.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        floor: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error against the reference over a grid of mode counts and thresholds.
    Sweep(Common),
}

enum Failure {
    Input(String),
    Fit(String),
    Cap(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::DimensionCap { .. } => Failure::Cap(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(c) => cmd_fit(&c),
        Command::Simulate { common, model } => cmd_simulate(&common, model.as_deref()),
        Command::Oracle(c) => cmd_oracle(&c),
        Command::Compare { a, b, floor, out } => cmd_compare(&a, &b, floor, out.as_deref()),
        Command::Sweep(c) => cmd_sweep(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Fit(m)) => {
            eprintln!("fit failed: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Cap(m)) => {
            eprintln!("resource cap: {m}");
            ExitCode::from(3)
        }
    }
}

fn load(c: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.fit.rng_seed = s;
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.output_dir());
    std::fs::create_dir_all(&out).map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
    Ok((cfg, out))
}

/// Plots never change the exit status.
fn write_plot(path: &Path, svg: Option<String>) {
    if let Some(svg) = svg {
        if let Err(e) = std::fs::write(path, svg) {
            eprintln!("warning: could not write {}: {e}", path.display());
        }
    }
}

fn trajectory_plot(traj: &Trajectory<f64>, title: &str) -> Option<String> {
    line_plot(
        title,
        &format!("t [hbar/{}]", traj.units.label()),
        &[
            Series::new("P_e", traj.times.clone(), traj.emitter_population.clone()),
            Series::new("P_bath", traj.times.clone(), traj.bath_photons.clone()),
        ],
        false,
    )
}

fn report_fit(r: &FitResult<f64>) {
    println!(
        "fit: N={} restart={} objective={:e} pos_residual={:e} neg_violation={:e} verified_neg_violation={:e} converged={}",
        r.model.n_modes(),
        r.restart_index,
        r.objective,
        r.pos_residual,
        r.neg_violation,
        r.verified_neg_violation,
        r.converged
    );
}

fn cmd_fit(c: &Common) -> Outcome {
    let (cfg, out) = load(c)?;
    let target = cfg.target()?;
    let fc = cfg.fit_config();
    let r = fit_model(target.as_ref(), &fc)?;
    report_fit(&r);
    let doc = r.model.to_document(cfg.units);
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Input(e.to_string()))?;
    std::fs::write(out.join("model.json"), text + "\n").map_err(|e| Failure::Input(e.to_string()))?;
    let report = fit_report(&r, target.as_ref(), &fc);
    io::write_file(out.join("fit_report.csv"), |w| io::write_fit_report(&report, cfg.units, w))?;
    let pos: Vec<_> = report.rows.iter().filter(|r| r.region == usc_lindblad::fit::Region::Positive).collect();
    let w: Vec<f64> = pos.iter().map(|r| r.omega).collect();
    write_plot(
        &out.join("fit_report.svg"),
        line_plot(
            "spectral density",
            &format!("omega [{}]", cfg.units.label()),
            &[
                Series::new("target", w.clone(), pos.iter().map(|r| r.target).collect()),
                Series::new("model", w, pos.iter().map(|r| r.model).collect()),
            ],
            true,
        ),
    );
    if !r.converged {
        return Err(Failure::Fit("optimizer did not converge".into()));
    }
    if r.neg_violation > 0.0 {
        return Err(Failure::Fit(format!("negative-frequency violation {:e}", r.neg_violation)));
    }
    Ok(())
}

fn load_model(cfg: &RunConfig, out: &Path, path: Option<&Path>) -> Result<ModeModel<f64>, Failure> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => {
            let default = out.join("model.json");
            if !default.exists() {
                if let TargetSpec::Lorentzian { omega_c, g, kappa } = cfg.target {
                    return Ok(LorentzianParams::new(omega_c, g, kappa)?.to_mode_model());
                }
            }
            default
        }
    };
    let doc = ModelDocument::read(&path)?;
    if doc.units != cfg.units {
        return Err(Failure::Input(format!(
            "{}: model is in {} but the config uses {}",
            path.display(),
            doc.units.label(),
            cfg.units.label()
        )));
    }
    if doc.n_modes != cfg.fit.n_modes {
        return Err(Failure::Input(format!(
            "{}: model has {} modes but the config expects {}",
            path.display(),
            doc.n_modes,
            cfg.fit.n_modes
        )));
    }
    Ok(ModeModel::from_document(&doc)?)
}

fn cmd_simulate(c: &Common, model_path: Option<&Path>) -> Outcome {
    let (cfg, out) = load(c)?;
    let model = load_model(&cfg, &out, model_path)?;
    let spec = cfg.basis_spec();
    let me = MasterEquation::new(&model, &cfg.emitter, spec)?;
    let grid = cfg.time_grid();
    let tol = cfg.tolerance();
    let rho0 = me.initial_state(cfg.emitter.initial_state);
    let mut ev = me.evolve(&rho0, &grid, tol)?;
    ev.trajectory.units = cfg.units;
    let mut extra = vec![
        ("basis_dimension", me.dim().to_string()),
        ("max_total_excitations", spec.max_total_excitations.to_string()),
    ];
    if cfg.dynamics.check_truncation {
        let change = truncation_change(&model, &cfg.emitter, spec, &grid, tol)?;
        println!("truncation check: max |dP_e| at N_exc+1 = {change:e}");
        extra.push(("truncation_change", change.to_string()));
    }
    if let Some(ss) = &cfg.dynamics.steady_state {
        let st = me.steady_state(&ev.final_state, ss.horizon, ss.tol, tol)?;
        let (energy, mean_exc, psi) = me.lowest_excitation_eigenstate();
        let overlap = st.state.overlap(&psi);
        println!(
            "steady state: stationary={} residual={:e} purity={} overlap={} (eigenstate E={energy} <N_exc>={mean_exc})",
            st.stationary,
            st.residual,
            st.state.purity(),
            overlap
        );
        extra.push(("steady_stationary", st.stationary.to_string()));
        extra.push(("steady_residual", st.residual.to_string()));
        extra.push(("steady_purity", st.state.purity().to_string()));
        extra.push(("steady_overlap", overlap.to_string()));
    }
    let traj = &ev.trajectory;
    println!(
        "simulate: dim={} P_e(t_max)={} P_bath(t_max)={} error_bound={:e}",
        me.dim(),
        traj.emitter_population.last().copied().unwrap_or(f64::NAN),
        traj.bath_photons.last().copied().unwrap_or(f64::NAN),
        traj.error_bound.last().copied().unwrap_or(0.0)
    );
    io::write_file(out.join("trajectory.csv"), |w| io::write_trajectory(traj, &extra, w))?;
    write_plot(&out.join("trajectory.svg"), trajectory_plot(traj, "master equation"));
    Ok(())
}

/// CSV metadata pairs written alongside a trajectory.
type Metadata = Vec<(&'static str, String)>;

fn oracle_run(cfg: &RunConfig, target: &dyn SpectralDensity<f64>) -> Result<(Trajectory<f64>, Metadata), Failure> {
    let Some(o) = &cfg.oracle else {
        return Err(Failure::Input("config has no oracle section".into()));
    };
    let d = cfg.discretization().expect("oracle section present");
    let grid = cfg.time_grid();
    let run = |d| reference_trajectory(target, &d, &cfg.emitter, o.max_total_excitations, o.cap, &grid, cfg.tolerance());
    let mut traj = run(d)?;
    traj.units = cfg.units;
    let mut extra = vec![
        ("n_points", o.n_points.to_string()),
        ("omega_min", o.omega_min.to_string()),
        ("omega_max", o.omega_max.to_string()),
        ("max_total_excitations", o.max_total_excitations.to_string()),
    ];
    if o.check_doubling {
        let fine = run(d.doubled())?;
        let change = doubling_change(&traj, &fine);
        println!("oracle doubling check: max |dP_e| at {} points = {change:e}", 2 * o.n_points);
        extra.push(("doubling_change", change.to_string()));
    }
    if traj.recurrence_warning {
        eprintln!(
            "warning: t_max exceeds 0.8 of the recurrence time {}",
            traj.recurrence_time.unwrap_or(f64::NAN)
        );
    }
    Ok((traj, extra))
}

fn cmd_oracle(c: &Common) -> Outcome {
    let (cfg, out) = load(c)?;
    let target = cfg.target()?;
    let (traj, extra) = oracle_run(&cfg, target.as_ref())?;
    println!(
        "oracle: P_e(t_max)={} recurrence_time={}",
        traj.emitter_population.last().copied().unwrap_or(f64::NAN),
        traj.recurrence_time.unwrap_or(f64::NAN)
    );
    io::write_file(out.join("oracle.csv"), |w| io::write_trajectory(&traj, &extra, w))?;
    write_plot(&out.join("oracle.svg"), trajectory_plot(&traj, "discretized continuum"));
    Ok(())
}

fn cmd_compare(a: &Path, b: &Path, floor: f64, out: Option<&Path>) -> Outcome {
    let ta = io::read_trajectory_path(a)?;
    let tb = io::read_trajectory_path(b)?;
    if ta.units != tb.units {
        return Err(Failure::Input("trajectories use different units".into()));
    }
    let r = relative_error(&ta, &tb, floor)?;
    println!("compare: avg_rel_error={:e} max_rel_error={:e}", r.avg_rel_error, r.max_rel_error);
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    io::write_file(out.join("error.csv"), |w| io::write_error_report(&r, w))?;
    write_plot(
        &out.join("error.svg"),
        line_plot("relative error", "t", &[Series::new("eps", r.times.clone(), r.rel_error_t.clone())], true),
    );
    Ok(())
}

fn cmd_sweep(c: &Common) -> Outcome {
    let (cfg, out) = load(c)?;
    let Some(sw) = &cfg.sweep else {
        return Err(Failure::Input("config has no sweep section".into()));
    };
    let target = cfg.target()?;
    let (reference, extra) = oracle_run(&cfg, target.as_ref())?;
    io::write_file(out.join("oracle.csv"), |w| io::write_trajectory(&reference, &extra, w))?;
    let settings = SweepSettings {
        fit: cfg.fit_config(),
        emitter: cfg.emitter,
        max_total_excitations: cfg.basis.max_total_excitations,
        cap: cfg.basis.cap,
        tol: cfg.tolerance(),
        floor: sw.floor,
    };
    let table = threshold_sweep(target.as_ref(), &reference, &sw.n_modes, &sw.thresholds, &settings);
    for cell in &table.cells {
        match &cell.outcome {
            Ok(o) => println!(
                "sweep: N={} threshold={:e} avg_rel_error={:e} neg_violation={:e}",
                cell.n_modes, cell.threshold, o.error.avg_rel_error, o.fit.neg_violation
            ),
            Err(e) => println!("sweep: N={} threshold={:e} failed: {e}", cell.n_modes, cell.threshold),
        }
    }
    io::write_file(out.join("sweep.csv"), |w| io::write_sweep(&table, sw.floor, w))?;
    let series: Vec<Series> = sw
        .n_modes
        .iter()
        .map(|n| {
            let (x, y): (Vec<f64>, Vec<f64>) = table
                .row(*n)
                .into_iter()
                .filter_map(|(t, e)| e.map(|e| (t.log10(), e)))
                .unzip();
            Series::new(format!("N={n}"), x, y)
        })
        .collect();
    write_plot(&out.join("sweep.svg"), line_plot("average relative error", "log10 threshold", &series, true));
    if table.cells.iter().any(|c| c.outcome.is_err()) {
        let cap = table
            .cells
            .iter()
            .filter_map(|c| c.outcome.as_ref().err())
            .any(|e| e.contains("above the cap"));
        let msg = "some sweep cells failed; see sweep.csv metadata".to_string();
        return Err(if cap { Failure::Cap(msg) } else { Failure::Input(msg) });
    }
    Ok(())
}
