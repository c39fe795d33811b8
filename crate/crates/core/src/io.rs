//! CSV artifacts. Every table starts with `# key=value` metadata lines, the
//! first of which is `# generated_unix=<seconds>`; everything after it is a
//! pure function of the inputs. Floats are written with `{}` so they
//! round-trip exactly.

use std::fmt::Display;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::fit::{FitReport, Region};
use crate::metrics::{ErrorReport, SweepTable};
use crate::scalar::Real;
use crate::units::EnergyUnit;

/// Metadata key whose line is excluded from determinism comparisons.
pub const TIMESTAMP_KEY: &str = "generated_unix";

/// A parsed CSV table with its metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub metadata: Vec<(String, String)>,
    pub header: Vec<String>,
    /// (line number, cells)
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads metadata, header and rows, checking that every row has as many cells
/// as the header. `origin` only labels diagnostics.
pub fn read_table<R: Read>(reader: R, origin: &Path) -> Result<Table> {
    let mut table = Table::default();
    let mut have_header = false;
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                table.metadata.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
        if !have_header {
            table.header = cells;
            have_header = true;
        } else if cells.len() != table.header.len() {
            return Err(parse_error(
                origin,
                lineno,
                format!("expected {} columns, found {}", table.header.len(), cells.len()),
            ));
        } else {
            table.rows.push((lineno, cells));
        }
    }
    if !have_header {
        return Err(parse_error(origin, 1, "missing header line"));
    }
    Ok(table)
}

pub fn read_table_path(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    read_table(std::fs::File::open(path)?, path)
}

struct Columns<'a> {
    table: &'a Table,
    origin: &'a Path,
}

impl Columns<'_> {
    fn index(&self, name: &str) -> Result<usize> {
        self.table
            .column(name)
            .ok_or_else(|| parse_error(self.origin, 1, format!("missing column \"{name}\"")))
    }

    fn number(&self, line: usize, cell: &str) -> Result<f64> {
        cell.parse::<f64>()
            .map_err(|_| parse_error(self.origin, line, format!("bad number \"{cell}\"")))
    }

    fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index(name)?;
        self.table.rows.iter().map(|(l, r)| self.number(*l, &r[i])).collect()
    }
}

fn write_metadata<W: Write>(w: &mut W, entries: &[(&str, String)]) -> Result<()> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    writeln!(w, "# {TIMESTAMP_KEY}={now}")?;
    for (k, v) in entries {
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

fn join<I: IntoIterator<Item = D>, D: Display>(items: I) -> String {
    items.into_iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

fn unit_from_label(s: &str) -> Option<EnergyUnit> {
    match s {
        "meV" => Some(EnergyUnit::MilliElectronVolt),
        "eV" => Some(EnergyUnit::ElectronVolt),
        _ => None,
    }
}

/// Writes `t,t_fs,P_e,P_bath,purity,trace_defect,error_bound,n_1..n_N`.
pub fn write_trajectory<T: Real, W: Write>(traj: &Trajectory<T>, extra: &[(&str, String)], mut w: W) -> Result<()> {
    let mut meta = vec![
        ("units", traj.units.label().to_string()),
        ("oracle", traj.oracle.to_string()),
        (
            "recurrence_time",
            traj.recurrence_time.map(|t| t.as_f64().to_string()).unwrap_or_else(|| "none".into()),
        ),
        ("recurrence_warning", traj.recurrence_warning.to_string()),
    ];
    meta.extend(extra.iter().cloned());
    write_metadata(&mut w, &meta)?;
    let n = traj.n_modes();
    let mut header = vec!["t", "t_fs", "P_e", "P_bath", "purity", "trace_defect", "error_bound"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend((1..=n).map(|i| format!("n_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for k in 0..traj.len() {
        let t = traj.times[k].as_f64();
        let mut row = vec![
            t,
            traj.units.to_fs(t),
            traj.emitter_population[k].as_f64(),
            traj.bath_photons[k].as_f64(),
            traj.purity[k].as_f64(),
            traj.trace_defect[k].as_f64(),
            traj.error_bound[k].as_f64(),
        ];
        row.extend(traj.mode_populations[k].iter().map(|v| v.as_f64()));
        writeln!(w, "{}", join(row))?;
    }
    Ok(())
}

pub fn read_trajectory<R: Read>(reader: R, origin: &Path) -> Result<Trajectory<f64>> {
    let table = read_table(reader, origin)?;
    let cols = Columns { table: &table, origin };
    let units = match table.meta("units") {
        None => EnergyUnit::default(),
        Some(s) => unit_from_label(s).ok_or_else(|| parse_error(origin, 1, format!("unknown units \"{s}\"")))?,
    };
    let mut traj = Trajectory::with_capacity(table.rows.len(), units);
    traj.times = cols.floats("t")?;
    traj.emitter_population = cols.floats("P_e")?;
    traj.bath_photons = cols.floats("P_bath")?;
    traj.purity = cols.floats("purity")?;
    traj.trace_defect = cols.floats("trace_defect")?;
    traj.error_bound = cols.floats("error_bound")?;
    let mode_cols: Vec<usize> = (1..)
        .map_while(|i| table.column(&format!("n_{i}")))
        .collect();
    traj.mode_populations = table
        .rows
        .iter()
        .map(|(l, r)| mode_cols.iter().map(|&c| cols.number(*l, &r[c])).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    traj.oracle = table.meta("oracle") == Some("true");
    traj.recurrence_time = table.meta("recurrence_time").and_then(|s| s.parse().ok());
    traj.recurrence_warning = table.meta("recurrence_warning") == Some("true");
    if traj.times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(parse_error(origin, 1, "times are not strictly increasing"));
    }
    Ok(traj)
}

pub fn read_trajectory_path(path: impl AsRef<Path>) -> Result<Trajectory<f64>> {
    let path = path.as_ref();
    read_trajectory(std::fs::File::open(path)?, path)
}

/// Writes `region,omega,target,model,residual` with the resonances and
/// summary metrics as metadata.
pub fn write_fit_report<T: Real, W: Write>(report: &FitReport<T>, units: EnergyUnit, mut w: W) -> Result<()> {
    let res = report
        .resonances
        .iter()
        .map(|z| format!("{}{:+}i", z.re.as_f64(), z.im.as_f64()))
        .collect::<Vec<_>>()
        .join(";");
    write_metadata(
        &mut w,
        &[
            ("units", units.label().to_string()),
            ("neg_threshold", report.neg_threshold.as_f64().to_string()),
            ("pos_residual", report.pos_residual.as_f64().to_string()),
            ("neg_violation", report.neg_violation.as_f64().to_string()),
            ("verified_neg_violation", report.verified_neg_violation.as_f64().to_string()),
            ("converged", report.converged.to_string()),
            ("resonances", res),
        ],
    )?;
    writeln!(w, "region,omega,target,model,residual")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.region.label(),
            r.omega.as_f64(),
            r.target.as_f64(),
            r.model.as_f64(),
            r.residual.as_f64()
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReportRow {
    pub region: Region,
    pub omega: f64,
    pub target: f64,
    pub model: f64,
    pub residual: f64,
}

pub fn read_fit_report<R: Read>(reader: R, origin: &Path) -> Result<(Table, Vec<FitReportRow>)> {
    let table = read_table(reader, origin)?;
    let cols = Columns { table: &table, origin };
    let idx = ["region", "omega", "target", "model", "residual"]
        .iter()
        .map(|c| cols.index(c))
        .collect::<Result<Vec<_>>>()?;
    let rows = table
        .rows
        .iter()
        .map(|(l, r)| {
            let region = match r[idx[0]].as_str() {
                "pos" => Region::Positive,
                "neg" => Region::Negative,
                "verify" => Region::Verification,
                other => return Err(parse_error(origin, *l, format!("unknown region \"{other}\""))),
            };
            Ok(FitReportRow {
                region,
                omega: cols.number(*l, &r[idx[1]])?,
                target: cols.number(*l, &r[idx[2]])?,
                model: cols.number(*l, &r[idx[3]])?,
                residual: cols.number(*l, &r[idx[4]])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((table, rows))
}

/// Writes `n_modes,threshold,avg_rel_error,max_rel_error,pos_residual,neg_violation`.
/// Failed cells get NaN entries and a `failed` metadata line.
pub fn write_sweep<T: Real, W: Write>(table: &SweepTable<T>, floor: T, mut w: W) -> Result<()> {
    let failed = table
        .cells
        .iter()
        .filter_map(|c| c.outcome.as_ref().err().map(|e| format!("N={} thr={}: {}", c.n_modes, c.threshold, e.replace(['\n', ','], " "))))
        .collect::<Vec<_>>()
        .join(" | ");
    let mut meta = vec![("floor", floor.as_f64().to_string())];
    if !failed.is_empty() {
        meta.push(("failed", failed));
    }
    write_metadata(&mut w, &meta)?;
    writeln!(w, "n_modes,threshold,avg_rel_error,max_rel_error,pos_residual,neg_violation")?;
    for c in &table.cells {
        let (a, m, p, v) = match &c.outcome {
            Ok(o) => (
                o.error.avg_rel_error.as_f64(),
                o.error.max_rel_error.as_f64(),
                o.fit.pos_residual.as_f64(),
                o.fit.neg_violation.as_f64(),
            ),
            Err(_) => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        };
        writeln!(w, "{},{},{a},{m},{p},{v}", c.n_modes, c.threshold.as_f64())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n_modes: usize,
    pub threshold: f64,
    pub avg_rel_error: f64,
    pub max_rel_error: f64,
    pub pos_residual: f64,
    pub neg_violation: f64,
}

pub fn read_sweep<R: Read>(reader: R, origin: &Path) -> Result<Vec<SweepRow>> {
    let table = read_table(reader, origin)?;
    let cols = Columns { table: &table, origin };
    let n_col = cols.index("n_modes")?;
    let mut n_modes = Vec::with_capacity(table.rows.len());
    for (l, r) in &table.rows {
        n_modes.push(
            r[n_col]
                .parse::<usize>()
                .map_err(|_| parse_error(origin, *l, format!("bad n_modes \"{}\"", r[n_col])))?,
        );
    }
    let thr = cols.floats("threshold")?;
    let avg = cols.floats("avg_rel_error")?;
    let max = cols.floats("max_rel_error")?;
    let pos = cols.floats("pos_residual")?;
    let neg = cols.floats("neg_violation")?;
    Ok((0..n_modes.len())
        .map(|i| SweepRow {
            n_modes: n_modes[i],
            threshold: thr[i],
            avg_rel_error: avg[i],
            max_rel_error: max[i],
            pos_residual: pos[i],
            neg_violation: neg[i],
        })
        .collect())
}

/// Writes `t,rel_error` with the averages as metadata.
pub fn write_error_report<T: Real, W: Write>(report: &ErrorReport<T>, mut w: W) -> Result<()> {
    write_metadata(
        &mut w,
        &[
            ("avg_rel_error", report.avg_rel_error.as_f64().to_string()),
            ("max_rel_error", report.max_rel_error.as_f64().to_string()),
            ("floor", report.normalization_floor.as_f64().to_string()),
        ],
    )?;
    writeln!(w, "t,rel_error")?;
    for (t, e) in report.times.iter().zip(&report.rel_error_t) {
        writeln!(w, "{},{}", t.as_f64(), e.as_f64())?;
    }
    Ok(())
}

pub fn read_error_report<R: Read>(reader: R, origin: &Path) -> Result<ErrorReport<f64>> {
    let table = read_table(reader, origin)?;
    let cols = Columns { table: &table, origin };
    let times = cols.floats("t")?;
    let eps = cols.floats("rel_error")?;
    let meta = |k: &str| -> Result<f64> {
        table
            .meta(k)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_error(origin, 1, format!("missing metadata \"{k}\"")))
    };
    Ok(ErrorReport {
        times,
        rel_error_t: eps,
        avg_rel_error: meta("avg_rel_error")?,
        max_rel_error: meta("max_rel_error")?,
        normalization_floor: meta("floor")?,
    })
}

/// Creates the parent directory and writes via `f` into a buffered file.
pub fn write_file<F>(path: impl AsRef<Path>, f: F) -> Result<PathBuf>
where
    F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>,
{
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(path.to_path_buf())
}

/// Drops the timestamp line so two artifacts can be compared byte for byte.
pub fn strip_timestamp(text: &str) -> String {
    let prefix = format!("# {TIMESTAMP_KEY}=");
    text.lines()
        .filter(|l| !l.starts_with(&prefix))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trajectory() -> Trajectory<f64> {
        let mut t = Trajectory::with_capacity(3, EnergyUnit::ElectronVolt);
        for k in 0..3 {
            let x = k as f64 * 0.1 + 1.0 / 3.0;
            t.times.push(k as f64 * 0.5);
            t.emitter_population.push(1.0 - x * x);
            t.bath_photons.push(x / 7.0);
            t.purity.push(1.0 - 1e-17 * x);
            t.trace_defect.push(1e-15 * x);
            t.error_bound.push(3e-11 * x);
            t.mode_populations.push(vec![x, x / 3.0]);
        }
        t.oracle = true;
        t.recurrence_time = Some(123.456);
        t
    }

    #[test]
    fn trajectory_round_trips_exactly() {
        let t = sample_trajectory();
        let mut buf = Vec::new();
        write_trajectory(&t, &[], &mut buf).unwrap();
        let back = read_trajectory(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn error_report_round_trips() {
        let r = ErrorReport {
            times: vec![0.0, 1.5],
            rel_error_t: vec![0.1, 1.0 / 3.0],
            avg_rel_error: 0.2166,
            max_rel_error: 1.0 / 3.0,
            normalization_floor: 1e-3,
        };
        let mut buf = Vec::new();
        write_error_report(&r, &mut buf).unwrap();
        assert_eq!(read_error_report(buf.as_slice(), Path::new("mem")).unwrap(), r);
    }

    #[test]
    fn ragged_rows_report_line_numbers() {
        let text = "# a=1\nt,x\n0,1\n1\n";
        match read_table(text.as_bytes(), Path::new("bad.csv")) {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(path, PathBuf::from("bad.csv"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        let mut buf = Vec::new();
        write_trajectory(&sample_trajectory(), &[], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("0.5,", "zz,", 1);
        let err = read_trajectory(text.as_bytes(), Path::new("x.csv")).unwrap_err();
        assert!(err.to_string().starts_with("x.csv:"), "{err}");
    }

    #[test]
    fn timestamp_is_the_only_varying_line() {
        let t = sample_trajectory();
        let mut a = Vec::new();
        write_trajectory(&t, &[], &mut a).unwrap();
        let a = String::from_utf8(a).unwrap();
        let stripped = strip_timestamp(&a);
        assert_eq!(a.lines().count(), stripped.lines().count() + 1);
        assert!(!stripped.contains(TIMESTAMP_KEY));
    }
}
