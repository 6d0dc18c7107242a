//! Field snapshots (legacy VTK structured points), time series (CSV) and
//! run summaries.

use std::fmt::Write as _;
use std::path::Path;

use crate::driver::{cell_velocity_magnitude, RunResult, RunSummary, SolverMode};
use crate::error::{Error, Result};
use crate::grid::StructuredGrid;
use crate::media::MediaField;

/// Named cell arrays on a structured grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    /// Cells per axis; 2D grids have one cell along z.
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl FieldSnapshot {
    pub fn new(grid: &StructuredGrid) -> Self {
        Self {
            dims: grid.cells_per_axis(),
            spacing: grid.spacing(),
            arrays: Vec::new(),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn with_array(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.num_cells() {
            return Err(Error::InvalidArgument(format!(
                "array {name} has {} values for {} cells",
                values.len(),
                self.num_cells()
            )));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("invalid array name {name:?}")));
        }
        self.arrays.push((name.to_string(), values));
        Ok(self)
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

/// Writes legacy ASCII VTK: point dimensions are cells + 1 on each axis
/// (1 along z for 2D), values x-fastest, printed in shortest round-trip form.
pub fn write_vtk(snapshot: &FieldSnapshot, path: &Path) -> Result<()> {
    let [nx, ny, nz] = snapshot.dims;
    let pz = if nz == 1 { 1 } else { nz + 1 };
    let [dx, dy, dz] = snapshot.spacing;
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "porous-mortar field snapshot");
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET STRUCTURED_POINTS");
    let _ = writeln!(out, "DIMENSIONS {} {} {}", nx + 1, ny + 1, pz);
    let _ = writeln!(out, "SPACING {dx} {dy} {dz}");
    let _ = writeln!(out, "ORIGIN 0 0 0");
    let _ = writeln!(out, "CELL_DATA {}", snapshot.num_cells());
    for (name, values) in &snapshot.arrays {
        let _ = writeln!(out, "SCALARS {name} double 1");
        let _ = writeln!(out, "LOOKUP_TABLE default");
        for v in values {
            let _ = writeln!(out, "{v}");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Tokens<'a> {
    iter: std::iter::Peekable<Box<dyn Iterator<Item = &'a str> + 'a>>,
    path: &'a Path,
}

impl<'a> Tokens<'a> {
    fn error(&self, message: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            message,
        }
    }

    fn word(&mut self, what: &str) -> Result<&'a str> {
        self.iter.next().ok_or_else(|| self.error(format!("missing {what}")))
    }

    fn keyword(&mut self, word: &str) -> Result<()> {
        match self.iter.next() {
            Some(t) if t == word => Ok(()),
            other => Err(self.error(format!("expected {word}, found {other:?}"))),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let t = self.word(what)?;
        t.parse().map_err(|_| self.error(format!("bad {what}: {t:?}")))
    }
}

/// Reads files produced by [`write_vtk`].
pub fn read_vtk(path: &Path) -> Result<FieldSnapshot> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    // the first three lines are the version, title and encoding
    let words: Box<dyn Iterator<Item = &str>> = Box::new(text.lines().skip(3).flat_map(str::split_whitespace));
    let mut t = Tokens {
        iter: words.peekable(),
        path,
    };
    t.keyword("DATASET")?;
    t.keyword("STRUCTURED_POINTS")?;
    t.keyword("DIMENSIONS")?;
    let mut points = [0usize; 3];
    for p in &mut points {
        *p = t.number("dimension")?;
    }
    t.keyword("SPACING")?;
    let mut spacing = [0.0; 3];
    for s in &mut spacing {
        *s = t.number("spacing")?;
    }
    t.keyword("ORIGIN")?;
    for _ in 0..3 {
        t.number::<f64>("origin")?;
    }
    t.keyword("CELL_DATA")?;
    let count: usize = t.number("cell count")?;
    let dims = [
        points[0].saturating_sub(1),
        points[1].saturating_sub(1),
        points[2].saturating_sub(1).max(1),
    ];
    if dims.iter().product::<usize>() != count {
        return Err(t.error(format!("CELL_DATA {count} does not match dimensions {points:?}")));
    }
    let mut snapshot = FieldSnapshot {
        dims,
        spacing,
        arrays: Vec::new(),
    };
    while t.iter.peek().is_some() {
        t.keyword("SCALARS")?;
        let name = t.word("array name")?.to_string();
        t.word("data type")?;
        // the component count is optional in the format
        if t.iter.peek().is_some_and(|w| *w != "LOOKUP_TABLE") {
            t.word("components")?;
        }
        t.keyword("LOOKUP_TABLE")?;
        t.word("table name")?;
        let values = (0..count).map(|_| t.number(&name)).collect::<Result<Vec<f64>>>()?;
        snapshot.arrays.push((name, values));
    }
    Ok(snapshot)
}

/// CSV with header `time,value`.
pub fn write_timeseries(times: &[f64], values: &[f64], path: &Path) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::InvalidArgument(format!(
            "{} times for {} values",
            times.len(),
            values.len()
        )));
    }
    let mut out = String::from("time,value\n");
    for (t, v) in times.iter().zip(values) {
        let _ = writeln!(out, "{t},{v}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_timeseries(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    if lines.next() != Some("time,value") {
        return Err(bad("missing `time,value` header".into()));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (t, v) = line.split_once(',').ok_or_else(|| bad(format!("bad row {line:?}")))?;
        times.push(t.trim().parse().map_err(|_| bad(format!("bad time {t:?}")))?);
        values.push(v.trim().parse().map_err(|_| bad(format!("bad value {v:?}")))?);
    }
    Ok((times, values))
}

/// `key = value` summary of a finished run; the series live in their own
/// files.
pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "mode = {}", summary.mode.name());
    let _ = writeln!(out, "label = {}", summary.label);
    if let Some(n) = summary.coarsening {
        let _ = writeln!(out, "coarsening = {n}");
    }
    let _ = writeln!(out, "dim = {}", summary.dim);
    let _ = writeln!(out, "wall_seconds = {}", summary.wall_seconds);
    let _ = writeln!(out, "pressure_seconds = {}", summary.pressure_seconds);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a summary; `times` and `watercut` are left empty.
pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut summary = RunSummary {
        mode: SolverMode::Fine,
        label: String::new(),
        coarsening: None,
        dim: 0,
        wall_seconds: 0.0,
        pressure_seconds: 0.0,
        times: Vec::new(),
        watercut: Vec::new(),
    };
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad line {line:?}")))?;
        let v = v.trim();
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number {v:?}")));
        match k.trim() {
            "mode" => summary.mode = v.parse().map_err(|_| bad(format!("bad mode {v:?}")))?,
            "label" => summary.label = v.to_string(),
            "coarsening" => summary.coarsening = Some(num(v)? as usize),
            "dim" => summary.dim = num(v)? as usize,
            "wall_seconds" => summary.wall_seconds = num(v)?,
            "pressure_seconds" => summary.pressure_seconds = num(v)?,
            other => return Err(bad(format!("unknown key {other}"))),
        }
    }
    Ok(summary)
}

const SUMMARY: &str = "summary.txt";
const WATERCUT: &str = "watercut.csv";
const SNAPSHOTS: &str = "snapshots";

fn snapshot_path(dir: &Path, step: usize) -> std::path::PathBuf {
    dir.join(SNAPSHOTS).join(format!("step_{step:03}.vtk"))
}

/// Writes a run directory: `summary.txt`, `watercut.csv`, one saturation
/// snapshot per outer step under `snapshots/`, and `final.vtk` with
/// saturation, pressure, velocity magnitude and log10 permeability.
pub fn write_run(result: &RunResult, media: &MediaField, dir: &Path) -> Result<()> {
    let snapshots = dir.join(SNAPSHOTS);
    std::fs::create_dir_all(&snapshots).map_err(|e| Error::io(&snapshots, e))?;
    let summary = result.summary();
    write_summary(&summary, &dir.join(SUMMARY))?;
    write_timeseries(&summary.times, &summary.watercut, &dir.join(WATERCUT))?;
    for record in &result.steps {
        let snap = FieldSnapshot::new(&result.grid).with_array("S", record.saturation.clone())?;
        write_vtk(&snap, &snapshot_path(dir, record.step))?;
    }
    if let Some(last) = result.steps.last() {
        let flow = &result.final_flow;
        let snap = FieldSnapshot::new(&result.grid)
            .with_array("S", last.saturation.clone())?
            .with_array("p", flow.pressure.clone())?
            .with_array("u_mag", cell_velocity_magnitude(&result.grid, &flow.face_flux))?
            .with_array("log10_k", media.log10_kx())?;
        write_vtk(&snap, &dir.join("final.vtk"))?;
    }
    Ok(())
}

/// A run directory read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRun {
    pub summary: RunSummary,
    pub snapshots: Vec<Vec<f64>>,
    pub cell_volume: f64,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let mut summary = read_summary(&dir.join(SUMMARY))?;
    let (times, watercut) = read_timeseries(&dir.join(WATERCUT))?;
    let mut snapshots = Vec::with_capacity(times.len());
    let mut cell_volume = 1.0;
    for step in 1..=times.len() {
        let path = snapshot_path(dir, step);
        let snap = read_vtk(&path)?;
        cell_volume = snap.spacing.iter().product();
        let s = snap.array("S").ok_or_else(|| Error::Format {
            path: path.clone(),
            message: "no saturation array".into(),
        })?;
        snapshots.push(s.to_vec());
    }
    summary.times = times;
    summary.watercut = watercut;
    Ok(LoadedRun {
        summary,
        snapshots,
        cell_volume,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vtk_shape_for_2d() {
        let dir = tempfile::tempdir().unwrap();
        let grid = StructuredGrid::new(&[2, 2], &[1.0, 1.0]).unwrap();
        let snap = FieldSnapshot::new(&grid)
            .with_array("S", vec![0.0, 0.25, 0.5, 1.0])
            .unwrap();
        let path = dir.path().join("s.vtk");
        write_vtk(&snap, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("DIMENSIONS 3 3 1\n"));
        assert!(text.contains("CELL_DATA 4\n"));
        assert_eq!(read_vtk(&path).unwrap(), snap);
    }

    #[test]
    fn vtk_round_trip_full_precision_3d() {
        let dir = tempfile::tempdir().unwrap();
        let grid = StructuredGrid::new(&[3, 2, 2], &[20.0, 10.0, 2.0]).unwrap();
        let a: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() / 3.0).collect();
        let b: Vec<f64> = (0..12).map(|i| 1e-300 * i as f64 - 1e10).collect();
        let snap = FieldSnapshot::new(&grid)
            .with_array("p", a)
            .unwrap()
            .with_array("log_k", b)
            .unwrap();
        let path = dir.path().join("f.vtk");
        write_vtk(&snap, &path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().contains("DIMENSIONS 4 3 3\n"));
        assert_eq!(read_vtk(&path).unwrap(), snap);
    }

    #[test]
    fn wrong_array_length_is_rejected() {
        let grid = StructuredGrid::new(&[2, 2], &[1.0, 1.0]).unwrap();
        assert!(FieldSnapshot::new(&grid).with_array("S", vec![0.0; 3]).is_err());
    }

    #[test]
    fn timeseries_rows_and_empty_series() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wc.csv");
        let times: Vec<f64> = (1..=40).map(|i| 50.0 * i as f64).collect();
        let values: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        write_timeseries(&times, &values, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 41);
        assert_eq!(read_timeseries(&path).unwrap(), (times, values));

        write_timeseries(&[], &[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "time,value\n");
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let err = write_timeseries(&[], &[], Path::new("/nonexistent/dir/x.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.txt");
        let s = RunSummary {
            mode: SolverMode::Mmmfem,
            label: "P0+MS".into(),
            coarsening: Some(10),
            dim: 472,
            wall_seconds: 1.25,
            pressure_seconds: 0.5,
            times: Vec::new(),
            watercut: Vec::new(),
        };
        write_summary(&s, &path).unwrap();
        assert_eq!(read_summary(&path).unwrap(), s);
    }
}
