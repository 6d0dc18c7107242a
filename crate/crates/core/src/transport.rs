//! Explicit upwind finite-volume transport of water saturation.
//!
//! Each substep applies
//!
//! ```text
//! S_c <- S_c + dt / (phi_c V_c) * ( -sum_f F_f f_w(S_upwind(f)) + Q_c )
//! ```
//!
//! with `Q_c = q` at injectors (pure water) and `Q_c = q f_w(S_c)` at
//! producers. The substep length is bounded by a CFL condition on the cell
//! throughput, so the update is a convex combination and stays in `[0, 1]`.

use crate::error::{Error, Result};
use crate::grid::StructuredGrid;
use crate::media::{FluidModel, MediaField, SATURATION_SLACK};

/// Default CFL number.
pub const DEFAULT_CFL: f64 = 0.5;

/// Per-cell water saturation, kept in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationField(Vec<f64>);

impl SaturationField {
    pub fn zeros(num_cells: usize) -> Self {
        Self(vec![0.0; num_cells])
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((cell, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, s)| !(-SATURATION_SLACK..=1.0 + SATURATION_SLACK).contains(*s))
        {
            return Err(Error::Stability { cell, value });
        }
        Ok(Self(values.into_iter().map(|s| s.clamp(0.0, 1.0)).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WellRole {
    Injector,
    Producer,
}

/// A cell source: positive rate injects water, negative rate produces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Well {
    pub cell: usize,
    pub rate: f64,
    pub role: WellRole,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WellConfig {
    wells: Vec<Well>,
}

impl WellConfig {
    /// Checks signs against roles and that the rates balance.
    pub fn new(wells: Vec<Well>) -> Result<Self> {
        for w in &wells {
            let ok = match w.role {
                WellRole::Injector => w.rate > 0.0,
                WellRole::Producer => w.rate < 0.0,
            };
            if !ok || !w.rate.is_finite() {
                return Err(Error::Config(format!(
                    "{:?} in cell {} has rate {}",
                    w.role, w.cell, w.rate
                )));
            }
        }
        let total: f64 = wells.iter().map(|w| w.rate).sum();
        let scale: f64 = wells.iter().map(|w| w.rate.abs()).sum();
        if total.abs() > 1e-12 * scale {
            return Err(Error::Config(format!("well rates sum to {total:e}, not zero")));
        }
        Ok(Self { wells })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn wells(&self) -> &[Well] {
        &self.wells
    }

    pub fn producers(&self) -> impl Iterator<Item = &Well> {
        self.wells.iter().filter(|w| w.role == WellRole::Producer)
    }

    pub fn injectors(&self) -> impl Iterator<Item = &Well> {
        self.wells.iter().filter(|w| w.role == WellRole::Injector)
    }

    pub fn total_injection(&self) -> f64 {
        self.injectors().map(|w| w.rate).sum()
    }

    /// Per-cell source vector for the pressure equation.
    pub fn source_vector(&self, num_cells: usize) -> Vec<f64> {
        let mut q = vec![0.0; num_cells];
        for w in &self.wells {
            q[w.cell] += w.rate;
        }
        q
    }
}

/// Five-spot arrangements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WellLayout {
    /// Injectors in the four corners, producer in the center.
    TypeI,
    /// Injector in the center, producers in the four corners.
    TypeII,
    None,
}

/// Vertical placement of the wells on 3D grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completion {
    /// One cell in the middle layer.
    MidLayer,
    /// Every layer of the column, rate split evenly.
    FullColumn,
}

/// Builds a five-spot well set carrying `total_rate` in and out. The center
/// cell is `((nx-1)/2, (ny-1)/2)` (0-based).
pub fn make_wells(
    layout: WellLayout,
    grid: &StructuredGrid,
    total_rate: f64,
    completion: Completion,
) -> Result<WellConfig> {
    if layout == WellLayout::None {
        return Ok(WellConfig::none());
    }
    if !(total_rate > 0.0 && total_rate.is_finite()) {
        return Err(Error::Config(format!("total rate must be positive, got {total_rate}")));
    }
    let [nx, ny, nz] = grid.cells_per_axis();
    let layers: Vec<usize> = match completion {
        Completion::MidLayer => vec![(nz - 1) / 2],
        Completion::FullColumn => (0..nz).collect(),
    };
    let corners = [(0, 0), (nx - 1, 0), (0, ny - 1), (nx - 1, ny - 1)];
    let center = ((nx - 1) / 2, (ny - 1) / 2);
    let (corner_role, center_role) = match layout {
        WellLayout::TypeI => (WellRole::Injector, WellRole::Producer),
        _ => (WellRole::Producer, WellRole::Injector),
    };
    let sign = |role| if role == WellRole::Injector { 1.0 } else { -1.0 };
    let per_layer = 1.0 / layers.len() as f64;

    let mut wells = Vec::new();
    for &k in &layers {
        for &(i, j) in &corners {
            wells.push(Well {
                cell: grid.cell_index([i, j, k]),
                rate: sign(corner_role) * total_rate / 4.0 * per_layer,
                role: corner_role,
            });
        }
        wells.push(Well {
            cell: grid.cell_index([center.0, center.1, k]),
            rate: sign(center_role) * total_rate * per_layer,
            role: center_role,
        });
    }
    WellConfig::new(wells)
}

/// Rate that injects one pore volume over `total_time`.
pub fn pore_volume_rate(grid: &StructuredGrid, media: &MediaField, total_time: f64) -> f64 {
    let pv: f64 = media.porosities().iter().sum::<f64>() * grid.cell_volume();
    pv / total_time
}

/// Water fraction of the produced fluid, weighted by producer rates.
pub fn watercut(saturation: &[f64], wells: &WellConfig, fluid: &FluidModel) -> Result<f64> {
    let mut water = 0.0;
    let mut total = 0.0;
    for w in wells.producers() {
        water += w.rate.abs() * fluid.fractional_flow(saturation[w.cell])?;
        total += w.rate.abs();
    }
    if total == 0.0 {
        return Err(Error::Config("watercut needs at least one producer".into()));
    }
    Ok(water / total)
}

/// Outcome of [`Transport::advance`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdvanceReport {
    pub substeps: usize,
    /// Largest per-substep relative mass-balance error.
    pub max_mass_error: f64,
}

/// Reusable transport operator on one grid.
#[derive(Debug, Clone)]
pub struct Transport {
    pore_volume: Vec<f64>,
    inv_pore_volume: Vec<f64>,
    /// `(face, lower cell, upper cell)` for every interior face.
    faces: Vec<(usize, usize, usize)>,
    fluid: FluidModel,
    max_slope: f64,
    cfl: f64,
}

impl Transport {
    pub fn new(grid: &StructuredGrid, media: &MediaField, fluid: FluidModel, cfl: f64) -> Result<Self> {
        media.check_grid(grid)?;
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::Config(format!("CFL number must be in (0, 1], got {cfl}")));
        }
        let fluid = fluid.validated()?;
        let faces = (0..grid.num_faces())
            .filter_map(|f| match grid.face_cells(f) {
                [Some(a), Some(b)] => Some((f, a, b)),
                _ => None,
            })
            .collect();
        let pore_volume: Vec<f64> = media.porosities().iter().map(|phi| phi * grid.cell_volume()).collect();
        Ok(Self {
            inv_pore_volume: pore_volume.iter().map(|v| 1.0 / v).collect(),
            pore_volume,
            faces,
            fluid,
            max_slope: fluid.max_fractional_flow_slope(),
            cfl,
        })
    }

    pub fn fluid(&self) -> &FluidModel {
        &self.fluid
    }

    pub fn pore_volumes(&self) -> &[f64] {
        &self.pore_volume
    }

    /// Largest stable substep: `cfl * min phi V / (throughput * max |f_w'|)`,
    /// where the throughput of a cell is its total outflow through faces and
    /// producers. Returns `None` when nothing flows.
    pub fn cfl_dt(&self, face_flux: &[f64], wells: &WellConfig) -> Option<f64> {
        let mut throughput = vec![0.0; self.pore_volume.len()];
        for &(f, a, b) in &self.faces {
            let u = face_flux[f];
            if u > 0.0 {
                throughput[a] += u;
            } else {
                throughput[b] -= u;
            }
        }
        for w in wells.producers() {
            throughput[w.cell] -= w.rate;
        }
        let dt = throughput
            .iter()
            .zip(&self.pore_volume)
            .filter(|(t, _)| **t > 0.0)
            .map(|(t, pv)| pv / (t * self.max_slope))
            .fold(f64::INFINITY, f64::min);
        dt.is_finite().then_some(self.cfl * dt)
    }

    fn prepare(&self, face_flux: &[f64], wells: &WellConfig) -> UpwindFlux {
        let mut prepared = UpwindFlux::default();
        for &(f, a, b) in &self.faces {
            let u = face_flux[f];
            if u != 0.0 {
                prepared.lower.push(a as u32);
                prepared.upper.push(b as u32);
                prepared.upwind.push(if u > 0.0 { a } else { b } as u32);
                prepared.flux.push(u);
                prepared.scale = prepared.scale.max(u.abs());
            }
        }
        prepared.scale += wells.wells().iter().map(|w| w.rate.abs()).sum::<f64>();
        prepared
    }

    /// One explicit Euler substep of length `dt`. Returns the relative
    /// mass-balance error of the step.
    pub fn step(&self, saturation: &mut [f64], face_flux: &[f64], wells: &WellConfig, dt: f64) -> Result<f64> {
        let prepared = self.prepare(face_flux, wells);
        let mut buffers = (Vec::new(), Vec::new());
        self.step_prepared(saturation, &prepared, wells, dt, &mut buffers)
    }

    fn step_prepared(
        &self,
        saturation: &mut [f64],
        flux: &UpwindFlux,
        wells: &WellConfig,
        dt: f64,
        (fw, change): &mut (Vec<f64>, Vec<f64>),
    ) -> Result<f64> {
        fw.clear();
        fw.extend(saturation.iter().map(|&s| self.fluid.fractional_flow_unchecked(s)));
        change.clear();
        change.resize(saturation.len(), 0.0);
        for i in 0..flux.flux.len() {
            let water = flux.flux[i] * fw[flux.upwind[i] as usize];
            change[flux.lower[i] as usize] -= water;
            change[flux.upper[i] as usize] += water;
        }
        let mut net = 0.0;
        for w in wells.wells() {
            let q = match w.role {
                WellRole::Injector => w.rate,
                WellRole::Producer => w.rate * fw[w.cell],
            };
            change[w.cell] += q;
            net += q;
        }

        let mut stored = 0.0;
        let mut violation = None;
        for (c, (s, dq)) in saturation.iter_mut().zip(change.iter()).enumerate() {
            let ds = dt * dq * self.inv_pore_volume[c];
            stored += self.pore_volume[c] * ds;
            let next = *s + ds;
            if !(-SATURATION_SLACK..=1.0 + SATURATION_SLACK).contains(&next) {
                violation.get_or_insert((c, next));
            }
            *s = next.clamp(0.0, 1.0);
        }
        if let Some((cell, value)) = violation {
            return Err(Error::Stability { cell, value });
        }
        Ok(if flux.scale > 0.0 {
            (stored - dt * net).abs() / (dt * flux.scale)
        } else {
            0.0
        })
    }

    /// Substeps covering `interval` exactly with equal lengths below the CFL
    /// bound.
    pub fn advance(
        &self,
        saturation: &mut SaturationField,
        face_flux: &[f64],
        wells: &WellConfig,
        interval: f64,
    ) -> Result<AdvanceReport> {
        if !(interval > 0.0) {
            return Err(Error::InvalidArgument(format!("interval must be positive, got {interval}")));
        }
        if face_flux.iter().any(|u| !u.is_finite()) {
            return Err(Error::Numerical("non-finite face flux".into()));
        }
        let dt_max = self.cfl_dt(face_flux, wells).unwrap_or(interval);
        let substeps = (interval / dt_max).ceil().max(1.0) as usize;
        let dt = interval / substeps as f64;
        let prepared = self.prepare(face_flux, wells);
        let mut buffers = (Vec::new(), Vec::new());
        let mut report = AdvanceReport {
            substeps,
            max_mass_error: 0.0,
        };
        for _ in 0..substeps {
            let err = self.step_prepared(&mut saturation.0, &prepared, wells, dt, &mut buffers)?;
            report.max_mass_error = report.max_mass_error.max(err);
        }
        Ok(report)
    }
}

/// Nonzero face fluxes with their upwind cells, fixed over one interval.
#[derive(Debug, Default)]
struct UpwindFlux {
    lower: Vec<u32>,
    upper: Vec<u32>,
    upwind: Vec<u32>,
    flux: Vec<f64>,
    scale: f64,
}

/// Welge tangent for injection into `S = 0`: the front saturation `S*`
/// maximizing `f_w(S)/S`, found by dense sampling, and the front speed
/// `f_w(S*)/S*` in pore volumes.
pub fn welge_front(fluid: &FluidModel, samples: usize) -> (f64, f64) {
    (1..=samples)
        .map(|i| {
            let s = i as f64 / samples as f64;
            (s, fluid.fractional_flow_unchecked(s) / s)
        })
        .fold((0.0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best })
}
