//! The sequential pressure/transport loop and the accuracy metrics.
//!
//! A multiscale run starts with one fine solve at the initial saturation,
//! whose interface pressures seed the first mortar space. Every outer step
//! then rebuilds the mortar space from polynomials plus the previous
//! step's interface solution, solves the coarse interface problem, smooths,
//! and transports the saturation over one outer interval.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::grid::{CoarsePartition, StructuredGrid};
use crate::media::{load_spe10, synth_media, FluidModel, MediaField, Spe10Model, SynthKind};
use crate::mortar::{InterfaceTraces, MortarRecipe, MortarSpace, DEFAULT_DROP_TOL};
use crate::pressure::{jacobi_smooth, BlockLayouts, FineSolver, FlowSolution, MultiscaleSolve};
use crate::transport::{
    make_wells, pore_volume_rate, watercut, Completion, SaturationField, Transport, WellConfig,
    WellLayout, DEFAULT_CFL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    /// Multiscale mortar solve on the coarse interfaces.
    Mmmfem,
    /// Fine-scale reference.
    Fine,
}

impl SolverMode {
    pub fn name(self) -> &'static str {
        match self {
            SolverMode::Mmmfem => "mmmfem",
            SolverMode::Fine => "fine",
        }
    }
}

impl std::str::FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmmfem" => Ok(SolverMode::Mmmfem),
            "fine" => Ok(SolverMode::Fine),
            _ => Err(Error::Config(format!("unknown mode {s:?} (expected mmmfem or fine)"))),
        }
    }
}

/// Synthetic permeability families; the seed comes from [`SimConfig::seed`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticField {
    Uniform { k: f64 },
    Layered { contrast: f64, bands: usize },
    Lognormal { sigma: f64, correlation: f64 },
    Channel,
}

impl SyntheticField {
    pub fn with_seed(self, seed: u64) -> SynthKind {
        match self {
            SyntheticField::Uniform { k } => SynthKind::Uniform { k },
            SyntheticField::Layered { contrast, bands } => SynthKind::Layered { contrast, bands },
            SyntheticField::Lognormal { sigma, correlation } => SynthKind::Lognormal {
                seed,
                sigma,
                correlation,
            },
            SyntheticField::Channel => SynthKind::Channel { seed },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MediaSource {
    Spe10 {
        model: Spe10Model,
        perm: PathBuf,
        phi: Option<PathBuf>,
    },
    Synthetic {
        field: SyntheticField,
        dims: Vec<usize>,
        spacing: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub media: MediaSource,
    /// Uniform porosity replacing the media's own values.
    pub porosity: Option<f64>,
    pub seed: u64,
    pub mode: SolverMode,
    /// Fine cells per coarse block along each axis.
    pub coarsening: usize,
    pub mortar: MortarRecipe,
    pub drop_tol: f64,
    pub wells: WellLayout,
    pub completion: Completion,
    /// Total injection rate; one pore volume over the run when absent.
    pub total_rate: Option<f64>,
    pub fluid: FluidModel,
    pub total_time: f64,
    pub outer_interval: f64,
    pub smoothing_iterations: usize,
    pub smoothing_damping: f64,
    pub cfl: f64,
    /// Redo a fine solve to refresh the multiscale vector every this many
    /// steps; 0 disables.
    pub refresh_every: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for SimConfig {
    /// A 60 x 220 synthetic channel field with SPE10 cell sizes, type I
    /// wells, P0 plus multiscale mortars on 10 x 10 blocks.
    fn default() -> Self {
        Self {
            media: MediaSource::Synthetic {
                field: SyntheticField::Channel,
                dims: vec![60, 220],
                spacing: vec![20.0, 10.0],
            },
            porosity: None,
            seed: 1,
            mode: SolverMode::Mmmfem,
            coarsening: 10,
            mortar: MortarRecipe::polynomial_plus_multiscale(0),
            drop_tol: DEFAULT_DROP_TOL,
            wells: WellLayout::TypeI,
            completion: Completion::MidLayer,
            total_rate: None,
            fluid: FluidModel::default(),
            total_time: 2000.0,
            outer_interval: 50.0,
            smoothing_iterations: 10,
            smoothing_damping: 2.0 / 3.0,
            cfl: DEFAULT_CFL,
            refresh_every: 0,
            output_dir: None,
        }
    }
}

/// Grid, media and wells of one configuration.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: StructuredGrid,
    pub media: MediaField,
    pub wells: WellConfig,
    pub source: Vec<f64>,
}

impl SimConfig {
    /// Number of outer steps (pressure solves after the initialization).
    pub fn num_steps(&self) -> Result<usize> {
        if !(self.total_time > 0.0 && self.outer_interval > 0.0) {
            return Err(Error::Config("total time and outer interval must be positive".into()));
        }
        let ratio = self.total_time / self.outer_interval;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio || steps < 1.0 {
            return Err(Error::Config(format!(
                "total time {} is not a whole number of outer intervals {}",
                self.total_time, self.outer_interval
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.num_steps()?;
        self.fluid.validated()?;
        if self.mode == SolverMode::Mmmfem {
            self.mortar.validate()?;
        }
        if self.coarsening == 0 {
            return Err(Error::Config("coarsening must be positive".into()));
        }
        if !(self.smoothing_damping > 0.0 && self.smoothing_damping <= 1.0) {
            return Err(Error::Config(format!(
                "smoothing damping must be in (0, 1], got {}",
                self.smoothing_damping
            )));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Config(format!("CFL number must be in (0, 1], got {}", self.cfl)));
        }
        if !(self.drop_tol > 0.0) {
            return Err(Error::Config("drop tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<Problem> {
        self.validate()?;
        let (grid, media) = match &self.media {
            MediaSource::Spe10 { model, perm, phi } => {
                let media = load_spe10(perm, phi.as_deref(), *model)?;
                (model.grid()?, media)
            }
            MediaSource::Synthetic { field, dims, spacing } => {
                let grid = StructuredGrid::new(dims, spacing)?;
                let media = synth_media(field.with_seed(self.seed), &grid)?;
                (grid, media)
            }
        };
        let media = match self.porosity {
            Some(phi) => media.with_porosity(phi)?,
            None => media,
        };
        let rate = self
            .total_rate
            .unwrap_or_else(|| pore_volume_rate(&grid, &media, self.total_time));
        let wells = make_wells(self.wells, &grid, rate, self.completion)?;
        let source = wells.source_vector(grid.num_cells());
        Ok(Problem {
            grid,
            media,
            wells,
            source,
        })
    }

    /// Short description of the pressure solver, e.g. `P0+MS` or `fine`.
    pub fn solver_label(&self) -> String {
        match self.mode {
            SolverMode::Fine => "fine".into(),
            SolverMode::Mmmfem => self.mortar.label(),
        }
    }
}

/// What happened in one outer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// End time of the step.
    pub time: f64,
    pub saturation: Vec<f64>,
    pub watercut: f64,
    /// Mortar unknowns used in this step (0 for the fine reference).
    pub mortar_dim: usize,
    /// The multiscale vectors the step's mortar space was built from.
    pub multiscale_input: Option<InterfaceTraces>,
    /// The step's interface solution, input to the next step.
    pub trace_cache: Option<InterfaceTraces>,
    pub max_flux_jump: f64,
    pub substeps: usize,
    pub max_mass_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timings {
    /// One-time fine solve of a multiscale run.
    pub initialization: Duration,
    /// Block factorizations and interface assembly.
    pub assembly: Duration,
    pub interface_solve: Duration,
    /// Local solves recovering velocity and pressure.
    pub local_solves: Duration,
    pub smoothing: Duration,
    /// Fine solves of the reference mode.
    pub fine_solves: Duration,
    pub transport: Duration,
    pub total: Duration,
}

impl Timings {
    /// Time spent in pressure work, excluding transport.
    pub fn pressure(&self) -> Duration {
        self.initialization
            + self.assembly
            + self.interface_solve
            + self.local_solves
            + self.smoothing
            + self.fine_solves
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub mode: SolverMode,
    pub label: String,
    pub coarsening: Option<usize>,
    pub grid: StructuredGrid,
    /// Interface pressures of the fine initialization.
    pub initial_traces: Option<InterfaceTraces>,
    pub steps: Vec<StepRecord>,
    /// Pressure and flux of the last step.
    pub final_flow: FlowSolution,
    pub timings: Timings,
    /// Number of pressure unknowns: mortar unknowns for multiscale runs,
    /// fine faces for the reference.
    pub dim: usize,
}

impl RunResult {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            mode: self.mode,
            label: self.label.clone(),
            coarsening: self.coarsening,
            dim: self.dim,
            wall_seconds: self.timings.total.as_secs_f64(),
            pressure_seconds: self.timings.pressure().as_secs_f64(),
            times: self.steps.iter().map(|s| s.time).collect(),
            watercut: self.steps.iter().map(|s| s.watercut).collect(),
        }
    }

    pub fn snapshots(&self) -> Vec<&[f64]> {
        self.steps.iter().map(|s| s.saturation.as_slice()).collect()
    }

    /// Saturation error against a reference run, with the wall-time ratio.
    pub fn error_against(&self, reference: &RunResult) -> Result<Metrics> {
        let mut m = saturation_error(&self.snapshots(), &reference.snapshots(), self.grid.cell_volume())?;
        m.cpu_ratio = Some(self.timings.total.as_secs_f64() / reference.timings.total.as_secs_f64());
        Ok(m)
    }
}

/// The parts of a run needed for comparisons, also stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub mode: SolverMode,
    pub label: String,
    pub coarsening: Option<usize>,
    pub dim: usize,
    pub wall_seconds: f64,
    pub pressure_seconds: f64,
    pub times: Vec<f64>,
    pub watercut: Vec<f64>,
}

/// Restricts the face traces of `flow` to the coarse interfaces.
pub fn skeleton_traces(partition: &CoarsePartition, flow: &FlowSolution) -> InterfaceTraces {
    InterfaceTraces(
        partition
            .interfaces()
            .iter()
            .map(|i| i.faces.iter().map(|&f| flow.face_traces[f]).collect())
            .collect(),
    )
}

/// Per-cell velocity magnitude from face fluxes (average of the two faces
/// on each axis, divided by the face area).
pub fn cell_velocity_magnitude(grid: &StructuredGrid, face_flux: &[f64]) -> Vec<f64> {
    (0..grid.num_cells())
        .map(|c| {
            (0..grid.dim())
                .map(|axis| {
                    let lo = face_flux[grid.cell_face(c, axis, 0)];
                    let hi = face_flux[grid.cell_face(c, axis, 1)];
                    (0.5 * (lo + hi) / grid.face_area(axis)).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Builds the problem and runs it.
pub fn run(config: &SimConfig) -> Result<RunResult> {
    let problem = config.build_problem()?;
    run_problem(config, &problem)
}

/// Runs the sequential loop on an already built problem.
pub fn run_problem(config: &SimConfig, problem: &Problem) -> Result<RunResult> {
    config.validate()?;
    let start = Instant::now();
    let steps = config.num_steps()?;
    let Problem {
        grid,
        media,
        wells,
        source,
    } = problem;
    let transport = Transport::new(grid, media, config.fluid, config.cfl)?;
    let mut fine = FineSolver::new(grid);
    let mut timings = Timings::default();
    let mut saturation = SaturationField::zeros(grid.num_cells());
    let has_producer = wells.producers().next().is_some();

    let fine_flow = |fine: &mut FineSolver, s: &SaturationField| -> Result<FlowSolution> {
        let mobility = config.fluid.total_mobility(s.values());
        let system = fine.assemble(media, &mobility, source)?;
        fine.solve(&system)
    };

    let multiscale = match config.mode {
        SolverMode::Mmmfem => {
            let partition = CoarsePartition::new(grid, config.coarsening)?;
            let layouts = BlockLayouts::new(grid, &partition)?;
            Some((partition, layouts))
        }
        SolverMode::Fine => None,
    };

    let mut previous = None;
    let mut initial_traces = None;
    if let Some((partition, _)) = &multiscale {
        let t = Instant::now();
        let flow = fine_flow(&mut fine, &saturation).map_err(|e| e.at_step(0))?;
        let traces = skeleton_traces(partition, &flow);
        timings.initialization = t.elapsed();
        initial_traces = Some(traces.clone());
        previous = Some(traces);
    }

    let mut records = Vec::with_capacity(steps);
    let mut final_flow = None;
    let mut dim = grid.num_faces();
    for step in 1..=steps {
        let mut body = |timings: &mut Timings, previous: &mut Option<InterfaceTraces>, saturation: &mut SaturationField| -> Result<(StepRecord, FlowSolution)> {
            let mobility = config.fluid.total_mobility(saturation.values());
            let mut record = StepRecord {
                step,
                time: step as f64 * config.outer_interval,
                saturation: Vec::new(),
                watercut: 0.0,
                mortar_dim: 0,
                multiscale_input: None,
                trace_cache: None,
                max_flux_jump: 0.0,
                substeps: 0,
                max_mass_error: 0.0,
            };
            let flow = match &multiscale {
                None => {
                    let t = Instant::now();
                    let flow = fine_flow(&mut fine, saturation)?;
                    timings.fine_solves += t.elapsed();
                    flow
                }
                Some((partition, layouts)) => {
                    if config.refresh_every > 0 && step > 1 && (step - 1) % config.refresh_every == 0 {
                        let t = Instant::now();
                        let flow = fine_flow(&mut fine, saturation)?;
                        *previous = Some(skeleton_traces(partition, &flow));
                        timings.fine_solves += t.elapsed();
                    }
                    let t = Instant::now();
                    let space = MortarSpace::build(
                        partition,
                        config.mortar,
                        previous.as_ref(),
                        config.drop_tol,
                        step,
                    )?;
                    let blocks = layouts.assemble(grid, media, &mobility, step as u64)?;
                    let factor_time = t.elapsed();
                    let flow = MultiscaleSolve {
                        grid,
                        partition,
                        space: &space,
                        blocks: &blocks,
                        source,
                    }
                    .run()?;
                    timings.assembly += factor_time + flow.diagnostics.assembly;
                    timings.interface_solve += flow.diagnostics.solve;
                    timings.local_solves += flow.diagnostics.local;

                    record.mortar_dim = space.dim();
                    record.multiscale_input = space.multiscale_inputs().cloned();
                    record.max_flux_jump = flow.diagnostics.max_flux_jump;
                    let cache = flow.mortar.as_ref().map(|m| m.traces.clone());
                    record.trace_cache = cache.clone();
                    *previous = cache;

                    if config.smoothing_iterations > 0 {
                        let t = Instant::now();
                        let system = fine.assemble(media, &mobility, source)?;
                        let smoothed = jacobi_smooth(
                            &flow,
                            &fine,
                            &system,
                            partition,
                            &blocks,
                            source,
                            config.smoothing_iterations,
                            config.smoothing_damping,
                        )?;
                        timings.smoothing += t.elapsed();
                        smoothed
                    } else {
                        flow
                    }
                }
            };

            let t = Instant::now();
            let report = transport.advance(saturation, &flow.face_flux, wells, config.outer_interval)?;
            timings.transport += t.elapsed();
            record.substeps = report.substeps;
            record.max_mass_error = report.max_mass_error;
            record.watercut = if has_producer {
                watercut(saturation.values(), wells, &config.fluid)?
            } else {
                0.0
            };
            record.saturation = saturation.values().to_vec();
            Ok((record, flow))
        };
        let (record, flow) = body(&mut timings, &mut previous, &mut saturation).map_err(|e| e.at_step(step))?;
        if step == 1 && config.mode == SolverMode::Mmmfem {
            dim = record.mortar_dim;
        }
        log::info!(
            "step {step}/{steps}: watercut {:.4}, {} substeps",
            record.watercut,
            record.substeps
        );
        records.push(record);
        final_flow = Some(flow);
    }
    timings.total = start.elapsed();

    Ok(RunResult {
        mode: config.mode,
        label: config.solver_label(),
        coarsening: (config.mode == SolverMode::Mmmfem).then_some(config.coarsening),
        grid: grid.clone(),
        initial_traces,
        steps: records,
        final_flow: final_flow.expect("at least one step"),
        timings,
        dim,
    })
}

/// Relative saturation errors per outer step.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// `e_S` per step; `None` where the reference saturation vanishes.
    pub per_step: Vec<Option<f64>>,
    /// Mean over the steps that were not skipped.
    pub average: f64,
    /// Wall time of the run divided by that of the reference.
    pub cpu_ratio: Option<f64>,
}

/// `e_S(i) = ||S(i) - S_ref(i)|| / ||S_ref(i)||` in the volume-weighted
/// discrete L2 norm.
pub fn saturation_error(run: &[&[f64]], reference: &[&[f64]], cell_volume: f64) -> Result<Metrics> {
    if run.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "{} snapshots against {} reference snapshots",
            run.len(),
            reference.len()
        )));
    }
    let mut per_step = Vec::with_capacity(run.len());
    for (i, (a, b)) in run.iter().zip(reference).enumerate() {
        if a.len() != b.len() {
            return Err(Error::InvalidArgument(format!("snapshot {i} sizes differ")));
        }
        let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * cell_volume;
        let norm: f64 = b.iter().map(|y| y * y).sum::<f64>() * cell_volume;
        if norm == 0.0 {
            log::warn!("reference saturation vanishes at instant {}; skipped", i + 1);
            per_step.push(None);
        } else {
            per_step.push(Some((diff / norm).sqrt()));
        }
    }
    let used: Vec<f64> = per_step.iter().flatten().copied().collect();
    let average = if used.is_empty() { 0.0 } else { used.iter().sum::<f64>() / used.len() as f64 };
    Ok(Metrics {
        per_step,
        average,
        cpu_ratio: None,
    })
}

/// One row of the accuracy/efficiency table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub simulator: String,
    pub basis: String,
    pub coarsening: Option<usize>,
    pub dim: usize,
    pub e_s: Option<f64>,
    pub cpu_seconds: f64,
}

impl TableRow {
    pub const HEADER: &'static str = "simulator,basis,n,dim,e_s,cpu_seconds";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.simulator,
            self.basis,
            self.coarsening.map_or("-".into(), |n| n.to_string()),
            self.dim,
            self.e_s.map_or("-".into(), |e| format!("{e:.4}")),
            self.cpu_seconds
        )
    }
}

fn simulator_name(mode: SolverMode) -> &'static str {
    match mode {
        SolverMode::Mmmfem => "MMMFEM",
        SolverMode::Fine => "MMFEM (fine)",
    }
}

/// Table rows for a run and its reference.
pub fn compare_report(run: &RunSummary, reference: &RunSummary, metrics: &Metrics) -> Vec<TableRow> {
    let row = |s: &RunSummary, e_s| TableRow {
        simulator: simulator_name(s.mode).into(),
        basis: if s.mode == SolverMode::Fine { "-".into() } else { s.label.clone() },
        coarsening: s.coarsening,
        dim: s.dim,
        e_s,
        cpu_seconds: s.wall_seconds,
    };
    vec![row(run, Some(metrics.average)), row(reference, None)]
}
