//! Pressure solvers: the coarse mortar interface problem and the fine-scale
//! hybridized reference.
//!
//! # Interface problem
//!
//! For a mortar function `mu`, each block solves its local problem with `mu`
//! as pressure data on its skeleton faces and no source. Pairing the
//! resulting outward fluxes with every basis function of the block gives the
//! block's share of
//!
//! ```text
//! a_H(lambda, mu) = - sum_i < u*(lambda) . n_i, mu >
//! ```
//!
//! and solving with the well source and zero mortar data gives
//! `g_H(mu) = sum_i < u_bar . n_i, mu >`. The matrix is small, sparse,
//! symmetric and positive semi-definite; it is singular exactly when the
//! constant function belongs to the mortar space (no-flow problems only fix
//! pressure up to a constant). One unknown is pinned in that case.
//!
//! # Recovery
//!
//! The mortar solution leaves two flux values on every skeleton face, equal
//! only in the weak sense. Transport needs one conservative flux per face, so
//! the two sides are averaged, a minimum-norm per-interface correction
//! restores every block balance, and each block is re-solved with those
//! fluxes as Neumann data. The two-sided values stay available for
//! diagnostics.

use std::time::{Duration, Instant};

use faer::Mat;
use faer::sparse::linalg::solvers::SymbolicLlt;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CoarsePartition, StructuredGrid};
use crate::linalg::SymmetricCsc;
use crate::local::{BlockLayout, BlockSymbolic, FaceRole, LocalBlockSystem, LocalSolution};
use crate::media::MediaField;
use crate::mortar::{InterfaceTraces, MortarSolution, MortarSpace};

/// Relative tolerance for deciding that the constant lies in the mortar
/// space, and for the source compatibility check.
const NULLSPACE_TOL: f64 = 1e-8;

/// Outward fluxes `[from lower block, from upper block]` per skeleton face.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceFluxes(pub Vec<Vec<[f64; 2]>>);

impl InterfaceFluxes {
    /// Largest `|w_lower + w_upper|` over all skeleton faces.
    pub fn max_jump(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|[a, b]| (a + b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .flat_map(|w| w.iter().copied())
            .map(f64::abs)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveDiagnostics {
    pub assembly: Duration,
    pub solve: Duration,
    pub local: Duration,
    pub smoothing: Duration,
    /// Largest two-sided flux mismatch on the skeleton before averaging.
    pub max_flux_jump: f64,
}

/// A global velocity/pressure pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    /// Total flux per fine face in the global orientation; zero on the
    /// outer boundary. Conservative per fine cell.
    pub face_flux: Vec<f64>,
    /// Cell pressure with zero volume-weighted mean.
    pub pressure: Vec<f64>,
    /// Face pressure (hybrid multiplier) per fine face, consistent with
    /// `pressure`; zero on the outer boundary.
    pub face_traces: Vec<f64>,
    /// Interface unknowns, for multiscale solutions.
    pub mortar: Option<MortarSolution>,
    /// Two-sided skeleton fluxes of the raw multiscale solution.
    pub skeleton_sides: Option<InterfaceFluxes>,
    pub diagnostics: SolveDiagnostics,
}

impl FlowSolution {
    /// Net outflow minus source for every fine cell.
    pub fn cell_imbalance(&self, grid: &StructuredGrid, source: &[f64]) -> Vec<f64> {
        cell_imbalance(grid, &self.face_flux, source)
    }
}

/// Net outflow minus source per cell for a single-valued face flux.
pub fn cell_imbalance(grid: &StructuredGrid, face_flux: &[f64], source: &[f64]) -> Vec<f64> {
    (0..grid.num_cells())
        .map(|c| {
            grid.cell_faces(c)
                .map(|(f, sign)| sign * face_flux[f])
                .sum::<f64>()
                - source[c]
        })
        .collect()
}

fn check_compatible(source: &[f64]) -> Result<()> {
    let total: f64 = source.iter().sum();
    let scale: f64 = source.iter().map(|q| q.abs()).sum();
    if total.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) && scale > 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sources sum to {total:e}; a closed domain needs zero net source"
        )));
    }
    Ok(())
}

fn zero_mean_shift(grid: &StructuredGrid, pressure: &[f64]) -> f64 {
    // uniform cells, so the volume weighting cancels
    let _ = grid;
    pressure.iter().sum::<f64>() / pressure.len() as f64
}

// ---------------------------------------------------------------------------
// Fine hybridized system

/// Index maps and sparsity of the fine face system, reusable across
/// mobility updates.
#[derive(Debug, Clone)]
pub struct FineSolver {
    grid: StructuredGrid,
    /// Unknown index per fine face, `u32::MAX` on the boundary.
    dof_of_face: Vec<u32>,
    face_of_dof: Vec<usize>,
    pattern: SymmetricCsc,
    symbolic: Option<SymbolicLlt<usize>>,
}

/// The fine face system `H lambda = r` at one mobility.
///
/// Eliminating cell pressure and half-face fluxes from the lumped hybrid
/// system gives, per cell `c` with half transmissibilities `t_f` and
/// `T_c = sum t_f`, the contribution `t_f delta_fg - t_f t_g / T_c` to `H`
/// and `t_f q_c / T_c` to `r`.
#[derive(Debug, Clone)]
pub struct FineSystem {
    matrix: SymmetricCsc,
    rhs: Vec<f64>,
    source: Vec<f64>,
    /// Half transmissibility per cell and local face (`2 * dim` slots).
    half_trans: Vec<f64>,
    cell_total: Vec<f64>,
}

impl FineSystem {
    pub fn num_unknowns(&self) -> usize {
        self.rhs.len()
    }

    pub fn matrix(&self) -> &SymmetricCsc {
        &self.matrix
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// `r - H lambda`.
    pub fn residual(&self, lambda: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; lambda.len()];
        self.matrix.mul_vec(lambda, &mut r);
        r.iter_mut().zip(&self.rhs).for_each(|(x, b)| *x = b - *x);
        r
    }
}

impl FineSolver {
    pub fn new(grid: &StructuredGrid) -> Self {
        let mut dof_of_face = vec![u32::MAX; grid.num_faces()];
        let mut face_of_dof = Vec::new();
        for (f, dof) in dof_of_face.iter_mut().enumerate() {
            if grid.is_interior_face(f) {
                *dof = face_of_dof.len() as u32;
                face_of_dof.push(f);
            }
        }
        let mut positions = Vec::new();
        for c in 0..grid.num_cells() {
            let dofs: Vec<usize> = grid
                .cell_faces(c)
                .filter(|&(f, _)| dof_of_face[f] != u32::MAX).map(|(f, _)| dof_of_face[f] as usize)
                .collect();
            for &a in &dofs {
                for &b in &dofs {
                    if a > b {
                        positions.push((a, b));
                    }
                }
            }
        }
        let pattern = SymmetricCsc::from_positions(face_of_dof.len(), positions);
        Self {
            grid: grid.clone(),
            dof_of_face,
            face_of_dof,
            pattern,
            symbolic: None,
        }
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn num_unknowns(&self) -> usize {
        self.face_of_dof.len()
    }

    /// Unknown index of a fine face, if it is interior.
    pub fn dof(&self, face: usize) -> Option<usize> {
        let d = self.dof_of_face[face];
        (d != u32::MAX).then_some(d as usize)
    }

    pub fn assemble(&self, media: &MediaField, cell_mobility: &[f64], source: &[f64]) -> Result<FineSystem> {
        let grid = &self.grid;
        media.check_grid(grid)?;
        let slots = 2 * grid.dim();
        let spacing = grid.spacing();
        let mut matrix = self.pattern.clone();
        matrix.clear();
        let mut rhs = vec![0.0; self.num_unknowns()];
        let mut half_trans = vec![0.0; grid.num_cells() * slots];
        let mut cell_total = vec![0.0; grid.num_cells()];

        let mut dofs = Vec::with_capacity(slots);
        for c in 0..grid.num_cells() {
            let lam = cell_mobility[c];
            if !(lam > 0.0 && lam.is_finite()) {
                return Err(Error::Numerical(format!("non-positive mobility {lam} in cell {c}")));
            }
            dofs.clear();
            let mut total = 0.0;
            for (slot, (f, _)) in grid.cell_faces(c).enumerate() {
                if let Some(d) = self.dof(f) {
                    let axis = slot / 2;
                    let t = 2.0 * lam * media.perm(c, axis) * grid.face_area(axis) / spacing[axis];
                    half_trans[c * slots + slot] = t;
                    total += t;
                    dofs.push((d, t));
                }
            }
            cell_total[c] = total;
            if total == 0.0 {
                continue;
            }
            for &(a, ta) in &dofs {
                rhs[a] += ta * source[c] / total;
                for &(b, tb) in &dofs {
                    if a >= b {
                        let delta = if a == b { ta } else { 0.0 };
                        matrix.add(a, b, delta - ta * tb / total);
                    }
                }
            }
        }
        Ok(FineSystem {
            matrix,
            rhs,
            source: source.to_vec(),
            half_trans,
            cell_total,
        })
    }

    /// Direct solve of the fine system (one face unknown pinned), followed
    /// by cellwise recovery of pressure and fluxes.
    pub fn solve(&mut self, system: &FineSystem) -> Result<FlowSolution> {
        check_compatible(&system.source)?;
        let start = Instant::now();
        let n = self.num_unknowns();
        let mut lambda = system.rhs.clone();
        if n > 0 {
            if self.symbolic.is_none() {
                self.symbolic = Some(self.pattern.analyze()?);
            }
            let mut pinned = system.matrix.clone();
            pinned.pin(0);
            lambda[0] = 0.0;
            let factor = pinned.factor(self.symbolic.as_ref().expect("analyzed above"))?;
            factor.solve_in_place(&mut lambda);
        }
        let solve = start.elapsed();
        let mut flow = self.recover_from_traces(system, &lambda);
        flow.diagnostics.solve = solve;
        Ok(flow)
    }

    /// Cellwise pressure and flux from face pressures on all interior faces.
    pub fn recover_from_traces(&self, system: &FineSystem, lambda: &[f64]) -> FlowSolution {
        let grid = &self.grid;
        let slots = 2 * grid.dim();
        let mut pressure = vec![0.0; grid.num_cells()];
        for (c, p) in pressure.iter_mut().enumerate() {
            let total = system.cell_total[c];
            if total == 0.0 {
                continue;
            }
            let mut acc = system.source[c];
            for (slot, (f, _)) in grid.cell_faces(c).enumerate() {
                if let Some(d) = self.dof(f) {
                    acc += system.half_trans[c * slots + slot] * lambda[d];
                }
            }
            *p = acc / total;
        }

        let mut face_flux = vec![0.0; grid.num_faces()];
        for c in 0..grid.num_cells() {
            for (slot, (f, sign)) in grid.cell_faces(c).enumerate() {
                if let Some(d) = self.dof(f) {
                    let outward = system.half_trans[c * slots + slot] * (pressure[c] - lambda[d]);
                    // average of the two one-sided values
                    face_flux[f] += 0.5 * sign * outward;
                }
            }
        }

        let shift = zero_mean_shift(grid, &pressure);
        pressure.iter_mut().for_each(|p| *p -= shift);
        let mut face_traces = vec![0.0; grid.num_faces()];
        for (d, &f) in self.face_of_dof.iter().enumerate() {
            face_traces[f] = lambda[d] - shift;
        }
        FlowSolution {
            face_flux,
            pressure,
            face_traces,
            mortar: None,
            skeleton_sides: None,
            diagnostics: SolveDiagnostics::default(),
        }
    }

    /// Face-pressure vector of `flow` in unknown order.
    pub fn gather_traces(&self, flow: &FlowSolution) -> Vec<f64> {
        self.face_of_dof.iter().map(|&f| flow.face_traces[f]).collect()
    }
}

/// Fine-scale reference solve: assemble, factor, recover.
pub fn fine_solve(
    grid: &StructuredGrid,
    media: &MediaField,
    cell_mobility: &[f64],
    source: &[f64],
) -> Result<FlowSolution> {
    let mut solver = FineSolver::new(grid);
    let start = Instant::now();
    let system = solver.assemble(media, cell_mobility, source)?;
    let assembly = start.elapsed();
    let mut flow = solver.solve(&system)?;
    flow.diagnostics.assembly = assembly;
    Ok(flow)
}

// ---------------------------------------------------------------------------
// Local block systems

/// Factorized local systems of every block at one mobility.
#[derive(Debug, Clone)]
pub struct BlockSystems {
    systems: Vec<LocalBlockSystem>,
}

/// Block layouts and the shared symbolic factorization of one partition.
#[derive(Debug, Clone)]
pub struct BlockLayouts {
    layouts: Vec<BlockLayout>,
    symbolic: BlockSymbolic,
}

impl BlockLayouts {
    pub fn new(grid: &StructuredGrid, partition: &CoarsePartition) -> Result<Self> {
        let layouts: Vec<BlockLayout> = (0..partition.num_blocks())
            .into_par_iter()
            .map(|b| BlockLayout::new(grid, partition, b))
            .collect();
        let symbolic = BlockSymbolic::new(&layouts[0])?;
        Ok(Self { layouts, symbolic })
    }

    /// Assembles and factorizes every block (in parallel).
    pub fn assemble(
        &self,
        grid: &StructuredGrid,
        media: &MediaField,
        cell_mobility: &[f64],
        stamp: u64,
    ) -> Result<BlockSystems> {
        media.check_grid(grid)?;
        let systems = self
            .layouts
            .par_iter()
            .map(|layout| {
                LocalBlockSystem::assemble(grid, media, cell_mobility, layout.clone(), &self.symbolic, stamp)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockSystems { systems })
    }
}

impl BlockSystems {
    pub fn get(&self, block: usize) -> &LocalBlockSystem {
        &self.systems[block]
    }

    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LocalBlockSystem> {
        self.systems.iter()
    }
}

/// Trace values of the block's skeleton faces, in block order.
fn block_trace(system: &LocalBlockSystem, traces: &InterfaceTraces) -> Vec<f64> {
    let mut out = vec![0.0; system.layout().num_skeleton_faces()];
    for (iface, range) in &system.layout().skeleton {
        out[range.clone()].copy_from_slice(traces.interface(*iface));
    }
    out
}

// ---------------------------------------------------------------------------
// Interface system

/// The assembled interface problem `A Lambda = g`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceSystem {
    /// Row-wise sparse matrix, columns sorted. Both triangles are stored as
    /// assembled (no symmetrization).
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    pub assembly_time: Duration,
}

impl InterfaceSystem {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                a[i][j] = v;
            }
        }
        a
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Smallest eigenvalue of the symmetric part, by a dense eigensolve.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let dense = self.to_dense();
        let n = self.dim();
        if n == 0 {
            return Ok(0.0);
        }
        let a = Mat::from_fn(n, n, |i, j| 0.5 * (dense[i][j] + dense[j][i]));
        let values = a
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| Error::Numerical(format!("eigenvalue computation failed: {e:?}")))?;
        Ok(values[0])
    }

    /// `||A - A^T||_F / ||A||_F`.
    pub fn asymmetry(&self) -> f64 {
        let dense = self.to_dense();
        let n = self.dim();
        let mut diff = 0.0;
        for i in 0..n {
            for j in 0..n {
                diff += (dense[i][j] - dense[j][i]).powi(2);
            }
        }
        let norm = self.frobenius_norm();
        if norm == 0.0 { 0.0 } else { diff.sqrt() / norm }
    }
}

/// Per-block share of the interface system.
struct BlockContribution {
    dofs: Vec<usize>,
    matrix: Vec<f64>,
    rhs: Vec<f64>,
}

fn block_contribution(
    system: &LocalBlockSystem,
    space: &MortarSpace,
    source: &[f64],
) -> BlockContribution {
    let layout = system.layout();
    let ns = layout.num_skeleton_faces();
    let mut dofs = Vec::new();
    let mut columns: Vec<(std::ops::Range<usize>, &[f64])> = Vec::new();
    for (iface, range) in &layout.skeleton {
        let basis = space.basis(*iface);
        for (k, v) in basis.vectors.iter().enumerate() {
            dofs.push(space.offset(*iface) + k);
            columns.push((range.clone(), v.as_slice()));
        }
    }
    let nd = dofs.len();
    let mut traces = Mat::<f64>::zeros(ns, nd);
    for (j, (range, v)) in columns.iter().enumerate() {
        for (i, &x) in range.clone().zip(v.iter()) {
            traces[(i, j)] = x;
        }
    }
    let fluxes = if nd > 0 { system.dirichlet_to_flux(&traces) } else { Mat::zeros(ns, 0) };

    let mut matrix = vec![0.0; nd * nd];
    for j in 0..nd {
        for (i, (range, v)) in columns.iter().enumerate() {
            let pairing: f64 = range.clone().zip(v.iter()).map(|(s, &m)| fluxes[(s, j)] * m).sum();
            matrix[i * nd + j] = -pairing;
        }
    }

    let local_q = layout.gather(source);
    let source_sol = system.solve_source(&local_q);
    let outward = system.block_boundary_flux(&source_sol);
    let rhs = columns
        .iter()
        .map(|(range, v)| range.clone().zip(v.iter()).map(|(s, &m)| outward[s] * m).sum())
        .collect();

    BlockContribution { dofs, matrix, rhs }
}

/// Assembles `A` and `g` by local solves in every block (in parallel),
/// reduced in block order.
pub fn assemble_interface_system(
    space: &MortarSpace,
    blocks: &BlockSystems,
    source: &[f64],
) -> InterfaceSystem {
    let start = Instant::now();
    let contributions: Vec<BlockContribution> = blocks
        .systems
        .par_iter()
        .map(|s| block_contribution(s, space, source))
        .collect();

    let n = space.dim();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut rhs = vec![0.0; n];
    for c in &contributions {
        let nd = c.dofs.len();
        for (i, &gi) in c.dofs.iter().enumerate() {
            rhs[gi] += c.rhs[i];
            for (j, &gj) in c.dofs.iter().enumerate() {
                let v = c.matrix[i * nd + j];
                match rows[gi].iter_mut().find(|(col, _)| *col == gj) {
                    Some(entry) => entry.1 += v,
                    None => rows[gi].push((gj, v)),
                }
            }
        }
    }
    rows.iter_mut().for_each(|r| r.sort_by_key(|&(j, _)| j));
    InterfaceSystem {
        rows,
        rhs,
        assembly_time: start.elapsed(),
    }
}

/// Coefficients of the global constant in the mortar basis, if the constant
/// belongs to the space on every interface.
fn constant_coefficients(space: &MortarSpace, partition: &CoarsePartition) -> Option<Vec<f64>> {
    if partition.interfaces().is_empty() {
        return None;
    }
    let mut z = vec![0.0; space.dim()];
    for (id, iface) in partition.interfaces().iter().enumerate() {
        let basis = space.basis(id);
        let mut residual = vec![1.0; iface.len()];
        for (k, v) in basis.vectors.iter().enumerate() {
            let c = iface.face_area * v.iter().sum::<f64>();
            z[space.offset(id) + k] = c;
            residual.iter_mut().zip(v).for_each(|(r, x)| *r -= c * x);
        }
        let res = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
        if res > NULLSPACE_TOL * (iface.len() as f64).sqrt() {
            return None;
        }
    }
    Some(z)
}

/// Direct solve of the interface system. When the constant lies in the
/// mortar space the matrix is singular: the right-hand side is checked for
/// compatibility and the unknown with the largest constant component is
/// pinned to zero.
pub fn solve_interface(
    space: &MortarSpace,
    partition: &CoarsePartition,
    system: &InterfaceSystem,
) -> Result<Vec<f64>> {
    let n = system.dim();
    if n == 0 {
        return Ok(Vec::new());
    }
    let pin = match constant_coefficients(space, partition) {
        Some(z) => {
            let gz: f64 = system.rhs.iter().zip(&z).map(|(g, z)| g * z).sum();
            let gn = system.rhs.iter().map(|g| g * g).sum::<f64>().sqrt();
            let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gz.abs() > NULLSPACE_TOL * gn * zn {
                return Err(Error::Solvability(format!(
                    "right-hand side has component {gz:e} along the constant null vector"
                )));
            }
            let k = (0..n)
                .max_by(|&a, &b| z[a].abs().total_cmp(&z[b].abs()).then(b.cmp(&a)))
                .expect("non-empty");
            Some(k)
        }
        None => None,
    };

    let mut matrix = SymmetricCsc::from_positions(
        n,
        system
            .rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().filter(move |(j, _)| *j <= i).map(move |&(j, _)| (i, j))),
    );
    for (i, row) in system.rows.iter().enumerate() {
        for &(j, v) in row {
            if j <= i {
                matrix.add(i, j, v);
            }
        }
    }
    let mut rhs = system.rhs.clone();
    if let Some(k) = pin {
        matrix.pin(k);
        rhs[k] = 0.0;
    }
    let symbolic = matrix.analyze()?;
    let factor = matrix.factor(&symbolic)?;
    factor.solve_in_place(&mut rhs);
    Ok(rhs)
}

/// `sum_i < u_i . n_i, mu >` for every mortar basis function, from the
/// two-sided skeleton fluxes.
pub fn weak_continuity_residuals(space: &MortarSpace, sides: &InterfaceFluxes) -> Vec<f64> {
    let mut out = Vec::with_capacity(space.dim());
    for (id, faces) in sides.0.iter().enumerate() {
        for v in &space.basis(id).vectors {
            out.push(faces.iter().zip(v).map(|([a, b], m)| (a + b) * m).sum());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Recovery

/// Raw per-block solutions gathered onto the fine grid.
struct RawSolution {
    pressure: Vec<f64>,
    sides: InterfaceFluxes,
    solutions: Vec<LocalSolution>,
}

fn solve_blocks_with_traces(
    partition: &CoarsePartition,
    blocks: &BlockSystems,
    traces: &InterfaceTraces,
    source: &[f64],
    num_cells: usize,
) -> RawSolution {
    let solutions: Vec<LocalSolution> = blocks
        .systems
        .par_iter()
        .map(|s| s.solve(&block_trace(s, traces), &s.layout().gather(source)))
        .collect();

    let mut pressure = vec![0.0; num_cells];
    let mut sides = InterfaceFluxes(
        partition
            .interfaces()
            .iter()
            .map(|i| vec![[0.0; 2]; i.len()])
            .collect(),
    );
    for (s, sol) in blocks.systems.iter().zip(&solutions) {
        let layout = s.layout();
        for (&c, &p) in layout.cells.iter().zip(&sol.pressure) {
            pressure[c] = p;
        }
        let outward = s.block_boundary_flux(sol);
        for (face, w) in layout.skeleton_faces().iter().zip(outward) {
            if let FaceRole::Skeleton { sign, interface, slot, .. } = face.role {
                let side = if sign > 0.0 { 0 } else { 1 };
                sides.0[interface][slot][side] = w;
            }
        }
    }
    RawSolution {
        pressure,
        sides,
        solutions,
    }
}

/// Single-valued conservative flux from two-sided skeleton fluxes: average,
/// minimum-norm block-balance correction, Neumann re-solve per block. Block
/// pressures are shifted to keep the block means of `raw.pressure`.
fn conservative_reconstruction(
    grid: &StructuredGrid,
    partition: &CoarsePartition,
    blocks: &BlockSystems,
    raw: &RawSolution,
    source: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nb = partition.num_blocks();
    // averaged flux in the global orientation
    let mut averaged: Vec<Vec<f64>> = raw
        .sides
        .0
        .iter()
        .map(|faces| faces.iter().map(|[lo, up]| 0.5 * (lo - up)).collect())
        .collect();

    let mut imbalance = vec![0.0; nb];
    for c in 0..grid.num_cells() {
        imbalance[partition.block_of_cell(c)] += source[c];
    }
    for (iface, flux) in partition.interfaces().iter().zip(&averaged) {
        let total: f64 = flux.iter().sum();
        imbalance[iface.blocks[0]] -= total;
        imbalance[iface.blocks[1]] += total;
    }
    if !partition.interfaces().is_empty() {
        let mut laplacian = SymmetricCsc::from_positions(
            nb,
            partition.interfaces().iter().map(|i| (i.blocks[0], i.blocks[1])),
        );
        for i in partition.interfaces() {
            let [a, b] = i.blocks;
            laplacian.add(a, a, 1.0);
            laplacian.add(b, b, 1.0);
            laplacian.add(a, b, -1.0);
        }
        laplacian.pin(0);
        let mut y = imbalance.clone();
        y[0] = 0.0;
        let symbolic = laplacian.analyze()?;
        laplacian.factor(&symbolic)?.solve_in_place(&mut y);
        for (iface, flux) in partition.interfaces().iter().zip(averaged.iter_mut()) {
            let c = (y[iface.blocks[0]] - y[iface.blocks[1]]) / iface.len() as f64;
            flux.iter_mut().for_each(|f| *f += c);
        }
    }

    let solutions: Vec<LocalSolution> = blocks
        .systems
        .par_iter()
        .map(|s| {
            let outward: Vec<f64> = s
                .layout()
                .skeleton_faces()
                .iter()
                .map(|face| match face.role {
                    FaceRole::Skeleton { sign, interface, slot, .. } => sign * averaged[interface][slot],
                    _ => unreachable!("skeleton faces come first"),
                })
                .collect();
            s.solve_neumann(&outward, &s.layout().gather(source))
        })
        .collect();

    let mut face_flux = vec![0.0; grid.num_faces()];
    let mut pressure = vec![0.0; grid.num_cells()];
    for (s, sol) in blocks.systems.iter().zip(&solutions) {
        let layout = s.layout();
        for (face, &u) in layout.faces.iter().zip(&sol.face_flux) {
            face_flux[face.global] = u;
        }
        let n = layout.num_cells() as f64;
        let target: f64 = layout.cells.iter().map(|&c| raw.pressure[c]).sum::<f64>() / n;
        let mean: f64 = sol.pressure.iter().sum::<f64>() / n;
        for (&c, &p) in layout.cells.iter().zip(&sol.pressure) {
            pressure[c] = p - mean + target;
        }
    }
    Ok((face_flux, pressure))
}

/// Face pressures from per-block solutions: hybrid multipliers inside blocks,
/// the given traces on the skeleton.
fn assemble_face_traces(
    grid: &StructuredGrid,
    partition: &CoarsePartition,
    blocks: &BlockSystems,
    raw: &RawSolution,
    traces: &InterfaceTraces,
) -> Vec<f64> {
    let mut face_traces = vec![0.0; grid.num_faces()];
    for (s, sol) in blocks.systems.iter().zip(&raw.solutions) {
        for (f, v) in s.interior_face_traces(sol) {
            face_traces[f] = v;
        }
    }
    for (iface, values) in partition.interfaces().iter().zip(&traces.0) {
        for (&f, &v) in iface.faces.iter().zip(values) {
            face_traces[f] = v;
        }
    }
    face_traces
}

fn finish(
    grid: &StructuredGrid,
    partition: &CoarsePartition,
    blocks: &BlockSystems,
    raw: RawSolution,
    traces: &InterfaceTraces,
    source: &[f64],
) -> Result<(FlowSolution, f64)> {
    let (face_flux, mut pressure) = conservative_reconstruction(grid, partition, blocks, &raw, source)?;
    let mut face_traces = assemble_face_traces(grid, partition, blocks, &raw, traces);
    let shift = zero_mean_shift(grid, &pressure);
    pressure.iter_mut().for_each(|p| *p -= shift);
    for f in 0..grid.num_faces() {
        if grid.is_interior_face(f) {
            face_traces[f] -= shift;
        }
    }
    let max_flux_jump = raw.sides.max_jump();
    let flow = FlowSolution {
        face_flux,
        pressure,
        face_traces,
        mortar: None,
        skeleton_sides: Some(raw.sides),
        diagnostics: SolveDiagnostics {
            max_flux_jump,
            ..Default::default()
        },
    };
    Ok((flow, shift))
}

/// Velocity and pressure from the interface solution: one local solve per
/// block with `Lambda_H` as skeleton data and the well source, then the
/// conservative reconstruction and zero-mean normalization. The returned
/// mortar traces are shifted with the pressure.
pub fn recover_solution(
    grid: &StructuredGrid,
    partition: &CoarsePartition,
    space: &MortarSpace,
    blocks: &BlockSystems,
    coefficients: &[f64],
    source: &[f64],
) -> Result<FlowSolution> {
    let start = Instant::now();
    let traces = space.evaluate(coefficients);
    let raw = solve_blocks_with_traces(partition, blocks, &traces, source, grid.num_cells());
    let (mut flow, shift) = finish(grid, partition, blocks, raw, &traces, source)?;
    let mut normalized = traces;
    normalized.shift(-shift);
    flow.mortar = Some(MortarSolution {
        coefficients: coefficients.to_vec(),
        traces: normalized,
    });
    flow.diagnostics.local = start.elapsed();
    Ok(flow)
}

/// Everything needed for one multiscale pressure solve.
pub struct MultiscaleSolve<'a> {
    pub grid: &'a StructuredGrid,
    pub partition: &'a CoarsePartition,
    pub space: &'a MortarSpace,
    pub blocks: &'a BlockSystems,
    pub source: &'a [f64],
}

impl MultiscaleSolve<'_> {
    /// Assemble, solve and recover.
    pub fn run(&self) -> Result<FlowSolution> {
        check_compatible(self.source)?;
        let system = assemble_interface_system(self.space, self.blocks, self.source);
        let start = Instant::now();
        let coefficients = solve_interface(self.space, self.partition, &system)?;
        let solve = start.elapsed();
        let mut flow = recover_solution(
            self.grid,
            self.partition,
            self.space,
            self.blocks,
            &coefficients,
            self.source,
        )?;
        flow.diagnostics.assembly = system.assembly_time;
        flow.diagnostics.solve = solve;
        Ok(flow)
    }
}

// ---------------------------------------------------------------------------
// Smoothing

/// `iterations` damped Jacobi sweeps on the fine face system starting from
/// `lambda`. Returns the residual norm before each sweep and after the last.
pub fn jacobi_sweeps(system: &FineSystem, lambda: &mut [f64], iterations: usize, damping: f64) -> Vec<f64> {
    let diag = system.matrix.diagonal();
    let mut history = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let r = system.residual(lambda);
        history.push(r.iter().map(|v| v * v).sum::<f64>().sqrt());
        for ((l, r), d) in lambda.iter_mut().zip(&r).zip(&diag) {
            if *d > 0.0 {
                *l += damping * r / d;
            }
        }
    }
    let r = system.residual(lambda);
    history.push(r.iter().map(|v| v * v).sum::<f64>().sqrt());
    history
}

/// Post-smoothing of a flow solution: its face pressures seed damped Jacobi
/// sweeps on the fine face system, then each block is re-solved with the
/// smoothed skeleton values and the flux is made conservative again.
#[allow(clippy::too_many_arguments)]
pub fn jacobi_smooth(
    flow: &FlowSolution,
    fine: &FineSolver,
    fine_system: &FineSystem,
    partition: &CoarsePartition,
    blocks: &BlockSystems,
    source: &[f64],
    iterations: usize,
    damping: f64,
) -> Result<FlowSolution> {
    if iterations == 0 {
        return Ok(flow.clone());
    }
    let start = Instant::now();
    let grid = fine.grid();
    let mut lambda = fine.gather_traces(flow);
    jacobi_sweeps(fine_system, &mut lambda, iterations, damping);

    let traces = InterfaceTraces(
        partition
            .interfaces()
            .iter()
            .map(|i| {
                i.faces
                    .iter()
                    .map(|&f| lambda[fine.dof(f).expect("skeleton faces are interior")])
                    .collect()
            })
            .collect(),
    );
    let raw = solve_blocks_with_traces(partition, blocks, &traces, source, grid.num_cells());
    let (mut smoothed, _) = finish(grid, partition, blocks, raw, &traces, source)?;
    smoothed.mortar = flow.mortar.clone();
    smoothed.diagnostics = SolveDiagnostics {
        smoothing: start.elapsed(),
        ..flow.diagnostics.clone()
    };
    Ok(smoothed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{synth_media, SynthKind};
    use crate::mortar::{MortarRecipe, DEFAULT_DROP_TOL};

    fn two_wells(grid: &StructuredGrid) -> Vec<f64> {
        let mut q = vec![0.0; grid.num_cells()];
        q[0] = 1.0;
        let last = grid.num_cells() - 1;
        q[last] = -1.0;
        q
    }

    #[test]
    fn fine_solve_zero_source() {
        let grid = StructuredGrid::new(&[6, 4], &[1.0, 1.0]).unwrap();
        let media = synth_media(SynthKind::lognormal(1), &grid).unwrap();
        let flow = fine_solve(&grid, &media, &vec![1.0; 24], &vec![0.0; 24]).unwrap();
        assert!(flow.face_flux.iter().all(|u| u.abs() < 1e-13));
        assert!(flow.pressure.iter().all(|p| p.abs() < 1e-13));
    }

    #[test]
    fn fine_solve_conserves_and_normalizes() {
        let grid = StructuredGrid::new(&[10, 8], &[1.0, 2.0]).unwrap();
        let media = synth_media(SynthKind::lognormal(5), &grid).unwrap();
        let q = two_wells(&grid);
        let flow = fine_solve(&grid, &media, &vec![0.5; 80], &q).unwrap();
        let imb = flow.cell_imbalance(&grid, &q);
        assert!(imb.iter().all(|r| r.abs() < 1e-10));
        assert!(flow.pressure.iter().sum::<f64>().abs() < 1e-10);
        for f in 0..grid.num_faces() {
            if !grid.is_interior_face(f) {
                assert_eq!(flow.face_flux[f], 0.0);
            }
        }
    }

    #[test]
    fn fine_solve_rejects_net_source() {
        let grid = StructuredGrid::new(&[3, 3], &[1.0, 1.0]).unwrap();
        let media = synth_media(SynthKind::Uniform { k: 1.0 }, &grid).unwrap();
        let mut q = vec![0.0; 9];
        q[0] = 1.0;
        assert!(fine_solve(&grid, &media, &[1.0; 9], &q).is_err());
    }

    #[test]
    fn constant_mortar_carries_no_flux() {
        // two 2x2 blocks side by side, P0 mortar
        let grid = StructuredGrid::new(&[4, 2], &[1.0, 1.0]).unwrap();
        let part = CoarsePartition::new(&grid, 2).unwrap();
        let media = synth_media(SynthKind::Uniform { k: 1.0 }, &grid).unwrap();
        let lambda = vec![1.0; 8];
        let layouts = BlockLayouts::new(&grid, &part).unwrap();
        let blocks = layouts.assemble(&grid, &media, &lambda, 0).unwrap();
        let space = MortarSpace::build(&part, MortarRecipe::polynomial(0), None, DEFAULT_DROP_TOL, 0).unwrap();
        let q = vec![0.0; 8];
        let sys = assemble_interface_system(&space, &blocks, &q);
        assert_eq!(sys.dim(), 1);
        // constant data on a block with no-flow elsewhere gives a constant
        // pressure and no flux
        assert!(sys.to_dense()[0][0].abs() < 1e-12);
    }

    #[test]
    fn interface_system_is_symmetric_psd() {
        let grid = StructuredGrid::new(&[12, 12], &[1.0, 1.0]).unwrap();
        let part = CoarsePartition::new(&grid, 4).unwrap();
        let media = synth_media(SynthKind::lognormal(3), &grid).unwrap();
        let lambda = vec![1.0; 144];
        let layouts = BlockLayouts::new(&grid, &part).unwrap();
        let blocks = layouts.assemble(&grid, &media, &lambda, 0).unwrap();
        let space = MortarSpace::build(&part, MortarRecipe::polynomial(1), None, DEFAULT_DROP_TOL, 0).unwrap();
        let q = two_wells(&grid);
        let sys = assemble_interface_system(&space, &blocks, &q);
        assert!(sys.asymmetry() < 1e-10);
        // constant function: A z = 0
        let z = constant_coefficients(&space, &part).unwrap();
        let az = sys.mul_vec(&z);
        assert!(az.iter().all(|v| v.abs() < 1e-10 * sys.frobenius_norm()));
        let lmin = sys.min_eigenvalue().unwrap();
        assert!(lmin >= -1e-8 * sys.frobenius_norm());
        assert!(lmin.abs() < 1e-8 * sys.frobenius_norm(), "constants are in the kernel");
    }

    #[test]
    fn zero_source_gives_zero_interface_solution() {
        let grid = StructuredGrid::new(&[8, 8], &[1.0, 1.0]).unwrap();
        let part = CoarsePartition::new(&grid, 4).unwrap();
        let media = synth_media(SynthKind::lognormal(7), &grid).unwrap();
        let layouts = BlockLayouts::new(&grid, &part).unwrap();
        let blocks = layouts.assemble(&grid, &media, &[1.0; 64], 0).unwrap();
        let space = MortarSpace::build(&part, MortarRecipe::polynomial(1), None, DEFAULT_DROP_TOL, 0).unwrap();
        let q = vec![0.0; 64];
        let sys = assemble_interface_system(&space, &blocks, &q);
        assert!(sys.rhs().iter().all(|g| *g == 0.0));
        let x = solve_interface(&space, &part, &sys).unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
        let flow = recover_solution(&grid, &part, &space, &blocks, &x, &q).unwrap();
        assert!(flow.face_flux.iter().all(|u| u.abs() < 1e-14));
    }

    #[test]
    fn linear_in_source() {
        let grid = StructuredGrid::new(&[8, 8], &[1.0, 1.0]).unwrap();
        let part = CoarsePartition::new(&grid, 4).unwrap();
        let media = synth_media(SynthKind::lognormal(8), &grid).unwrap();
        let layouts = BlockLayouts::new(&grid, &part).unwrap();
        let blocks = layouts.assemble(&grid, &media, &[1.0; 64], 0).unwrap();
        let space = MortarSpace::build(&part, MortarRecipe::polynomial(1), None, DEFAULT_DROP_TOL, 0).unwrap();
        let q = two_wells(&grid);
        let q3: Vec<f64> = q.iter().map(|v| 3.0 * v).collect();
        let a = solve_interface(&space, &part, &assemble_interface_system(&space, &blocks, &q)).unwrap();
        let b = solve_interface(&space, &part, &assemble_interface_system(&space, &blocks, &q3)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((3.0 * x - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn incompatible_rhs_is_rejected() {
        let grid = StructuredGrid::new(&[8, 8], &[1.0, 1.0]).unwrap();
        let part = CoarsePartition::new(&grid, 4).unwrap();
        let media = synth_media(SynthKind::Uniform { k: 1.0 }, &grid).unwrap();
        let layouts = BlockLayouts::new(&grid, &part).unwrap();
        let blocks = layouts.assemble(&grid, &media, &[1.0; 64], 0).unwrap();
        let space = MortarSpace::build(&part, MortarRecipe::polynomial(0), None, DEFAULT_DROP_TOL, 0).unwrap();
        let mut q = vec![0.0; 64];
        q[0] = 1.0;
        let sys = assemble_interface_system(&space, &blocks, &q);
        assert!(matches!(
            solve_interface(&space, &part, &sys),
            Err(Error::Solvability(_))
        ));
    }

    #[test]
    fn multiscale_solution_is_conservative_and_weakly_continuous() {
        let grid = StructuredGrid::new(&[16, 16], &[1.0, 1.0]).unwrap();
        let part = CoarsePartition::new(&grid, 4).unwrap();
        let media = synth_media(SynthKind::lognormal(11), &grid).unwrap();
        let lambda = vec![1.0; 256];
        let layouts = BlockLayouts::new(&grid, &part).unwrap();
        let blocks = layouts.assemble(&grid, &media, &lambda, 0).unwrap();
        let space = MortarSpace::build(&part, MortarRecipe::polynomial(1), None, DEFAULT_DROP_TOL, 0).unwrap();
        let q = two_wells(&grid);
        let flow = MultiscaleSolve {
            grid: &grid,
            partition: &part,
            space: &space,
            blocks: &blocks,
            source: &q,
        }
        .run()
        .unwrap();
        assert!(flow.cell_imbalance(&grid, &q).iter().all(|r| r.abs() < 1e-10));
        let sides = flow.skeleton_sides.as_ref().unwrap();
        let scale = sides.max_abs();
        let res = weak_continuity_residuals(&space, sides);
        assert!(res.iter().all(|r| r.abs() < 1e-8 * scale));
        assert!(flow.pressure.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn full_trace_space_reproduces_fine_solution() {
        let grid = StructuredGrid::new(&[12, 12], &[1.0, 1.0]).unwrap();
        let part = CoarsePartition::new(&grid, 4).unwrap();
        let media = synth_media(SynthKind::lognormal(2), &grid).unwrap();
        let lambda: Vec<f64> = (0..144).map(|c| 0.5 + (c % 3) as f64).collect();
        let q = two_wells(&grid);
        let fine = fine_solve(&grid, &media, &lambda, &q).unwrap();
        let layouts = BlockLayouts::new(&grid, &part).unwrap();
        let blocks = layouts.assemble(&grid, &media, &lambda, 0).unwrap();
        let space = MortarSpace::build(&part, MortarRecipe::full_trace(), None, DEFAULT_DROP_TOL, 0).unwrap();
        let ms = MultiscaleSolve {
            grid: &grid,
            partition: &part,
            space: &space,
            blocks: &blocks,
            source: &q,
        }
        .run()
        .unwrap();
        let fscale = fine.face_flux.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let pscale = fine.pressure.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in ms.face_flux.iter().zip(&fine.face_flux) {
            assert!((a - b).abs() < 1e-8 * fscale);
        }
        for (a, b) in ms.pressure.iter().zip(&fine.pressure) {
            assert!((a - b).abs() < 1e-8 * pscale);
        }
        for f in 0..grid.num_faces() {
            assert!((ms.face_traces[f] - fine.face_traces[f]).abs() < 1e-8 * pscale);
        }
    }

    #[test]
    fn jacobi_keeps_exact_solution_and_zero_sweeps_is_identity() {
        let grid = StructuredGrid::new(&[8, 8], &[1.0, 1.0]).unwrap();
        let part = CoarsePartition::new(&grid, 4).unwrap();
        let media = synth_media(SynthKind::lognormal(4), &grid).unwrap();
        let lambda = vec![1.0; 64];
        let q = two_wells(&grid);
        let mut solver = FineSolver::new(&grid);
        let fs = solver.assemble(&media, &lambda, &q).unwrap();
        let exact = solver.solve(&fs).unwrap();
        let layouts = BlockLayouts::new(&grid, &part).unwrap();
        let blocks = layouts.assemble(&grid, &media, &lambda, 0).unwrap();

        let same = jacobi_smooth(&exact, &solver, &fs, &part, &blocks, &q, 0, 2.0 / 3.0).unwrap();
        assert_eq!(same, exact);

        let smoothed = jacobi_smooth(&exact, &solver, &fs, &part, &blocks, &q, 10, 2.0 / 3.0).unwrap();
        let scale = exact.face_flux.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in smoothed.face_flux.iter().zip(&exact.face_flux) {
            assert!((a - b).abs() < 1e-9 * scale);
        }
    }
}
