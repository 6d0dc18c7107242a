//! Lowest-order mixed finite elements on one coarse block.
//!
//! The velocity unknown of a face is the total normal flux through it
//! (normal flux density times face area). With trapezoidal lumping the
//! weighted RT0 mass matrix is diagonal: each cell adjacent to a face along
//! axis `a` contributes `dx_a / (2 lambda k_a A)`. Eliminating the fluxes
//! (static condensation) leaves a symmetric positive definite system in the
//! cell pressures whose off-diagonal couplings are the two-point harmonic
//! transmissibilities `1 / M_ff`.
//!
//! Faces of a block fall in three groups: faces inside the block, faces on
//! the coarse skeleton (they carry mortar data), and faces on the outer
//! boundary (no flow, flux pinned to zero).

use std::ops::Range;

use faer::Mat;
use faer::sparse::linalg::solvers::SymbolicLlt;

use crate::error::{Error, Result};
use crate::grid::{CoarsePartition, StructuredGrid};
use crate::linalg::{CholeskyFactor, SymmetricCsc};
use crate::media::MediaField;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceRole {
    /// Both adjacent cells belong to the block (local cell indices).
    Interior { lower: usize, upper: usize },
    /// On the coarse skeleton; `sign` maps the global orientation to the
    /// block-outward one.
    Skeleton {
        cell: usize,
        sign: f64,
        interface: usize,
        slot: usize,
    },
    /// On the outer boundary.
    Boundary { cell: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFace {
    pub global: usize,
    pub role: FaceRole,
    /// Lumped mass contribution of the `[lower, upper]` cell; zero for a side
    /// outside the block.
    pub half_weight: [f64; 2],
}

impl LocalFace {
    /// Diagonal entry of the lumped mass matrix.
    pub fn weight(&self) -> f64 {
        self.half_weight[0] + self.half_weight[1]
    }
}

/// Cell and face bookkeeping of a block, independent of the coefficients.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub block: usize,
    /// Global cell ids, `x` fastest.
    pub cells: Vec<usize>,
    /// Every face touching a block cell. Skeleton faces come first, ordered
    /// by the block's interface list and then by interface slot.
    pub faces: Vec<LocalFace>,
    /// `(interface, range of local faces)` for every adjacent interface.
    pub skeleton: Vec<(usize, Range<usize>)>,
    num_skeleton: usize,
}

impl BlockLayout {
    pub fn new(grid: &StructuredGrid, partition: &CoarsePartition, block: usize) -> Self {
        let cells = partition.block_cells(grid, block);
        let local_of = |global: usize| -> Option<usize> {
            (partition.block_of_cell(global) == block)
                .then(|| cells.binary_search(&global).expect("cell list is sorted"))
        };

        let mut faces = Vec::new();
        let mut skeleton = Vec::new();
        for &id in partition.block_interfaces(block) {
            let iface = partition.interface(id);
            let sign = iface.outward_sign(block);
            let start = faces.len();
            for (slot, &f) in iface.faces.iter().enumerate() {
                let [l, u] = grid.face_cells(f);
                let cell = if sign > 0.0 { l } else { u }.expect("skeleton faces are interior");
                faces.push(LocalFace {
                    global: f,
                    role: FaceRole::Skeleton {
                        cell: local_of(cell).expect("cell in block"),
                        sign,
                        interface: id,
                        slot,
                    },
                    half_weight: [0.0; 2],
                });
            }
            skeleton.push((id, start..faces.len()));
        }
        let num_skeleton = faces.len();

        for (lc, &c) in cells.iter().enumerate() {
            for (f, sign) in grid.cell_faces(c) {
                if partition.skeleton_slot(f).is_some() {
                    continue;
                }
                let [l, u] = grid.face_cells(f);
                match (l, u) {
                    (Some(l), Some(u)) => {
                        // record interior faces once, from their lower cell
                        if sign > 0.0 {
                            faces.push(LocalFace {
                                global: f,
                                role: FaceRole::Interior {
                                    lower: local_of(l).expect("lower in block"),
                                    upper: local_of(u).expect("upper in block"),
                                },
                                half_weight: [0.0; 2],
                            });
                        }
                    }
                    _ => faces.push(LocalFace {
                        global: f,
                        role: FaceRole::Boundary { cell: lc },
                        half_weight: [0.0; 2],
                    }),
                }
            }
        }

        Self {
            block,
            cells,
            faces,
            skeleton,
            num_skeleton,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_skeleton_faces(&self) -> usize {
        self.num_skeleton
    }

    pub fn skeleton_faces(&self) -> &[LocalFace] {
        &self.faces[..self.num_skeleton]
    }

    /// Sparsity pattern of the condensed cell-pressure matrix.
    pub fn pattern(&self) -> SymmetricCsc {
        SymmetricCsc::from_positions(
            self.cells.len(),
            self.faces.iter().filter_map(|f| match f.role {
                FaceRole::Interior { lower, upper } => Some((upper, lower)),
                _ => None,
            }),
        )
    }

    /// Gathers a global per-cell array onto the block cells.
    pub fn gather(&self, global: &[f64]) -> Vec<f64> {
        self.cells.iter().map(|&c| global[c]).collect()
    }
}

/// Symbolic factorization shared by all blocks of one partition (they have
/// identical local patterns).
#[derive(Debug, Clone)]
pub struct BlockSymbolic {
    inner: SymbolicLlt<usize>,
}

impl BlockSymbolic {
    pub fn new(layout: &BlockLayout) -> Result<Self> {
        Ok(Self {
            inner: layout.pattern().analyze()?,
        })
    }
}

/// Assembled and factorized local problems of one block.
#[derive(Debug, Clone)]
pub struct LocalBlockSystem {
    layout: BlockLayout,
    stamp: u64,
    /// Factor of the problem with mortar (Dirichlet) data on the skeleton.
    dirichlet: CholeskyFactor,
    /// Factor of the problem with prescribed skeleton fluxes, first cell pinned.
    neumann: CholeskyFactor,
}

/// Face fluxes (global orientation) and cell pressures of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub face_flux: Vec<f64>,
    pub pressure: Vec<f64>,
}

impl LocalBlockSystem {
    /// Assembles the lumped mixed system of `layout.block` at the given
    /// per-cell total mobility (global array) and factorizes it.
    pub fn assemble(
        grid: &StructuredGrid,
        media: &MediaField,
        cell_mobility: &[f64],
        mut layout: BlockLayout,
        symbolic: &BlockSymbolic,
        stamp: u64,
    ) -> Result<Self> {
        let spacing = grid.spacing();
        let half = |global_cell: usize, axis: usize| -> Result<f64> {
            let lam = cell_mobility[global_cell];
            let k = media.perm(global_cell, axis);
            if !(lam > 0.0 && k > 0.0 && lam.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-positive coefficient lambda={lam}, k={k} in cell {global_cell}"
                )));
            }
            Ok(spacing[axis] / (2.0 * lam * k * grid.face_area(axis)))
        };

        let cells = layout.cells.clone();
        for face in &mut layout.faces {
            let axis = grid.face_axis(face.global);
            face.half_weight = match face.role {
                FaceRole::Interior { lower, upper } => {
                    [half(cells[lower], axis)?, half(cells[upper], axis)?]
                }
                FaceRole::Skeleton { cell, sign, .. } => {
                    let w = half(cells[cell], axis)?;
                    if sign > 0.0 { [w, 0.0] } else { [0.0, w] }
                }
                FaceRole::Boundary { cell } => {
                    let w = half(cells[cell], axis)?;
                    let [l, _] = grid.face_cells(face.global);
                    if l.is_some() { [w, 0.0] } else { [0.0, w] }
                }
            };
        }

        let mut neumann = layout.pattern();
        for face in &layout.faces {
            if let FaceRole::Interior { lower, upper } = face.role {
                let t = 1.0 / face.weight();
                neumann.add(lower, lower, t);
                neumann.add(upper, upper, t);
                neumann.add(upper, lower, -t);
            }
        }
        let mut dirichlet = neumann.clone();
        for face in layout.skeleton_faces() {
            if let FaceRole::Skeleton { cell, .. } = face.role {
                dirichlet.add(cell, cell, 1.0 / face.weight());
            }
        }
        neumann.pin(0);
        if layout.num_skeleton_faces() == 0 {
            // a block without skeleton faces is a pure no-flow problem
            dirichlet.pin(0);
        }

        let block = layout.block;
        let dirichlet = dirichlet
            .factor(&symbolic.inner)
            .map_err(|e| e.on_block(block))?;
        let neumann = neumann
            .factor(&symbolic.inner)
            .map_err(|e| e.on_block(block))?;
        Ok(Self {
            layout,
            stamp,
            dirichlet,
            neumann,
        })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn block(&self) -> usize {
        self.layout.block
    }

    /// Mobility version this system was assembled with.
    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    /// Diagonal of the lumped mass matrix, per local face.
    pub fn mass_diagonal(&self) -> Vec<f64> {
        self.layout.faces.iter().map(LocalFace::weight).collect()
    }

    /// Solves with trace values `trace` on the skeleton faces (block order)
    /// and per-cell source `source` (integrated over the cell).
    pub fn solve(&self, trace: &[f64], source: &[f64]) -> LocalSolution {
        let mut rhs = source.to_vec();
        if self.layout.num_skeleton_faces() == 0 {
            rhs[0] = 0.0;
        } else {
            for (face, &lam) in self.layout.skeleton_faces().iter().zip(trace) {
                if let FaceRole::Skeleton { cell, .. } = face.role {
                    rhs[cell] += lam / face.weight();
                }
            }
        }
        self.dirichlet.solve_in_place(&mut rhs);
        self.fluxes_from_pressure(rhs, Some(trace), None)
    }

    /// Local problem with mortar data and no source.
    pub fn solve_dirichlet(&self, trace: &[f64]) -> LocalSolution {
        self.solve(trace, &vec![0.0; self.layout.num_cells()])
    }

    /// Local problem with a source and zero mortar data.
    pub fn solve_source(&self, source: &[f64]) -> LocalSolution {
        self.solve(&vec![0.0; self.layout.num_skeleton_faces()], source)
    }

    /// Outward skeleton fluxes for many trace vectors at once; column `j` of
    /// `traces` is one trace vector, column `j` of the result its fluxes.
    pub fn dirichlet_to_flux(&self, traces: &Mat<f64>) -> Mat<f64> {
        let ns = self.layout.num_skeleton_faces();
        let nc = self.layout.num_cells();
        let skel = self.layout.skeleton_faces();
        let mut rhs = Mat::<f64>::zeros(nc, traces.ncols());
        for j in 0..traces.ncols() {
            for (i, face) in skel.iter().enumerate() {
                if let FaceRole::Skeleton { cell, .. } = face.role {
                    rhs[(cell, j)] += traces[(i, j)] / face.weight();
                }
            }
        }
        self.dirichlet.solve_columns(&mut rhs);
        let mut out = Mat::<f64>::zeros(ns, traces.ncols());
        for j in 0..traces.ncols() {
            for (i, face) in skel.iter().enumerate() {
                if let FaceRole::Skeleton { cell, .. } = face.role {
                    out[(i, j)] = (rhs[(cell, j)] - traces[(i, j)]) / face.weight();
                }
            }
        }
        out
    }

    /// Solves with prescribed outward fluxes on the skeleton. The data must
    /// balance the source; the pressure is fixed by setting the first cell
    /// to zero.
    pub fn solve_neumann(&self, outward_flux: &[f64], source: &[f64]) -> LocalSolution {
        let mut rhs = source.to_vec();
        for (face, &w) in self.layout.skeleton_faces().iter().zip(outward_flux) {
            if let FaceRole::Skeleton { cell, .. } = face.role {
                rhs[cell] -= w;
            }
        }
        rhs[0] = 0.0;
        self.neumann.solve_in_place(&mut rhs);
        self.fluxes_from_pressure(rhs, None, Some(outward_flux))
    }

    fn fluxes_from_pressure(
        &self,
        pressure: Vec<f64>,
        trace: Option<&[f64]>,
        prescribed: Option<&[f64]>,
    ) -> LocalSolution {
        let face_flux = self
            .layout
            .faces
            .iter()
            .enumerate()
            .map(|(i, face)| match face.role {
                FaceRole::Interior { lower, upper } => {
                    (pressure[lower] - pressure[upper]) / face.weight()
                }
                FaceRole::Skeleton { cell, sign, .. } => {
                    let outward = match (trace, prescribed) {
                        (_, Some(w)) => w[i],
                        (Some(t), None) if self.layout.num_skeleton_faces() > 0 => {
                            (pressure[cell] - t[i]) / face.weight()
                        }
                        _ => 0.0,
                    };
                    sign * outward
                }
                FaceRole::Boundary { .. } => 0.0,
            })
            .collect();
        LocalSolution {
            face_flux,
            pressure,
        }
    }

    /// Block-outward fluxes on the skeleton faces, in block skeleton order.
    pub fn block_boundary_flux(&self, solution: &LocalSolution) -> Vec<f64> {
        self.layout
            .skeleton_faces()
            .iter()
            .zip(&solution.face_flux)
            .map(|(face, &u)| match face.role {
                FaceRole::Skeleton { sign, .. } => sign * u,
                _ => unreachable!("skeleton faces come first"),
            })
            .collect()
    }

    /// Hybrid multipliers (face pressures) on the faces inside the block,
    /// as `(global face, value)`.
    pub fn interior_face_traces<'a>(
        &'a self,
        solution: &'a LocalSolution,
    ) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.layout
            .faces
            .iter()
            .zip(&solution.face_flux)
            .filter_map(move |(face, &u)| match face.role {
                FaceRole::Interior { lower, .. } => {
                    Some((face.global, solution.pressure[lower] - u * face.half_weight[0]))
                }
                _ => None,
            })
    }

    /// Net outflow minus source per local cell; zero for a conservative
    /// solution.
    pub fn cell_imbalance(&self, solution: &LocalSolution, source: &[f64]) -> Vec<f64> {
        let mut div = vec![0.0; self.layout.num_cells()];
        for (face, &u) in self.layout.faces.iter().zip(&solution.face_flux) {
            match face.role {
                FaceRole::Interior { lower, upper } => {
                    div[lower] += u;
                    div[upper] -= u;
                }
                FaceRole::Skeleton { cell, sign, .. } => div[cell] += sign * u,
                FaceRole::Boundary { .. } => {}
            }
        }
        div.iter().zip(source).map(|(d, q)| d - q).collect()
    }
}
