//! Cartesian fine grids and their coarse block partitions.
//!
//! Cells are numbered with `x` fastest, then `y`, then `z`. Faces are grouped
//! by normal axis; within one axis group they are numbered like the cells of a
//! grid that has one extra layer along that axis. Every face is oriented along
//! the positive axis, so a flux value is positive when fluid moves from the
//! lower cell to the upper cell.
//!
//! Two-dimensional grids are stored as a single layer of unit thickness
//! (`nz = 1`, `dz = 1`) and carry no `z` faces.

use std::ops::Range;

use crate::error::{Error, Result};

/// Marker stored in [`CoarsePartition`] for faces that are not on the skeleton.
const NOT_ON_SKELETON: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredGrid {
    dim: usize,
    cells: [usize; 3],
    spacing: [f64; 3],
    face_offsets: [usize; 4],
}

impl StructuredGrid {
    /// Builds a 2D or 3D grid. `dims` and `spacing` must have the same length.
    pub fn new(dims: &[usize], spacing: &[f64]) -> Result<Self> {
        let dim = dims.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!(
                "grid must be 2D or 3D, got {dim} axes"
            )));
        }
        if spacing.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "{dim} cell counts but {} spacings",
                spacing.len()
            )));
        }
        if let Some(a) = dims.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "axis {a} has zero cells"
            )));
        }
        if let Some(a) = spacing.iter().position(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "axis {a} has non-positive spacing {}",
                spacing[a]
            )));
        }

        let mut cells = [1; 3];
        let mut h = [1.0; 3];
        cells[..dim].copy_from_slice(dims);
        h[..dim].copy_from_slice(spacing);

        let mut face_offsets = [0; 4];
        for a in 0..3 {
            let count = if a < dim {
                let mut n = cells;
                n[a] += 1;
                n.iter().product()
            } else {
                0
            };
            face_offsets[a + 1] = face_offsets[a] + count;
        }

        Ok(Self {
            dim,
            cells,
            spacing: h,
            face_offsets,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cell counts per axis; the `z` entry is 1 for 2D grids.
    pub fn cells_per_axis(&self) -> [usize; 3] {
        self.cells
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn num_cells(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn num_faces(&self) -> usize {
        self.face_offsets[3]
    }

    pub fn num_faces_along(&self, axis: usize) -> usize {
        self.face_offsets[axis + 1] - self.face_offsets[axis]
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Area of a face whose normal is `axis`.
    pub fn face_area(&self, axis: usize) -> f64 {
        self.cell_volume() / self.spacing[axis]
    }

    pub fn cell_index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.cells[0] * (ijk[1] + self.cells[1] * ijk[2])
    }

    pub fn cell_coords(&self, cell: usize) -> [usize; 3] {
        let i = cell % self.cells[0];
        let rest = cell / self.cells[0];
        [i, rest % self.cells[1], rest / self.cells[1]]
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 3] {
        let ijk = self.cell_coords(cell);
        std::array::from_fn(|a| (ijk[a] as f64 + 0.5) * self.spacing[a])
    }

    /// Face with normal `axis` at lattice position `ijk`, where `ijk[axis]`
    /// ranges over `0..=cells[axis]`.
    pub fn face_index(&self, axis: usize, ijk: [usize; 3]) -> usize {
        let mut n = self.cells;
        n[axis] += 1;
        self.face_offsets[axis] + ijk[0] + n[0] * (ijk[1] + n[1] * ijk[2])
    }

    pub fn face_axis(&self, face: usize) -> usize {
        (0..3)
            .find(|&a| face < self.face_offsets[a + 1])
            .expect("face index out of range")
    }

    pub fn face_coords(&self, face: usize) -> (usize, [usize; 3]) {
        let axis = self.face_axis(face);
        let mut n = self.cells;
        n[axis] += 1;
        let local = face - self.face_offsets[axis];
        let i = local % n[0];
        let rest = local / n[0];
        (axis, [i, rest % n[1], rest / n[1]])
    }

    /// The `[lower, upper]` cells of a face; boundary faces miss one side.
    pub fn face_cells(&self, face: usize) -> [Option<usize>; 2] {
        let (axis, ijk) = self.face_coords(face);
        let lower = (ijk[axis] > 0).then(|| {
            let mut c = ijk;
            c[axis] -= 1;
            self.cell_index(c)
        });
        let upper = (ijk[axis] < self.cells[axis]).then(|| self.cell_index(ijk));
        [lower, upper]
    }

    pub fn is_interior_face(&self, face: usize) -> bool {
        let [l, u] = self.face_cells(face);
        l.is_some() && u.is_some()
    }

    /// Face of `cell` on its lower (`side = 0`) or upper (`side = 1`) end of `axis`.
    pub fn cell_face(&self, cell: usize, axis: usize, side: usize) -> usize {
        let mut ijk = self.cell_coords(cell);
        ijk[axis] += side;
        self.face_index(axis, ijk)
    }

    /// All faces of a cell with the sign that turns the global orientation
    /// into the cell-outward one.
    pub fn cell_faces(&self, cell: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.dim).flat_map(move |a| {
            [
                (self.cell_face(cell, a, 0), -1.0),
                (self.cell_face(cell, a, 1), 1.0),
            ]
        })
    }
}

/// One coarse interface: the shared face of two adjacent blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Interface {
    pub axis: usize,
    /// `[lower, upper]` block along `axis`.
    pub blocks: [usize; 2],
    /// Fine faces, first tangential axis fastest.
    pub faces: Vec<usize>,
    /// Fine-face counts along the two tangential axes (second is 1 in 2D).
    pub extent: [usize; 2],
    /// Area of each fine face on this interface.
    pub face_area: f64,
}

impl Interface {
    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Outward sign of the interface normal seen from `block`.
    pub fn outward_sign(&self, block: usize) -> f64 {
        if block == self.blocks[0] {
            1.0
        } else {
            debug_assert_eq!(block, self.blocks[1]);
            -1.0
        }
    }
}

/// Local coordinates of the fine-face centroids on one interface.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceCoordinates {
    pub xi: Vec<f64>,
    /// Present only for 3D interfaces.
    pub eta: Option<Vec<f64>>,
}

/// Non-overlapping coarse blocks of `ratio^dim` fine cells each.
#[derive(Debug, Clone)]
pub struct CoarsePartition {
    dim: usize,
    ratio: [usize; 3],
    blocks_per_axis: [usize; 3],
    block_of_cell: Vec<usize>,
    interfaces: Vec<Interface>,
    face_interface: Vec<u32>,
    face_slot: Vec<u32>,
    block_interfaces: Vec<Vec<usize>>,
}

impl CoarsePartition {
    /// Partitions `grid` into blocks of `n` fine cells per active axis.
    pub fn new(grid: &StructuredGrid, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("coarsening ratio must be positive".into()));
        }
        let cells = grid.cells_per_axis();
        let mut ratio = [1; 3];
        for (a, r) in ratio.iter_mut().enumerate().take(grid.dim()) {
            if !cells[a].is_multiple_of(n) {
                return Err(Error::InvalidArgument(format!(
                    "axis {a} has {} cells, not divisible by coarsening ratio {n}",
                    cells[a]
                )));
            }
            *r = n;
        }
        let blocks_per_axis: [usize; 3] = std::array::from_fn(|a| cells[a] / ratio[a]);
        let block_index =
            |b: [usize; 3]| b[0] + blocks_per_axis[0] * (b[1] + blocks_per_axis[1] * b[2]);

        let block_of_cell = (0..grid.num_cells())
            .map(|c| {
                let ijk = grid.cell_coords(c);
                block_index(std::array::from_fn(|a| ijk[a] / ratio[a]))
            })
            .collect();

        let num_blocks: usize = blocks_per_axis.iter().product();
        let mut interfaces = Vec::new();
        let mut face_interface = vec![NOT_ON_SKELETON; grid.num_faces()];
        let mut face_slot = vec![NOT_ON_SKELETON; grid.num_faces()];
        let mut block_interfaces = vec![Vec::new(); num_blocks];

        for axis in 0..grid.dim() {
            let tangential: Vec<usize> = (0..grid.dim()).filter(|&b| b != axis).collect();
            for bk in 0..blocks_per_axis[2] {
                for bj in 0..blocks_per_axis[1] {
                    for bi in 0..blocks_per_axis[0] {
                        let lower = [bi, bj, bk];
                        if lower[axis] + 1 >= blocks_per_axis[axis] {
                            continue;
                        }
                        let mut upper = lower;
                        upper[axis] += 1;

                        let t0 = tangential[0];
                        let t1 = tangential.get(1).copied();
                        let m0 = ratio[t0];
                        let m1 = t1.map_or(1, |t| ratio[t]);
                        let mut faces = Vec::with_capacity(m0 * m1);
                        for k1 in 0..m1 {
                            for k0 in 0..m0 {
                                let mut ijk = [0; 3];
                                ijk[axis] = upper[axis] * ratio[axis];
                                ijk[t0] = lower[t0] * ratio[t0] + k0;
                                if let Some(t1) = t1 {
                                    ijk[t1] = lower[t1] * ratio[t1] + k1;
                                }
                                faces.push(grid.face_index(axis, ijk));
                            }
                        }

                        let id = interfaces.len();
                        for (slot, &f) in faces.iter().enumerate() {
                            face_interface[f] = id as u32;
                            face_slot[f] = slot as u32;
                        }
                        let blocks = [block_index(lower), block_index(upper)];
                        block_interfaces[blocks[0]].push(id);
                        block_interfaces[blocks[1]].push(id);
                        interfaces.push(Interface {
                            axis,
                            blocks,
                            faces,
                            extent: [m0, m1],
                            face_area: grid.face_area(axis),
                        });
                    }
                }
            }
        }

        Ok(Self {
            dim: grid.dim(),
            ratio,
            blocks_per_axis,
            block_of_cell,
            interfaces,
            face_interface,
            face_slot,
            block_interfaces,
        })
    }

    pub fn ratio(&self) -> [usize; 3] {
        self.ratio
    }

    pub fn blocks_per_axis(&self) -> [usize; 3] {
        self.blocks_per_axis
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks_per_axis.iter().product()
    }

    pub fn block_of_cell(&self, cell: usize) -> usize {
        self.block_of_cell[cell]
    }

    pub fn interfaces(&self) -> &[Interface] {
        &self.interfaces
    }

    pub fn interface(&self, id: usize) -> &Interface {
        &self.interfaces[id]
    }

    /// Interfaces touching `block`, in interface order.
    pub fn block_interfaces(&self, block: usize) -> &[usize] {
        &self.block_interfaces[block]
    }

    /// `(interface, slot)` of a fine face lying on the coarse skeleton.
    pub fn skeleton_slot(&self, face: usize) -> Option<(usize, usize)> {
        let id = self.face_interface[face];
        (id != NOT_ON_SKELETON).then(|| (id as usize, self.face_slot[face] as usize))
    }

    /// Fine-cell index ranges covered by `block`.
    pub fn block_ranges(&self, block: usize) -> [Range<usize>; 3] {
        let b0 = block % self.blocks_per_axis[0];
        let rest = block / self.blocks_per_axis[0];
        let b = [b0, rest % self.blocks_per_axis[1], rest / self.blocks_per_axis[1]];
        std::array::from_fn(|a| b[a] * self.ratio[a]..(b[a] + 1) * self.ratio[a])
    }

    /// Cells of `block`, `x` fastest.
    pub fn block_cells(&self, grid: &StructuredGrid, block: usize) -> Vec<usize> {
        let [ri, rj, rk] = self.block_ranges(block);
        let mut cells = Vec::with_capacity(ri.len() * rj.len() * rk.len());
        for k in rk {
            for j in rj.clone() {
                for i in ri.clone() {
                    cells.push(grid.cell_index([i, j, k]));
                }
            }
        }
        cells
    }

    /// Number of fine faces on the skeleton (sum over interfaces).
    pub fn num_skeleton_faces(&self) -> usize {
        self.interfaces.iter().map(Interface::len).sum()
    }

    /// Centroid coordinates of the fine faces of one interface in `[0, 1]`.
    pub fn interface_trace_coordinates(&self, id: usize) -> TraceCoordinates {
        let iface = &self.interfaces[id];
        let [m0, m1] = iface.extent;
        let mut xi = Vec::with_capacity(iface.len());
        let mut eta = Vec::with_capacity(iface.len());
        for k1 in 0..m1 {
            for k0 in 0..m0 {
                xi.push((k0 as f64 + 0.5) / m0 as f64);
                eta.push((k1 as f64 + 0.5) / m1 as f64);
            }
        }
        TraceCoordinates {
            xi,
            eta: (self.dim == 3).then_some(eta),
        }
    }
}
