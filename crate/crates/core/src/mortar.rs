//! Coarse mortar spaces on the interface skeleton.
//!
//! A mortar function on one interface is stored by its values on the fine
//! faces of that interface (piecewise constant per fine face). The pairing
//! with a face flux is then the plain dot product of trace values and total
//! face fluxes, and the trace inner product is the area-weighted dot product.
//!
//! The local-global space on an interface consists of low-order polynomials
//! plus one vector carrying global information: the previous interface
//! solution restricted to that interface. Because that vector changes from
//! one outer step to the next, so does the space.

use crate::error::{Error, Result};
use crate::grid::CoarsePartition;

/// Relative residual below which a vector counts as linearly dependent.
pub const DEFAULT_DROP_TOL: f64 = 1e-10;

/// Which functions span each local mortar space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MortarRecipe {
    /// Polynomial order `r` (0 or 1), or `None` for no polynomials.
    pub polynomial_order: Option<u8>,
    /// Add the restriction of the previous interface solution.
    pub multiscale: bool,
    /// Use every fine-face indicator instead (reproduces the fine solver).
    pub full_trace: bool,
}

impl MortarRecipe {
    pub fn polynomial_plus_multiscale(r: u8) -> Self {
        Self {
            polynomial_order: Some(r),
            multiscale: true,
            full_trace: false,
        }
    }

    pub fn multiscale_only() -> Self {
        Self {
            polynomial_order: None,
            multiscale: true,
            full_trace: false,
        }
    }

    pub fn polynomial(r: u8) -> Self {
        Self {
            polynomial_order: Some(r),
            multiscale: false,
            full_trace: false,
        }
    }

    pub fn full_trace() -> Self {
        Self {
            polynomial_order: None,
            multiscale: false,
            full_trace: true,
        }
    }

    /// Intended basis count per interface before dependent vectors are
    /// dropped (`None` for the full trace space).
    pub fn nominal_count(&self, dim: usize) -> Option<usize> {
        if self.full_trace {
            return None;
        }
        let poly = match self.polynomial_order {
            None => 0,
            Some(0) => 1,
            Some(_) => dim,
        };
        Some(poly + usize::from(self.multiscale))
    }

    /// Short label in the style `P0+multiscale`.
    pub fn label(&self) -> String {
        if self.full_trace {
            return "fine-trace".into();
        }
        match (self.polynomial_order, self.multiscale) {
            (Some(r), true) => format!("P{r}+multiscale"),
            (Some(r), false) => format!("P{r}"),
            (None, true) => "multiscale".into(),
            (None, false) => "empty".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.polynomial_order {
            if r > 1 {
                return Err(Error::InvalidArgument(format!(
                    "polynomial order {r} is not supported (use 0 or 1)"
                )));
            }
        }
        if self.full_trace && (self.polynomial_order.is_some() || self.multiscale) {
            return Err(Error::InvalidArgument(
                "the full trace space cannot be combined with other bases".into(),
            ));
        }
        Ok(())
    }
}

/// Trace values of an interface function, one vector per interface.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceTraces(pub Vec<Vec<f64>>);

impl InterfaceTraces {
    pub fn zeros(partition: &CoarsePartition) -> Self {
        Self(partition.interfaces().iter().map(|i| vec![0.0; i.len()]).collect())
    }

    pub fn interface(&self, id: usize) -> &[f64] {
        &self.0[id]
    }

    /// Adds `shift` to every trace value.
    pub fn shift(&mut self, shift: f64) {
        self.0.iter_mut().flatten().for_each(|v| *v += shift);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Polynomial,
    Multiscale,
    FineFace,
}

/// Orthonormal basis of one local mortar space.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceBasis {
    pub vectors: Vec<Vec<f64>>,
    pub kinds: Vec<BasisKind>,
}

impl InterfaceBasis {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// `P_r` on one interface evaluated at its fine-face centroids:
/// `{1}` for `r = 0`, `{1, xi - 1/2[, eta - 1/2]}` for `r = 1`.
pub fn build_polynomial_basis(partition: &CoarsePartition, interface: usize, r: u8) -> Result<Vec<Vec<f64>>> {
    if r > 1 {
        return Err(Error::InvalidArgument(format!("polynomial order {r} is not supported")));
    }
    let coords = partition.interface_trace_coordinates(interface);
    let mut basis = vec![vec![1.0; coords.xi.len()]];
    if r == 1 {
        basis.push(coords.xi.iter().map(|x| x - 0.5).collect());
        if let Some(eta) = coords.eta {
            basis.push(eta.iter().map(|y| y - 0.5).collect());
        }
    }
    Ok(basis)
}

/// The local-global vector of `interface`: the previous interface solution
/// restricted to it.
pub fn build_multiscale_basis(
    partition: &CoarsePartition,
    interface: usize,
    previous: Option<&InterfaceTraces>,
) -> Result<Vec<f64>> {
    let previous = previous.ok_or_else(|| {
        Error::InvalidState("no previous interface solution; run the fine initialization first".into())
    })?;
    let expected = partition.interface(interface).len();
    match previous.0.get(interface) {
        Some(v) if v.len() == expected => Ok(v.clone()),
        Some(v) => Err(Error::InvalidState(format!(
            "previous trace on interface {interface} has {} values, expected {expected}",
            v.len()
        ))),
        None => Err(Error::InvalidState(format!(
            "previous trace is missing interface {interface}"
        ))),
    }
}

/// Modified Gram-Schmidt under the area-weighted trace inner product.
/// Vectors are processed in order, so earlier (polynomial) vectors always win
/// over later ones; a vector whose residual falls below `drop_tol` times its
/// original norm is removed.
pub fn orthonormalize(
    raw: Vec<(Vec<f64>, BasisKind)>,
    face_area: f64,
    drop_tol: f64,
) -> InterfaceBasis {
    let dot = |a: &[f64], b: &[f64]| face_area * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    let mut kinds = Vec::new();
    for (mut v, kind) in raw {
        let norm0 = dot(&v, &v).sqrt();
        if !(norm0 > 0.0 && norm0.is_finite()) {
            continue;
        }
        // two passes keep the result orthogonal to round-off
        for _ in 0..2 {
            for q in &vectors {
                let c = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm < drop_tol * norm0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        vectors.push(v);
        kinds.push(kind);
    }
    InterfaceBasis { vectors, kinds }
}

/// The coarse mortar space `M_H` at one outer step.
#[derive(Debug, Clone, PartialEq)]
pub struct MortarSpace {
    recipe: MortarRecipe,
    bases: Vec<InterfaceBasis>,
    offsets: Vec<usize>,
    generation: usize,
    /// Multiscale vectors before orthonormalization, kept for inspection.
    multiscale_inputs: Option<InterfaceTraces>,
}

impl MortarSpace {
    /// Builds the space for every interface of `partition`. `previous` is
    /// required when the recipe includes the multiscale vector.
    pub fn build(
        partition: &CoarsePartition,
        recipe: MortarRecipe,
        previous: Option<&InterfaceTraces>,
        drop_tol: f64,
        generation: usize,
    ) -> Result<Self> {
        recipe.validate()?;
        let mut bases = Vec::with_capacity(partition.interfaces().len());
        let mut inputs = recipe.multiscale.then(Vec::new);
        for (id, iface) in partition.interfaces().iter().enumerate() {
            let mut raw = Vec::new();
            if recipe.full_trace {
                for i in 0..iface.len() {
                    let mut e = vec![0.0; iface.len()];
                    e[i] = 1.0;
                    raw.push((e, BasisKind::FineFace));
                }
            }
            if let Some(r) = recipe.polynomial_order {
                raw.extend(
                    build_polynomial_basis(partition, id, r)?
                        .into_iter()
                        .map(|v| (v, BasisKind::Polynomial)),
                );
            }
            if let Some(inputs) = inputs.as_mut() {
                let v = build_multiscale_basis(partition, id, previous)?;
                inputs.push(v.clone());
                raw.push((v, BasisKind::Multiscale));
            }
            bases.push(orthonormalize(raw, iface.face_area, drop_tol));
        }
        let mut offsets = Vec::with_capacity(bases.len() + 1);
        offsets.push(0);
        for b in &bases {
            offsets.push(offsets.last().unwrap() + b.len());
        }
        Ok(Self {
            recipe,
            bases,
            offsets,
            generation,
            multiscale_inputs: inputs.map(InterfaceTraces),
        })
    }

    pub fn recipe(&self) -> MortarRecipe {
        self.recipe
    }

    /// Total number of mortar unknowns after dropping.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn basis(&self, interface: usize) -> &InterfaceBasis {
        &self.bases[interface]
    }

    /// Global index of the first unknown of `interface`.
    pub fn offset(&self, interface: usize) -> usize {
        self.offsets[interface]
    }

    /// Maps a global unknown to `(interface, local basis index)`.
    pub fn dof(&self, global: usize) -> (usize, usize) {
        let i = self.offsets.partition_point(|&o| o <= global) - 1;
        (i, global - self.offsets[i])
    }

    pub fn multiscale_inputs(&self) -> Option<&InterfaceTraces> {
        self.multiscale_inputs.as_ref()
    }

    /// Trace values of the mortar function with the given coefficients.
    pub fn evaluate(&self, coefficients: &[f64]) -> InterfaceTraces {
        InterfaceTraces(
            self.bases
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let n = b.vectors.first().map_or(0, Vec::len);
                    let mut out = vec![0.0; n];
                    for (v, &c) in b.vectors.iter().zip(&coefficients[self.offsets[i]..]) {
                        out.iter_mut().zip(v).for_each(|(o, x)| *o += c * x);
                    }
                    out
                })
                .collect(),
        )
    }
}

/// Interface unknowns `Lambda_H` and their trace values.
#[derive(Debug, Clone, PartialEq)]
pub struct MortarSolution {
    pub coefficients: Vec<f64>,
    pub traces: InterfaceTraces,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::StructuredGrid;

    fn edge_partition(faces: usize) -> CoarsePartition {
        let grid = StructuredGrid::new(&[2 * faces, faces], &[1.0, 1.0]).unwrap();
        CoarsePartition::new(&grid, faces).unwrap()
    }

    #[test]
    fn polynomial_bases() {
        let p = edge_partition(4);
        assert_eq!(build_polynomial_basis(&p, 0, 0).unwrap(), vec![vec![1.0; 4]]);
        let b = build_polynomial_basis(&p, 0, 1).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], vec![-0.375, -0.125, 0.125, 0.375]);
        assert!(build_polynomial_basis(&p, 0, 2).is_err());

        let grid = StructuredGrid::new(&[10, 5, 5], &[1.0; 3]).unwrap();
        let p3 = CoarsePartition::new(&grid, 5).unwrap();
        assert_eq!(build_polynomial_basis(&p3, 0, 1).unwrap().len(), 3);
    }

    #[test]
    fn nominal_counts() {
        assert_eq!(MortarRecipe::polynomial_plus_multiscale(1).nominal_count(3), Some(4));
        assert_eq!(MortarRecipe::polynomial_plus_multiscale(0).nominal_count(3), Some(2));
        assert_eq!(MortarRecipe::polynomial_plus_multiscale(1).nominal_count(2), Some(3));
        assert_eq!(MortarRecipe::multiscale_only().nominal_count(2), Some(1));
    }

    #[test]
    fn duplicate_constant_is_dropped() {
        let b = orthonormalize(
            vec![(vec![1.0, 1.0], BasisKind::Polynomial), (vec![1.0, 1.0], BasisKind::Multiscale)],
            1.0,
            DEFAULT_DROP_TOL,
        );
        assert_eq!(b.len(), 1);
        let s = 0.5f64.sqrt();
        assert!((b.vectors[0][0] - s).abs() < 1e-15 && (b.vectors[0][1] - s).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_pair_keeps_directions() {
        // {1, xi - 1/2} on a two-face edge
        let b = orthonormalize(
            vec![(vec![1.0, 1.0], BasisKind::Polynomial), (vec![-0.25, 0.25], BasisKind::Polynomial)],
            1.0,
            DEFAULT_DROP_TOL,
        );
        assert_eq!(b.len(), 2);
        let s = 0.5f64.sqrt();
        assert!((b.vectors[1][0] + s).abs() < 1e-15 && (b.vectors[1][1] - s).abs() < 1e-15);
    }

    #[test]
    fn nearly_constant_multiscale_vector_is_dropped() {
        let ms: Vec<f64> = (0..10).map(|i| 1.0 + 1e-14 * ((i * 7919) % 13) as f64).collect();
        let b = orthonormalize(
            vec![(vec![1.0; 10], BasisKind::Polynomial), (ms, BasisKind::Multiscale)],
            1.0,
            1e-10,
        );
        assert_eq!(b.kinds, vec![BasisKind::Polynomial]);
    }

    #[test]
    fn multiscale_needs_previous_traces() {
        let p = edge_partition(3);
        assert!(matches!(
            build_multiscale_basis(&p, 0, None),
            Err(Error::InvalidState(_))
        ));
        let prev = InterfaceTraces(vec![vec![1.0, 2.0, 4.0]]);
        assert_eq!(build_multiscale_basis(&p, 0, Some(&prev)).unwrap(), vec![1.0, 2.0, 4.0]);
        let short = InterfaceTraces(vec![vec![1.0]]);
        assert!(build_multiscale_basis(&p, 0, Some(&short)).is_err());
    }

    #[test]
    fn space_offsets_and_evaluation() {
        let p = edge_partition(4);
        let prev = InterfaceTraces(vec![vec![0.0, 1.0, 4.0, 9.0]]);
        let space = MortarSpace::build(
            &p,
            MortarRecipe::polynomial_plus_multiscale(0),
            Some(&prev),
            DEFAULT_DROP_TOL,
            3,
        )
        .unwrap();
        assert_eq!(space.dim(), 2);
        assert_eq!(space.dof(1), (0, 1));
        assert_eq!(space.multiscale_inputs().unwrap(), &prev);
        // the previous trace lies in the span, so it is reproduced exactly
        let b = space.basis(0);
        let coeffs: Vec<f64> = b
            .vectors
            .iter()
            .map(|v| v.iter().zip(&prev.0[0]).map(|(a, c)| a * c).sum())
            .collect();
        let back = space.evaluate(&coeffs);
        for (x, y) in back.0[0].iter().zip(&prev.0[0]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn full_trace_space_has_one_unknown_per_face() {
        let p = edge_partition(5);
        let space = MortarSpace::build(&p, MortarRecipe::full_trace(), None, DEFAULT_DROP_TOL, 0).unwrap();
        assert_eq!(space.dim(), p.num_skeleton_faces());
    }
}
