//! Rock properties and two-phase fluid closures.

use std::ops::RangeInclusive;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::grid::StructuredGrid;

/// Saturations this far outside `[0, 1]` are treated as round-off and clamped.
pub const SATURATION_SLACK: f64 = 1e-12;

/// Porosity used when no porosity data is supplied.
pub const DEFAULT_POROSITY: f64 = 0.2;

/// Smallest porosity accepted from data files; lower values are raised.
pub const POROSITY_FLOOR: f64 = 1e-3;

/// Cell counts of the full SPE10 dataset (x, y, layers).
pub const SPE10_DIMS: [usize; 3] = [60, 220, 85];

/// SPE10 cell size in feet.
pub const SPE10_SPACING: [f64; 3] = [20.0, 10.0, 2.0];

/// Cellwise diagonal permeability and porosity.
#[derive(Debug, Clone, PartialEq)]
pub struct MediaField {
    dims: [usize; 3],
    perm: Vec<[f64; 3]>,
    porosity: Vec<f64>,
}

impl MediaField {
    /// Validates and wraps raw arrays. `perm` holds `(k_x, k_y, k_z)` per cell;
    /// 2D fields ignore `k_z`.
    pub fn new(dims: [usize; 3], perm: Vec<[f64; 3]>, porosity: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if perm.len() != n || porosity.len() != n {
            return Err(Error::InvalidArgument(format!(
                "media arrays have {} / {} entries for {n} cells",
                perm.len(),
                porosity.len()
            )));
        }
        if let Some(c) = perm
            .iter()
            .position(|k| k.iter().any(|&v| !(v > 0.0 && v.is_finite())))
        {
            return Err(Error::Data(format!(
                "non-positive permeability {:?} in cell {c}",
                perm[c]
            )));
        }
        if let Some(c) = porosity.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Data(format!(
                "porosity {} in cell {c} is outside (0, 1]",
                porosity[c]
            )));
        }
        Ok(Self {
            dims,
            perm,
            porosity,
        })
    }

    /// Isotropic field with constant porosity.
    pub fn from_scalar_perm(grid: &StructuredGrid, k: Vec<f64>, porosity: f64) -> Result<Self> {
        let n = grid.num_cells();
        Self::new(
            grid.cells_per_axis(),
            k.into_iter().map(|v| [v; 3]).collect(),
            vec![porosity; n],
        )
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn num_cells(&self) -> usize {
        self.perm.len()
    }

    /// Permeability of `cell` along `axis`.
    #[inline]
    pub fn perm(&self, cell: usize, axis: usize) -> f64 {
        self.perm[cell][axis]
    }

    pub fn perm_tensor(&self, cell: usize) -> [f64; 3] {
        self.perm[cell]
    }

    #[inline]
    pub fn porosity(&self, cell: usize) -> f64 {
        self.porosity[cell]
    }

    pub fn porosities(&self) -> &[f64] {
        &self.porosity
    }

    /// Replaces the porosity by a constant value.
    pub fn with_porosity(mut self, porosity: f64) -> Result<Self> {
        if !(porosity > 0.0 && porosity <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "porosity {porosity} is outside (0, 1]"
            )));
        }
        self.porosity.fill(porosity);
        Ok(self)
    }

    /// `log10` of `k_x`, for plotting.
    pub fn log10_kx(&self) -> Vec<f64> {
        self.perm.iter().map(|k| k[0].log10()).collect()
    }

    /// Checks that the field matches `grid`.
    pub fn check_grid(&self, grid: &StructuredGrid) -> Result<()> {
        if self.dims != grid.cells_per_axis() {
            return Err(Error::InvalidArgument(format!(
                "media dims {:?} do not match grid {:?}",
                self.dims,
                grid.cells_per_axis()
            )));
        }
        Ok(())
    }
}

/// The three reservoir models cut out of the SPE10 dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spe10Model {
    /// Bottom layer, 2D.
    Model1,
    /// Top 30 layers.
    Model2,
    /// Bottom 50 layers.
    Model3,
}

impl Spe10Model {
    /// Layers (1-based, inclusive) taken from the dataset.
    pub fn layers(self) -> RangeInclusive<usize> {
        match self {
            Spe10Model::Model1 => 85..=85,
            Spe10Model::Model2 => 1..=30,
            Spe10Model::Model3 => 36..=85,
        }
    }

    pub fn is_2d(self) -> bool {
        self == Spe10Model::Model1
    }

    pub fn grid(self) -> Result<StructuredGrid> {
        let [nx, ny, _] = SPE10_DIMS;
        let nz = self.layers().count();
        let [dx, dy, dz] = SPE10_SPACING;
        if self.is_2d() {
            StructuredGrid::new(&[nx, ny], &[dx, dy])
        } else {
            StructuredGrid::new(&[nx, ny, nz], &[dx, dy, dz])
        }
    }
}

/// Loads one of the SPE10 models from `spe_perm.dat`-style text data and an
/// optional `spe_phi.dat` porosity file.
pub fn load_spe10(perm_path: &Path, phi_path: Option<&Path>, model: Spe10Model) -> Result<MediaField> {
    load_layers(perm_path, phi_path, SPE10_DIMS, model.layers(), model.is_2d())
}

/// Reads a layered dataset with `full_dims` cells stored `k_x` block first,
/// then `k_y`, then `k_z`, each `x` fastest, and keeps `layers` (1-based).
pub fn load_layers(
    perm_path: &Path,
    phi_path: Option<&Path>,
    full_dims: [usize; 3],
    layers: RangeInclusive<usize>,
    two_d: bool,
) -> Result<MediaField> {
    let [nx, ny, nz] = full_dims;
    if *layers.start() == 0 || *layers.end() > nz || layers.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "layer range {layers:?} outside 1..={nz}"
        )));
    }
    if two_d && layers.clone().count() != 1 {
        return Err(Error::InvalidArgument("a 2D model takes exactly one layer".into()));
    }
    let per_layer = nx * ny;
    let total = per_layer * nz;

    let values = read_reals(perm_path, 3 * total)?;
    let keep = (layers.start() - 1) * per_layer..layers.end() * per_layer;
    let kept = keep.len();
    let mut perm = vec![[0.0; 3]; kept];
    for (axis, chunk) in values.chunks_exact(total).enumerate() {
        for (k, &v) in perm.iter_mut().zip(&chunk[keep.clone()]) {
            k[axis] = v;
        }
    }

    let mut porosity = match phi_path {
        Some(p) => read_reals(p, total)?[keep].to_vec(),
        None => vec![DEFAULT_POROSITY; kept],
    };
    // The SPE10 porosity file contains zeros, which would make those cells
    // inert and break the CFL bound.
    let mut floored = 0;
    for phi in porosity.iter_mut().filter(|phi| **phi < POROSITY_FLOOR) {
        *phi = POROSITY_FLOOR;
        floored += 1;
    }
    if floored > 0 {
        log::warn!("raised {floored} porosity values to {POROSITY_FLOOR}");
    }
    if let Some(c) = perm.iter().position(|k| k.iter().any(|&v| v <= 0.0)) {
        return Err(Error::Data(format!(
            "non-positive permeability {:?} in kept cell {c}",
            perm[c]
        )));
    }

    let dims = if two_d {
        [nx, ny, 1]
    } else {
        [nx, ny, layers.count()]
    };
    MediaField::new(dims, perm, porosity)
}

/// Writes `media` in the layout read by [`load_layers`]: `k_x` for every
/// cell, then `k_y`, then `k_z`, and the porosities to `phi_path`.
pub fn write_layers(media: &MediaField, perm_path: &Path, phi_path: &Path) -> Result<()> {
    let mut perm = String::new();
    for axis in 0..3 {
        for c in 0..media.num_cells() {
            perm.push_str(&media.perm(c, axis).to_string());
            perm.push(if (c + 1) % 6 == 0 { '\n' } else { ' ' });
        }
        perm.push('\n');
    }
    std::fs::write(perm_path, perm).map_err(|e| Error::io(perm_path, e))?;
    let phi: Vec<String> = media.porosities().iter().map(f64::to_string).collect();
    std::fs::write(phi_path, phi.join("\n") + "\n").map_err(|e| Error::io(phi_path, e))
}

fn read_reals(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values = text
        .split_ascii_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                message: format!("not a number: {tok:?}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected {expected} values, found {}", values.len()),
        });
    }
    Ok(values)
}

/// Redistributable stand-ins for the SPE10 fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    Uniform { k: f64 },
    /// Alternating bands of permeability 1 and `contrast` along the last axis.
    Layered { contrast: f64, bands: usize },
    /// Log-normal field with Gaussian-smoothed correlation.
    Lognormal { seed: u64, sigma: f64, correlation: f64 },
    /// Meandering high-permeability channels in a log-normal background.
    Channel { seed: u64 },
}

impl SynthKind {
    pub fn lognormal(seed: u64) -> Self {
        SynthKind::Lognormal {
            seed,
            sigma: 2.0,
            correlation: 3.0,
        }
    }
}

/// Generates a synthetic isotropic field on `grid` with the default porosity.
pub fn synth_media(kind: SynthKind, grid: &StructuredGrid) -> Result<MediaField> {
    let n = grid.num_cells();
    let k = match kind {
        SynthKind::Uniform { k } => vec![k; n],
        SynthKind::Layered { contrast, bands } => {
            let axis = grid.dim() - 1;
            let len = grid.cells_per_axis()[axis];
            let width = len.div_ceil(bands.max(1)).max(1);
            (0..n)
                .map(|c| {
                    if (grid.cell_coords(c)[axis] / width).is_multiple_of(2) {
                        1.0
                    } else {
                        contrast
                    }
                })
                .collect()
        }
        SynthKind::Lognormal {
            seed,
            sigma,
            correlation,
        } => {
            let g = gaussian_field(grid, seed, correlation);
            g.into_iter().map(|v| (sigma * v).exp()).collect()
        }
        SynthKind::Channel { seed } => channel_field(grid, seed),
    };
    MediaField::from_scalar_perm(grid, k, DEFAULT_POROSITY)
}

/// Unit-variance correlated Gaussian field (white noise smoothed by a
/// separable Gaussian kernel, then standardized).
fn gaussian_field(grid: &StructuredGrid, seed: u64, correlation: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.num_cells();
    let mut field: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    if correlation > 0.0 {
        let radius = (2.0 * correlation).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|d| (-0.5 * (d as f64 / correlation).powi(2)).exp())
            .collect();
        let cells = grid.cells_per_axis();
        for axis in 0..grid.dim() {
            let mut out = vec![0.0; n];
            for (c, o) in out.iter_mut().enumerate() {
                let ijk = grid.cell_coords(c);
                let mut acc = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    // reflect at the boundary
                    let mut p = ijk[axis] as isize + t as isize - radius;
                    let len = cells[axis] as isize;
                    if p < 0 {
                        p = -p - 1;
                    }
                    if p >= len {
                        p = 2 * len - p - 1;
                    }
                    let p = p.clamp(0, len - 1) as usize;
                    let mut q = ijk;
                    q[axis] = p;
                    acc += w * field[grid.cell_index(q)];
                }
                *o = acc;
            }
            field = out;
        }
    }
    let mean = field.iter().sum::<f64>() / n as f64;
    let var = field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    field.iter().map(|v| (v - mean) / sd).collect()
}

fn channel_field(grid: &StructuredGrid, seed: u64) -> Vec<f64> {
    let background = gaussian_field(grid, seed, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 1);
    let [nx, ny, nz] = grid.cells_per_axis();
    let unit = Uniform::new(0.0f64, 1.0).expect("valid range");

    // channels run along y and meander in x
    let count = (nx / 12).max(2);
    let channels: Vec<[f64; 5]> = (0..count)
        .map(|_| {
            let x0 = unit.sample(&mut rng) * nx as f64;
            let amp = (0.05 + 0.15 * unit.sample(&mut rng)) * nx as f64;
            let wavelength = (0.3 + 0.7 * unit.sample(&mut rng)) * ny as f64;
            let phase = unit.sample(&mut rng) * std::f64::consts::TAU;
            let width = 1.5 + 2.5 * unit.sample(&mut rng);
            [x0, amp, wavelength, phase, width]
        })
        .collect();

    (0..grid.num_cells())
        .map(|c| {
            let [i, j, k] = grid.cell_coords(c);
            let x = i as f64 + 0.5;
            let y = j as f64 + 0.5;
            let drift = if nz > 1 { k as f64 / nz as f64 } else { 0.0 };
            let in_channel = channels.iter().any(|&[x0, amp, wl, phase, width]| {
                let centre = x0 + amp * (std::f64::consts::TAU * y / wl + phase + drift).sin();
                (x - centre).abs() < 0.5 * width
            });
            let log_k = if in_channel {
                (1000.0f64).ln() + 0.5 * background[c]
            } else {
                background[c]
            };
            log_k.exp()
        })
        .collect()
}

/// Phase mobilities at one saturation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobility {
    pub water: f64,
    pub oil: f64,
    pub total: f64,
}

// the quadratic case sits in the transport inner loop
#[inline]
fn pow(x: f64, e: f64) -> f64 {
    if e == 2.0 {
        x * x
    } else if e == 1.0 {
        x
    } else {
        x.powf(e)
    }
}

/// Viscosities and Corey-type relative permeability exponents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidModel {
    pub mu_w: f64,
    pub mu_o: f64,
    pub exp_w: f64,
    pub exp_o: f64,
}

impl Default for FluidModel {
    fn default() -> Self {
        Self {
            mu_w: 1.0,
            mu_o: 5.0,
            exp_w: 2.0,
            exp_o: 2.0,
        }
    }
}

impl FluidModel {
    pub fn new(mu_w: f64, mu_o: f64) -> Result<Self> {
        Self {
            mu_w,
            mu_o,
            ..Self::default()
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.mu_w > 0.0 && self.mu_o > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "viscosities must be positive, got {} and {}",
                self.mu_w, self.mu_o
            )));
        }
        if !(self.exp_w >= 1.0 && self.exp_o >= 1.0) {
            return Err(Error::InvalidArgument(
                "relative permeability exponents must be at least 1".into(),
            ));
        }
        Ok(self)
    }

    fn check(s: f64) -> Result<f64> {
        if !(-SATURATION_SLACK..=1.0 + SATURATION_SLACK).contains(&s) {
            return Err(Error::InvalidArgument(format!("saturation {s} outside [0, 1]")));
        }
        Ok(s.clamp(0.0, 1.0))
    }

    pub fn mobility(&self, s: f64) -> Result<Mobility> {
        Ok(self.mobility_unchecked(Self::check(s)?))
    }

    pub fn fractional_flow(&self, s: f64) -> Result<f64> {
        Ok(self.fractional_flow_unchecked(Self::check(s)?))
    }

    #[inline]
    pub(crate) fn mobility_unchecked(&self, s: f64) -> Mobility {
        let water = pow(s, self.exp_w) / self.mu_w;
        let oil = pow(1.0 - s, self.exp_o) / self.mu_o;
        Mobility {
            water,
            oil,
            total: water + oil,
        }
    }

    #[inline]
    pub(crate) fn fractional_flow_unchecked(&self, s: f64) -> f64 {
        // both mobilities scaled by mu_w mu_o: one division instead of three
        let w = pow(s, self.exp_w) * self.mu_o;
        let o = pow(1.0 - s, self.exp_o) * self.mu_w;
        w / (w + o)
    }

    /// `d f_w / dS` from the closed-form mobility derivatives.
    pub fn fractional_flow_slope(&self, s: f64) -> f64 {
        let m = self.mobility_unchecked(s);
        let dw = self.exp_w * s.powf(self.exp_w - 1.0) / self.mu_w;
        let d_o = -self.exp_o * (1.0 - s).powf(self.exp_o - 1.0) / self.mu_o;
        (dw * m.oil - m.water * d_o) / (m.total * m.total)
    }

    /// Maximum of `|f_w'|` over 10,001 uniformly spaced saturations.
    pub fn max_fractional_flow_slope(&self) -> f64 {
        const SAMPLES: usize = 10_000;
        (0..=SAMPLES)
            .map(|i| self.fractional_flow_slope(i as f64 / SAMPLES as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Per-cell total mobility at the given saturations.
    pub fn total_mobility(&self, saturation: &[f64]) -> Vec<f64> {
        saturation
            .iter()
            .map(|&s| self.mobility_unchecked(s.clamp(0.0, 1.0)).total)
            .collect()
    }
}
