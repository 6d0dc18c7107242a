//! A quick invariant suite on a small instance, behind `porous-mortar
//! validate`.

use crate::driver::{run, MediaSource, SimConfig, SolverMode, SyntheticField};
use crate::error::Result;
use crate::grid::{CoarsePartition, StructuredGrid};
use crate::media::{synth_media, FluidModel, SynthKind};
use crate::mortar::{MortarRecipe, MortarSpace, DEFAULT_DROP_TOL};
use crate::pressure::{
    assemble_interface_system, fine_solve, weak_continuity_residuals, BlockLayouts, FlowSolution,
    MultiscaleSolve,
};
use crate::transport::{make_wells, Completion, WellLayout};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, limit: f64) -> Check {
    Check {
        name,
        passed: value <= limit,
        detail: format!("{value:.3e} (limit {limit:.0e})"),
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn relative_difference(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let norm: f64 = b.iter().map(|y| y * y).sum();
    (diff / norm.max(f64::MIN_POSITIVE)).sqrt()
}

/// Runs the suite on a `size x size` lognormal field with `size/4` blocks
/// per axis.
pub fn invariant_suite(size: usize, seed: u64) -> Result<Vec<Check>> {
    let grid = StructuredGrid::new(&[size, size], &[1.0, 1.0])?;
    let media = synth_media(SynthKind::lognormal(seed), &grid)?;
    let partition = CoarsePartition::new(&grid, size / 4)?;
    let wells = make_wells(WellLayout::TypeI, &grid, 1.0, Completion::MidLayer)?;
    let q = wells.source_vector(grid.num_cells());
    let fluid = FluidModel::default();
    let saturation: Vec<f64> = (0..grid.num_cells())
        .map(|c| (grid.cell_center(c)[0] / size as f64).min(1.0))
        .collect();
    let mobility = fluid.total_mobility(&saturation);
    let mut checks = Vec::new();

    let fine = fine_solve(&grid, &media, &mobility, &q)?;
    let scale = max_abs(&fine.face_flux);
    checks.push(check(
        "fine cell balance",
        max_abs(&fine.cell_imbalance(&grid, &q)) / scale,
        1e-10,
    ));

    let layouts = BlockLayouts::new(&grid, &partition)?;
    let blocks = layouts.assemble(&grid, &media, &mobility, 0)?;
    let solve = |space: &MortarSpace| -> Result<FlowSolution> {
        MultiscaleSolve {
            grid: &grid,
            partition: &partition,
            space,
            blocks: &blocks,
            source: &q,
        }
        .run()
    };

    let space = MortarSpace::build(&partition, MortarRecipe::polynomial(1), None, DEFAULT_DROP_TOL, 0)?;
    let system = assemble_interface_system(&space, &blocks, &q);
    let norm = system.frobenius_norm();
    checks.push(check("interface matrix asymmetry", system.asymmetry(), 1e-10));
    checks.push(check(
        "interface matrix negative eigenvalue",
        (-system.min_eigenvalue()? / norm).max(0.0),
        1e-8,
    ));

    let ms = solve(&space)?;
    let sides = ms.skeleton_sides.as_ref().expect("multiscale solution");
    checks.push(check(
        "multiscale cell balance",
        max_abs(&ms.cell_imbalance(&grid, &q)) / scale,
        1e-10,
    ));
    checks.push(check(
        "weak flux continuity",
        max_abs(&weak_continuity_residuals(&space, sides)) / sides.max_abs(),
        1e-8,
    ));

    let full = MortarSpace::build(&partition, MortarRecipe::full_trace(), None, DEFAULT_DROP_TOL, 0)?;
    let oracle = solve(&full)?;
    checks.push(check(
        "full-trace flux equals fine flux",
        relative_difference(&oracle.face_flux, &fine.face_flux),
        1e-8,
    ));
    checks.push(check(
        "full-trace pressure equals fine pressure",
        relative_difference(&oracle.pressure, &fine.pressure),
        1e-8,
    ));

    let config = SimConfig {
        media: MediaSource::Synthetic {
            field: SyntheticField::Lognormal {
                sigma: 2.0,
                correlation: 3.0,
            },
            dims: vec![size, size],
            spacing: vec![1.0, 1.0],
        },
        seed,
        coarsening: size / 4,
        total_time: 400.0,
        outer_interval: 50.0,
        ..SimConfig::default()
    };
    let result = run(&config)?;
    let mass = result.steps.iter().map(|s| s.max_mass_error).fold(0.0, f64::max);
    checks.push(check("transport mass balance", mass, 1e-12));
    let bounded = result
        .steps
        .iter()
        .all(|s| s.saturation.iter().all(|v| (0.0..=1.0).contains(v)) && (0.0..=1.0).contains(&s.watercut));
    checks.push(Check {
        name: "saturation and watercut in [0, 1]",
        passed: bounded,
        detail: String::new(),
    });
    let dynamic = result.steps[0].multiscale_input == result.initial_traces
        && result
            .steps
            .windows(2)
            .all(|w| w[1].multiscale_input == w[0].trace_cache);
    checks.push(Check {
        name: "multiscale vector follows previous interface solution",
        passed: dynamic,
        detail: String::new(),
    });
    let reference = run(&SimConfig {
        mode: SolverMode::Fine,
        ..config
    })?;
    let e_s = result.error_against(&reference)?;
    checks.push(Check {
        name: "saturation error against fine reference",
        passed: e_s.average.is_finite(),
        detail: format!("average e_S {:.4}", e_s.average),
    });
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_small_instance() {
        let checks = invariant_suite(16, 3).unwrap();
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
