use porous_mortar::driver::{run_problem, skeleton_traces, MediaSource, SimConfig, SolverMode, SyntheticField};
use porous_mortar::grid::{CoarsePartition, StructuredGrid};
use porous_mortar::media::{synth_media, FluidModel, SynthKind};
use porous_mortar::mortar::{MortarRecipe, MortarSpace, DEFAULT_DROP_TOL};
use porous_mortar::pressure::{fine_solve, weak_continuity_residuals, BlockLayouts, MultiscaleSolve};
use porous_mortar::transport::{make_wells, Completion, WellLayout};

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (d / b.iter().map(|y| y * y).sum::<f64>()).sqrt()
}

#[test]
fn full_trace_mortar_reproduces_fine_solve_in_3d() {
    let grid = StructuredGrid::new(&[12, 12, 6], &[1.0, 2.0, 0.5]).unwrap();
    let media = synth_media(SynthKind::lognormal(8), &grid).unwrap();
    let partition = CoarsePartition::new(&grid, 3).unwrap();
    let q = make_wells(WellLayout::TypeII, &grid, 2.0, Completion::FullColumn)
        .unwrap()
        .source_vector(grid.num_cells());
    let s: Vec<f64> = (0..grid.num_cells()).map(|c| (c % 7) as f64 / 7.0).collect();
    let mobility = FluidModel::default().total_mobility(&s);
    let fine = fine_solve(&grid, &media, &mobility, &q).unwrap();

    let layouts = BlockLayouts::new(&grid, &partition).unwrap();
    let blocks = layouts.assemble(&grid, &media, &mobility, 0).unwrap();
    let traces = skeleton_traces(&partition, &fine);
    for recipe in [MortarRecipe::full_trace(), MortarRecipe::polynomial_plus_multiscale(1)] {
        let space = MortarSpace::build(&partition, recipe, Some(&traces), DEFAULT_DROP_TOL, 1).unwrap();
        let flow = MultiscaleSolve {
            grid: &grid,
            partition: &partition,
            space: &space,
            blocks: &blocks,
            source: &q,
        }
        .run()
        .unwrap();
        let sides = flow.skeleton_sides.as_ref().unwrap();
        let weak = weak_continuity_residuals(&space, sides);
        assert!(weak.iter().all(|r| r.abs() <= 1e-8 * sides.max_abs()));
        let imbalance = flow.cell_imbalance(&grid, &q);
        assert!(imbalance.iter().all(|r| r.abs() <= 1e-10 * 2.0));
        if recipe.full_trace {
            assert!(rel(&flow.face_flux, &fine.face_flux) < 1e-8);
            assert!(rel(&flow.pressure, &fine.pressure) < 1e-8);
        } else {
            // the previous traces are the exact ones, so the enriched space
            // contains the fine skeleton pressure
            assert!(rel(&flow.face_flux, &fine.face_flux) < 1e-8);
        }
    }
}

#[test]
fn short_3d_run_tracks_reference() {
    let config = SimConfig {
        media: MediaSource::Synthetic {
            field: SyntheticField::Layered {
                contrast: 100.0,
                bands: 3,
            },
            dims: vec![12, 12, 4],
            spacing: vec![10.0, 10.0, 2.0],
        },
        coarsening: 4,
        mortar: MortarRecipe::polynomial_plus_multiscale(0),
        total_time: 300.0,
        outer_interval: 50.0,
        ..SimConfig::default()
    };
    let problem = config.build_problem().unwrap();
    let ms = run_problem(&config, &problem).unwrap();
    let fine = run_problem(
        &SimConfig {
            mode: SolverMode::Fine,
            ..config.clone()
        },
        &problem,
    )
    .unwrap();
    assert_eq!(ms.steps.len(), 6);
    let e = ms.error_against(&fine).unwrap();
    assert!(e.average < 0.1, "{}", e.average);
    for step in &ms.steps {
        assert!(step.max_mass_error <= 1e-12);
        assert!((0.0..=1.0).contains(&step.watercut));
    }
}
