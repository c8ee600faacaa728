use choquard::energy::Functional;
use choquard::model::{BoxGrid, Field, Grid, ProblemParams, RadialGrid};
use choquard::riesz::RieszOperator;
use choquard::solvers::{ground_state_from, ground_state_limit, resample_radial, SolverConfig};

fn gaussian(grid: Grid) -> Field {
    Field::from_radial_fn(grid, |r| 0.5 * (-r * r / 2.0).exp())
}

#[test]
fn riesz_potentials_agree_at_the_origin() {
    let radial = Grid::Radial(RadialGrid::new(12.0, 1024).unwrap());
    let boxed = Grid::Box(BoxGrid::new(8.0, 64).unwrap());
    for alpha in [1.5, 2.0] {
        let pr = RieszOperator::new(3, alpha, radial).unwrap().apply(&gaussian(radial)).unwrap();
        let bg = match boxed {
            Grid::Box(b) => b,
            _ => unreachable!(),
        };
        let pb = RieszOperator::new(3, alpha, boxed).unwrap().apply(&gaussian(boxed)).unwrap();
        let at_origin = pb.values()[bg.center_index()];
        let rel = (at_origin - pr.values()[0]) / pr.values()[0];
        assert!(rel.abs() < 1e-2, "alpha {alpha}: {rel:e}");
    }
}

#[test]
fn energies_of_a_fixed_field_agree() {
    let p = ProblemParams::new(3, 2.0, 100.0, 3.1, 1.0).unwrap();
    let radial = Grid::Radial(RadialGrid::new(12.0, 2048).unwrap());
    let boxed = Grid::Box(BoxGrid::new(8.0, 64).unwrap());
    let er = Functional::limit(&p, radial, 1.0).unwrap().energy(&gaussian(radial)).unwrap();
    let eb = Functional::limit(&p, boxed, 1.0).unwrap().energy(&gaussian(boxed)).unwrap();
    for (a, b) in [(er.kinetic, eb.kinetic), (er.mass_term, eb.mass_term), (er.nonlocal, eb.nonlocal)] {
        assert!(((a - b) / a).abs() < 1e-2, "{a} vs {b}");
    }
}

#[test]
fn ground_state_energies_agree_on_a_coarse_box() {
    let p = ProblemParams::new(3, 2.0, 100.0, 3.1, 1.0).unwrap();
    let cfg = SolverConfig::default();
    let radial = ground_state_limit(&p, Grid::Radial(RadialGrid::new(20.0, 4096).unwrap()), &cfg).unwrap();
    assert!(radial.converged);
    let bg = Grid::Box(BoxGrid::new(6.0, 64).unwrap());
    let seed = resample_radial(&radial.u, bg, [0.0; 3]).unwrap();
    let boxed = ground_state_from(&p, &seed, &cfg).unwrap();
    assert!(boxed.converged);
    let rel = (boxed.energy.total - radial.energy.total) / radial.energy.total;
    assert!(rel.abs() < 2e-2, "{rel:e}");
    let offset: f64 = boxed.peak.position.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(offset <= 6.0 / 32.0, "{offset}");
}
