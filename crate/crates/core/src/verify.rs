//! Self-test battery: operator oracles, gradient checks, constants and
//! fixtures, reported as a deterministic pass/fail table.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erf;
use statrs::function::gamma::gamma;

use crate::diagnostics::{instanton_fixtures, mp_threshold, sobolev_closed_form, sobolev_constants};
use crate::energy::{Functional, Penalty, SemiclassicalConfig};
use crate::error::Result;
use crate::model::{
    default_potential, hls_sharp_constant, riesz_normalization, BoxGrid, Field, Grid, Nonlinearity, ProblemParams,
    RadialGrid,
};
use crate::riesz::RieszOperator;
use crate::solvers::nehari_project_with;

/// Deliberate defects the battery must detect.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Flip the sign of every Riesz kernel.
    KernelSign,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub bound: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<28} {:>14}  {:<22} {}\n", "check", "value", "bound", "result");
        for c in &self.checks {
            let verdict = if c.passed { "pass" } else { "FAIL" };
            s.push_str(&format!("{:<28} {:>14.6e}  {:<22} {}\n", c.name, c.value, c.bound, verdict));
        }
        let ok = self.checks.iter().filter(|c| c.passed).count();
        s.push_str(&format!("{ok}/{} checks passed\n", self.checks.len()));
        s
    }
}

fn at_most(name: &'static str, value: f64, bound: f64) -> Check {
    Check { name, value, bound: format!("<= {bound:e}"), passed: value <= bound }
}

fn at_least(name: &'static str, value: f64, bound: f64) -> Check {
    Check { name, value, bound: format!(">= {bound:e}"), passed: value >= bound }
}

fn within(name: &'static str, value: f64, lo: f64, hi: f64) -> Check {
    Check { name, value, bound: format!("in [{lo}, {hi}]"), passed: value >= lo && value <= hi }
}

fn failed(name: &'static str, bound: &str) -> Check {
    Check { name, value: f64::NAN, bound: bound.to_string(), passed: false }
}

fn operator(alpha: f64, grid: Grid, fault: Option<Fault>) -> Result<RieszOperator> {
    let mut op = RieszOperator::new(3, alpha, grid)?;
    if fault == Some(Fault::KernelSign) {
        op.inject_sign_fault();
    }
    Ok(op)
}

/// Potential of the unit-ball indicator for `α = 2`.
pub fn ball_potential(r: f64) -> f64 {
    if r <= 1.0 {
        (3.0 - r * r) / 6.0
    } else {
        1.0 / (3.0 * r)
    }
}

/// Largest relative error of the ball potential on 128 radial nodes.
pub fn ball_oracle_error(fault: Option<Fault>) -> Result<f64> {
    let grid = Grid::Radial(RadialGrid::new(2.0, 128)?);
    let op = operator(2.0, grid, fault)?;
    let g = Field::from_radial_fn(grid, |r| if r < 1.0 { 1.0 } else { 0.0 });
    let out = op.apply(&g)?;
    Ok((0..grid.len())
        .map(|i| {
            let exact = ball_potential(grid.radius(i));
            (out.values()[i] - exact).abs() / exact
        })
        .fold(0.0, f64::max))
}

/// Relative error for the Gaussian `e^{-r²}`: the `α = 2` profile
/// `√π erf(r) / (4r)` on the radial grid, and the value `A_α 2π Γ(α/2)`
/// at the origin for `α = 3/2`.
fn gaussian_oracle_errors(fault: Option<Fault>) -> Result<(f64, f64)> {
    let grid = Grid::Radial(RadialGrid::new(8.0, 1024)?);
    let g = Field::from_radial_fn(grid, |r| (-r * r).exp());
    let newton = operator(2.0, grid, fault)?.apply(&g)?;
    let newton_err = (0..grid.len())
        .map(|i| {
            let r = grid.radius(i);
            let exact = PI.sqrt() * erf(r) / (4.0 * r);
            (newton.values()[i] - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    let alpha = 1.5;
    let dense = operator(alpha, grid, fault)?.apply(&g)?;
    let origin = riesz_normalization(3, alpha)? * 2.0 * PI * gamma(alpha / 2.0);
    Ok((newton_err, (dense.values()[0] - origin).abs() / origin))
}

/// Relative error of the box operator at the center of a Gaussian.
fn box_gaussian_error(fault: Option<Fault>) -> Result<f64> {
    let bg = BoxGrid::new(6.0, 32)?;
    let op = operator(2.0, Grid::Box(bg), fault)?;
    let g = Field::from_radial_fn(Grid::Box(bg), |r| (-r * r).exp());
    let out = op.apply(&g)?;
    Ok((out.values()[bg.center_index()] - 0.5).abs() / 0.5)
}

/// Smooth random radial field: a sum of three Gaussians.
pub fn random_radial_field(rng: &mut ChaCha8Rng, grid: Grid, signed: bool) -> Field {
    let terms: Vec<(f64, f64)> = (0..3)
        .map(|_| {
            let a = if signed { rng.random_range(-1.0..1.0) } else { rng.random_range(0.2..1.0) };
            (a, rng.random_range(0.5..2.5))
        })
        .collect();
    Field::from_radial_fn(grid, move |r| terms.iter().map(|(a, w)| a * (-(r / w).powi(2)).exp()).sum())
}

/// Smooth random field on a box: three Gaussians at random centers.
pub fn random_box_field(rng: &mut ChaCha8Rng, grid: BoxGrid, spread: f64, signed: bool) -> Field {
    let terms: Vec<(f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            let a = if signed { rng.random_range(-1.0..1.0) } else { rng.random_range(0.2..1.0) };
            let w = rng.random_range(0.6..1.2);
            let c = [
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
            ];
            (a, w, c)
        })
        .collect();
    Field::from_point_fn(grid, move |x| {
        terms
            .iter()
            .map(|(a, w, c)| {
                let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2);
                a * (-d2 / (w * w)).exp()
            })
            .sum()
    })
}

/// Smooth bounded random field on a box: three plane waves, `|d| <= 1`.
pub fn random_wave_field(rng: &mut ChaCha8Rng, grid: BoxGrid) -> Field {
    let waves: Vec<([f64; 3], f64, f64)> = (0..3)
        .map(|_| {
            let k = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            (k, rng.random_range(0.0..2.0 * PI), rng.random_range(-1.0..1.0) / 3.0)
        })
        .collect();
    Field::from_point_fn(grid, move |x| {
        waves.iter().map(|(k, phase, a)| a * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + phase).cos()).sum()
    })
}

/// Smallest `⟨I_α g, g⟩ / ‖g‖²` over random fields on the box and the radial grid.
fn positivity(fault: Option<Fault>, samples: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bg = BoxGrid::new(8.0, 16)?;
    let boxed = operator(2.0, Grid::Box(bg), fault)?;
    let rg = Grid::Radial(RadialGrid::new(16.0, 256)?);
    let dense = operator(1.5, rg, fault)?;
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let g = random_box_field(&mut rng, bg, 1.0, true);
        worst = worst.min(boxed.pairing(&g, &g)? / g.dot(&g));
        let g = random_radial_field(&mut rng, rg, true);
        worst = worst.min(dense.pairing(&g, &g)? / g.dot(&g));
    }
    Ok(worst)
}

/// `⟨I_α f, f⟩ / (A_α 𝒞_α ‖f‖_p²)` with `p = 6/(3+α)`.
pub fn hls_ratio(op: &RieszOperator, f: &Field) -> Result<f64> {
    let alpha = op.alpha();
    let p = 6.0 / (3.0 + alpha);
    let norm = f.map(f64::abs).integral_pow(p).powf(1.0 / p);
    let bound = riesz_normalization(3, alpha)? * hls_sharp_constant(3, alpha)? * norm * norm;
    Ok(op.pairing(f, f)? / bound)
}

/// Largest HLS ratio over random nonnegative fields, and the ratio at the
/// extremal `(1 + r²)^{-(3+α)/2}` for `α = 2` and `α = 3/2`.
fn hls_checks(fault: Option<Fault>, samples: usize) -> Result<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let grid = Grid::Radial(RadialGrid::new(60.0, 8192)?);
    let newton = operator(2.0, grid, fault)?;
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..samples {
        let f = random_radial_field(&mut rng, grid, false);
        worst = worst.max(hls_ratio(&newton, &f)?);
    }
    let extremal = |alpha: f64| move |r: f64| (1.0 + r * r).powf(-(3.0 + alpha) / 2.0);
    let at_two = hls_ratio(&newton, &Field::from_radial_fn(grid, extremal(2.0)))?;
    let dense_grid = Grid::Radial(RadialGrid::new(60.0, 2048)?);
    let dense = operator(1.5, dense_grid, fault)?;
    let at_three_halves = hls_ratio(&dense, &Field::from_radial_fn(dense_grid, extremal(1.5)))?;
    Ok((worst, at_two, at_three_halves))
}

/// Central-difference errors at `h` and `h/2` and the observed order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdSample {
    pub coarse: f64,
    pub fine: f64,
    pub order: f64,
}

/// Errors below this many roundoff units of the quotient count as exact.
const FD_ROUNDOFF: f64 = 100.0;

pub fn fd_sample<E>(eval: E, u: &[f64], dir: &[f64], weights: &[f64], h: f64) -> FdSample
where
    E: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, grad) = eval(u);
    let exact: f64 = (0..u.len()).map(|i| weights[i] * grad[i] * dir[i]).sum();
    let scale: f64 = (0..u.len()).map(|i| weights[i] * (grad[i] * dir[i]).abs()).sum::<f64>().max(1e-300);
    // Relative error of the quotient and its roundoff level.
    let quotient = |h: f64| {
        let plus: Vec<f64> = u.iter().zip(dir).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = u.iter().zip(dir).map(|(a, b)| a - h * b).collect();
        let (ep, em) = (eval(&plus).0, eval(&minus).0);
        let noise = f64::EPSILON * (ep.abs() + em.abs()) / (2.0 * h * scale);
        (((ep - em) / (2.0 * h) - exact).abs() / scale, noise)
    };
    let (coarse, noise_coarse) = quotient(h);
    let (fine, noise_fine) = quotient(0.5 * h);
    let at_roundoff = coarse <= FD_ROUNDOFF * noise_coarse && fine <= FD_ROUNDOFF * noise_fine;
    let order = if at_roundoff { f64::INFINITY } else { (coarse / fine).log2() };
    FdSample { coarse, fine, order }
}

/// Directions are random smooth fields multiplied by `u`, so that `u ± h d`
/// keeps its sign. Worst observed orders for the limit functional `L_a`, the penalized
/// functional `P_ε` and the penalty `Q_ε` over `samples` random fields.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientOrders {
    pub limit: f64,
    pub penalized: f64,
    pub penalty: f64,
}

pub fn gradient_orders(samples: usize, seed: u64, fault: Option<Fault>) -> Result<GradientOrders> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-2;

    let rg = Grid::Radial(RadialGrid::new(12.0, 256)?);
    let mut limit = Functional::limit(&ProblemParams::default(), rg, 1.0)?;
    let eps = 0.5;
    let pot = default_potential();
    let bg = BoxGrid::new(8.0, 16)?;
    let params = ProblemParams::new(3, 2.0, 100.0, 3.1, 1.0)?;
    let cfg = SemiclassicalConfig::new(eps);
    let penalty = Penalty::new(&bg, &pot.domain, eps, cfg.nu);
    let box_weights = Grid::Box(bg).weights();
    if fault == Some(Fault::KernelSign) {
        limit.riesz_mut().inject_sign_fault();
    }

    let mut orders = GradientOrders { limit: f64::INFINITY, penalized: f64::INFINITY, penalty: f64::INFINITY };
    for _ in 0..samples {
        let u = random_radial_field(&mut rng, rg, false).scaled(0.5);
        let dir = random_radial_field(&mut rng, rg, true).zip_map(&u, |d, v| d * v);
        let s = fd_sample(
            |v| (limit.energy_values(v).total, limit.gradient_values(v)),
            u.values(),
            dir.values(),
            limit.weights(),
            h,
        );
        orders.limit = orders.limit.min(s.order);

        let u = random_box_field(&mut rng, bg, 2.0, false).scaled(0.3);
        // Keep the penalty away from its switching point.
        let m = penalty.outer_mass(u.values(), &box_weights);
        let u = if (m - 1.0).abs() < 0.2 { u.scaled((0.5 / m).sqrt()) } else { u };
        let dir = random_wave_field(&mut rng, bg).zip_map(&u, |d, v| d * v);
        let nl = Nonlinearity::from_params(&params).with_truncation(1.2 * u.max())?;
        let mut p = Functional::semiclassical(&params, &pot, &cfg, Grid::Box(bg), nl)?;
        if fault == Some(Fault::KernelSign) {
            p.riesz_mut().inject_sign_fault();
        }
        let s = fd_sample(
            |v| (p.energy_values(v).total, p.gradient_values(v)),
            u.values(),
            dir.values(),
            p.weights(),
            h,
        );
        orders.penalized = orders.penalized.min(s.order);

        // Scale so the outer mass sits strictly above the threshold.
        let scale = (2.0 / penalty.outer_mass(u.values(), &box_weights)).sqrt();
        let (u, dir) = (u.scaled(scale), dir.scaled(scale));
        let s = fd_sample(|v| penalty.evaluate(v, &box_weights), u.values(), dir.values(), &box_weights, h);
        orders.penalty = orders.penalty.min(s.order);
    }
    Ok(orders)
}

/// `|t - 1|` for the second projection of a projected random field.
fn nehari_idempotence(fault: Option<Fault>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = Grid::Radial(RadialGrid::new(12.0, 512)?);
    let params = ProblemParams::new(3, 2.0, 100.0, 3.1, 1.0)?;
    let mut f = Functional::limit(&params, grid, 1.0)?;
    if fault == Some(Fault::KernelSign) {
        f.riesz_mut().inject_sign_fault();
    }
    let u = random_radial_field(&mut rng, grid, false);
    let (_, v) = nehari_project_with(&f, &u)?;
    let (t, _) = nehari_project_with(&f, &v)?;
    Ok((t - 1.0).abs())
}

/// Reference value of `mp_threshold(1)` for `N = 3`, `α = 2` from the closed-form `S`.
fn threshold_from_closed_form() -> Result<f64> {
    let (n, alpha) = (3.0, 2.0);
    let prod = riesz_normalization(3, alpha)? * hls_sharp_constant(3, alpha)?;
    let s_alpha = sobolev_closed_form(3) / prod.powf((n - 2.0) / (n + alpha));
    Ok((2.0 + alpha) / (2.0 * (n + alpha))
        * ((n + alpha) / (n - 2.0)).powf((n - 2.0) / (2.0 + alpha))
        * s_alpha.powf((n + alpha) / (2.0 + alpha)))
}

fn record(checks: &mut Vec<Check>, name: &'static str, bound: &str, r: Result<Vec<Check>>) {
    match r {
        Ok(c) => checks.extend(c),
        Err(e) => {
            log::warn!("{name}: {e}");
            checks.push(failed(name, bound));
        }
    }
}

/// Fixture ε values.
pub const FIXTURE_EPS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];

/// Run the whole battery. Failures are reported, never raised.
pub fn run(fault: Option<Fault>) -> VerifyReport {
    let mut checks = Vec::new();
    record(&mut checks, "riesz_ball_oracle", "<= 1e-3", ball_oracle_error(fault).map(|e| {
        vec![at_most("riesz_ball_oracle", e, 1e-3)]
    }));
    record(&mut checks, "riesz_gaussian_oracle", "<= 1e-3", gaussian_oracle_errors(fault).map(|(a, b)| {
        vec![at_most("riesz_gaussian_oracle", a, 1e-3), at_most("riesz_gaussian_origin", b, 1e-3)]
    }));
    record(&mut checks, "riesz_box_gaussian", "<= 1e-2", box_gaussian_error(fault).map(|e| {
        vec![at_most("riesz_box_gaussian", e, 1e-2)]
    }));
    record(&mut checks, "riesz_positivity", "> 0", positivity(fault, 6).map(|m| {
        vec![Check { name: "riesz_positivity", value: m, bound: "> 0".into(), passed: m > 0.0 }]
    }));
    record(&mut checks, "hls_bound", "<= 1.001", hls_checks(fault, 6).map(|(worst, two, three_halves)| {
        vec![
            at_most("hls_bound", worst, 1.001),
            within("hls_extremal_alpha_2", two, 0.999, 1.001),
            within("hls_extremal_alpha_1.5", three_halves, 0.995, 1.005),
        ]
    }));
    record(&mut checks, "sobolev_constant", "<= 1e-9", sobolev_constants(3, 2.0).and_then(|(s, _)| {
        let rel = ((s - sobolev_closed_form(3)) / sobolev_closed_form(3)).abs();
        let thr = mp_threshold(1.0, 3, 2.0)?;
        let reference = threshold_from_closed_form()?;
        Ok(vec![
            at_most("sobolev_constant", rel, 1e-9),
            at_most("mp_threshold", ((thr - reference) / reference).abs(), 1e-9),
        ])
    }));
    record(&mut checks, "instanton_fixtures", "exponents", instanton_fixtures(&FIXTURE_EPS).map(|t| {
        vec![
            within("fixture_kinetic_exponent", t.kinetic_exponent, 0.85, 1.15),
            within("fixture_mass_exponent", t.mass_exponent, 0.85, 1.15),
            at_least("fixture_critical_exponent", t.critical_exponent, 2.5),
        ]
    }));
    record(&mut checks, "gradient_order", ">= 1.9", gradient_orders(8, 3, fault).map(|o| {
        vec![
            at_least("gradient_order_limit", o.limit, 1.9),
            at_least("gradient_order_penalized", o.penalized, 1.9),
            at_least("gradient_order_penalty", o.penalty, 1.9),
        ]
    }));
    record(&mut checks, "nehari_idempotence", "<= 1e-10", nehari_idempotence(fault).map(|d| {
        vec![at_most("nehari_idempotence", d, 1e-10)]
    }));
    VerifyReport { checks }
}
