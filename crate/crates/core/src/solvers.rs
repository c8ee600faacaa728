//! Ground states of the limit problem and semiclassical solutions by
//! Nehari-projected, preconditioned descent.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{mp_threshold, pohozaev_residual_report};
use crate::energy::{EnergyReport, Functional, LaplaceOperator, ScalingData, SemiclassicalConfig};
use crate::error::{Error, Result};
use crate::model::{
    cutoff_profile, instanton, norm3, BoxGrid, Field, Grid, Nonlinearity, PotentialSpec, ProblemParams,
};
use crate::par;

/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
/// Maximum number of step halvings per iteration.
const MAX_HALVINGS: usize = 50;
/// Relative energy band treated as roundoff.
const ROUNDOFF_BAND: f64 = 1e-13;
/// Collapse: norm ratio and half-width (in cells) below which a run is flagged.
const COLLAPSE_NORM: f64 = 1e-6;
const COLLAPSE_WIDTH_CELLS: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    Fixed { step: f64 },
    #[default]
    Backtracking,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeedProfile {
    #[default]
    Gaussian,
    Instanton,
    /// A stored field; radial fields are interpolated onto other grids.
    File(PathBuf),
}

impl std::str::FromStr for SeedProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(SeedProfile::Gaussian),
            "instanton" => Ok(SeedProfile::Instanton),
            _ => match s.strip_prefix("file:") {
                Some(p) => Ok(SeedProfile::File(PathBuf::from(p))),
                None => Err(Error::Config(format!(
                    "unknown seed profile {s:?}; use gaussian, instanton or file:PATH"
                ))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol_grad: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub step_rule: StepRule,
    #[serde(default = "yes")]
    pub precondition: bool,
    #[serde(default)]
    pub seed_profile: SeedProfile,
}

fn yes() -> bool {
    true
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_grad: 1e-6,
            max_iter: 2000,
            step_rule: StepRule::Backtracking,
            precondition: true,
            seed_profile: SeedProfile::Gaussian,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_grad > 0.0) {
            return Err(Error::Config(format!("tol_grad = {} must be positive", self.tol_grad)));
        }
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if let StepRule::Fixed { step } = self.step_rule {
            if !(step > 0.0) {
                return Err(Error::Config(format!("fixed step = {step} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveFlags {
    pub possible_nonexistence: bool,
    pub penalty_active: bool,
    pub truncation_active: bool,
    /// The line search could not decrease the energy any further.
    pub stalled: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub position: [f64; 3],
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub u: Field,
    pub energy: EnergyReport,
    pub grad_norm: f64,
    pub pohozaev_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub peak: Peak,
    pub flags: SolveFlags,
    /// Energy after every accepted step, starting with the projected seed.
    pub energy_history: Vec<f64>,
    /// `mp_threshold(1)` for the limit problem.
    pub threshold: Option<f64>,
}

impl SolveResult {
    /// `(threshold - energy) / threshold`.
    pub fn threshold_margin(&self) -> Option<f64> {
        self.threshold.map(|t| (t - self.energy.total) / t)
    }
}

/// Semiclassical solve output with the ε-specific bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct SemiclassicalOutcome {
    pub result: SolveResult,
    pub eps: f64,
    pub kappa: f64,
    pub cap: f64,
    /// Peak in original coordinates `x = ε y`.
    pub peak_original: [f64; 3],
    /// `L²` distance of the solution from the initial guess (rescaled coordinates).
    pub distance_from_initial: f64,
    pub tube_radius: Option<f64>,
}

/// Solve `(-Δ + a) u = g` on the field's grid.
pub fn invert_shifted_laplacian(g: &Field, a: f64) -> Result<Field> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("a = {a} must be positive")));
    }
    g.check_finite()?;
    let lap = LaplaceOperator::new(*g.grid());
    Field::new(*g.grid(), lap.solve_shifted(g.values(), a))
}

/// Nehari root of `t ↦ ⟨I'(t u), t u⟩` together with the scaling data of `t u`.
pub struct Projection {
    pub t: f64,
    pub u: Vec<f64>,
    pub data: ScalingData,
}

fn nehari_root<G: Fn(f64) -> f64>(g: G) -> Result<f64> {
    let g1 = g(1.0);
    let (mut lo, mut g_lo, mut hi, mut g_hi);
    if g1 > 0.0 {
        (lo, g_lo, hi) = (1.0, g1, 2.0);
        g_hi = g(hi);
        let mut k = 0;
        while g_hi > 0.0 {
            (lo, g_lo) = (hi, g_hi);
            hi *= 2.0;
            g_hi = g(hi);
            k += 1;
            if k > 200 {
                return Err(Error::DegenerateInput("no Nehari root above t = 1: the energy grows without bound along the ray".into()));
            }
        }
    } else {
        (hi, g_hi, lo) = (1.0, g1, 0.5);
        g_lo = g(lo);
        let mut k = 0;
        while g_lo <= 0.0 {
            (hi, g_hi) = (lo, g_lo);
            lo *= 0.5;
            g_lo = g(lo);
            k += 1;
            if k > 200 {
                return Err(Error::DegenerateInput("no Nehari root below t = 1".into()));
            }
        }
    }
    // Illinois variant of regula falsi: superlinear, and both ends of the bracket move.
    let mut side = 0;
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        t = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
        if !(t > lo && t < hi) {
            t = 0.5 * (lo + hi);
        }
        let gt = g(t);
        if gt > 0.0 {
            (lo, g_lo) = (t, gt);
            if side == 1 {
                g_hi *= 0.5;
            }
            side = 1;
        } else {
            (hi, g_hi) = (t, gt);
            if side == -1 {
                g_lo *= 0.5;
            }
            side = -1;
        }
        if hi - lo <= 1e-12 * hi || gt == 0.0 {
            break;
        }
    }
    Ok(t)
}

/// Scale `u` onto the Nehari set of `f`.
pub fn project(f: &Functional, u: &[f64]) -> Result<Projection> {
    let data = f.scaling_data(u);
    let drive: f64 = data.pair.iter().flatten().sum();
    if !(drive > 0.0) || !(data.quadratic() > 0.0) {
        return Err(Error::DegenerateInput(format!(
            "nonlocal term {drive:.3e} is not positive; nothing to project"
        )));
    }
    let t = nehari_root(|t| data.nehari_function(t))?;
    if f.polynomial_at(&data, t) {
        let scaled = par::collect(u.len(), |i| t * u[i]);
        let scaled_data = rescale_data(&data, t);
        return Ok(Projection { t, u: scaled, data: scaled_data });
    }
    // The cap is active along the ray: evaluate every trial directly.
    let t = nehari_root(|t| {
        let v: Vec<f64> = u.iter().map(|x| t * x).collect();
        f.nehari_value(&v)
    })?;
    let scaled = par::collect(u.len(), |i| t * u[i]);
    let data = f.scaling_data(&scaled);
    Ok(Projection { t, u: scaled, data })
}

/// Scaling data of `t u` from that of `u` (polynomial branch).
fn rescale_data(d: &ScalingData, t: f64) -> ScalingData {
    let e = &d.exponents;
    ScalingData {
        kinetic: t * t * d.kinetic,
        mass_term: t * t * d.mass_term,
        outer_mass: t * t * d.outer_mass,
        exponents: e.clone(),
        pair: (0..e.len())
            .map(|j| (0..e.len()).map(|k| t.powf(e[j] + e[k]) * d.pair[j][k]).collect())
            .collect(),
        potentials: d
            .potentials
            .iter()
            .zip(e)
            .map(|(p, &ej)| {
                let s = t.powf(ej);
                p.iter().map(|v| s * v).collect()
            })
            .collect(),
        neg_lap: d.neg_lap.iter().map(|v| t * v).collect(),
        max: t * d.max,
        lambda: d.lambda,
    }
}

/// Project a field of the limit problem onto its Nehari set.
pub fn nehari_project(u: &Field, params: &ProblemParams) -> Result<(f64, Field)> {
    let f = Functional::limit(params, *u.grid(), 1.0)?;
    nehari_project_with(&f, u)
}

/// Nehari projection for an explicit functional.
pub fn nehari_project_with(f: &Functional, u: &Field) -> Result<(f64, Field)> {
    if u.values().iter().any(|&v| v < 0.0) {
        return Err(Error::Input("Nehari projection needs u >= 0".into()));
    }
    let p = project(f, u.values())?;
    Ok((p.t, Field::new(*u.grid(), p.u)?))
}

fn weighted_norm(w: &[f64], g: &[f64]) -> f64 {
    par::sum(g.len(), |i| w[i] * g[i] * g[i]).sqrt()
}

/// Node index of the maximum and the peak half-width in cells.
fn peak_shape(grid: &Grid, u: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in u.iter().enumerate() {
        if v > u[best] {
            best = i;
        }
    }
    let half = 0.5 * u[best];
    let width = match grid {
        Grid::Radial(g) => {
            let steps = (best..g.n).find(|&i| u[i] < half).map_or(g.n - best, |i| i - best);
            steps as f64
        }
        Grid::Box(g) => {
            let n = g.n;
            let [i0, j0, k0] = g.split(best);
            let mut total = 0.0;
            for axis in 0..3 {
                for dir in [1usize, n - 1] {
                    let mut s = 1;
                    while s < n {
                        let mut c = [i0, j0, k0];
                        c[axis] = (c[axis] + dir * s) % n;
                        if u[g.index(c[0], c[1], c[2])] < half {
                            break;
                        }
                        s += 1;
                    }
                    total += s as f64;
                }
            }
            total / 6.0
        }
    };
    (best, width)
}

fn node_position(grid: &Grid, i: usize) -> [f64; 3] {
    match grid {
        Grid::Radial(g) => [g.node(i), 0.0, 0.0],
        Grid::Box(g) => g.position(i),
    }
}

/// Linear interpolation of a radial profile at radius `r` (zero beyond `r_max`).
pub fn interpolate_radial(src: &Field, r: f64) -> f64 {
    let g = match src.grid() {
        Grid::Radial(g) => *g,
        Grid::Box(_) => return 0.0,
    };
    let v = src.values();
    let x = r / g.spacing() - 0.5;
    if x <= 0.0 {
        return v[0];
    }
    let i = x.floor() as usize;
    if i + 1 >= g.n {
        // Continue linearly to the zero boundary value at r_max.
        let frac = ((r - g.node(g.n - 1)) / (0.5 * g.spacing())).min(1.0);
        return v[g.n - 1] * (1.0 - frac);
    }
    let s = x - i as f64;
    v[i] * (1.0 - s) + v[i + 1] * s
}

/// Sample a radial profile centered at `center` on `target`.
pub fn resample_radial(src: &Field, target: Grid, center: [f64; 3]) -> Result<Field> {
    if !matches!(src.grid(), Grid::Radial(_)) {
        return Err(Error::Input("resampling needs a radial source field".into()));
    }
    let values = match target {
        Grid::Radial(g) => par::collect(g.n, |i| interpolate_radial(src, g.node(i))),
        Grid::Box(b) => par::collect(b.len(), |i| {
            let x = b.position(i);
            interpolate_radial(src, norm3([x[0] - center[0], x[1] - center[1], x[2] - center[2]]))
        }),
    };
    Field::new(target, values)
}

fn seed_field(grid: Grid, seed: &SeedProfile) -> Result<Field> {
    match seed {
        SeedProfile::Gaussian => Ok(Field::from_radial_fn(grid, |r| (-r * r).exp())),
        SeedProfile::Instanton => Ok(Field::from_radial_fn(grid, |r| instanton(3, 1.0, r))),
        SeedProfile::File(p) => {
            let stored = crate::io::read_field(p)?;
            if stored.grid() == &grid {
                Ok(stored)
            } else {
                resample_radial(&stored, grid, [0.0; 3]).map_err(|_| {
                    Error::Config(format!(
                        "seed file {} lives on a different grid and is not radial",
                        p.display()
                    ))
                })
            }
        }
    }
}

struct Descent {
    u: Vec<f64>,
    energy: EnergyReport,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
    flags: SolveFlags,
    history: Vec<f64>,
}

/// Preconditioned descent on the Nehari set from a projected starting point.
fn descend(f: &Functional, start: Projection, cfg: &SolverConfig, detect_collapse: bool) -> Descent {
    let w = f.weights().to_vec();
    let grid = f.grid();
    let shift = f.mass().ceiling();
    let u0_norm = weighted_norm(&w, &start.u);
    let (mut energy, mut grad) = f.state(&start.u, &start.data);
    let mut u = start.u;
    let mut grad_norm = weighted_norm(&w, &grad);
    let mut history = vec![energy.total];
    let mut flags = SolveFlags::default();
    let mut iterations = 0;
    let mut converged = grad_norm <= cfg.tol_grad;

    while !converged && iterations < cfg.max_iter {
        let dir = if cfg.precondition { f.laplace().solve_shifted(&grad, shift) } else { grad.clone() };
        let slope = par::sum(u.len(), |i| w[i] * grad[i] * dir[i]);
        let mut step = match cfg.step_rule {
            StepRule::Fixed { step } => step,
            StepRule::Backtracking => 1.0,
        };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = par::collect(u.len(), |i| u[i] - step * dir[i]);
            if let Ok(p) = project(f, &trial) {
                let (e, g) = f.state(&p.u, &p.data);
                let fixed = matches!(cfg.step_rule, StepRule::Fixed { .. });
                let decreased = e.total <= energy.total - ARMIJO * step * slope;
                let level = (e.total - energy.total).abs() <= ROUNDOFF_BAND * energy.total.abs();
                if fixed || decreased || (level && weighted_norm(&w, &g) < grad_norm) {
                    accepted = Some((p, e, g));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((p, e, g)) = accepted else {
            flags.stalled = true;
            break;
        };
        iterations += 1;
        u = p.u;
        energy = e;
        grad = g;
        grad_norm = weighted_norm(&w, &grad);
        history.push(energy.total);
        if detect_collapse {
            let (_, width) = peak_shape(&grid, &u);
            if weighted_norm(&w, &u) < COLLAPSE_NORM * u0_norm || width < COLLAPSE_WIDTH_CELLS {
                flags.possible_nonexistence = true;
                break;
            }
        }
        converged = grad_norm <= cfg.tol_grad;
        if iterations % 100 == 0 {
            log::debug!("iteration {iterations}: energy {:.12e}, gradient {grad_norm:.3e}", energy.total);
        }
    }
    Descent { u, energy, grad_norm, iterations, converged, flags, history }
}

fn finish(grid: Grid, params: &ProblemParams, d: Descent, threshold: Option<f64>) -> SolveResult {
    let (best, _) = peak_shape(&grid, &d.u);
    let peak = Peak { position: node_position(&grid, best), value: d.u[best] };
    let pohozaev_residual = pohozaev_residual_report(params, &d.energy);
    SolveResult {
        u: Field::from_vec_unchecked(grid, d.u),
        energy: d.energy,
        grad_norm: d.grad_norm,
        pohozaev_residual,
        iterations: d.iterations,
        converged: d.converged && !d.flags.possible_nonexistence,
        peak,
        flags: d.flags,
        energy_history: d.history,
        threshold,
    }
}

/// Ground state of the limit problem on `grid`, seeded per `cfg`.
pub fn ground_state_limit(params: &ProblemParams, grid: Grid, cfg: &SolverConfig) -> Result<SolveResult> {
    let seed = seed_field(grid, &cfg.seed_profile)?;
    ground_state_from(params, &seed, cfg)
}

/// Ground state of the limit problem from an explicit seed.
pub fn ground_state_from(params: &ProblemParams, seed: &Field, cfg: &SolverConfig) -> Result<SolveResult> {
    params.validate()?;
    cfg.validate()?;
    let grid = *seed.grid();
    let f = Functional::limit(params, grid, 1.0)?;
    let seed = seed.positive_part();
    let start = project(&f, seed.values())?;
    let d = descend(&f, start, cfg, true);
    let threshold = mp_threshold(1.0, params.n, params.alpha).ok();
    Ok(finish(grid, params, d, threshold))
}

/// `U_ε^x(y) = φ(ε y - x) U(y - x/ε)` with the cutoff at radius `β` in original coordinates.
pub fn semiclassical_initial_guess(
    u_ref: &Field,
    grid: &BoxGrid,
    eps: f64,
    x: [f64; 3],
    beta: f64,
) -> Result<Field> {
    let center = [x[0] / eps, x[1] / eps, x[2] / eps];
    let profile: Field = match u_ref.grid() {
        Grid::Radial(_) => resample_radial(u_ref, Grid::Box(*grid), center)?,
        Grid::Box(b) if b == grid => {
            let h = grid.spacing();
            let shift: Vec<i64> = center.iter().map(|c| (c / h).round() as i64).collect();
            let n = grid.n as i64;
            let src = u_ref.values();
            let values = par::collect(grid.len(), |i| {
                let [a, b, c] = grid.split(i);
                let s = [a as i64 - shift[0], b as i64 - shift[1], c as i64 - shift[2]];
                if s.iter().all(|&v| (0..n).contains(&v)) {
                    src[grid.index(s[0] as usize, s[1] as usize, s[2] as usize)]
                } else {
                    0.0
                }
            });
            Field::new(Grid::Box(*grid), values)?
        }
        Grid::Box(_) => return Err(Error::Input("reference field lives on a different box".into())),
    };
    Ok(Field::from_point_fn(*grid, |y| {
        let z = [eps * y[0] - x[0], eps * y[1] - x[1], eps * y[2] - x[2]];
        cutoff_profile(norm3(z) / beta)
    })
    .zip_map(&profile, |phi, u| phi * u))
}

/// Semiclassical solution of the penalized, truncated, rescaled problem.
pub fn semiclassical_solve(
    params: &ProblemParams,
    pot: &PotentialSpec,
    cfg: &SemiclassicalConfig,
    solver: &SolverConfig,
    grid: &BoxGrid,
    u_ref: &Field,
) -> Result<SemiclassicalOutcome> {
    params.validate()?;
    pot.validate()?;
    cfg.validate()?;
    solver.validate()?;
    let eps = cfg.eps;
    let x = pot.minimizers[0];
    let beta = cfg.cutoff_beta.unwrap_or_else(|| {
        let d = pot.well_depth_radius();
        if d.is_finite() {
            0.5 * d
        } else {
            f64::INFINITY
        }
    });
    let kappa = cfg.kappa.unwrap_or(1.2 * u_ref.max());
    let base = Nonlinearity::from_params(params);
    let nl = match cfg.cap {
        Some(k) => base.with_cap(k, kappa)?,
        None => base.with_truncation(kappa)?,
    };
    let cap = nl.cap().map_or(f64::INFINITY, |c| c.level);
    let f = Functional::semiclassical(params, pot, cfg, Grid::Box(*grid), nl)?;
    let init = if beta.is_finite() {
        semiclassical_initial_guess(u_ref, grid, eps, x, beta)?
    } else {
        semiclassical_initial_guess(u_ref, grid, eps, x, 1e300)?
    };
    let start = project(&f, init.values())?;
    let d = descend(&f, start, solver, false);
    let penalty = d.energy.penalty;
    let max = d.u.iter().copied().fold(0.0, f64::max);
    let mut result = finish(Grid::Box(*grid), params, d, None);
    if penalty > 0.0 {
        result.flags.penalty_active = true;
    }
    if max >= kappa {
        result.flags.truncation_active = true;
    }
    result.converged = result.converged && !result.flags.penalty_active && !result.flags.truncation_active;
    let p = result.peak.position;
    let distance_from_initial = result.u.add_scaled(-1.0, &init).norm_l2();
    Ok(SemiclassicalOutcome {
        peak_original: [eps * p[0], eps * p[1], eps * p[2]],
        result,
        eps,
        kappa,
        cap,
        distance_from_initial,
        tube_radius: cfg.tube_radius,
    })
}
