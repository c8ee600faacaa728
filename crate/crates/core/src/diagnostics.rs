//! Certificates and checks: Pohozaev residual, Sobolev constants, the
//! mountain-pass threshold, instanton fixtures, decay fits and
//! concentration metrics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::energy::{pohozaev_functional, EnergyReport, Functional};
use crate::error::{Error, Result};
use crate::model::{
    cutoff_profile, cutoff_profile_derivative, dist3, hls_sharp_constant, instanton, instanton_derivative,
    riesz_normalization, Field, Grid, PotentialSpec, ProblemParams,
};
use crate::par;
use crate::quad::{graded_breaks, GaussLegendre};
use crate::solvers::{resample_radial, SemiclassicalOutcome};

/// Relative Pohozaev residual of a field of the limit problem.
pub fn pohozaev_residual(u: &Field, params: &ProblemParams, lambda: f64) -> Result<f64> {
    let e = Functional::limit(params, *u.grid(), lambda)?.energy(u)?;
    Ok(pohozaev_residual_report(params, &e))
}

/// `|P| / (1 + (N-2)/2 K + N/2 ∫c u²)` from assembled energy components.
pub fn pohozaev_residual_report(params: &ProblemParams, e: &EnergyReport) -> f64 {
    let n = params.n as f64;
    let p = pohozaev_functional(params, e);
    p.abs() / (1.0 + (n - 2.0) / 2.0 * e.kinetic + n / 2.0 * e.mass_term)
}

/// Central difference of `σ ↦ I_λ(u(·/σ))` at `σ = 1` for a radial profile.
pub fn dilation_derivative<P>(profile: P, params: &ProblemParams, grid: Grid, lambda: f64, delta: f64) -> Result<f64>
where
    P: Fn(f64) -> f64 + Sync + Send,
{
    let f = Functional::limit(params, grid, lambda)?;
    let at = |s: f64| f.energy_values(Field::from_radial_fn(grid, |r| profile(r / s)).values()).total;
    Ok((at(1.0 + delta) - at(1.0 - delta)) / (2.0 * delta))
}

fn sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0)
}

/// `∫_{R^N} g(|x|) dx` over `r = s/(1-s)` with `panels` Gauss-Legendre panels.
fn radial_integral<G: Fn(f64) -> f64>(n: usize, g: G, panels: usize) -> f64 {
    let gl = GaussLegendre::new(20);
    let area = sphere_area(n);
    let breaks: Vec<f64> = (0..=panels).map(|k| k as f64 / panels as f64).collect();
    area * gl.integrate_panels(&breaks, |s| {
        if s >= 1.0 {
            return 0.0;
        }
        let r = s / (1.0 - s);
        g(r) * r.powi(n as i32 - 1) / ((1.0 - s) * (1.0 - s))
    })
}

fn sobolev_quotient(n: usize, panels: usize) -> f64 {
    let crit = 2.0 * n as f64 / (n as f64 - 2.0);
    let kin = radial_integral(n, |r| instanton_derivative(n, 1.0, r).powi(2), panels);
    let norm = radial_integral(n, |r| instanton(n, 1.0, r).powf(crit), panels);
    kin / norm.powf((n as f64 - 2.0) / n as f64)
}

/// `(S, S_α)`: `S` from the instanton Rayleigh quotient, `S_α = S / (A_α 𝒞_α)^((N-2)/(N+α))`.
pub fn sobolev_constants(n: usize, alpha: f64) -> Result<(f64, f64)> {
    if n < 3 {
        return Err(Error::Domain(format!("N = {n} violates N >= 3")));
    }
    let coarse = sobolev_quotient(n, 64);
    let s = sobolev_quotient(n, 128);
    if ((s - coarse) / s).abs() > 1e-4 {
        return Err(Error::Accuracy(format!(
            "Sobolev quotient moved by {:.2e} between resolutions",
            ((s - coarse) / s).abs()
        )));
    }
    let prod = riesz_normalization(n, alpha)? * hls_sharp_constant(n, alpha)?;
    let nf = n as f64;
    Ok((s, s / prod.powf((nf - 2.0) / (nf + alpha))))
}

/// Closed form `S = N(N-2)π (Γ(N/2)/Γ(N))^(2/N)`.
pub fn sobolev_closed_form(n: usize) -> f64 {
    let nf = n as f64;
    nf * (nf - 2.0) * PI * (gamma(nf / 2.0) / gamma(nf)).powf(2.0 / nf)
}

/// Upper bound on the mountain-pass level `c_λ`.
pub fn mp_threshold(lambda: f64, n: usize, alpha: f64) -> Result<f64> {
    if !(0.5..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda = {lambda} outside [1/2, 1]")));
    }
    let (_, s_alpha) = sobolev_constants(n, alpha)?;
    let nf = n as f64;
    Ok((2.0 + alpha) / (2.0 * (nf + alpha))
        * ((nf + alpha) / (nf - 2.0)).powf((nf - 2.0) / (2.0 + alpha))
        * lambda.powf((2.0 - nf) / (2.0 + alpha))
        * s_alpha.powf((nf + alpha) / (2.0 + alpha)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub eps: f64,
    /// `∫|∇ψ_ε|²`.
    pub kinetic: f64,
    /// `∫ψ_ε^6`.
    pub critical: f64,
    /// `∫ψ_ε²`.
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureTable {
    pub rows: Vec<FixtureRow>,
    /// `S^(3/2)`.
    pub reference: f64,
    pub kinetic_exponent: f64,
    pub mass_exponent: f64,
    pub critical_exponent: f64,
    /// Exponents of a plain log-log line, without the correction term.
    pub plain_exponents: [f64; 3],
    /// Fitted `K₁` in `∫|∇ψ_ε|² - S^(3/2) ≈ K₁ ε`.
    pub kinetic_constant: f64,
    /// Fitted `K₂` in `∫ψ_ε² ≈ K₂ ε`.
    pub mass_constant: f64,
    /// Largest RMS log-residual of the three fits.
    pub fit_residual: f64,
}

impl FixtureTable {
    pub fn to_text(&self) -> String {
        let mut s = String::from("eps kinetic critical mass\n");
        for r in &self.rows {
            s.push_str(&format!("{:e} {:.15e} {:.15e} {:.15e}\n", r.eps, r.kinetic, r.critical, r.mass));
        }
        s
    }
}

/// Least-squares line `y = a + b x`; returns `(a, b, rms residual)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rms = (x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum::<f64>() / n).sqrt();
    (a, b, rms)
}

/// Least squares `ln y = a + p ln ε + b ε`: the leading power with a
/// first-order correction. Returns `(a, p, rms residual)`.
pub fn fit_power_with_correction(eps: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let rows: Vec<[f64; 3]> = eps.iter().map(|&e| [1.0, e.ln(), e]).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mut a = [[0.0; 4]; 3];
    for (r, &t) in rows.iter().zip(&ly) {
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += r[i] * r[j];
            }
            a[i][3] += r[i] * t;
        }
    }
    // Gaussian elimination with partial pivoting on the 3x3 normal equations.
    for c in 0..3 {
        let piv = (c..3).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap_or(c);
        a.swap(c, piv);
        for r in c + 1..3 {
            let f = a[r][c] / a[c][c];
            let pivot = a[c];
            for (v, p) in a[r].iter_mut().zip(pivot).skip(c) {
                *v -= f * p;
            }
        }
    }
    let mut x = [0.0; 3];
    for c in (0..3).rev() {
        let s: f64 = (c + 1..3).map(|k| a[c][k] * x[k]).sum();
        x[c] = (a[c][3] - s) / a[c][c];
    }
    let n = eps.len() as f64;
    let rms = (rows.iter().zip(&ly).map(|(r, t)| (t - x[0] - x[1] * r[1] - x[2] * r[2]).powi(2)).sum::<f64>() / n).sqrt();
    (x[0], x[1], rms)
}

/// Largest tolerated RMS log-residual of a fixture fit.
const FIXTURE_FIT_LIMIT: f64 = 0.25;

/// Integrals of the cut-off instanton in N = 3 and their fitted ε-rates.
pub fn instanton_fixtures(eps_list: &[f64]) -> Result<FixtureTable> {
    if eps_list.len() < 3 || eps_list.iter().any(|&e| !(e > 0.0 && e <= 0.5)) {
        return Err(Error::Domain("need at least 3 values of eps in (0, 1/2]".into()));
    }
    let ratio = eps_list[1] / eps_list[0];
    if eps_list.windows(2).any(|w| ((w[1] / w[0]) / ratio - 1.0).abs() > 1e-9) {
        return Err(Error::Domain("eps values must form a geometric progression".into()));
    }
    let (s, _) = sobolev_constants(3, 2.0)?;
    let reference = s.powf(1.5);
    let gl = GaussLegendre::new(24);
    let rows: Vec<FixtureRow> = par::map_slice(eps_list, |&eps| {
        let mut breaks = graded_breaks(eps * 1e-3, 1.0, 8);
        breaks.extend((1..=16).map(|k| 1.0 + k as f64 / 16.0));
        let shell = |g: &dyn Fn(f64) -> f64| 4.0 * PI * gl.integrate_panels(&breaks, |r| g(r) * r * r);
        let psi = |r: f64| cutoff_profile(r) * instanton(3, eps, r);
        let dpsi = |r: f64| {
            cutoff_profile_derivative(r) * instanton(3, eps, r) + cutoff_profile(r) * instanton_derivative(3, eps, r)
        };
        FixtureRow {
            eps,
            kinetic: shell(&|r| dpsi(r).powi(2)),
            critical: shell(&|r| psi(r).powi(6)),
            mass: shell(&|r| psi(r).powi(2)),
        }
    });
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let fit = |vals: Vec<f64>| -> Result<((f64, f64, f64), f64)> {
        if vals.iter().any(|v| !(v.abs() > 0.0)) {
            return Err(Error::Accuracy("a fixture deviation vanished".into()));
        }
        let abs: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
        let ly: Vec<f64> = abs.iter().map(|v| v.ln()).collect();
        Ok((fit_power_with_correction(&eps, &abs), fit_line(&lx, &ly).1))
    };
    let ((ka, kb, kr), kp) = fit(rows.iter().map(|r| r.kinetic - reference).collect())?;
    let ((ma, mb, mr), mp) = fit(rows.iter().map(|r| r.mass).collect())?;
    let ((_, cb, cr), cp) = fit(rows.iter().map(|r| r.critical - reference).collect())?;
    let fit_residual = kr.max(mr).max(cr);
    let table = FixtureTable {
        rows,
        reference,
        kinetic_exponent: kb,
        mass_exponent: mb,
        critical_exponent: cb,
        plain_exponents: [kp, mp, cp],
        kinetic_constant: ka.exp(),
        mass_constant: ma.exp(),
        fit_residual,
    };
    if fit_residual > FIXTURE_FIT_LIMIT {
        return Err(Error::Accuracy(format!(
            "fixture fit residual {fit_residual:.3} exceeds {FIXTURE_FIT_LIMIT}\n{}",
            table.to_text()
        )));
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Rate `c` in `u ≈ C exp(-c |x - peak|)`.
    pub c: f64,
    /// Amplitude `C`.
    pub amplitude: f64,
    /// Distances spanned by the fitted nodes.
    pub r_window: (f64, f64),
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    pub nodes: usize,
}

/// Lower and upper relative amplitudes of the fitting window.
pub const DECAY_WINDOW: (f64, f64) = (1e-8, 1e-2);
pub const DECAY_MIN_NODES: usize = 20;
/// The window starts this far above the magnitude of the most negative value.
pub const DECAY_NOISE_FACTOR: f64 = 10.0;

/// Log-linear fit of the tail of `u` around `peak`. On a box only nodes
/// inside the largest ball around `peak` that fits in the box are used.
pub fn decay_fit(u: &Field, peak: [f64; 3]) -> Result<DecayFit> {
    let max = u.max();
    if !(max > 0.0) {
        return Err(Error::InsufficientTail("field has no positive values".into()));
    }
    let noise = DECAY_NOISE_FACTOR * (-u.min()).max(0.0);
    let (lo, hi) = ((DECAY_WINDOW.0 * max).max(noise), DECAY_WINDOW.1 * max);
    let grid = *u.grid();
    let reach = match grid {
        Grid::Radial(g) => g.r_max,
        Grid::Box(g) => g.half_width - peak.iter().map(|c| c.abs()).fold(0.0, f64::max),
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &v) in u.values().iter().enumerate() {
        if v > lo && v < hi {
            let d = match grid {
                Grid::Radial(g) => (g.node(i) - crate::model::norm3(peak)).abs(),
                Grid::Box(g) => dist3(g.position(i), peak),
            };
            if d <= reach {
                xs.push(d);
                ys.push(v.ln());
            }
        }
    }
    if xs.len() < DECAY_MIN_NODES {
        return Err(Error::InsufficientTail(format!(
            "{} nodes with u in ({:e}, {:e}) x max; need {DECAY_MIN_NODES}",
            xs.len(),
            DECAY_WINDOW.0,
            DECAY_WINDOW.1
        )));
    }
    let (a, b, residual) = fit_line(&xs, &ys);
    let r_window = (
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    Ok(DecayFit { c: -b, amplitude: a.exp(), r_window, residual, nodes: xs.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationMetrics {
    /// `min_{x ∈ M} |x_ε - x|` in original coordinates.
    pub dist_to_m: f64,
    /// `L²` distance between the peak-aligned solution and the reference profile.
    pub profile_gap: f64,
    /// Integer shift applied to the solution.
    pub shift: [i64; 3],
}

/// Half-width of the local search for the alignment shift.
const ALIGN_SEARCH: i64 = 2;

/// Peak location error and profile distance of a semiclassical solution.
pub fn concentration_metrics(
    out: &SemiclassicalOutcome,
    pot: &PotentialSpec,
    u_ref: &Field,
) -> Result<ConcentrationMetrics> {
    let dist_to_m = pot
        .minimizers
        .iter()
        .map(|x| dist3(out.peak_original, *x))
        .fold(f64::INFINITY, f64::min);
    let u = &out.result.u;
    let bg = match u.grid() {
        Grid::Box(b) => *b,
        Grid::Radial(_) => return Err(Error::UnsupportedBackend("metrics need a box solution".into())),
    };
    let reference = match u_ref.grid() {
        Grid::Radial(_) => resample_radial(u_ref, *u.grid(), [0.0; 3])?,
        g if g == u.grid() => u_ref.clone(),
        _ => return Err(Error::Input("reference profile lives on a different box".into())),
    };
    let n = bg.n as i64;
    let (vu, vr) = (u.values(), reference.values());
    let shifted = |s: [i64; 3], i: usize| {
        let [a, b, c] = bg.split(i);
        let idx = [a as i64 + s[0], b as i64 + s[1], c as i64 + s[2]].map(|v| v.rem_euclid(n) as usize);
        vu[bg.index(idx[0], idx[1], idx[2])]
    };
    // Start from the offset between the two maxima, then refine locally.
    let pu = bg.split(u.argmax());
    let pr = bg.split(reference.argmax());
    let base = [0, 1, 2].map(|k| pu[k] as i64 - pr[k] as i64);
    let mut best = (f64::NEG_INFINITY, base);
    for dx in -ALIGN_SEARCH..=ALIGN_SEARCH {
        for dy in -ALIGN_SEARCH..=ALIGN_SEARCH {
            for dz in -ALIGN_SEARCH..=ALIGN_SEARCH {
                let s = [base[0] + dx, base[1] + dy, base[2] + dz];
                let corr = par::sum(vr.len(), |i| shifted(s, i) * vr[i]);
                if corr > best.0 {
                    best = (corr, s);
                }
            }
        }
    }
    let s = best.1;
    let vol = bg.cell_volume();
    let gap = (vol * par::sum(vr.len(), |i| (shifted(s, i) - vr[i]).powi(2))).sqrt();
    Ok(ConcentrationMetrics { dist_to_m, profile_gap: gap, shift: s })
}
