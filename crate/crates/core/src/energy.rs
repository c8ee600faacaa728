//! Energy functionals, their first variations and the discrete Laplacians.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft3::{signed_bin, SpectralConvolver};
use crate::model::{BoxGrid, Domain, Field, Grid, Nonlinearity, PotentialSpec, ProblemParams, RadialGrid};
use crate::par;
use crate::riesz::RieszOperator;

/// Components of an energy evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total: f64,
    /// `∫|∇u|²`.
    pub kinetic: f64,
    /// `∫ c u²` with `c = a` or `c = V_ε`.
    pub mass_term: f64,
    /// `∫ (I_α * F(u)) F(u)`.
    pub nonlocal: f64,
    /// `Q_ε(u)`, zero for the limit problem.
    pub penalty: f64,
    pub lambda: f64,
}

impl EnergyReport {
    fn assemble(kinetic: f64, mass_term: f64, nonlocal: f64, penalty: f64, lambda: f64) -> Self {
        let total = 0.5 * kinetic + 0.5 * mass_term - 0.5 * lambda * nonlocal + penalty;
        Self { total, kinetic, mass_term, nonlocal, penalty, lambda }
    }
}

/// Settings of the rescaled, penalized problem at one ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiclassicalConfig {
    pub eps: f64,
    /// Penalization exponent `ν`.
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Sup-norm bound `κ` defining the cap; `1.2 max U` when absent.
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Explicit cap `k`; `f(κ) + 1` when absent.
    #[serde(default)]
    pub cap: Option<f64>,
    /// Inner cutoff radius `β` of the initial guess (original coordinates).
    #[serde(default)]
    pub cutoff_beta: Option<f64>,
    /// Tube radius `d`, reported only.
    #[serde(default)]
    pub tube_radius: Option<f64>,
    /// Drop `Q_ε` entirely.
    #[serde(default)]
    pub ignore_penalty: bool,
}

fn default_nu() -> f64 {
    1.0
}

impl SemiclassicalConfig {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            nu: 1.0,
            kappa: None,
            cap: None,
            cutoff_beta: None,
            tube_radius: None,
            ignore_penalty: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::Config(format!("eps = {} must be positive", self.eps)));
        }
        if !(self.nu > 0.0) {
            return Err(Error::Config(format!("nu = {} must be positive", self.nu)));
        }
        for (name, v) in [("kappa", self.kappa), ("cap", self.cap), ("cutoff_beta", self.cutoff_beta)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("{name} = {v} must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// `-Δ` and `(-Δ + a)⁻¹` on one grid.
pub enum LaplaceOperator {
    /// Finite-volume stencil with zero Dirichlet data at `r_max`.
    Radial { grid: RadialGrid, conductance: Vec<f64>, weights: Vec<f64> },
    /// Spectral symbols on the periodic box.
    Box { grid: BoxGrid, conv: SpectralConvolver, freq: Vec<f64> },
}

impl std::fmt::Debug for LaplaceOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LaplaceOperator::Radial { grid, .. } => write!(f, "LaplaceOperator::Radial({grid:?})"),
            LaplaceOperator::Box { grid, .. } => write!(f, "LaplaceOperator::Box({grid:?})"),
        }
    }
}

impl LaplaceOperator {
    pub fn new(grid: Grid) -> Self {
        match grid {
            Grid::Radial(g) => {
                let h = g.spacing();
                // conductance[i] couples cell i-1 and cell i across face i;
                // the last entry couples cell n-1 to the boundary value 0.
                let mut conductance: Vec<f64> =
                    (0..=g.n).map(|i| 4.0 * PI * g.face(i).powi(2) / h).collect();
                conductance[g.n] *= 2.0;
                let weights = (0..g.n).map(|i| g.cell_volume(i)).collect();
                LaplaceOperator::Radial { grid: g, conductance, weights }
            }
            Grid::Box(g) => {
                let n = g.n;
                let freq = (0..n).map(|k| PI / g.half_width * signed_bin(k, n)).collect();
                LaplaceOperator::Box { grid: g, conv: SpectralConvolver::new(n, n), freq }
            }
        }
    }

    pub fn grid(&self) -> Grid {
        match self {
            LaplaceOperator::Radial { grid, .. } => Grid::Radial(*grid),
            LaplaceOperator::Box { grid, .. } => Grid::Box(*grid),
        }
    }

    /// `-Δu`.
    pub fn neg_laplacian(&self, u: &[f64]) -> Vec<f64> {
        match self {
            LaplaceOperator::Radial { conductance: c, weights: w, .. } => {
                let n = u.len();
                par::collect(n, |i| {
                    let left = if i > 0 { c[i] * (u[i] - u[i - 1]) } else { 0.0 };
                    let right = if i + 1 < n { c[i + 1] * (u[i] - u[i + 1]) } else { c[n] * u[i] };
                    (left + right) / w[i]
                })
            }
            LaplaceOperator::Box { conv, freq, .. } => {
                conv.apply_real(u, |a, b, c| freq[a] * freq[a] + freq[b] * freq[b] + freq[c] * freq[c])
            }
        }
    }

    /// `∫|∇u|²`, equal to `⟨u, -Δu⟩` on both backends.
    pub fn kinetic(&self, u: &[f64]) -> f64 {
        match self {
            LaplaceOperator::Radial { conductance: c, .. } => {
                let n = u.len();
                par::sum(n, |i| {
                    let d = if i > 0 { c[i] * (u[i] - u[i - 1]).powi(2) } else { 0.0 };
                    if i + 1 == n {
                        d + c[n] * u[i] * u[i]
                    } else {
                        d
                    }
                })
            }
            LaplaceOperator::Box { grid, .. } => {
                let lap = self.neg_laplacian(u);
                grid.cell_volume() * par::sum(u.len(), |i| u[i] * lap[i])
            }
        }
    }

    /// Solve `(-Δ + a) u = g`.
    pub fn solve_shifted(&self, g: &[f64], a: f64) -> Vec<f64> {
        match self {
            LaplaceOperator::Radial { conductance: c, weights: w, .. } => {
                let n = g.len();
                let lower = |i: usize| -c[i] / w[i];
                let upper = |i: usize| -c[i + 1] / w[i];
                let diag = |i: usize| (if i > 0 { c[i] } else { 0.0 } + c[i + 1]) / w[i] + a;
                // Thomas algorithm; the matrix is diagonally dominant for a > 0.
                let mut cp = vec![0.0; n];
                let mut dp = vec![0.0; n];
                cp[0] = upper(0) / diag(0);
                dp[0] = g[0] / diag(0);
                for i in 1..n {
                    let den = diag(i) - lower(i) * cp[i - 1];
                    cp[i] = if i + 1 < n { upper(i) / den } else { 0.0 };
                    dp[i] = (g[i] - lower(i) * dp[i - 1]) / den;
                }
                for i in (0..n - 1).rev() {
                    dp[i] -= cp[i] * dp[i + 1];
                }
                dp
            }
            LaplaceOperator::Box { conv, freq, .. } => conv.apply_real(g, |x, y, z| {
                1.0 / (freq[x] * freq[x] + freq[y] * freq[y] + freq[z] * freq[z] + a)
            }),
        }
    }
}

/// The penalization weight `χ_ε` on a box grid.
#[derive(Clone, Debug)]
pub struct Penalty {
    chi: Vec<f64>,
}

impl Penalty {
    pub fn new(grid: &BoxGrid, domain: &Domain, eps: f64, nu: f64) -> Self {
        let outside = eps.powf(-nu);
        let chi = par::collect(grid.len(), |i| {
            let y = grid.position(i);
            if domain.contains([eps * y[0], eps * y[1], eps * y[2]]) {
                0.0
            } else {
                outside
            }
        });
        Self { chi }
    }

    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    /// `∫ χ_ε u²`.
    pub fn outer_mass(&self, u: &[f64], weights: &[f64]) -> f64 {
        let chi = &self.chi;
        par::sum(u.len(), |i| weights[i] * chi[i] * u[i] * u[i])
    }

    /// `Q_ε(u)` and its gradient.
    pub fn evaluate(&self, u: &[f64], weights: &[f64]) -> (f64, Vec<f64>) {
        let excess = (self.outer_mass(u, weights) - 1.0).max(0.0);
        let chi = &self.chi;
        let grad = par::collect(u.len(), |i| 4.0 * excess * chi[i] * u[i]);
        (excess * excess, grad)
    }
}

/// The mass coefficient `c(x)`: constant `a` or a sampled potential.
#[derive(Clone, Debug)]
pub enum MassCoefficient {
    Constant(f64),
    Sampled(Vec<f64>),
}

impl MassCoefficient {
    fn at(&self, i: usize) -> f64 {
        match self {
            MassCoefficient::Constant(a) => *a,
            MassCoefficient::Sampled(v) => v[i],
        }
    }

    /// Smallest value of `c`.
    pub fn floor(&self) -> f64 {
        match self {
            MassCoefficient::Constant(a) => *a,
            MassCoefficient::Sampled(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// Largest value of `c`; the preconditioner shift, so that unit steps
    /// never overshoot the far-field modes.
    pub fn ceiling(&self) -> f64 {
        match self {
            MassCoefficient::Constant(a) => *a,
            MassCoefficient::Sampled(v) => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// `I(u) = ½∫|∇u|² + ½∫c u² - (λ/2)∫(I_α * F(u))F(u) + Q(u)`, fully assembled.
#[derive(Debug)]
pub struct Functional {
    params: ProblemParams,
    nl: Nonlinearity,
    riesz: RieszOperator,
    lap: LaplaceOperator,
    mass: MassCoefficient,
    penalty: Option<Penalty>,
    lambda: f64,
    weights: Vec<f64>,
}

/// Scaling data of `t ↦ I(t u)` for one field `u`.
#[derive(Clone, Debug)]
pub struct ScalingData {
    /// `∫|∇u|²`.
    pub kinetic: f64,
    /// `∫ c u²`.
    pub mass_term: f64,
    /// `∫ χ u²` (zero without a penalty).
    pub outer_mass: f64,
    /// Exponents `e_j` of the power terms of `F`.
    pub exponents: Vec<f64>,
    /// `P_jk = ⟨K_s(c_j u^e_j), c_k u^e_k⟩`.
    pub pair: Vec<Vec<f64>>,
    /// `K_s(c_j u^e_j)`.
    pub potentials: Vec<Vec<f64>>,
    /// `-Δu`.
    pub neg_lap: Vec<f64>,
    pub max: f64,
    pub lambda: f64,
}

impl ScalingData {
    pub fn quadratic(&self) -> f64 {
        self.kinetic + self.mass_term
    }

    /// `∫(I_α * F(t u)) F(t u)` on the polynomial branch.
    pub fn nonlocal_at(&self, t: f64) -> f64 {
        let e = &self.exponents;
        let mut b = 0.0;
        for j in 0..e.len() {
            for k in 0..e.len() {
                b += t.powf(e[j] + e[k]) * self.pair[j][k];
            }
        }
        b
    }

    fn penalty_at(&self, t: f64) -> f64 {
        let s = (t * t * self.outer_mass - 1.0).max(0.0);
        s * s
    }

    /// `⟨I'(t u), t u⟩`.
    pub fn nehari_function(&self, t: f64) -> f64 {
        let e = &self.exponents;
        let mut d = 0.0;
        for j in 0..e.len() {
            for k in 0..e.len() {
                d += e[k] * t.powf(e[j] + e[k]) * self.pair[j][k];
            }
        }
        let pen = 4.0 * (t * t * self.outer_mass - 1.0).max(0.0) * t * t * self.outer_mass;
        t * t * self.quadratic() + pen - self.lambda * d
    }

    pub fn report_at(&self, t: f64) -> EnergyReport {
        EnergyReport::assemble(
            t * t * self.kinetic,
            t * t * self.mass_term,
            self.nonlocal_at(t),
            self.penalty_at(t),
            self.lambda,
        )
    }
}

impl Functional {
    /// `I_λ` of the limit problem on a radial or box grid.
    pub fn limit(params: &ProblemParams, grid: Grid, lambda: f64) -> Result<Self> {
        params.validate()?;
        check_lambda(lambda)?;
        let nl = Nonlinearity::from_params(params);
        Self::build(params, nl, grid, MassCoefficient::Constant(params.a), None, lambda)
    }

    /// `Γ_ε = P_ε + Q_ε` of the rescaled problem on a box grid, with the
    /// given (normally capped) nonlinearity.
    pub fn semiclassical(
        params: &ProblemParams,
        pot: &PotentialSpec,
        cfg: &SemiclassicalConfig,
        grid: Grid,
        nl: Nonlinearity,
    ) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let bg = match grid {
            Grid::Box(b) => b,
            Grid::Radial(_) => {
                return Err(Error::UnsupportedBackend(
                    "the semiclassical problem needs the box backend".into(),
                ))
            }
        };
        check_box_covers(&bg, pot, cfg.eps)?;
        let eps = cfg.eps;
        let v = par::collect(bg.len(), |i| {
            let y = bg.position(i);
            pot.eval([eps * y[0], eps * y[1], eps * y[2]])
        });
        let penalty = if cfg.ignore_penalty || pot.domain == Domain::Everywhere {
            None
        } else {
            Some(Penalty::new(&bg, &pot.domain, eps, cfg.nu))
        };
        Self::build(params, nl, grid, MassCoefficient::Sampled(v), penalty, 1.0)
    }

    /// Same as [`Functional::limit`] but with an explicit nonlinearity.
    pub fn with_nonlinearity(
        params: &ProblemParams,
        nl: Nonlinearity,
        grid: Grid,
        lambda: f64,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        Self::build(params, nl, grid, MassCoefficient::Constant(params.a), None, lambda)
    }

    fn build(
        params: &ProblemParams,
        nl: Nonlinearity,
        grid: Grid,
        mass: MassCoefficient,
        penalty: Option<Penalty>,
        lambda: f64,
    ) -> Result<Self> {
        let riesz = RieszOperator::new(params.n, params.alpha, grid)?;
        let weights = grid.weights();
        Ok(Self { params: *params, nl, riesz, lap: LaplaceOperator::new(grid), mass, penalty, lambda, weights })
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nl
    }

    pub fn riesz(&self) -> &RieszOperator {
        &self.riesz
    }

    pub fn riesz_mut(&mut self) -> &mut RieszOperator {
        &mut self.riesz
    }

    pub fn laplace(&self) -> &LaplaceOperator {
        &self.lap
    }

    pub fn mass(&self) -> &MassCoefficient {
        &self.mass
    }

    pub fn penalty(&self) -> Option<&Penalty> {
        self.penalty.as_ref()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn grid(&self) -> Grid {
        *self.riesz.grid()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check(&self, u: &Field) -> Result<()> {
        if u.grid() != self.riesz.grid() {
            return Err(Error::Input("field grid does not match the functional".into()));
        }
        u.check_finite()
    }

    fn mass_term(&self, u: &[f64]) -> f64 {
        let w = &self.weights;
        par::sum(u.len(), |i| w[i] * self.mass.at(i) * u[i] * u[i])
    }

    fn big_f(&self, u: &[f64]) -> Vec<f64> {
        par::collect(u.len(), |i| self.nl.eval(u[i]).1)
    }

    pub fn energy(&self, u: &Field) -> Result<EnergyReport> {
        self.check(u)?;
        Ok(self.energy_values(u.values()))
    }

    pub fn energy_values(&self, u: &[f64]) -> EnergyReport {
        let kinetic = self.lap.kinetic(u);
        let mass_term = self.mass_term(u);
        let big_f = self.big_f(u);
        let nonlocal = self.riesz.weighted_dot(&self.riesz.apply_values(&big_f), &big_f);
        let penalty = match &self.penalty {
            Some(p) => p.evaluate(u, &self.weights).0,
            None => 0.0,
        };
        EnergyReport::assemble(kinetic, mass_term, nonlocal, penalty, self.lambda)
    }

    pub fn gradient(&self, u: &Field) -> Result<Field> {
        self.check(u)?;
        Ok(Field::from_vec_unchecked(self.grid(), self.gradient_values(u.values())))
    }

    /// `-Δu + c u - λ K_s(F(u)) f(u) + Q'(u)`.
    pub fn gradient_values(&self, u: &[f64]) -> Vec<f64> {
        let big_f = self.big_f(u);
        let pot = self.riesz.apply_symmetric_values(&big_f);
        let lap = self.lap.neg_laplacian(u);
        let pen = self.penalty.as_ref().map(|p| p.evaluate(u, &self.weights).1);
        par::collect(u.len(), |i| {
            let mut g = lap[i] + self.mass.at(i) * u[i] - self.lambda * pot[i] * self.nl.eval(u[i]).0;
            if let Some(p) = &pen {
                g += p[i];
            }
            g
        })
    }

    /// `⟨I'(u), u⟩` evaluated directly (valid on every branch of the cap).
    pub fn nehari_value(&self, u: &[f64]) -> f64 {
        let big_f = self.big_f(u);
        let pot = self.riesz.apply_symmetric_values(&big_f);
        let w = &self.weights;
        let drive = par::sum(u.len(), |i| w[i] * pot[i] * self.nl.eval(u[i]).0 * u[i]);
        let pen = match &self.penalty {
            Some(p) => {
                let om = p.outer_mass(u, w);
                4.0 * (om - 1.0).max(0.0) * om
            }
            None => 0.0,
        };
        self.lap.kinetic(u) + self.mass_term(u) + pen - self.lambda * drive
    }

    /// Scaling data for `t ↦ I(t u)`, exact while `t max u` stays below the cap.
    pub fn scaling_data(&self, u: &[f64]) -> ScalingData {
        let terms = self.nl.terms();
        let pieces: Vec<Vec<f64>> = terms
            .iter()
            .map(|pt| par::collect(u.len(), |i| if u[i] > 0.0 { pt.coeff * u[i].powf(pt.exponent) } else { 0.0 }))
            .collect();
        let mut potentials = Vec::with_capacity(pieces.len());
        let mut j = 0;
        while j < pieces.len() {
            if j + 1 < pieces.len() {
                let (a, b) = self.riesz.apply_symmetric_pair(&pieces[j], &pieces[j + 1]);
                potentials.push(a);
                potentials.push(b);
                j += 2;
            } else {
                potentials.push(self.riesz.apply_symmetric_values(&pieces[j]));
                j += 1;
            }
        }
        let pair: Vec<Vec<f64>> = (0..pieces.len())
            .map(|j| (0..pieces.len()).map(|k| self.riesz.weighted_dot(&potentials[j], &pieces[k])).collect())
            .collect();
        // Symmetrize against roundoff so the Nehari algebra sees an exact form.
        let pair: Vec<Vec<f64>> = (0..pair.len())
            .map(|j| (0..pair.len()).map(|k| 0.5 * (pair[j][k] + pair[k][j])).collect())
            .collect();
        let neg_lap = self.lap.neg_laplacian(u);
        let w = &self.weights;
        let kinetic = match self.lap {
            LaplaceOperator::Radial { .. } => self.lap.kinetic(u),
            LaplaceOperator::Box { .. } => par::sum(u.len(), |i| w[i] * u[i] * neg_lap[i]),
        };
        ScalingData {
            kinetic,
            mass_term: self.mass_term(u),
            outer_mass: self.penalty.as_ref().map_or(0.0, |p| p.outer_mass(u, w)),
            exponents: terms.iter().map(|pt| pt.exponent).collect(),
            pair,
            potentials,
            neg_lap,
            max: u.iter().copied().fold(0.0, f64::max),
            lambda: self.lambda,
        }
    }

    /// Gradient at `t u` from the scaling data of `u`, exact on the polynomial branch.
    pub fn gradient_scaled(&self, u: &[f64], t: f64, data: &ScalingData) -> Vec<f64> {
        let e = &data.exponents;
        let om = t * t * data.outer_mass;
        let pen_scale = 4.0 * (om - 1.0).max(0.0);
        let chi = self.penalty.as_ref().map(|p| p.chi());
        let te: Vec<f64> = e.iter().map(|&x| t.powf(x)).collect();
        par::collect(u.len(), |i| {
            let v = t * u[i];
            let mut pot = 0.0;
            for (j, p) in data.potentials.iter().enumerate() {
                pot += te[j] * p[i];
            }
            let mut g = t * data.neg_lap[i] + self.mass.at(i) * v - self.lambda * pot * self.nl.eval(v).0;
            if let Some(chi) = chi {
                g += pen_scale * chi[i] * v;
            }
            g
        })
    }

    /// Energy and gradient at `u`; the scaling data is reused while it is exact.
    pub fn state(&self, u: &[f64], data: &ScalingData) -> (EnergyReport, Vec<f64>) {
        if self.polynomial_at(data, 1.0) {
            (data.report_at(1.0), self.gradient_scaled(u, 1.0, data))
        } else {
            (self.energy_values(u), self.gradient_values(u))
        }
    }

    /// Whether the scaling data is exact at `t`.
    pub fn polynomial_at(&self, data: &ScalingData, t: f64) -> bool {
        self.nl.is_polynomial_up_to(t * data.max)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.5..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda = {lambda} outside [1/2, 1]")));
    }
    Ok(())
}

/// The box must hold `O_ε` plus five decay lengths `1/sqrt(inf V)`.
pub fn check_box_covers(grid: &BoxGrid, pot: &PotentialSpec, eps: f64) -> Result<()> {
    if let Domain::Ball { center, radius } = pot.domain {
        let reach = center.iter().map(|c| c.abs()).fold(0.0, f64::max) + radius;
        let margin = 5.0 / pot.kind.global_inf().sqrt();
        let need = reach / eps + margin;
        if grid.half_width < need {
            return Err(Error::Config(format!(
                "box half-width L = {} is too small for O_eps at eps = {eps}; use L >= {need:.3} \
                 (O_eps reaches {:.3}, plus {margin:.3} for decay)",
                grid.half_width,
                reach / eps
            )));
        }
    }
    Ok(())
}

/// `I_λ(u)` of the limit problem.
pub fn energy_limit(u: &Field, params: &ProblemParams, lambda: f64) -> Result<EnergyReport> {
    Functional::limit(params, *u.grid(), lambda)?.energy(u)
}

/// First variation of `I_λ` at `u`.
pub fn gradient_limit(u: &Field, params: &ProblemParams, lambda: f64) -> Result<Field> {
    Functional::limit(params, *u.grid(), lambda)?.gradient(u)
}

/// `Q_ε(u)` and its gradient for the domain `O`.
pub fn penalty_q(u: &Field, cfg: &SemiclassicalConfig, domain: &Domain) -> Result<(f64, Field)> {
    cfg.validate()?;
    let bg = match u.grid() {
        Grid::Box(b) => *b,
        Grid::Radial(_) => {
            return Err(Error::UnsupportedBackend("the penalty lives on the box backend".into()))
        }
    };
    let weights = u.grid().weights();
    let (value, grad) = Penalty::new(&bg, domain, cfg.eps, cfg.nu).evaluate(u.values(), &weights);
    Ok((value, Field::from_vec_unchecked(*u.grid(), grad)))
}

/// `Γ_ε(u)` with the cap `k` taken from `nl`.
pub fn energy_semiclassical(
    u: &Field,
    params: &ProblemParams,
    pot: &PotentialSpec,
    cfg: &SemiclassicalConfig,
    nl: Nonlinearity,
) -> Result<EnergyReport> {
    Functional::semiclassical(params, pot, cfg, *u.grid(), nl)?.energy(u)
}

/// Pohozaev functional `(N-2)/2 K + N/2 ∫c u² - (N+α)/2 λ B` of a report.
pub fn pohozaev_functional(params: &ProblemParams, e: &EnergyReport) -> f64 {
    let n = params.n as f64;
    (n - 2.0) / 2.0 * e.kinetic + n / 2.0 * e.mass_term - (n + params.alpha) / 2.0 * e.lambda * e.nonlocal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_potential, BoxGrid};

    fn radial(r_max: f64, n: usize) -> Grid {
        Grid::Radial(RadialGrid::new(r_max, n).unwrap())
    }

    #[test]
    fn zero_field_has_zero_energy_and_gradient() {
        let grid = radial(10.0, 64);
        let p = ProblemParams::default();
        let u = Field::zeros(grid);
        let e = energy_limit(&u, &p, 1.0).unwrap();
        assert_eq!(e, EnergyReport { lambda: 1.0, ..Default::default() });
        let g = gradient_limit(&u, &p, 1.0).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        assert!(matches!(energy_limit(&u, &p, 0.4), Err(Error::Domain(_))));
    }

    #[test]
    fn radial_kinetic_matches_gaussian() {
        // ∫|∇e^{-r²}|² = 4π ∫ 4r⁴ e^{-2r²} dr = 3 π^{3/2} / (2√2).
        let grid = radial(8.0, 4096);
        let lap = LaplaceOperator::new(grid);
        let u = Field::from_radial_fn(grid, |r| (-r * r).exp());
        let exact = 3.0 * PI.powf(1.5) / (2.0 * 2f64.sqrt());
        assert!((lap.kinetic(u.values()) - exact).abs() < 1e-5 * exact);
    }

    #[test]
    fn radial_shifted_inverse_is_second_order() {
        let err = |n: usize| {
            let grid = radial(8.0, n);
            let lap = LaplaceOperator::new(grid);
            let rhs = Field::from_radial_fn(grid, |r| (7.0 - 4.0 * r * r) * (-r * r).exp());
            let u = lap.solve_shifted(rhs.values(), 1.0);
            (0..n).map(|i| (u[i] - (-grid.radius(i).powi(2)).exp()).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(256), err(512));
        assert!(e2 < 1e-3 && e1 / e2 > 3.5, "{e1} {e2}");
    }

    #[test]
    fn box_shifted_inverse_is_exact_on_modes() {
        let bg = BoxGrid::new(PI, 16).unwrap();
        let lap = LaplaceOperator::new(Grid::Box(bg));
        let g = Field::from_point_fn(bg, |x| (2.0 * x[0] + x[2]).cos());
        let u = lap.solve_shifted(g.values(), 0.5);
        for (i, v) in u.iter().enumerate() {
            assert!((v - g.values()[i] / 5.5).abs() < 1e-12);
        }
        // The inverse undoes the forward operator.
        let a = 0.5;
        let fwd: Vec<f64> = lap.neg_laplacian(&u).iter().zip(&u).map(|(l, v)| l + a * v).collect();
        for (x, y) in fwd.iter().zip(g.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn radial_inverse_undoes_forward_operator() {
        let grid = radial(5.0, 100);
        let lap = LaplaceOperator::new(grid);
        let g: Vec<f64> = (0..100).map(|i| ((i as f64) * 0.3).sin()).collect();
        let u = lap.solve_shifted(&g, 2.0);
        let back: Vec<f64> = lap.neg_laplacian(&u).iter().zip(&u).map(|(l, v)| l + 2.0 * v).collect();
        for (x, y) in back.iter().zip(&g) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn penalty_dichotomy() {
        let bg = BoxGrid::new(8.0, 16).unwrap();
        let cfg = SemiclassicalConfig::new(0.5);
        let dom = Domain::Ball { center: [0.0; 3], radius: 1.5 };
        let inside = Field::from_radial_fn(Grid::Box(bg), |r| if r < 2.0 { 1.0 } else { 0.0 });
        let (v, g) = penalty_q(&inside, &cfg, &dom).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.values().iter().all(|&x| x == 0.0));
        // One unit of χ-mass above the threshold gives Q = s².
        let p = Penalty::new(&bg, &dom, 0.5, 1.0);
        let w = Grid::Box(bg).weights();
        let outside = Field::from_radial_fn(Grid::Box(bg), |r| if r > 4.0 { 1.0 } else { 0.0 });
        let om = p.outer_mass(outside.values(), &w);
        let scale = (1.3 / om).sqrt();
        let (v, _) = p.evaluate(outside.scaled(scale).values(), &w);
        assert!((v - 0.09).abs() < 1e-12);
    }

    #[test]
    fn constant_potential_matches_limit_energy() {
        let bg = BoxGrid::new(6.0, 16).unwrap();
        let p = ProblemParams::default();
        let nl = Nonlinearity::from_params(&p).with_truncation(3.0).unwrap();
        let pot = PotentialSpec::constant(1.0, [0.0; 3]);
        let mut cfg = SemiclassicalConfig::new(0.25);
        cfg.ignore_penalty = true;
        let u = Field::from_radial_fn(Grid::Box(bg), |r| (-r * r).exp());
        let a = energy_semiclassical(&u, &p, &pot, &cfg, nl.clone()).unwrap();
        let b = Functional::with_nonlinearity(&p, nl, Grid::Box(bg), 1.0).unwrap().energy(&u).unwrap();
        assert!((a.total - b.total).abs() <= 1e-12 * b.total.abs());
    }

    #[test]
    fn box_too_small_is_reported() {
        let bg = BoxGrid::new(6.0, 16).unwrap();
        let err = check_box_covers(&bg, &default_potential(), 0.25).unwrap_err().to_string();
        assert!(err.contains("L >="), "{err}");
    }

    fn directional_error(f: &Functional, u: &[f64], dir: &[f64], h: f64) -> f64 {
        let plus: Vec<f64> = u.iter().zip(dir).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = u.iter().zip(dir).map(|(a, b)| a - h * b).collect();
        let fd = (f.energy_values(&plus).total - f.energy_values(&minus).total) / (2.0 * h);
        let g = f.gradient_values(u);
        let exact = f.weights().iter().zip(&g).zip(dir).map(|((w, g), d)| w * g * d).sum::<f64>();
        (fd - exact).abs()
    }

    #[test]
    fn semiclassical_gradient_matches_difference_quotient() {
        let bg = BoxGrid::new(6.0, 16).unwrap();
        let grid = Grid::Box(bg);
        let p = ProblemParams::new(3, 2.0, 100.0, 3.1, 1.0).unwrap();
        let nl = Nonlinearity::from_params(&p).with_truncation(0.6).unwrap();
        let mut pot = default_potential();
        pot.domain = Domain::Ball { center: [0.0; 3], radius: 0.3 };
        let pot = PotentialSpec { m: 1.0, ..pot };
        let cfg = SemiclassicalConfig::new(0.5);
        let f = Functional::build(
            &p,
            nl,
            grid,
            MassCoefficient::Sampled(
                (0..bg.len()).map(|i| { let y = bg.position(i); pot.eval([0.5 * y[0], 0.5 * y[1], 0.5 * y[2]]) }).collect(),
            ),
            Some(Penalty::new(&bg, &pot.domain, cfg.eps, cfg.nu)),
            1.0,
        )
        .unwrap();
        let u: Vec<f64> = (0..bg.len()).map(|i| { let r = crate::model::norm3(bg.position(i)); 0.5 * (-r * r / 4.0).exp() }).collect();
        assert!(f.penalty().unwrap().outer_mass(&u, f.weights()) > 1.0);
        let dir: Vec<f64> = (0..bg.len()).map(|i| ((i * 7919 % 101) as f64 / 101.0 - 0.5) * (-crate::model::norm3(bg.position(i))).exp()).collect();
        let e1 = directional_error(&f, &u, &dir, 1e-3);
        let e2 = directional_error(&f, &u, &dir, 5e-4);
        assert!(e1 / e2 > 3.5 || e1 < 1e-10, "{e1} {e2}");
    }

    #[test]
    fn scaling_data_matches_direct_evaluation() {
        let grid = radial(10.0, 256);
        let p = ProblemParams::default();
        let f = Functional::limit(&p, grid, 0.8).unwrap();
        let u = Field::from_radial_fn(grid, |r| 0.7 * (-r * r / 2.0).exp());
        let data = f.scaling_data(u.values());
        for t in [0.5, 1.0, 1.7] {
            let v = u.scaled(t);
            let direct = f.energy(&v).unwrap();
            let fast = data.report_at(t);
            assert!((direct.total - fast.total).abs() < 1e-12 * direct.total.abs().max(1.0));
            let nd = f.nehari_value(v.values());
            assert!((nd - data.nehari_function(t)).abs() < 1e-11 * nd.abs().max(1.0));
            let g1 = f.gradient_values(v.values());
            let g2 = f.gradient_scaled(u.values(), t, &data);
            for i in 0..g1.len() {
                assert!((g1[i] - g2[i]).abs() < 1e-11 * g1[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn state_falls_back_to_direct_evaluation_above_the_cap() {
        let grid = radial(10.0, 256);
        let p = ProblemParams::default();
        let nl = Nonlinearity::from_params(&p).with_truncation(0.3).unwrap();
        let t_star = nl.cap().unwrap().t_star;
        let f = Functional::with_nonlinearity(&p, nl, grid, 1.0).unwrap();
        for amp in [0.2, 3.0 * t_star] {
            let u = Field::from_radial_fn(grid, |r| amp * (-r * r / 2.0).exp());
            let data = f.scaling_data(u.values());
            let (e, g) = f.state(u.values(), &data);
            let direct = f.energy(&u).unwrap();
            assert!((e.total - direct.total).abs() < 1e-12 * direct.total.abs().max(1.0), "amp {amp}");
            let gd = f.gradient_values(u.values());
            for i in 0..g.len() {
                assert!((g[i] - gd[i]).abs() < 1e-11 * gd[i].abs().max(1.0));
            }
        }
    }
}
