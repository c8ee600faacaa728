//! Problem parameters, the model nonlinearity, closed-form constants, the
//! instanton family and the two grid representations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::par;

/// Which member of the nonlinearity family a problem uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKind {
    /// `f(t) = t^p + mu t^(q-1)` with the HLS-critical power `p`.
    #[default]
    Model,
    /// `f(t) = t^p` alone. Admits no nontrivial solution; used as a probe.
    PureCritical,
}

/// Static symbols of the limit equation `-Δu + a u = (I_α * F(u)) f(u)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    /// Spatial dimension.
    #[serde(rename = "dimension")]
    pub n: usize,
    pub alpha: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub q: f64,
    /// Mass coefficient.
    pub a: f64,
    #[serde(default)]
    pub kind: NonlinearityKind,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self { n: 3, alpha: 2.0, mu: 1.0, q: 4.0, a: 1.0, kind: NonlinearityKind::Model }
    }
}

impl ProblemParams {
    /// Validated constructor for the model nonlinearity.
    pub fn new(n: usize, alpha: f64, mu: f64, q: f64, a: f64) -> Result<Self> {
        let p = Self { n, alpha, mu, q, a, kind: NonlinearityKind::Model };
        p.validate()?;
        Ok(p)
    }

    /// Parameters for the pure critical power `f(t) = t^p` (no subcritical term).
    pub fn pure_critical(n: usize, alpha: f64, a: f64) -> Result<Self> {
        let p = Self {
            n,
            alpha,
            mu: 0.0,
            q: 0.0,
            a,
            kind: NonlinearityKind::PureCritical,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n as f64;
        if self.n < 3 {
            return Err(Error::Domain(format!("N = {} violates N >= 3", self.n)));
        }
        let lo = (n - 4.0).max(0.0);
        if !(self.alpha > lo && self.alpha < n) {
            return Err(Error::Domain(format!(
                "alpha = {} violates (N-4)+ < alpha < N, i.e. {} < alpha < {}",
                self.alpha, lo, n
            )));
        }
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(Error::Domain(format!("a = {} violates a > 0", self.a)));
        }
        if self.kind == NonlinearityKind::PureCritical {
            return Ok(());
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::Domain(format!("mu = {} violates mu > 0", self.mu)));
        }
        let upper = (n + self.alpha) / (n - 2.0);
        if !(self.q > 2.0 && self.q < upper) {
            return Err(Error::Domain(format!(
                "q = {} violates 2 < q < (N+alpha)/(N-2) = {}",
                self.q, upper
            )));
        }
        let floor = (1.0 + self.alpha / (n - 2.0)).max((n + self.alpha) / (2.0 * (n - 2.0)));
        if !(self.q > floor) {
            return Err(Error::Domain(format!(
                "q = {} violates q > max{{1 + alpha/(N-2), (N+alpha)/(2(N-2))}} = {}",
                self.q, floor
            )));
        }
        Ok(())
    }

    /// The HLS-critical power `p = (2+α)/(N-2)` appearing in `f`.
    pub fn critical_power(&self) -> f64 {
        (2.0 + self.alpha) / (self.n as f64 - 2.0)
    }

    pub fn with_mass(mut self, a: f64) -> Self {
        self.a = a;
        self
    }
}

/// `A_α = Γ((N-α)/2) / (Γ(α/2) π^(N/2) 2^α)`, the Riesz potential normalization.
pub fn riesz_normalization(n: usize, alpha: f64) -> Result<f64> {
    check_alpha(n, alpha)?;
    let nf = n as f64;
    Ok(gamma((nf - alpha) / 2.0) / (gamma(alpha / 2.0) * PI.powf(nf / 2.0) * 2f64.powf(alpha)))
}

/// Sharp Hardy-Littlewood-Sobolev constant for `s = r = 2N/(N+α)`.
pub fn hls_sharp_constant(n: usize, alpha: f64) -> Result<f64> {
    check_alpha(n, alpha)?;
    let nf = n as f64;
    Ok(PI.powf((nf - alpha) / 2.0) * gamma(alpha / 2.0) / gamma((nf + alpha) / 2.0)
        * (gamma(nf / 2.0) / gamma(nf)).powf(-alpha / nf))
}

fn check_alpha(n: usize, alpha: f64) -> Result<()> {
    if n == 0 || !(alpha > 0.0 && alpha < n as f64) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (0, {n})")));
    }
    Ok(())
}

/// One term `coeff * t^exponent` of the primitive `F`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerTerm {
    pub coeff: f64,
    pub exponent: f64,
}

/// Cap `f_k = min(f, k)` together with the bound `κ` it was derived from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// The cap `k`.
    pub level: f64,
    /// Reference sup-norm bound `κ`; `level > max f` on `[0, κ]`.
    pub kappa: f64,
    /// Point where `f(t_star) = level`; `f_k = f` on `[0, t_star]`.
    pub t_star: f64,
}

/// `f(t) = Σ c e t^(e-1)` and `F(t) = Σ c t^e` for `t > 0`, zero for `t <= 0`,
/// with an optional cap.
#[derive(Clone, Debug, PartialEq)]
pub struct Nonlinearity {
    terms: Vec<PowerTerm>,
    cap: Option<Truncation>,
}

impl Nonlinearity {
    pub fn from_params(p: &ProblemParams) -> Self {
        let pc = p.critical_power();
        let mut terms = vec![PowerTerm { coeff: 1.0 / (pc + 1.0), exponent: pc + 1.0 }];
        if p.kind == NonlinearityKind::Model {
            terms.push(PowerTerm { coeff: p.mu / p.q, exponent: p.q });
        }
        Self { terms, cap: None }
    }

    /// `F(t) = t^p / p`; a homogeneous test fixture.
    pub fn pure_power(p: f64) -> Self {
        Self { terms: vec![PowerTerm { coeff: 1.0 / p, exponent: p }], cap: None }
    }

    pub fn terms(&self) -> &[PowerTerm] {
        &self.terms
    }

    pub fn cap(&self) -> Option<&Truncation> {
        self.cap.as_ref()
    }

    /// Cap at `k = f(κ) + 1`.
    pub fn with_truncation(self, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::Config(format!("kappa = {kappa} must be positive")));
        }
        let level = self.f(kappa) + 1.0;
        self.with_cap(level, kappa)
    }

    /// Cap at an explicit level `k`, which must exceed `max f` on `[0, κ]`.
    pub fn with_cap(mut self, level: f64, kappa: f64) -> Result<Self> {
        // f is increasing on t > 0, so max over [0, κ] is f(κ).
        if !(level > self.f(kappa)) {
            return Err(Error::Config(format!(
                "cap k = {level} must exceed max f on [0, kappa] = {}",
                self.f(kappa)
            )));
        }
        let mut hi = kappa.max(1.0);
        while self.f(hi) < level {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.f(mid) < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.cap = Some(Truncation { level, kappa, t_star: 0.5 * (lo + hi) });
        Ok(self)
    }

    /// Untruncated `f`.
    pub fn f(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.terms.iter().map(|pt| pt.coeff * pt.exponent * t.powf(pt.exponent - 1.0)).sum()
    }

    /// Untruncated `F`.
    pub fn big_f(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.terms.iter().map(|pt| pt.coeff * t.powf(pt.exponent)).sum()
    }

    /// `f'` of the untruncated nonlinearity.
    pub fn f_prime(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.terms
            .iter()
            .map(|pt| pt.coeff * pt.exponent * (pt.exponent - 1.0) * t.powf(pt.exponent - 2.0))
            .sum()
    }

    /// Evaluate `(f, F)` or, with `truncated`, `(f_k, F_k)`.
    pub fn f_eval(&self, t: f64, truncated: bool) -> Result<(f64, f64)> {
        if !truncated {
            return Ok((self.f(t), self.big_f(t)));
        }
        let cap = self
            .cap
            .ok_or_else(|| Error::Config("truncated evaluation requested without a cap".into()))?;
        Ok(Self::capped(self, &cap, t))
    }

    fn capped(&self, cap: &Truncation, t: f64) -> (f64, f64) {
        if t <= cap.t_star {
            (self.f(t), self.big_f(t))
        } else {
            (cap.level, self.big_f(cap.t_star) + cap.level * (t - cap.t_star))
        }
    }

    /// `(f, F)` using the cap whenever one is configured.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        match &self.cap {
            Some(cap) => self.capped(cap, t),
            None => (self.f(t), self.big_f(t)),
        }
    }

    /// Whether `F(t u) = Σ c t^e u^e` holds exactly for fields with `max u <= max`.
    pub fn is_polynomial_up_to(&self, max: f64) -> bool {
        match &self.cap {
            Some(cap) => max <= cap.t_star,
            None => true,
        }
    }
}

/// Cell-centered radial grid on `(0, r_max)`: `r_i = (i + 1/2) h`. Three dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialGrid {
    pub r_max: f64,
    pub n: usize,
}

impl RadialGrid {
    pub fn new(r_max: f64, n: usize) -> Result<Self> {
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(Error::Config(format!("radial r_max = {r_max} must be positive")));
        }
        if n < 16 {
            return Err(Error::Config(format!("radial grid needs n >= 16, got {n}")));
        }
        Ok(Self { r_max, n })
    }

    pub fn spacing(&self) -> f64 {
        self.r_max / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.spacing()
    }

    /// Face `i` sits at `i h`; faces run from 0 to `n`.
    pub fn face(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    /// Exact volume of the spherical shell of cell `i`.
    pub fn cell_volume(&self, i: usize) -> f64 {
        let (a, b) = (self.face(i), self.face(i + 1));
        4.0 * PI / 3.0 * (b * b * b - a * a * a)
    }
}

/// Periodic cube `[-L, L)^3` with `n` nodes per axis; node `i` at `-L + i h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxGrid {
    pub half_width: f64,
    pub n: usize,
}

impl BoxGrid {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::Config(format!("box half-width = {half_width} must be positive")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Config(format!("box nodes per axis = {n} must be a power of two >= 4")));
        }
        Ok(Self { half_width, n })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn split(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.split(idx);
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    /// Index of the node nearest to the origin (exact: `n` is even).
    pub fn center_index(&self) -> usize {
        let c = self.n / 2;
        self.index(c, c, c)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum Grid {
    Radial(RadialGrid),
    Box(BoxGrid),
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::Radial(g) => g.n,
            Grid::Box(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        match self {
            Grid::Radial(g) => g.spacing(),
            Grid::Box(g) => g.spacing(),
        }
    }

    /// Quadrature weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        match self {
            Grid::Radial(g) => g.cell_volume(i),
            Grid::Box(g) => g.cell_volume(),
        }
    }

    /// Distance of node `i` from the origin.
    pub fn radius(&self, i: usize) -> f64 {
        match self {
            Grid::Radial(g) => g.node(i),
            Grid::Box(g) => norm3(g.position(i)),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        par::collect(self.len(), |i| self.weight(i))
    }

    /// Re-run the constructor checks (grids read from a file bypass them).
    pub fn validate(&self) -> Result<()> {
        match self {
            Grid::Radial(g) => RadialGrid::new(g.r_max, g.n).map(|_| ()),
            Grid::Box(g) => BoxGrid::new(g.half_width, g.n).map(|_| ()),
        }
    }

    pub fn backend_name(&self) -> &'static str {
        match self {
            Grid::Radial(_) => "radial",
            Grid::Box(_) => "box",
        }
    }
}

pub(crate) fn norm3(x: [f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

pub(crate) fn dist3(x: [f64; 3], y: [f64; 3]) -> f64 {
    norm3([x[0] - y[0], x[1] - y[1], x[2] - y[2]])
}

/// Scalar function sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Input(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    /// Sample a radial profile `g(|x|)`.
    pub fn from_radial_fn<F: Fn(f64) -> f64 + Sync + Send>(grid: Grid, g: F) -> Self {
        let values = par::collect(grid.len(), |i| g(grid.radius(i)));
        Self { grid, values }
    }

    /// Sample `g(x)` on a box grid.
    pub fn from_point_fn<F: Fn([f64; 3]) -> f64 + Sync + Send>(grid: BoxGrid, g: F) -> Self {
        let values = par::collect(grid.len(), |i| g(grid.position(i)));
        Self { grid: Grid::Box(grid), values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        self.grid == other.grid
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::Input("fields live on different grids".into()))
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Input(format!("non-finite value at node {i}"))),
            None => Ok(()),
        }
    }

    /// `∫ u` by the grid's cell quadrature.
    pub fn integral(&self) -> f64 {
        let g = self.grid;
        let v = &self.values;
        par::sum(v.len(), |i| g.weight(i) * v[i])
    }

    /// `∫ u v`.
    pub fn dot(&self, other: &Field) -> f64 {
        let g = self.grid;
        let (a, b) = (&self.values, &other.values);
        par::sum(a.len(), |i| g.weight(i) * a[i] * b[i])
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `∫ |u|^s` for `s > 0`.
    pub fn integral_pow(&self, s: f64) -> f64 {
        let g = self.grid;
        let v = &self.values;
        par::sum(v.len(), |i| g.weight(i) * v[i].abs().powf(s))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index of the first maximal node.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn map<F: Fn(f64) -> f64 + Sync + Send>(&self, f: F) -> Field {
        let v = &self.values;
        Field { grid: self.grid, values: par::collect(v.len(), |i| f(v[i])) }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64 + Sync + Send>(&self, other: &Field, f: F) -> Field {
        let (a, b) = (&self.values, &other.values);
        Field { grid: self.grid, values: par::collect(a.len(), |i| f(a[i], b[i])) }
    }

    pub fn scaled(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn positive_part(&self) -> Field {
        self.map(|v| v.max(0.0))
    }
}

/// `U_ε(x) = (N(N-2)ε²)^((N-2)/4) / (ε² + |x|²)^((N-2)/2)`.
pub fn instanton(n: usize, eps: f64, r: f64) -> f64 {
    let nf = n as f64;
    (nf * (nf - 2.0) * eps * eps).powf((nf - 2.0) / 4.0) / (eps * eps + r * r).powf((nf - 2.0) / 2.0)
}

/// Radial derivative of [`instanton`].
pub fn instanton_derivative(n: usize, eps: f64, r: f64) -> f64 {
    let nf = n as f64;
    -(nf - 2.0) * r / (eps * eps + r * r) * instanton(n, eps, r)
}

fn bump_tail(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

fn bump_tail_derivative(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp() / (t * t)
    } else {
        0.0
    }
}

/// Smooth cutoff in `s = |x|`: 1 on `s <= 1`, 0 on `s >= 2`, built from `exp(-1/t)`.
pub fn cutoff_profile(s: f64) -> f64 {
    let a = bump_tail(2.0 - s);
    let b = bump_tail(s - 1.0);
    a / (a + b)
}

pub fn cutoff_profile_derivative(s: f64) -> f64 {
    if s <= 1.0 || s >= 2.0 {
        return 0.0;
    }
    let a = bump_tail(2.0 - s);
    let b = bump_tail(s - 1.0);
    let da = -bump_tail_derivative(2.0 - s);
    let db = bump_tail_derivative(s - 1.0);
    (da * b - a * db) / ((a + b) * (a + b))
}

/// `ψ_ε = φ U_ε`, the cut-off instanton supported in the ball of radius 2.
pub fn cutoff_instanton(n: usize, eps: f64, r: f64) -> f64 {
    cutoff_profile(r) * instanton(n, eps, r)
}

/// Bounded domain descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Domain {
    Ball { center: [f64; 3], radius: f64 },
    /// The whole space; no penalization region.
    Everywhere,
}

impl Domain {
    pub fn contains(&self, x: [f64; 3]) -> bool {
        match self {
            Domain::Ball { center, radius } => dist3(x, *center) < *radius,
            Domain::Everywhere => true,
        }
    }

    /// Distance from `x` to the complement; infinite for the whole space.
    pub fn dist_to_complement(&self, x: [f64; 3]) -> f64 {
        match self {
            Domain::Ball { center, radius } => (radius - dist3(x, *center)).max(0.0),
            Domain::Everywhere => f64::INFINITY,
        }
    }
}

/// Closed-form potentials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `V(x) = base - depth * exp(-|x - center|²)`.
    GaussianWell { base: f64, depth: f64, center: [f64; 3] },
    Constant { value: f64 },
}

impl PotentialKind {
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        match *self {
            PotentialKind::GaussianWell { base, depth, center } => {
                let d = dist3(x, center);
                base - depth * (-d * d).exp()
            }
            PotentialKind::Constant { value } => value,
        }
    }

    /// `inf V` over the whole space.
    pub fn global_inf(&self) -> f64 {
        match *self {
            PotentialKind::GaussianWell { base, depth, .. } => base - depth.max(0.0),
            PotentialKind::Constant { value } => value,
        }
    }
}

/// Schrödinger potential with its well `O`, the level `m = inf_O V` and minimizers `M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub domain: Domain,
    pub m: f64,
    pub minimizers: Vec<[f64; 3]>,
}

impl PotentialSpec {
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        self.kind.eval(x)
    }

    /// A constant potential on the whole space with one designated point.
    pub fn constant(value: f64, designated: [f64; 3]) -> Self {
        Self {
            kind: PotentialKind::Constant { value },
            domain: Domain::Everywhere,
            m: value,
            minimizers: vec![designated],
        }
    }

    /// Check positivity, the local well condition and the minimizer set.
    pub fn validate(&self) -> Result<()> {
        let inf = self.kind.global_inf();
        if !(inf > 0.0) {
            return Err(Error::Config(format!("potential violates inf V > 0 (inf V = {inf})")));
        }
        if self.minimizers.is_empty() {
            return Err(Error::Config("potential needs at least one minimizer".into()));
        }
        for x in &self.minimizers {
            let v = self.eval(*x);
            if (v - self.m).abs() > 1e-10 * self.m.abs().max(1.0) {
                return Err(Error::Config(format!("V({x:?}) = {v} differs from m = {}", self.m)));
            }
            if !(self.domain.dist_to_complement(*x) > 0.0) {
                return Err(Error::Config(format!("minimizer {x:?} is not interior to O")));
            }
        }
        if let Domain::Ball { center, radius } = self.domain {
            let boundary_min = sphere_points(2048)
                .into_iter()
                .map(|d| self.eval([center[0] + radius * d[0], center[1] + radius * d[1], center[2] + radius * d[2]]))
                .fold(f64::INFINITY, f64::min);
            if !(self.m < boundary_min) {
                return Err(Error::Config(format!(
                    "potential violates m < min over the boundary of O ({} >= {boundary_min})",
                    self.m
                )));
            }
            // m must be the infimum over O: probe a lattice inside the ball.
            let k = 24;
            for i in 0..=k {
                for j in 0..=k {
                    for l in 0..=k {
                        let p = [
                            center[0] + radius * (2.0 * i as f64 / k as f64 - 1.0),
                            center[1] + radius * (2.0 * j as f64 / k as f64 - 1.0),
                            center[2] + radius * (2.0 * l as f64 / k as f64 - 1.0),
                        ];
                        if self.domain.contains(p) && self.eval(p) < self.m - 1e-10 {
                            return Err(Error::Config(format!(
                                "V({p:?}) = {} lies below m = {}",
                                self.eval(p),
                                self.m
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Minimum of `V` over the boundary of `O` (infinite when `O` is everything).
    pub fn boundary_min(&self) -> f64 {
        match self.domain {
            Domain::Ball { center, radius } => sphere_points(2048)
                .into_iter()
                .map(|d| self.eval([center[0] + radius * d[0], center[1] + radius * d[1], center[2] + radius * d[2]]))
                .fold(f64::INFINITY, f64::min),
            Domain::Everywhere => f64::INFINITY,
        }
    }

    /// `min over M of dist(x, complement of O)`.
    pub fn well_depth_radius(&self) -> f64 {
        self.minimizers
            .iter()
            .map(|x| self.domain.dist_to_complement(*x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `V(x) = 2 - exp(-|x|²)`, `O` the ball of radius 3/2, `m = 1`, `M = {0}`.
pub fn default_potential() -> PotentialSpec {
    PotentialSpec {
        kind: PotentialKind::GaussianWell { base: 2.0, depth: 1.0, center: [0.0; 3] },
        domain: Domain::Ball { center: [0.0; 3], radius: 1.5 },
        m: 1.0,
        minimizers: vec![[0.0; 3]],
    }
}

/// Fibonacci lattice on the unit sphere.
fn sphere_points(count: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let rho = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            [rho * th.cos(), rho * th.sin(), z]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn riesz_constant_values() {
        let a = riesz_normalization(3, 2.0).unwrap();
        assert!((a - 1.0 / (4.0 * PI)).abs() < 1e-14);
        let a5 = riesz_normalization(5, 1.0).unwrap();
        assert!((a5 - 1.0 / (2.0 * PI.powi(3))).abs() < 1e-14);
        let near = riesz_normalization(3, 3.0 - 1e-9).unwrap();
        assert!(near > 0.0 && near.is_finite());
        assert!(riesz_normalization(3, 3.0).is_err());
        assert!(riesz_normalization(3, 0.0).is_err());
    }

    #[test]
    fn hls_constant_values() {
        let c = hls_sharp_constant(3, 2.0).unwrap();
        assert!((c - 2.2940107035415984).abs() < 1e-12);
        let c4 = hls_sharp_constant(4, 2.0).unwrap();
        assert!((c4 - PI / 2.0 * 6f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn model_nonlinearity_values() {
        let nl = Nonlinearity::from_params(&ProblemParams::new(3, 2.0, 1.0, 4.0, 1.0).unwrap());
        let (f, big) = nl.f_eval(1.0, false).unwrap();
        assert!((f - 2.0).abs() < 1e-15);
        assert!((big - 0.45).abs() < 1e-15);
        assert_eq!(nl.f_eval(-3.0, false).unwrap(), (0.0, 0.0));
        assert!(matches!(nl.f_eval(1.0, true), Err(Error::Config(_))));
        let capped = nl.with_cap(1.5, 0.5).unwrap();
        let (fk, _) = capped.f_eval(1.0, true).unwrap();
        assert_eq!(fk, 1.5);
    }

    #[test]
    fn truncation_level_follows_kappa() {
        let nl = Nonlinearity::from_params(&ProblemParams::default()).with_truncation(2.0).unwrap();
        let cap = *nl.cap().unwrap();
        assert!((cap.level - (16.0 + 8.0 + 1.0)).abs() < 1e-12);
        assert!(cap.t_star > cap.kappa);
        assert!((nl.f(cap.t_star) - cap.level).abs() < 1e-9);
        // F_k stays continuous across t_star.
        let (_, below) = nl.eval(cap.t_star - 1e-9);
        let (_, above) = nl.eval(cap.t_star + 1e-9);
        assert!((below - above).abs() < 1e-6);
    }

    #[test]
    fn parameter_validation_names_inequality() {
        let err = ProblemParams::new(3, 2.0, 1.0, 3.0, 1.0).unwrap_err().to_string();
        assert!(err.contains("q > max"), "{err}");
        let err = ProblemParams::new(3, 3.5, 1.0, 4.0, 1.0).unwrap_err().to_string();
        assert!(err.contains("alpha"), "{err}");
        let err = ProblemParams::new(3, 2.0, 1.0, 5.0, 1.0).unwrap_err().to_string();
        assert!(err.contains("(N+alpha)/(N-2)"), "{err}");
        assert!(ProblemParams::new(3, 2.0, -1.0, 4.0, 1.0).is_err());
        assert!(ProblemParams::new(3, 2.0, 1.0, 4.0, 0.0).is_err());
        assert!(ProblemParams::pure_critical(3, 2.0, 1.0).is_ok());
    }

    #[test]
    fn instanton_values() {
        assert!((instanton(3, 1.0, 0.0) - 3f64.powf(0.25)).abs() < 1e-14);
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let v = instanton(4, 0.7, 0.05 * k as f64);
            assert!(v < prev);
            prev = v;
        }
        assert_eq!(cutoff_instanton(3, 0.3, 2.5), 0.0);
        assert_eq!(cutoff_profile(0.5), 1.0);
        assert!((cutoff_profile(1.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cutoff_derivative_matches_difference_quotient() {
        for &s in &[1.1, 1.37, 1.5, 1.8, 1.95] {
            let h = 1e-6;
            let fd = (cutoff_profile(s + h) - cutoff_profile(s - h)) / (2.0 * h);
            assert!((fd - cutoff_profile_derivative(s)).abs() < 1e-7);
        }
    }

    #[test]
    fn default_potential_is_admissible() {
        let pot = default_potential();
        pot.validate().unwrap();
        assert_eq!(pot.eval([0.0; 3]), 1.0);
        assert!((pot.boundary_min() - (2.0 - (-2.25f64).exp())).abs() < 1e-12);
        assert!(pot.kind.global_inf() > 0.0);
    }

    #[test]
    fn bad_potential_is_rejected() {
        let mut pot = default_potential();
        pot.m = 0.9;
        assert!(pot.validate().is_err());
        let mut pot = default_potential();
        pot.domain = Domain::Ball { center: [0.0; 3], radius: 0.0 };
        assert!(pot.validate().is_err());
    }

    #[test]
    fn box_grid_indexing() {
        let g = BoxGrid::new(2.0, 8).unwrap();
        let idx = g.index(3, 5, 7);
        assert_eq!(g.split(idx), [3, 5, 7]);
        assert_eq!(g.position(g.center_index()), [0.0; 3]);
        assert!(BoxGrid::new(2.0, 12).is_err());
        assert!(RadialGrid::new(1.0, 8).is_err());
    }

    #[test]
    fn radial_volumes_sum_to_ball() {
        let g = RadialGrid::new(2.0, 64).unwrap();
        let total: f64 = (0..g.n).map(|i| g.cell_volume(i)).sum();
        assert!((total - 4.0 * PI / 3.0 * 8.0).abs() < 1e-12);
    }
}
