//! The Riesz potential `I_α * g` on the radial and box backends.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::fft3::SpectralConvolver;
use crate::model::{riesz_normalization, BoxGrid, Field, Grid, RadialGrid};
use crate::par;
use crate::quad::GaussLegendre;

/// Largest radial grid for which the dense plan (α ≠ 2) is built.
pub const MAX_DENSE_RADIAL: usize = 16384;

/// Tail amplitude above which a truncation warning is logged.
const TAIL_LEVEL: f64 = 1e-8;

enum Plan {
    /// Row-major `n x n` product-integration weights.
    RadialDense { matrix: Vec<f64> },
    /// α = 2: the kernel splits into prefix and suffix sums.
    RadialNewton { inner: Vec<f64>, outer: Vec<f64>, diag: Vec<f64> },
    /// Real, even kernel spectrum on the octant `(m/2 + 1)^3`, scaled by `h³`.
    Box { conv: SpectralConvolver, spectrum: Vec<f64>, half: usize },
}

/// `I_α` as a linear operator on fields of one grid.
pub struct RieszOperator {
    alpha: f64,
    grid: Grid,
    weights: Vec<f64>,
    radii: Vec<f64>,
    plan: Plan,
    sign: f64,
}

impl std::fmt::Debug for RieszOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RieszOperator")
            .field("alpha", &self.alpha)
            .field("grid", &self.grid)
            .field("sign", &self.sign)
            .finish()
    }
}

impl RieszOperator {
    /// Build the operator for dimension `n_dim` on `grid`. Both backends are
    /// three-dimensional.
    pub fn new(n_dim: usize, alpha: f64, grid: Grid) -> Result<Self> {
        if n_dim != 3 {
            return Err(Error::UnsupportedBackend(format!(
                "the {} backend solves N = 3 only (got N = {n_dim})",
                grid.backend_name()
            )));
        }
        let a = riesz_normalization(n_dim, alpha)?;
        let weights = grid.weights();
        let radii = par::collect(grid.len(), |i| grid.radius(i));
        let plan = match grid {
            Grid::Radial(g) if alpha == 2.0 => newton_plan(&g, a),
            Grid::Radial(g) => {
                if g.n > MAX_DENSE_RADIAL {
                    return Err(Error::Config(format!(
                        "radial grids for alpha != 2 are limited to n <= {MAX_DENSE_RADIAL} (got {})",
                        g.n
                    )));
                }
                dense_plan(&g, alpha, a)
            }
            Grid::Box(g) => box_plan(&g, alpha, a),
        };
        Ok(Self { alpha, grid, weights, radii, plan, sign: 1.0 })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Flip the kernel sign. Test hook for the self-check battery.
    #[doc(hidden)]
    pub fn inject_sign_fault(&mut self) {
        self.sign = -self.sign;
    }

    /// Whether `K` is symmetric in the weighted inner product.
    pub fn is_self_adjoint(&self) -> bool {
        matches!(self.plan, Plan::Box { .. })
    }

    fn check(&self, g: &Field) -> Result<()> {
        if g.grid() != &self.grid {
            return Err(Error::Input("field grid does not match the operator grid".into()));
        }
        g.check_finite()?;
        self.warn_tail(g.values());
        Ok(())
    }

    fn warn_tail(&self, g: &[f64]) {
        let peak = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let edge = match self.grid {
            Grid::Radial(r) => g[r.n - 1].abs(),
            Grid::Box(b) => boundary_max(&b, g),
        };
        if edge > TAIL_LEVEL * peak.max(1.0) {
            log::warn!(
                "field does not decay at the {} boundary (|g| = {edge:.3e}); enlarge the domain",
                self.grid.backend_name()
            );
        }
    }

    /// `I_α * g` sampled on the grid.
    pub fn apply(&self, g: &Field) -> Result<Field> {
        self.check(g)?;
        Ok(Field::from_vec_unchecked(self.grid, self.apply_values(g.values())))
    }

    /// Unchecked `K g`.
    pub fn apply_values(&self, g: &[f64]) -> Vec<f64> {
        let s = self.sign;
        let n = g.len();
        match &self.plan {
            Plan::RadialDense { matrix } => par::collect(n, |i| {
                let row = &matrix[i * n..(i + 1) * n];
                s * row.iter().zip(g).map(|(k, v)| k * v).sum::<f64>()
            }),
            Plan::RadialNewton { inner, outer, diag } => {
                let mut out = vec![0.0; n];
                let mut below = 0.0;
                for i in 0..n {
                    out[i] = (below + diag[i] * g[i]) / self.radii[i];
                    below += inner[i] * g[i];
                }
                let mut above = 0.0;
                for i in (0..n).rev() {
                    out[i] = s * (out[i] + above);
                    above += outer[i] * g[i];
                }
                out
            }
            Plan::Box { conv, spectrum, half } => {
                let m = conv.m();
                let mult = box_multiplier(spectrum, *half, m, s);
                conv.apply_real(g, mult)
            }
        }
    }

    /// Unchecked weighted adjoint `W⁻¹ Kᵀ W h`.
    pub fn apply_adjoint_values(&self, h: &[f64]) -> Vec<f64> {
        let s = self.sign;
        let n = h.len();
        let w = &self.weights;
        match &self.plan {
            Plan::RadialDense { matrix } => par::collect(n, |j| {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += matrix[i * n + j] * w[i] * h[i];
                }
                s * acc / w[j]
            }),
            Plan::RadialNewton { inner, outer, diag } => {
                let mut out = vec![0.0; n];
                let mut above = 0.0;
                for j in (0..n).rev() {
                    out[j] = inner[j] * above + diag[j] * w[j] * h[j] / self.radii[j];
                    above += w[j] * h[j] / self.radii[j];
                }
                let mut below = 0.0;
                for j in 0..n {
                    out[j] = s * (out[j] + outer[j] * below) / w[j];
                    below += w[j] * h[j];
                }
                out
            }
            Plan::Box { .. } => self.apply_values(h),
        }
    }

    /// `(K + K†) / 2`, the operator whose quadratic form equals `⟨K g, g⟩`.
    pub fn apply_symmetric_values(&self, g: &[f64]) -> Vec<f64> {
        if self.is_self_adjoint() {
            return self.apply_values(g);
        }
        let a = self.apply_values(g);
        let b = self.apply_adjoint_values(g);
        a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
    }

    /// Symmetric part applied to two fields; the box backend packs both into one transform.
    pub fn apply_symmetric_pair(&self, g: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match &self.plan {
            Plan::Box { conv, spectrum, half } => {
                let mult = box_multiplier(spectrum, *half, conv.m(), self.sign);
                conv.apply_real_pair(g, h, mult)
            }
            _ => (self.apply_symmetric_values(g), self.apply_symmetric_values(h)),
        }
    }

    /// `∫ (I_α * g) h`.
    pub fn pairing(&self, g: &Field, h: &Field) -> Result<f64> {
        g.check_same_grid(h)?;
        self.check(g)?;
        h.check_finite()?;
        let kg = self.apply_values(g.values());
        Ok(self.weighted_dot(&kg, h.values()))
    }

    pub fn weighted_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let w = &self.weights;
        par::sum(a.len(), |i| w[i] * a[i] * b[i])
    }
}

fn box_multiplier(spectrum: &[f64], half: usize, m: usize, sign: f64) -> impl Fn(usize, usize, usize) -> f64 + Sync + Send + '_ {
    move |a, b, c| {
        let f = |k: usize| if k <= m / 2 { k } else { m - k };
        sign * spectrum[(f(a) * half + f(b)) * half + f(c)]
    }
}

fn boundary_max(g: &BoxGrid, v: &[f64]) -> f64 {
    let n = g.n;
    let mut edge = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for &(a, b, c) in &[(0, i, j), (i, 0, j), (i, j, 0)] {
                edge = edge.max(v[g.index(a, b, c)].abs());
            }
        }
    }
    edge
}

fn newton_plan(g: &RadialGrid, a: f64) -> Plan {
    // With A_2 = 1/(4π): (K g)(r) = (4π A / r) ∫ g(s) s min(r, s) ds.
    let scale = 4.0 * PI * a;
    let n = g.n;
    let mut inner = vec![0.0; n];
    let mut outer = vec![0.0; n];
    let mut diag = vec![0.0; n];
    for j in 0..n {
        let (lo, hi, r) = (g.face(j), g.face(j + 1), g.node(j));
        inner[j] = scale * (hi.powi(3) - lo.powi(3)) / 3.0;
        outer[j] = scale * (hi * hi - lo * lo) / 2.0;
        diag[j] = scale * ((r.powi(3) - lo.powi(3)) / 3.0 + r * (hi * hi - r * r) / 2.0);
    }
    Plan::RadialNewton { inner, outer, diag }
}

/// `∫_lo^hi s [(r+s)^β - |r-s|^β] ds / β` for `β = α - 1`, or the logarithmic
/// limit `∫ s ln((r+s)/|r-s|) ds` when `β = 0`.
fn cell_bracket(r: f64, lo: f64, hi: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        let plus = |s: f64| 0.5 * (s * s - r * r) * (s + r).ln() - 0.25 * s * s + 0.5 * r * s;
        let minus = |s: f64| {
            let d = (s - r).abs();
            let l = if d > 0.0 { 0.5 * (s * s - r * r) * d.ln() } else { 0.0 };
            l - 0.25 * s * s - 0.5 * r * s
        };
        let split = |f: &dyn Fn(f64) -> f64| {
            if lo < r && r < hi {
                f(r) - f(lo) + f(hi) - f(r)
            } else {
                f(hi) - f(lo)
            }
        };
        return split(&plus) - split(&minus);
    }
    let (b1, b2) = (beta + 1.0, beta + 2.0);
    let plus = |s: f64| {
        let t = r + s;
        t.powf(b2) / b2 - r * t.powf(b1) / b1
    };
    let below = |s: f64| {
        let t = r - s;
        -(r * t.powf(b1) / b1 - t.powf(b2) / b2)
    };
    let above = |s: f64| {
        let t = s - r;
        t.powf(b2) / b2 + r * t.powf(b1) / b1
    };
    let minus = if hi <= r {
        below(hi) - below(lo)
    } else if lo >= r {
        above(hi) - above(lo)
    } else {
        below(r) - below(lo) + above(hi) - above(r)
    };
    (plus(hi) - plus(lo) - minus) / beta
}

fn dense_plan(g: &RadialGrid, alpha: f64, a: f64) -> Plan {
    let n = g.n;
    let beta = alpha - 1.0;
    let mut matrix = vec![0.0; n * n];
    par::chunks_with_scratch(&mut matrix, n, || (), |i, row, _| {
        let r = g.node(i);
        let pre = a * 2.0 * PI / r;
        for (j, k) in row.iter_mut().enumerate() {
            *k = pre * cell_bracket(r, g.face(j), g.face(j + 1), beta);
        }
    });
    Plan::RadialDense { matrix }
}

/// Average of `|x|^(α-3)` over the unit cube `[-1/2, 1/2]^3`.
pub fn cube_singular_average(alpha: f64) -> f64 {
    // Homogeneity turns the volume average into a face integral:
    // (3/α) ∫∫ (1/4 + y² + z²)^((α-3)/2) dy dz over [-1/2, 1/2]².
    let gl = GaussLegendre::new(48);
    let e = (alpha - 3.0) / 2.0;
    // Split at 0 so each panel's integrand is smooth.
    let inner = |y: f64| {
        gl.integrate(-0.5, 0.0, |z| (0.25 + y * y + z * z).powf(e))
            + gl.integrate(0.0, 0.5, |z| (0.25 + y * y + z * z).powf(e))
    };
    3.0 / alpha * (gl.integrate(-0.5, 0.0, inner) + gl.integrate(0.0, 0.5, inner))
}

fn box_plan(g: &BoxGrid, alpha: f64, a: f64) -> Plan {
    let n = g.n;
    let m = 2 * n;
    let half = m / 2 + 1;
    let h = g.spacing();
    let e = alpha - 3.0;
    let center = a * cube_singular_average(alpha) * h.powf(e);
    // Kernel on the octant; the full padded kernel is its even extension.
    let mut data = par::collect(half * half * half, |idx| {
        let (x, y, z) = (idx / (half * half), (idx / half) % half, idx % half);
        if idx == 0 {
            center
        } else {
            let d = h * ((x * x + y * y + z * z) as f64).sqrt();
            a * d.powf(e)
        }
    });
    let fft = FftPlanner::new().plan_fft_forward(m);
    for axis in 0..3 {
        even_pass(&mut data, half, m, axis, &fft);
    }
    let vol = h * h * h;
    data.iter_mut().for_each(|v| *v *= vol);
    Plan::Box { conv: SpectralConvolver::new(n, m), spectrum: data, half }
}

/// Transform an even real array along one axis, storing only the octant.
fn even_pass(data: &mut [f64], half: usize, m: usize, axis: usize, fft: &Arc<dyn Fft<f64>>) {
    let stride = [half * half, half, 1][axis];
    let base = |l: usize| {
        let (p, q) = (l / half, l % half);
        match axis {
            0 => p * half + q,
            1 => p * half * half + q,
            _ => (p * half + q) * half,
        }
    };
    let src: &[f64] = data;
    let lines: Vec<Vec<f64>> = par::collect(half * half, |l| {
        let b = base(l);
        let mut line: Vec<Complex64> = (0..m)
            .map(|k| {
                let kk = if k < half { k } else { m - k };
                Complex64::new(src[b + kk * stride], 0.0)
            })
            .collect();
        fft.process(&mut line);
        line[..half].iter().map(|c| c.re).collect()
    });
    for (l, line) in lines.into_iter().enumerate() {
        let b = base(l);
        for (k, v) in line.into_iter().enumerate() {
            data[b + k * stride] = v;
        }
    }
}
