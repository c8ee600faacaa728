//! Gauss-Legendre rules and composite integration on panels.

use std::f64::consts::PI;

/// An `n`-point Gauss-Legendre rule on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Integrate `f` over [a, b].
    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Composite rule over consecutive breakpoints.
    pub fn integrate_panels<F: Fn(f64) -> f64>(&self, breaks: &[f64], f: F) -> f64 {
        breaks
            .windows(2)
            .map(|w| self.integrate(w[0], w[1], &f))
            .sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// Geometric breakpoints `lo, lo*ratio, ...` refined toward `lo` plus a
/// leading `[0, lo]` panel. Used for integrands concentrated near the origin.
pub fn graded_breaks(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let mut breaks = vec![0.0];
    let decades = (hi / lo).log10().max(0.0);
    let count = ((decades * per_decade as f64).ceil() as usize).max(1);
    for k in 0..=count {
        breaks.push(lo * (hi / lo).powf(k as f64 / count as f64));
    }
    breaks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        let gl = GaussLegendre::new(8);
        // Degree 15 is integrated exactly by 8 points.
        let v = gl.integrate(0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
        let s: f64 = gl.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn graded_panels_integrate_peaked_function() {
        let gl = GaussLegendre::new(16);
        let eps = 1e-3;
        let br = graded_breaks(eps * 1e-2, 10.0, 4);
        let v = gl.integrate_panels(&br, |r| eps / (eps * eps + r * r));
        let exact = (10.0 / eps).atan();
        assert!((v - exact).abs() < 1e-10, "{v} vs {exact}");
    }
}
