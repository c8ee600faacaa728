//! Three-dimensional FFT convolution with a real multiplier.
//!
//! Fields live on `n³` nodes. The transform length per axis is `m >= n`;
//! with `m = 2n` the input is zero-padded and only the physical corner of
//! the output is kept, which turns the periodic product into an aperiodic
//! convolution. Passes skip lines that are known to be zero on input or
//! are discarded on output.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::par;

/// Number of y-lines gathered at once in the strided pass.
const Z_BLOCK: usize = 16;

pub struct SpectralConvolver {
    n: usize,
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralConvolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralConvolver").field("n", &self.n).field("m", &self.m).finish()
    }
}

#[derive(Clone, Copy)]
struct SyncPtr(*mut Complex64);
unsafe impl Send for SyncPtr {}
unsafe impl Sync for SyncPtr {}

impl SpectralConvolver {
    pub fn new(n: usize, m: usize) -> Self {
        assert!(m >= n && n > 0);
        let mut planner = FftPlanner::new();
        Self { n, m, fwd: planner.plan_fft_forward(m), inv: planner.plan_fft_inverse(m) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Multiply the length-`m` spectrum of `input` by `mult(kx, ky, kz)` and
    /// return the first `n` nodes per axis of the inverse transform.
    pub fn apply<M>(&self, input: &[Complex64], mult: M) -> Vec<Complex64>
    where
        M: Fn(usize, usize, usize) -> f64 + Sync + Send,
    {
        let (n, m) = (self.n, self.m);
        assert_eq!(input.len(), n * n * n);
        let slab = m * m;
        let mut buf = vec![Complex64::new(0.0, 0.0); n * slab];
        let scratch_len = self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len());
        let zero = Complex64::new(0.0, 0.0);

        // Load and transform along z for the nonzero lines.
        par::chunks_with_scratch(&mut buf, slab, || vec![zero; scratch_len], |x, s, scratch| {
            for y in 0..n {
                let line = &mut s[y * m..y * m + m];
                let src = &input[(x * n + y) * n..(x * n + y) * n + n];
                line[..n].copy_from_slice(src);
                self.fwd.process_with_scratch(line, scratch);
            }
        });
        self.y_pass(&mut buf, &*self.fwd);

        // Along x: forward, multiply, inverse, keep the physical rows.
        let ptr = SyncPtr(buf.as_mut_ptr());
        par::for_each_with_scratch(
            m,
            || (vec![zero; m * Z_BLOCK], vec![zero; scratch_len]),
            |y, (lines, scratch)| {
                let p = ptr;
                for z0 in (0..m).step_by(Z_BLOCK) {
                    let zb = Z_BLOCK.min(m - z0);
                    for dz in 0..zb {
                        let line = &mut lines[dz * m..dz * m + m];
                        for (x, v) in line[..n].iter_mut().enumerate() {
                            // Each y owns the disjoint set {(x, y, z)}.
                            *v = unsafe { *p.0.add(x * slab + y * m + z0 + dz) };
                        }
                        line[n..].fill(zero);
                        self.fwd.process_with_scratch(line, scratch);
                        for (kx, v) in line.iter_mut().enumerate() {
                            *v *= mult(kx, y, z0 + dz);
                        }
                        self.inv.process_with_scratch(line, scratch);
                        for (x, v) in line[..n].iter().enumerate() {
                            unsafe { *p.0.add(x * slab + y * m + z0 + dz) = *v };
                        }
                    }
                }
            },
        );

        self.y_pass(&mut buf, &*self.inv);
        let norm = 1.0 / (m * m * m) as f64;
        let mut out = vec![zero; n * n * n];
        par::chunks_with_scratch(&mut buf, slab, || vec![zero; scratch_len], |_, s, scratch| {
            for y in 0..n {
                let line = &mut s[y * m..y * m + m];
                self.inv.process_with_scratch(line, scratch);
            }
        });
        par::fill(&mut out, |i| {
            let (x, y, z) = (i / (n * n), (i / n) % n, i % n);
            buf[x * slab + y * m + z] * norm
        });
        out
    }

    /// Transform every y-line of every stored x-slab, gathering blocks of z.
    fn y_pass(&self, buf: &mut [Complex64], fft: &dyn Fft<f64>) {
        let m = self.m;
        let zero = Complex64::new(0.0, 0.0);
        let scratch_len = fft.get_inplace_scratch_len();
        par::chunks_with_scratch(
            buf,
            m * m,
            || (vec![zero; m * Z_BLOCK], vec![zero; scratch_len]),
            |_, s, (lines, scratch)| {
                for z0 in (0..m).step_by(Z_BLOCK) {
                    let zb = Z_BLOCK.min(m - z0);
                    for y in 0..m {
                        for dz in 0..zb {
                            lines[dz * m + y] = s[y * m + z0 + dz];
                        }
                    }
                    for dz in 0..zb {
                        fft.process_with_scratch(&mut lines[dz * m..dz * m + m], scratch);
                    }
                    for y in 0..m {
                        for dz in 0..zb {
                            s[y * m + z0 + dz] = lines[dz * m + y];
                        }
                    }
                }
            },
        );
    }

    /// Convolve a real field with a real multiplier.
    pub fn apply_real<M>(&self, g: &[f64], mult: M) -> Vec<f64>
    where
        M: Fn(usize, usize, usize) -> f64 + Sync + Send,
    {
        let input = par::collect(g.len(), |i| Complex64::new(g[i], 0.0));
        self.apply(&input, mult).into_iter().map(|c| c.re).collect()
    }

    /// Convolve two real fields in one complex transform. The multiplier
    /// must satisfy `mult(k) = mult(-k)` so that real inputs stay real.
    pub fn apply_real_pair<M>(&self, g: &[f64], h: &[f64], mult: M) -> (Vec<f64>, Vec<f64>)
    where
        M: Fn(usize, usize, usize) -> f64 + Sync + Send,
    {
        let input = par::collect(g.len(), |i| Complex64::new(g[i], h[i]));
        let out = self.apply(&input, mult);
        (out.iter().map(|c| c.re).collect(), out.iter().map(|c| c.im).collect())
    }
}

/// Signed frequency index of bin `k` for transform length `m`.
pub fn signed_bin(k: usize, m: usize) -> f64 {
    if k <= m / 2 {
        k as f64
    } else {
        k as f64 - m as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_cyclic(g: &[f64], ker: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * n * n];
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    let mut s = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            for c in 0..n {
                                let d = ((x + n - a) % n, (y + n - b) % n, (z + n - c) % n);
                                s += g[(a * n + b) * n + c] * ker[(d.0 * n + d.1) * n + d.2];
                            }
                        }
                    }
                    out[(x * n + y) * n + z] = s;
                }
            }
        }
        out
    }

    #[test]
    fn identity_multiplier_round_trips() {
        let n = 8;
        let g: Vec<f64> = (0..n * n * n).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        for m in [n, 2 * n] {
            let c = SpectralConvolver::new(n, m);
            let out = c.apply_real(&g, |_, _, _| 1.0);
            for (a, b) in g.iter().zip(&out) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padded_product_is_aperiodic_convolution() {
        let n = 4;
        let m = 2 * n;
        let g: Vec<f64> = (0..n * n * n).map(|i| 1.0 + (i as f64 * 0.3).cos()).collect();
        // An even kernel on the padded grid.
        let kfun = |d: usize| {
            let s = signed_bin(d, m);
            1.0 / (1.0 + s * s)
        };
        let ker: Vec<f64> = (0..m * m * m)
            .map(|i| kfun(i / (m * m)) * kfun((i / m) % m) * kfun(i % m))
            .collect();
        // Spectrum of the separable kernel.
        let mut planner = FftPlanner::new();
        let f = planner.plan_fft_forward(m);
        let mut line: Vec<Complex64> = (0..m).map(|d| Complex64::new(kfun(d), 0.0)).collect();
        f.process(&mut line);
        let spec: Vec<f64> = line.iter().map(|c| c.re).collect();
        let conv = SpectralConvolver::new(n, m);
        let out = conv.apply_real(&g, |a, b, c| spec[a] * spec[b] * spec[c]);
        let mut gp = vec![0.0; m * m * m];
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    gp[(x * m + y) * m + z] = g[(x * n + y) * n + z];
                }
            }
        }
        let full = naive_cyclic(&gp, &ker, m);
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    let a = out[(x * n + y) * n + z];
                    let b = full[(x * m + y) * m + z];
                    assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "{a} {b}");
                }
            }
        }
    }

    #[test]
    fn packed_pair_matches_separate_calls() {
        let n = 8;
        let g: Vec<f64> = (0..n * n * n).map(|i| (i as f64 * 0.1).sin()).collect();
        let h: Vec<f64> = (0..n * n * n).map(|i| (i as f64 * 0.07).cos()).collect();
        let c = SpectralConvolver::new(n, 2 * n);
        let m = 2 * n;
        let mult = |a: usize, b: usize, d: usize| {
            1.0 / (1.0 + signed_bin(a, m).abs() + signed_bin(b, m).abs() + signed_bin(d, m).abs())
        };
        let (p, q) = c.apply_real_pair(&g, &h, mult);
        let p1 = c.apply_real(&g, mult);
        let q1 = c.apply_real(&h, mult);
        for i in 0..p.len() {
            assert!((p[i] - p1[i]).abs() < 1e-12 && (q[i] - q1[i]).abs() < 1e-12);
        }
    }
}
