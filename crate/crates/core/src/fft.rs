//! Two-dimensional FFTs and zero-padded linear convolution on grids.
//!
//! Spectra are kept in transposed layout: entry `kx * py + ky`. Both passes
//! batch many rows per rustfft call and split rows across workers; each row is
//! transformed identically whatever the worker count, so results do not depend
//! on the thread pool.

use crate::parallel::{self, Execution};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

const ROWS_PER_TASK: usize = 8;

/// Plans for a `px x py` complex transform.
pub struct Fft2 {
    px: usize,
    py: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    exec: Execution,
}

impl Fft2 {
    pub fn new(px: usize, py: usize, exec: Execution) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            px,
            py,
            fwd_x: planner.plan_fft_forward(px),
            inv_x: planner.plan_fft_inverse(px),
            fwd_y: planner.plan_fft_forward(py),
            inv_y: planner.plan_fft_inverse(py),
            exec,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.px, self.py)
    }

    /// Forward transform of a real `nx x ny` block placed at the origin of the
    /// padded array. Returns the spectrum in transposed layout.
    pub fn forward_real(&self, data: &[f64], nx: usize, ny: usize) -> Vec<Complex64> {
        assert!(nx <= self.px && ny <= self.py && data.len() == nx * ny);
        let (px, py) = (self.px, self.py);
        // Rows past ny are zero and stay zero under the x pass.
        let mut rows = vec![Complex64::new(0.0, 0.0); ny * px];
        for (iy, row) in rows.chunks_mut(px).enumerate() {
            for ix in 0..nx {
                row[ix].re = data[iy * nx + ix];
            }
        }
        self.batch(&self.fwd_x, &mut rows, px);
        let mut cols = transpose(self.exec, &rows, ny, px, px, py);
        self.batch(&self.fwd_y, &mut cols, py);
        cols
    }

    /// Inverse transform (including the `1 / (px py)` factor), returning the
    /// real part of the leading `nx x ny` block.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>, nx: usize, ny: usize) -> Vec<f64> {
        let (px, py) = (self.px, self.py);
        assert_eq!(spectrum.len(), px * py);
        self.batch(&self.inv_y, &mut spectrum, py);
        // Back to row layout, keeping only the rows we need.
        let mut rows = transpose(self.exec, &spectrum, px, py, ny, px);
        self.batch(&self.inv_x, &mut rows, px);
        let scale = 1.0 / (px * py) as f64;
        let mut out = Vec::with_capacity(nx * ny);
        for row in rows.chunks(px) {
            out.extend(row[..nx].iter().map(|c| c.re * scale));
        }
        out
    }

    fn batch(&self, plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64], len: usize) {
        parallel::for_each_chunk_mut(self.exec, data, len * ROWS_PER_TASK, |_, chunk| plan.process(chunk));
    }
}

/// `src` holds `rows` rows of length `cols`. The result holds the first
/// `out_rows` columns as rows of length `out_len`, zero-filled past `rows`.
fn transpose(
    exec: Execution,
    src: &[Complex64],
    rows: usize,
    cols: usize,
    out_rows: usize,
    out_len: usize,
) -> Vec<Complex64> {
    debug_assert!(out_rows <= cols);
    let mut out = vec![Complex64::new(0.0, 0.0); out_rows * out_len];
    let keep = rows.min(out_len);
    parallel::for_each_chunk_mut(exec, &mut out, out_len, |c, dst| {
        for r in 0..keep {
            dst[r] = src[r * cols + c];
        }
    });
    out
}

/// Linear convolution `out[i] = sum_j k[i - j] in[j]` on an `nx x ny` grid,
/// with the kernel given as a function of the integer offset.
pub struct Convolver {
    nx: usize,
    ny: usize,
    fft: Fft2,
    kernel_hat: Vec<Complex64>,
}

impl Convolver {
    pub fn new<K>(nx: usize, ny: usize, kernel: K, exec: Execution) -> Self
    where
        K: Fn(i64, i64) -> f64 + Sync + Send,
    {
        let (px, py) = (2 * nx, 2 * ny);
        let fft = Fft2::new(px, py, exec);
        // Offsets -(n-1)..=(n-1) wrap into the padded period; slot n is unused.
        let wrap = |i: usize, n: usize| -> Option<i64> {
            if i < n {
                Some(i as i64)
            } else if i > n {
                Some(i as i64 - 2 * n as i64)
            } else {
                None
            }
        };
        let table: Vec<f64> = parallel::map_collect(exec, 0..px * py, |idx| {
            let (ix, iy) = (idx % px, idx / px);
            match (wrap(ix, nx), wrap(iy, ny)) {
                (Some(dx), Some(dy)) => kernel(dx, dy),
                _ => 0.0,
            }
        });
        let kernel_hat = fft.forward_real(&table, px, py);
        Self {
            nx,
            ny,
            fft,
            kernel_hat,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.nx * self.ny);
        let mut spec = self.fft.forward_real(input, self.nx, self.ny);
        for (s, k) in spec.iter_mut().zip(&self.kernel_hat) {
            *s *= k;
        }
        self.fft.inverse_real(spec, self.nx, self.ny)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(input: &[f64], nx: usize, ny: usize, k: impl Fn(i64, i64) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                let mut s = 0.0;
                for jy in 0..ny {
                    for jx in 0..nx {
                        s += k(ix as i64 - jx as i64, iy as i64 - jy as i64) * input[jy * nx + jx];
                    }
                }
                out[iy * nx + ix] = s;
            }
        }
        out
    }

    #[test]
    fn matches_direct_sum_on_rectangular_grid() {
        let (nx, ny) = (7, 5);
        let k = |dx: i64, dy: i64| 1.0 / (1.0 + (dx * dx + 3 * dy * dy) as f64) + 0.1 * dx as f64;
        let input: Vec<f64> = (0..nx * ny).map(|i| ((i * 37 % 11) as f64) - 4.0).collect();
        let want = direct(&input, nx, ny, k);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let got = Convolver::new(nx, ny, k, exec).apply(&input);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn execution_modes_are_bit_identical() {
        let n = 24;
        let k = |dx: i64, dy: i64| (-((dx * dx + dy * dy) as f64) / 9.0).exp();
        let input: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.77).sin()).collect();
        let a = Convolver::new(n, n, k, Execution::Sequential).apply(&input);
        let b = Convolver::new(n, n, k, Execution::Parallel).apply(&input);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn forward_transform_of_delta_is_flat() {
        let f = Fft2::new(8, 4, Execution::Sequential);
        let mut d = vec![0.0; 12];
        d[0] = 2.0;
        let s = f.forward_real(&d, 3, 4);
        assert!(s.iter().all(|c| (c.re - 2.0).abs() < 1e-14 && c.im.abs() < 1e-14));
        let back = f.inverse_real(s, 3, 4);
        assert!((back[0] - 2.0).abs() < 1e-14 && back[1..].iter().all(|v| v.abs() < 1e-14));
    }
}
