//! Internal lattice convolution engines. The direct quadratic sum is the
//! reference; the padded-FFT path computes the same cyclic convolution on a
//! doubled grid and exists purely as an optimization.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::field::{Grid, Idx, MAX_DIM};

/// Offset-indexed weight table spanning `(-(N-1)..=N-1)^dim`.
pub(crate) struct WeightTable {
    dim: usize,
    shape: Idx,
    table: Vec<f64>,
    table_shape: Idx,
}

impl WeightTable {
    pub(crate) fn new(grid: &Grid, weight: impl Fn(&[i64; MAX_DIM]) -> f64) -> WeightTable {
        let dim = grid.dim();
        let shape = grid.shape_padded();
        let mut table_shape = [1usize; MAX_DIM];
        for a in 0..dim {
            table_shape[a] = 2 * shape[a] - 1;
        }
        let len: usize = table_shape.iter().product();
        let mut table = vec![0.0; len];
        let mut d = [0i64; MAX_DIM];
        for i0 in 0..table_shape[0] {
            d[0] = i0 as i64 - (shape[0] as i64 - 1);
            for i1 in 0..table_shape[1] {
                d[1] = i1 as i64 - (shape[1] as i64 - 1);
                for i2 in 0..table_shape[2] {
                    d[2] = i2 as i64 - (shape[2] as i64 - 1);
                    table[(i0 * table_shape[1] + i1) * table_shape[2] + i2] = weight(&d);
                }
            }
        }
        WeightTable { dim, shape, table, table_shape }
    }

    #[inline]
    fn at(&self, d: [i64; MAX_DIM]) -> f64 {
        let i0 = (d[0] + self.shape[0] as i64 - 1) as usize;
        let i1 = (d[1] + self.shape[1] as i64 - 1) as usize;
        let i2 = (d[2] + self.shape[2] as i64 - 1) as usize;
        self.table[(i0 * self.table_shape[1] + i1) * self.table_shape[2] + i2]
    }

    /// `out[x] = sum_y w(x - y) input[y]`, inner sum in flat index order.
    pub(crate) fn convolve_direct(&self, grid: &Grid, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(grid.shape_padded(), self.shape);
        debug_assert_eq!(grid.dim(), self.dim);
        (0..grid.len())
            .into_par_iter()
            .map(|x| {
                let xi = grid.multi(x);
                let mut acc = 0.0;
                let mut y = 0usize;
                for y0 in 0..self.shape[0] {
                    for y1 in 0..self.shape[1] {
                        for y2 in 0..self.shape[2] {
                            let d = [
                                xi[0] as i64 - y0 as i64,
                                xi[1] as i64 - y1 as i64,
                                xi[2] as i64 - y2 as i64,
                            ];
                            acc += self.at(d) * input[y];
                            y += 1;
                        }
                    }
                }
                acc
            })
            .collect()
    }

}

/// FFT-backed convolver: kernel spectrum precomputed on the zero-padded
/// doubled grid, each apply costs one forward and one inverse transform.
pub(crate) struct FftConvolver {
    src_shape: Idx,
    pad_shape: Idx,
    kernel_hat: Vec<Complex64>,
    plans_fwd: Vec<Arc<dyn Fft<f64>>>,
    plans_inv: Vec<Arc<dyn Fft<f64>>>,
}

impl FftConvolver {
    pub(crate) fn new(grid: &Grid, weight: impl Fn(&[i64; MAX_DIM]) -> f64) -> FftConvolver {
        let dim = grid.dim();
        let src_shape = grid.shape_padded();
        let mut pad_shape = [1usize; MAX_DIM];
        for a in 0..dim {
            pad_shape[a] = 2 * src_shape[a];
        }
        let len: usize = pad_shape.iter().product();

        let mut planner = FftPlanner::<f64>::new();
        let mut plans_fwd = Vec::new();
        let mut plans_inv = Vec::new();
        for a in 0..MAX_DIM {
            plans_fwd.push(planner.plan_fft_forward(pad_shape[a]));
            plans_inv.push(planner.plan_fft_inverse(pad_shape[a]));
        }

        // Kernel wrapped cyclically so that index p represents offset
        // p (p < N) or p - P (p >= N).
        let mut kernel = vec![Complex64::default(); len];
        let mut d = [0i64; MAX_DIM];
        for p0 in 0..pad_shape[0] {
            d[0] = wrap_offset(p0, src_shape[0], pad_shape[0]);
            for p1 in 0..pad_shape[1] {
                d[1] = wrap_offset(p1, src_shape[1], pad_shape[1]);
                for p2 in 0..pad_shape[2] {
                    d[2] = wrap_offset(p2, src_shape[2], pad_shape[2]);
                    let keep = (0..dim).all(|a| d[a].unsigned_abs() < src_shape[a] as u64);
                    if keep {
                        kernel[(p0 * pad_shape[1] + p1) * pad_shape[2] + p2] =
                            Complex64::new(weight(&d), 0.0);
                    }
                }
            }
        }
        let mut conv = FftConvolver { src_shape, pad_shape, kernel_hat: kernel, plans_fwd, plans_inv };
        let mut hat = std::mem::take(&mut conv.kernel_hat);
        conv.fft_nd(&mut hat, false);
        conv.kernel_hat = hat;
        conv
    }

    fn fft_nd(&self, data: &mut [Complex64], inverse: bool) {
        for axis in 0..MAX_DIM {
            let n = self.pad_shape[axis];
            if n == 1 {
                continue;
            }
            let plan = if inverse { &self.plans_inv[axis] } else { &self.plans_fwd[axis] };
            let stride: usize = self.pad_shape[axis + 1..].iter().product();
            let outer: usize = self.pad_shape[..axis].iter().product();
            let mut lane = vec![Complex64::default(); n];
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for i in 0..n {
                        lane[i] = data[base + i * stride];
                    }
                    plan.process(&mut lane);
                    for i in 0..n {
                        data[base + i * stride] = lane[i];
                    }
                }
            }
        }
    }

    pub(crate) fn apply(&self, input: &[f64]) -> Vec<f64> {
        let len: usize = self.pad_shape.iter().product();
        let mut buf = vec![Complex64::default(); len];
        for i0 in 0..self.src_shape[0] {
            for i1 in 0..self.src_shape[1] {
                for i2 in 0..self.src_shape[2] {
                    let src = (i0 * self.src_shape[1] + i1) * self.src_shape[2] + i2;
                    let dst = (i0 * self.pad_shape[1] + i1) * self.pad_shape[2] + i2;
                    buf[dst] = Complex64::new(input[src], 0.0);
                }
            }
        }
        self.fft_nd(&mut buf, false);
        let scale = 1.0 / len as f64;
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k * scale;
        }
        self.fft_nd(&mut buf, true);
        let mut out = vec![0.0; self.src_shape.iter().product()];
        for i0 in 0..self.src_shape[0] {
            for i1 in 0..self.src_shape[1] {
                for i2 in 0..self.src_shape[2] {
                    let dst = (i0 * self.src_shape[1] + i1) * self.src_shape[2] + i2;
                    let src = (i0 * self.pad_shape[1] + i1) * self.pad_shape[2] + i2;
                    out[dst] = buf[src].re;
                }
            }
        }
        out
    }
}

fn wrap_offset(p: usize, n: usize, pad: usize) -> i64 {
    if p < n {
        p as i64
    } else {
        p as i64 - pad as i64
    }
}
