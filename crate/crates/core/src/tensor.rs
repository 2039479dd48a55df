//! Minimal dense tensor (rank 1 or 2, row-major) plus the handful of kernels
//! the network needs.
//!
//! Hand-rolled on purpose: every determinism contract in this crate (same
//! seed → byte-identical checkpoints, thread count must not change results,
//! recorded forward must bit-match the plain one) depends on a fixed
//! accumulation order, so the kernels spell their loops out.

// Kernels keep explicit index loops: the row/column stride structure is the
// point, and the accumulation order must stay pinned.
#![allow(clippy::needless_range_loop)]

use crate::error::{ensure_arg, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    dims: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Tensor { dims: vec![rows, cols], data }
    }

    pub fn vector(data: Vec<F>) -> Self {
        Tensor { dims: vec![data.len()], data }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![F::ZERO; n] }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor { dims: self.dims.clone(), data: vec![F::ZERO; self.data.len()] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Rows of a rank-2 tensor (1 for vectors).
    pub fn rows(&self) -> usize {
        if self.dims.len() == 2 {
            self.dims[0]
        } else {
            1
        }
    }

    /// Columns of a rank-2 tensor (the length for vectors).
    pub fn cols(&self) -> usize {
        *self.dims.last().unwrap_or(&0)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != F::ZERO).count()
    }

    pub fn map_to<G: Real>(&self) -> Tensor<G> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.to_f64())).collect(),
        }
    }

    /// y = W·x for a rank-2 tensor.
    pub fn matvec(&self, x: &[F]) -> Vec<F> {
        let (r, c) = (self.rows(), self.cols());
        debug_assert_eq!(x.len(), c, "matvec width mismatch");
        let mut y = vec![F::ZERO; r];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let mut acc = F::ZERO;
            for (w, xv) in row.iter().zip(x) {
                acc += *w * *xv;
            }
            y[i] = acc;
        }
        y
    }

    /// gx += Wᵀ·g (adjoint of [`Tensor::matvec`] with respect to x).
    pub fn matvec_t_accum(&self, g: &[F], gx: &mut [F]) {
        let (r, c) = (self.rows(), self.cols());
        debug_assert_eq!(g.len(), r);
        debug_assert_eq!(gx.len(), c);
        for i in 0..r {
            let gi = g[i];
            let row = &self.data[i * c..(i + 1) * c];
            for (j, w) in row.iter().enumerate() {
                gx[j] += *w * gi;
            }
        }
    }

    /// self += g ⊗ x (outer-product accumulation into a gradient matrix).
    pub fn add_outer(&mut self, g: &[F], x: &[F]) {
        let (r, c) = (self.rows(), self.cols());
        debug_assert_eq!(g.len(), r);
        debug_assert_eq!(x.len(), c);
        for i in 0..r {
            let gi = g[i];
            let row = &mut self.data[i * c..(i + 1) * c];
            for (j, w) in row.iter_mut().enumerate() {
                *w += gi * x[j];
            }
        }
    }

    /// Block-diagonal apply: treats `x` as `blocks` contiguous chunks of
    /// `self.cols()` entries and multiplies each by the (square) matrix.
    pub fn block_matvec(&self, x: &[F], blocks: usize) -> Vec<F> {
        let d = self.cols();
        debug_assert_eq!(self.rows(), d, "block matrix must be square");
        debug_assert_eq!(x.len(), blocks * d);
        let mut y = vec![F::ZERO; blocks * d];
        for b in 0..blocks {
            let xb = &x[b * d..(b + 1) * d];
            for i in 0..d {
                let row = &self.data[i * d..(i + 1) * d];
                let mut acc = F::ZERO;
                for (w, xv) in row.iter().zip(xb) {
                    acc += *w * *xv;
                }
                y[b * d + i] = acc;
            }
        }
        y
    }

    /// gx += blockdiag(W)ᵀ·g.
    pub fn block_matvec_t_accum(&self, g: &[F], gx: &mut [F], blocks: usize) {
        let d = self.cols();
        for b in 0..blocks {
            let gb = &g[b * d..(b + 1) * d];
            let gxb = &mut gx[b * d..(b + 1) * d];
            for i in 0..d {
                let gi = gb[i];
                let row = &self.data[i * d..(i + 1) * d];
                for (j, w) in row.iter().enumerate() {
                    gxb[j] += *w * gi;
                }
            }
        }
    }

    /// Per-channel broadcast: y[c·d + k] = w[k]·x[c] for a length-d vector.
    pub fn expand_scale(&self, x: &[F]) -> Vec<F> {
        let d = self.len();
        let mut y = vec![F::ZERO; x.len() * d];
        for (c, xv) in x.iter().enumerate() {
            for k in 0..d {
                y[c * d + k] = self.data[k] * *xv;
            }
        }
        y
    }

    /// gx[c] += Σ_k w[k]·g[c·d + k] (adjoint of [`Tensor::expand_scale`]).
    pub fn expand_scale_t_accum(&self, g: &[F], gx: &mut [F]) {
        let d = self.len();
        for (c, gxv) in gx.iter_mut().enumerate() {
            let gb = &g[c * d..(c + 1) * d];
            let mut acc = F::ZERO;
            for (w, gv) in self.data.iter().zip(gb) {
                acc += *w * *gv;
            }
            *gxv += acc;
        }
    }

    /// Per-channel fan-out of a scalar: y[c·e + j] = w[c][j]·x[c] where the
    /// tensor is channels × expansion.
    pub fn channel_expand(&self, x: &[F]) -> Vec<F> {
        let (ch, e) = (self.rows(), self.cols());
        debug_assert_eq!(x.len(), ch);
        let mut y = vec![F::ZERO; ch * e];
        for c in 0..ch {
            let row = &self.data[c * e..(c + 1) * e];
            for j in 0..e {
                y[c * e + j] = row[j] * x[c];
            }
        }
        y
    }
}

/// Elementwise a + b into a fresh vector.
pub fn add<F: Real>(a: &[F], b: &[F]) -> Vec<F> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| *x + *y).collect()
}

/// Require `got == want`, reporting `what` on mismatch.
pub fn check_len<F: Real>(what: &str, got: &[F], want: usize) -> Result<()> {
    ensure_arg!(got.len() == want, "{what}: expected length {want}, got {}", got.len());
    Ok(())
}
