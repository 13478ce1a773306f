use std::cell::Cell;

use super::Tensor;
use crate::error::{Error, Result};

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-accumulate operations performed by forward `matmul` and
/// `conv2d` on this thread since the last reset.
pub fn mac_count() -> u64 {
    MACS.with(|m| m.get())
}

pub fn reset_mac_count() {
    MACS.with(|m| m.set(0));
}

pub(crate) fn add_macs(n: u64) {
    MACS.with(|m| m.set(m.get() + n));
}

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub fn row_major(cols: usize) -> Self {
        Layout { rs: cols, cs: 1 }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Layout { rs: 1, cs: cols }
    }

    fn span(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.rs + (cols - 1) * self.cs + 1
        }
    }
}

/// `c (+)= a · b` with `a: m×k`, `b: k×n`, `c: m×n` row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= la.span(m, k), "gemm: lhs too short");
    assert!(b.len() >= lb.span(k, n), "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Matrix product of `[M×K]` by `[K×N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.dim(1) != other.dim(0) {
            return Err(Error::dim(format!(
                "matmul shape mismatch: {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (m, k, n) = (self.dim(0), self.dim(1), other.dim(1));
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), Layout::row_major(k), other.data(), Layout::row_major(n), &mut out, false);
        add_macs((m * k * n) as u64);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op("matmul", vec![m, n], out, vec![self.clone(), other.clone()], move |g| {
            let ga = a.requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, Layout::row_major(n), b.data(), Layout::transposed(n), &mut ga, false);
                ga
            });
            let gb = b.requires_grad().then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, a.data(), Layout::transposed(k), g, Layout::row_major(n), &mut gb, false);
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::dim(format!("transpose needs rank 2, got {:?}", self.shape())));
        }
        let (r, c) = (self.dim(0), self.dim(1));
        let out = transpose_data(self.data(), r, c);
        Ok(Tensor::from_op("transpose", vec![c, r], out, vec![self.clone()], move |g| {
            vec![Some(transpose_data(g, c, r))]
        }))
    }
}

fn transpose_data(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}
