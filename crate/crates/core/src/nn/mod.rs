//! Minimal CPU neural-network kernels with hand-written backward passes.
//!
//! Activations are batched `f32` buffers. Image-like tensors use NCHW layout
//! ([`Fmap`]); sequences use `[batch][time][feature]` ([`Seq`]).

mod adam;
mod conv;
mod layers;
mod lstm;
mod params;

pub use adam::Adam;
pub use conv::Conv2d;
pub(crate) use layers::column_max_backward;
pub use layers::{column_max, dropout_mask, BatchNorm2d, BnCache, Linear, MaxPool2, PoolCache};
pub use lstm::{BiLstm, BiLstmCache};
pub use params::{BufferId, Grads, ParamId, ParamStore, Tensor};

/// Batched feature maps in NCHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Fmap {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Fmap {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.n, self.c, self.h, self.w)
    }
}

/// Batched sequences, `[n][t][d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq {
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub data: Vec<f32>,
}

impl Seq {
    pub fn zeros(n: usize, t: usize, d: usize) -> Self {
        Self {
            n,
            t,
            d,
            data: vec![0.0; n * t * d],
        }
    }

    pub fn rows(&self) -> usize {
        self.n * self.t
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.t * self.d;
        &self.data[i * len..(i + 1) * len]
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is `m x k` and
/// `op(b)` is `k x n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    transpose_a: bool,
    b: &[f32],
    transpose_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if transpose_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if transpose_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices are at least as long as the strided views require
    // (checked above in debug builds and guaranteed by every caller's shapes).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn relu_in_place(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` where the forward ReLU output was not positive.
pub(crate) fn relu_backward_in_place(output: &[f32], grad: &mut [f32]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(crate) fn add_in_place(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
