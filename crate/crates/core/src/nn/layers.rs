use rand::Rng;

use super::{gemm, BufferId, Fmap, Grads, ParamId, ParamStore, Seq};

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: ParamId,
    beta: ParamId,
    running_mean: BufferId,
    running_var: BufferId,
    channels: usize,
    eps: f32,
    momentum: f32,
}

/// Saved normalized activations and batch statistics.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    mean: Vec<f32>,
    unbiased_var: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_filled(format!("{name}.gamma"), vec![channels], 1.0),
            beta: store.add_filled(format!("{name}.beta"), vec![channels], 0.0),
            running_mean: store.add_buffer(format!("{name}.running_mean"), vec![channels], 0.0),
            running_var: store.add_buffer(format!("{name}.running_var"), vec![channels], 1.0),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Normalizes with batch statistics.
    pub fn forward_train(&self, store: &ParamStore, x: &Fmap) -> (Fmap, BnCache) {
        assert_eq!(x.c, self.channels, "batch norm channels");
        let plane = x.h * x.w;
        let count = (x.n * plane) as f64;
        let gamma = store.get(self.gamma);
        let beta = store.get(self.beta);
        let mut mean = vec![0f32; x.c];
        let mut inv_std = vec![0f32; x.c];
        let mut unbiased_var = vec![0f32; x.c];
        for c in 0..x.c {
            let mut sum = 0f64;
            for n in 0..x.n {
                let off = (n * x.c + c) * plane;
                sum += x.data[off..off + plane].iter().map(|&v| v as f64).sum::<f64>();
            }
            let m = sum / count;
            let mut sq = 0f64;
            for n in 0..x.n {
                let off = (n * x.c + c) * plane;
                sq += x.data[off..off + plane]
                    .iter()
                    .map(|&v| (v as f64 - m).powi(2))
                    .sum::<f64>();
            }
            let var = sq / count;
            mean[c] = m as f32;
            inv_std[c] = (1.0 / (var + self.eps as f64).sqrt()) as f32;
            unbiased_var[c] = if count > 1.0 { (sq / (count - 1.0)) as f32 } else { var as f32 };
        }
        let mut xhat = vec![0f32; x.data.len()];
        let mut y = x.same_shape();
        for n in 0..x.n {
            for c in 0..x.c {
                let off = (n * x.c + c) * plane;
                for i in off..off + plane {
                    let v = (x.data[i] - mean[c]) * inv_std[c];
                    xhat[i] = v;
                    y.data[i] = gamma[c] * v + beta[c];
                }
            }
        }
        (
            y,
            BnCache {
                xhat,
                inv_std,
                mean,
                unbiased_var,
            },
        )
    }

    /// Normalizes with running statistics.
    pub fn forward_eval(&self, store: &ParamStore, x: &Fmap) -> Fmap {
        let plane = x.h * x.w;
        let gamma = store.get(self.gamma);
        let beta = store.get(self.beta);
        let rm = store.buffer(self.running_mean);
        let rv = store.buffer(self.running_var);
        let mut y = x.same_shape();
        for n in 0..x.n {
            for c in 0..x.c {
                let scale = gamma[c] / (rv[c] + self.eps).sqrt();
                let shift = beta[c] - rm[c] * scale;
                let off = (n * x.c + c) * plane;
                for i in off..off + plane {
                    y.data[i] = x.data[i] * scale + shift;
                }
            }
        }
        y
    }

    pub fn update_running(&self, store: &mut ParamStore, cache: &BnCache) {
        let m = self.momentum;
        for (r, &b) in store.buffer_mut(self.running_mean).iter_mut().zip(&cache.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in store.buffer_mut(self.running_var).iter_mut().zip(&cache.unbiased_var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }

    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &BnCache, dy: &Fmap) -> Fmap {
        let plane = dy.h * dy.w;
        let count = (dy.n * plane) as f32;
        let gamma = store.get(self.gamma);
        let mut sum_dy = vec![0f64; dy.c];
        let mut sum_dy_xhat = vec![0f64; dy.c];
        for n in 0..dy.n {
            for c in 0..dy.c {
                let off = (n * dy.c + c) * plane;
                for i in off..off + plane {
                    sum_dy[c] += dy.data[i] as f64;
                    sum_dy_xhat[c] += (dy.data[i] * cache.xhat[i]) as f64;
                }
            }
        }
        {
            let dg = grads.get_mut(self.gamma);
            for c in 0..dy.c {
                dg[c] += sum_dy_xhat[c] as f32;
            }
        }
        {
            let db = grads.get_mut(self.beta);
            for c in 0..dy.c {
                db[c] += sum_dy[c] as f32;
            }
        }
        let mut dx = dy.same_shape();
        for n in 0..dy.n {
            for c in 0..dy.c {
                let k = gamma[c] * cache.inv_std[c] / count;
                let mdy = sum_dy[c] as f32;
                let mdyx = sum_dy_xhat[c] as f32;
                let off = (n * dy.c + c) * plane;
                for i in off..off + plane {
                    dx.data[i] = k * (count * dy.data[i] - mdy - cache.xhat[i] * mdyx);
                }
            }
        }
        dx
    }
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxPool2;

#[derive(Debug, Clone)]
pub struct PoolCache {
    argmax: Vec<u32>,
    in_h: usize,
    in_w: usize,
}

impl MaxPool2 {
    pub fn forward(&self, x: &Fmap) -> (Fmap, PoolCache) {
        let (oh, ow) = (x.h / 2, x.w / 2);
        let mut y = Fmap::zeros(x.n, x.c, oh, ow);
        let mut argmax = vec![0u32; y.data.len()];
        for plane_idx in 0..x.n * x.c {
            let src = &x.data[plane_idx * x.h * x.w..(plane_idx + 1) * x.h * x.w];
            let base = plane_idx * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (2 * oy) * x.w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (2 * oy + dy) * x.w + 2 * ox + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    y.data[base + oy * ow + ox] = src[best];
                    argmax[base + oy * ow + ox] = best as u32;
                }
            }
        }
        (
            y,
            PoolCache {
                argmax,
                in_h: x.h,
                in_w: x.w,
            },
        )
    }

    pub fn backward(&self, cache: &PoolCache, dy: &Fmap) -> Fmap {
        let mut dx = Fmap::zeros(dy.n, dy.c, cache.in_h, cache.in_w);
        let out_plane = dy.h * dy.w;
        let in_plane = cache.in_h * cache.in_w;
        for plane_idx in 0..dy.n * dy.c {
            for j in 0..out_plane {
                let o = plane_idx * out_plane + j;
                dx.data[plane_idx * in_plane + cache.argmax[o] as usize] += dy.data[o];
            }
        }
        dx
    }
}

/// Max over the height axis: `(n, c, h, w)` becomes the sequence `(n, w, c)`.
/// Returns the argmax row for each output.
pub fn column_max(x: &Fmap) -> (Seq, Vec<u32>) {
    let mut seq = Seq::zeros(x.n, x.w, x.c);
    let mut rows = vec![0u32; seq.data.len()];
    for n in 0..x.n {
        for c in 0..x.c {
            let plane = &x.data[(n * x.c + c) * x.h * x.w..][..x.h * x.w];
            for col in 0..x.w {
                let mut best = 0;
                for r in 1..x.h {
                    if plane[r * x.w + col] > plane[best * x.w + col] {
                        best = r;
                    }
                }
                let o = (n * x.w + col) * x.c + c;
                seq.data[o] = plane[best * x.w + col];
                rows[o] = best as u32;
            }
        }
    }
    (seq, rows)
}

pub(crate) fn column_max_backward(rows: &[u32], dseq: &Seq, h: usize) -> Fmap {
    let (n, w, c) = (dseq.n, dseq.t, dseq.d);
    let mut dx = Fmap::zeros(n, c, h, w);
    for ni in 0..n {
        for col in 0..w {
            for ci in 0..c {
                let o = (ni * w + col) * c + ci;
                dx.data[((ni * c + ci) * h + rows[o] as usize) * w + col] += dseq.data[o];
            }
        }
    }
    dx
}

/// Inverted-dropout mask: each entry is `0` or `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng>(len: usize, rate: f32, rng: &mut R) -> Vec<f32> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.gen::<f32>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

/// Affine map applied to every frame of a sequence.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f32).sqrt();
        Self {
            weight: store.add_uniform(format!("{name}.weight"), vec![out_dim, in_dim], bound, rng),
            bias: store.add_uniform(format!("{name}.bias"), vec![out_dim], bound, rng),
            in_dim,
            out_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, store: &ParamStore, x: &Seq) -> Seq {
        assert_eq!(x.d, self.in_dim, "linear input width");
        let rows = x.rows();
        let mut y = Seq::zeros(x.n, x.t, self.out_dim);
        let bias = store.get(self.bias);
        for row in y.data.chunks_mut(self.out_dim) {
            row.copy_from_slice(bias);
        }
        gemm(rows, self.in_dim, self.out_dim, &x.data, false, store.get(self.weight), true, 1.0, &mut y.data);
        y
    }

    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, x: &Seq, dy: &Seq) -> Seq {
        let rows = x.rows();
        gemm(self.out_dim, rows, self.in_dim, &dy.data, true, &x.data, false, 1.0, grads.get_mut(self.weight));
        {
            let db = grads.get_mut(self.bias);
            for row in dy.data.chunks(self.out_dim) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
        }
        let mut dx = Seq::zeros(x.n, x.t, self.in_dim);
        gemm(rows, self.out_dim, self.in_dim, &dy.data, false, store.get(self.weight), false, 0.0, &mut dx.data);
        dx
    }
}
