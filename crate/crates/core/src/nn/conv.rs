use rand::Rng;

use super::{gemm, Fmap, Grads, ParamId, ParamStore};

/// Bias-free 2-D convolution (every convolution here feeds a batch norm).
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: ParamId,
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let std = (2.0 / fan_in as f32).sqrt();
        let weight = store.add_normal(
            format!("{name}.weight"),
            vec![out_c, in_c, kernel, kernel],
            std,
            rng,
        );
        Self {
            weight,
            in_c,
            out_c,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, col: &mut [f32]) {
        let (oh, ow) = self.out_dims(h, w);
        let k = self.kernel;
        let p = oh * ow;
        for ci in 0..self.in_c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut col[((ci * k + ki) * k + kj) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let out = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *o = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], h: usize, w: usize, dx: &mut [f32]) {
        let (oh, ow) = self.out_dims(h, w);
        let k = self.kernel;
        let p = oh * ow;
        for ci in 0..self.in_c {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &col[((ci * k + ki) * k + kj) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &g) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Fmap) -> Fmap {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (oh, ow) = self.out_dims(x.h, x.w);
        let p = oh * ow;
        let kk = self.patch_len();
        let weight = store.get(self.weight);
        let mut y = Fmap::zeros(x.n, self.out_c, oh, ow);
        let mut col = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; kk * p]
        };
        for i in 0..x.n {
            let xs = x.sample(i);
            let cols: &[f32] = if self.is_pointwise() {
                xs
            } else {
                self.im2col(xs, x.h, x.w, &mut col);
                &col
            };
            gemm(self.out_c, kk, p, weight, false, cols, false, 0.0, y.sample_mut(i));
        }
        y
    }

    /// Accumulates the weight gradient and returns the input gradient when
    /// `want_dx` is set.
    pub fn backward(
        &self,
        store: &ParamStore,
        grads: &mut Grads,
        x: &Fmap,
        dy: &Fmap,
        want_dx: bool,
    ) -> Option<Fmap> {
        let (oh, ow) = (dy.h, dy.w);
        let p = oh * ow;
        let kk = self.patch_len();
        let weight = store.get(self.weight);
        let mut dx = want_dx.then(|| x.same_shape());
        let mut col = vec![0.0; kk * p];
        let mut dcol = vec![0.0; kk * p];
        for i in 0..x.n {
            let xs = x.sample(i);
            let dys = dy.sample(i);
            let cols: &[f32] = if self.is_pointwise() {
                xs
            } else {
                self.im2col(xs, x.h, x.w, &mut col);
                &col
            };
            // dW (out_c x kk) += dY (out_c x p) * col^T (p x kk)
            gemm(self.out_c, p, kk, dys, false, cols, true, 1.0, grads.get_mut(self.weight));
            if let Some(dx) = dx.as_mut() {
                let target = dx.sample_mut(i);
                if self.is_pointwise() {
                    gemm(kk, self.out_c, p, weight, true, dys, false, 0.0, target);
                } else {
                    gemm(kk, self.out_c, p, weight, true, dys, false, 0.0, &mut dcol);
                    self.col2im(&dcol, x.h, x.w, target);
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(x: &Fmap, wt: &[f32], conv: &Conv2d) -> Fmap {
        let (oh, ow) = conv.out_dims(x.h, x.w);
        let k = conv.kernel;
        let mut y = Fmap::zeros(x.n, conv.out_c, oh, ow);
        for n in 0..x.n {
            for co in 0..conv.out_c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..conv.in_c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * conv.stride + ki) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kj) as isize - conv.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    let xv = x.data[((n * x.c + ci) * x.h + iy as usize) * x.w + ix as usize];
                                    acc += xv * wt[((co * conv.in_c + ci) * k + ki) * k + kj];
                                }
                            }
                        }
                        y.data[((n * conv.out_c + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn random_fmap(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Fmap {
        let mut x = Fmap::zeros(n, c, h, w);
        for v in &mut x.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        x
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s, p) in &[(3, 1, 1), (7, 2, 3), (1, 1, 0)] {
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "c", 2, 3, k, s, p, &mut rng);
            let x = random_fmap(&mut rng, 2, 2, 9, 11);
            let y = conv.forward(&store, &x);
            let expected = naive(&x, store.get(conv.weight), &conv);
            for (a, b) in y.data.iter().zip(&expected.data) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(k, s, p) in &[(3, 1, 1), (7, 2, 3), (1, 1, 0)] {
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "c", 2, 2, k, s, p, &mut rng);
            let x = random_fmap(&mut rng, 1, 2, 6, 7);
            let y = conv.forward(&store, &x);
            let r = random_fmap(&mut rng, y.n, y.c, y.h, y.w);
            // loss = sum(r * y)
            let loss = |store: &ParamStore, x: &Fmap| -> f64 {
                let y = conv.forward(store, x);
                y.data.iter().zip(&r.data).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
            };
            let mut grads = store.zero_grads();
            let dx = conv.backward(&store, &mut grads, &x, &r, true).unwrap();
            let h = 1e-2f32;
            for idx in [0usize, 3, 7] {
                let mut xp = x.clone();
                xp.data[idx] += h;
                let mut xm = x.clone();
                xm.data[idx] -= h;
                let fd = (loss(&store, &xp) - loss(&store, &xm)) / (2.0 * h as f64);
                assert!((fd - dx.data[idx] as f64).abs() < 1e-2, "dx {fd} vs {}", dx.data[idx]);
            }
            let n_weights = store.get(conv.weight).len();
            for idx in [0usize, 5].map(|i| i % n_weights) {
                let mut sp = store.clone();
                sp.get_mut(conv.weight)[idx] += h;
                let mut sm = store.clone();
                sm.get_mut(conv.weight)[idx] -= h;
                let fd = (loss(&sp, &x) - loss(&sm, &x)) / (2.0 * h as f64);
                let g = grads.get(conv.weight)[idx] as f64;
                assert!((fd - g).abs() < 1e-2, "dw {fd} vs {g}");
            }
        }
    }
}
