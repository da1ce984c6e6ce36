use rand::Rng;

use super::{gemm, Grads, ParamId, ParamStore, Seq};

/// One LSTM direction. Gate order in the stacked weights: input, forget,
/// cell, output.
#[derive(Debug, Clone)]
struct Direction {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    reverse: bool,
}

/// Per-step activations of one direction.
#[derive(Debug, Clone)]
struct DirectionCache {
    /// `[t][n][4h]` post-nonlinearity gates.
    gates: Vec<f32>,
    /// `[t][n][h]` cell states.
    cells: Vec<f32>,
    /// `[t][n][h]` hidden outputs.
    hidden: Vec<f32>,
}

/// Bidirectional LSTM whose two direction outputs are summed per frame.
#[derive(Debug, Clone)]
pub struct BiLstm {
    fwd: Direction,
    bwd: Direction,
    input: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: DirectionCache,
    bwd: DirectionCache,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl BiLstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut direction = |suffix: &str, reverse: bool| {
            let bound = 1.0 / (hidden as f32).sqrt();
            let w_ih = store.add_uniform(format!("{name}.{suffix}.w_ih"), vec![4 * hidden, input], bound, rng);
            let w_hh = store.add_uniform(format!("{name}.{suffix}.w_hh"), vec![4 * hidden, hidden], bound, rng);
            let bias = store.add_uniform(format!("{name}.{suffix}.bias"), vec![4 * hidden], bound, rng);
            // forget-gate bias starts at +1
            for b in &mut store.get_mut(bias)[hidden..2 * hidden] {
                *b += 1.0;
            }
            Direction {
                w_ih,
                w_hh,
                bias,
                reverse,
            }
        };
        let fwd = direction("fwd", false);
        let bwd = direction("bwd", true);
        Self {
            fwd,
            bwd,
            input,
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn run_direction(&self, store: &ParamStore, dir: &Direction, x: &Seq) -> DirectionCache {
        let (n, t_len, h) = (x.n, x.t, self.hidden);
        let g4 = 4 * h;
        // input projections for every (n, t): [n][t][4h]
        let mut proj = vec![0f32; n * t_len * g4];
        gemm(n * t_len, self.input, g4, &x.data, false, store.get(dir.w_ih), true, 0.0, &mut proj);
        let bias = store.get(dir.bias);
        let w_hh = store.get(dir.w_hh);
        let mut gates = vec![0f32; t_len * n * g4];
        let mut cells = vec![0f32; t_len * n * h];
        let mut hidden = vec![0f32; t_len * n * h];
        let mut h_prev = vec![0f32; n * h];
        let mut c_prev = vec![0f32; n * h];
        let mut rec = vec![0f32; n * g4];
        for step in 0..t_len {
            let t = if dir.reverse { t_len - 1 - step } else { step };
            gemm(n, h, g4, &h_prev, false, w_hh, true, 0.0, &mut rec);
            let g_t = &mut gates[t * n * g4..(t + 1) * n * g4];
            let c_t = &mut cells[t * n * h..(t + 1) * n * h];
            let h_t = &mut hidden[t * n * h..(t + 1) * n * h];
            for b in 0..n {
                let p = &proj[(b * t_len + t) * g4..][..g4];
                let r = &rec[b * g4..][..g4];
                let g = &mut g_t[b * g4..][..g4];
                for j in 0..g4 {
                    g[j] = p[j] + r[j] + bias[j];
                }
                for j in 0..h {
                    let i = sigmoid(g[j]);
                    let f = sigmoid(g[h + j]);
                    let cell = g[2 * h + j].tanh();
                    let o = sigmoid(g[3 * h + j]);
                    g[j] = i;
                    g[h + j] = f;
                    g[2 * h + j] = cell;
                    g[3 * h + j] = o;
                    let c = f * c_prev[b * h + j] + i * cell;
                    c_t[b * h + j] = c;
                    h_t[b * h + j] = o * c.tanh();
                }
            }
            h_prev.copy_from_slice(h_t);
            c_prev.copy_from_slice(c_t);
        }
        DirectionCache { gates, cells, hidden }
    }

    pub fn forward(&self, store: &ParamStore, x: &Seq) -> (Seq, BiLstmCache) {
        assert_eq!(x.d, self.input, "lstm input width");
        let fwd = self.run_direction(store, &self.fwd, x);
        let bwd = self.run_direction(store, &self.bwd, x);
        let (n, t_len, h) = (x.n, x.t, self.hidden);
        let mut y = Seq::zeros(n, t_len, h);
        for t in 0..t_len {
            for b in 0..n {
                let src = t * n * h + b * h;
                let dst = (b * t_len + t) * h;
                for j in 0..h {
                    y.data[dst + j] = fwd.hidden[src + j] + bwd.hidden[src + j];
                }
            }
        }
        (y, BiLstmCache { fwd, bwd })
    }

    fn backward_direction(
        &self,
        store: &ParamStore,
        grads: &mut Grads,
        dir: &Direction,
        cache: &DirectionCache,
        x: &Seq,
        dy: &Seq,
        dx: &mut Seq,
    ) {
        let (n, t_len, h) = (x.n, x.t, self.hidden);
        let g4 = 4 * h;
        let w_hh = store.get(dir.w_hh);
        // pre-activation gate gradients, [n][t][4h] to match the input layout
        let mut dproj = vec![0f32; n * t_len * g4];
        let mut dh_next = vec![0f32; n * h];
        let mut dc_next = vec![0f32; n * h];
        let mut dgates_t = vec![0f32; n * g4];
        let zeros = vec![0f32; n * h];
        for step in (0..t_len).rev() {
            let t = if dir.reverse { t_len - 1 - step } else { step };
            let prev_t = if step == 0 {
                None
            } else if dir.reverse {
                Some(t + 1)
            } else {
                Some(t - 1)
            };
            let g_t = &cache.gates[t * n * g4..(t + 1) * n * g4];
            let c_t = &cache.cells[t * n * h..(t + 1) * n * h];
            let c_prev = prev_t.map_or(&zeros[..], |p| &cache.cells[p * n * h..(p + 1) * n * h]);
            for b in 0..n {
                let g = &g_t[b * g4..][..g4];
                let d = &mut dgates_t[b * g4..][..g4];
                for j in 0..h {
                    let k = b * h + j;
                    let (i, f, cell, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let tc = c_t[k].tanh();
                    let dh = dy.data[(b * t_len + t) * h + j] + dh_next[k];
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                    d[j] = dc * cell * i * (1.0 - i);
                    d[h + j] = dc * c_prev[k] * f * (1.0 - f);
                    d[2 * h + j] = dc * i * (1.0 - cell * cell);
                    d[3 * h + j] = dh * tc * o * (1.0 - o);
                    dc_next[k] = dc * f;
                }
                dproj[(b * t_len + t) * g4..][..g4].copy_from_slice(d);
            }
            if let Some(p) = prev_t {
                let h_prev = &cache.hidden[p * n * h..(p + 1) * n * h];
                // dW_hh (4h x h) += dG^T (4h x n) * h_prev (n x h)
                gemm(g4, n, h, &dgates_t, true, h_prev, false, 1.0, grads.get_mut(dir.w_hh));
            }
            // dh_prev (n x h) = dG (n x 4h) * W_hh (4h x h)
            gemm(n, g4, h, &dgates_t, false, w_hh, false, 0.0, &mut dh_next);
        }
        let rows = n * t_len;
        gemm(g4, rows, self.input, &dproj, true, &x.data, false, 1.0, grads.get_mut(dir.w_ih));
        {
            let db = grads.get_mut(dir.bias);
            for row in dproj.chunks(g4) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
        }
        gemm(rows, g4, self.input, &dproj, false, store.get(dir.w_ih), false, 1.0, &mut dx.data);
    }

    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &BiLstmCache, x: &Seq, dy: &Seq) -> Seq {
        let mut dx = Seq::zeros(x.n, x.t, x.d);
        self.backward_direction(store, grads, &self.fwd, &cache.fwd, x, dy, &mut dx);
        self.backward_direction(store, grads, &self.bwd, &cache.bwd, x, dy, &mut dx);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let lstm = BiLstm::new(&mut store, "rnn", 3, 4, &mut rng);
        let mut x = Seq::zeros(2, 5, 3);
        x.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let mut r = Seq::zeros(2, 5, 4);
        r.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let loss = |store: &ParamStore, x: &Seq| -> f64 {
            let (y, _) = lstm.forward(store, x);
            y.data.iter().zip(&r.data).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let (_, cache) = lstm.forward(&store, &x);
        let mut grads = store.zero_grads();
        let dx = lstm.backward(&store, &mut grads, &cache, &x, &r);
        let h = 1e-2f32;
        for idx in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let fd = (loss(&store, &xp) - loss(&store, &xm)) / (2.0 * h as f64);
            assert!((fd - dx.data[idx] as f64).abs() < 2e-3, "dx[{idx}] {fd} vs {}", dx.data[idx]);
        }
        for pid in [lstm.fwd.w_ih, lstm.fwd.w_hh, lstm.bwd.w_hh, lstm.bwd.bias] {
            for idx in [0usize, 5, 13] {
                let mut sp = store.clone();
                sp.get_mut(pid)[idx] += h;
                let mut sm = store.clone();
                sm.get_mut(pid)[idx] -= h;
                let fd = (loss(&sp, &x) - loss(&sm, &x)) / (2.0 * h as f64);
                let g = grads.get(pid)[idx] as f64;
                assert!((fd - g).abs() < 2e-3, "param {pid:?}[{idx}] {fd} vs {g}");
            }
        }
    }
}
