use ndarray::{s, Array1, Axis};

use super::{Grads, Init, Linear, Matrix, ParamStore};

/// Multi-head scaled dot-product self-attention with a fused QKV projection.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub n_heads: usize,
    pub causal: bool,
    dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    input: Matrix,
    qkv: Matrix,
    probs: Vec<Matrix>,
    context: Matrix,
}

/// Keys and values of already-processed positions, for incremental decoding.
#[derive(Debug, Clone)]
pub struct KvCache {
    keys: Matrix,
    values: Matrix,
    len: usize,
}

impl KvCache {
    pub fn with_capacity(capacity: usize, dim: usize) -> Self {
        Self {
            keys: Matrix::zeros((capacity, dim)),
            values: Matrix::zeros((capacity, dim)),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn push_rows(&mut self, keys: ndarray::ArrayView2<f64>, values: ndarray::ArrayView2<f64>) {
        let n = keys.nrows();
        if self.len + n > self.keys.nrows() {
            let cap = (self.len + n).max(self.keys.nrows() * 2);
            let mut k = Matrix::zeros((cap, self.keys.ncols()));
            let mut v = Matrix::zeros((cap, self.values.ncols()));
            k.slice_mut(s![..self.len, ..]).assign(&self.keys.slice(s![..self.len, ..]));
            v.slice_mut(s![..self.len, ..]).assign(&self.values.slice(s![..self.len, ..]));
            self.keys = k;
            self.values = v;
        }
        self.keys.slice_mut(s![self.len..self.len + n, ..]).assign(&keys);
        self.values.slice_mut(s![self.len..self.len + n, ..]).assign(&values);
        self.len += n;
    }
}

fn softmax_rows_inplace(m: &mut Matrix) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row /= sum;
    }
}

impl SelfAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        dim: usize,
        n_heads: usize,
        causal: bool,
        out_std: f64,
    ) -> Self {
        assert!(
            n_heads > 0 && dim % n_heads == 0,
            "width {dim} not divisible by {n_heads} heads"
        );
        let std = 1.0 / (dim as f64).sqrt();
        let qkv = Linear::new(store, init, &format!("{name}.qkv"), dim, 3 * dim, std);
        let proj = Linear::new(store, init, &format!("{name}.proj"), dim, dim, out_std);
        Self {
            qkv,
            proj,
            n_heads,
            causal,
            dim,
        }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    pub fn forward_train(&self, p: &ParamStore, x: &Matrix) -> (Matrix, AttentionCache) {
        let t = x.nrows();
        let d = self.dim;
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let qkv = self.qkv.forward(p, x);
        let mut context = Matrix::zeros((t, d));
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let q = qkv.slice(s![.., h * hd..(h + 1) * hd]);
            let k = qkv.slice(s![.., d + h * hd..d + (h + 1) * hd]);
            let v = qkv.slice(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]);
            let mut scores = q.dot(&k.t());
            scores *= scale;
            if self.causal {
                for i in 0..t {
                    scores.slice_mut(s![i, i + 1..]).fill(f64::NEG_INFINITY);
                }
            }
            softmax_rows_inplace(&mut scores);
            context
                .slice_mut(s![.., h * hd..(h + 1) * hd])
                .assign(&scores.dot(&v));
            probs.push(scores);
        }
        let out = self.proj.forward(p, &context);
        (
            out,
            AttentionCache {
                input: x.clone(),
                qkv,
                probs,
                context,
            },
        )
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        cache: &AttentionCache,
        dy: &Matrix,
        g: &mut Grads,
    ) -> Matrix {
        let t = dy.nrows();
        let d = self.dim;
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let dcontext = self.proj.backward(p, &cache.context, dy, g);
        let mut dqkv = Matrix::zeros((t, 3 * d));
        for h in 0..self.n_heads {
            let q = cache.qkv.slice(s![.., h * hd..(h + 1) * hd]);
            let k = cache.qkv.slice(s![.., d + h * hd..d + (h + 1) * hd]);
            let v = cache.qkv.slice(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]);
            let probs = &cache.probs[h];
            let dctx = dcontext.slice(s![.., h * hd..(h + 1) * hd]);
            let dprobs = dctx.dot(&v.t());
            let dv = probs.t().dot(&dctx);
            // softmax backward: dS = P * (dP - rowsum(dP * P))
            let row_dot: Array1<f64> = (&dprobs * probs).sum_axis(Axis(1));
            let mut dscores = dprobs;
            dscores -= &row_dot.insert_axis(Axis(1));
            dscores *= probs;
            dscores *= scale;
            let dq = dscores.dot(&k);
            let dk = dscores.t().dot(&q);
            dqkv.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&dq);
            dqkv.slice_mut(s![.., d + h * hd..d + (h + 1) * hd])
                .assign(&dk);
            dqkv.slice_mut(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd])
                .assign(&dv);
        }
        self.qkv.backward(p, &cache.input, &dqkv, g)
    }

    /// Inference for new rows `x` appended after the rows already in `kv`.
    /// Causal masking is relative to the absolute position of each new row.
    pub fn forward_incremental(&self, p: &ParamStore, x: &Matrix, kv: &mut KvCache) -> Matrix {
        let n = x.nrows();
        let d = self.dim;
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let qkv = self.qkv.forward(p, x);
        let past = kv.len;
        kv.push_rows(qkv.slice(s![.., d..2 * d]), qkv.slice(s![.., 2 * d..]));
        let total = kv.len;
        let mut context = Matrix::zeros((n, d));
        for h in 0..self.n_heads {
            let q = qkv.slice(s![.., h * hd..(h + 1) * hd]);
            let k = kv.keys.slice(s![..total, h * hd..(h + 1) * hd]);
            let v = kv.values.slice(s![..total, h * hd..(h + 1) * hd]);
            let mut scores = q.dot(&k.t());
            scores *= scale;
            if self.causal {
                for i in 0..n {
                    scores.slice_mut(s![i, past + i + 1..]).fill(f64::NEG_INFINITY);
                }
            }
            softmax_rows_inplace(&mut scores);
            context
                .slice_mut(s![.., h * hd..(h + 1) * hd])
                .assign(&scores.dot(&v));
        }
        self.proj.forward(p, &context)
    }
}
