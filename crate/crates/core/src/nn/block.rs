use super::{
    gelu, gelu_grad, AttentionCache, Grads, Init, KvCache, LayerNorm, LayerNormCache, Linear,
    Matrix, ParamStore, SelfAttention,
};

/// Affine, exact GELU, affine.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Matrix,
    pre: Matrix,
    act: Matrix,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        out_std: f64,
    ) -> Self {
        let fc1 = Linear::new(
            store,
            init,
            &format!("{name}.fc1"),
            in_dim,
            hidden,
            1.0 / (in_dim as f64).sqrt(),
        );
        let fc2 = Linear::new(store, init, &format!("{name}.fc2"), hidden, out_dim, out_std);
        Self { fc1, fc2 }
    }

    pub fn forward_train(&self, p: &ParamStore, x: &Matrix) -> (Matrix, MlpCache) {
        let pre = self.fc1.forward(p, x);
        let act = pre.mapv(gelu);
        let out = self.fc2.forward(p, &act);
        (
            out,
            MlpCache {
                input: x.clone(),
                pre,
                act,
            },
        )
    }

    pub fn forward(&self, p: &ParamStore, x: &Matrix) -> Matrix {
        let act = self.fc1.forward(p, x).mapv(gelu);
        self.fc2.forward(p, &act)
    }

    pub fn backward(&self, p: &ParamStore, cache: &MlpCache, dy: &Matrix, g: &mut Grads) -> Matrix {
        let mut dact = self.fc2.backward(p, &cache.act, dy, g);
        dact.zip_mut_with(&cache.pre, |d, &x| *d *= gelu_grad(x));
        self.fc1.backward(p, &cache.input, &dact, g)
    }
}

/// Pre-norm transformer block: `h = x + attn(ln1(x))`, `y = h + mlp(ln2(h))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    ln2: LayerNormCache,
    mlp: MlpCache,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        dim: usize,
        n_heads: usize,
        ffn_mult: usize,
        causal: bool,
        residual_std: f64,
    ) -> Self {
        let ln1 = LayerNorm::new(store, init, &format!("{name}.ln1"), dim);
        let attn = SelfAttention::new(
            store,
            init,
            &format!("{name}.attn"),
            dim,
            n_heads,
            causal,
            residual_std,
        );
        let ln2 = LayerNorm::new(store, init, &format!("{name}.ln2"), dim);
        let mlp = Mlp::new(
            store,
            init,
            &format!("{name}.mlp"),
            dim,
            ffn_mult * dim,
            dim,
            residual_std,
        );
        Self { ln1, attn, ln2, mlp }
    }

    pub fn forward_train(&self, p: &ParamStore, x: &Matrix) -> (Matrix, BlockCache) {
        let (n1, ln1) = self.ln1.forward_train(p, x);
        let (a, attn) = self.attn.forward_train(p, &n1);
        let h = x + &a;
        let (n2, ln2) = self.ln2.forward_train(p, &h);
        let (m, mlp) = self.mlp.forward_train(p, &n2);
        (h + &m, BlockCache { ln1, attn, ln2, mlp })
    }

    pub fn backward(&self, p: &ParamStore, c: &BlockCache, dy: &Matrix, g: &mut Grads) -> Matrix {
        let dn2 = self.mlp.backward(p, &c.mlp, dy, g);
        let dh = dy + &self.ln2.backward(p, &c.ln2, &dn2, g);
        let dn1 = self.attn.backward(p, &c.attn, &dh, g);
        &dh + &self.ln1.backward(p, &c.ln1, &dn1, g)
    }

    pub fn forward_incremental(&self, p: &ParamStore, x: &Matrix, kv: &mut KvCache) -> Matrix {
        let h = x + &self.attn.forward_incremental(p, &self.ln1.forward(p, x), kv);
        let m = self.mlp.forward(p, &self.ln2.forward(p, &h));
        h + &m
    }
}

/// A sequence of transformer blocks applied in order.
#[derive(Debug, Clone, Default)]
pub struct TransformerStack {
    pub blocks: Vec<TransformerBlock>,
}

#[derive(Debug, Clone)]
pub struct StackCache(Vec<BlockCache>);

impl TransformerStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        n_blocks: usize,
        dim: usize,
        n_heads: usize,
        ffn_mult: usize,
        causal: bool,
    ) -> Self {
        let residual_std = 1.0 / (dim as f64).sqrt() / ((2 * n_blocks.max(1)) as f64).sqrt();
        let blocks = (0..n_blocks)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    init,
                    &format!("{name}.{i}"),
                    dim,
                    n_heads,
                    ffn_mult,
                    causal,
                    residual_std,
                )
            })
            .collect();
        Self { blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn forward_train(&self, p: &ParamStore, x: &Matrix) -> (Matrix, StackCache) {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, c) = block.forward_train(p, &h);
            caches.push(c);
            h = next;
        }
        (h, StackCache(caches))
    }

    pub fn backward(&self, p: &ParamStore, c: &StackCache, dy: &Matrix, g: &mut Grads) -> Matrix {
        let mut d = dy.clone();
        for (block, cache) in self.blocks.iter().zip(&c.0).rev() {
            d = block.backward(p, cache, &d, g);
        }
        d
    }

    pub fn forward_incremental(&self, p: &ParamStore, x: &Matrix, kv: &mut [KvCache]) -> Matrix {
        let mut h = x.clone();
        for (block, cache) in self.blocks.iter().zip(kv.iter_mut()) {
            h = block.forward_incremental(p, &h, cache);
        }
        h
    }
}
