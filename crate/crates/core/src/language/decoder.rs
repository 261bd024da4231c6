use ndarray::s;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, BOS, EOS};
use crate::error::ModelError;
use crate::nn::{
    sinusoidal_table, Grads, Init, KvCache, LayerNorm, LayerNormCache, Linear, Matrix, ParamId,
    ParamStore, StackCache, TransformerStack,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LMConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_sequence: usize,
    pub vocab_size: usize,
    pub ffn_mult: usize,
}

impl Default for LMConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            n_layers: 4,
            n_heads: 4,
            max_sequence: 1024,
            vocab_size: Vocabulary::new().size(),
            ffn_mult: 4,
        }
    }
}

impl LMConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size != Vocabulary::new().size() {
            return Err(ModelError::Config(format!(
                "vocab_size {} does not match the character vocabulary ({})",
                self.vocab_size,
                Vocabulary::new().size()
            )));
        }
        Ok(())
    }
}

/// Causal decoder over `[prefix ; embed(BOS, targets[..n-1])]` with a
/// vocabulary head on the target positions.
#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub cfg: LMConfig,
    pub tok_embed: ParamId,
    pub blocks: TransformerStack,
    pub ln_f: LayerNorm,
    pub head: Linear,
}

#[derive(Debug, Clone)]
pub struct LmCache {
    prefix_len: usize,
    input_ids: Vec<usize>,
    blocks: StackCache,
    ln_f: LayerNormCache,
    normed: Matrix,
}

impl LanguageModel {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cfg: &LMConfig,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let d = cfg.d_model;
        let tok_embed = store.add(
            format!("{name}.tok_embed"),
            init.normal(cfg.vocab_size, d, 1.0),
        );
        let blocks = TransformerStack::new(
            store,
            init,
            &format!("{name}.blocks"),
            cfg.n_layers,
            d,
            cfg.n_heads,
            cfg.ffn_mult,
            true,
        );
        let ln_f = LayerNorm::new(store, init, &format!("{name}.ln_f"), d);
        // small head so that the initial distribution is close to uniform
        let head = Linear::new(store, init, &format!("{name}.head"), d, cfg.vocab_size, 0.02);
        Ok(Self {
            cfg: cfg.clone(),
            tok_embed,
            blocks,
            ln_f,
            head,
        })
    }

    pub fn embed_tokens(&self, p: &ParamStore, ids: &[usize]) -> Matrix {
        let table = p.get(self.tok_embed);
        let mut out = Matrix::zeros((ids.len(), self.cfg.d_model));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&table.row(id));
        }
        out
    }

    /// Accumulates `d_embedded` (one row per id) into the embedding table.
    pub fn embed_backward(&self, ids: &[usize], d_embedded: ndarray::ArrayView2<f64>, g: &mut Grads) {
        let table = g.get_mut(self.tok_embed);
        for (r, &id) in ids.iter().enumerate() {
            let mut row = table.row_mut(id);
            row += &d_embedded.row(r);
        }
    }

    fn check_prefix(&self, prefix: &Matrix, n_targets: usize) -> Result<(), ModelError> {
        if prefix.ncols() != self.cfg.d_model {
            return Err(ModelError::WidthMismatch {
                what: "language model prefix",
                expected: self.cfg.d_model,
                got: prefix.ncols(),
            });
        }
        let len = prefix.nrows() + n_targets;
        if len > self.cfg.max_sequence {
            return Err(ModelError::Overlength {
                len,
                max: self.cfg.max_sequence,
            });
        }
        Ok(())
    }

    /// Logits (`targets.len() x vocab`) where row `t` predicts `targets[t]`
    /// from the prefix and `targets[..t]`.
    pub fn forward_train(
        &self,
        p: &ParamStore,
        prefix: &Matrix,
        targets: &[usize],
    ) -> Result<(Matrix, LmCache), ModelError> {
        self.check_prefix(prefix, targets.len())?;
        let pl = prefix.nrows();
        let n = targets.len();
        let mut input_ids = Vec::with_capacity(n);
        if n > 0 {
            input_ids.push(BOS);
            input_ids.extend_from_slice(&targets[..n - 1]);
        }
        let mut x = Matrix::zeros((pl + n, self.cfg.d_model));
        x.slice_mut(s![..pl, ..]).assign(prefix);
        x.slice_mut(s![pl.., ..]).assign(&self.embed_tokens(p, &input_ids));
        x += &sinusoidal_table(pl + n, self.cfg.d_model);
        let (h, blocks) = self.blocks.forward_train(p, &x);
        let (normed, ln_f) = self.ln_f.forward_train(p, &h.slice(s![pl.., ..]).to_owned());
        let logits = self.head.forward(p, &normed);
        Ok((
            logits,
            LmCache {
                prefix_len: pl,
                input_ids,
                blocks,
                ln_f,
                normed,
            },
        ))
    }

    pub fn forward(&self, p: &ParamStore, prefix: &Matrix, targets: &[usize]) -> Result<Matrix, ModelError> {
        Ok(self.forward_train(p, prefix, targets)?.0)
    }

    /// Returns the gradient with respect to the prefix.
    pub fn backward(&self, p: &ParamStore, cache: &LmCache, dlogits: &Matrix, g: &mut Grads) -> Matrix {
        let pl = cache.prefix_len;
        let dnormed = self.head.backward(p, &cache.normed, dlogits, g);
        let dtail = self.ln_f.backward(p, &cache.ln_f, &dnormed, g);
        let mut dh = Matrix::zeros((pl + dtail.nrows(), self.cfg.d_model));
        dh.slice_mut(s![pl.., ..]).assign(&dtail);
        let dx = self.blocks.backward(p, &cache.blocks, &dh, g);
        self.embed_backward(&cache.input_ids, dx.slice(s![pl.., ..]), g);
        dx.slice(s![..pl, ..]).to_owned()
    }

    fn next_logits(&self, p: &ParamStore, last_hidden: ndarray::ArrayView1<f64>) -> Matrix {
        let h = last_hidden.to_owned().insert_axis(ndarray::Axis(0));
        self.head.forward(p, &self.ln_f.forward(p, &h))
    }

    /// Greedy decoding from BOS until EOS, `max_new` tokens or the sequence
    /// limit. Returns the generated ids without BOS/EOS. Ties in the argmax
    /// go to the lowest id.
    pub fn generate_ids(&self, p: &ParamStore, prefix: &Matrix, max_new: usize) -> Result<Vec<usize>, ModelError> {
        self.check_prefix(prefix, 0)?;
        let mut out = Vec::new();
        if max_new == 0 {
            return Ok(out);
        }
        let d = self.cfg.d_model;
        let pl = prefix.nrows();
        let budget = max_new.min(self.cfg.max_sequence.saturating_sub(pl));
        if budget == 0 {
            return Ok(out);
        }
        let pe = sinusoidal_table(pl + budget, d);
        let mut kv: Vec<KvCache> = (0..self.blocks.len())
            .map(|_| KvCache::with_capacity(pl + budget, d))
            .collect();
        let mut x = Matrix::zeros((pl + 1, d));
        x.slice_mut(s![..pl, ..]).assign(prefix);
        x.row_mut(pl).assign(&p.get(self.tok_embed).row(BOS));
        x += &pe.slice(s![..pl + 1, ..]);
        let mut pos = pl;
        loop {
            let h = self.blocks.forward_incremental(p, &x, &mut kv);
            let logits = self.next_logits(p, h.row(h.nrows() - 1));
            let next = argmax(logits.row(0));
            if next == EOS {
                break;
            }
            out.push(next);
            pos += 1;
            if out.len() == budget {
                break;
            }
            let mut row = p.get(self.tok_embed).row(next).to_owned();
            row += &pe.row(pos);
            x = row.insert_axis(ndarray::Axis(0));
        }
        Ok(out)
    }
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (ParamStore, LanguageModel) {
        let mut store = ParamStore::new();
        let mut init = Init::new(17);
        let cfg = LMConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            max_sequence: 64,
            ffn_mult: 2,
            ..LMConfig::default()
        };
        let lm = LanguageModel::new(&mut store, &mut init, "lm", &cfg).unwrap();
        // larger head so that generation is not dominated by ties
        let head = lm.head.weight;
        let w = Init::new(3).normal(16, 98, 1.0);
        *store.get_mut(head) = w;
        (store, lm)
    }

    #[test]
    fn causality_over_every_target_position() {
        let (store, lm) = tiny();
        let prefix = Init::new(1).normal(5, 16, 1.0);
        let targets: Vec<usize> = (0..16).map(|i| 3 + (i * 7) % 90).collect();
        let base = lm.forward(&store, &prefix, &targets).unwrap();
        for j in 0..targets.len() {
            let mut t2 = targets.clone();
            t2[j] = if t2[j] == 50 { 51 } else { 50 };
            let pert = lm.forward(&store, &prefix, &t2).unwrap();
            // logits at t depend on targets[..t]; so rows 0..=j are unchanged
            for t in 0..=j {
                assert_eq!(base.row(t), pert.row(t), "position {t} saw target {j}");
            }
            if j + 1 < targets.len() {
                assert_ne!(base.row(j + 1), pert.row(j + 1));
            }
        }
    }

    #[test]
    fn prefix_perturbation_reaches_all_targets() {
        let (store, lm) = tiny();
        let prefix = Init::new(1).normal(5, 16, 1.0);
        let targets = vec![10, 11, 12, 13];
        let base = lm.forward(&store, &prefix, &targets).unwrap();
        let mut p2 = prefix.clone();
        p2[[0, 0]] += 0.5;
        let pert = lm.forward(&store, &p2, &targets).unwrap();
        for t in 0..targets.len() {
            assert_ne!(base.row(t), pert.row(t));
        }
    }

    #[test]
    fn overlength_is_rejected() {
        let (store, lm) = tiny();
        let prefix = Matrix::zeros((60, 16));
        assert!(matches!(
            lm.forward(&store, &prefix, &[5; 5]),
            Err(ModelError::Overlength { len: 65, max: 64 })
        ));
    }

    #[test]
    fn cached_generation_matches_full_recompute() {
        let (store, lm) = tiny();
        let prefix = Init::new(8).normal(7, 16, 1.0);
        let ids = lm.generate_ids(&store, &prefix, 12).unwrap();
        // replay greedily with the full forward pass
        let mut seq: Vec<usize> = Vec::new();
        for _ in 0..12 {
            let mut probe = seq.clone();
            probe.push(0);
            let logits = lm.forward(&store, &prefix, &probe).unwrap();
            let next = argmax(logits.row(seq.len()));
            if next == EOS {
                break;
            }
            seq.push(next);
        }
        assert_eq!(ids, seq);
    }

    #[test]
    fn zero_budget_gives_nothing() {
        let (store, lm) = tiny();
        let prefix = Init::new(8).normal(7, 16, 1.0);
        assert!(lm.generate_ids(&store, &prefix, 0).unwrap().is_empty());
    }
}
