//! Projections from encoder widths into the language-model embedding space.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::nn::{
    Grads, Init, Linear, Matrix, Mlp, MlpCache, ParamStore, StackCache, TransformerStack,
};

/// Vectors of the language model's embedding width, one per token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSequence(pub Matrix);

impl TokenEmbeddingSequence {
    pub fn empty(width: usize) -> Self {
        Self(Matrix::zeros((0, width)))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Linear,
    Mlp,
    Transformer,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 3] = [AdapterKind::Linear, AdapterKind::Mlp, AdapterKind::Transformer];

    pub fn as_str(&self) -> &'static str {
        match self {
            AdapterKind::Linear => "linear",
            AdapterKind::Mlp => "mlp",
            AdapterKind::Transformer => "transformer",
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for AdapterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(AdapterKind::Linear),
            "mlp" => Ok(AdapterKind::Mlp),
            "transformer" => Ok(AdapterKind::Transformer),
            other => Err(format!("unknown adapter kind `{other}` (expected linear, mlp or transformer)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Mlp only; `None` means `2 * in_dim`.
    pub hidden_dim: Option<usize>,
    /// Transformer only.
    pub n_blocks: usize,
    /// Transformer only.
    pub n_heads: usize,
}

impl AdapterConfig {
    pub fn new(kind: AdapterKind, in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind,
            in_dim,
            out_dim,
            hidden_dim: None,
            n_blocks: 1,
            n_heads: 4,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden_dim.unwrap_or(2 * self.in_dim)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.in_dim == 0 || self.out_dim == 0 || self.hidden() == 0 {
            return Err(ModelError::Config("adapter dims must be positive".into()));
        }
        if self.kind == AdapterKind::Transformer
            && (self.n_blocks == 0 || self.n_heads == 0 || self.in_dim % self.n_heads != 0)
        {
            return Err(ModelError::Config(format!(
                "transformer adapter needs n_blocks > 0 and in_dim {} divisible by n_heads {}",
                self.in_dim, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum AudioAdapterBody {
    Linear(Linear),
    Mlp(Mlp),
    Transformer(TransformerStack, Linear),
}

/// Audio adapter; the variant is chosen by [`AdapterConfig::kind`] and all
/// variants map `L x in_dim` to `L x out_dim`.
#[derive(Debug, Clone)]
pub struct AudioAdapter {
    pub cfg: AdapterConfig,
    body: AudioAdapterBody,
}

#[derive(Debug, Clone)]
pub enum AudioAdapterCache {
    Linear(Matrix),
    Mlp(MlpCache),
    Transformer(StackCache, Matrix),
}

impl AudioAdapter {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cfg: &AdapterConfig,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let std_in = 1.0 / (cfg.in_dim as f64).sqrt();
        let body = match cfg.kind {
            AdapterKind::Linear => AudioAdapterBody::Linear(Linear::new(
                store,
                init,
                &format!("{name}.linear"),
                cfg.in_dim,
                cfg.out_dim,
                std_in,
            )),
            AdapterKind::Mlp => AudioAdapterBody::Mlp(Mlp::new(
                store,
                init,
                &format!("{name}.mlp"),
                cfg.in_dim,
                cfg.hidden(),
                cfg.out_dim,
                1.0 / (cfg.hidden() as f64).sqrt(),
            )),
            AdapterKind::Transformer => {
                let blocks = TransformerStack::new(
                    store,
                    init,
                    &format!("{name}.blocks"),
                    cfg.n_blocks,
                    cfg.in_dim,
                    cfg.n_heads,
                    4,
                    false,
                );
                let out = Linear::new(
                    store,
                    init,
                    &format!("{name}.out"),
                    cfg.in_dim,
                    cfg.out_dim,
                    std_in,
                );
                AudioAdapterBody::Transformer(blocks, out)
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            body,
        })
    }

    /// The single affine map of a linear adapter.
    pub fn linear(&self) -> Option<&Linear> {
        match &self.body {
            AudioAdapterBody::Linear(l) => Some(l),
            _ => None,
        }
    }

    pub fn forward_train(
        &self,
        p: &ParamStore,
        x: &Matrix,
    ) -> Result<(Matrix, AudioAdapterCache), ModelError> {
        if x.ncols() != self.cfg.in_dim {
            return Err(ModelError::WidthMismatch {
                what: "audio adapter input",
                expected: self.cfg.in_dim,
                got: x.ncols(),
            });
        }
        Ok(match &self.body {
            AudioAdapterBody::Linear(l) => (l.forward(p, x), AudioAdapterCache::Linear(x.clone())),
            AudioAdapterBody::Mlp(m) => {
                let (y, c) = m.forward_train(p, x);
                (y, AudioAdapterCache::Mlp(c))
            }
            AudioAdapterBody::Transformer(blocks, out) => {
                let (h, c) = blocks.forward_train(p, x);
                (out.forward(p, &h), AudioAdapterCache::Transformer(c, h))
            }
        })
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        cache: &AudioAdapterCache,
        dy: &Matrix,
        g: &mut Grads,
    ) -> Matrix {
        match (&self.body, cache) {
            (AudioAdapterBody::Linear(l), AudioAdapterCache::Linear(x)) => l.backward(p, x, dy, g),
            (AudioAdapterBody::Mlp(m), AudioAdapterCache::Mlp(c)) => m.backward(p, c, dy, g),
            (AudioAdapterBody::Transformer(blocks, out), AudioAdapterCache::Transformer(c, h)) => {
                let dh = out.backward(p, h, dy, g);
                blocks.backward(p, c, &dh, g)
            }
            _ => unreachable!("adapter cache from a different variant"),
        }
    }

    pub fn apply(&self, p: &ParamStore, x: &Matrix) -> Result<TokenEmbeddingSequence, ModelError> {
        Ok(TokenEmbeddingSequence(self.forward_train(p, x)?.0))
    }
}

/// Two affine maps with a GELU between them.
#[derive(Debug, Clone)]
pub struct VisualAdapter {
    pub in_dim: usize,
    pub mlp: Mlp,
}

impl VisualAdapter {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Self {
        let mlp = Mlp::new(store, init, name, in_dim, hidden, out_dim, 1.0 / (hidden as f64).sqrt());
        Self { in_dim, mlp }
    }

    pub fn forward_train(&self, p: &ParamStore, x: &Matrix) -> Result<(Matrix, MlpCache), ModelError> {
        if x.ncols() != self.in_dim {
            return Err(ModelError::WidthMismatch {
                what: "visual adapter input",
                expected: self.in_dim,
                got: x.ncols(),
            });
        }
        Ok(self.mlp.forward_train(p, x))
    }

    pub fn backward(&self, p: &ParamStore, cache: &MlpCache, dy: &Matrix, g: &mut Grads) -> Matrix {
        self.mlp.backward(p, cache, dy, g)
    }

    pub fn apply(&self, p: &ParamStore, x: &Matrix) -> Result<TokenEmbeddingSequence, ModelError> {
        Ok(TokenEmbeddingSequence(self.forward_train(p, x)?.0))
    }
}
