//! Dense building blocks with hand-written backward passes.
//!
//! Every layer follows the same convention: `forward_train` returns the output
//! together with whatever the backward pass needs, and `backward` consumes that
//! cache, accumulates parameter gradients into a [`Grads`] buffer and returns
//! the gradient with respect to the layer input. Parameters live in a single
//! [`ParamStore`] so that the optimizer, checkpointing and freezing logic can
//! treat the whole model as a flat list of named matrices.

mod attention;
mod block;
mod layers;
mod position;

pub use attention::{AttentionCache, KvCache, SelfAttention};
pub use block::{BlockCache, Mlp, MlpCache, TransformerBlock, TransformerStack, StackCache};
pub use layers::{gelu, gelu_grad, Conv1d, Conv1dCache, LayerNorm, LayerNormCache, Linear};
pub use position::sinusoidal_table;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Row-major dense matrix; rows are sequence positions, columns are features.
pub type Matrix = Array2<f64>;

/// Handle to one parameter matrix inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ParamEntry {
    name: String,
    value: Matrix,
}

/// Flat, ordered collection of named parameter matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique; a duplicate is a wiring bug.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Number of scalars whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.value.len())
            .sum()
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    values: Vec<Matrix>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            values: store
                .entries
                .iter()
                .map(|e| Matrix::zeros(e.value.raw_dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    /// Buffer by position, in parameter registration order.
    pub fn values_at(&self, i: usize) -> &Matrix {
        &self.values[i]
    }

    pub fn values_at_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.values[i]
    }

    pub fn zero(&mut self) {
        for v in &mut self.values {
            v.fill(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Seeded parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        if std == 0.0 {
            return Matrix::zeros((rows, cols));
        }
        let dist = Normal::new(0.0, std).expect("finite std");
        Matrix::from_shape_simple_fn((rows, cols), || dist.sample(&mut self.rng))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::zeros((rows, cols))
    }

    pub fn ones(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::ones((rows, cols))
    }
}
