//! Character vocabulary, prefix fusion, the causal decoder and its loss.

mod decoder;
mod loss;
mod vocab;

pub use decoder::{LMConfig, LanguageModel, LmCache};
pub use loss::{cross_entropy_sum, masked_loss};
pub use vocab::{Vocabulary, BOS, EOS, PAD};

use ndarray::{concatenate, Axis};

use crate::adapters::TokenEmbeddingSequence;
use crate::error::ModelError;

/// Concatenates `[visual ; audio ; text]`. Empty parts are skipped; at least
/// one of `audio` and `text` must be non-empty.
pub fn fuse(
    visual: &TokenEmbeddingSequence,
    audio: &TokenEmbeddingSequence,
    text: &TokenEmbeddingSequence,
) -> Result<TokenEmbeddingSequence, ModelError> {
    if audio.is_empty() && text.is_empty() {
        return Err(ModelError::NoInstruction);
    }
    let parts: Vec<&TokenEmbeddingSequence> = [visual, audio, text]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect();
    let width = parts[0].width();
    for part in &parts[1..] {
        if part.width() != width {
            return Err(ModelError::WidthMismatch {
                what: "fused sequence",
                expected: width,
                got: part.width(),
            });
        }
    }
    let views: Vec<_> = parts.iter().map(|s| s.0.view()).collect();
    let joined = concatenate(Axis(0), &views).expect("widths checked");
    Ok(TokenEmbeddingSequence(joined))
}
