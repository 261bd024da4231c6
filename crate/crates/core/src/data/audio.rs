//! Deterministic pseudo-speech: one seeded vector per character, held for a
//! fixed number of frames.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DataError;
use crate::encoders::{AudioFeatureSequence, MAX_AUDIO_FRAMES};
use crate::nn::Matrix;

pub const DEFAULT_FRAMES_PER_CHAR: usize = 3;

/// Audio seed shared by every generated split, so that a character sounds
/// the same in training and test data.
pub const DEFAULT_AUDIO_SEED: u64 = 0x5eed_a0d1;

/// [`synth_audio_features_with`] at three frames per character.
pub fn synth_audio_features(
    text: &str,
    d_audio: usize,
    seed: u64,
) -> Result<AudioFeatureSequence, DataError> {
    synth_audio_features_with(text, d_audio, seed, DEFAULT_FRAMES_PER_CHAR)
}

pub fn synth_audio_features_with(
    text: &str,
    d_audio: usize,
    seed: u64,
    frames_per_char: usize,
) -> Result<AudioFeatureSequence, DataError> {
    if text.is_empty() {
        return Err(DataError::EmptyText);
    }
    if d_audio < 8 {
        return Err(DataError::AudioWidth(d_audio));
    }
    let r = frames_per_char.max(1);
    let chars: Vec<char> = text.chars().collect();
    let n_frames = (chars.len() * r).min(MAX_AUDIO_FRAMES);
    let mut table: HashMap<char, Vec<f64>> = HashMap::new();
    let mut frames = Matrix::zeros((n_frames, d_audio));
    for (f, mut row) in frames.rows_mut().into_iter().enumerate() {
        let c = chars[f / r];
        let v = table.entry(c).or_insert_with(|| char_vector(c, d_audio, seed));
        for (dst, src) in row.iter_mut().zip(v.iter()) {
            *dst = *src;
        }
    }
    Ok(AudioFeatureSequence::new(frames).expect("length within limits"))
}

fn char_vector(c: char, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u32::from(c) as u64);
    (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_chars_give_thirty_frames() {
        let a = synth_audio_features("abcdefghij", 16, 1).unwrap();
        assert_eq!((a.len(), a.width()), (30, 16));
    }

    #[test]
    fn frames_repeat_within_a_character() {
        let a = synth_audio_features("ab", 8, 1).unwrap();
        let f = a.frames();
        assert_eq!(f.row(0), f.row(1));
        assert_eq!(f.row(1), f.row(2));
        assert_ne!(f.row(2), f.row(3));
    }

    #[test]
    fn order_matters() {
        let ab = synth_audio_features("ab", 8, 1).unwrap();
        let ba = synth_audio_features("ba", 8, 1).unwrap();
        assert_ne!(ab.frames(), ba.frames());
        assert_eq!(ab.frames().row(0), ba.frames().row(3));
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let a = synth_audio_features("hello", 8, 4).unwrap();
        assert_eq!(a, synth_audio_features("hello", 8, 4).unwrap());
        assert_ne!(a, synth_audio_features("hello", 8, 5).unwrap());
    }

    #[test]
    fn long_text_is_truncated() {
        let text = "x".repeat(600);
        assert_eq!(synth_audio_features(&text, 8, 1).unwrap().len(), 1500);
    }

    #[test]
    fn errors() {
        assert!(matches!(synth_audio_features("", 8, 1), Err(DataError::EmptyText)));
        assert!(matches!(synth_audio_features("a", 4, 1), Err(DataError::AudioWidth(4))));
    }
}
