mod common;

use proptest::prelude::*;

use speechvqa_core::adapters::{AdapterConfig, AdapterKind, AudioAdapter, TokenEmbeddingSequence};
use speechvqa_core::data::{
    generate_dataset, normalize_text, synth_audio_features, DatasetConfig, DEFAULT_AUDIO_SEED,
};
use speechvqa_core::encoders::{
    AudioEncoder, AudioEncoderConfig, AudioFeatureSequence, ImageTensor, VisualEncoder, VisualEncoderConfig,
};
use speechvqa_core::language::{fuse, Vocabulary};
use speechvqa_core::metrics::parse_bbox;
use speechvqa_core::nn::{Init, Matrix, ParamStore};

fn printable() -> impl Strategy<Value = String> {
    proptest::collection::vec(32u8..=126, 0..60).prop_map(|b| String::from_utf8(b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn vocabulary_round_trip(s in printable()) {
        let v = Vocabulary::new();
        prop_assert_eq!(v.decode(&v.encode(&s).unwrap()), s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn normalisation_is_idempotent(s in "\\PC{0,40}") {
        let once = normalize_text(&s).text;
        prop_assert_eq!(normalize_text(&once).text, once.clone());
    }

    #[test]
    fn normalisation_of_markup_is_idempotent(s in "[a-z $\\\\{}^_0-9+,.]{0,40}") {
        let once = normalize_text(&s).text;
        prop_assert_eq!(normalize_text(&once).text, once.clone());
    }

    #[test]
    fn audio_length_law(len in 1usize..700) {
        let text: String = "ab c".chars().cycle().take(len).collect();
        let a = synth_audio_features(&text, 16, DEFAULT_AUDIO_SEED).unwrap();
        prop_assert_eq!(a.len(), (3 * len).min(1500));
        prop_assert_eq!(a.width(), 16);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_samples_satisfy_their_invariants(seed in any::<u64>()) {
        let ds = generate_dataset(&DatasetConfig::new(4, seed, 16)).unwrap();
        for s in &ds.samples {
            let b = s.bbox.unwrap();
            let (w, h) = s.image_size;
            prop_assert!(b.x1 < b.x2 && b.x2 <= w && b.y1 < b.y2 && b.y2 <= h);
            prop_assert_eq!(parse_bbox(&s.response_text), Some(b));
            prop_assert_eq!(s.audio_features.len(), (3 * s.instruction_text.chars().count()).min(1500));
            prop_assert_eq!(normalize_text(&s.instruction_text).text, s.instruction_text.clone());
        }
    }

    #[test]
    fn audio_encoder_preserves_shape(frames in 1usize..40, seed in any::<u64>()) {
        let cfg = AudioEncoderConfig { d_audio: 16, n_blocks: 1, n_heads: 2, ..AudioEncoderConfig::default() };
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let enc = AudioEncoder::new(&mut store, &mut init, "a", &cfg);
        let x = AudioFeatureSequence::new(init.normal(frames, 16, 1.0)).unwrap();
        let y = enc.encode(&store, &x).unwrap();
        prop_assert_eq!((y.len(), y.width()), (frames, 16));
        prop_assert_eq!(enc.encode(&store, &x).unwrap(), y);
    }

    #[test]
    fn visual_token_count_law(h in 32usize..300, w in 32usize..300, seed in any::<u64>()) {
        let cfg = VisualEncoderConfig { d_visual: 16, n_blocks: 1, n_heads: 2, ..VisualEncoderConfig::default() };
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let enc = VisualEncoder::new(&mut store, &mut init, "v", &cfg).unwrap();
        let img = ImageTensor::new(h, w, 3, vec![0.5; h * w * 3]).unwrap();
        let t = enc.encode(&store, &img).unwrap();
        prop_assert_eq!((t.len(), t.width()), (49, 16));
    }

    #[test]
    fn adapters_preserve_token_count(n in 1usize..30, kind_ix in 0usize..3, seed in any::<u64>()) {
        let kind = AdapterKind::ALL[kind_ix];
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let mut cfg = AdapterConfig::new(kind, 16, 24);
        cfg.n_heads = 2;
        let a = AudioAdapter::new(&mut store, &mut init, "ad", &cfg).unwrap();
        let x = init.normal(n, 16, 1.0);
        let y = a.apply(&store, &x).unwrap();
        prop_assert_eq!((y.len(), y.width()), (n, 24));
    }

    #[test]
    fn fuse_keeps_order_and_values(v in 0usize..5, a in 0usize..5, t in 0usize..5, seed in any::<u64>()) {
        prop_assume!(a + t > 0);
        let mut init = Init::new(seed);
        let parts: Vec<Matrix> = [v, a, t].iter().map(|&n| init.normal(n, 8, 1.0)).collect();
        let seqs: Vec<TokenEmbeddingSequence> = parts.iter().cloned().map(TokenEmbeddingSequence).collect();
        let fused = fuse(&seqs[0], &seqs[1], &seqs[2]).unwrap();
        prop_assert_eq!(fused.len(), v + a + t);
        let mut row = 0;
        for p in &parts {
            for r in 0..p.nrows() {
                prop_assert_eq!(fused.0.row(row), p.row(r));
                row += 1;
            }
        }
    }
}

#[test]
fn dataset_generation_is_bit_reproducible() {
    let a = common::tiny_dataset(6, 99);
    let b = common::tiny_dataset(6, 99);
    assert_eq!(a.manifest.content_hash, b.manifest.content_hash);
    assert_eq!(a.samples, b.samples);
}
