//! The assembled multimodal model and its checkpointable bundle.

use std::fmt;
use std::str::FromStr;

use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterConfig, AdapterKind, AudioAdapter, AudioAdapterCache, TokenEmbeddingSequence, VisualAdapter};
use crate::encoders::{
    AudioEncoder, AudioEncoderCache, AudioEncoderConfig, AudioFeatureSequence, ImageTensor,
    VisualEncoder, VisualEncoderCache, VisualEncoderConfig,
};
use crate::error::ModelError;
use crate::language::{cross_entropy_sum, fuse, LMConfig, LanguageModel, LmCache, Vocabulary, EOS};
use crate::nn::{Grads, Init, Matrix, MlpCache, ParamStore};
use crate::training::TrainState;

/// Environment variable naming the default profile.
pub const PROFILE_ENV: &str = "SPEECHVQA_PROFILE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 64-wide everything; for tests and the overfit runs.
    Tiny,
    /// 768-wide encoder interfaces, 256-wide language model.
    Standard,
}

impl Profile {
    pub fn as_str(&self) -> &'static str {
        match self {
            Profile::Tiny => "tiny",
            Profile::Standard => "standard",
        }
    }

    /// Reads [`PROFILE_ENV`], falling back to `Tiny` when unset.
    pub fn from_env() -> Result<Self, String> {
        match std::env::var(PROFILE_ENV) {
            Ok(v) => v.parse(),
            Err(_) => Ok(Profile::Tiny),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tiny" => Ok(Profile::Tiny),
            "standard" => Ok(Profile::Standard),
            other => Err(format!("unknown profile `{other}` (expected tiny or standard)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub audio_encoder: AudioEncoderConfig,
    pub visual_encoder: VisualEncoderConfig,
    pub audio_adapter: AdapterConfig,
    pub visual_adapter_hidden: usize,
    pub lm: LMConfig,
}

impl ModelConfig {
    pub fn for_profile(profile: Profile, kind: AdapterKind) -> Self {
        match profile {
            Profile::Tiny => Self::tiny(kind),
            Profile::Standard => Self::standard(kind),
        }
    }

    pub fn tiny(kind: AdapterKind) -> Self {
        let d = 64;
        Self {
            audio_encoder: AudioEncoderConfig {
                d_audio: d,
                ..AudioEncoderConfig::default()
            },
            visual_encoder: VisualEncoderConfig {
                d_visual: d,
                ..VisualEncoderConfig::default()
            },
            audio_adapter: AdapterConfig::new(kind, d, d),
            visual_adapter_hidden: d,
            lm: LMConfig {
                d_model: d,
                n_layers: 2,
                ..LMConfig::default()
            },
        }
    }

    pub fn standard(kind: AdapterKind) -> Self {
        let lm = LMConfig::default();
        Self {
            audio_encoder: AudioEncoderConfig::default(),
            visual_encoder: VisualEncoderConfig::default(),
            audio_adapter: AdapterConfig::new(kind, 768, lm.d_model),
            visual_adapter_hidden: lm.d_model,
            lm,
        }
    }

    pub fn d_model(&self) -> usize {
        self.lm.d_model
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.lm.validate()?;
        self.audio_adapter.validate()?;
        let d_audio = self.audio_encoder.d_audio;
        if d_audio < 8 {
            return Err(ModelError::Config(format!("d_audio {d_audio} below 8")));
        }
        if self.audio_adapter.in_dim != d_audio {
            return Err(ModelError::Config(format!(
                "audio adapter in_dim {} differs from d_audio {d_audio}",
                self.audio_adapter.in_dim
            )));
        }
        if self.audio_adapter.out_dim != self.lm.d_model {
            return Err(ModelError::Config(format!(
                "audio adapter out_dim {} differs from d_model {}",
                self.audio_adapter.out_dim, self.lm.d_model
            )));
        }
        for (what, dim, heads) in [
            ("audio encoder", d_audio, self.audio_encoder.n_heads),
            ("visual encoder", self.visual_encoder.d_visual, self.visual_encoder.n_heads),
        ] {
            if heads == 0 || dim % heads != 0 {
                return Err(ModelError::Config(format!(
                    "{what} width {dim} not divisible by {heads} heads"
                )));
            }
        }
        if self.audio_encoder.kernel % 2 == 0 {
            return Err(ModelError::Config("audio encoder kernel must be odd".into()));
        }
        Ok(())
    }

    /// First field (dotted path) whose value differs, with `(self, other)`
    /// renderings.
    pub fn diff(&self, other: &ModelConfig) -> Option<(String, String, String)> {
        first_difference_of(self, other)
    }
}

/// First differing field (dotted path) between two serialisable values,
/// with `(a, b)` renderings.
pub(crate) fn first_difference_of<T: Serialize>(a: &T, b: &T) -> Option<(String, String, String)> {
    let a = serde_json::to_value(a).expect("serialisable");
    let b = serde_json::to_value(b).expect("serialisable");
    first_difference("", &a, &b)
}

fn first_difference(
    path: &str,
    a: &serde_json::Value,
    b: &serde_json::Value,
) -> Option<(String, String, String)> {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, va) in x {
                let sub = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match y.get(k) {
                    Some(vb) => {
                        if let Some(d) = first_difference(&sub, va, vb) {
                            return Some(d);
                        }
                    }
                    None => return Some((sub, va.to_string(), "missing".into())),
                }
            }
            y.keys()
                .find(|k| !x.contains_key(*k))
                .map(|k| (format!("{path}.{k}"), "missing".into(), y[k].to_string()))
        }
        _ if a == b => None,
        _ => Some((path.to_string(), a.to_string(), b.to_string())),
    }
}

/// Parameter groups that can be trained or frozen independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    AudioEncoder,
    VisualEncoder,
    AudioAdapter,
    VisualAdapter,
    Lm,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::AudioEncoder,
        Component::VisualEncoder,
        Component::AudioAdapter,
        Component::VisualAdapter,
        Component::Lm,
    ];

    /// Name prefix of this component's parameters.
    pub fn prefix(&self) -> &'static str {
        match self {
            Component::AudioEncoder => "audio_encoder.",
            Component::VisualEncoder => "visual_encoder.",
            Component::AudioAdapter => "audio_adapter.",
            Component::VisualAdapter => "visual_adapter.",
            Component::Lm => "lm.",
        }
    }

    pub fn of_param(name: &str) -> Option<Component> {
        Component::ALL.into_iter().find(|c| name.starts_with(c.prefix()))
    }
}

/// Which components need parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub audio_encoder: bool,
    pub visual_encoder: bool,
    pub audio_adapter: bool,
    pub visual_adapter: bool,
    pub lm: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        audio_encoder: true,
        visual_encoder: true,
        audio_adapter: true,
        visual_adapter: true,
        lm: true,
    };

    pub fn contains(&self, c: Component) -> bool {
        match c {
            Component::AudioEncoder => self.audio_encoder,
            Component::VisualEncoder => self.visual_encoder,
            Component::AudioAdapter => self.audio_adapter,
            Component::VisualAdapter => self.visual_adapter,
            Component::Lm => self.lm,
        }
    }
}

/// How the instruction reaches the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Speech,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Speech, Modality::Text];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Speech => "speech",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "speech" => Ok(Modality::Speech),
            "text" => Ok(Modality::Text),
            other => Err(format!("unknown modality `{other}` (expected speech or text)")),
        }
    }
}

/// Model inputs preceding the generated text. Image patches are passed
/// pre-cut (see [`VisualEncoder::patches`]) so callers can cache them.
#[derive(Debug, Clone, Copy, Default)]
pub struct Prompt<'a> {
    pub patches: Option<&'a Matrix>,
    pub audio: Option<&'a AudioFeatureSequence>,
    pub text_ids: Option<&'a [usize]>,
}

#[derive(Debug, Clone)]
pub struct PrefixCache {
    visual: Option<(VisualEncoderCache, MlpCache)>,
    audio: Option<(AudioEncoderCache, AudioAdapterCache)>,
    text_ids: Option<Vec<usize>>,
    visual_len: usize,
    audio_len: usize,
}

/// Encoders, adapters and language model wired together.
#[derive(Debug, Clone)]
pub struct MultimodalModel {
    pub cfg: ModelConfig,
    pub audio_encoder: AudioEncoder,
    pub visual_encoder: VisualEncoder,
    pub audio_adapter: AudioAdapter,
    pub visual_adapter: VisualAdapter,
    pub lm: LanguageModel,
}

impl MultimodalModel {
    pub fn build(cfg: &ModelConfig, store: &mut ParamStore, init: &mut Init) -> Result<Self, ModelError> {
        cfg.validate()?;
        let audio_encoder = AudioEncoder::new(store, init, "audio_encoder", &cfg.audio_encoder);
        let visual_encoder = VisualEncoder::new(store, init, "visual_encoder", &cfg.visual_encoder)?;
        let audio_adapter = AudioAdapter::new(store, init, "audio_adapter", &cfg.audio_adapter)?;
        let visual_adapter = VisualAdapter::new(
            store,
            init,
            "visual_adapter",
            cfg.visual_encoder.d_visual,
            cfg.visual_adapter_hidden,
            cfg.lm.d_model,
        );
        let lm = LanguageModel::new(store, init, "lm", &cfg.lm)?;
        Ok(Self {
            cfg: cfg.clone(),
            audio_encoder,
            visual_encoder,
            audio_adapter,
            visual_adapter,
            lm,
        })
    }

    pub fn prefix_train(&self, p: &ParamStore, prompt: &Prompt) -> Result<(Matrix, PrefixCache), ModelError> {
        let d = self.cfg.lm.d_model;
        let (visual_tokens, visual) = match prompt.patches {
            Some(patches) => {
                if patches.ncols() != self.cfg.visual_encoder.patch_dim() {
                    return Err(ModelError::WidthMismatch {
                        what: "image patches",
                        expected: self.cfg.visual_encoder.patch_dim(),
                        got: patches.ncols(),
                    });
                }
                let (v, venc) = self.visual_encoder.forward_patches_train(p, patches);
                let (t, vad) = self.visual_adapter.forward_train(p, &v)?;
                (TokenEmbeddingSequence(t), Some((venc, vad)))
            }
            None => (TokenEmbeddingSequence::empty(d), None),
        };
        let (audio_tokens, audio) = match prompt.audio {
            Some(a) => {
                let (h, aenc) = self.audio_encoder.forward_train(p, a)?;
                let (t, aad) = self.audio_adapter.forward_train(p, &h)?;
                (TokenEmbeddingSequence(t), Some((aenc, aad)))
            }
            None => (TokenEmbeddingSequence::empty(d), None),
        };
        let text_tokens = match prompt.text_ids {
            Some(ids) => TokenEmbeddingSequence(self.lm.embed_tokens(p, ids)),
            None => TokenEmbeddingSequence::empty(d),
        };
        let fused = fuse(&visual_tokens, &audio_tokens, &text_tokens)?;
        Ok((
            fused.0,
            PrefixCache {
                visual,
                audio,
                text_ids: prompt.text_ids.map(|t| t.to_vec()),
                visual_len: visual_tokens.len(),
                audio_len: audio_tokens.len(),
            },
        ))
    }

    pub fn prefix_backward(
        &self,
        p: &ParamStore,
        cache: &PrefixCache,
        dprefix: &Matrix,
        g: &mut Grads,
        trainable: &Trainable,
    ) {
        let (vl, al) = (cache.visual_len, cache.audio_len);
        if let Some((venc, vad)) = &cache.visual {
            if trainable.visual_adapter || trainable.visual_encoder {
                let dv = self
                    .visual_adapter
                    .backward(p, vad, &dprefix.slice(s![..vl, ..]).to_owned(), g);
                if trainable.visual_encoder {
                    self.visual_encoder.backward(p, venc, &dv, g);
                }
            }
        }
        if let Some((aenc, aad)) = &cache.audio {
            if trainable.audio_adapter || trainable.audio_encoder {
                let da = self
                    .audio_adapter
                    .backward(p, aad, &dprefix.slice(s![vl..vl + al, ..]).to_owned(), g);
                if trainable.audio_encoder {
                    self.audio_encoder.backward(p, aenc, &da, g);
                }
            }
        }
        if let Some(ids) = &cache.text_ids {
            if trainable.lm {
                self.lm.embed_backward(ids, dprefix.slice(s![vl + al.., ..]), g);
            }
        }
    }

    /// Logits for `targets` (which should end with EOS) given the prompt.
    pub fn forward_train(
        &self,
        p: &ParamStore,
        prompt: &Prompt,
        targets: &[usize],
    ) -> Result<(Matrix, PrefixCache, LmCache), ModelError> {
        let (prefix, pc) = self.prefix_train(p, prompt)?;
        let (logits, lc) = self.lm.forward_train(p, &prefix, targets)?;
        Ok((logits, pc, lc))
    }

    /// Sum of target cross-entropies and the number of targets. When `grads`
    /// is given, gradients of `scale * sum` are accumulated into it.
    pub fn loss_sum(
        &self,
        p: &ParamStore,
        prompt: &Prompt,
        targets: &[usize],
        grads: Option<(&mut Grads, f64, &Trainable)>,
    ) -> Result<(f64, usize), ModelError> {
        let (logits, pc, lc) = self.forward_train(p, prompt, targets)?;
        let mask = vec![true; targets.len()];
        let (sum, count, mut dlogits) = cross_entropy_sum(&logits, targets, &mask)?;
        if let Some((g, scale, trainable)) = grads {
            dlogits *= scale;
            let dprefix = self.lm.backward(p, &lc, &dlogits, g);
            self.prefix_backward(p, &pc, &dprefix, g, trainable);
        }
        Ok((sum, count))
    }

    pub fn generate(&self, p: &ParamStore, prompt: &Prompt, max_new: usize) -> Result<String, ModelError> {
        let (prefix, _) = self.prefix_train(p, prompt)?;
        let ids = self.lm.generate_ids(p, &prefix, max_new)?;
        Ok(Vocabulary::new().decode(&ids))
    }
}

/// Character ids of `text` followed by EOS.
pub fn target_ids(text: &str) -> Result<Vec<usize>, ModelError> {
    let mut ids = Vocabulary::new().encode(text)?;
    ids.push(EOS);
    Ok(ids)
}

/// Parameters, structure and metadata of one model, saved and loaded as a unit.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub init_seed: u64,
    pub params: ParamStore,
    pub model: MultimodalModel,
    pub vocab: Vocabulary,
    /// Completed training stages, e.g. `"stage1"`.
    pub tags: Vec<String>,
    /// Optimizer state of an interrupted or finished run.
    pub train_state: Option<TrainState>,
    /// Content hash of the dataset the bundle was last trained on.
    pub dataset_hash: Option<String>,
    /// Audio synthesis settings of that dataset, so speech prompts can be
    /// re-synthesised at inference time.
    pub audio_seed: Option<u64>,
    pub frames_per_char: Option<usize>,
}

impl ModelBundle {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let model = MultimodalModel::build(&config, &mut params, &mut init)?;
        Ok(Self {
            config,
            init_seed: seed,
            params,
            model,
            vocab: Vocabulary::new(),
            tags: Vec::new(),
            train_state: None,
            dataset_hash: None,
            audio_seed: None,
            frames_per_char: None,
        })
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    pub fn add_tag(&mut self, tag: &str) {
        if !self.has_tag(tag) {
            self.tags.push(tag.to_string());
        }
    }

    pub fn patches(&self, img: &ImageTensor) -> Result<Matrix, ModelError> {
        self.model.visual_encoder.patches(img)
    }

    pub fn generate(&self, prompt: &Prompt, max_new: usize) -> Result<String, ModelError> {
        self.model.generate(&self.params, prompt, max_new)
    }

    /// Logits on a fixed synthetic batch, for bitwise round-trip checks.
    pub fn probe_logits(&self) -> Result<Matrix, ModelError> {
        let mut init = Init::new(0x9e37_79b9);
        let vcfg = &self.config.visual_encoder;
        let patches = init
            .normal(vcfg.num_patches(), vcfg.patch_dim(), 0.3)
            .mapv(|v| (v + 0.5).clamp(0.0, 1.0));
        let audio = AudioFeatureSequence::new(init.normal(12, self.config.audio_encoder.d_audio, 1.0))?;
        let targets = target_ids("{1, 2, 3, 4}")?;
        let text = Vocabulary::new().encode("where?")?;
        let speech = Prompt {
            patches: Some(&patches),
            audio: Some(&audio),
            text_ids: None,
        };
        let written = Prompt {
            patches: Some(&patches),
            audio: None,
            text_ids: Some(&text),
        };
        let a = self.model.forward_train(&self.params, &speech, &targets)?.0;
        let b = self.model.forward_train(&self.params, &written, &targets)?.0;
        Ok(ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).expect("same width"))
    }
}
