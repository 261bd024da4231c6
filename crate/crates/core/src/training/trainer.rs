use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_global_norm, AdamW};
use super::{lr_at, Stage, TrainConfig, TrainModality};
use crate::data::{Dataset, Sample};
use crate::encoders::AudioFeatureSequence;
use crate::error::TrainError;
use crate::language::Vocabulary;
use crate::model::{target_ids, Component, ModelBundle, Prompt, Trainable};
use crate::nn::{Grads, Matrix, ParamStore};

/// Optimizer state and progress of a run, stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Optimizer steps completed.
    pub step: usize,
    pub total_steps: usize,
    pub optimizer: AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// 1-based step number.
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<StepLog>,
    pub total_steps: usize,
    /// Whether the run reached `total_steps` (as opposed to `max_steps`).
    pub finished: bool,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|l| l.loss)
    }

    /// `step,lr,loss` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,loss\n");
        for l in &self.log {
            s.push_str(&format!("{},{:e},{:.17e}\n", l.step, l.lr, l.loss));
        }
        s
    }
}

/// One sample turned into model inputs for a given objective.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub patches: Option<Matrix>,
    pub audio: Option<AudioFeatureSequence>,
    pub text_ids: Option<Vec<usize>>,
    pub targets: Vec<usize>,
}

impl Prepared {
    pub fn prompt(&self) -> Prompt<'_> {
        Prompt {
            patches: self.patches.as_ref(),
            audio: self.audio.as_ref(),
            text_ids: self.text_ids.as_deref(),
        }
    }
}

fn check_audio(s: &Sample) -> Result<(), TrainError> {
    if s.audio_features.is_empty() {
        return Err(TrainError::MissingAudio(s.id.clone()));
    }
    Ok(())
}

/// Transcription objective: audio only, target is the instruction text.
pub fn prepare_transcription(s: &Sample) -> Result<Prepared, TrainError> {
    check_audio(s)?;
    Ok(Prepared {
        id: s.id.clone(),
        patches: None,
        audio: Some(s.audio_features.clone()),
        text_ids: None,
        targets: target_ids(&s.instruction_text)?,
    })
}

/// Response objective with the instruction as speech or as text.
pub fn prepare_response(bundle: &ModelBundle, s: &Sample, speech: bool) -> Result<Prepared, TrainError> {
    let patches = Some(bundle.patches(&s.image)?);
    let (audio, text_ids) = if speech {
        check_audio(s)?;
        (Some(s.audio_features.clone()), None)
    } else {
        (None, Some(Vocabulary::new().encode(&s.instruction_text)?))
    };
    Ok(Prepared {
        id: s.id.clone(),
        patches,
        audio,
        text_ids,
        targets: target_ids(&s.response_text)?,
    })
}

fn prepare_all(bundle: &ModelBundle, dataset: &Dataset, cfg: &TrainConfig) -> Result<Vec<Prepared>, TrainError> {
    dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| match cfg.stage {
            Stage::Stage1 => prepare_transcription(s),
            _ => {
                let speech = match cfg.modality {
                    TrainModality::Speech => true,
                    TrainModality::Text => false,
                    TrainModality::Mixed => i % 2 == 0,
                };
                prepare_response(bundle, s, speech)
            }
        })
        .collect()
}

/// Token-mean loss over `items` and, if `grads` is given, its gradient.
pub fn batch_loss(
    bundle: &ModelBundle,
    params: &ParamStore,
    items: &[&Prepared],
    mut grads: Option<(&mut Grads, &Trainable)>,
) -> Result<f64, TrainError> {
    let total: usize = items.iter().map(|p| p.targets.len()).sum();
    let scale = 1.0 / total as f64;
    let mut sum = 0.0;
    for item in items {
        let g = grads.as_mut().map(|(g, t)| (&mut **g, scale, *t));
        let (s, _) = bundle.model.loss_sum(params, &item.prompt(), &item.targets, g)?;
        sum += s;
    }
    Ok(sum * scale)
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn trainable_mask(params: &ParamStore, t: &Trainable) -> Vec<bool> {
    params
        .ids()
        .map(|id| Component::of_param(params.name(id)).is_some_and(|c| t.contains(c)))
        .collect()
}

/// Speech-to-text alignment. Updates the audio encoder, audio adapter and
/// language model (minus frozen components); the visual path is untouched.
pub fn train_stage1(dataset: &Dataset, bundle: &mut ModelBundle, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    let cfg = TrainConfig {
        stage: Stage::Stage1,
        ..cfg.clone()
    };
    train(dataset, bundle, &cfg, &mut |_| {})
}

/// Response training; the bundle must carry the stage-1 tag unless
/// `allow_missing_stage1` is set.
pub fn train_stage2(dataset: &Dataset, bundle: &mut ModelBundle, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    let cfg = TrainConfig {
        stage: Stage::Stage2,
        ..cfg.clone()
    };
    train(dataset, bundle, &cfg, &mut |_| {})
}

/// The response objective without a stage-1 prerequisite.
pub fn train_end_to_end(dataset: &Dataset, bundle: &mut ModelBundle, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    let cfg = TrainConfig {
        stage: Stage::EndToEnd,
        ..cfg.clone()
    };
    train(dataset, bundle, &cfg, &mut |_| {})
}

/// Runs (or resumes) the stage named by `cfg.stage`, calling `on_step`
/// after every optimizer step.
///
/// A bundle whose saved training state belongs to an unfinished run of the
/// same stage is resumed from its step; the saved config must then agree
/// with `cfg` in everything but `max_steps`.
pub fn train(
    dataset: &Dataset,
    bundle: &mut ModelBundle,
    cfg: &TrainConfig,
    on_step: &mut dyn FnMut(&StepLog),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if dataset.samples.is_empty() {
        return Err(TrainError::Data(crate::error::DataError::Empty));
    }
    if bundle.config.audio_adapter.kind != cfg.adapter {
        return Err(TrainError::Config(format!(
            "config asks for a {} adapter but the bundle has {}",
            cfg.adapter, bundle.config.audio_adapter.kind
        )));
    }
    if cfg.stage == Stage::Stage2 && !cfg.allow_missing_stage1 && !bundle.has_tag(Stage::Stage1.tag()) {
        return Err(TrainError::MissingStage1);
    }
    let n = dataset.samples.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    // fail early on an impossible schedule
    lr_at(0, total_steps, cfg)?;

    let mut state = match bundle.train_state.take() {
        Some(s) if s.config.stage == cfg.stage && s.step < s.total_steps => {
            let mut saved = s.config.clone();
            saved.max_steps = cfg.max_steps;
            if let Some((field, expected, found)) =
                crate::model::first_difference_of(cfg, &saved)
            {
                return Err(TrainError::Config(format!(
                    "resume config mismatch in `{field}`: run has {found}, requested {expected}"
                )));
            }
            if s.total_steps != total_steps {
                return Err(TrainError::Config(format!(
                    "resume mismatch: saved run has {} total steps, this dataset gives {total_steps}",
                    s.total_steps
                )));
            }
            s
        }
        _ => TrainState {
            config: cfg.clone(),
            step: 0,
            total_steps,
            optimizer: AdamW::new(&bundle.params, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay),
        },
    };
    state.config.max_steps = cfg.max_steps;

    let prepared = prepare_all(bundle, dataset, cfg)?;
    let trainable = cfg.trainable();
    let mask = trainable_mask(&bundle.params, &trainable);
    let end = cfg.max_steps.map_or(total_steps, |m| m.min(total_steps));
    let mut grads = Grads::zeros_like(&bundle.params);
    let mut log = Vec::new();
    let mut order_epoch = usize::MAX;
    let mut order = Vec::new();

    while state.step < end {
        let step = state.step;
        let epoch = step / steps_per_epoch;
        if epoch != order_epoch {
            order = epoch_order(cfg.seed, epoch, n);
            order_epoch = epoch;
        }
        let start = (step % steps_per_epoch) * cfg.batch_size;
        let batch: Vec<&Prepared> = order[start..(start + cfg.batch_size).min(n)]
            .iter()
            .map(|&i| &prepared[i])
            .collect();
        grads.zero();
        let loss = batch_loss(bundle, &bundle.params, &batch, Some((&mut grads, &trainable)))?;
        if !loss.is_finite() {
            bundle.train_state = Some(state);
            return Err(TrainError::NonFinite { step: step + 1 });
        }
        let grad_norm = match cfg.grad_clip {
            Some(c) => clip_global_norm(&mut grads, &mask, c),
            None => super::optim::global_norm(&grads, &mask),
        };
        if !grad_norm.is_finite() {
            bundle.train_state = Some(state);
            return Err(TrainError::NonFinite { step: step + 1 });
        }
        let lr = lr_at(step, total_steps, cfg)?;
        state.optimizer.step(&mut bundle.params, &grads, lr, &mask);
        state.step += 1;
        let entry = StepLog {
            step: state.step,
            lr,
            loss,
            grad_norm,
        };
        on_step(&entry);
        log.push(entry);
    }

    let finished = state.step >= total_steps;
    bundle.train_state = Some(state);
    if finished {
        bundle.add_tag(cfg.stage.tag());
    }
    bundle.dataset_hash = Some(dataset.manifest.content_hash.clone());
    bundle.audio_seed = Some(dataset.manifest.audio.seed);
    bundle.frames_per_char = Some(dataset.manifest.audio.frames_per_char);
    Ok(TrainReport {
        log,
        total_steps,
        finished,
    })
}

/// Token-mean loss of the objective of `stage` over the whole dataset.
pub fn dataset_loss(
    bundle: &ModelBundle,
    dataset: &Dataset,
    stage: Stage,
    modality: TrainModality,
) -> Result<f64, TrainError> {
    let cfg = TrainConfig {
        stage,
        modality,
        ..TrainConfig::default()
    };
    let prepared = prepare_all(bundle, dataset, &cfg)?;
    let refs: Vec<&Prepared> = prepared.iter().collect();
    batch_loss(bundle, &bundle.params, &refs, None)
}
