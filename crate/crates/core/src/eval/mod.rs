//! Instruction-type × modality evaluation grid and the adapter ablation.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::{AdapterConfig, AdapterKind};
use crate::data::{Dataset, InstructionType, Sample};
use crate::error::EvalError;
use crate::language::Vocabulary;
pub use crate::model::Modality;
use crate::model::{ModelBundle, ModelConfig, Prompt};
use crate::metrics::{score_all, MetricScores, Scored, DEFAULT_IOU_THRESHOLD};
use crate::training::{train_end_to_end, TrainConfig};

/// Anything that answers an instruction about a sample.
pub trait Responder {
    fn respond(&self, sample: &Sample, modality: Modality, max_new: usize) -> Result<String, EvalError>;

    /// Stable identifier recorded in reports.
    fn identity(&self) -> String;
}

impl Responder for ModelBundle {
    fn respond(&self, sample: &Sample, modality: Modality, max_new: usize) -> Result<String, EvalError> {
        let patches = self.patches(&sample.image)?;
        let text_ids;
        let prompt = match modality {
            Modality::Speech => Prompt {
                patches: Some(&patches),
                audio: Some(&sample.audio_features),
                text_ids: None,
            },
            Modality::Text => {
                text_ids = Vocabulary::new().encode(&sample.instruction_text)?;
                Prompt {
                    patches: Some(&patches),
                    audio: None,
                    text_ids: Some(&text_ids),
                }
            }
        };
        Ok(self.generate(&prompt, max_new)?)
    }

    fn identity(&self) -> String {
        bundle_fingerprint(self)
    }
}

/// sha256 over the model config and every parameter value.
pub fn bundle_fingerprint(bundle: &ModelBundle) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&bundle.config).expect("config serialises"));
    for id in bundle.params.ids() {
        h.update(bundle.params.name(id).as_bytes());
        for v in bundle.params.get(id).iter() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Answers with the reference response.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoOracle;

impl Responder for EchoOracle {
    fn respond(&self, sample: &Sample, _: Modality, _: usize) -> Result<String, EvalError> {
        Ok(sample.response_text.clone())
    }

    fn identity(&self) -> String {
        "echo-oracle".into()
    }
}

/// Answers with the empty string.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptyResponder;

impl Responder for EmptyResponder {
    fn respond(&self, _: &Sample, _: Modality, _: usize) -> Result<String, EvalError> {
        Ok(String::new())
    }

    fn identity(&self) -> String {
        "empty".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub cells: Vec<(InstructionType, Modality)>,
    pub iou_threshold: f64,
    /// Generation budget per response, in characters.
    pub max_new: usize,
    /// Recorded verbatim; supplied by the caller so reports stay reproducible.
    pub timestamp: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            cells: all_cells(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            max_new: 160,
            timestamp: String::new(),
        }
    }
}

/// The full 3×2 grid, types outermost.
pub fn all_cells() -> Vec<(InstructionType, Modality)> {
    InstructionType::ALL
        .iter()
        .flat_map(|&t| Modality::ALL.iter().map(move |&m| (t, m)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub instruction_type: InstructionType,
    pub modality: Modality,
    pub scores: MetricScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub checkpoint_hash: String,
    pub dataset_hash: String,
    pub timestamp: String,
    pub iou_threshold: f64,
    pub max_new: usize,
    pub model_config: Option<ModelConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Cells in the requested order.
    pub grid: Vec<EvalCell>,
    pub metadata: EvalMetadata,
}

const CSV_HEADER: &str =
    "instruction_type,modality,n,rouge1_f,bleu1,meteor,cider,bbox_accuracy,parse_failures,empty_predictions";

impl EvalReport {
    pub fn get(&self, t: InstructionType, m: Modality) -> Option<&MetricScores> {
        self.grid
            .iter()
            .find(|c| c.instruction_type == t && c.modality == m)
            .map(|c| &c.scores)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for c in &self.grid {
            let m = &c.scores;
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                c.instruction_type.as_str(),
                c.modality,
                m.n,
                m.rouge1_f,
                m.bleu1,
                m.meteor,
                m.cider,
                m.bbox_accuracy,
                m.parse_failures,
                m.empty_predictions
            )
            .unwrap();
        }
        s
    }

    /// Plain-text table with one row per cell.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<22} {:<8} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "type", "mode", "n", "ROUGE-1", "BLEU-1", "METEOR", "CIDEr", "IoU@thr"
        );
        for c in &self.grid {
            let m = &c.scores;
            writeln!(
                s,
                "{:<22} {:<8} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                c.instruction_type.title(),
                c.modality,
                m.n,
                m.rouge1_f,
                m.bleu1,
                m.meteor,
                m.cider,
                m.bbox_accuracy
            )
            .unwrap();
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        serde_json::from_str(s).map_err(|e| EvalError::Serde(e.to_string()))
    }
}

/// Generates one response per sample.
pub fn respond_all<R: Responder + ?Sized>(
    responder: &R,
    samples: &[&Sample],
    modality: Modality,
    max_new: usize,
) -> Result<Vec<String>, EvalError> {
    samples
        .iter()
        .map(|s| responder.respond(s, modality, max_new))
        .collect()
}

/// Scores `responder` on every requested cell of `dataset`.
pub fn evaluate<R: Responder + ?Sized>(
    responder: &R,
    dataset: &Dataset,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    evaluate_with_config(responder, dataset, opts, None)
}

pub fn evaluate_with_config<R: Responder + ?Sized>(
    responder: &R,
    dataset: &Dataset,
    opts: &EvalOptions,
    model_config: Option<&ModelConfig>,
) -> Result<EvalReport, EvalError> {
    let mut grid = Vec::with_capacity(opts.cells.len());
    for &(t, m) in &opts.cells {
        let samples: Vec<&Sample> = dataset
            .samples
            .iter()
            .filter(|s| s.instruction_type == t)
            .collect();
        if samples.is_empty() {
            return Err(EvalError::MissingCell(t, m));
        }
        let preds = respond_all(responder, &samples, m, opts.max_new)?;
        let items: Vec<Scored> = samples
            .iter()
            .zip(&preds)
            .map(|(s, p)| Scored {
                id: &s.id,
                prediction: p,
                reference: &s.response_text,
                bbox: s.bbox,
            })
            .collect();
        grid.push(EvalCell {
            instruction_type: t,
            modality: m,
            scores: score_all(&items, opts.iou_threshold)?,
        });
    }
    Ok(EvalReport {
        grid,
        metadata: EvalMetadata {
            checkpoint_hash: responder.identity(),
            dataset_hash: dataset.manifest.content_hash.clone(),
            timestamp: opts.timestamp.clone(),
            iou_threshold: opts.iou_threshold,
            max_new: opts.max_new,
            model_config: model_config.cloned(),
        },
    })
}

/// One adapter configuration in an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub label: String,
    pub kind: AdapterKind,
    pub hidden: Option<usize>,
}

impl AblationVariant {
    pub fn kind(kind: AdapterKind) -> Self {
        Self {
            label: kind.to_string(),
            kind,
            hidden: None,
        }
    }

    pub fn mlp_hidden(hidden: usize) -> Self {
        Self {
            label: format!("mlp-h{hidden}"),
            kind: AdapterKind::Mlp,
            hidden: Some(hidden),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub adapter_params: usize,
    pub final_loss: Option<f64>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "variant,kind,hidden,adapter_params,final_loss,train_seconds,eval_seconds,rouge1_f,bleu1,meteor,cider,bbox_accuracy,dataset_hash\n",
        );
        for r in &self.rows {
            let m = mean_scores(&r.report);
            writeln!(
                s,
                "{},{},{},{},{},{:.3},{:.3},{},{},{},{},{},{}",
                r.variant.label,
                r.variant.kind,
                r.variant.hidden.map(|h| h.to_string()).unwrap_or_default(),
                r.adapter_params,
                r.final_loss.map(|l| l.to_string()).unwrap_or_default(),
                r.train_seconds,
                r.eval_seconds,
                m[0],
                m[1],
                m[2],
                m[3],
                m[4],
                r.report.metadata.dataset_hash
            )
            .unwrap();
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<14} {:>10} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "adapter", "params", "train s", "loss", "ROUGE-1", "BLEU-1", "METEOR", "CIDEr", "IoU@thr"
        );
        for r in &self.rows {
            let m = mean_scores(&r.report);
            writeln!(
                s,
                "{:<14} {:>10} {:>9.2} {:>9.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                r.variant.label,
                r.adapter_params,
                r.train_seconds,
                r.final_loss.unwrap_or(f64::NAN),
                m[0],
                m[1],
                m[2],
                m[3],
                m[4]
            )
            .unwrap();
        }
        s
    }
}

/// Cell-averaged ROUGE-1, BLEU-1, METEOR, CIDEr and box accuracy.
pub fn mean_scores(r: &EvalReport) -> [f64; 5] {
    let n = r.grid.len().max(1) as f64;
    let mut out = [0.0; 5];
    for c in &r.grid {
        let m = &c.scores;
        for (o, v) in out
            .iter_mut()
            .zip([m.rouge1_f, m.bleu1, m.meteor, m.cider, m.bbox_accuracy])
        {
            *o += v / n;
        }
    }
    out
}

/// Trains one bundle per variant end to end on `train` (same seed, same
/// data) and evaluates each on `eval`.
pub fn run_ablation(
    train: &Dataset,
    eval: &Dataset,
    base_model: &ModelConfig,
    base_cfg: &TrainConfig,
    variants: &[AblationVariant],
    opts: &EvalOptions,
) -> Result<AblationReport, EvalError> {
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let mut model = base_model.clone();
        let a = &base_model.audio_adapter;
        let mut adapter = AdapterConfig::new(v.kind, a.in_dim, a.out_dim);
        adapter.hidden_dim = v.hidden;
        adapter.n_blocks = a.n_blocks;
        adapter.n_heads = a.n_heads;
        model.audio_adapter = adapter;
        let cfg = TrainConfig {
            adapter: v.kind,
            ..base_cfg.clone()
        };
        let mut bundle = ModelBundle::new(model.clone(), base_cfg.seed)?;
        let adapter_params = bundle.params.num_scalars_with_prefix("audio_adapter.");

        let t0 = Instant::now();
        let log = train_end_to_end(train, &mut bundle, &cfg)?;
        let train_seconds = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let report = evaluate_with_config(&bundle, eval, opts, Some(&model))?;
        let eval_seconds = t1.elapsed().as_secs_f64();
        rows.push(AblationRow {
            variant: v.clone(),
            adapter_params,
            final_loss: log.final_loss(),
            train_seconds,
            eval_seconds,
            report,
        });
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetConfig};

    fn small() -> Dataset {
        generate_dataset(&DatasetConfig::new(9, 3, 64)).unwrap()
    }

    #[test]
    fn oracle_stubs_saturate_every_cell() {
        let ds = small();
        let opts = EvalOptions::default();
        let hi = evaluate(&EchoOracle, &ds, &opts).unwrap();
        let lo = evaluate(&EmptyResponder, &ds, &opts).unwrap();
        assert_eq!(hi.grid.len(), 6);
        for c in &hi.grid {
            let m = &c.scores;
            assert_eq!((m.bleu1, m.rouge1_f, m.bbox_accuracy), (1.0, 1.0, 1.0));
        }
        for c in &lo.grid {
            let m = &c.scores;
            assert_eq!(
                (m.bleu1, m.rouge1_f, m.meteor, m.cider, m.bbox_accuracy),
                (0.0, 0.0, 0.0, 0.0, 0.0)
            );
        }
    }

    #[test]
    fn missing_type_names_the_cell() {
        let ds = small().filter_types(&[InstructionType::ComplexReasoning]).unwrap();
        let err = evaluate(&EchoOracle, &ds, &EvalOptions::default()).unwrap_err();
        assert!(matches!(err, EvalError::MissingCell(InstructionType::Conversation, Modality::Speech)));
        assert!(err.to_string().contains("conversation"), "{err}");
    }

    #[test]
    fn report_json_round_trip_and_csv_shape() {
        let ds = small();
        let mut opts = EvalOptions::default();
        opts.timestamp = "2020-01-01T00:00:00Z".into();
        let r = evaluate(&EchoOracle, &ds, &opts).unwrap();
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        assert_eq!(r.to_csv().lines().count(), 7);
        assert_eq!(r.metadata.dataset_hash, ds.manifest.content_hash);
    }
}
