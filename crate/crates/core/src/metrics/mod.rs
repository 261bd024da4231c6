//! Text and localisation metrics.

mod bbox;
mod text;

pub use bbox::{bbox_accuracy, bbox_stats, iou, parse_bbox};
pub use text::{
    bleu1, char_error_rate, cider, meteor_alignment, meteor_lite, rouge1, stem, tokenize, Bleu1,
    Rouge1,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::BBox;
use crate::error::MetricError;

/// Localisation threshold used unless configured otherwise.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Scores of one set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub rouge1_f: f64,
    pub bleu1: f64,
    pub meteor: f64,
    pub cider: f64,
    pub bbox_accuracy: f64,
    pub n: usize,
    /// Predictions with no valid box, among those with a ground-truth box.
    pub parse_failures: usize,
    /// Predictions with no tokens.
    pub empty_predictions: usize,
}

/// One prediction with its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored<'a> {
    pub id: &'a str,
    pub prediction: &'a str,
    pub reference: &'a str,
    pub bbox: Option<BBox>,
}

/// Sentence metrics are averaged over items; CIDEr is computed over the set
/// as a corpus; box accuracy is over the items that have a box.
pub fn score_all(items: &[Scored], iou_threshold: f64) -> Result<MetricScores, MetricError> {
    if items.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = items.len() as f64;
    let mut rouge = 0.0;
    let mut bleu = 0.0;
    let mut meteor = 0.0;
    let mut empty = 0;
    for it in items {
        let b = bleu1(it.prediction, &[it.reference]);
        empty += usize::from(b.empty_candidate);
        bleu += b.score;
        rouge += rouge1(it.prediction, it.reference).f1;
        meteor += meteor_lite(it.prediction, it.reference);
    }
    let cands: BTreeMap<String, String> = items
        .iter()
        .map(|it| (it.id.to_string(), it.prediction.to_string()))
        .collect();
    let refs: BTreeMap<String, Vec<String>> = items
        .iter()
        .map(|it| (it.id.to_string(), vec![it.reference.to_string()]))
        .collect();
    if cands.len() != items.len() {
        return Err(MetricError::IdMismatch("duplicate prediction id".into()));
    }
    let boxed: Vec<(&str, BBox)> = items
        .iter()
        .filter_map(|it| it.bbox.map(|b| (it.prediction, b)))
        .collect();
    let (bbox_accuracy, parse_failures) = if boxed.is_empty() {
        (0.0, 0)
    } else {
        bbox_stats(&boxed, iou_threshold)?
    };
    Ok(MetricScores {
        rouge1_f: rouge / n,
        bleu1: bleu / n,
        meteor: meteor / n,
        cider: cider(&cands, &refs)?,
        bbox_accuracy,
        n: items.len(),
        parse_failures,
        empty_predictions: empty,
    })
}
