use std::sync::OnceLock;

use regex::Regex;

use crate::data::BBox;
use crate::error::MetricError;

fn bbox_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\{\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\}").expect("valid regex")
    })
}

/// First `{x1, y1, x2, y2}` in `text`, if it is a valid box. A malformed
/// first match is not skipped in favour of a later one.
pub fn parse_bbox(text: &str) -> Option<BBox> {
    let caps = bbox_regex().captures(text)?;
    let mut v = [0u32; 4];
    for (slot, i) in v.iter_mut().zip(1..=4) {
        *slot = caps[i].parse::<u32>().ok()?;
    }
    BBox::new(v[0], v[1], v[2], v[3])
}

/// Intersection over union with areas `(x2 - x1) * (y2 - y1)`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2).saturating_sub(a.x1.max(b.x1)) as f64;
    let ih = a.y2.min(b.y2).saturating_sub(a.y1.max(b.y1)) as f64;
    let inter = iw * ih;
    let union = a.area() as f64 + b.area() as f64 - inter;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Localisation accuracy and the number of unparseable predictions.
/// Parse failures count as misses.
pub fn bbox_stats(predictions: &[(&str, BBox)], threshold: f64) -> Result<(f64, usize), MetricError> {
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut hits = 0;
    let mut failures = 0;
    for (text, gt) in predictions {
        match parse_bbox(text) {
            Some(b) if iou(&b, gt) >= threshold => hits += 1,
            Some(_) => {}
            None => failures += 1,
        }
    }
    Ok((hits as f64 / predictions.len() as f64, failures))
}

pub fn bbox_accuracy(predictions: &[(&str, BBox)], threshold: f64) -> Result<f64, MetricError> {
    Ok(bbox_stats(predictions, threshold)?.0)
}
