use super::{DataError, Sample};
use crate::rewards::{temporal_iou, Interval};

/// Keeps videos at least `min_s` long (a video of exactly `min_s` is kept).
pub fn meets_min_duration(sample: &Sample, min_s: f64) -> bool {
    sample.video.duration_s >= min_s
}

/// IoU between the labeled clip and the whole video; `None` when unlabeled.
pub fn label_coverage(sample: &Sample) -> Option<f64> {
    let label = sample.gt_grounding?;
    let whole = Interval::new(0.0, sample.video.duration_s).ok()?;
    Some(temporal_iou(&label, &whole))
}

/// Unlabeled samples always pass; labeled ones need coverage `>= min_iou`.
pub fn meets_label_coverage(sample: &Sample, min_iou: f64) -> bool {
    label_coverage(sample).is_none_or(|iou| iou >= min_iou)
}

pub fn filter_min_duration(samples: Vec<Sample>, min_s: f64) -> Result<Vec<Sample>, DataError> {
    if !(min_s > 0.0 && min_s.is_finite()) {
        return Err(DataError::BadThreshold(min_s));
    }
    Ok(samples
        .into_iter()
        .filter(|s| meets_min_duration(s, min_s))
        .collect())
}

pub fn filter_label_coverage(samples: Vec<Sample>, min_iou: f64) -> Result<Vec<Sample>, DataError> {
    if !(min_iou > 0.0 && min_iou < 1.0) {
        return Err(DataError::BadThreshold(min_iou));
    }
    Ok(samples
        .into_iter()
        .filter(|s| meets_label_coverage(s, min_iou))
        .collect())
}
