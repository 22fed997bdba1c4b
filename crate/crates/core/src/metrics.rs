//! Box overlap and grounding accuracy.

use thiserror::Error;

use crate::scene::AxisBox;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("accuracy is undefined for an empty prediction list")]
    Empty,
    #[error("iou value {0} outside [0, 1]")]
    OutOfRange(f64),
}

/// Intersection over union of two axis-aligned boxes; 0 when the union has
/// no volume.
pub fn iou3d_axis(a: &AxisBox, b: &AxisBox) -> f64 {
    let (amin, amax, bmin, bmax) = (a.min(), a.max(), b.min(), b.max());
    let mut inter = 1.0;
    for k in 0..3 {
        let overlap = amax[k].min(bmax[k]) - amin[k].max(bmin[k]);
        if overlap <= 0.0 {
            inter = 0.0;
            break;
        }
        inter *= overlap;
    }
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Fraction of IoUs strictly greater than `k` (Acc@k).
pub fn accuracy_at(ious: &[f64], k: f64) -> Result<f64, MetricError> {
    if ious.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(&bad) = ious.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(MetricError::OutOfRange(bad));
    }
    let hits = ious.iter().filter(|&&v| v > k).count();
    Ok(hits as f64 / ious.len() as f64)
}
