//! Threshold screening of delta points ahead of clustering.

use serde::{Deserialize, Serialize};

use crate::features::DeltaPoint;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("screening threshold {name} = {value} is outside [0, 1]")]
pub struct ThresholdError {
    pub name: &'static str,
    pub value: f64,
}

/// Lower bounds on `delta1` and `delta2`, both inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningThresholds {
    s: f64,
    s_upper: f64,
}

impl Default for ScreeningThresholds {
    fn default() -> Self {
        ScreeningThresholds { s: 0.4, s_upper: 0.4 }
    }
}

impl ScreeningThresholds {
    pub fn new(delta1_min: f64, delta2_min: f64) -> Result<Self, ThresholdError> {
        for (name, value) in [("s", delta1_min), ("S", delta2_min)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ThresholdError { name, value });
            }
        }
        Ok(ScreeningThresholds {
            s: delta1_min,
            s_upper: delta2_min,
        })
    }

    pub fn delta1_min(&self) -> f64 {
        self.s
    }

    pub fn delta2_min(&self) -> f64 {
        self.s_upper
    }

    pub fn admits(&self, p: &DeltaPoint) -> bool {
        self.admits_coords(p.delta1, p.delta2)
    }

    pub fn admits_coords(&self, delta1: f64, delta2: f64) -> bool {
        delta1 >= self.s && delta1 <= 1.0 && delta2 >= self.s_upper && delta2 <= 1.0
    }
}

/// The screened subset, in input order, borrowing from `points`.
pub fn screen<'a>(points: &'a [DeltaPoint], thresholds: &ScreeningThresholds) -> Vec<&'a DeltaPoint> {
    points.iter().filter(|p| thresholds.admits(p)).collect()
}

/// Positions of the screened points in `points`.
pub fn screen_indices(points: &[DeltaPoint], thresholds: &ScreeningThresholds) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| thresholds.admits(p))
        .map(|(i, _)| i)
        .collect()
}

/// Per-point membership mask, as written to the `screened` column.
pub fn screen_mask(points: &[DeltaPoint], thresholds: &ScreeningThresholds) -> Vec<bool> {
    points.iter().map(|p| thresholds.admits(p)).collect()
}
