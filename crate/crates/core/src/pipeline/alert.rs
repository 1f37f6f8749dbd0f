use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calendar::Granularity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertLevel {
    None,
    Review,
    Alert,
}

impl AlertLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            AlertLevel::None => "none",
            AlertLevel::Review => "review",
            AlertLevel::Alert => "alert",
        }
    }
}

impl fmt::Display for AlertLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlertLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AlertLevel::None),
            "review" => Ok(AlertLevel::Review),
            "alert" => Ok(AlertLevel::Alert),
            _ => Err(format!("unknown alert level {s:?}")),
        }
    }
}

/// Degree cut-offs of the fixed-threshold combiner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlertThresholds {
    pub alert: f64,
    pub review: f64,
}

impl Default for AlertThresholds {
    fn default() -> Self {
        AlertThresholds { alert: 0.8, review: 0.5 }
    }
}

/// Alert if any level reaches `alert`, Review if any reaches `review`,
/// otherwise None. The rationale names every level that triggered.
pub fn combine_alert(
    degrees: &BTreeMap<Granularity, f64>,
    thresholds: &AlertThresholds,
) -> (AlertLevel, Vec<String>) {
    if degrees.is_empty() {
        return (AlertLevel::None, vec!["no activity".to_string()]);
    }
    let mut level = AlertLevel::None;
    let mut rationale = Vec::new();
    for (g, &d) in degrees {
        if d >= thresholds.alert {
            level = level.max(AlertLevel::Alert);
            rationale.push(format!("{g} degree {d:.4} >= alert threshold {:.2}", thresholds.alert));
        } else if d >= thresholds.review {
            level = level.max(AlertLevel::Review);
            rationale.push(format!("{g} degree {d:.4} >= review threshold {:.2}", thresholds.review));
        }
    }
    if rationale.is_empty() {
        rationale.push(format!("all degrees below review threshold {:.2}", thresholds.review));
    }
    (level, rationale)
}
