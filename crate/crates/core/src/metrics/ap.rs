use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMethod {
    /// Area under the monotone precision envelope at every recall step.
    #[default]
    AllPoints,
    /// Mean envelope precision at recall 0, 0.01, ..., 1.
    Interp101,
}

impl ApMethod {
    pub fn name(self) -> &'static str {
        match self {
            ApMethod::AllPoints => "all-points",
            ApMethod::Interp101 => "101-point",
        }
    }
}

impl fmt::Display for ApMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ApMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-points" => Ok(ApMethod::AllPoints),
            "101-point" => Ok(ApMethod::Interp101),
            other => Err(Error::Config(format!("unknown AP method `{other}`"))),
        }
    }
}

/// `tp / (tp + fp)`, 0 when both are 0.
pub fn precision(tp: usize, fp: usize) -> f64 {
    ratio(tp, tp + fp)
}

/// `tp / (tp + fn)`, 0 when both are 0.
pub fn recall(tp: usize, fn_count: usize) -> f64 {
    ratio(tp, tp + fn_count)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(recall, precision)` after each detection of a ranked TP/FP sequence.
pub fn pr_curve(labels: &[bool], gt_count: usize) -> Vec<(f64, f64)> {
    let mut tp = 0;
    labels
        .iter()
        .enumerate()
        .map(|(i, &hit)| {
            tp += usize::from(hit);
            (ratio(tp, gt_count), precision(tp, i + 1 - tp))
        })
        .collect()
}

/// AP of ranked TP/FP labels against `gt_count` ground truths.
pub fn average_precision(labels: &[bool], gt_count: usize, method: ApMethod) -> f64 {
    if gt_count == 0 {
        log::warn!("average precision with zero ground truths is defined as 0");
        return 0.0;
    }
    let curve = pr_curve(labels, gt_count);
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    match method {
        ApMethod::AllPoints => {
            let mut ap = 0.0;
            let mut prev_r = 0.0;
            for (i, &(r, _)) in curve.iter().enumerate() {
                if r > prev_r {
                    ap += (r - prev_r) * envelope[i];
                    prev_r = r;
                }
            }
            ap
        }
        ApMethod::Interp101 => {
            let mut sum = 0.0;
            for t in 0..=100 {
                let level = t as f64 / 100.0;
                if let Some(i) = curve.iter().position(|&(r, _)| r >= level) {
                    sum += envelope[i];
                }
            }
            sum / 101.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        assert_eq!(precision(9, 1), 0.9);
        assert_eq!(precision(0, 0), 0.0);
        assert_eq!(recall(82, 18), 0.82);
        assert_eq!(recall(0, 0), 0.0);
    }

    #[test]
    fn staircase() {
        let ap = average_precision(&[true, false, true], 2, ApMethod::AllPoints);
        assert_eq!(ap, 0.5 + (2.0 / 3.0) * 0.5);
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(average_precision(&[true], 1, ApMethod::AllPoints), 1.0);
        assert_eq!(average_precision(&[false, false], 3, ApMethod::AllPoints), 0.0);
        assert_eq!(average_precision(&[true], 0, ApMethod::AllPoints), 0.0);
        assert_eq!(average_precision(&[], 2, ApMethod::AllPoints), 0.0);
        assert_eq!(average_precision(&[true], 1, ApMethod::Interp101), 1.0);
    }

    #[test]
    fn interp101_staircase() {
        // Envelope is 1 up to recall 0.5 (51 levels) and 2/3 after (50 levels).
        let ap = average_precision(&[true, false, true], 2, ApMethod::Interp101);
        assert!((ap - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-15);
    }
}
