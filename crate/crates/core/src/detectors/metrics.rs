use super::MotionFlags;
use crate::error::{Error, Result};

/// Confusion counts and ratios for one profile.
///
/// When a ratio's denominator is zero the ratio is reported as 1.0 and the
/// matching `*_defined` flag is cleared.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProfileConfusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

impl ProfileConfusion {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                (1.0, false)
            } else {
                (num as f64 / den as f64, true)
            }
        };
        let (precision, precision_defined) = ratio(tp, tp + fp);
        let (recall, recall_defined) = ratio(tp, tp + fn_);
        Self {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            precision_defined,
            recall_defined,
        }
    }
}

/// Per-profile confusion, in [`MotionFlags`] order (vel, ang, lat, up).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DetectorReport {
    pub profiles: [ProfileConfusion; 4],
}

impl DetectorReport {
    pub fn vel(&self) -> &ProfileConfusion {
        &self.profiles[0]
    }
}

pub fn evaluate_detector(
    predicted: &[MotionFlags],
    truth: &[MotionFlags],
) -> Result<DetectorReport> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    let mut counts = [[0u64; 4]; 4];
    for (p, t) in predicted.iter().zip(truth) {
        for (k, (pk, tk)) in p.as_array().into_iter().zip(t.as_array()).enumerate() {
            let slot = match (pk, tk) {
                (true, true) => 0,
                (true, false) => 1,
                (false, false) => 2,
                (false, true) => 3,
            };
            counts[k][slot] += 1;
        }
    }
    Ok(DetectorReport {
        profiles: counts.map(|[tp, fp, tn, fn_]| ProfileConfusion::from_counts(tp, fp, tn, fn_)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(n: usize, f: impl Fn(usize) -> MotionFlags) -> Vec<MotionFlags> {
        (0..n).map(f).collect()
    }

    #[test]
    fn perfect_prediction() {
        let truth = flags(40, |i| {
            MotionFlags::new(i % 2 == 0, i % 3 == 0, i % 5 == 0, true)
        });
        let r = evaluate_detector(&truth, &truth).unwrap();
        for p in r.profiles {
            assert_eq!((p.precision, p.recall), (1.0, 1.0));
        }
    }

    #[test]
    fn all_negative_prediction_has_zero_recall() {
        let truth = flags(10, |i| MotionFlags::new(i < 4, false, false, false));
        let pred = vec![MotionFlags::NONE; 10];
        let r = evaluate_detector(&pred, &truth).unwrap();
        assert_eq!(r.vel().recall, 0.0);
        assert!(!r.vel().precision_defined);
        assert_eq!(r.vel().precision, 1.0);
        assert_eq!((r.vel().tn, r.vel().fn_), (6, 4));
    }

    #[test]
    fn ratio_formulas() {
        let c = ProfileConfusion::from_counts(480_000, 700, 160_000, 9_000);
        assert_eq!(c.precision, 480_000.0 / 480_700.0);
        assert_eq!(c.recall, 480_000.0 / 489_000.0);
        assert!((c.precision - 0.998_544).abs() < 1e-6);
        assert!((c.recall - 0.981_595).abs() < 1e-6);
    }

    #[test]
    fn length_mismatch() {
        assert!(evaluate_detector(&[MotionFlags::NONE], &[]).is_err());
    }
}
