//! Confusion matrices and mean intersection-over-union.

use std::fmt::Write as _;

use crate::error::{Result, SidaError};
use crate::IGNORE_LABEL;

/// `K x K` counts, rows are ground truth and columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tallies `pred` against `truth`; pixels labeled [`IGNORE_LABEL`] are skipped.
    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(SidaError::dim("prediction grid", truth.len(), pred.len()));
        }
        let k = self.classes;
        for (&p, &t) in pred.iter().zip(truth) {
            if t == IGNORE_LABEL {
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= k || t >= k {
                return Err(SidaError::Config(format!(
                    "label {} out of range for {k} classes",
                    p.max(t)
                )));
            }
            self.counts[t * k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Per-class IoU (`None` where the class never occurs in truth or prediction)
/// and their mean over the defined classes.
pub fn miou(cm: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64)> {
    let k = cm.classes;
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let fp: u64 = (0..k).filter(|&t| t != c).map(|t| cm.get(t, c)).sum();
            let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| cm.get(c, p)).sum();
            let union = tp + fp + fn_;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(SidaError::UndefinedMetric);
    }
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok((per_class, mean))
}

/// Evaluation report rows: `domain,class_id,iou` then a `domain,mean_miou`
/// summary block, six decimals. Undefined classes are written as `nan`.
pub fn report_csv(results: &[(String, Vec<Option<f64>>, f64)]) -> String {
    let mut s = String::from("domain,class_id,iou\n");
    for (domain, per_class, _) in results {
        for (k, iou) in per_class.iter().enumerate() {
            match iou {
                Some(v) => writeln!(s, "{domain},{k},{v:.6}"),
                None => writeln!(s, "{domain},{k},nan"),
            }
            .expect("write to string");
        }
    }
    s.push_str("domain,mean_miou\n");
    for (domain, _, mean) in results {
        writeln!(s, "{domain},{mean:.6}").expect("write to string");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction_is_diagonal() {
        let mut cm = ConfusionMatrix::new(3);
        let t = [0u8, 1, 2, 2, 1];
        cm.accumulate(&t, &t).unwrap();
        assert_eq!(cm.get(2, 2), 2);
        assert_eq!(cm.total(), 5);
        let (per, mean) = miou(&cm).unwrap();
        assert_eq!(per, vec![Some(1.0); 3]);
        assert_eq!(mean, 1.0);
    }

    #[test]
    fn ignored_pixels_are_skipped() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0, 1], &[IGNORE_LABEL, IGNORE_LABEL]).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(2));
        assert!(matches!(miou(&cm), Err(SidaError::UndefinedMetric)));
    }

    #[test]
    fn hand_two_class_case() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (1, 1, 0, 2));
        let (per, mean) = miou(&cm).unwrap();
        assert_eq!(per, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((mean - 0.583_333_333).abs() < 1e-8);
    }

    #[test]
    fn absent_class_is_excluded() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[0, 1, 1], &[0, 1, 0]).unwrap();
        let (per, mean) = miou(&cm).unwrap();
        assert_eq!(per[2], None);
        assert!((mean - (0.5 + 0.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn shape_and_range_errors() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(matches!(cm.accumulate(&[0], &[0, 1]), Err(SidaError::Dimension { .. })));
        assert!(cm.accumulate(&[2], &[0]).is_err());
    }

    #[test]
    fn report_format() {
        let csv = report_csv(&[("fog".into(), vec![Some(0.5), None], 0.5)]);
        assert_eq!(
            csv,
            "domain,class_id,iou\nfog,0,0.500000\nfog,1,nan\ndomain,mean_miou\nfog,0.500000\n"
        );
    }

    proptest! {
        #[test]
        fn additive_and_order_free(
            pairs in prop::collection::vec((0u8..4, 0u8..4), 1..60),
            split in 0usize..60,
        ) {
            let (pred, truth): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let mut whole = ConfusionMatrix::new(4);
            whole.accumulate(&pred, &truth).unwrap();

            let s = split.min(pred.len());
            let mut a = ConfusionMatrix::new(4);
            a.accumulate(&pred[..s], &truth[..s]).unwrap();
            let mut b = ConfusionMatrix::new(4);
            b.accumulate(&pred[s..], &truth[s..]).unwrap();
            b.merge(&a);
            prop_assert_eq!(&b, &whole);

            let mut rev = ConfusionMatrix::new(4);
            let rp: Vec<u8> = pred.iter().rev().copied().collect();
            let rt: Vec<u8> = truth.iter().rev().copied().collect();
            rev.accumulate(&rp, &rt).unwrap();
            prop_assert_eq!(&rev, &whole);

            let (per, _) = miou(&whole).unwrap();
            prop_assert!(per.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
