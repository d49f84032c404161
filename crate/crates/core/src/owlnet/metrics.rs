use std::fmt::Write as _;

use serde::Serialize;

use crate::augmentor::BugCategory;
use crate::imaging::round_half_up;
use crate::manifest::Label;

/// Round to three decimals, half-up.
pub fn round3(v: f64) -> f64 {
    round_half_up(v * 1000.0) as f64 / 1000.0
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn f1_of(p: Option<f64>, r: Option<f64>) -> Option<f64> {
    match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryMetrics {
    pub category: BugCategory,
    /// Buggy samples of this category.
    pub support: u64,
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Confusion counts with precision, recall and F1; undefined ratios are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub per_category: Vec<CategoryMetrics>,
}

/// One scored sample: ground truth and prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub truth: Label,
    pub category: Option<BugCategory>,
    pub predicted: Label,
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        MetricsReport {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1: f1_of(precision, recall),
            per_category: Vec::new(),
        }
    }

    /// Overall counts plus a per-category breakdown. A buggy sample counts
    /// toward its own category only, so category precision is taken over
    /// predictions whose true category matches; clean false positives
    /// appear only in the overall figures.
    pub fn from_outcomes(outcomes: &[Outcome]) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for o in outcomes {
            match (o.truth, o.predicted) {
                (Label::Buggy, Label::Buggy) => tp += 1,
                (Label::Clean, Label::Buggy) => fp += 1,
                (Label::Buggy, Label::Clean) => fn_ += 1,
                (Label::Clean, Label::Clean) => tn += 1,
            }
        }
        let mut report = Self::from_counts(tp, fp, fn_, tn);
        for category in BugCategory::ALL {
            let rows: Vec<_> = outcomes
                .iter()
                .filter(|o| o.truth == Label::Buggy && o.category == Some(category))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let ctp = rows.iter().filter(|o| o.predicted == Label::Buggy).count() as u64;
            let support = rows.len() as u64;
            let precision = ratio(ctp, ctp);
            let recall = ratio(ctp, support);
            report.per_category.push(CategoryMetrics {
                category,
                support,
                tp: ctp,
                fn_: support - ctp,
                precision,
                recall,
                f1: f1_of(precision, recall),
            });
        }
        report
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.tp + self.fp + self.fn_ + self.tn)
    }

    /// Table with one row per category and an overall row, three decimals,
    /// "-" for undefined values.
    pub fn table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.3}", round3(v)));
        let mut out = String::new();
        writeln!(out, "{:<20} {:>9} {:>9} {:>9}", "Category", "Precision", "Recall", "F1").unwrap();
        for c in &self.per_category {
            writeln!(
                out,
                "{:<20} {:>9} {:>9} {:>9}",
                c.category.display_name(),
                cell(c.precision),
                cell(c.recall),
                cell(c.f1)
            )
            .unwrap();
        }
        writeln!(
            out,
            "{:<20} {:>9} {:>9} {:>9}",
            "Overall",
            cell(self.precision),
            cell(self.recall),
            cell(self.f1)
        )
        .unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reported_counts() {
        let m = MetricsReport::from_counts(679, 119, 121, 0);
        assert_eq!(round3(m.precision.unwrap()), 0.851);
        assert_eq!(round3(m.recall.unwrap()), 0.849);
        assert_eq!(round3(m.f1.unwrap()), 0.85);
        assert!(m.table().contains("Overall"));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round3(0.8495), 0.85);
        assert_eq!(round3(0.1234), 0.123);
    }

    #[test]
    fn perfect_and_all_clean() {
        let m = MetricsReport::from_counts(5, 0, 0, 5);
        assert_eq!((m.precision, m.recall, m.f1), (Some(1.0), Some(1.0), Some(1.0)));
        let m = MetricsReport::from_counts(0, 0, 5, 5);
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1, None);
        assert!(m.table().lines().last().unwrap().contains('-'));
    }

    #[test]
    fn per_category_breakdown() {
        let o = |truth, category, predicted| Outcome {
            truth,
            category,
            predicted,
        };
        let outcomes = [
            o(Label::Buggy, Some(BugCategory::NullValue), Label::Buggy),
            o(Label::Buggy, Some(BugCategory::NullValue), Label::Clean),
            o(Label::Buggy, Some(BugCategory::MissingImage), Label::Clean),
            o(Label::Clean, None, Label::Buggy),
            o(Label::Clean, None, Label::Clean),
        ];
        let m = MetricsReport::from_outcomes(&outcomes);
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (1, 1, 2, 1));
        assert_eq!(m.per_category.len(), 2);
        let mi = &m.per_category[0];
        assert_eq!(mi.category, BugCategory::MissingImage);
        assert_eq!((mi.precision, mi.recall), (None, Some(0.0)));
        let nv = &m.per_category[1];
        assert_eq!((nv.precision, nv.recall), (Some(1.0), Some(0.5)));
        let mut shuffled = outcomes;
        shuffled.reverse();
        assert_eq!(MetricsReport::from_outcomes(&shuffled), m);
    }
}
