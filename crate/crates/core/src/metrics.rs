//! Confusion counts, precision/recall/F1 and per-class, per-region reports.

use std::collections::BTreeMap;
use std::ops::Add;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Raster};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts seen from the negative class as the positive one.
    pub fn swapped(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    fn tally(&mut self, pred: bool, gt: bool) {
        match (pred, gt) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Counts over the pixels of `scope` (the whole frame when `None`).
pub fn confusion(
    pred: &BinaryMask,
    gt: &BinaryMask,
    scope: Option<&BinaryMask>,
) -> Result<ConfusionCounts> {
    pred.ensure_same_dims(gt.dims())?;
    if let Some(s) = scope {
        pred.ensure_same_dims(s.dims())?;
    }
    let mut c = ConfusionCounts::default();
    for i in 0..pred.bits().len() {
        if scope.is_none_or(|s| s.bits()[i]) {
            c.tally(pred.bits()[i], gt.bits()[i]);
        }
    }
    Ok(c)
}

/// A ratio in [0, 1]. A zero denominator yields 0 with `degenerate` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> Score {
    if den == 0 {
        Score {
            value: 0.0,
            degenerate: true,
        }
    } else {
        Score {
            value: num as f64 / den as f64,
            degenerate: false,
        }
    }
}

pub fn precision(c: &ConfusionCounts) -> Score {
    ratio(c.tp, c.tp + c.fp)
}

pub fn recall(c: &ConfusionCounts) -> Score {
    ratio(c.tp, c.tp + c.fn_)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_from(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn f1(c: &ConfusionCounts) -> Score {
    let (p, r) = (precision(c), recall(c));
    Score {
        value: f1_from(p.value, r.value),
        degenerate: p.degenerate || r.degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub degenerate: bool,
}

impl ClassRow {
    fn from_counts(class: &str, c: &ConfusionCounts) -> ClassRow {
        let (p, r, f) = (precision(c), recall(c), f1(c));
        ClassRow {
            class: class.to_string(),
            precision: p.value,
            recall: r.value,
            f1: f.value,
            support: c.tp + c.fn_,
            degenerate: p.degenerate || r.degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub counts: ConfusionCounts,
    /// Positive class first, then negative.
    pub rows: [ClassRow; 2],
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

impl ClassReport {
    pub fn from_counts(counts: ConfusionCounts, names: [&str; 2]) -> ClassReport {
        let rows = [
            ClassRow::from_counts(names[0], &counts),
            ClassRow::from_counts(names[1], &counts.swapped()),
        ];
        let macro_f1 = (rows[0].f1 + rows[1].f1) / 2.0;
        let support = rows[0].support + rows[1].support;
        let weighted_f1 = if support == 0 {
            0.0
        } else {
            rows.iter().map(|r| r.f1 * r.support as f64).sum::<f64>() / support as f64
        };
        ClassReport {
            counts,
            rows,
            macro_f1,
            weighted_f1,
        }
    }
}

pub const DEFAULT_CLASS_NAMES: [&str; 2] = ["positive", "negative"];

pub fn class_report(
    pred: &BinaryMask,
    gt: &BinaryMask,
    scope: Option<&BinaryMask>,
    names: [&str; 2],
) -> Result<ClassReport> {
    Ok(ClassReport::from_counts(confusion(pred, gt, scope)?, names))
}

/// One report per distinct value of the single-channel `regions` raster, in
/// ascending label order. Pixels outside `scope` are not scored.
pub fn region_report(
    pred: &BinaryMask,
    gt: &BinaryMask,
    regions: &Raster,
    scope: Option<&BinaryMask>,
    names: [&str; 2],
) -> Result<Vec<(u8, ClassReport)>> {
    if regions.channels() != 1 {
        return Err(Error::invalid(
            "region map",
            format!("expected 1 channel, got {}", regions.channels()),
        ));
    }
    pred.ensure_same_dims((regions.height(), regions.width()))?;
    pred.ensure_same_dims(gt.dims())?;
    if let Some(s) = scope {
        pred.ensure_same_dims(s.dims())?;
    }
    let mut per: BTreeMap<u8, ConfusionCounts> = BTreeMap::new();
    for (i, &label) in regions.data().iter().enumerate() {
        let c = per.entry(label).or_default();
        if scope.is_none_or(|s| s.bits()[i]) {
            c.tally(pred.bits()[i], gt.bits()[i]);
        }
    }
    Ok(per
        .into_iter()
        .map(|(label, c)| (label, ClassReport::from_counts(c, names)))
        .collect())
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

pub const TSV_HEADER: &str = "region\tclass\tprecision\trecall\tf1\tsupport\tdegenerate";

/// Tab-separated report with percentages at two decimals. Each report emits
/// its two class rows followed by `macro-avg` and `weighted-avg` rows, which
/// carry only F1 and the total support.
pub fn format_tsv(reports: &[(String, ClassReport)]) -> String {
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for (region, rep) in reports {
        for row in &rep.rows {
            out.push_str(&format!(
                "{region}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                row.class,
                pct(row.precision),
                pct(row.recall),
                pct(row.f1),
                row.support,
                row.degenerate
            ));
        }
        let support = rep.rows[0].support + rep.rows[1].support;
        for (name, v) in [
            ("macro-avg", rep.macro_f1),
            ("weighted-avg", rep.weighted_f1),
        ] {
            out.push_str(&format!(
                "{region}\t{name}\t\t\t{}\t{support}\tfalse\n",
                pct(v)
            ));
        }
    }
    out
}

#[derive(Serialize)]
struct JsonRow<'a> {
    region: &'a str,
    class: &'a str,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: f64,
    support: u64,
    degenerate: bool,
}

/// One JSON object per line, same rows as [`format_tsv`], unit-interval values.
pub fn format_json_lines(reports: &[(String, ClassReport)]) -> String {
    let mut out = String::new();
    let mut push = |row: JsonRow| {
        out.push_str(&serde_json::to_string(&row).expect("plain struct serializes"));
        out.push('\n');
    };
    for (region, rep) in reports {
        for row in &rep.rows {
            push(JsonRow {
                region,
                class: &row.class,
                precision: Some(row.precision),
                recall: Some(row.recall),
                f1: row.f1,
                support: row.support,
                degenerate: row.degenerate,
            });
        }
        let support = rep.rows[0].support + rep.rows[1].support;
        for (name, v) in [
            ("macro-avg", rep.macro_f1),
            ("weighted-avg", rep.weighted_f1),
        ] {
            push(JsonRow {
                region,
                class: name,
                precision: None,
                recall: None,
                f1: v,
                support,
                degenerate: false,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoMeta;

    fn m(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(
            1,
            bits.len(),
            bits.iter().map(|&b| b == 1).collect(),
            GeoMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn table_row_f1() {
        let f = f1_from(0.9433, 0.9411);
        assert!((f - 0.9422).abs() < 1e-4, "{f}");
    }

    #[test]
    fn degenerate_counts() {
        let c = ConfusionCounts::default();
        assert_eq!(
            precision(&c),
            Score {
                value: 0.0,
                degenerate: true
            }
        );
        assert_eq!(f1(&c).value, 0.0);
        assert!(f1(&c).degenerate);
    }

    #[test]
    fn hand_arithmetic() {
        let c = ConfusionCounts {
            tp: 1,
            fp: 1,
            fn_: 0,
            tn: 5,
        };
        assert_eq!(precision(&c).value, 0.5);
        assert_eq!(recall(&c).value, 1.0);
        assert!((f1(&c).value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_and_inverted() {
        let gt = m(&[1, 0, 1, 1, 0]);
        let c = confusion(&gt, &gt, None).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let c = confusion(&gt.complement(), &gt, None).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        let rep = class_report(&gt, &gt, None, DEFAULT_CLASS_NAMES).unwrap();
        assert!(rep.rows.iter().all(|r| r.f1 == 1.0));
        assert_eq!(rep.rows[0].support + rep.rows[1].support, 5);
    }

    #[test]
    fn scope_restricts_counts() {
        let pred = m(&[1, 1, 0, 0]);
        let gt = m(&[1, 0, 1, 0]);
        let scope = m(&[1, 1, 0, 0]);
        let c = confusion(&pred, &gt, Some(&scope)).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 1,
                fp: 1,
                fn_: 0,
                tn: 0
            }
        );
        assert!(confusion(&pred, &m(&[1]), None).is_err());
    }

    #[test]
    fn regions_pool_to_whole_frame() {
        let pred = m(&[1, 1, 0, 0, 1, 0]);
        let gt = m(&[1, 0, 1, 0, 1, 1]);
        let regions = Raster::new(1, 6, 1, vec![2, 2, 1, 1, 2, 1], GeoMeta::default()).unwrap();
        let per = region_report(&pred, &gt, &regions, None, DEFAULT_CLASS_NAMES).unwrap();
        assert_eq!(per.iter().map(|(l, _)| *l).collect::<Vec<_>>(), vec![1, 2]);
        let pooled = per[0].1.counts + per[1].1.counts;
        assert_eq!(pooled, confusion(&pred, &gt, None).unwrap());
    }

    #[test]
    fn report_formats() {
        let gt = m(&[1, 0, 1, 1]);
        let pred = m(&[1, 0, 0, 1]);
        let rep = class_report(&pred, &gt, None, ["reservoir", "background"]).unwrap();
        let tsv = format_tsv(&[("all".into(), rep.clone())]);
        let lines: Vec<_> = tsv.lines().collect();
        assert_eq!(lines[0], TSV_HEADER);
        assert_eq!(lines[1], "all\treservoir\t100.00\t66.67\t80.00\t3\tfalse");
        assert_eq!(lines.len(), 5);
        let json = format_json_lines(&[("all".into(), rep)]);
        assert_eq!(json.lines().count(), 4);
        let first: serde_json::Value = serde_json::from_str(json.lines().next().unwrap()).unwrap();
        assert_eq!(first["support"], 3);
    }
}
