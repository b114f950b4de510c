//! Detection scoring: IoU, greedy score-ordered matching, per-class average
//! precision and their mean.
//!
//! Boxes use the inclusive-corner pixel convention, so a box's area is
//! `(xmax − xmin + 1) · (ymax − ymin + 1)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, DatasetManifest, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::geometry::PixelBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_name: String,
    pub bbox: PixelBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApInterpolation {
    /// Area under the monotone precision envelope at every recall change.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.1, …, 1.
    ElevenPoint,
}

impl std::str::FromStr for ApInterpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "all_point" => Ok(ApInterpolation::AllPoint),
            "eleven_point" | "11_point" => Ok(ApInterpolation::ElevenPoint),
            _ => Err(Error::InvalidConfig(format!("unknown interpolation `{s}`"))),
        }
    }
}

pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let iw = a.xmax.min(b.xmax) - a.xmin.max(b.xmin) + 1;
    let ih = a.ymax.min(b.ymax) - a.ymin.max(b.ymin) + 1;
    if iw <= 0 || ih <= 0 {
        return 0.0;
    }
    let inter = (iw * ih) as f64;
    inter / (a.area() as f64 + b.area() as f64 - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Tp,
    Fp,
    /// Matched a `difficult` ground truth; neither counted nor penalised.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDetection {
    /// Position in the input detection list.
    pub det_index: usize,
    pub label: Label,
    /// Index into the ground-truth list of the matched box.
    pub gt_index: Option<usize>,
    pub iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub iou_threshold: f64,
    /// Treat `difficult` ground truths as optional.
    pub respect_difficult: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            iou_threshold: 0.5,
            respect_difficult: false,
        }
    }
}

/// Indices of `dets` by descending score, ties in input order.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy matching in descending score order. Each detection takes the
/// unmatched ground truth of its class and image with the highest IoU
/// (first in input order on ties); it is a true positive when that IoU
/// reaches the threshold. Labels come back in processing order.
pub fn match_detections(dets: &[Detection], gts: &[Annotation], opts: &MatchOptions) -> Vec<LabeledDetection> {
    let mut pool: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        pool.entry((g.image_id.as_str(), g.class_name.as_str()))
            .or_default()
            .push(i);
    }
    let mut taken = vec![false; gts.len()];
    score_order(dets)
        .into_iter()
        .map(|di| {
            let d = &dets[di];
            let mut best: Option<(usize, f64)> = None;
            for &gi in pool
                .get(&(d.image_id.as_str(), d.class_name.as_str()))
                .into_iter()
                .flatten()
            {
                if taken[gi] {
                    continue;
                }
                let v = iou(&d.bbox, &gts[gi].bbox);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
            match best {
                Some((gi, v)) if v >= opts.iou_threshold => {
                    if opts.respect_difficult && gts[gi].difficult {
                        LabeledDetection {
                            det_index: di,
                            label: Label::Ignored,
                            gt_index: Some(gi),
                            iou: v,
                        }
                    } else {
                        taken[gi] = true;
                        LabeledDetection {
                            det_index: di,
                            label: Label::Tp,
                            gt_index: Some(gi),
                            iou: v,
                        }
                    }
                }
                best => LabeledDetection {
                    det_index: di,
                    label: Label::Fp,
                    gt_index: None,
                    iou: best.map_or(0.0, |(_, v)| v),
                },
            }
        })
        .collect()
}

/// Cumulative `(recall, precision)` after each detection, in score order.
/// Ignored detections are skipped. Empty when `n_gt == 0`.
pub fn pr_curve(labels: &[Label], n_gt: usize) -> Vec<(f64, f64)> {
    if n_gt == 0 {
        return Vec::new();
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    labels
        .iter()
        .filter(|l| **l != Label::Ignored)
        .map(|l| {
            match l {
                Label::Tp => tp += 1,
                _ => fp += 1,
            }
            (tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64)
        })
        .collect()
}

/// Average precision of score-ordered labels. `None` when there is nothing
/// to score: no ground truth and no counted detection.
pub fn average_precision(labels: &[Label], n_gt: usize, interpolation: ApInterpolation) -> Option<f64> {
    let counted = labels.iter().filter(|l| **l != Label::Ignored).count();
    if n_gt == 0 {
        return (counted > 0).then_some(0.0);
    }
    let curve = pr_curve(labels, n_gt);
    // envelope[i] = max precision at any point from i onwards
    let mut envelope: Vec<f64> = curve.iter().map(|&(_, p)| p).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    Some(match interpolation {
        ApInterpolation::AllPoint => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (i, &(r, _)) in curve.iter().enumerate() {
                if r > prev_recall {
                    ap += (r - prev_recall) * envelope[i];
                    prev_recall = r;
                }
            }
            ap
        }
        ApInterpolation::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let t = k as f64 / 10.0;
                    curve.iter().position(|&(r, _)| r >= t).map_or(0.0, |i| envelope[i])
                })
                .sum::<f64>()
                / 11.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_name: String,
    /// `None` when the class has neither ground truth nor detections.
    pub ap: Option<f64>,
    pub n_gt: usize,
    pub n_det: usize,
    pub n_tp: usize,
    pub n_fp: usize,
    /// `(recall, precision)` in score order.
    pub pr: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub iou_threshold: f64,
    pub interpolation: ApInterpolation,
    pub respect_difficult: bool,
    /// Mean AP over classes with at least one ground-truth box.
    pub map: f64,
    pub classes: Vec<ClassReport>,
}

impl EvalReport {
    pub fn per_class_ap(&self) -> BTreeMap<&str, Option<f64>> {
        self.classes.iter().map(|c| (c.class_name.as_str(), c.ap)).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// Aligned text table: one row per class, mAP last. AP values in percent.
    pub fn table(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.class_name.chars().count())
            .chain([5])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
            "class", "n_gt", "n_det", "TP", "FP", "AP"
        );
        let _ = writeln!(out, "{}", "-".repeat(width + 40));
        for c in &self.classes {
            let ap = c.ap.map_or_else(|| "-".to_owned(), |v| format!("{:.1}", 100.0 * v));
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
                c.class_name, c.n_gt, c.n_det, c.n_tp, c.n_fp, ap
            );
        }
        let _ = writeln!(out, "{}", "-".repeat(width + 40));
        let _ = writeln!(out, "{:<width$}  {:>38}", "mAP", format!("{:.1}", 100.0 * self.map));
        let _ = writeln!(
            out,
            "(IoU >= {}, {} AP)",
            self.iou_threshold,
            match self.interpolation {
                ApInterpolation::AllPoint => "all-point",
                ApInterpolation::ElevenPoint => "11-point",
            }
        );
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalOptions {
    pub matching: MatchOptions,
    pub interpolation: ApInterpolation,
}

/// Scores `dets` against the manifest's annotations over the whole set,
/// accumulating matches across images per class.
pub fn evaluate(dets: &[Detection], gt: &DatasetManifest, opts: &EvalOptions) -> Result<EvalReport> {
    let known: BTreeSet<&str> = gt.classes.iter().map(String::as_str).collect();
    if let Some(d) = dets.iter().find(|d| !known.contains(d.class_name.as_str())) {
        return Err(Error::ClassMismatch {
            class: d.class_name.clone(),
        });
    }
    let labels = match_detections(dets, &gt.annotations, &opts.matching);
    let mut per_class: BTreeMap<&str, Vec<Label>> = gt.classes.iter().map(|c| (c.as_str(), Vec::new())).collect();
    for l in &labels {
        per_class
            .get_mut(dets[l.det_index].class_name.as_str())
            .expect("class checked above")
            .push(l.label);
    }
    let mut classes = Vec::with_capacity(per_class.len());
    for (class, labels) in per_class {
        let n_gt = gt
            .annotations
            .iter()
            .filter(|a| a.class_name == class && !(opts.matching.respect_difficult && a.difficult))
            .count();
        classes.push(ClassReport {
            class_name: class.to_owned(),
            ap: average_precision(&labels, n_gt, opts.interpolation),
            n_gt,
            n_det: labels.len(),
            n_tp: labels.iter().filter(|l| **l == Label::Tp).count(),
            n_fp: labels.iter().filter(|l| **l == Label::Fp).count(),
            pr: pr_curve(&labels, n_gt),
        });
    }
    let scored: Vec<f64> = classes
        .iter()
        .filter(|c| c.n_gt > 0)
        .map(|c| c.ap.unwrap_or(0.0))
        .collect();
    let map = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        iou_threshold: opts.matching.iou_threshold,
        interpolation: opts.interpolation,
        respect_difficult: opts.matching.respect_difficult,
        map,
        classes,
    })
}

/// Reads a JSON Lines file of [`Detection`] objects.
pub fn read_detections(r: impl BufRead) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        let schema = |message: String| Error::Schema { line: n, message };
        let line = line.map_err(|e| schema(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Detection = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        if !d.bbox.is_well_ordered() {
            return Err(schema("bbox has max < min".into()));
        }
        if !d.score.is_finite() {
            return Err(schema("score must be finite".into()));
        }
        out.push(d);
    }
    Ok(out)
}

pub fn read_detections_file(path: &Path) -> Result<Vec<Detection>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_detections(std::io::BufReader::new(f)).map_err(|e| e.in_file(path))
}

pub fn write_detections(dets: &[Detection], path: &Path) -> Result<()> {
    let mut s = String::new();
    for d in dets {
        s.push_str(&serde_json::to_string(d).expect("detection serialises"));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ImageEntry, Source};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(x0: i64, y0: i64, x1: i64, y1: i64) -> PixelBox {
        PixelBox::new(x0, y0, x1, y1)
    }

    fn gt(image: &str, class: &str, bbox: PixelBox) -> Annotation {
        Annotation {
            image_id: image.into(),
            class_name: class.into(),
            bbox,
            source: Source::Real,
            difficult: false,
        }
    }

    fn det(image: &str, class: &str, bbox: PixelBox, score: f64) -> Detection {
        Detection {
            image_id: image.into(),
            class_name: class.into(),
            bbox,
            score,
        }
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(3, 4, 9, 9), &b(3, 4, 9, 9)), 1.0);
        assert_eq!(iou(&b(0, 0, 4, 4), &b(5, 0, 9, 4)), 0.0);
        assert_eq!(iou(&b(0, 0, 1, 1), &b(1, 0, 2, 1)), 2.0 / 6.0);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in any::<[i16; 4]>(), c in any::<[i16; 4]>()) {
            let mk = |v: [i16; 4]| {
                let (x0, x1) = (v[0].min(v[2]) as i64, v[0].max(v[2]) as i64);
                let (y0, y1) = (v[1].min(v[3]) as i64, v[1].max(v[3]) as i64);
                b(x0, y0, x1, y1)
            };
            let (p, q) = (mk(a), mk(c));
            let v = iou(&p, &q);
            prop_assert_eq!(v, iou(&q, &p));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(iou(&p, &p), 1.0);
        }
    }

    #[test]
    fn matching_examples() {
        let gts = [gt("i", "a", b(0, 0, 9, 9))];
        let one = match_detections(&[det("i", "a", b(0, 0, 9, 8), 0.7)], &gts, &MatchOptions::default());
        assert_eq!(one[0].label, Label::Tp);
        let two = match_detections(
            &[det("i", "a", b(0, 0, 9, 8), 0.4), det("i", "a", b(0, 0, 9, 9), 0.9)],
            &gts,
            &MatchOptions::default(),
        );
        assert_eq!((two[0].det_index, two[0].label), (1, Label::Tp));
        assert_eq!((two[1].det_index, two[1].label), (0, Label::Fp));
        // wrong class or wrong image never matches
        let other = match_detections(
            &[det("i", "b", b(0, 0, 9, 9), 1.0), det("j", "a", b(0, 0, 9, 9), 1.0)],
            &gts,
            &MatchOptions::default(),
        );
        assert!(other.iter().all(|l| l.label == Label::Fp));
    }

    #[test]
    fn difficult_ground_truth_is_optional_when_respected() {
        let mut g = gt("i", "a", b(0, 0, 9, 9));
        g.difficult = true;
        let gts = [g, gt("i", "a", b(50, 50, 59, 59))];
        let dets = [det("i", "a", b(0, 0, 9, 9), 0.9), det("i", "a", b(50, 50, 59, 59), 0.8)];
        let opts = MatchOptions {
            respect_difficult: true,
            ..Default::default()
        };
        let labels: Vec<Label> = match_detections(&dets, &gts, &opts)
            .into_iter()
            .map(|l| l.label)
            .collect();
        assert_eq!(labels, [Label::Ignored, Label::Tp]);
        assert_eq!(average_precision(&labels, 1, ApInterpolation::AllPoint), Some(1.0));
        // off by default: the difficult box counts like any other
        let labels: Vec<Label> = match_detections(&dets, &gts, &MatchOptions::default())
            .into_iter()
            .map(|l| l.label)
            .collect();
        assert_eq!(labels, [Label::Tp, Label::Tp]);
    }

    #[test]
    fn ap_examples() {
        use Label::*;
        assert_eq!(average_precision(&[Tp], 1, ApInterpolation::AllPoint), Some(1.0));
        assert_eq!(average_precision(&[Fp, Fp], 3, ApInterpolation::AllPoint), Some(0.0));
        assert_eq!(average_precision(&[], 3, ApInterpolation::AllPoint), Some(0.0));
        assert_eq!(average_precision(&[Fp], 0, ApInterpolation::AllPoint), Some(0.0));
        assert_eq!(average_precision(&[], 0, ApInterpolation::AllPoint), None);
        let ap = average_precision(&[Tp, Fp, Tp], 2, ApInterpolation::AllPoint).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(format!("{ap:.5}"), "0.83333");
        // 11-point on the same curve: recall 0..0.5 → 1, 0.6..1.0 → 2/3
        let ap11 = average_precision(&[Tp, Fp, Tp], 2, ApInterpolation::ElevenPoint).unwrap();
        assert!((ap11 - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-15);
    }

    #[test]
    fn modes_agree_on_curves_constant_at_sample_recalls() {
        use Label::*;
        // n_gt = 10, precision one throughout: both modes give exactly 1.
        let labels = [Tp; 10];
        assert_eq!(average_precision(&labels, 10, ApInterpolation::AllPoint), Some(1.0));
        let eleven = average_precision(&labels, 10, ApInterpolation::ElevenPoint).unwrap();
        assert!((eleven - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trailing_zero_overlap_detection_never_raises_ap() {
        use Label::*;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let n = rng.gen_range(0..12);
            let mut labels: Vec<Label> = (0..n).map(|_| if rng.gen_bool(0.5) { Tp } else { Fp }).collect();
            let n_gt = labels.iter().filter(|l| **l == Tp).count() + rng.gen_range(0..3);
            for interp in [ApInterpolation::AllPoint, ApInterpolation::ElevenPoint] {
                let before = average_precision(&labels, n_gt, interp).unwrap_or(0.0);
                let mut more = labels.clone();
                more.push(Fp);
                assert!(average_precision(&more, n_gt, interp).unwrap_or(0.0) <= before);
            }
            labels.clear();
        }
    }

    #[test]
    fn recall_is_monotone() {
        use Label::*;
        let curve = pr_curve(&[Tp, Fp, Fp, Tp, Ignored, Tp, Fp], 4);
        assert_eq!(curve.len(), 6);
        assert!(curve.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    fn manifest(classes: &[&str], anns: Vec<Annotation>) -> DatasetManifest {
        let mut images: Vec<String> = anns.iter().map(|a| a.image_id.clone()).collect();
        images.sort();
        images.dedup();
        DatasetManifest {
            name: "gt".into(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
            images: images
                .into_iter()
                .map(|id| ImageEntry {
                    path: format!("{id}.jpg"),
                    image_id: id,
                    width: 100,
                    height: 100,
                })
                .collect(),
            annotations: anns,
            seed: 0,
            config_digest: String::new(),
        }
    }

    #[test]
    fn evaluate_examples() {
        let anns = vec![
            gt("1", "a", b(0, 0, 9, 9)),
            gt("1", "b", b(20, 20, 29, 29)),
            gt("2", "a", b(5, 5, 15, 15)),
        ];
        let m = manifest(&["a", "b", "c"], anns.clone());
        let perfect: Vec<Detection> = anns
            .iter()
            .map(|a| det(&a.image_id, &a.class_name, a.bbox, 1.0))
            .collect();
        let rep = evaluate(&perfect, &m, &EvalOptions::default()).unwrap();
        assert_eq!(rep.map, 1.0);
        assert_eq!(rep.per_class_ap()["a"], Some(1.0));
        assert_eq!(rep.per_class_ap()["c"], None);
        let empty = evaluate(&[], &m, &EvalOptions::default()).unwrap();
        assert_eq!(empty.map, 0.0);
        assert!(matches!(
            evaluate(&[det("1", "zzz", b(0, 0, 1, 1), 1.0)], &m, &EvalOptions::default()),
            Err(Error::ClassMismatch { .. })
        ));
        let table = rep.table();
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("class"));
        assert!(lines[2].starts_with("a ") && lines[4].starts_with("c "));
        assert!(lines[6].starts_with("mAP") && lines[6].ends_with("100.0"));
        let back: EvalReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn detection_file_errors() {
        let ok = "{\"image_id\":\"1\",\"class_name\":\"a\",\"bbox\":[0,0,3,3],\"score\":0.5}\n";
        assert_eq!(read_detections(ok.as_bytes()).unwrap().len(), 1);
        let bad = format!("{ok}{{\"image_id\":\"1\",\"class_name\":\"a\",\"bbox\":[4,0,3,3],\"score\":0.5}}\n");
        assert!(matches!(
            read_detections(bad.as_bytes()),
            Err(Error::Schema { line: 2, .. })
        ));
        assert!(matches!(
            read_detections("nope\n".as_bytes()),
            Err(Error::Schema { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn positive_score_scaling_changes_nothing(
            raw in proptest::collection::vec((0u8..3, 0u8..2, 0i64..20, 0i64..20, 1u16..1000), 0..12),
            gts in proptest::collection::vec((0u8..3, 0u8..2, 0i64..20, 0i64..20), 0..6),
            k in 1e-3f64..1e3,
        ) {
            let classes = ["a", "b"];
            let anns: Vec<Annotation> = gts.iter().map(|&(img, c, x, y)| gt(&img.to_string(), classes[c as usize], b(x, y, x + 6, y + 6))).collect();
            let dets: Vec<Detection> = raw.iter().map(|&(img, c, x, y, s)| det(&img.to_string(), classes[c as usize], b(x, y, x + 6, y + 6), f64::from(s) / 1000.0)).collect();
            let scaled: Vec<Detection> = dets.iter().map(|d| Detection { score: d.score * k, ..d.clone() }).collect();
            let mut m = manifest(&classes, anns);
            for d in &dets {
                if !m.images.iter().any(|i| i.image_id == d.image_id) {
                    m.images.push(ImageEntry { image_id: d.image_id.clone(), path: String::new(), width: 1, height: 1 });
                }
            }
            let opts = EvalOptions::default();
            let (r1, r2) = (evaluate(&dets, &m, &opts).unwrap(), evaluate(&scaled, &m, &opts).unwrap());
            prop_assert_eq!(r1.map.to_bits(), r2.map.to_bits());
            for (c1, c2) in r1.classes.iter().zip(&r2.classes) {
                prop_assert_eq!(c1.ap.map(f64::to_bits), c2.ap.map(f64::to_bits));
                prop_assert_eq!((c1.n_tp, c1.n_fp), (c2.n_tp, c2.n_fp));
            }
        }
    }
}
