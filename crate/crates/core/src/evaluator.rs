//! COCO-protocol detection evaluation.
//!
//! Detections are matched greedily in descending score order against the
//! ground truth of the same image and class. Crowd regions and ground truth
//! outside the current area range are "ignored": detections matched to them
//! count as neither true nor false positives. Average precision is the mean
//! of the monotone precision envelope sampled at 101 recall points.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, DatasetIndex};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(image_id: u64, category_id: u64, bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Integrity(format!(
                "detection on image {image_id} has score {score} outside [0, 1]"
            )));
        }
        Ok(Self {
            image_id,
            category_id,
            bbox,
            score,
        })
    }
}

#[derive(Deserialize)]
struct RawDetection {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

/// Parses a COCO results array `[{image_id, category_id, bbox, score}]`.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let raw: Vec<RawDetection> =
        serde_json::from_str(text).map_err(|e| Error::from_json(&e, text))?;
    raw.into_iter()
        .map(|r| {
            let [x, y, w, h] = r.bbox;
            Detection::new(
                r.image_id,
                r.category_id,
                BBox::from_xywh(x, y, w, h)?,
                r.score,
            )
        })
        .collect()
}

pub fn detections_to_json(dets: &[Detection]) -> String {
    #[derive(Serialize)]
    struct Out {
        image_id: u64,
        category_id: u64,
        bbox: [f64; 4],
        score: f64,
    }
    let out: Vec<Out> = dets
        .iter()
        .map(|d| Out {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: d.bbox.to_xywh(),
            score: d.score,
        })
        .collect();
    serde_json::to_string(&out).expect("detections serialize")
}

/// Named box-area interval, bounds inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl AreaRange {
    pub fn new(name: &str, min: f64, max: f64) -> Self {
        Self {
            name: name.to_string(),
            min,
            max,
        }
    }

    fn contains(&self, area: f64) -> bool {
        area >= self.min && area <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub area_ranges: Vec<AreaRange>,
    pub max_detections_per_image: usize,
    /// Score cutoff for the size-stratified precision/recall.
    pub operating_score: f64,
    /// IoU threshold for the size-stratified precision/recall.
    pub operating_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect(),
            area_ranges: vec![
                AreaRange::new("all", 0.0, 1e10),
                AreaRange::new("small", 0.0, 32.0 * 32.0),
                AreaRange::new("medium", 32.0 * 32.0, 96.0 * 96.0),
                AreaRange::new("large", 96.0 * 96.0, 1e10),
            ],
            max_detections_per_image: 100,
            operating_score: 0.5,
            operating_iou: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::Config("no IoU thresholds".into()));
        }
        let in_range = |t: f64| t > 0.0 && t <= 1.0;
        if !self.iou_thresholds.iter().all(|&t| in_range(t))
            || self.iou_thresholds.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Config(format!(
                "IoU thresholds must be strictly increasing in (0, 1]: {:?}",
                self.iou_thresholds
            )));
        }
        if !in_range(self.operating_iou) {
            return Err(Error::Config(format!(
                "operating IoU {} outside (0, 1]",
                self.operating_iou
            )));
        }
        if self.area_ranges.is_empty() {
            return Err(Error::Config("no area ranges".into()));
        }
        if self.max_detections_per_image == 0 {
            return Err(Error::Config(
                "max_detections_per_image must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome for one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchFlag {
    Tp,
    Fp,
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Indexed like the input detections.
    pub det_flags: Vec<MatchFlag>,
    /// Indexed like the input ground truth.
    pub gt_matched: Vec<bool>,
}

fn crowd_aware_iou(det: &BBox, gt: &BBox, crowd: bool) -> f64 {
    if !crowd {
        return det.iou(gt);
    }
    // crowd regions: overlap relative to the detection only
    let a = det.area();
    if a <= 0.0 {
        0.0
    } else {
        det.intersection_area(gt) / a
    }
}

/// Greedy assignment. `dets` are visited in the given order; `gt_order`
/// lists non-ignored ground truth before ignored ones; ignored ground truth
/// is only used when no non-ignored one qualifies. Among equal IoUs the
/// later ground truth in `gt_order` wins. Returns the matched ground-truth
/// index for every detection.
fn greedy_match(
    ious: &[Vec<f64>],
    gt_order: &[usize],
    gt_ignore: &[bool],
    gt_crowd: &[bool],
    thr: f64,
) -> (Vec<Option<usize>>, Vec<bool>) {
    let mut gt_matched = vec![false; gt_ignore.len()];
    let mut out = Vec::with_capacity(ious.len());
    for row in ious {
        let mut best = thr.min(1.0 - 1e-10);
        let mut m: Option<usize> = None;
        for &g in gt_order {
            if gt_matched[g] && !gt_crowd[g] {
                continue;
            }
            if let Some(prev) = m {
                if !gt_ignore[prev] && gt_ignore[g] {
                    break;
                }
            }
            if row[g] < best {
                continue;
            }
            best = row[g];
            m = Some(g);
        }
        if let Some(g) = m {
            gt_matched[g] = true;
        }
        out.push(m);
    }
    (out, gt_matched)
}

fn order_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Matches detections and ground truth of one image and class.
///
/// Detections are processed by descending score, ties in input order.
pub fn match_detections(dets: &[Detection], gts: &[Annotation], iou_thr: f64) -> MatchResult {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let order = order_by_score(&scores);
    let crowd: Vec<bool> = gts.iter().map(|g| g.iscrowd).collect();
    let gt_order: Vec<usize> = (0..gts.len())
        .filter(|&g| !crowd[g])
        .chain((0..gts.len()).filter(|&g| crowd[g]))
        .collect();
    let ious: Vec<Vec<f64>> = order
        .iter()
        .map(|&d| {
            gts.iter()
                .map(|g| crowd_aware_iou(&dets[d].bbox, &g.bbox, g.iscrowd))
                .collect()
        })
        .collect();
    let (assigned, gt_matched) = greedy_match(&ious, &gt_order, &crowd, &crowd, iou_thr);
    let mut det_flags = vec![MatchFlag::Fp; dets.len()];
    for (k, &d) in order.iter().enumerate() {
        det_flags[d] = match assigned[k] {
            Some(g) if crowd[g] => MatchFlag::Ignored,
            Some(_) => MatchFlag::Tp,
            None => MatchFlag::Fp,
        };
    }
    MatchResult {
        det_flags,
        gt_matched,
    }
}

/// Cumulative precision and recall for flags sorted by descending score.
///
/// With `n_gt == 0` every detection is a false positive and recall is 0.
pub fn pr_curve(tp_flags: &[bool], n_gt: usize) -> (Vec<f64>, Vec<f64>) {
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &f in tp_flags {
        if f {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(if n_gt == 0 {
            0.0
        } else {
            tp as f64 / n_gt as f64
        });
    }
    (precision, recall)
}

pub const RECALL_POINTS: usize = 101;

/// 101-point interpolated average precision.
pub fn average_precision(precision: &[f64], recall: &[f64]) -> f64 {
    assert_eq!(precision.len(), recall.len(), "unaligned PR arrays");
    let mut envelope = precision.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        if envelope[i + 1] > envelope[i] {
            envelope[i] = envelope[i + 1];
        }
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / 100.0;
        let i = recall.partition_point(|&x| x < r);
        if i < envelope.len() {
            sum += envelope[i];
        }
    }
    sum / RECALL_POINTS as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApEntry {
    pub category_id: u64,
    pub area: String,
    pub iou_threshold: f64,
    /// `None` when the class has neither ground truth nor detections here.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaSummary {
    pub area: String,
    pub map_50: Option<f64>,
    pub map_50_95: Option<f64>,
    /// Pooled over classes at the operating point.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub n_gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub category_id: u64,
    pub area: String,
    pub iou_threshold: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    /// Mean AP over classes at IoU 0.5, all areas.
    pub map_50: Option<f64>,
    /// Mean AP over classes and every configured threshold, all areas.
    pub map_50_95: Option<f64>,
    pub areas: Vec<AreaSummary>,
    pub ap: Vec<ApEntry>,
    #[serde(skip)]
    pub curves: Vec<PrCurve>,
}

impl EvalResult {
    pub fn ap_for(&self, category_id: u64, area: &str, iou_threshold: f64) -> Option<f64> {
        self.ap
            .iter()
            .find(|e| {
                e.category_id == category_id
                    && e.area == area
                    && (e.iou_threshold - iou_threshold).abs() < 1e-12
            })
            .and_then(|e| e.ap)
    }

    pub fn area(&self, name: &str) -> Option<&AreaSummary> {
        self.areas.iter().find(|a| a.area == name)
    }
}

/// Scored flags for one (class, area, threshold) from one image.
#[derive(Default, Clone)]
struct Accum {
    scored: Vec<(f64, bool)>,
    n_gt: usize,
}

fn canonical_cmp(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.category_id.cmp(&b.category_id))
        .then(a.bbox.x1().total_cmp(&b.bbox.x1()))
        .then(a.bbox.y1().total_cmp(&b.bbox.y1()))
        .then(a.bbox.x2().total_cmp(&b.bbox.x2()))
        .then(a.bbox.y2().total_cmp(&b.bbox.y2()))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn same_threshold(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

/// Evaluates detections against the annotations of `ds`.
pub fn evaluate(dets: &[Detection], ds: &DatasetIndex, cfg: &EvalConfig) -> Result<EvalResult> {
    cfg.validate()?;
    let offenders: BTreeSet<(u64, u64)> = dets
        .iter()
        .filter(|d| ds.image(d.image_id).is_none() || ds.category(d.category_id).is_none())
        .map(|d| (d.image_id, d.category_id))
        .collect();
    if !offenders.is_empty() {
        let list: Vec<String> = offenders
            .iter()
            .map(|(i, c)| format!("(image {i}, category {c})"))
            .collect();
        return Err(Error::Integrity(format!(
            "detections reference unknown ids: {}",
            list.join(", ")
        )));
    }

    // per image: canonical order, capped
    let mut by_image: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        by_image.entry(d.image_id).or_default().push(*d);
    }
    for v in by_image.values_mut() {
        v.sort_by(canonical_cmp);
        v.truncate(cfg.max_detections_per_image);
    }

    let mut thresholds = cfg.iou_thresholds.clone();
    let op_slot = match thresholds
        .iter()
        .position(|&t| same_threshold(t, cfg.operating_iou))
    {
        Some(i) => i,
        None => {
            thresholds.push(cfg.operating_iou);
            thresholds.len() - 1
        }
    };
    let n_thr = thresholds.len();
    let n_area = cfg.area_ranges.len();
    let categories: Vec<u64> = ds.category_ids().collect();
    let image_ids: Vec<u64> = ds.images_by_id().map(|i| i.id).collect();

    // [category][area][threshold]
    let per_class: Vec<Vec<Vec<Accum>>> = categories
        .par_iter()
        .map(|&cat| {
            let mut acc = vec![vec![Accum::default(); n_thr]; n_area];
            for &img in &image_ids {
                let cell_dets: Vec<&Detection> = by_image
                    .get(&img)
                    .into_iter()
                    .flatten()
                    .filter(|d| d.category_id == cat)
                    .collect();
                let gts: Vec<&Annotation> = ds
                    .annotations_for_image(img)
                    .filter(|a| a.category_id == cat)
                    .collect();
                if cell_dets.is_empty() && gts.is_empty() {
                    continue;
                }
                evaluate_cell(&cell_dets, &gts, cfg, &thresholds, &mut acc);
            }
            acc
        })
        .collect();

    let mut ap = Vec::new();
    let mut curves = Vec::new();
    // [area][threshold] -> per-class AP values
    let mut table: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n_thr]; n_area];
    for (k, &cat) in categories.iter().enumerate() {
        for (a, range) in cfg.area_ranges.iter().enumerate() {
            for (t, &thr) in thresholds.iter().enumerate() {
                let acc = &per_class[k][a][t];
                let value = if acc.n_gt == 0 && acc.scored.is_empty() {
                    None
                } else {
                    let mut scored = acc.scored.clone();
                    scored.sort_by(|x, y| y.0.total_cmp(&x.0));
                    let flags: Vec<bool> = scored.iter().map(|s| s.1).collect();
                    let (p, r) = pr_curve(&flags, acc.n_gt);
                    let v = average_precision(&p, &r);
                    if t < cfg.iou_thresholds.len() {
                        curves.push(PrCurve {
                            category_id: cat,
                            area: range.name.clone(),
                            iou_threshold: thr,
                            precision: p,
                            recall: r,
                        });
                    }
                    Some(v)
                };
                if let Some(v) = value {
                    table[a][t].push(v);
                }
                if t < cfg.iou_thresholds.len() {
                    ap.push(ApEntry {
                        category_id: cat,
                        area: range.name.clone(),
                        iou_threshold: thr,
                        ap: value,
                    });
                }
            }
        }
    }

    let half = cfg
        .iou_thresholds
        .iter()
        .position(|&t| same_threshold(t, 0.5));
    let n_cfg = cfg.iou_thresholds.len();
    let mut areas = Vec::new();
    for (a, range) in cfg.area_ranges.iter().enumerate() {
        let map_50 = half.and_then(|t| mean(table[a][t].iter().copied()));
        let map_50_95 = mean(table[a][..n_cfg].iter().flatten().copied());
        let (mut tp, mut fp, mut n_gt) = (0, 0, 0);
        for class in &per_class {
            let acc = &class[a][op_slot];
            n_gt += acc.n_gt;
            for &(s, f) in &acc.scored {
                if s >= cfg.operating_score {
                    if f {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
        }
        areas.push(AreaSummary {
            area: range.name.clone(),
            map_50,
            map_50_95,
            precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
            recall: (n_gt > 0).then(|| tp as f64 / n_gt as f64),
            tp,
            fp,
            n_gt,
        });
    }
    let overall = areas.first().cloned();
    Ok(EvalResult {
        map_50: overall.as_ref().and_then(|a| a.map_50),
        map_50_95: overall.and_then(|a| a.map_50_95),
        areas,
        ap,
        curves,
    })
}

fn evaluate_cell(
    dets: &[&Detection],
    gts: &[&Annotation],
    cfg: &EvalConfig,
    thresholds: &[f64],
    acc: &mut [Vec<Accum>],
) {
    // `dets` are already in canonical score order
    let crowd: Vec<bool> = gts.iter().map(|g| g.iscrowd).collect();
    let ious: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| {
            gts.iter()
                .map(|g| crowd_aware_iou(&d.bbox, &g.bbox, g.iscrowd))
                .collect()
        })
        .collect();
    for (a, range) in cfg.area_ranges.iter().enumerate() {
        let ignore: Vec<bool> = gts
            .iter()
            .map(|g| g.iscrowd || !range.contains(g.bbox.area()))
            .collect();
        let order: Vec<usize> = (0..gts.len())
            .filter(|&g| !ignore[g])
            .chain((0..gts.len()).filter(|&g| ignore[g]))
            .collect();
        let n_gt = ignore.iter().filter(|&&i| !i).count();
        for (t, &thr) in thresholds.iter().enumerate() {
            let (assigned, _) = greedy_match(&ious, &order, &ignore, &crowd, thr);
            let slot = &mut acc[a][t];
            slot.n_gt += n_gt;
            for (d, m) in dets.iter().zip(assigned) {
                match m {
                    Some(g) if ignore[g] => {}
                    Some(_) => slot.scored.push((d.score, true)),
                    None if !range.contains(d.bbox.area()) => {}
                    None => slot.scored.push((d.score, false)),
                }
            }
        }
    }
}

/// Per-class CSV: AP@.5, AP@[.5:.95] and AP@[.5:.95] per extra area range.
pub fn per_class_csv(result: &EvalResult, ds: &DatasetIndex, cfg: &EvalConfig) -> String {
    let mut out = String::from("category_id,name,ap50,ap50_95");
    for r in cfg.area_ranges.iter().skip(1) {
        let _ = write!(out, ",ap_{}", r.name);
    }
    out.push('\n');
    let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    let all = &cfg.area_ranges[0].name;
    for cat in ds.categories() {
        let per_area = |area: &str| {
            mean(
                cfg.iou_thresholds
                    .iter()
                    .filter_map(|&t| result.ap_for(cat.id, area, t)),
            )
        };
        let _ = write!(
            out,
            "{},{},{},{}",
            cat.id,
            csv_field(&cat.name),
            fmt(result.ap_for(cat.id, all, 0.5)),
            fmt(per_area(all))
        );
        for r in cfg.area_ranges.iter().skip(1) {
            let _ = write!(out, ",{}", fmt(per_area(&r.name)));
        }
        out.push('\n');
    }
    out
}

/// PR points of every class at IoU 0.5 over the first area range.
pub fn pr_points_csv(result: &EvalResult, cfg: &EvalConfig) -> String {
    let mut out = String::from("category_id,rank,precision,recall\n");
    let all = &cfg.area_ranges[0].name;
    for c in result
        .curves
        .iter()
        .filter(|c| &c.area == all && same_threshold(c.iou_threshold, 0.5))
    {
        for (i, (p, r)) in c.precision.iter().zip(&c.recall).enumerate() {
            let _ = writeln!(out, "{},{},{:.6},{:.6}", c.category_id, i + 1, p, r);
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
