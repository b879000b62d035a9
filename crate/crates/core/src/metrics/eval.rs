use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::metrics::ap::{average_precision, pr_curve, precision, recall, ApMethod};
use crate::metrics::boxes::{DetBox, GtBox};
use crate::metrics::classes::ClassTable;
use crate::metrics::matching::match_detections;
use crate::parallel;

pub const DEFAULT_IOU_THR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub iou_thr: f64,
    pub ap_method: ApMethod,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_thr: DEFAULT_IOU_THR,
            ap_method: ApMethod::AllPoints,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_id: u32,
    pub name: String,
    pub gt: usize,
    pub det: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub ap: f64,
    /// One point per ranked detection.
    pub pr_curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub classes: Vec<ClassReport>,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    /// Pooled over classes.
    pub precision: f64,
    pub recall: f64,
    /// Unweighted mean of per-class precision and recall.
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Unweighted mean of per-class AP over every class in the table.
    pub map: f64,
}

impl EvalReport {
    pub fn class(&self, name: &str) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.name == name)
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn check_options(opts: &EvalOptions) -> Result<()> {
    if !(0.0..=1.0).contains(&opts.iou_thr) {
        return Err(Error::InvalidArgument(format!(
            "IoU threshold {} outside [0, 1]",
            opts.iou_thr
        )));
    }
    Ok(())
}

/// Per-class matching and AP, plus pooled and class-averaged aggregates.
///
/// Results do not depend on the order of `dets` or `gts`: detections are
/// ranked by [`DetBox::rank_cmp`] and ground truths are matched in
/// coordinate order within each image.
pub fn evaluate(dets: &[DetBox], gts: &[GtBox], classes: &ClassTable, opts: &EvalOptions) -> Result<EvalReport> {
    check_options(opts)?;
    for d in dets {
        if !classes.contains(d.class_id) {
            return Err(Error::InvalidArgument(format!(
                "detection in image `{}` has unknown class id {}",
                d.image_id, d.class_id
            )));
        }
    }
    for g in gts {
        if !classes.contains(g.class_id) {
            return Err(Error::InvalidArgument(format!(
                "ground truth in image `{}` has unknown class id {}",
                g.image_id, g.class_id
            )));
        }
    }

    let entries = classes.entries();
    let per_class = parallel::map_indexed(entries.len(), |ci| {
        let (class_id, name) = &entries[ci];
        class_report(*class_id, name, dets, gts, opts)
    });

    let tp = per_class.iter().map(|c| c.tp).sum();
    let fp = per_class.iter().map(|c| c.fp).sum();
    let fn_count = per_class.iter().map(|c| c.fn_count).sum();
    Ok(EvalReport {
        options: *opts,
        tp,
        fp,
        fn_count,
        precision: precision(tp, fp),
        recall: recall(tp, fn_count),
        macro_precision: mean(per_class.iter().map(|c| c.precision)),
        macro_recall: mean(per_class.iter().map(|c| c.recall)),
        map: mean(per_class.iter().map(|c| c.ap)),
        classes: per_class,
    })
}

fn class_report(class_id: u32, name: &str, dets: &[DetBox], gts: &[GtBox], opts: &EvalOptions) -> ClassReport {
    let mut by_image: BTreeMap<&str, (Vec<DetBox>, Vec<GtBox>)> = BTreeMap::new();
    for d in dets.iter().filter(|d| d.class_id == class_id) {
        by_image.entry(&d.image_id).or_default().0.push(d.clone());
    }
    let mut gt_count = 0;
    for g in gts.iter().filter(|g| g.class_id == class_id) {
        by_image.entry(&g.image_id).or_default().1.push(g.clone());
        gt_count += 1;
    }

    let mut labeled: Vec<(DetBox, bool)> = Vec::new();
    for (_, (ds, mut gs)) in by_image {
        gs.sort_by(|a, b| a.bbox.cmp_coords(&b.bbox));
        let m = match_detections(&ds, &gs, opts.iou_thr);
        labeled.extend(ds.into_iter().zip(m.det_tp));
    }
    labeled.sort_by(|a, b| a.0.rank_cmp(&b.0).then(b.1.cmp(&a.1)));

    let labels: Vec<bool> = labeled.iter().map(|(_, t)| *t).collect();
    let tp = labels.iter().filter(|t| **t).count();
    let fp = labels.len() - tp;
    let fn_count = gt_count - tp;
    let curve = pr_curve(&labels, gt_count)
        .into_iter()
        .zip(&labeled)
        .map(|((r, p), (d, _))| PrPoint {
            score: d.score,
            recall: r,
            precision: p,
        })
        .collect();
    let ap = if gt_count == 0 {
        log::warn!("class `{name}` has no ground truths; AP is 0");
        0.0
    } else {
        average_precision(&labels, gt_count, opts.ap_method)
    };
    ClassReport {
        class_id,
        name: name.to_string(),
        gt: gt_count,
        det: labels.len(),
        tp,
        fp,
        fn_count,
        precision: precision(tp, fp),
        recall: recall(tp, fn_count),
        ap,
        pr_curve: curve,
    }
}
