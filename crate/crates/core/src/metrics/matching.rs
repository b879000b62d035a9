use crate::metrics::boxes::{iou, DetBox, GtBox};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Per detection, in input order.
    pub det_tp: Vec<bool>,
    /// Per ground truth, in input order.
    pub gt_matched: Vec<bool>,
    /// Matched ground-truth index per detection.
    pub det_gt: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.det_tp.iter().filter(|t| **t).count()
    }

    pub fn fp(&self) -> usize {
        self.det_tp.len() - self.tp()
    }

    pub fn fn_count(&self) -> usize {
        self.gt_matched.iter().filter(|m| !**m).count()
    }
}

/// Greedy one-to-one matching of detections to ground truths of a single
/// image and class. Detections are visited in [`DetBox::rank_cmp`] order;
/// each takes the unmatched ground truth of highest IoU (lowest index on
/// ties) if that IoU reaches `iou_thr`.
pub fn match_detections(dets: &[DetBox], gts: &[GtBox], iou_thr: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[a].rank_cmp(&dets[b]).then(a.cmp(&b)));
    let mut gt_matched = vec![false; gts.len()];
    let mut det_tp = vec![false; dets.len()];
    let mut det_gt = vec![None; dets.len()];
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g] {
                continue;
            }
            let v = iou(&dets[d].bbox, &gt.bbox);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= iou_thr {
                gt_matched[g] = true;
                det_tp[d] = true;
                det_gt[d] = Some(g);
            }
        }
    }
    MatchResult {
        det_tp,
        gt_matched,
        det_gt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::boxes::BBox;

    fn gt(x: f64) -> GtBox {
        GtBox::new("im", 0, BBox::new(x, 0.0, x + 10.0, 10.0).unwrap())
    }

    fn det(x: f64, s: f64) -> DetBox {
        DetBox::new("im", 0, s, BBox::new(x, 0.0, x + 10.0, 10.0).unwrap()).unwrap()
    }

    #[test]
    fn exact_hit() {
        let m = match_detections(&[det(0.0, 0.9)], &[gt(0.0)], 0.5);
        assert_eq!((m.tp(), m.fp(), m.fn_count()), (1, 0, 0));
    }

    #[test]
    fn duplicate_is_fp() {
        let m = match_detections(&[det(0.0, 0.3), det(0.0, 0.9)], &[gt(0.0)], 0.5);
        assert_eq!(m.det_tp, vec![false, true]);
    }

    #[test]
    fn tie_goes_to_lowest_gt_index() {
        let m = match_detections(&[det(5.0, 0.9)], &[gt(10.0), gt(0.0)], 0.3);
        assert_eq!(m.det_gt, vec![Some(0)]);
    }

    #[test]
    fn below_threshold_unmatched() {
        let m = match_detections(&[det(6.0, 0.9)], &[gt(0.0)], 0.5);
        assert_eq!((m.tp(), m.fp(), m.fn_count()), (0, 1, 1));
    }
}
