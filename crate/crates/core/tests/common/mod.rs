//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use std::cmp::Ordering;

use hafpn_core::metrics::{BBox, ClassTable, DetBox, GtBox};
use hafpn_core::nn::conv::Conv2d;
use hafpn_core::{Rng, Scalar, Tensor};

/// Direct seven-loop cross-correlation; taps accumulate in ascending
/// (channel, row, column) order and the bias is added last.
pub fn conv_oracle<T: Scalar>(x: &Tensor<T>, p: &Conv2d<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4().unwrap();
    let ws = p.weight.shape();
    let (oc, icg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let g = p.groups;
    let ocg = oc / g;
    assert_eq!(icg * g, c);
    let (s, pad) = (p.stride, p.padding);
    let oh = (h + 2 * pad - kh) / s + 1;
    let ow = (w + 2 * pad - kw) / s + 1;
    let mut out = vec![T::zero(); n * oc * oh * ow];
    for b in 0..n {
        for o in 0..oc {
            let grp = o / ocg;
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = T::zero();
                    for ci in 0..icg {
                        for u in 0..kh {
                            for v in 0..kw {
                                let yy = (i * s + u) as isize - pad as isize;
                                let xx = (j * s + v) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let wv = p.weight.data()[((o * icg + ci) * kh + u) * kw + v];
                                acc = acc + wv * x.at4(b, grp * icg + ci, yy as usize, xx as usize);
                            }
                        }
                    }
                    if let Some(bias) = &p.bias {
                        acc = acc + bias.data()[o];
                    }
                    out[((b * oc + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, oc, oh, ow], out).unwrap()
}

/// Nearest-neighbour 2x upsampling by index arithmetic.
pub fn upsample_oracle<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4().unwrap();
    let mut out = Vec::with_capacity(n * c * 4 * h * w);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    out.push(x.at4(b, ch, i / 2, j / 2));
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, 2 * h, 2 * w], out).unwrap()
}

/// Even-index subsampling: what a 3x3 stride-2 pad-1 conv with only the
/// centre tap set to the identity computes.
pub fn subsample_oracle<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4().unwrap();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    out.push(x.at4(b, ch, 2 * i, 2 * j));
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out).unwrap()
}

/// 3x3 convolution whose only nonzero taps are centred identity taps.
pub fn identity_conv<T: Scalar>(in_c: usize, out_c: usize, stride: usize) -> Conv2d<T> {
    let mut w = Tensor::<T>::zeros(&[out_c, in_c, 3, 3]).unwrap();
    for o in 0..out_c {
        w.data_mut()[((o * in_c + o % in_c) * 3 + 1) * 3 + 1] = T::one();
    }
    Conv2d::new(w, Some(Tensor::zeros(&[out_c]).unwrap()), stride, 1, 1).unwrap()
}

// ---------------------------------------------------------------------------
// Detection metrics

#[derive(Debug, Clone, PartialEq)]
pub struct OracleClass {
    pub gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub ap: f64,
    pub ap101: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub classes: Vec<OracleClass>,
    pub precision: f64,
    pub recall: f64,
    pub map: f64,
    pub map101: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
}

fn corners(b: &BBox) -> [f64; 4] {
    [b.x1, b.y1, b.x2, b.y2]
}

pub fn oracle_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    inter / (area(a) + area(b) - inter)
}

fn div(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn lex(a: &[f64; 4], b: &[f64; 4]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Brute force: one global ranking per class, a fresh greedy scan per
/// detection, and AP integrated directly from its definition.
pub fn oracle_evaluate(dets: &[DetBox], gts: &[GtBox], classes: &ClassTable, iou_thr: f64) -> OracleReport {
    let mut out = Vec::new();
    for class in classes.ids() {
        let mut cd: Vec<(usize, &DetBox)> = dets.iter().enumerate().filter(|(_, d)| d.class_id == class).collect();
        cd.sort_by(|(ia, a), (ib, b)| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.image_id.cmp(&b.image_id))
                .then_with(|| lex(&corners(&a.bbox), &corners(&b.bbox)))
                .then(ia.cmp(ib))
        });

        let mut cg: Vec<&GtBox> = gts.iter().filter(|g| g.class_id == class).collect();
        cg.sort_by(|a, b| {
            a.image_id
                .cmp(&b.image_id)
                .then_with(|| lex(&corners(&a.bbox), &corners(&b.bbox)))
        });
        let mut taken = vec![false; cg.len()];
        let mut hits = Vec::new();
        for (_, d) in &cd {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in cg.iter().enumerate() {
                if taken[gi] || g.image_id != d.image_id {
                    continue;
                }
                let v = oracle_iou(corners(&d.bbox), corners(&g.bbox));
                match best {
                    Some((_, bv)) if v <= bv => {}
                    _ => best = Some((gi, v)),
                }
            }
            let hit = matches!(best, Some((_, v)) if v >= iou_thr);
            if hit {
                taken[best.unwrap().0] = true;
            }
            hits.push(hit);
        }

        let n_gt = cg.len();
        let tp = hits.iter().filter(|h| **h).count();
        let fp = hits.len() - tp;
        let prec_at = |k: usize| div(hits[..=k].iter().filter(|h| **h).count(), k + 1);
        let rec_at = |k: usize| div(hits[..=k].iter().filter(|h| **h).count(), n_gt);
        let best_prec_from = |k: usize| (k..hits.len()).map(prec_at).fold(0.0, f64::max);

        let mut ap = 0.0;
        if n_gt > 0 {
            for k in (0..hits.len()).filter(|&k| hits[k]) {
                ap += best_prec_from(k) / n_gt as f64;
            }
        }
        let mut ap101 = 0.0;
        if n_gt > 0 {
            for t in 0..=100 {
                let level = t as f64 / 100.0;
                let p = (0..hits.len())
                    .filter(|&k| rec_at(k) >= level)
                    .map(prec_at)
                    .fold(0.0, f64::max);
                ap101 += p;
            }
            ap101 /= 101.0;
        }
        out.push(OracleClass {
            gt: n_gt,
            tp,
            fp,
            fn_count: n_gt - tp,
            precision: div(tp, tp + fp),
            recall: div(tp, n_gt),
            ap,
            ap101,
        });
    }
    let k = out.len() as f64;
    let tp: usize = out.iter().map(|c| c.tp).sum();
    let fp: usize = out.iter().map(|c| c.fp).sum();
    let gt: usize = out.iter().map(|c| c.gt).sum();
    OracleReport {
        precision: div(tp, tp + fp),
        recall: div(tp, gt),
        map: out.iter().map(|c| c.ap).sum::<f64>() / k,
        map101: out.iter().map(|c| c.ap101).sum::<f64>() / k,
        macro_precision: out.iter().map(|c| c.precision).sum::<f64>() / k,
        macro_recall: out.iter().map(|c| c.recall).sum::<f64>() / k,
        classes: out,
    }
}

/// A small random detection instance: up to 10 images and 20 boxes of each
/// kind. Detections are jittered copies of ground truths or free boxes, so
/// every IoU regime occurs; scores are coarsely quantized to force ties.
pub fn random_instance(rng: &mut Rng, classes: &ClassTable) -> (Vec<DetBox>, Vec<GtBox>) {
    let ids: Vec<u32> = classes.ids().collect();
    let images = 1 + rng.below(10);
    let rand_box = |rng: &mut Rng| {
        let x1 = rng.uniform::<f64>(0.0, 80.0);
        let y1 = rng.uniform::<f64>(0.0, 80.0);
        BBox::new(
            x1,
            y1,
            x1 + rng.uniform::<f64>(2.0, 30.0),
            y1 + rng.uniform::<f64>(2.0, 30.0),
        )
        .unwrap()
    };
    let n_gt = rng.below(21);
    let gts: Vec<GtBox> = (0..n_gt)
        .map(|_| {
            let img = format!("im{}", rng.below(images));
            let class = ids[rng.below(ids.len())];
            GtBox::new(&img, class, rand_box(rng))
        })
        .collect();
    let n_det = rng.below(21);
    let coarse = rng.below(2) == 0;
    let dets = (0..n_det)
        .map(|_| {
            let mut score = rng.unit_f64();
            if coarse {
                score = (score * 5.0).floor() / 5.0;
            }
            if !gts.is_empty() && rng.below(3) > 0 {
                let g = &gts[rng.below(gts.len())];
                let j = |rng: &mut Rng| rng.uniform::<f64>(-4.0, 4.0);
                let b = &g.bbox;
                let (x1, y1) = (b.x1 + j(rng), b.y1 + j(rng));
                let x2 = (b.x2 + j(rng)).max(x1 + 0.5);
                let y2 = (b.y2 + j(rng)).max(y1 + 0.5);
                let class = if rng.below(5) == 0 {
                    ids[rng.below(ids.len())]
                } else {
                    g.class_id
                };
                DetBox::new(&g.image_id, class, score, BBox::new(x1, y1, x2, y2).unwrap()).unwrap()
            } else {
                let img = format!("im{}", rng.below(images));
                DetBox::new(&img, ids[rng.below(ids.len())], score, rand_box(rng)).unwrap()
            }
        })
        .collect();
    (dets, gts)
}

pub fn three_classes() -> ClassTable {
    ClassTable::new(vec![
        (0, "insufficient".into()),
        (1, "shifting".into()),
        (4, "bridge".into()),
    ])
    .unwrap()
}
