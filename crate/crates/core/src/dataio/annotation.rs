//! Normalised centre-box annotation text: one `class cx cy w h` line per
//! object, all four reals in `[0, 1]` relative to the image size.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{BBox, GtBox};

/// Tolerance for boxes that overhang the image by rounding only.
const EDGE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotationRecord {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl AnnotationRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let vals = [("cx", self.cx), ("cy", self.cy), ("w", self.w), ("h", self.h)];
        for (name, v) in vals {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.w == 0.0 || self.h == 0.0 {
            return Err("zero-size box".into());
        }
        let (x1, x2) = (self.cx - self.w / 2.0, self.cx + self.w / 2.0);
        let (y1, y2) = (self.cy - self.h / 2.0, self.cy + self.h / 2.0);
        if x1 < -EDGE_SLACK || y1 < -EDGE_SLACK || x2 > 1.0 + EDGE_SLACK || y2 > 1.0 + EDGE_SLACK {
            return Err("box extends outside the image".into());
        }
        Ok(())
    }

    /// Pixel corners on a `width x height` image.
    pub fn to_bbox(&self, width: u32, height: u32) -> Result<BBox> {
        let (w, h) = (f64::from(width), f64::from(height));
        let x1 = ((self.cx - self.w / 2.0) * w).max(0.0);
        let y1 = ((self.cy - self.h / 2.0) * h).max(0.0);
        let x2 = ((self.cx + self.w / 2.0) * w).min(w);
        let y2 = ((self.cy + self.h / 2.0) * h).min(h);
        BBox::new(x1, y1, x2, y2)
    }

    pub fn from_bbox(class_id: u32, b: &BBox, width: u32, height: u32) -> Self {
        let (w, h) = (f64::from(width), f64::from(height));
        Self {
            class_id,
            cx: (b.x1 + b.x2) / 2.0 / w,
            cy: (b.y1 + b.y2) / 2.0 / h,
            w: (b.x2 - b.x1) / w,
            h: (b.y2 - b.y1) / h,
        }
    }
}

pub fn parse_annotations(text: &str, source_name: &str) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("expected `class cx cy w h`, got {} fields", fields.len()),
            ));
        }
        let class_id: u32 = fields[0]
            .parse()
            .map_err(|_| Error::parse(source_name, line_no, format!("bad class id `{}`", fields[0])))?;
        let mut v = [0.0f64; 4];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse()
                .map_err(|_| Error::parse(source_name, line_no, format!("bad number `{f}`")))?;
        }
        let rec = AnnotationRecord {
            class_id,
            cx: v[0],
            cy: v[1],
            w: v[2],
            h: v[3],
        };
        rec.validate().map_err(|m| Error::parse(source_name, line_no, m))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn format_annotations(records: &[AnnotationRecord]) -> String {
    records
        .iter()
        .map(|r| format!("{} {} {} {} {}\n", r.class_id, r.cx, r.cy, r.w, r.h))
        .collect()
}

pub fn to_gt_boxes(records: &[AnnotationRecord], image_id: &str, width: u32, height: u32) -> Result<Vec<GtBox>> {
    records
        .iter()
        .map(|r| Ok(GtBox::new(image_id, r.class_id, r.to_bbox(width, height)?)))
        .collect()
}

pub fn parse_annotation_file(path: impl AsRef<Path>, image_id: &str, width: u32, height: u32) -> Result<Vec<GtBox>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_annotations(&text, &path.display().to_string())?;
    to_gt_boxes(&records, image_id, width, height)
}
