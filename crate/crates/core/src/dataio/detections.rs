use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{BBox, DetBox};

/// Lines of `image_id class_id score x1 y1 x2 y2`, pixel corners.
pub fn parse_detections(text: &str, source_name: &str) -> Result<Vec<DetBox>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("expected `image_id class_id score x1 y1 x2 y2`, got {} fields", f.len()),
            ));
        }
        let class_id: u32 = f[1]
            .parse()
            .map_err(|_| Error::parse(source_name, line_no, format!("bad class id `{}`", f[1])))?;
        let mut v = [0.0f64; 5];
        for (slot, s) in v.iter_mut().zip(&f[2..]) {
            *slot = s
                .parse()
                .map_err(|_| Error::parse(source_name, line_no, format!("bad number `{s}`")))?;
        }
        let bbox = BBox::new(v[1], v[2], v[3], v[4]).map_err(|e| Error::parse(source_name, line_no, e.to_string()))?;
        let det =
            DetBox::new(f[0], class_id, v[0], bbox).map_err(|e| Error::parse(source_name, line_no, e.to_string()))?;
        out.push(det);
    }
    Ok(out)
}

pub fn format_detections(dets: &[DetBox]) -> String {
    dets.iter()
        .map(|d| format!("{} {} {} {}\n", d.image_id, d.class_id, d.score, d.bbox))
        .collect()
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetBox>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, &path.display().to_string())
}
