use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataio::annotation::parse_annotation_file;
use crate::error::{Error, Result};
use crate::metrics::{ClassTable, GtBox};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub annotation_path: PathBuf,
}

/// Images with their sizes and annotation files, plus the class table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<IndexEntry>,
    pub classes: ClassTable,
}

impl DatasetIndex {
    pub fn new(entries: Vec<IndexEntry>, classes: ClassTable) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::Config(format!("duplicate image id `{}`", e.image_id)));
            }
            if e.width == 0 || e.height == 0 {
                return Err(Error::Config(format!("image `{}` has a zero dimension", e.image_id)));
            }
        }
        Ok(Self { entries, classes })
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.image_id.clone()).collect()
    }

    pub fn get(&self, image_id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    /// Reads every annotation file, rejecting class ids missing from the table.
    pub fn load_ground_truth(&self) -> Result<Vec<GtBox>> {
        let mut out = Vec::new();
        for e in &self.entries {
            let boxes = parse_annotation_file(&e.annotation_path, &e.image_id, e.width, e.height)?;
            if let Some(b) = boxes.iter().find(|b| !self.classes.contains(b.class_id)) {
                return Err(Error::Config(format!(
                    "{}: unknown class id {}",
                    e.annotation_path.display(),
                    b.class_id
                )));
            }
            out.extend(boxes);
        }
        Ok(out)
    }
}

/// Lines of `image_id width height annotation_path`. Relative annotation
/// paths are resolved against `base`.
pub fn parse_index(text: &str, source_name: &str, base: &Path) -> Result<Vec<IndexEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let [id, w, h, path] = f[..] else {
            return Err(Error::parse(
                source_name,
                line_no,
                format!(
                    "expected `image_id width height annotation_path`, got {} fields",
                    f.len()
                ),
            ));
        };
        let dim = |s: &str| -> Result<u32> {
            match s.parse::<u32>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(Error::parse(source_name, line_no, format!("bad image dimension `{s}`"))),
            }
        };
        let p = PathBuf::from(path);
        out.push(IndexEntry {
            image_id: id.to_string(),
            width: dim(w)?,
            height: dim(h)?,
            annotation_path: if p.is_absolute() { p } else { base.join(p) },
        });
    }
    Ok(out)
}

/// Lines of `class_id name`.
pub fn parse_class_table(text: &str, source_name: &str) -> Result<ClassTable> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let [id, name] = f[..] else {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("expected `class_id name`, got `{line}`"),
            ));
        };
        let id: u32 = id
            .parse()
            .map_err(|_| Error::parse(source_name, line_no, format!("bad class id `{id}`")))?;
        entries.push((id, name.to_string()));
    }
    ClassTable::new(entries).map_err(|e| Error::parse(source_name, 0, e.to_string()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_class_table(path: impl AsRef<Path>) -> Result<ClassTable> {
    let path = path.as_ref();
    parse_class_table(&read(path)?, &path.display().to_string())
}

/// Loads an index file; the class table defaults to the two solder-joint
/// classes when no table file is given.
pub fn load_index(path: impl AsRef<Path>, classes: Option<&Path>) -> Result<DatasetIndex> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_index(&read(path)?, &path.display().to_string(), base)?;
    let classes = match classes {
        Some(p) => load_class_table(p)?,
        None => ClassTable::solder_joint(),
    };
    DatasetIndex::new(entries, classes)
}
