//! Directories of `HTSR` files listed by a plain-text `manifest.txt`, one
//! `name file` pair per line. Used for parameter bundles and feature levels.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataio::htsr::{load_tensor, save_tensor, AnyTensor};
use crate::error::{Error, Result};
use crate::nn::params::Params;
use crate::pyramid::{FeatureLevels, LEVEL_NAMES};
use crate::tensor::{fmt_shape, Scalar, Tensor};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
}

fn plain_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace())
}

fn plain_file(s: &str) -> bool {
    plain_token(s) && s != "." && s != ".." && !s.contains(['/', '\\']) && s != MANIFEST
}

pub fn parse_manifest(text: &str, source_name: &str) -> Result<Vec<ManifestEntry>> {
    let mut out: Vec<ManifestEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, file] = fields[..] else {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("expected `name file`, got `{line}`"),
            ));
        };
        if !plain_file(file) {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("file `{file}` must be a plain file name"),
            ));
        }
        if out.iter().any(|e| e.name == name) {
            return Err(Error::parse(source_name, line_no, format!("duplicate name `{name}`")));
        }
        if out.iter().any(|e| e.file == file) {
            return Err(Error::parse(source_name, line_no, format!("duplicate file `{file}`")));
        }
        out.push(ManifestEntry {
            name: name.to_string(),
            file: file.to_string(),
        });
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries.iter().map(|e| format!("{} {}\n", e.name, e.file)).collect()
}

fn file_for(name: &str) -> String {
    format!("{name}.htsr")
}

/// Writes each named tensor to `<name>.htsr` and the manifest listing them.
pub fn write_bundle(dir: impl AsRef<Path>, tensors: &[(String, AnyTensor)]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(tensors.len());
    let mut paths = Vec::with_capacity(tensors.len() + 1);
    for (name, t) in tensors {
        let file = file_for(name);
        if !plain_token(name) || !plain_file(&file) {
            return Err(Error::InvalidArgument(format!(
                "tensor name `{name}` cannot be used as a file name"
            )));
        }
        let path = dir.join(&file);
        match t {
            AnyTensor::F32(t) => save_tensor(&path, t)?,
            AnyTensor::F64(t) => save_tensor(&path, t)?,
        }
        paths.push(path);
        entries.push(ManifestEntry {
            name: name.clone(),
            file,
        });
    }
    let manifest = dir.join(MANIFEST);
    fs::write(&manifest, format_manifest(&entries)).map_err(|e| Error::io(&manifest, e))?;
    paths.push(manifest);
    Ok(paths)
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<Vec<(String, AnyTensor)>> {
    let dir = dir.as_ref();
    let manifest = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let entries = parse_manifest(&text, &manifest.display().to_string())?;
    entries
        .into_iter()
        .map(|e| Ok((e.name, load_tensor(dir.join(&e.file))?)))
        .collect()
}

pub fn save_params<T: Scalar, P: Params<T>>(dir: impl AsRef<Path>, params: &P) -> Result<Vec<PathBuf>> {
    let mut tensors = Vec::new();
    params.visit("", &mut |name, t| {
        tensors.push((name.to_string(), AnyTensor::from(t.clone())))
    });
    write_bundle(dir, &tensors)
}

/// Loads into an already-shaped parameter set. Names, shapes and stored
/// precision must all match.
pub fn load_params<T: Scalar, P: Params<T>>(dir: impl AsRef<Path>, params: &mut P) -> Result<()> {
    let loaded = read_bundle(dir)?;
    let mut expected = Vec::new();
    params.visit("", &mut |name, t| expected.push((name.to_string(), t.shape().to_vec())));
    if loaded.len() != expected.len() {
        return Err(Error::Format(format!(
            "bundle has {} tensors, model expects {}",
            loaded.len(),
            expected.len()
        )));
    }
    let mut values: Vec<Tensor<T>> = Vec::with_capacity(loaded.len());
    for ((name, shape), (got_name, t)) in expected.iter().zip(loaded) {
        if *name != got_name {
            return Err(Error::Format(format!("expected tensor `{name}`, found `{got_name}`")));
        }
        let t: Tensor<T> = t.into_exact()?;
        if t.shape() != shape.as_slice() {
            return Err(Error::shape("load_params", fmt_shape(shape), fmt_shape(t.shape())));
        }
        values.push(t);
    }
    let mut it = values.into_iter();
    params.visit_mut("", &mut |_, t| *t = it.next().expect("counted above"));
    Ok(())
}

pub fn save_levels<T: Scalar>(dir: impl AsRef<Path>, levels: &FeatureLevels<T>) -> Result<Vec<PathBuf>> {
    let tensors: Vec<(String, AnyTensor)> = LEVEL_NAMES
        .iter()
        .zip(levels.as_array())
        .map(|(n, t)| (n.to_string(), AnyTensor::from(t.clone())))
        .collect();
    write_bundle(dir, &tensors)
}

pub fn load_levels<T: Scalar>(dir: impl AsRef<Path>) -> Result<FeatureLevels<T>> {
    let loaded = read_bundle(dir)?;
    let names: Vec<&str> = loaded.iter().map(|(n, _)| n.as_str()).collect();
    if names != LEVEL_NAMES {
        return Err(Error::Format(format!(
            "level bundle must list {LEVEL_NAMES:?}, found {names:?}"
        )));
    }
    let ts = loaded
        .into_iter()
        .map(|(_, t)| t.into_exact())
        .collect::<Result<Vec<Tensor<T>>>>()?;
    FeatureLevels::from_slice(&ts)
}
