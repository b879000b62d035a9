//! File formats and dataset plumbing: `HTSR` tensors, manifest bundles,
//! annotation and detection text, dataset indices and splits.

pub mod annotation;
pub mod bundle;
pub mod detections;
pub mod htsr;
pub mod index;
pub mod split;

pub use annotation::{format_annotations, parse_annotation_file, parse_annotations, to_gt_boxes, AnnotationRecord};
pub use bundle::{load_levels, load_params, read_bundle, save_levels, save_params, write_bundle, MANIFEST};
pub use detections::{format_detections, load_detections, parse_detections};
pub use htsr::{decode, encode, load_tensor, load_tensor_as, save_tensor, AnyTensor};
pub use index::{load_class_table, load_index, parse_class_table, parse_index, DatasetIndex, IndexEntry};
pub use split::{parse_fraction, parse_fractions, split_dataset, Fraction, Split, SplitSpec};
