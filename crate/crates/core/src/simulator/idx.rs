//! IDX (MNIST container) loading.

use std::path::Path;

use nalgebra::DMatrix;

use super::data::LocalDataset;
use crate::error::{NetDpError, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// A flat pool of labeled records, partitionable across nodes.
#[derive(Debug, Clone)]
pub struct DataPool {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl DataPool {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Split the pool IID (in stored order) into `nodes` shards of
    /// `records_per_node` records each, erroring when the pool is too small.
    pub fn partition(&self, nodes: usize, records_per_node: usize) -> Result<Vec<LocalDataset>> {
        let needed = nodes * records_per_node;
        if needed > self.len() {
            return Err(NetDpError::Parameter(format!(
                "pool holds {} records, need {needed}",
                self.len()
            )));
        }
        (0..nodes)
            .map(|node| {
                let start = node * records_per_node;
                let features = self.features.rows(start, records_per_node).into_owned();
                let labels = self.labels[start..start + records_per_node].to_vec();
                LocalDataset::new(features, labels, node)
            })
            .collect()
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| NetDpError::Format(format!("truncated file while reading {what}")))
}

/// Parse IDX image/label byte streams: big-endian magic and dimension header,
/// pixel values scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<DataPool> {
    let magic = read_u32(images, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(NetDpError::Format(format!(
            "image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32(images, 4, "image count")? as usize;
    let rows = read_u32(images, 8, "image rows")? as usize;
    let cols = read_u32(images, 12, "image cols")? as usize;
    let pixels = rows * cols;
    let body = &images[16..];
    if body.len() != count * pixels {
        return Err(NetDpError::Format(format!(
            "image body holds {} bytes, expected {}",
            body.len(),
            count * pixels
        )));
    }

    let label_magic = read_u32(labels, 0, "label magic")?;
    if label_magic != LABELS_MAGIC {
        return Err(NetDpError::Format(format!(
            "label magic {label_magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let label_count = read_u32(labels, 4, "label count")? as usize;
    let label_body = &labels[8..];
    if label_body.len() != label_count {
        return Err(NetDpError::Format(format!(
            "label body holds {} bytes, expected {label_count}",
            label_body.len()
        )));
    }
    if label_count != count {
        return Err(NetDpError::Format(format!(
            "{count} images but {label_count} labels"
        )));
    }

    let features = DMatrix::from_fn(count, pixels, |r, c| body[r * pixels + c] as f64 / 255.0);
    let labels = label_body.iter().map(|&l| l as usize).collect();
    Ok(DataPool { features, labels })
}

/// Load an IDX image/label file pair from disk.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<DataPool> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels)
}
