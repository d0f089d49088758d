//! File formats: portable float maps and 8-bit PNG images.

mod pfm;
mod png;

pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use png::{read_rgb_png, write_rgb_png, RgbImage};

use crate::{Error, Result};
use std::path::Path;

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
