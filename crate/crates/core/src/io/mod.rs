//! File formats: binary PGM/PPM images and the ACFT raw tensor dump.

mod acft;
mod pnm;

use std::path::Path;

use crate::error::{Error, Result};

pub use acft::{decode_acft, encode_acft, read_acft, write_acft, ACFT_HEADER_LEN, ACFT_MAGIC};
pub use pnm::{decode_pnm, encode_pgm, normalize_map, read_image, read_pgm, write_pgm, Graymap, Normalization, Pnm};

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
