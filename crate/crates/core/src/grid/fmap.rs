//! FMAP tensor files: `FMAP1\n`, an ASCII `channels height width\n` line, then
//! `channels * height * width` little-endian `f32` values, channel-major and
//! row-major within each channel.

use super::GridStack;
use crate::error::{data_err, Result, SalError};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

const MAGIC: &[u8] = b"FMAP1\n";

pub fn write_fmap(path: &Path, stack: &GridStack) -> Result<()> {
    crate::io::write_atomic(path, &encode_fmap(stack))
}

pub fn read_fmap(path: &Path) -> Result<GridStack> {
    let file = std::fs::File::open(path).map_err(|e| SalError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut magic = [0u8; 6];
    reader.read_exact(&mut magic).map_err(|e| SalError::io(path, e))?;
    if magic != MAGIC {
        return Err(data_err!("{}: bad FMAP magic", path.display()));
    }
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|e| SalError::io(path, e))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| data_err!("{}: malformed FMAP header {header:?}", path.display()))?;
    let [c, h, w] = dims[..] else {
        return Err(data_err!("{}: FMAP header needs 3 dims", path.display()));
    };
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw).map_err(|e| SalError::io(path, e))?;
    if raw.len() != c * h * w * 4 {
        return Err(data_err!(
            "{}: expected {} payload bytes, found {}",
            path.display(),
            c * h * w * 4,
            raw.len()
        ));
    }
    let values = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    GridStack::new(c, h, w, values)
}

/// Serialized FMAP bytes of a stack.
pub fn encode_fmap(stack: &GridStack) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(32 + stack.values().len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(format!("{} {} {}\n", stack.channels(), stack.height(), stack.width()).as_bytes());
    for &v in stack.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let s = GridStack::new(2, 1, 2, vec![1.0, -2.0, 0.5, 3.25]).unwrap();
        let buf = encode_fmap(&s);
        assert_eq!(&buf[..12], b"FMAP1\n2 1 2\n");
        assert_eq!(&buf[12..16], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 12 + 16);
    }

    #[test]
    fn roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.fmap");
        let s = GridStack::new(3, 2, 2, (0..12).map(|i| i as f64 * 0.5).collect()).unwrap();
        write_fmap(&p, &s).unwrap();
        assert_eq!(read_fmap(&p).unwrap(), s);
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.fmap");
        std::fs::write(&p, b"FMAP1\n1 2 2\n\0\0\0\0").unwrap();
        assert!(read_fmap(&p).is_err());
    }
}
