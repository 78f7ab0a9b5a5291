//! Little-endian helpers shared by the binary formats.

use std::io::{Read, Write};

use crate::{Error, Result};

pub(crate) fn write_magic<W: Write>(w: &mut W, magic: &[u8]) -> std::io::Result<()> {
    w.write_all(magic)
}

pub(crate) fn read_magic<R: Read>(r: &mut R, magic: &[u8]) -> Result<()> {
    let mut buf = vec![0u8; magic.len()];
    read_exact(r, &mut buf)?;
    if buf != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&buf)
        )));
    }
    Ok(())
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated payload: {e}")))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Reads a count that will be used to size an allocation, refusing values that
/// cannot possibly fit in the remaining input.
pub(crate) fn read_count<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let v = read_u64(r)?;
    usize::try_from(v)
        .ok()
        .filter(|&n| n <= (1usize << 40))
        .ok_or_else(|| Error::Format(format!("implausible {what} count {v}")))
}

pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::Format("trailing bytes after payload".into())),
        Err(e) => Err(Error::Format(e.to_string())),
    }
}
