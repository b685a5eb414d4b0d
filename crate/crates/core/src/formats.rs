//! On-disk formats. Every writer goes through a temporary file in the
//! target directory and renames it into place.
//!
//! Packed bits: `"SIQ1"`, version byte, bit count as `u64` little-endian,
//! then the bits least-significant-bit first within each byte, zero-padded.
//!
//! Click records: `"SIQC"`, version byte, record count as `u64`
//! little-endian, then one byte per pulse in pulse order:
//! bit 0 is the basis (0 = Z, 1 = X), bits 1-2 the pattern (0 none, 1 D0,
//! 2 D1, 3 double). The remaining bits are zero.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::bits::BitBlock;
use crate::sim::{Basis, ClickEvent, ClickPattern};

pub const BITS_MAGIC: &[u8; 4] = b"SIQ1";
pub const CLICKS_MAGIC: &[u8; 4] = b"SIQC";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: not a {expected} file")]
    BadMagic { path: String, expected: &'static str },
    #[error("{path}: unsupported version {version}")]
    Version { path: String, version: u8 },
    #[error("{path}: truncated, header promises {promised} {unit}")]
    Truncated {
        path: String,
        promised: u64,
        unit: &'static str,
    },
    #[error("{path}: bad record byte {byte:#04x} at pulse {index}")]
    BadRecord { path: String, index: u64, byte: u8 },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes via `fill` into a temporary sibling of `path`, then renames.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), FormatError>
where
    F: FnOnce(&mut BufWriter<&mut NamedTempFile>) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(io_err(path))?;
    {
        let mut w = BufWriter::new(&mut tmp);
        fill(&mut w).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))?;
    }
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let text = serde_json::to_vec_pretty(value).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })?;
    write_atomic(path, |w| {
        w.write_all(&text)?;
        w.write_all(b"\n")
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&text).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn read_header(r: &mut impl Read, path: &Path, magic: &[u8; 4], what: &'static str) -> Result<u64, FormatError> {
    let mut head = [0u8; 13];
    let bad_magic = || FormatError::BadMagic {
        path: path.display().to_string(),
        expected: what,
    };
    r.read_exact(&mut head).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => bad_magic(),
        _ => io_err(path)(e),
    })?;
    if &head[..4] != magic {
        return Err(bad_magic());
    }
    if head[4] != VERSION {
        return Err(FormatError::Version {
            path: path.display().to_string(),
            version: head[4],
        });
    }
    Ok(u64::from_le_bytes(head[5..13].try_into().expect("8 bytes")))
}

pub fn write_bits(path: &Path, bits: &BitBlock) -> Result<(), FormatError> {
    write_atomic(path, |w| {
        w.write_all(BITS_MAGIC)?;
        w.write_all(&[VERSION])?;
        w.write_all(&(bits.len() as u64).to_le_bytes())?;
        w.write_all(&bits.to_bytes())
    })
}

pub fn read_bits(path: &Path) -> Result<BitBlock, FormatError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let len = read_header(&mut r, path, BITS_MAGIC, "packed-bit")?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err(path))?;
    if (bytes.len() as u64) < len.div_ceil(8) {
        return Err(FormatError::Truncated {
            path: path.display().to_string(),
            promised: len,
            unit: "bits",
        });
    }
    Ok(BitBlock::from_bytes(&bytes, len as usize))
}

pub fn encode_click(e: &ClickEvent) -> u8 {
    let basis = match e.basis {
        Basis::Z => 0,
        Basis::X => 1,
    };
    let pattern = match e.pattern {
        ClickPattern::None => 0,
        ClickPattern::D0 => 1,
        ClickPattern::D1 => 2,
        ClickPattern::Double => 3,
    };
    basis | pattern << 1
}

pub fn decode_click(byte: u8, pulse_index: u64) -> Option<ClickEvent> {
    if byte >> 3 != 0 {
        return None;
    }
    let basis = if byte & 1 == 1 { Basis::X } else { Basis::Z };
    let pattern = match (byte >> 1) & 3 {
        0 => ClickPattern::None,
        1 => ClickPattern::D0,
        2 => ClickPattern::D1,
        _ => ClickPattern::Double,
    };
    Some(ClickEvent {
        pulse_index,
        basis,
        pattern,
    })
}

/// Streams `count` records produced by `fill`, which receives a sink that
/// accepts event slices in pulse order.
pub fn write_clicks_with<F>(path: &Path, count: u64, fill: F) -> Result<(), FormatError>
where
    F: FnOnce(&mut dyn FnMut(&[ClickEvent]) -> io::Result<()>) -> io::Result<()>,
{
    write_atomic(path, |w| {
        w.write_all(CLICKS_MAGIC)?;
        w.write_all(&[VERSION])?;
        w.write_all(&count.to_le_bytes())?;
        let mut written = 0u64;
        let mut sink = |events: &[ClickEvent]| {
            let bytes: Vec<u8> = events.iter().map(encode_click).collect();
            written += bytes.len() as u64;
            w.write_all(&bytes)
        };
        fill(&mut sink)?;
        if written != count {
            return Err(io::Error::other(format!(
                "wrote {written} records, header says {count}"
            )));
        }
        Ok(())
    })
}

pub fn write_clicks(path: &Path, events: &[ClickEvent]) -> Result<(), FormatError> {
    write_clicks_with(path, events.len() as u64, |sink| sink(events))
}

/// Reads click records, calling `f` on chunks of consecutive pulses.
pub fn read_clicks_with<F>(path: &Path, mut f: F) -> Result<u64, FormatError>
where
    F: FnMut(&[ClickEvent]) -> Result<(), FormatError>,
{
    const CHUNK: usize = 1 << 16;
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let count = read_header(&mut r, path, CLICKS_MAGIC, "click-record")?;
    let mut buf = vec![0u8; CHUNK];
    let mut index = 0u64;
    while index < count {
        let want = ((count - index) as usize).min(CHUNK);
        r.read_exact(&mut buf[..want]).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => FormatError::Truncated {
                path: path.display().to_string(),
                promised: count,
                unit: "records",
            },
            _ => io_err(path)(e),
        })?;
        let events = buf[..want]
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let at = index + i as u64;
                decode_click(b, at).ok_or(FormatError::BadRecord {
                    path: path.display().to_string(),
                    index: at,
                    byte: b,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        f(&events)?;
        index += want as u64;
    }
    Ok(count)
}

pub fn read_clicks(path: &Path) -> Result<Vec<ClickEvent>, FormatError> {
    let mut out = Vec::new();
    read_clicks_with(path, |chunk| {
        out.extend_from_slice(chunk);
        Ok(())
    })?;
    Ok(out)
}
