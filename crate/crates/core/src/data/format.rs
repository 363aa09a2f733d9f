use std::path::Path;

use sha2::{Digest, Sha256};

use super::{DatasetBundle, Provenance, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"MHNES1\0";
const HEADER: usize = MAGIC.len() + 6 * 4;

/// Serializes a bundle: magic, six little-endian `u32` (C, H, W, n_train,
/// n_val, n_test), `f64` images per split, then `u16` labels per split.
pub fn encode(b: &DatasetBundle) -> Result<Vec<u8>> {
    let (h, w) = b.image_size();
    let splits = [&b.train, &b.val, &b.test];
    let mut out = Vec::with_capacity(
        HEADER
            + splits
                .iter()
                .map(|s| s.images.numel() * 8 + s.len() * 2)
                .sum::<usize>(),
    );
    out.extend_from_slice(MAGIC);
    let fields = [b.classes, h, w, b.train.len(), b.val.len(), b.test.len()];
    for f in fields {
        let v = u32::try_from(f)
            .map_err(|_| Error::invalid("encode", format!("{f} does not fit in u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in splits {
        if s.images.shape()[1..] != [1, h, w] {
            return Err(Error::invalid(
                "encode",
                format!("image shape {:?}", s.images.shape()),
            ));
        }
        for v in s.images.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for s in splits {
        for &y in &s.labels {
            let v = u16::try_from(y)
                .map_err(|_| Error::invalid("encode", format!("label {y} does not fit in u16")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::DatasetFormat {
        offset,
        msg: msg.into(),
    }
}

/// Parses the format written by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<DatasetBundle> {
    if bytes.len() < HEADER {
        return Err(format_err(
            bytes.len(),
            format!(
                "truncated header: expected {HEADER} bytes, got {}",
                bytes.len()
            ),
        ));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_err(0, "bad magic"));
    }
    let field = |i: usize| {
        let o = MAGIC.len() + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
    };
    let (classes, h, w) = (field(0), field(1), field(2));
    let counts = [field(3), field(4), field(5)];
    if classes < 2 {
        return Err(format_err(
            MAGIC.len(),
            format!("class count {classes} < 2"),
        ));
    }
    let total: usize = counts.iter().sum();
    let expected = HEADER + total * h * w * 8 + total * 2;
    if bytes.len() != expected {
        return Err(format_err(
            bytes.len().min(expected),
            format!("expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    let mut off = HEADER;
    let mut images = Vec::with_capacity(3);
    for &n in &counts {
        let len = n * h * w;
        let data: Vec<f64> = bytes[off..off + 8 * len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(format_err(off + 8 * i, "non-finite pixel"));
        }
        off += 8 * len;
        images.push(Tensor::new(vec![n, 1, h, w], data)?);
    }
    let mut splits = Vec::with_capacity(3);
    let mut record = 0;
    for (img, &n) in images.into_iter().zip(&counts) {
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = u16::from_le_bytes([bytes[off], bytes[off + 1]]) as usize;
            if y >= classes {
                return Err(format_err(
                    off,
                    format!("label {y} out of range for {classes} classes (record {record})"),
                ));
            }
            labels.push(y);
            off += 2;
            record += 1;
        }
        splits.push(Split::new(img, labels)?);
    }
    let test = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(DatasetBundle {
        classes,
        train,
        val,
        test,
        provenance: Provenance::File {
            sha256: sha256_hex(bytes),
        },
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_raw(b: &DatasetBundle, path: &Path) -> Result<()> {
    std::fs::write(path, encode(b)?).map_err(|e| Error::io(path, e))
}

pub fn load_raw(path: &Path) -> Result<DatasetBundle> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
