//! Reader and writer for 2-D little-endian float arrays in the NPY layout
//! (format versions 1.0 and 2.0, `<f8` or `<f4`, C or Fortran order).

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

/// A dense row-major matrix read from or written to NPY.
#[derive(Debug, Clone, PartialEq)]
pub struct Array2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

fn header_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let at = header.find(&format!("'{key}'"))?;
    let rest = &header[at + key.len() + 2..];
    let colon = rest.find(':')?;
    Some(rest[colon + 1..].trim_start())
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Array2> {
    let bad = |m: &str| Error::parse(path, 1, format!("npy: {m}"));
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(bad("missing magic string"));
    }
    let major = bytes[6];
    let (header_len, start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(bad("truncated header"));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(bad(&format!("unsupported version {v}"))),
    };
    let header = bytes
        .get(start..start + header_len)
        .ok_or_else(|| bad("truncated header"))?;
    let header = std::str::from_utf8(header).map_err(|_| bad("header is not utf-8"))?;

    let descr = header_value(header, "descr").ok_or_else(|| bad("no descr"))?;
    let width = if descr.starts_with("'<f8'") {
        8
    } else if descr.starts_with("'<f4'") {
        4
    } else {
        return Err(bad("only little-endian f8/f4 arrays are supported"));
    };
    let fortran = header_value(header, "fortran_order")
        .ok_or_else(|| bad("no fortran_order"))?
        .starts_with("True");
    let shape = header_value(header, "shape").ok_or_else(|| bad("no shape"))?;
    let open = shape.find('(').ok_or_else(|| bad("bad shape"))?;
    let close = shape.find(')').ok_or_else(|| bad("bad shape"))?;
    let dims: Vec<usize> = shape[open + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("bad shape")))
        .collect::<Result<_>>()?;
    let (rows, cols) = match dims.as_slice() {
        [r, c] => (*r, *c),
        [r] => (*r, 1),
        _ => return Err(bad("expected a 1-D or 2-D array")),
    };

    let body = &bytes[start + header_len..];
    if body.len() != rows * cols * width {
        return Err(bad(&format!(
            "expected {} data bytes, found {}",
            rows * cols * width,
            body.len()
        )));
    }
    let raw: Vec<f64> = if width == 8 {
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    } else {
        body.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    };
    let data = if fortran {
        let mut d = vec![0.0; rows * cols];
        for c in 0..cols {
            for r in 0..rows {
                d[r * cols + c] = raw[c * rows + r];
            }
        }
        d
    } else {
        raw
    };
    Ok(Array2 { rows, cols, data })
}

pub fn encode(array: &Array2) -> Vec<u8> {
    let mut header = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}), }}",
        array.rows, array.cols
    );
    // pad so the data starts on a 64-byte boundary, header ends with '\n'
    let total = MAGIC.len() + 4 + header.len() + 1;
    let pad = (64 - total % 64) % 64;
    header.push_str(&" ".repeat(pad));
    header.push('\n');
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + array.data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in &array.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read(path: &Path) -> Result<Array2> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, array: &Array2) -> Result<()> {
    std::fs::write(path, encode(array)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_roundtrip() {
        let a = Array2 {
            rows: 2,
            cols: 3,
            data: vec![1.0, -2.5, 1e-300, f64::MAX, 0.1, 7.0],
        };
        let bytes = encode(&a);
        assert_eq!((bytes.len() - a.data.len() * 8) % 64, 0);
        assert_eq!(decode(&bytes, Path::new("mem")).unwrap(), a);
    }

    #[test]
    fn fortran_order_is_transposed() {
        let header = "{'descr': '<f8', 'fortran_order': True, 'shape': (2, 2), }\n";
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        for v in [1.0f64, 3.0, 2.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let a = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(a.data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_big_endian() {
        let header = "{'descr': '>f8', 'fortran_order': False, 'shape': (1, 1), }\n";
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&[0; 8]);
        assert!(decode(&bytes, Path::new("mem")).is_err());
    }
}
