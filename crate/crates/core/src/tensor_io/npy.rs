//! Reading and writing dense 2-D arrays in the numpy npy format.
//!
//! Only a subset is supported: format version 1.0, C order, explicit 2-D shape,
//! and 4- or 8-byte IEEE floats. 8-byte input is narrowed to 4 bytes on read with
//! round-to-nearest-even; a value that overflows the narrower type is reported as
//! non-finite. The writer emits little-endian 4-byte floats only, with the header
//! padded so that the payload starts on a 64-byte boundary, matching numpy.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// The npy magic number.
pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

const ALIGN: usize = 64;

/// Dense row-major 2-D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not fill a {rows}x{cols} array",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        // chunks_exact panics on zero; an array with zero columns has no rows worth yielding.
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

/// Element types the writer knows how to describe.
pub trait Element: Copy {
    const DESCR: &'static str;
    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8>;
}

impl Element for f32 {
    const DESCR: &'static str = "<f4";
    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

impl Element for f64 {
    const DESCR: &'static str = "<f8";
    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DType {
    F32(Endian),
    F64(Endian),
}

impl DType {
    fn parse(descr: &str) -> Result<Self> {
        let (endian, rest) = match descr.as_bytes().first() {
            Some(b'<') => (Endian::Little, &descr[1..]),
            Some(b'>') => (Endian::Big, &descr[1..]),
            Some(b'=') => (native_endian(), &descr[1..]),
            _ => return Err(Error::UnsupportedDType(descr.to_string())),
        };
        match rest {
            "f4" => Ok(DType::F32(endian)),
            "f8" => Ok(DType::F64(endian)),
            _ => Err(Error::UnsupportedDType(descr.to_string())),
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32(_) => 4,
            DType::F64(_) => 8,
        }
    }
}

fn native_endian() -> Endian {
    if cfg!(target_endian = "big") {
        Endian::Big
    } else {
        Endian::Little
    }
}

#[derive(Debug)]
struct Header {
    dtype: DType,
    shape: (usize, usize),
    payload_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 10 || bytes[..6] != MAGIC {
        return Err(Error::MalformedHeader("missing npy magic".into()));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(Error::MalformedHeader(format!(
            "unsupported npy version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let end = 10 + header_len;
    if bytes.len() < end {
        return Err(Error::MalformedHeader("truncated header".into()));
    }
    let text = std::str::from_utf8(&bytes[10..end])
        .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let dict = HeaderDict::parse(text)?;
    if dict.fortran_order {
        return Err(Error::MalformedHeader("Fortran order not supported".into()));
    }
    let shape = match dict.shape.as_slice() {
        &[r, c] => (r, c),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "expected a 2-D shape, found {} dimensions",
                other.len()
            )))
        }
    };
    Ok(Header {
        dtype: DType::parse(&dict.descr)?,
        shape,
        payload_offset: end,
    })
}

struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl HeaderDict {
    /// Parses the python dict literal found in npy headers. Only the three keys
    /// numpy emits are recognised; anything else is rejected.
    fn parse(text: &str) -> Result<Self> {
        let malformed = |msg: &str| Error::MalformedHeader(format!("{msg}: {text:?}"));
        let body = text
            .trim_end_matches(['\n', ' ', '\0'])
            .trim()
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .ok_or_else(|| malformed("header is not a dict"))?;

        let mut descr = None;
        let mut fortran_order = None;
        let mut shape = None;
        let mut rest = body.trim_start();
        while !rest.is_empty() {
            let (key, after_key) = take_quoted(rest).ok_or_else(|| malformed("expected key"))?;
            let after_colon = after_key
                .trim_start()
                .strip_prefix(':')
                .ok_or_else(|| malformed("expected ':'"))?
                .trim_start();
            let remaining = match key {
                "descr" => {
                    let (v, r) = take_quoted(after_colon).ok_or_else(|| malformed("bad descr"))?;
                    descr = Some(v.to_string());
                    r
                }
                "fortran_order" => {
                    if let Some(r) = after_colon.strip_prefix("False") {
                        fortran_order = Some(false);
                        r
                    } else if let Some(r) = after_colon.strip_prefix("True") {
                        fortran_order = Some(true);
                        r
                    } else {
                        return Err(malformed("bad fortran_order"));
                    }
                }
                "shape" => {
                    let inner = after_colon
                        .strip_prefix('(')
                        .ok_or_else(|| malformed("bad shape"))?;
                    let close = inner.find(')').ok_or_else(|| malformed("bad shape"))?;
                    let dims = inner[..close]
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<usize>().map_err(|_| malformed("bad shape")))
                        .collect::<Result<Vec<_>>>()?;
                    shape = Some(dims);
                    &inner[close + 1..]
                }
                _ => return Err(malformed("unexpected key")),
            };
            let remaining = remaining.trim_start();
            rest = match remaining.strip_prefix(',') {
                Some(r) => r.trim_start(),
                None if remaining.is_empty() => remaining,
                None => return Err(malformed("expected ','")),
            };
        }
        Ok(Self {
            descr: descr.ok_or_else(|| malformed("missing descr"))?,
            fortran_order: fortran_order.ok_or_else(|| malformed("missing fortran_order"))?,
            shape: shape.ok_or_else(|| malformed("missing shape"))?,
        })
    }
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &s[1..];
    let end = inner.find(quote)?;
    Some((&inner[..end], &inner[end + 1..]))
}

/// Decodes an in-memory npy file into a finite `f32` matrix.
pub fn decode_array(bytes: &[u8]) -> Result<Matrix<f32>> {
    let header = parse_header(bytes)?;
    let (rows, cols) = header.shape;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::ShapeMismatch("shape overflows".into()))?;
    if count == 0 {
        return Err(Error::EmptyArray);
    }
    let payload = &bytes[header.payload_offset..];
    let expected = count * header.dtype.size();
    if payload.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "header declares ({rows}, {cols}) = {expected} payload bytes, file has {}",
            payload.len()
        )));
    }

    let values: Vec<f32> = match header.dtype {
        DType::F32(endian) => payload
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                match endian {
                    Endian::Little => f32::from_le_bytes(b),
                    Endian::Big => f32::from_be_bytes(b),
                }
            })
            .collect(),
        DType::F64(endian) => payload
            .chunks_exact(8)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]];
                let v = match endian {
                    Endian::Little => f64::from_le_bytes(b),
                    Endian::Big => f64::from_be_bytes(b),
                };
                v as f32
            })
            .collect(),
    };
    if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            row: idx / cols,
            col: idx % cols,
        });
    }
    Matrix::from_vec(rows, cols, values)
}

/// Encodes a matrix as npy bytes. Only 4-byte floats are written.
pub fn encode_array<T: Element + Into<f64>>(array: &Matrix<T>) -> Result<Vec<u8>> {
    if T::DESCR != f32::DESCR {
        return Err(Error::UnsupportedDType(format!(
            "{} (writer emits <f4 only)",
            T::DESCR
        )));
    }
    if array.as_slice().is_empty() {
        return Err(Error::EmptyArray);
    }
    if let Some(idx) = array.as_slice().iter().position(|v| !(*v).into().is_finite()) {
        return Err(Error::NonFiniteValue {
            row: idx / array.cols(),
            col: idx % array.cols(),
        });
    }

    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}, {}), }}",
        T::DESCR,
        array.rows(),
        array.cols()
    );
    // magic(6) + version(2) + length(2) + dict + padding + '\n'
    let unpadded = 10 + dict.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    let header_len = dict.len() + padding + 1;
    let header_len_u16 = u16::try_from(header_len)
        .map_err(|_| Error::MalformedHeader("header exceeds 65535 bytes".into()))?;

    let mut out = Vec::with_capacity(10 + header_len + array.as_slice().len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&header_len_u16.to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', padding));
    out.push(b'\n');
    out.extend_from_slice(&T::to_le_bytes_vec(array.as_slice()));
    Ok(out)
}

pub fn read_array(path: impl AsRef<Path>) -> Result<Matrix<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(&bytes)
}

pub fn write_array<T: Element + Into<f64>>(array: &Matrix<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_array(array)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn npy_with(descr: &str, shape: &str, payload: &[u8]) -> Vec<u8> {
        let dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}\n");
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
        out.extend_from_slice(dict.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn two_by_three_keeps_row_major_order() {
        let m = Matrix::from_vec(2, 3, vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let back = decode_array(&encode_array(&m).unwrap()).unwrap();
        assert_eq!(back.shape(), (2, 3));
        assert_eq!(back.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(back.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn header_is_padded_to_64_bytes() {
        let m = Matrix::from_vec(1, 1, vec![0.0f32]).unwrap();
        let bytes = encode_array(&m).unwrap();
        // Same bytes numpy 2.x writes for np.zeros((1, 1), '<f4').
        assert_eq!(bytes.len(), 128 + 4);
        assert_eq!(u16::from_le_bytes([bytes[8], bytes[9]]), 118);
        assert_eq!(bytes[127], b'\n');
        let header: String = bytes[10..127].iter().map(|&b| b as char).collect();
        assert_eq!(header.trim_end(), "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1), }");
        assert!(header.ends_with(' '));
    }

    #[test]
    fn nan_is_reported_with_location() {
        let mut payload = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 4.0, f32::NAN, 6.0] {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let err = decode_array(&npy_with("<f4", "(2, 3)", &payload)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { row: 1, col: 1 }), "{err}");
    }

    #[test]
    fn f64_payload_is_narrowed() {
        let mut payload = Vec::new();
        for v in [0.1f64, -2.5] {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let m = decode_array(&npy_with("<f8", "(1, 2)", &payload)).unwrap();
        assert_eq!(m.as_slice(), &[0.1f64 as f32, -2.5f32]);
    }

    #[test]
    fn f64_overflowing_f32_is_non_finite() {
        let payload = 1e300f64.to_le_bytes();
        let err = decode_array(&npy_with("<f8", "(1, 1)", &payload)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { row: 0, col: 0 }));
    }

    #[test]
    fn big_endian_is_converted() {
        let payload = 3.5f32.to_be_bytes();
        let m = decode_array(&npy_with(">f4", "(1, 1)", &payload)).unwrap();
        assert_eq!(m.as_slice(), &[3.5]);
    }

    #[test]
    fn rejects_integer_dtype() {
        let err = decode_array(&npy_with("<i4", "(1, 1)", &[0; 4])).unwrap_err();
        assert!(matches!(err, Error::UnsupportedDType(_)));
    }

    #[test]
    fn rejects_fortran_and_version_2() {
        let dict = "{'descr': '<f4', 'fortran_order': True, 'shape': (1, 1), }\n";
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(dict.len() as u16).to_le_bytes());
        bytes.extend_from_slice(dict.as_bytes());
        bytes.extend_from_slice(&[0; 4]);
        assert!(matches!(decode_array(&bytes), Err(Error::MalformedHeader(_))));

        let mut v2 = npy_with("<f4", "(1, 1)", &[0; 4]);
        v2[6] = 2;
        assert!(matches!(decode_array(&v2), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(decode_array(b"NUMPY"), Err(Error::MalformedHeader(_))));
        let short = npy_with("<f4", "(2, 2)", &[0; 12]);
        assert!(matches!(decode_array(&short), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn rejects_non_2d_shapes() {
        let err = decode_array(&npy_with("<f4", "(4,)", &[0; 16])).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn writer_refuses_f64_and_empty() {
        let m = Matrix::from_vec(1, 1, vec![1.0f64]).unwrap();
        assert!(matches!(encode_array(&m), Err(Error::UnsupportedDType(_))));
        let empty = Matrix::<f32>::from_vec(0, 3, vec![]).unwrap();
        assert!(matches!(encode_array(&empty), Err(Error::EmptyArray)));
    }

    #[test]
    fn writer_refuses_non_finite() {
        let m = Matrix::from_vec(1, 2, vec![1.0f32, f32::INFINITY]).unwrap();
        assert!(matches!(encode_array(&m), Err(Error::NonFiniteValue { row: 0, col: 1 })));
    }
}
