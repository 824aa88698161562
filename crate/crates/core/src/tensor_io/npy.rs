//! Reader/writer for the `.npy` single-array format (version 1.0 on write,
//! 1.0/2.0/3.0 on read).
//!
//! Only C-order arrays of little-endian `f32` and `u8` are supported. The
//! writer reproduces numpy's header layout byte for byte: the header dict is
//! padded with spaces and a trailing newline so the data starts on a 64-byte
//! boundary.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ARRAY_ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn descr(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "<f4",
            ArrayData::U8(_) => "|u1",
        }
    }
}

/// A shaped array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, ArrayData::F32(data))
    }

    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::new(shape, ArrayData::U8(data))
    }

    pub fn into_f32(self) -> Result<(Vec<usize>, Vec<f32>)> {
        match self.data {
            ArrayData::F32(v) => Ok((self.shape, v)),
            ArrayData::U8(_) => Err(Error::UnsupportedDtype {
                descr: "|u1".into(),
                expected: "<f4",
            }),
        }
    }

    pub fn into_u8(self) -> Result<(Vec<usize>, Vec<u8>)> {
        match self.data {
            ArrayData::U8(v) => Ok((self.shape, v)),
            ArrayData::F32(_) => Err(Error::UnsupportedDtype {
                descr: "<f4".into(),
                expected: "|u1",
            }),
        }
    }
}

fn format_shape(shape: &[usize]) -> String {
    match shape {
        [] => "()".to_string(),
        [n] => format!("({n},)"),
        _ => {
            let parts: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            format!("({})", parts.join(", "))
        }
    }
}

/// Encode an array into `.npy` bytes.
pub fn encode(array: &NpyArray) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        array.data.descr(),
        format_shape(&array.shape)
    );
    // magic(6) + version(2) + header_len(2) + dict + padding + '\n'
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let padding = (ARRAY_ALIGN - unpadded % ARRAY_ALIGN) % ARRAY_ALIGN;
    let header_len = dict.len() + padding + 1;

    let payload = match &array.data {
        ArrayData::F32(v) => v.len() * 4,
        ArrayData::U8(v) => v.len(),
    };
    let mut out = Vec::with_capacity(10 + header_len + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', padding));
    out.push(b'\n');
    match &array.data {
        ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ArrayData::U8(v) => out.extend_from_slice(v),
    }
    out
}

struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let quoted = [format!("'{key}'"), format!("\"{key}\"")];
    let start = quoted
        .iter()
        .find_map(|k| dict.find(k.as_str()).map(|pos| pos + k.len()))
        .ok_or_else(|| Error::Format(format!("header has no `{key}` entry")))?;
    let rest = dict[start..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .ok_or_else(|| Error::Format(format!("expected ':' after `{key}`")))?;
    Ok(rest.trim_start())
}

fn parse_header_dict(text: &str) -> Result<HeaderDict> {
    let text = text.trim();
    if !text.starts_with('{') || !text.ends_with('}') {
        return Err(Error::Format("header is not a dict literal".into()));
    }

    let descr_raw = dict_value(text, "descr")?;
    let quote = descr_raw
        .chars()
        .next()
        .filter(|c| *c == '\'' || *c == '"')
        .ok_or_else(|| Error::Format("descr is not a string".into()))?;
    let descr_end = descr_raw[1..]
        .find(quote)
        .ok_or_else(|| Error::Format("unterminated descr string".into()))?;
    let descr = descr_raw[1..1 + descr_end].to_string();

    let fortran_raw = dict_value(text, "fortran_order")?;
    let fortran_order = if fortran_raw.starts_with("False") {
        false
    } else if fortran_raw.starts_with("True") {
        true
    } else {
        return Err(Error::Format("fortran_order is not a bool".into()));
    };

    let shape_raw = dict_value(text, "shape")?;
    let shape_raw = shape_raw
        .strip_prefix('(')
        .ok_or_else(|| Error::Format("shape is not a tuple".into()))?;
    let close = shape_raw
        .find(')')
        .ok_or_else(|| Error::Format("unterminated shape tuple".into()))?;
    let shape = shape_raw[..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad shape entry `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(HeaderDict {
        descr,
        fortran_order,
        shape,
    })
}

/// Decode `.npy` bytes.
pub fn decode(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Format("missing \\x93NUMPY magic".into()));
    }
    let major = bytes[6];
    let (header_len, header_start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::Format("truncated header length".into()));
            }
            let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
            (len, 12)
        }
        v => return Err(Error::Format(format!("unknown format version {v}"))),
    };
    let data_start = header_start + header_len;
    if bytes.len() < data_start {
        return Err(Error::Format("truncated header".into()));
    }
    let text = std::str::from_utf8(&bytes[header_start..data_start])
        .map_err(|_| Error::Format("header is not valid text".into()))?;
    let dict = parse_header_dict(text)?;
    if dict.fortran_order {
        return Err(Error::Format("fortran_order arrays are not supported".into()));
    }

    let count: usize = dict.shape.iter().product();
    let payload = &bytes[data_start..];
    let data = match dict.descr.as_str() {
        "<f4" => {
            if payload.len() != count * 4 {
                return Err(Error::Format(format!(
                    "expected {} payload bytes, found {}",
                    count * 4,
                    payload.len()
                )));
            }
            ArrayData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            )
        }
        "|u1" | "<u1" | ">u1" => {
            if payload.len() != count {
                return Err(Error::Format(format!(
                    "expected {count} payload bytes, found {}",
                    payload.len()
                )));
            }
            ArrayData::U8(payload.to_vec())
        }
        other => {
            return Err(Error::UnsupportedDtype {
                descr: other.to_string(),
                expected: "<f4 or |u1",
            })
        }
    };
    NpyArray::new(dict.shape, data)
}

pub fn read_array(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_array(path: impl AsRef<Path>, array: &NpyArray) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&encode(array)))
        .map_err(|e| Error::io(path, e))
}
