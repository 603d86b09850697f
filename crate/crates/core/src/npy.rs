//! NPY (format version 1.0) reading and writing for the four map kinds.
//!
//! | kind        | dtype  | shape          |
//! |-------------|--------|----------------|
//! | LabelMap    | `\|u1` | `(H, W)`       |
//! | ProbMap     | `<f4`  | `(C, H, W)`    |
//! | SampleStack | `<f4`  | `(N, C, H, W)` |
//! | ScalarMap   | `<f4`  | `(H, W)`       |
//!
//! A stack whose validity masks are not all-true carries a sibling
//! `(N, H, W)` `|u1` file named `<stem>.valid.npy`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::array::{LabelMap, ProbMap, SampleStack, ScalarMap};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const HEADER_ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    F32,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::U8 => "|u1",
            Dtype::F32 => "<f4",
        }
    }

    fn parse(descr: &str) -> Option<Self> {
        match descr {
            "|u1" | "<u1" | "u1" => Some(Dtype::U8),
            "<f4" => Some(Dtype::F32),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

/// A raw array as stored in an NPY file.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn dtype(&self) -> Dtype {
        match self.data {
            NpyData::U8(_) => Dtype::U8,
            NpyData::F32(_) => Dtype::F32,
        }
    }
}

/// Which map kind a file is expected to hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    Label,
    Prob,
    Stack,
    Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyArray {
    Label(LabelMap),
    Prob(ProbMap),
    Stack(SampleStack),
    Scalar(ScalarMap),
}

pub fn encode_npy(array: &NpyArray) -> Vec<u8> {
    let shape = match array.shape.as_slice() {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        array.dtype().descr(),
        shape
    );
    // magic(6) + version(2) + len(2) + header + '\n' must be 64-aligned
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + array_byte_len(array));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &array.data {
        NpyData::U8(v) => out.extend_from_slice(v),
        NpyData::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

fn array_byte_len(array: &NpyArray) -> usize {
    match &array.data {
        NpyData::U8(v) => v.len(),
        NpyData::F32(v) => v.len() * 4,
    }
}

pub fn decode_npy(bytes: &[u8], path: &Path) -> Result<NpyArray> {
    let bad = |reason: &str| Error::MalformedNpy {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(bad("missing NPY magic"));
    }
    let (header_len, offset) = match (bytes[6], bytes[7]) {
        (1, 0) => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        (2, 0) | (3, 0) => {
            if bytes.len() < 12 {
                return Err(bad("truncated header length"));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        (maj, min) => return Err(bad(&format!("unsupported version {maj}.{min}"))),
    };
    let body_start = offset + header_len;
    if bytes.len() < body_start {
        return Err(bad("truncated header"));
    }
    let header = std::str::from_utf8(&bytes[offset..body_start])
        .map_err(|_| bad("header is not valid text"))?;
    let fields = parse_header(header).map_err(|r| bad(&r))?;
    if fields.fortran_order {
        return Err(bad("fortran_order arrays are not supported"));
    }
    let dtype = Dtype::parse(&fields.descr).ok_or_else(|| Error::WrongDtype {
        path: path.to_path_buf(),
        expected: "'|u1' or '<f4'",
        found: fields.descr.clone(),
    })?;
    let count: usize = fields.shape.iter().product();
    let body = &bytes[body_start..];
    let data = match dtype {
        Dtype::U8 => {
            if body.len() != count {
                return Err(bad(&format!(
                    "expected {count} data bytes, found {}",
                    body.len()
                )));
            }
            NpyData::U8(body.to_vec())
        }
        Dtype::F32 => {
            if body.len() != count * 4 {
                return Err(bad(&format!(
                    "expected {} data bytes, found {}",
                    count * 4,
                    body.len()
                )));
            }
            NpyData::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            )
        }
    };
    Ok(NpyArray {
        shape: fields.shape,
        data,
    })
}

struct HeaderFields {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the Python dict literal of an NPY header.
fn parse_header(header: &str) -> std::result::Result<HeaderFields, String> {
    let s = header.trim();
    let inner = s
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or("header is not a dict literal")?;

    let mut descr = None;
    let mut fortran_order = None;
    let mut shape = None;
    let mut rest = inner.trim_start();
    while !rest.is_empty() {
        let (key, after) = take_quoted(rest).ok_or("expected a quoted key")?;
        let after = after
            .trim_start()
            .strip_prefix(':')
            .ok_or("expected ':' after key")?
            .trim_start();
        let after = match key {
            "descr" => {
                let (v, a) = take_quoted(after).ok_or("descr must be a string")?;
                descr = Some(v.to_string());
                a
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("False") {
                    fortran_order = Some(false);
                    a
                } else if let Some(a) = after.strip_prefix("True") {
                    fortran_order = Some(true);
                    a
                } else {
                    return Err("fortran_order must be True or False".into());
                }
            }
            "shape" => {
                let close = after.find(')').ok_or("unterminated shape tuple")?;
                let tuple = after
                    .strip_prefix('(')
                    .ok_or("shape must be a tuple")?;
                let dims = tuple[..close - 1]
                    .split(',')
                    .map(str::trim)
                    .filter(|d| !d.is_empty())
                    .map(|d| {
                        d.trim_end_matches('L')
                            .parse::<usize>()
                            .map_err(|_| format!("bad dimension '{d}'"))
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                shape = Some(dims);
                &after[close + 1..]
            }
            other => return Err(format!("unexpected header key '{other}'")),
        };
        let after = after.trim_start();
        rest = after.strip_prefix(',').unwrap_or(after).trim_start();
    }
    Ok(HeaderFields {
        descr: descr.ok_or("missing 'descr'")?,
        fortran_order: fortran_order.ok_or("missing 'fortran_order'")?,
        shape: shape.ok_or("missing 'shape'")?,
    })
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let q = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let body = &s[1..];
    let end = body.find(q)?;
    Some((&body[..end], &body[end + 1..]))
}

pub fn read_npy(path: &Path) -> Result<NpyArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_npy(&bytes, path)
}

pub fn write_npy(path: &Path, array: &NpyArray) -> Result<()> {
    let bytes = encode_npy(array);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Path of the validity-mask sibling of a stack file.
pub fn validity_path(stack_path: &Path) -> PathBuf {
    let name = stack_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.strip_suffix(".npy").unwrap_or(&name);
    stack_path.with_file_name(format!("{stem}.valid.npy"))
}

fn expect_f32(array: NpyArray, path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    match array.data {
        NpyData::F32(v) => Ok((array.shape, v)),
        NpyData::U8(_) => Err(Error::WrongDtype {
            path: path.to_path_buf(),
            expected: "'<f4'",
            found: "'|u1'".into(),
        }),
    }
}

fn expect_u8(array: NpyArray, path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    match array.data {
        NpyData::U8(v) => Ok((array.shape, v)),
        NpyData::F32(_) => Err(Error::WrongDtype {
            path: path.to_path_buf(),
            expected: "'|u1'",
            found: "'<f4'".into(),
        }),
    }
}

fn rank_error(path: &Path, want: usize, shape: &[usize]) -> Error {
    Error::MalformedNpy {
        path: path.to_path_buf(),
        reason: format!("expected a {want}-dimensional array, found shape {shape:?}"),
    }
}

pub fn read_label(path: &Path, num_classes: usize) -> Result<LabelMap> {
    let (shape, data) = expect_u8(read_npy(path)?, path)?;
    let [h, w] = shape[..] else {
        return Err(rank_error(path, 2, &shape));
    };
    LabelMap::new(h, w, num_classes, data)
}

pub fn read_prob(path: &Path) -> Result<ProbMap> {
    let (shape, data) = expect_f32(read_npy(path)?, path)?;
    let [c, h, w] = shape[..] else {
        return Err(rank_error(path, 3, &shape));
    };
    ProbMap::new_renormalized(h, w, c, data)
}

pub fn read_scalar(path: &Path) -> Result<ScalarMap> {
    let (shape, data) = expect_f32(read_npy(path)?, path)?;
    let [h, w] = shape[..] else {
        return Err(rank_error(path, 2, &shape));
    };
    ScalarMap::new(h, w, data)
}

pub fn read_stack(path: &Path) -> Result<SampleStack> {
    let (shape, data) = expect_f32(read_npy(path)?, path)?;
    let [n, c, h, w] = shape[..] else {
        return Err(rank_error(path, 4, &shape));
    };
    if n == 0 {
        return Err(Error::Empty("sample stack"));
    }
    let per = c * h * w;
    let samples = data
        .chunks_exact(per)
        .map(|chunk| ProbMap::new_renormalized(h, w, c, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let vpath = validity_path(path);
    if vpath.exists() {
        let (vshape, mask) = expect_u8(read_npy(&vpath)?, &vpath)?;
        if vshape != [n, h, w] {
            return Err(Error::ShapeMismatch(format!(
                "validity mask {} has shape {vshape:?}, expected {:?}",
                vpath.display(),
                [n, h, w]
            )));
        }
        let valid = mask
            .chunks_exact(h * w)
            .map(|m| m.iter().map(|&b| b != 0).collect())
            .collect();
        SampleStack::with_validity(samples, valid)
    } else {
        SampleStack::new(samples)
    }
}

/// Reads a map of the expected kind. Label files need `num_classes`, which
/// the file itself does not carry.
pub fn read_array(path: &Path, kind: ArrayKind, num_classes: usize) -> Result<AnyArray> {
    Ok(match kind {
        ArrayKind::Label => AnyArray::Label(read_label(path, num_classes)?),
        ArrayKind::Prob => AnyArray::Prob(read_prob(path)?),
        ArrayKind::Stack => AnyArray::Stack(read_stack(path)?),
        ArrayKind::Scalar => AnyArray::Scalar(read_scalar(path)?),
    })
}

pub fn write_label(map: &LabelMap, path: &Path) -> Result<()> {
    write_npy(
        path,
        &NpyArray {
            shape: vec![map.height(), map.width()],
            data: NpyData::U8(map.labels().to_vec()),
        },
    )
}

pub fn write_prob(map: &ProbMap, path: &Path) -> Result<()> {
    write_npy(
        path,
        &NpyArray {
            shape: vec![map.num_classes(), map.height(), map.width()],
            data: NpyData::F32(map.as_slice().to_vec()),
        },
    )
}

pub fn write_scalar(map: &ScalarMap, path: &Path) -> Result<()> {
    write_npy(
        path,
        &NpyArray {
            shape: vec![map.height(), map.width()],
            data: NpyData::F32(map.values().to_vec()),
        },
    )
}

pub fn write_stack(stack: &SampleStack, path: &Path) -> Result<()> {
    let (h, w) = stack.shape();
    let c = stack.num_classes();
    let n = stack.num_samples();
    let mut data = Vec::with_capacity(n * c * h * w);
    for s in stack.samples() {
        data.extend_from_slice(s.as_slice());
    }
    write_npy(
        path,
        &NpyArray {
            shape: vec![n, c, h, w],
            data: NpyData::F32(data),
        },
    )?;
    let vpath = validity_path(path);
    if stack.all_valid() {
        if vpath.exists() {
            fs::remove_file(&vpath).map_err(|e| Error::io(&vpath, e))?;
        }
        Ok(())
    } else {
        let mask = stack
            .validity()
            .iter()
            .flat_map(|m| m.iter().map(|&v| v as u8))
            .collect();
        write_npy(
            &vpath,
            &NpyArray {
                shape: vec![n, h, w],
                data: NpyData::U8(mask),
            },
        )
    }
}

pub fn write_array(value: &AnyArray, path: &Path) -> Result<()> {
    match value {
        AnyArray::Label(m) => write_label(m, path),
        AnyArray::Prob(m) => write_prob(m, path),
        AnyArray::Stack(s) => write_stack(s, path),
        AnyArray::Scalar(m) => write_scalar(m, path),
    }
}

/// Reads only the header of an NPY file and returns its shape.
pub fn read_shape(path: &Path) -> Result<(Dtype, Vec<usize>)> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = vec![0u8; 12];
    f.read_exact(&mut head[..10]).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::MalformedNpy {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if &head[..6] != MAGIC {
        return Err(bad("missing NPY magic"));
    }
    let len = match head[6] {
        1 => u16::from_le_bytes([head[8], head[9]]) as usize,
        2 | 3 => {
            f.read_exact(&mut head[10..12]).map_err(|e| Error::io(path, e))?;
            u32::from_le_bytes([head[8], head[9], head[10], head[11]]) as usize
        }
        v => return Err(bad(&format!("unsupported version {v}"))),
    };
    let mut header = vec![0u8; len];
    f.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&header).map_err(|_| bad("header is not valid text"))?;
    let fields = parse_header(text).map_err(|r| bad(&r))?;
    let dtype = Dtype::parse(&fields.descr).ok_or_else(|| Error::WrongDtype {
        path: path.to_path_buf(),
        expected: "'|u1' or '<f4'",
        found: fields.descr.clone(),
    })?;
    Ok((dtype, fields.shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_aligned_and_numpy_shaped() {
        let a = NpyArray {
            shape: vec![2, 2],
            data: NpyData::U8(vec![0, 1, 1, 2]),
        };
        let bytes = encode_npy(&a);
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        let header = std::str::from_utf8(&bytes[10..10 + hlen]).unwrap();
        assert!(header.starts_with("{'descr': '|u1', 'fortran_order': False, 'shape': (2, 2), }"));
        assert!(header.ends_with('\n'));
        assert_eq!(&bytes[10 + hlen..], &[0, 1, 1, 2]);
    }

    #[test]
    fn parses_numpy_written_header() {
        // header as emitted by numpy.save for a float32 (3,) array
        let h = "{'descr': '<f4', 'fortran_order': False, 'shape': (3,), }";
        let f = parse_header(h).unwrap();
        assert_eq!(f.shape, vec![3]);
        assert_eq!(f.descr, "<f4");
        let h2 = "{'shape': (1, 4), 'fortran_order': False, 'descr': '|u1'}";
        assert_eq!(parse_header(h2).unwrap().shape, vec![1, 4]);
    }

    #[test]
    fn rejects_bad_magic_and_dtype() {
        let p = Path::new("x.npy");
        assert!(matches!(
            decode_npy(b"NOTNUMPY000000", p),
            Err(Error::MalformedNpy { .. })
        ));
        let mut bytes = encode_npy(&NpyArray {
            shape: vec![1],
            data: NpyData::F32(vec![1.0]),
        });
        let pos = bytes.windows(3).position(|w| w == b"<f4").unwrap();
        bytes[pos..pos + 3].copy_from_slice(b"<f8");
        assert!(matches!(decode_npy(&bytes, p), Err(Error::WrongDtype { .. })));
    }

    #[test]
    fn rejects_truncated_body() {
        let mut bytes = encode_npy(&NpyArray {
            shape: vec![4],
            data: NpyData::F32(vec![1.0; 4]),
        });
        bytes.pop();
        assert!(decode_npy(&bytes, Path::new("t.npy")).is_err());
    }

    #[test]
    fn validity_sibling_name() {
        assert_eq!(
            validity_path(Path::new("/a/ttd.npy")),
            PathBuf::from("/a/ttd.valid.npy")
        );
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(dims in proptest::collection::vec(1usize..5, 1..5), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| (i as f32 + seed as f32).sin()).collect();
            let a = NpyArray { shape: dims, data: NpyData::F32(data) };
            let back = decode_npy(&encode_npy(&a), Path::new("p.npy")).unwrap();
            prop_assert_eq!(back, a);
        }
    }
}
