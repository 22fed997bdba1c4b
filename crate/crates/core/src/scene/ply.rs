//! PLY point cloud profile: a `vertex` element carrying `x, y, z` and
//! `red, green, blue`, stored as ASCII or binary little-endian.
//!
//! Extra scalar vertex properties are skipped on read. Elements following
//! `vertex` (e.g. faces) are ignored; non-empty elements before it are not
//! supported.

use std::io::{BufWriter, Write};
use std::path::Path;

use super::{PointCloud, Result, SceneError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn width(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct Property {
    name: String,
    ty: ScalarType,
}

const REQUIRED: [&str; 6] = ["x", "y", "z", "red", "green", "blue"];

fn err(offset: usize, field: Option<&str>, message: impl Into<String>) -> SceneError {
    SceneError::Ply {
        offset,
        field: field.map(str::to_string),
        message: message.into(),
    }
}

struct Header {
    encoding: PlyEncoding,
    vertex_count: usize,
    properties: Vec<Property>,
    /// byte offset of the first data byte
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0usize;
    let next_line = |offset: &mut usize| -> Result<(usize, String)> {
        let start = *offset;
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err(start, None, "unterminated header"))?;
        *offset = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| err(start, None, "header is not valid UTF-8"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (at, magic) = next_line(&mut offset)?;
    if magic.trim() != "ply" {
        return Err(err(at, None, "missing `ply` magic"));
    }

    let mut encoding = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut in_vertex = false;
    loop {
        let (at, line) = next_line(&mut offset)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                encoding = Some(match (tok.next(), tok.next()) {
                    (Some("ascii"), Some("1.0")) => PlyEncoding::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => PlyEncoding::BinaryLittleEndian,
                    (Some(other), _) => return Err(err(at, Some("format"), format!("unsupported format `{other}`"))),
                    _ => return Err(err(at, Some("format"), "malformed format line")),
                });
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| err(at, Some("element"), "missing element name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| err(at, Some(name), "missing or invalid element count"))?;
                if name == "vertex" {
                    vertex_count = Some(count);
                    in_vertex = true;
                } else {
                    if vertex_count.is_none() && count > 0 {
                        return Err(err(at, Some(name), "non-empty element before `vertex` is not supported"));
                    }
                    in_vertex = false;
                }
            }
            Some("property") => {
                let ty = tok.next().ok_or_else(|| err(at, Some("property"), "missing type"))?;
                if ty == "list" {
                    if in_vertex {
                        let name = tok.last().unwrap_or("?");
                        return Err(err(at, Some(name), "list properties on vertices are not supported"));
                    }
                    continue;
                }
                let name = tok.next().ok_or_else(|| err(at, Some("property"), "missing name"))?;
                let ty = ScalarType::parse(ty).ok_or_else(|| err(at, Some(name), format!("unknown type `{ty}`")))?;
                if in_vertex {
                    properties.push(Property { name: name.to_string(), ty });
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(err(at, None, format!("unexpected header keyword `{other}`"))),
        }
    }

    let encoding = encoding.ok_or_else(|| err(0, Some("format"), "missing format line"))?;
    let vertex_count = vertex_count.ok_or_else(|| err(0, Some("vertex"), "missing vertex element"))?;
    for name in REQUIRED {
        if !properties.iter().any(|p| p.name == name) {
            return Err(err(0, Some(name), "required vertex property missing"));
        }
    }
    Ok(Header {
        encoding,
        vertex_count,
        properties,
        data_start: offset,
    })
}

pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let slot = |name: &str| header.properties.iter().position(|p| p.name == name).unwrap();
    let slots: Vec<usize> = REQUIRED.iter().map(|n| slot(n)).collect();
    let n = header.vertex_count;
    let mut positions = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut values = vec![0.0f64; header.properties.len()];

    let mut push = |values: &[f64], offset: usize| -> Result<()> {
        let p = [values[slots[0]] as f32, values[slots[1]] as f32, values[slots[2]] as f32];
        if let Some(k) = (0..3).find(|&k| !p[k].is_finite()) {
            return Err(err(offset, Some(REQUIRED[k]), "non-finite coordinate"));
        }
        let mut c = [0u8; 3];
        for k in 0..3 {
            let v = values[slots[3 + k]];
            if !(0.0..=255.0).contains(&v) {
                return Err(err(offset, Some(REQUIRED[3 + k]), format!("color value {v} out of range")));
            }
            c[k] = v as u8;
        }
        positions.push(p);
        colors.push(c);
        Ok(())
    };

    match header.encoding {
        PlyEncoding::BinaryLittleEndian => {
            let stride: usize = header.properties.iter().map(|p| p.ty.width()).sum();
            let need = header.data_start + stride * n;
            if bytes.len() < need {
                let short_at = header.data_start + (bytes.len() - header.data_start) / stride * stride;
                return Err(err(
                    short_at,
                    Some("vertex"),
                    format!("file truncated: {n} vertices need {need} bytes, found {}", bytes.len()),
                ));
            }
            let mut at = header.data_start;
            for _ in 0..n {
                let rec = at;
                for (v, prop) in values.iter_mut().zip(&header.properties) {
                    *v = prop.ty.read_le(&bytes[at..at + prop.ty.width()]);
                    at += prop.ty.width();
                }
                push(&values, rec)?;
            }
        }
        PlyEncoding::Ascii => {
            let mut at = header.data_start;
            let mut read = 0;
            while read < n {
                if at >= bytes.len() {
                    return Err(err(at, Some("vertex"), format!("expected {n} vertices, found {read}")));
                }
                let end = bytes[at..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |r| at + r);
                let line = std::str::from_utf8(&bytes[at..end]).map_err(|_| err(at, None, "invalid UTF-8"))?;
                if !line.trim().is_empty() {
                    let mut tok = line.split_whitespace();
                    for (v, prop) in values.iter_mut().zip(&header.properties) {
                        let t = tok
                            .next()
                            .ok_or_else(|| err(at, Some(&prop.name), "missing value"))?;
                        *v = t
                            .parse::<f64>()
                            .map_err(|_| err(at, Some(&prop.name), format!("cannot parse `{t}`")))?;
                    }
                    push(&values, at)?;
                    read += 1;
                }
                at = end + 1;
            }
        }
    }
    PointCloud::new(positions, colors)
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| SceneError::io(path, e))?;
    parse_ply(&bytes)
}

pub fn encode_ply(cloud: &PointCloud, encoding: PlyEncoding) -> Vec<u8> {
    let mut out = Vec::with_capacity(200 + cloud.len() * 15);
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = write!(
        out,
        "ply\nformat {fmt} 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    );
    for (p, c) in cloud.positions().iter().zip(cloud.colors()) {
        match encoding {
            PlyEncoding::Ascii => {
                // f32 Display is the shortest round-tripping representation
                let _ = writeln!(out, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2]);
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(c);
            }
        }
    }
    out
}

pub fn write_ply(path: &Path, cloud: &PointCloud, encoding: PlyEncoding) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| SceneError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_ply(cloud, encoding))
        .and_then(|_| w.flush())
        .map_err(|e| SceneError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> PointCloud {
        PointCloud::new(
            vec![[0.0, 1.5, -2.25], [0.1, 1e-7, 3.4028235e38]],
            vec![[0, 128, 255], [7, 8, 9]],
        )
        .unwrap()
    }

    #[test]
    fn both_encodings_round_trip() {
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let bytes = encode_ply(&sample(), enc);
            assert_eq!(parse_ply(&bytes).unwrap(), sample(), "{enc:?}");
        }
    }

    #[test]
    fn extra_properties_and_faces_are_skipped() {
        let text = "ply\nformat ascii 1.0\ncomment x\nelement vertex 1\nproperty float nx\nproperty float x\n\
                    property float y\nproperty float z\nproperty uchar red\nproperty uchar green\n\
                    property uchar blue\nproperty uchar alpha\nelement face 0\n\
                    property list uchar int vertex_indices\nend_header\n9 1 2 3 4 5 6 255\n";
        let cloud = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(cloud.positions(), &[[1.0, 2.0, 3.0]]);
        assert_eq!(cloud.colors(), &[[4, 5, 6]]);
    }

    #[test]
    fn errors_carry_offset_and_field() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
                    property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n\
                    end_header\n1 2 oops 4 5 6\n";
        match parse_ply(text.as_bytes()).unwrap_err() {
            SceneError::Ply { offset, field, .. } => {
                assert_eq!(offset, text.find("1 2 oops").unwrap());
                assert_eq!(field.as_deref(), Some("z"));
            }
            e => panic!("{e}"),
        }

        let missing = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nend_header\n";
        match parse_ply(missing.as_bytes()).unwrap_err() {
            SceneError::Ply { field, .. } => assert_eq!(field.as_deref(), Some("y")),
            e => panic!("{e}"),
        }

        let mut truncated = encode_ply(&sample(), PlyEncoding::BinaryLittleEndian);
        truncated.truncate(truncated.len() - 3);
        assert!(matches!(parse_ply(&truncated), Err(SceneError::Ply { .. })));

        assert!(matches!(
            parse_ply(b"ply\nformat binary_big_endian 1.0\nend_header\n"),
            Err(SceneError::Ply { field: Some(f), .. }) if f == "format"
        ));
    }

    proptest! {
        #[test]
        fn arbitrary_clouds_round_trip(
            pts in prop::collection::vec((prop::array::uniform3(-1e4f32..1e4f32), prop::array::uniform3(any::<u8>())), 0..50),
            ascii in any::<bool>(),
        ) {
            let (p, c): (Vec<_>, Vec<_>) = pts.into_iter().unzip();
            let cloud = PointCloud::new(p, c).unwrap();
            let enc = if ascii { PlyEncoding::Ascii } else { PlyEncoding::BinaryLittleEndian };
            prop_assert_eq!(parse_ply(&encode_ply(&cloud, enc)).unwrap(), cloud);
        }
    }
}
