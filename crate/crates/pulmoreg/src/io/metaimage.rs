//! MetaImage (.mhd/.raw) reader and writer.
//!
//! Scalar volumes round-trip losslessly for the supported element types;
//! displacement fields are stored as 3-channel float32 with values in mm.
//! Raw data is little-endian, either in a companion `.raw` file or
//! appended to the header (`ElementDataFile = LOCAL`).

use crate::error::{Error, Result};
use crate::image::{Image3D, VectorField3};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    UChar,
    Short,
    UShort,
    Float,
    Double,
}

impl ElementType {
    fn met_name(&self) -> &'static str {
        match self {
            ElementType::UChar => "MET_UCHAR",
            ElementType::Short => "MET_SHORT",
            ElementType::UShort => "MET_USHORT",
            ElementType::Float => "MET_FLOAT",
            ElementType::Double => "MET_DOUBLE",
        }
    }

    fn parse(name: &str) -> Option<Self> {
        match name {
            "MET_UCHAR" => Some(ElementType::UChar),
            "MET_SHORT" => Some(ElementType::Short),
            "MET_USHORT" => Some(ElementType::UShort),
            "MET_FLOAT" => Some(ElementType::Float),
            "MET_DOUBLE" => Some(ElementType::Double),
            _ => None,
        }
    }

    fn byte_size(&self) -> usize {
        match self {
            ElementType::UChar => 1,
            ElementType::Short | ElementType::UShort => 2,
            ElementType::Float => 4,
            ElementType::Double => 8,
        }
    }
}

struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    element_type: ElementType,
    channels: usize,
    data_file: String,
    header_len: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let mut dims = None;
    let mut spacing = [1.0f64; 3];
    let mut origin = [0.0f64; 3];
    let mut element_type = None;
    let mut channels = 1usize;
    let mut data_file = None;
    let mut pos = 0usize;

    while pos < bytes.len() {
        let line_end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .unwrap_or(bytes.len());
        let line = std::str::from_utf8(&bytes[pos..line_end])
            .map_err(|_| malformed(path, "header is not valid UTF-8"))?
            .trim_end_matches('\r');
        let next = line_end + 1;
        let Some((key, value)) = line.split_once('=') else {
            if line.trim().is_empty() {
                pos = next;
                continue;
            }
            return Err(malformed(path, format!("line without '=': {line:?}")));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "ObjectType" => {
                if value != "Image" {
                    return Err(malformed(path, format!("ObjectType {value}, expected Image")));
                }
            }
            "NDims" => {
                if value != "3" {
                    return Err(malformed(path, format!("NDims {value}, only 3 supported")));
                }
            }
            "DimSize" => dims = Some(parse_triple_usize(value).ok_or_else(|| {
                malformed(path, format!("bad DimSize {value:?}"))
            })?),
            "ElementSpacing" | "ElementSize" => {
                spacing = parse_triple_f64(value)
                    .ok_or_else(|| malformed(path, format!("bad {key} {value:?}")))?;
            }
            "Offset" | "Origin" | "Position" => {
                origin = parse_triple_f64(value)
                    .ok_or_else(|| malformed(path, format!("bad {key} {value:?}")))?;
            }
            "ElementType" => {
                element_type = Some(
                    ElementType::parse(value)
                        .ok_or_else(|| Error::UnsupportedElementType(value.to_string()))?,
                );
            }
            "ElementNumberOfChannels" => {
                channels = value
                    .parse()
                    .map_err(|_| malformed(path, format!("bad channel count {value:?}")))?;
            }
            "BinaryData" => {
                if !value.eq_ignore_ascii_case("true") {
                    return Err(malformed(path, "ASCII data is not supported"));
                }
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => {
                if value.eq_ignore_ascii_case("true") {
                    return Err(malformed(path, "big-endian data is not supported"));
                }
            }
            "CompressedData" => {
                if value.eq_ignore_ascii_case("true") {
                    return Err(malformed(path, "compressed data is not supported"));
                }
            }
            "ElementDataFile" => {
                data_file = Some(value.to_string());
                pos = next;
                break; // data file reference terminates the header
            }
            _ => {} // tolerated, e.g. TransformMatrix, CenterOfRotation
        }
        pos = next;
    }

    let dims = dims.ok_or_else(|| malformed(path, "missing DimSize"))?;
    let element_type = element_type.ok_or_else(|| malformed(path, "missing ElementType"))?;
    let data_file = data_file.ok_or_else(|| malformed(path, "missing ElementDataFile"))?;
    Ok(Header {
        dims,
        spacing,
        origin,
        element_type,
        channels,
        data_file,
        header_len: pos,
    })
}

fn parse_triple_f64(s: &str) -> Option<[f64; 3]> {
    let mut it = s.split_whitespace();
    let a = it.next()?.parse().ok()?;
    let b = it.next()?.parse().ok()?;
    let c = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some([a, b, c])
}

fn parse_triple_usize(s: &str) -> Option<[usize; 3]> {
    let f = parse_triple_f64(s)?;
    if f.iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
        return None;
    }
    Some([f[0] as usize, f[1] as usize, f[2] as usize])
}

fn load_raw(path: &Path, header: &Header, header_bytes: &[u8]) -> Result<Vec<u8>> {
    let n_values = header.dims[0] * header.dims[1] * header.dims[2] * header.channels;
    let expected = (n_values * header.element_type.byte_size()) as u64;
    let raw = if header.data_file == "LOCAL" {
        header_bytes[header.header_len..].to_vec()
    } else {
        let raw_path = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&header.data_file);
        fs::read(&raw_path).map_err(|e| io_err(&raw_path, e))?
    };
    if raw.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: raw.len() as u64,
        });
    }
    Ok(raw)
}

fn decode(raw: &[u8], ty: ElementType) -> Vec<f64> {
    match ty {
        ElementType::UChar => raw.iter().map(|&b| b as f64).collect(),
        ElementType::Short => raw
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        ElementType::UShort => raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        ElementType::Float => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        ElementType::Double => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect(),
    }
}

fn encode(values: impl Iterator<Item = f64>, ty: ElementType, out: &mut Vec<u8>) {
    match ty {
        ElementType::UChar => {
            for v in values {
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        ElementType::Short => {
            for v in values {
                out.extend_from_slice(
                    &(v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16).to_le_bytes(),
                );
            }
        }
        ElementType::UShort => {
            for v in values {
                out.extend_from_slice(
                    &(v.round().clamp(0.0, u16::MAX as f64) as u16).to_le_bytes(),
                );
            }
        }
        ElementType::Float => {
            for v in values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        ElementType::Double => {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

/// Reads a scalar MetaImage volume.
pub fn read_metaimage(path: impl AsRef<Path>) -> Result<Image3D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let header = parse_header(path, &bytes)?;
    if header.channels != 1 {
        return Err(Error::validation(format!(
            "{} has {} channels; use the displacement-field reader",
            path.display(),
            header.channels
        )));
    }
    let raw = load_raw(path, &header, &bytes)?;
    Ok(Image3D::new(
        header.dims,
        header.spacing,
        header.origin,
        decode(&raw, header.element_type),
    ))
}

/// Reads a 3-channel vector volume (displacement field, mm).
pub fn read_displacement_field(path: impl AsRef<Path>) -> Result<VectorField3> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let header = parse_header(path, &bytes)?;
    if header.channels != 3 {
        return Err(Error::validation(format!(
            "{} has {} channels, expected 3",
            path.display(),
            header.channels
        )));
    }
    let raw = load_raw(path, &header, &bytes)?;
    let flat = decode(&raw, header.element_type);
    let vectors = flat
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(VectorField3::new(header.dims, header.spacing, header.origin, vectors))
}

fn write_header(
    out: &mut Vec<u8>,
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    ty: ElementType,
    channels: usize,
    data_file: &str,
) {
    let mut push = |s: String| out.extend_from_slice(s.as_bytes());
    push("ObjectType = Image\n".into());
    push("NDims = 3\n".into());
    push("BinaryData = True\n".into());
    push("BinaryDataByteOrderMSB = False\n".into());
    push("CompressedData = False\n".into());
    push(format!("DimSize = {} {} {}\n", dims[0], dims[1], dims[2]));
    push(format!(
        "ElementSpacing = {} {} {}\n",
        spacing[0], spacing[1], spacing[2]
    ));
    push(format!("Offset = {} {} {}\n", origin[0], origin[1], origin[2]));
    if channels != 1 {
        push(format!("ElementNumberOfChannels = {channels}\n"));
    }
    push(format!("ElementType = {}\n", ty.met_name()));
    push(format!("ElementDataFile = {data_file}\n"));
}

/// Writes a scalar volume. With `local` the raw data is appended to the
/// header file; otherwise a companion `.raw` is written next to it.
pub fn write_metaimage(
    img: &Image3D,
    path: impl AsRef<Path>,
    ty: ElementType,
    local: bool,
) -> Result<()> {
    let path = path.as_ref();
    let mut data = Vec::with_capacity(img.len() * ty.byte_size());
    encode(img.values.iter().cloned(), ty, &mut data);
    write_parts(path, img.dims, img.spacing, img.origin, ty, 1, local, &data)
}

/// Writes a displacement field as 3-channel float32, mm.
pub fn write_displacement_field(
    field: &VectorField3,
    path: impl AsRef<Path>,
    local: bool,
) -> Result<()> {
    let path = path.as_ref();
    let mut data = Vec::with_capacity(field.vectors.len() * 12);
    encode(
        field.vectors.iter().flat_map(|v| v.iter().cloned()),
        ElementType::Float,
        &mut data,
    );
    write_parts(
        path,
        field.dims,
        field.spacing,
        field.origin,
        ElementType::Float,
        3,
        local,
        &data,
    )
}

#[allow(clippy::too_many_arguments)]
fn write_parts(
    path: &Path,
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    ty: ElementType,
    channels: usize,
    local: bool,
    data: &[u8],
) -> Result<()> {
    let mut header = Vec::new();
    if local {
        write_header(&mut header, dims, spacing, origin, ty, channels, "LOCAL");
        header.extend_from_slice(data);
        fs::write(path, header).map_err(|e| io_err(path, e))
    } else {
        let raw_path = raw_companion_path(path);
        let raw_name = raw_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::validation(format!("bad output path {}", path.display())))?;
        write_header(&mut header, dims, spacing, origin, ty, channels, raw_name);
        let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
        f.write_all(&header).map_err(|e| io_err(path, e))?;
        fs::write(&raw_path, data).map_err(|e| io_err(&raw_path, e))
    }
}

fn raw_companion_path(path: &Path) -> PathBuf {
    path.with_extension("raw")
}
