//! Binary little-endian PLY in the layout used by 3D Gaussian Splatting:
//! `x y z nx ny nz f_dc_0..2 [f_rest_0..44] opacity scale_0..2 rot_0..3`,
//! all `float`.

use std::fmt::Write as _;

use crate::cloud::{Attribute, SplatCloud, SH_REST_DIM};
use crate::error::{Error, Result};

/// Property names of a cloud in file order.
pub fn property_names(sh_rest_dim: usize) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].map(String::from).to_vec();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..sh_rest_dim).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Attribute channel stored in a property, `None` for normals.
fn property_target(name: &str) -> Option<(Attribute, usize)> {
    let indexed = |prefix: &str| name.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok());
    match name {
        "x" => Some((Attribute::Position, 0)),
        "y" => Some((Attribute::Position, 1)),
        "z" => Some((Attribute::Position, 2)),
        "opacity" => Some((Attribute::Opacity, 0)),
        _ => {
            if let Some(i) = indexed("f_dc_").filter(|&i| i < 3) {
                Some((Attribute::ShDc, i))
            } else if let Some(i) = indexed("f_rest_").filter(|&i| i < SH_REST_DIM) {
                Some((Attribute::ShRest, i))
            } else if let Some(i) = indexed("scale_").filter(|&i| i < 3) {
                Some((Attribute::Scale, i))
            } else if let Some(i) = indexed("rot_").filter(|&i| i < 4) {
                Some((Attribute::Rotation, i))
            } else {
                None
            }
        }
    }
}

pub fn write_ply(cloud: &SplatCloud) -> Vec<u8> {
    let k = cloud.sh_rest_dim();
    let names = property_names(k);
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(header, "element vertex {}", cloud.len());
    for name in &names {
        let _ = writeln!(header, "property float {name}");
    }
    header.push_str("end_header\n");

    let mut out = Vec::with_capacity(header.len() + cloud.len() * names.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for i in 0..cloud.len() {
        let mut put = |vals: &[f32]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        put(cloud.get(Attribute::Position, i));
        put(&[0.0; 3]);
        put(cloud.get(Attribute::ShDc, i));
        put(cloud.get(Attribute::ShRest, i));
        put(cloud.get(Attribute::Opacity, i));
        put(cloud.get(Attribute::Scale, i));
        put(cloud.get(Attribute::Rotation, i));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
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
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }
}

struct Property {
    name: String,
    ty: ScalarType,
}

struct Header {
    vertex_count: usize,
    properties: Vec<Property>,
    /// Byte offset of the payload.
    body: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0;
    let next_line = |offset: &mut usize| -> Result<(usize, String)> {
        let start = *offset;
        let rest = &bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(start, "unterminated header line"))?;
        *offset = start + end + 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::parse(start, "header is not valid text"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (at, magic) = next_line(&mut offset)?;
    if magic != "ply" {
        return Err(Error::parse(at, "missing `ply` magic"));
    }
    let mut format_seen = false;
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut properties = Vec::new();
    loop {
        let (at, line) = next_line(&mut offset)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", fmt, version] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::parse(at, format!("unsupported format `{fmt}`")));
                }
                if *version != "1.0" {
                    return Err(Error::parse(at, format!("unsupported version `{version}`")));
                }
                format_seen = true;
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| Error::parse(at, format!("bad element count `{count}`")))?;
                if *name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(Error::parse(at, "duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else if count == 0 {
                    in_vertex = false;
                } else {
                    return Err(Error::parse(at, format!("unsupported element `{name}`")));
                }
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(Error::parse(at, "list properties are not supported"));
                }
            }
            ["property", ty, name] => {
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| Error::parse(at, format!("unknown property type `{ty}`")))?;
                if in_vertex {
                    properties.push(Property {
                        name: name.to_string(),
                        ty,
                    });
                }
            }
            _ => return Err(Error::parse(at, format!("unexpected header line `{line}`"))),
        }
    }
    if !format_seen {
        return Err(Error::parse(offset, "missing format line"));
    }
    let vertex_count = vertex_count.ok_or_else(|| Error::parse(offset, "missing vertex element"))?;
    Ok(Header {
        vertex_count,
        properties,
        body: offset,
    })
}

/// Parses a splat PLY. Normals and unknown scalar properties are skipped.
pub fn read_ply(bytes: &[u8]) -> Result<SplatCloud> {
    let header = parse_header(bytes)?;
    if header.vertex_count == 0 {
        return Err(Error::parse(header.body, "file contains no Gaussians"));
    }
    let mut targets = Vec::with_capacity(header.properties.len());
    let mut seen = std::collections::HashSet::new();
    let mut rest_count = 0;
    for p in &header.properties {
        let target = property_target(&p.name);
        if let Some(t) = target {
            if !seen.insert(t) {
                return Err(Error::parse(header.body, format!("duplicate property `{}`", p.name)));
            }
            if p.ty != ScalarType::F32 {
                return Err(Error::parse(
                    header.body,
                    format!("property `{}` must be float", p.name),
                ));
            }
            if t.0 == Attribute::ShRest {
                rest_count += 1;
            }
        }
        targets.push(target);
    }
    let sh_rest_dim = match rest_count {
        0 => 0,
        SH_REST_DIM => SH_REST_DIM,
        k => {
            return Err(Error::parse(
                header.body,
                format!("expected 0 or {SH_REST_DIM} f_rest properties, found {k}"),
            ))
        }
    };
    for a in Attribute::ALL {
        for ch in 0..a.channels(sh_rest_dim) {
            if !seen.contains(&(a, ch)) {
                let name = property_names(sh_rest_dim)
                    .into_iter()
                    .find(|n| property_target(n) == Some((a, ch)))
                    .unwrap_or_default();
                return Err(Error::parse(header.body, format!("missing property `{name}`")));
            }
        }
    }

    let stride: usize = header.properties.iter().map(|p| p.ty.size()).sum();
    let n = header.vertex_count;
    let expected = n
        .checked_mul(stride)
        .and_then(|b| b.checked_add(header.body))
        .ok_or_else(|| Error::parse(header.body, "vertex count overflows"))?;
    if bytes.len() < expected {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::parse(expected, "trailing data after the last vertex"));
    }

    let mut cloud = SplatCloud::zeros(n, sh_rest_dim)?;
    let mut at = header.body;
    for i in 0..n {
        for (p, target) in header.properties.iter().zip(&targets) {
            if let Some((attr, ch)) = *target {
                let v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
                if !v.is_finite() {
                    return Err(Error::parse(at, format!("non-finite `{}` in Gaussian {i}", p.name)));
                }
                let c = attr.channels(sh_rest_dim);
                cloud.attribute_mut(attr)[i * c + ch] = v;
            }
            at += p.ty.size();
        }
    }
    Ok(cloud)
}
