//! STL reading and writing (ASCII and little-endian binary).

use std::path::Path;

use crate::error::{Error, Result};

use super::vec3::Vec3;

pub type Triangle = [Vec3; 3];

const HEADER_LEN: usize = 80;
const RECORD_LEN: usize = 50;

/// Read every facet of an ASCII or binary STL file.
pub fn read_stl(path: &Path) -> Result<Vec<Triangle>> {
    let bytes = std::fs::read(path)?;
    parse_stl(&bytes).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn parse_stl(bytes: &[u8]) -> Result<Vec<Triangle>> {
    let binary_size_matches = bytes.len() >= HEADER_LEN + 4 && {
        let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        bytes.len() == HEADER_LEN + 4 + n * RECORD_LEN
    };
    let looks_ascii = bytes.trim_ascii_start().starts_with(b"solid") && bytes.is_ascii();
    if !binary_size_matches && looks_ascii {
        parse_ascii(std::str::from_utf8(bytes).expect("ascii checked"))
    } else {
        parse_binary(bytes)
    }
}

fn finite(v: Vec3, location: impl FnOnce() -> String) -> Result<Vec3> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::parse(location(), "non-finite vertex coordinate"))
    }
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<Triangle>> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::parse(
            format!("byte {}", bytes.len()),
            "truncated binary STL header",
        ));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let body = bytes.len() - HEADER_LEN - 4;
    if body != count * RECORD_LEN {
        let present = body / RECORD_LEN;
        let offset = HEADER_LEN + 4 + present * RECORD_LEN;
        return Err(Error::parse(
            format!("byte {offset}"),
            format!("declared {count} facets but {present} present ({body} body bytes)"),
        ));
    }
    let mut tris = Vec::with_capacity(count);
    for i in 0..count {
        let rec = HEADER_LEN + 4 + i * RECORD_LEN;
        let mut tri = [[0.0; 3]; 3];
        for (v, vert) in tri.iter_mut().enumerate() {
            for (a, x) in vert.iter_mut().enumerate() {
                let off = rec + 12 + v * 12 + a * 4;
                *x = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
            }
            *vert = finite(*vert, || format!("byte {}", rec + 12 + v * 12))?;
        }
        tris.push(tri);
    }
    Ok(tris)
}

fn parse_ascii(text: &str) -> Result<Vec<Triangle>> {
    let mut tris = Vec::new();
    let mut current: Vec<Vec3> = Vec::with_capacity(3);
    let mut in_facet = false;
    for (lineno, line) in text.lines().enumerate() {
        let loc = || format!("line {}", lineno + 1);
        let mut words = line.split_whitespace();
        match words.next() {
            Some("facet") => {
                if in_facet {
                    return Err(Error::parse(loc(), "nested facet"));
                }
                in_facet = true;
                current.clear();
            }
            Some("vertex") => {
                if !in_facet {
                    return Err(Error::parse(loc(), "vertex outside facet"));
                }
                let mut v = [0.0; 3];
                for x in v.iter_mut() {
                    let w = words
                        .next()
                        .ok_or_else(|| Error::parse(loc(), "vertex needs 3 coordinates"))?;
                    *x = w
                        .parse::<f64>()
                        .map_err(|_| Error::parse(loc(), format!("bad number {w:?}")))?;
                }
                current.push(finite(v, loc)?);
            }
            Some("endfacet") => {
                if !in_facet || current.len() != 3 {
                    return Err(Error::parse(loc(), "facet must have exactly 3 vertices"));
                }
                tris.push([current[0], current[1], current[2]]);
                in_facet = false;
            }
            Some("solid" | "endsolid" | "outer" | "endloop") | None => {}
            Some(other) => {
                return Err(Error::parse(loc(), format!("unexpected token {other:?}")));
            }
        }
    }
    if in_facet {
        return Err(Error::parse("end of file", "unterminated facet"));
    }
    Ok(tris)
}

fn facet_normal(t: &Triangle) -> [f32; 3] {
    use super::vec3::{cross, norm, sub};
    let n = cross(sub(t[1], t[0]), sub(t[2], t[0]));
    let l = norm(n);
    if l > 0.0 {
        [(n[0] / l) as f32, (n[1] / l) as f32, (n[2] / l) as f32]
    } else {
        [0.0; 3]
    }
}

pub fn encode_binary_stl(tris: &[Triangle]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 + tris.len() * RECORD_LEN);
    let mut header = [b' '; HEADER_LEN];
    header[..6].copy_from_slice(b"binary");
    out.extend_from_slice(&header);
    out.extend_from_slice(&(tris.len() as u32).to_le_bytes());
    for t in tris {
        for x in facet_normal(t) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for v in t {
            for &x in v {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&[0, 0]);
    }
    out
}

pub fn write_binary_stl(path: &Path, tris: &[Triangle]) -> Result<()> {
    std::fs::write(path, encode_binary_stl(tris))?;
    Ok(())
}

pub fn encode_ascii_stl(name: &str, tris: &[Triangle]) -> String {
    use std::fmt::Write;
    let mut s = format!("solid {name}\n");
    for t in tris {
        let n = facet_normal(t);
        let _ = writeln!(s, "  facet normal {} {} {}", n[0], n[1], n[2]);
        s.push_str("    outer loop\n");
        for v in t {
            let _ = writeln!(s, "      vertex {} {} {}", v[0], v[1], v[2]);
        }
        s.push_str("    endloop\n  endfacet\n");
    }
    let _ = writeln!(s, "endsolid {name}");
    s
}
