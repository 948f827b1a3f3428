//! Binary little-endian PLY point-cloud writer and reader.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::SceneError;

/// One PLY vertex: position, unit normal, RGB color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlyPoint {
    pub position: [f32; 3],
    pub normal: [f32; 3],
    pub color: [u8; 3],
}

const PROPERTIES: [&str; 9] = [
    "float x",
    "float y",
    "float z",
    "float nx",
    "float ny",
    "float nz",
    "uchar red",
    "uchar green",
    "uchar blue",
];

/// Writes the cloud as binary little-endian PLY with x, y, z, nx, ny, nz,
/// red, green, blue vertex properties.
pub fn write_ply(points: &[PlyPoint], path: &Path) -> Result<(), SceneError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", points.len())?;
    for prop in PROPERTIES {
        writeln!(w, "property {prop}")?;
    }
    writeln!(w, "end_header")?;
    for p in points {
        for v in p.position {
            w.write_f32::<LittleEndian>(v)?;
        }
        for v in p.normal {
            w.write_f32::<LittleEndian>(v)?;
        }
        w.write_all(&p.color)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a PLY file produced by [`write_ply`]. Only the exact property
/// layout written by this crate is accepted.
pub fn read_ply(path: &Path) -> Result<Vec<PlyPoint>, SceneError> {
    let file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SceneError::FileMissing(path.to_path_buf())
        } else {
            SceneError::Io(e)
        }
    })?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    let read_line = |r: &mut BufReader<std::fs::File>, line: &mut String| -> Result<String, SceneError> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(SceneError::format(path, "unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };

    if read_line(&mut r, &mut line)? != "ply" {
        return Err(SceneError::format(path, "not a PLY file"));
    }
    if read_line(&mut r, &mut line)? != "format binary_little_endian 1.0" {
        return Err(SceneError::format(path, "expected binary little-endian format"));
    }
    let vertex_line = read_line(&mut r, &mut line)?;
    let count: usize = vertex_line
        .strip_prefix("element vertex ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| SceneError::format(path, "missing vertex element"))?;
    for prop in PROPERTIES {
        let got = read_line(&mut r, &mut line)?;
        if got != format!("property {prop}") {
            return Err(SceneError::format(path, format!("unexpected property line '{got}'")));
        }
    }
    if read_line(&mut r, &mut line)? != "end_header" {
        return Err(SceneError::format(path, "missing end_header"));
    }

    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let mut position = [0.0f32; 3];
        let mut normal = [0.0f32; 3];
        let mut color = [0u8; 3];
        for v in &mut position {
            *v = r.read_f32::<LittleEndian>().map_err(|_| truncated(path))?;
        }
        for v in &mut normal {
            *v = r.read_f32::<LittleEndian>().map_err(|_| truncated(path))?;
        }
        r.read_exact(&mut color).map_err(|_| truncated(path))?;
        points.push(PlyPoint { position, normal, color });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(SceneError::format(path, "trailing bytes after vertex data"));
    }
    Ok(points)
}

fn truncated(path: &Path) -> SceneError {
    SceneError::format(path, "vertex data truncated")
}
