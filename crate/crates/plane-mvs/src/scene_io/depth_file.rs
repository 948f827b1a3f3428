//! Versioned binary container for depth/normal maps, so pipeline stages can
//! run as separate passes over on-disk artifacts.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::SceneError;
use crate::matcher::DepthNormalMap;

const MAGIC: &[u8; 4] = b"PHIM";
const VERSION: u32 = 1;

/// Writes a map as `PHIM`, version, width, height, then per-pixel records of
/// depth, normal, cost (little-endian f64) and a validity byte.
pub fn write_depth_map(map: &DepthNormalMap, path: &Path) -> Result<(), SceneError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(map.width() as u32)?;
    w.write_u32::<LittleEndian>(map.height() as u32)?;
    let n = map.width() * map.height();
    for i in 0..n {
        w.write_f64::<LittleEndian>(map.depths()[i])?;
        for c in map.normals()[i] {
            w.write_f64::<LittleEndian>(c)?;
        }
        w.write_f64::<LittleEndian>(map.costs()[i])?;
        w.write_u8(map.valid_flags()[i] as u8)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a map written by [`write_depth_map`]; every scalar round-trips
/// bit-exactly.
pub fn read_depth_map(path: &Path) -> Result<DepthNormalMap, SceneError> {
    let file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SceneError::FileMissing(path.to_path_buf())
        } else {
            SceneError::Io(e)
        }
    })?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| SceneError::format(path, "file too short for header"))?;
    if &magic != MAGIC {
        return Err(SceneError::format(path, "bad magic, not a depth-map file"));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| SceneError::format(path, "file too short for header"))?;
    if version != VERSION {
        return Err(SceneError::format(
            path,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let width = r
        .read_u32::<LittleEndian>()
        .map_err(|_| SceneError::format(path, "file too short for header"))? as usize;
    let height = r
        .read_u32::<LittleEndian>()
        .map_err(|_| SceneError::format(path, "file too short for header"))? as usize;
    let n = width * height;
    let mut depths = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let truncated = |_| SceneError::format(path, "pixel records truncated");
    for _ in 0..n {
        depths.push(r.read_f64::<LittleEndian>().map_err(truncated)?);
        let mut normal = [0.0f64; 3];
        for c in &mut normal {
            *c = r.read_f64::<LittleEndian>().map_err(truncated)?;
        }
        normals.push(normal);
        costs.push(r.read_f64::<LittleEndian>().map_err(truncated)?);
        let flag = r.read_u8().map_err(truncated)?;
        if flag > 1 {
            return Err(SceneError::format(path, format!("invalid validity byte {flag}")));
        }
        valid.push(flag == 1);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(SceneError::format(path, "trailing bytes after pixel records"));
    }
    Ok(DepthNormalMap::from_parts(width, height, depths, normals, costs, valid))
}
